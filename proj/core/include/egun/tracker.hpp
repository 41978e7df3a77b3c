#pragma once

// Relativistic macroparticle tracking through an axisymmetric fieldmap:
// grid reader, C1 field interpolation, RK4 pusher and beam statistics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "egun/splines.hpp"

namespace egun {

using Vec3 = Eigen::Vector3d;

constexpr double speed_of_light = 299792458.0;      // m/s
constexpr double electron_mc2_ev = 510998.95;       // rest energy in eV
constexpr double elementary_charge = 1.602176634e-19;

// Regular (z, rho) grid of the axisymmetric field, z-major storage.
// valid[i] == 0 marks nodes outside the vacuum region (written as zeros).
struct Fieldmap {
  int nz = 0, nr = 0;
  double z0 = 0, z1 = 0, r0 = 0, r1 = 0;
  std::vector<double> ez, er;
  std::vector<unsigned char> valid;
  int idx(int iz, int ir) const { return iz * nr + ir; }
  double dz() const { return (z1 - z0) / (nz - 1); }
  double dr() const { return (r1 - r0) / (nr - 1); }
};

// Reads the exporter's text format plus the <path>.mask sidecar (a missing
// sidecar means every node is valid).
Fieldmap read_fieldmap(const std::string& path);

// Catmull-Rom bicubic interpolation of (E_z, E_rho), then azimuthal
// reconstruction E_x = E_rho x/rho, E_y = E_rho y/rho (exactly zero on the
// axis). Returns nothing when the point leaves the grid radially or toward
// the cathode side, or when the interpolation stencil touches a masked node;
// values are continuous with continuous first derivatives inside.
std::optional<Vec3> field_at(const Fieldmap& fm, const Vec3& x);

struct Macroparticle {
  Vec3 x = Vec3::Zero();
  Vec3 p = Vec3::Zero();  // momentum in units of m_e c (gamma beta)
  double t_emit = 0.0;    // s
  double t_exit = 0.0;    // s, set when the particle lands on the exit plane
  bool alive = true;
  bool exited = false;
};

// Elliptical Gaussian laser spot (or measured samples) with Gaussian
// emission times and zero initial momentum.
struct BunchSource {
  double rx_rms = 0.41e-3;  // m
  double ry_rms = 0.72e-3;  // m
  double sigma_t = 5e-12;   // s
  double charge = 100e-15;  // C, carried for bookkeeping (no space charge)
  std::vector<Vec2> spot;   // optional measured (x, y) samples, resampled if set
};

std::vector<Macroparticle> sample_bunch(const BunchSource& src, int n_particles,
                                        std::uint64_t seed, double cathode_z);

struct TrackingConfig {
  double dt = 0.244e-12;  // s
  double cathode_z = 0.14;
  double exit_z = 0.30;
  int n_planes = 32;      // statistics planes between cathode and exit
  long max_steps = 2000000;
};

// Bunch state at the common time where the mean longitudinal position
// crosses the plane.
struct PlaneSnapshot {
  double z = 0;
  double t = 0;
  std::vector<Macroparticle> bunch;
};

struct TrackResult {
  std::vector<PlaneSnapshot> planes;
  std::vector<Macroparticle> final_state;  // exited particles carry their exit momentum
  int lost = 0;     // left the grid radially or hit a masked region
  int exited = 0;   // landed on the exit plane (ballistic afterwards)
  bool complete = false;
};

// Classic RK4 on dx/dt = c p / sqrt(1+|p|^2), dp/dt = q E / (m_e c) with
// q = -e. Particles wait at the cathode until their emission time, with a
// shortened first step from t_emit to the next step boundary. A particle
// reaching the exit plane is landed on it exactly (bisected step) and coasts
// afterwards. Field probes beyond the high-z grid end read the edge row so
// steps straddling the exit stay smooth; any other grid violation marks the
// particle lost and frozen.
TrackResult track(std::vector<Macroparticle> bunch, const Fieldmap& fm,
                  const TrackingConfig& cfg);

double kinetic_energy_ev(const Macroparticle& mp);

struct PlaneStats {
  double z = 0;
  double x_rms = 0, y_rms = 0, z_rms = 0;  // m, central
  double eps_x = 0, eps_y = 0;             // m rad, normalized
  double eps_z = 0;                        // m eV, from (z, kinetic energy)
};

struct BeamStats {
  std::vector<PlaneStats> plane;
  double de_rms = 0;  // eV, kinetic-energy spread at the last plane
  int lost = 0;
};

// Central-moment statistics per plane over surviving particles. The
// longitudinal emittance uses the (z, kinetic energy) moment determinant;
// numerically m eV equals the customary keV mm.
BeamStats beam_stats(const TrackResult& result);

// Worst-plane relative deviations against a reference run with the same
// plane layout. Planes whose reference entry is zero are skipped and counted.
struct ConvergenceReport {
  double x_rms = 0, y_rms = 0, z_rms = 0;
  double eps_x = 0, eps_y = 0, eps_z = 0;
  int excluded_planes = 0;
  double worst() const;
};

ConvergenceReport self_convergence(const BeamStats& stats, const BeamStats& ref);

}  // namespace egun
