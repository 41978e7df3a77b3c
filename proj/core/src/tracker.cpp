#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "egun/tracker.hpp"

namespace egun {

namespace {

Vec3 velocity(const Vec3& p) { return speed_of_light * p / std::sqrt(1.0 + p.squaredNorm()); }

// dp/dt = q E / (m_e c) with q = -e, p in units of m_e c
Vec3 momentum_rate(const Vec3& e_field) {
  return -(speed_of_light / electron_mc2_ev) * e_field;
}

// One RK4 step of length h; false when a field lookup fails (particle lost).
// Probes past the high-z grid end read the edge row: the exit plane truncates
// the mapped region, and a constant continuation keeps the integrand smooth
// for steps that straddle it.
bool rk4_step(Macroparticle& mp, const Fieldmap& fm, double h) {
  auto field = [&](Vec3 x, Vec3& e) {
    if (x.z() > fm.z1) x.z() = fm.z1;
    const auto f = field_at(fm, x);
    if (!f) return false;
    e = *f;
    return true;
  };

  Vec3 e;
  if (!field(mp.x, e)) return false;
  const Vec3 k1x = velocity(mp.p), k1p = momentum_rate(e);
  if (!field(mp.x + 0.5 * h * k1x, e)) return false;
  const Vec3 k2x = velocity(mp.p + 0.5 * h * k1p), k2p = momentum_rate(e);
  if (!field(mp.x + 0.5 * h * k2x, e)) return false;
  const Vec3 k3x = velocity(mp.p + 0.5 * h * k2p), k3p = momentum_rate(e);
  if (!field(mp.x + h * k3x, e)) return false;
  const Vec3 k4x = velocity(mp.p + h * k3p), k4p = momentum_rate(e);

  mp.x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  mp.p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
  return true;
}

double mean_z(const std::vector<Macroparticle>& bunch) {
  double sum = 0.0;
  int n = 0;
  for (const Macroparticle& mp : bunch)
    if (mp.alive) {
      sum += mp.x.z();
      ++n;
    }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

// Lands the particle exactly on the exit plane: bisect the step fraction so
// the frozen momentum belongs to the crossing point, then coast the rest of
// the step so the common clock stays valid. Returns the crossing fraction.
double land_on_exit(Macroparticle& mp, const Macroparticle& before, const Fieldmap& fm,
                    double h, double exit_z) {
  double lo = 0.0, hi = 1.0;
  Macroparticle probe = mp;
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    probe = before;
    if (!rk4_step(probe, fm, mid * h)) break;
    (probe.x.z() < exit_z ? lo : hi) = mid;
  }
  probe = before;
  if (rk4_step(probe, fm, hi * h)) {
    mp = probe;
    mp.x += (1.0 - hi) * h * velocity(mp.p);
  }
  return hi;
}

struct Moments {
  double var_a = 0, var_b = 0, cov = 0;
};

Moments central_moments(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  Moments m;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m.var_a += (a[i] - ma) * (a[i] - ma);
    m.var_b += (b[i] - mb) * (b[i] - mb);
    m.cov += (a[i] - ma) * (b[i] - mb);
  }
  m.var_a /= n;
  m.var_b /= n;
  m.cov /= n;
  return m;
}

double emittance(const Moments& m) {
  return std::sqrt(std::max(0.0, m.var_a * m.var_b - m.cov * m.cov));
}

double relative_deviation(double value, double ref) { return std::abs(value - ref) / std::abs(ref); }

}  // namespace

std::vector<Macroparticle> sample_bunch(const BunchSource& src, int n_particles,
                                        std::uint64_t seed, double cathode_z) {
  if (n_particles < 1) throw std::invalid_argument("need at least one particle");
  if (src.spot.empty() && (src.rx_rms <= 0.0 || src.ry_rms <= 0.0))
    throw std::invalid_argument("source radii must be positive");
  if (src.sigma_t < 0.0) throw std::invalid_argument("negative emission-time spread");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<Macroparticle> bunch(n_particles);
  for (Macroparticle& mp : bunch) {
    if (src.spot.empty()) {
      mp.x = Vec3(src.rx_rms * gauss(rng), src.ry_rms * gauss(rng), cathode_z);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, src.spot.size() - 1);
      const Vec2& s = src.spot[pick(rng)];
      mp.x = Vec3(s.x(), s.y(), cathode_z);
    }
    mp.t_emit = src.sigma_t * gauss(rng);
  }
  return bunch;
}

double kinetic_energy_ev(const Macroparticle& mp) {
  return (std::sqrt(1.0 + mp.p.squaredNorm()) - 1.0) * electron_mc2_ev;
}

TrackResult track(std::vector<Macroparticle> bunch, const Fieldmap& fm,
                  const TrackingConfig& cfg) {
  if (cfg.dt <= 0.0) throw std::invalid_argument("time step must be positive");
  if (cfg.n_planes < 1) throw std::invalid_argument("need at least one statistics plane");
  if (!(cfg.exit_z > cfg.cathode_z)) throw std::invalid_argument("exit plane before cathode");

  TrackResult result;
  const double plane_step = (cfg.exit_z - cfg.cathode_z) / cfg.n_planes;
  int next_plane = 1;

  double t = 0.0;
  for (const Macroparticle& mp : bunch) t = std::min(t, mp.t_emit);

  std::vector<Macroparticle> prev = bunch;
  double zbar = mean_z(bunch);
  for (long step = 0; step < cfg.max_steps; ++step) {
    prev = bunch;
    bool any_alive = false;
    bool any_inside = false;
    for (Macroparticle& mp : bunch) {
      if (!mp.alive) continue;
      any_alive = true;
      if (mp.exited) {
        mp.x += cfg.dt * velocity(mp.p);
        continue;
      }
      any_inside = true;
      double h = cfg.dt;
      if (mp.t_emit > t) {
        if (mp.t_emit >= t + cfg.dt) continue;   // not born within this step
        h = t + cfg.dt - mp.t_emit;              // shortened first step
      }
      const Macroparticle before = mp;
      if (!rk4_step(mp, fm, h)) {
        mp.alive = false;
        ++result.lost;
        continue;
      }
      if (mp.x.z() >= cfg.exit_z) {
        const double frac = land_on_exit(mp, before, fm, h, cfg.exit_z);
        mp.t_exit = t + cfg.dt - (1.0 - frac) * h;
        mp.exited = true;
        ++result.exited;
      }
    }
    if (!any_alive) break;

    const double zbar_new = mean_z(bunch);
    while (next_plane <= cfg.n_planes) {
      const double zp = cfg.cathode_z + next_plane * plane_step;
      if (!(zbar < zp && zp <= zbar_new)) break;
      const double frac = (zp - zbar) / (zbar_new - zbar);
      PlaneSnapshot snap;
      snap.z = zp;
      snap.t = t + frac * cfg.dt;
      snap.bunch.resize(bunch.size());
      for (std::size_t i = 0; i < bunch.size(); ++i) {
        snap.bunch[i] = bunch[i];
        if (bunch[i].exited && snap.t >= bunch[i].t_exit) {
          // ballistic after the crossing: drift back from the step end
          snap.bunch[i].x = bunch[i].x - (t + cfg.dt - snap.t) * velocity(bunch[i].p);
        } else {
          snap.bunch[i].x = (1.0 - frac) * prev[i].x + frac * bunch[i].x;
          snap.bunch[i].p = (1.0 - frac) * prev[i].p + frac * bunch[i].p;
        }
      }
      result.planes.push_back(std::move(snap));
      ++next_plane;
    }
    zbar = zbar_new;
    t += cfg.dt;
    if (!any_inside && next_plane > cfg.n_planes) break;
  }
  result.complete = next_plane > cfg.n_planes;
  result.final_state = std::move(bunch);
  return result;
}

BeamStats beam_stats(const TrackResult& result) {
  BeamStats stats;
  stats.lost = result.lost;
  for (const PlaneSnapshot& snap : result.planes) {
    std::vector<double> x, y, z, px, py, ke;
    for (const Macroparticle& mp : snap.bunch) {
      if (!mp.alive) continue;
      x.push_back(mp.x.x());
      y.push_back(mp.x.y());
      z.push_back(mp.x.z());
      px.push_back(mp.p.x());
      py.push_back(mp.p.y());
      ke.push_back(kinetic_energy_ev(mp));
    }
    if (x.size() < 2) throw std::invalid_argument("statistics plane with fewer than two particles");

    PlaneStats ps;
    ps.z = snap.z;
    const Moments mx = central_moments(x, px);
    const Moments my = central_moments(y, py);
    const Moments mz = central_moments(z, ke);
    ps.x_rms = std::sqrt(mx.var_a);
    ps.y_rms = std::sqrt(my.var_a);
    ps.z_rms = std::sqrt(mz.var_a);
    ps.eps_x = emittance(mx);
    ps.eps_y = emittance(my);
    ps.eps_z = emittance(mz);
    stats.plane.push_back(ps);
    stats.de_rms = std::sqrt(mz.var_b);  // fallback when nothing exits
  }

  // energy spread straight from the per-particle exit-plane states
  std::vector<double> exit_ke;
  for (const Macroparticle& mp : result.final_state)
    if (mp.alive && mp.exited) exit_ke.push_back(kinetic_energy_ev(mp));
  if (exit_ke.size() >= 2) {
    const Moments m = central_moments(exit_ke, exit_ke);
    stats.de_rms = std::sqrt(m.var_a);
  }
  return stats;
}

double ConvergenceReport::worst() const {
  return std::max({x_rms, y_rms, z_rms, eps_x, eps_y, eps_z});
}

ConvergenceReport self_convergence(const BeamStats& stats, const BeamStats& ref) {
  if (stats.plane.size() != ref.plane.size())
    throw std::invalid_argument("plane layouts differ between runs");
  ConvergenceReport rep;
  for (std::size_t i = 0; i < stats.plane.size(); ++i) {
    const PlaneStats& a = stats.plane[i];
    const PlaneStats& b = ref.plane[i];
    const double pairs[6][2] = {{a.x_rms, b.x_rms}, {a.y_rms, b.y_rms}, {a.z_rms, b.z_rms},
                                {a.eps_x, b.eps_x}, {a.eps_y, b.eps_y}, {a.eps_z, b.eps_z}};
    double* out[6] = {&rep.x_rms, &rep.y_rms, &rep.z_rms, &rep.eps_x, &rep.eps_y, &rep.eps_z};
    for (int q = 0; q < 6; ++q) {
      // an exact zero on either side is a degenerate moment (identical values
      // or a clipped determinant), not a measurable deviation
      if (pairs[q][0] == 0.0 || pairs[q][1] == 0.0) {
        ++rep.excluded_planes;
        continue;
      }
      *out[q] = std::max(*out[q], relative_deviation(pairs[q][0], pairs[q][1]));
    }
  }
  return rep;
}

}  // namespace egun
