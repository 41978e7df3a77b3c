#pragma once

// Axisymmetric electrostatics on a conforming multipatch model: tensor
// B-spline spaces per patch with shared interface coefficients, rho-weighted
// stiffness assembly, Dirichlet elimination, sparse solve, and field
// evaluation utilities (extrema, boundary profiles, fieldmap export).

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "egun/geometry.hpp"

namespace egun {

constexpr double vacuum_permittivity = 8.8541878128e-12;  // F/m

// Prescribed voltages per Dirichlet tag. Conflicting tags at shared corner
// coefficients resolve with priority gamma_d1 > gamma_d2 > gamma_d0.
struct BoundaryVoltages {
  double d0 = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double of(BoundaryTag t) const;
};

struct PatchSpace {
  KnotVector ku, kv;        // analysis knot vectors on the parametric square
  int nu = 0, nv = 0;       // basis counts per direction
  std::vector<int> global;  // local (i + nu*j) -> global coefficient
  int idx(int i, int j) const { return i + nu * j; }
};

struct SplineSpace {
  MultiPatchModel geo;  // snapshot of the model the space was built on
  int degree = 0, continuity = 0, n_sub = 0;
  std::vector<PatchSpace> patches;
  int n_total = 0;                // global coefficients
  int n_free = 0;                 // unconstrained coefficients
  std::vector<int> coeff_tag;     // per global coefficient: -1 free, else Dirichlet tag 0/1/2
  std::vector<int> free_index;    // global -> index into the reduced system, -1 if constrained
};

// Same (degree, continuity, n_sub) tensor space on every patch; coefficients
// on shared sides are identified so the global basis is C0 across interfaces
// and C^{continuity} inside patches.
SplineSpace build_space(const MultiPatchModel& model, int degree, int continuity, int n_sub);

struct LinearSystem {
  Eigen::SparseMatrix<double> K;  // reduced stiffness, n_free x n_free
  Eigen::VectorXd rho;            // boundary load, K phi_free = -rho
  Eigen::VectorXd phi_full;       // Dirichlet values in place, zeros on free entries
};

LinearSystem assemble(const SplineSpace& space, const BoundaryVoltages& volts);

// Full stiffness without Dirichlet elimination (constants lie in its kernel).
Eigen::SparseMatrix<double> assemble_unconstrained(const SplineSpace& space);

struct SolveOptions {
  bool use_cg = false;  // diagonal-preconditioned CG instead of direct LDLT
  double cg_tol = 1e-13;
  int cg_max_iter = 50000;
};

struct FieldSolution {
  SplineSpace space;
  Eigen::VectorXd phi;  // all coefficients, Dirichlet entries included
};

// Assemble + factor + residual check ||K phi + rho|| <= 1e-10 ||rho||.
FieldSolution solve(const SplineSpace& space, const BoundaryVoltages& volts,
                    const SolveOptions& opts = {});

double eval_potential(const FieldSolution& sol, int patch, double u, double v);
// E = -grad(phi) in (z, rho) components, V/m.
Vec2 eval_field(const FieldSolution& sol, int patch, double u, double v);
// One-sided variant forcing the knot spans (-1 = default), for jump probes.
Vec2 eval_field_at(const FieldSolution& sol, int patch, double u, double v, int span_u,
                   int span_v);

struct MaxField {
  double value = 0.0;  // V/m
  int patch = -1;
  double u = 0.0, v = 0.0;
  Vec2 x{0.0, 0.0};
};

// Discrete maximum of ||E|| over closed per-element sample grids (Gauss-
// Lobatto, so element and region boundaries are included) restricted to the
// region; empty region means every patch in full.
MaxField max_field(const FieldSolution& sol, const std::vector<RoiRect>& region);

// Sum of ||E|| over the model's triple-point sample set.
double triple_point_term(const FieldSolution& sol);

struct ProfileSample {
  double s = 0.0;     // arclength from the start of the profile
  double phi = 0.0;   // V
  double emag = 0.0;  // V/m
  Vec2 x{0.0, 0.0};
};

// Samples along every side carrying the tag (or the named interface's first
// side), ordered by arclength; sides with a shared tag are concatenated in
// patch order.
std::vector<ProfileSample> boundary_profile(const FieldSolution& sol, const std::string& name,
                                            int n_samples);

struct FieldmapSpec {
  int nz = 256, nr = 48;
  double z0 = 0.14, z1 = 0.30;
  double r0 = 0.0, r1 = 0.008;  // stays inside the bore, clears the beam tails
};

// Regular cylindrical grid of E; rows `z r Ez Er`, z-major. Grid nodes
// outside the vacuum region are written as zeros and masked 0 in the sidecar
// file `<path>.mask`.
void export_fieldmap(const FieldSolution& sol, const FieldmapSpec& grid, const std::string& path);

// Relative L2(rho dz drho) error of the potential against a reference.
double l2_error(const FieldSolution& sol, const std::function<double(const Vec2&)>& ref);

}  // namespace egun
