#pragma once

// Conforming multipatch model of an axisymmetric cross-section in the
// (z, rho) half-plane: patches with material + boundary tags, patch-to-patch
// interfaces, a designable electrode boundary curve, the electrode volume
// loop, and the sample sets the field objective needs.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "egun/splines.hpp"

namespace egun {

// Sides of a tensor patch: 0 = v=0 (south), 1 = u=1 (east), 2 = v=1 (north),
// 3 = u=0 (west). Coordinates are (z, rho).
enum class BoundaryTag {
  interface_,  // shared with another patch (listed in Model::interfaces)
  gamma_d0,    // grounded chamber
  gamma_d1,    // electrode (high voltage)
  gamma_d2,    // anode
  axis,        // rho = 0, natural by symmetry
  natural      // homogeneous Neumann
};

enum class Material { vacuum, insulator };

const char* to_string(BoundaryTag t);
BoundaryTag tag_from_string(const std::string& s);

struct Patch {
  NurbsSurface geo;
  Material material = Material::vacuum;
  std::array<BoundaryTag, 4> tag{BoundaryTag::natural, BoundaryTag::natural,
                                 BoundaryTag::natural, BoundaryTag::natural};
};

struct PatchInterface {
  int patch_a = -1, side_a = -1;
  int patch_b = -1, side_b = -1;
  bool reversed = false;  // side_b runs against side_a's parameter direction
  std::string name;
};

struct RoiRect {
  int patch = -1;
  double u0 = 0, u1 = 1, v0 = 0, v1 = 1;
};

// One entry of the electrode boundary loop (counterclockwise traversal of the
// electrode cross-section). A "cap" entry is resolved against the current
// designable curve so the loop follows the design.
struct LoopEntry {
  NurbsCurve curve;
  bool reverse = false;
  bool is_cap = false;
};

struct MultiPatchModel {
  std::string name;
  std::vector<Patch> patches;
  std::vector<PatchInterface> interfaces;
  double eps_ins_rel = 1.0;

  // designable electrode cap: south side of patches[cap_patch]
  int cap_patch = -1;
  std::vector<int> free_ctrl;             // designable control point indices
  Vec2 bounds_z{0, 0}, bounds_rho{0, 0};  // coordinate box for free points

  std::vector<LoopEntry> electrode_loop;
  Vec2 triple_point{0, 0};
  std::vector<Vec2> tp_points;  // field sample points near the triple point
  std::vector<RoiRect> roi;     // objective region (empty = all patches)
};

struct ParamPoint {
  int patch = -1;
  double u = 0, v = 0;
};

struct Diagnostics {
  bool ok = true;
  std::vector<std::string> issues;
};

// Jacobian positivity on a dense per-element grid, interface conformity
// (equal knot vectors and coincident control points), complete side tagging,
// rho >= 0 everywhere, rho == 0 along axis-tagged sides.
Diagnostics validate(const MultiPatchModel& model);

// Quick check used inside optimization loops: Jacobian positivity of the
// design-dependent patches only.
bool jacobians_positive(const NurbsSurface& s, int samples_per_span = 6);

// Designable curve (south side of the cap patch).
NurbsCurve design_curve(const MultiPatchModel& model);
int design_dim(const MultiPatchModel& model);
Eigen::VectorXd get_design(const MultiPatchModel& model);
Eigen::VectorXd design_lower(const MultiPatchModel& model);
Eigen::VectorXd design_upper(const MultiPatchModel& model);

// Writes the design vector (layout [z_i, rho_i] per free control point) into
// the cap curve and re-blends the cap patch interior transfinitely from its
// four boundary curves. Other patches are untouched. Throws std::domain_error
// when a component violates the bounds.
void apply_design(MultiPatchModel& model, const Eigen::VectorXd& v);

// Replaces the designable curve with a refined/elevated version living on a
// new knot vector (same endpoints); free control indices become 1..n-2.
void replace_design_curve(MultiPatchModel& model, const NurbsCurve& cap);

// Volume of the solid of revolution enclosed by a closed loop in the (z,rho)
// half-plane, via the boundary quadrature of rho^2 dz. Loop must close within
// 1e-9 (throws std::invalid_argument otherwise).
double volume_of_revolution(const std::vector<LoopEntry>& loop);
double electrode_volume(const MultiPatchModel& model);

// Point location by Newton iteration over candidate patches (control-net
// bounding box prefilter). Returns nullopt when no patch contains the point.
std::optional<ParamPoint> locate(const MultiPatchModel& model, const Vec2& x,
                                 double tol = 1e-10);

// (u,v) coordinates of a point on a side at side-parameter t in [0,1].
void side_param(int side, double t, double& u, double& v);

nlohmann::json curve_to_json(const NurbsCurve& c);
NurbsCurve curve_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const MultiPatchModel& model);
MultiPatchModel model_from_json(const nlohmann::json& j);
void save_model(const MultiPatchModel& model, const std::string& path);
MultiPatchModel load_model(const std::string& path);

// ---- benchmark model builders ----

// Bilinear rectangle patch [lo.z, hi.z] x [lo.rho, hi.rho].
NurbsSurface make_rect_patch(const Vec2& lo, const Vec2& hi);

// Uniform gap: rectangle [0,gap] x [r0,r1], z=0 side at voltage v1 (gamma_d1),
// z=gap grounded (gamma_d0), radial sides natural (axis when r0 == 0).
MultiPatchModel make_plate_model(double gap, double r0, double r1);

// Concentric spheres r=a (gamma_d1) and r=b (gamma_d0), meridian half-annulus
// split into two exact-arc patches at the equator.
MultiPatchModel make_spherical_capacitor_model(double a, double b);

struct GunConfig {
  double insulator_z = 0.060;       // electrode back plane
  double cathode_z = 0.140;         // cathode face plane
  double gap = 0.080;               // cathode-anode spacing
  double anode_thickness = 0.010;
  double chamber_length = 0.300;
  double chamber_radius = 0.150;
  double insulator_radius = 0.030;
  double aperture_radius = 0.010;   // also the cathode face radius
  double flat_radius = 0.0541;      // flat-design electrode radius
  double fillet_radius = 0.016;
  double eps_ins_rel = 9.0;
  int cap_degree = 7;
  std::vector<double> cap_internal_knots;
  double fit_smoothing = 2.0;  // second-difference ridge weight of the cap fit
  Vec2 design_bounds_z{0.050, 0.145};
  Vec2 design_bounds_rho{0.008, 0.090};
  double tp_arc_radius = 0.001;
  int tp_count = 8;
  double roi_margin = 0.03;   // parametric margin off the cap endpoints
  double roi_vmax = 0.6;      // radial extent of the objective region
};

// Dense samples of the flat (original) electrode profile: straight segments
// with filleted corners, from the triple point to the cathode face edge.
std::vector<Vec2> flat_profile_samples(const GunConfig& cfg, int n = 240);

// Benchmark gun cross-section. When cap is given it must share endpoints with
// the flat profile; otherwise the flat profile is least-squares fitted in the
// requested design space.
MultiPatchModel build_gun_model(const GunConfig& cfg,
                                const std::optional<NurbsCurve>& cap = std::nullopt);

GunConfig gun_config_from_json(const nlohmann::json& j);
nlohmann::json gun_config_to_json(const GunConfig& cfg);

}  // namespace egun
