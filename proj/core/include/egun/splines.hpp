#pragma once

// B-spline / NURBS primitives for the axisymmetric gun modeler: open knot
// vectors on [0,1], Cox-de Boor evaluation with derivatives, Boehm knot
// insertion, degree elevation, and constrained least-squares fitting.

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <vector>

namespace egun {

using Vec2 = Eigen::Vector2d;

struct KnotVector {
  int degree = 0;
  std::vector<double> knots;  // non-decreasing, open, spanning [0,1]

  int num_basis() const { return static_cast<int>(knots.size()) - degree - 1; }
  // multiplicity of a parametric value among the knots (exact comparison)
  int multiplicity(double u) const;
  std::vector<double> breakpoints() const;  // distinct knot values
  bool operator==(const KnotVector&) const = default;
};

// Open knot vector with the given interior knots (each repeated per its
// multiplicity). Interior values must lie strictly inside (0,1).
KnotVector make_open_knots(int degree, const std::vector<double>& interior = {});

// Throws std::invalid_argument when the vector is not open / not sorted / not
// normalized to [0,1] or has interior multiplicity > degree.
void validate_knots(const KnotVector& kv);

// Index i of the non-empty span with knots[i] <= u < knots[i+1]; u == 1 maps
// to the last non-empty span so evaluation at the right end stays in range.
int find_span(const KnotVector& kv, double u);
// Span of the interval *ending* at u (left-sided limit evaluation). Falls back
// to find_span when u is not an interior breakpoint.
int find_span_left(const KnotVector& kv, double u);

struct BasisSpan {
  int span = 0;                                  // knot span index
  std::vector<double> value;                     // degree+1 nonzero functions
  std::vector<std::vector<double>> deriv;        // deriv[k][j], k = 1..n_deriv
};

// Nonzero basis functions (and derivatives up to n_deriv) at u. The span may
// be forced to evaluate one-sided limits at interior knots.
BasisSpan eval_basis(const KnotVector& kv, double u, int n_deriv = 0);
BasisSpan eval_basis_at_span(const KnotVector& kv, int span, double u, int n_deriv = 0);

struct NurbsCurve {
  KnotVector kv;
  std::vector<Vec2> ctrl;
  std::vector<double> weight;  // all 1.0 -> plain B-spline

  bool rational() const;
  bool operator==(const NurbsCurve&) const = default;
};

NurbsCurve make_line(const Vec2& a, const Vec2& b, int degree = 1);
// Full circle of radius r about c: 9 control points, double interior knots,
// weights alternating 1, sqrt(2)/2. Exact to machine precision.
NurbsCurve make_circle(const Vec2& c, double r);
// Circular arc swept counterclockwise from angle a0 to a1 (radians, a1 - a0
// in (0, 2*pi]); one quadratic rational segment per quarter turn.
NurbsCurve make_arc(const Vec2& c, double r, double a0, double a1);

Vec2 eval_curve(const NurbsCurve& c, double u);
// Point and first derivative w.r.t. the parameter (quotient rule for the
// rational case).
void eval_curve_deriv(const NurbsCurve& c, double u, Vec2& point, Vec2& tangent);

// Same geometric curve traversed backwards: control points reversed, knots
// mirrored about 1/2.
NurbsCurve reverse_curve(const NurbsCurve& c);

// Boehm insertion: same curve, one more knot. u must keep interior
// multiplicity <= degree.
NurbsCurve insert_knot(const NurbsCurve& c, double u);
NurbsCurve insert_knots(const NurbsCurve& c, const std::vector<double>& us);
// Degree elevation by t >= 1: Bezier decomposition, Bernstein elevation and
// recomposition, in homogeneous coordinates. Geometry unchanged, every knot
// multiplicity grows by t.
NurbsCurve elevate_degree(const NurbsCurve& c, int t = 1);

// Greville abscissae (means of `degree` consecutive interior knots).
std::vector<double> greville(const KnotVector& kv);

// Chord-length parameters in [0,1] for a point sequence.
std::vector<double> chord_length_params(const std::vector<Vec2>& pts);

struct FitResult {
  NurbsCurve curve;
  double rms_residual = 0.0;
  double max_residual = 0.0;
};

// Least-squares B-spline fit (unit weights) of samples (params[k], pts[k]).
// With fix_endpoints the first/last control points are set to the first/last
// sample and eliminated from the normal equations. A positive smoothing weight
// adds a ridge on second differences of the control polygon, which keeps the
// polygon near the data when the basis is stiff (high degree, few knots).
// Throws on rank deficiency or when there are fewer samples than unknowns.
FitResult least_squares_fit(const KnotVector& kv, const std::vector<double>& params,
                            const std::vector<Vec2>& pts, bool fix_endpoints,
                            double smoothing = 0.0);

struct NurbsSurface {
  KnotVector ku, kv;             // parametric directions u, v
  int nu = 0, nv = 0;            // control net dimensions
  std::vector<Vec2> ctrl;        // index i + nu * j (u fastest)
  std::vector<double> weight;

  int idx(int i, int j) const { return i + nu * j; }
  Vec2& at(int i, int j) { return ctrl[idx(i, j)]; }
  const Vec2& at(int i, int j) const { return ctrl[idx(i, j)]; }
  bool rational() const;
  bool operator==(const NurbsSurface&) const = default;
};

struct SurfacePoint {
  Vec2 x;                     // physical point
  Eigen::Matrix2d jac;        // d(x)/d(u,v), columns = du, dv
  double det = 0.0;
};

Vec2 eval_surface(const NurbsSurface& s, double u, double v);
SurfacePoint eval_surface_jacobian(const NurbsSurface& s, double u, double v);
// One-sided variant: forces the spans used in each direction (pass -1 to use
// the default span). Needed for field-jump measurements exactly at knot lines.
SurfacePoint eval_surface_jacobian_at(const NurbsSurface& s, double u, double v,
                                      int span_u, int span_v);

// Boundary curve of a tensor surface side. Sides: 0 = v=0, 1 = u=1, 2 = v=1,
// 3 = u=0, each parameterized by the surviving coordinate.
NurbsCurve extract_side(const NurbsSurface& s, int side);

// Ruled/Coons-style surface from four compatible boundary curves:
// south (v=0) and north (v=1) share ku; west (u=0) and east (u=1) share kv.
// Corner points must agree. Interior net from bilinear blending at Greville
// abscissae; boundary rows reproduce the inputs exactly.
NurbsSurface coons_patch(const NurbsCurve& south, const NurbsCurve& north,
                         const NurbsCurve& west, const NurbsCurve& east);

// Gauss-Legendre nodes/weights on [0,1].
struct QuadRule {
  std::vector<double> node;
  std::vector<double> weight;
};
QuadRule gauss_rule(int n);
// Gauss-Lobatto rule on [0,1] (includes both endpoints), n >= 2.
QuadRule lobatto_rule(int n);

}  // namespace egun
