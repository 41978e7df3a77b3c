#include "egun/splines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace egun {

namespace {

using Vec3 = Eigen::Vector3d;  // homogeneous (w*x, w*y, w)

Vec3 homog(const Vec2& p, double w) { return Vec3(w * p.x(), w * p.y(), w); }

void dehomog(const Vec3& h, Vec2& p, double& w) {
  w = h.z();
  if (w == 0.0) throw std::runtime_error("zero weight after spline operation");
  p = Vec2(h.x() / w, h.y() / w);
}

std::vector<Vec3> to_homog(const NurbsCurve& c) {
  std::vector<Vec3> hw(c.ctrl.size());
  for (size_t i = 0; i < hw.size(); ++i) hw[i] = homog(c.ctrl[i], c.weight[i]);
  return hw;
}

NurbsCurve from_homog(KnotVector kv, const std::vector<Vec3>& hw) {
  NurbsCurve c;
  c.kv = std::move(kv);
  c.ctrl.resize(hw.size());
  c.weight.resize(hw.size());
  for (size_t i = 0; i < hw.size(); ++i) dehomog(hw[i], c.ctrl[i], c.weight[i]);
  return c;
}

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 0; i < k; ++i) r = r * double(n - i) / double(i + 1);
  return r;
}

void check_curve(const NurbsCurve& c) {
  validate_knots(c.kv);
  if (static_cast<int>(c.ctrl.size()) != c.kv.num_basis())
    throw std::invalid_argument("control point count does not match knot vector");
  if (c.weight.size() != c.ctrl.size())
    throw std::invalid_argument("weight count does not match control points");
  for (double w : c.weight)
    if (!(w > 0.0)) throw std::invalid_argument("weights must be positive");
}

}  // namespace

int KnotVector::multiplicity(double u) const {
  return static_cast<int>(std::count(knots.begin(), knots.end(), u));
}

std::vector<double> KnotVector::breakpoints() const {
  std::vector<double> b;
  for (double u : knots)
    if (b.empty() || u != b.back()) b.push_back(u);
  return b;
}

KnotVector make_open_knots(int degree, const std::vector<double>& interior) {
  if (degree < 1) throw std::invalid_argument("degree must be >= 1");
  KnotVector kv;
  kv.degree = degree;
  kv.knots.assign(degree + 1, 0.0);
  kv.knots.insert(kv.knots.end(), interior.begin(), interior.end());
  kv.knots.insert(kv.knots.end(), degree + 1, 1.0);
  validate_knots(kv);
  return kv;
}

void validate_knots(const KnotVector& kv) {
  const int p = kv.degree;
  const int nk = static_cast<int>(kv.knots.size());
  if (p < 1) throw std::invalid_argument("degree must be >= 1");
  if (nk < 2 * (p + 1)) throw std::invalid_argument("knot vector too short");
  if (!std::is_sorted(kv.knots.begin(), kv.knots.end()))
    throw std::invalid_argument("knots must be non-decreasing");
  for (int i = 0; i <= p; ++i)
    if (kv.knots[i] != 0.0 || kv.knots[nk - 1 - i] != 1.0)
      throw std::invalid_argument("knot vector must be open on [0,1]");
  // interior knots strictly inside with multiplicity <= degree
  int run = 1;
  for (int i = p + 1; i < nk - p - 1; ++i) {
    if (kv.knots[i] <= 0.0 || kv.knots[i] >= 1.0)
      throw std::invalid_argument("interior knots must lie in (0,1)");
    run = (kv.knots[i] == kv.knots[i - 1]) ? run + 1 : 1;
    if (run > p) throw std::invalid_argument("interior knot multiplicity exceeds degree");
  }
}

int find_span(const KnotVector& kv, double u) {
  const int p = kv.degree;
  const int n = kv.num_basis() - 1;
  const auto& U = kv.knots;
  if (u >= U[n + 1]) return n;  // clamp at the right end (span n is non-empty)
  if (u <= U[p]) return p;
  int low = p, high = n + 1, mid = (low + high) / 2;
  while (u < U[mid] || u >= U[mid + 1]) {
    if (u < U[mid])
      high = mid;
    else
      low = mid;
    mid = (low + high) / 2;
  }
  return mid;
}

int find_span_left(const KnotVector& kv, double u) {
  const int p = kv.degree;
  const auto& U = kv.knots;
  if (u <= U[p] || u >= U[U.size() - p - 1]) return find_span(kv, u);
  auto it = std::lower_bound(U.begin(), U.end(), u);
  if (it == U.end() || *it != u) return find_span(kv, u);
  int first = static_cast<int>(it - U.begin());
  return first - 1;  // span ending at u; non-empty since multiplicities <= p
}

BasisSpan eval_basis(const KnotVector& kv, double u, int n_deriv) {
  return eval_basis_at_span(kv, find_span(kv, u), u, n_deriv);
}

BasisSpan eval_basis_at_span(const KnotVector& kv, int span, double u, int n_deriv) {
  const int p = kv.degree;
  const auto& U = kv.knots;
  if (span < p || span >= kv.num_basis())
    throw std::invalid_argument("span out of range");
  if (U[span] == U[span + 1]) throw std::invalid_argument("empty knot span");
  n_deriv = std::min(n_deriv, p);

  BasisSpan out;
  out.span = span;
  out.value.assign(p + 1, 0.0);

  // basis functions and knot differences (The NURBS Book style tables)
  std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
  std::vector<double> left(p + 1, 0.0), right(p + 1, 0.0);
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[span + 1 - j];
    right[j] = U[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) out.value[j] = ndu[j][p];
  if (n_deriv == 0) return out;

  out.deriv.assign(n_deriv, std::vector<double>(p + 1, 0.0));
  std::vector<std::vector<double>> a(2, std::vector<double>(p + 1, 0.0));
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= n_deriv; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = (rk >= -1) ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out.deriv[k - 1][r] = d;
      std::swap(s1, s2);
    }
  }
  double fac = p;
  for (int k = 1; k <= n_deriv; ++k) {
    for (int j = 0; j <= p; ++j) out.deriv[k - 1][j] *= fac;
    fac *= (p - k);
  }
  return out;
}

bool NurbsCurve::rational() const {
  return std::any_of(weight.begin(), weight.end(), [](double w) { return w != 1.0; });
}

NurbsCurve make_line(const Vec2& a, const Vec2& b, int degree) {
  NurbsCurve c;
  c.kv = make_open_knots(degree);
  c.ctrl.resize(degree + 1);
  for (int i = 0; i <= degree; ++i)
    c.ctrl[i] = a + (b - a) * (double(i) / degree);
  c.weight.assign(degree + 1, 1.0);
  return c;
}

NurbsCurve make_arc(const Vec2& c0, double r, double a0, double a1) {
  const double sweep = a1 - a0;
  if (!(sweep > 0.0) || sweep > 2.0 * std::numbers::pi + 1e-12)
    throw std::invalid_argument("arc sweep must lie in (0, 2*pi]");
  const int nseg = std::max(1, static_cast<int>(std::ceil(sweep / (0.5 * std::numbers::pi) - 1e-12)));
  const double d = sweep / nseg;
  const double wm = std::cos(0.5 * d);

  NurbsCurve c;
  std::vector<double> interior;
  for (int s = 1; s < nseg; ++s) {
    interior.push_back(double(s) / nseg);
    interior.push_back(double(s) / nseg);
  }
  c.kv = make_open_knots(2, interior);
  c.ctrl.reserve(2 * nseg + 1);
  c.weight.reserve(2 * nseg + 1);
  auto on_circle = [&](double th) { return Vec2(c0.x() + r * std::cos(th), c0.y() + r * std::sin(th)); };
  c.ctrl.push_back(on_circle(a0));
  c.weight.push_back(1.0);
  for (int s = 0; s < nseg; ++s) {
    const double th0 = a0 + s * d, thm = th0 + 0.5 * d, th1 = th0 + d;
    c.ctrl.push_back(Vec2(c0.x() + (r / wm) * std::cos(thm), c0.y() + (r / wm) * std::sin(thm)));
    c.weight.push_back(wm);
    c.ctrl.push_back(on_circle(th1));
    c.weight.push_back(1.0);
  }
  return c;
}

NurbsCurve make_circle(const Vec2& c, double r) {
  return make_arc(c, r, 0.0, 2.0 * std::numbers::pi);
}

Vec2 eval_curve(const NurbsCurve& c, double u) {
  const BasisSpan b = eval_basis(c.kv, u);
  const int p = c.kv.degree;
  Vec3 acc = Vec3::Zero();
  for (int j = 0; j <= p; ++j) {
    const int i = b.span - p + j;
    acc += b.value[j] * homog(c.ctrl[i], c.weight[i]);
  }
  return Vec2(acc.x() / acc.z(), acc.y() / acc.z());
}

void eval_curve_deriv(const NurbsCurve& c, double u, Vec2& point, Vec2& tangent) {
  const BasisSpan b = eval_basis(c.kv, u, 1);
  const int p = c.kv.degree;
  Vec3 acc = Vec3::Zero(), dacc = Vec3::Zero();
  for (int j = 0; j <= p; ++j) {
    const int i = b.span - p + j;
    const Vec3 h = homog(c.ctrl[i], c.weight[i]);
    acc += b.value[j] * h;
    dacc += b.deriv[0][j] * h;
  }
  const double w = acc.z(), dw = dacc.z();
  point = Vec2(acc.x() / w, acc.y() / w);
  tangent = (Vec2(dacc.x(), dacc.y()) - point * dw) / w;
}

NurbsCurve reverse_curve(const NurbsCurve& c) {
  NurbsCurve r;
  r.kv.degree = c.kv.degree;
  r.kv.knots.resize(c.kv.knots.size());
  const std::size_t m = c.kv.knots.size();
  for (std::size_t i = 0; i < m; ++i) r.kv.knots[i] = 1.0 - c.kv.knots[m - 1 - i];
  r.ctrl.assign(c.ctrl.rbegin(), c.ctrl.rend());
  r.weight.assign(c.weight.rbegin(), c.weight.rend());
  return r;
}

NurbsCurve insert_knot(const NurbsCurve& c, double u) {
  check_curve(c);
  if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("insertion knot must lie in (0,1)");
  const int p = c.kv.degree;
  if (c.kv.multiplicity(u) >= p)
    throw std::invalid_argument("insertion would exceed degree multiplicity");
  const auto& U = c.kv.knots;
  const int k = find_span(c.kv, u);
  const auto hw = to_homog(c);

  std::vector<Vec3> q(hw.size() + 1);
  const int s = c.kv.multiplicity(u);
  for (int i = 0; i <= k - p; ++i) q[i] = hw[i];
  for (int i = k - p + 1; i <= k - s; ++i) {
    const double alpha = (u - U[i]) / (U[i + p] - U[i]);
    q[i] = alpha * hw[i] + (1.0 - alpha) * hw[i - 1];
  }
  for (size_t i = k - s + 1; i < q.size(); ++i) q[i] = hw[i - 1];

  KnotVector kv2 = c.kv;
  kv2.knots.insert(std::upper_bound(kv2.knots.begin(), kv2.knots.end(), u), u);
  return from_homog(std::move(kv2), q);
}

NurbsCurve insert_knots(const NurbsCurve& c, const std::vector<double>& us) {
  NurbsCurve out = c;
  for (double u : us) out = insert_knot(out, u);
  return out;
}

// Degree elevation through Bezier segments (decompose / elevate / recompose,
// the classical alpha-coefficient formulation), done on homogeneous points.
NurbsCurve elevate_degree(const NurbsCurve& c, int t) {
  check_curve(c);
  if (t < 1) throw std::invalid_argument("elevation amount must be >= 1");
  const int p = c.kv.degree;
  const auto& U = c.kv.knots;
  const int n = static_cast<int>(c.ctrl.size()) - 1;
  const int m = n + p + 1;
  const int ph = p + t, ph2 = ph / 2;
  const auto Pw = to_homog(c);

  // final sizes: every distinct knot value gains multiplicity t
  const int ndist = static_cast<int>(c.kv.breakpoints().size());
  const int nknots_new = static_cast<int>(U.size()) + t * ndist;
  const int nctrl_new = nknots_new - ph - 1;

  std::vector<std::vector<double>> bezalfs(ph + 1, std::vector<double>(p + 1, 0.0));
  bezalfs[0][0] = bezalfs[ph][p] = 1.0;
  for (int i = 1; i <= ph2; ++i) {
    const double inv = 1.0 / binom(ph, i);
    for (int j = std::max(0, i - t); j <= std::min(p, i); ++j)
      bezalfs[i][j] = inv * binom(p, j) * binom(t, i - j);
  }
  for (int i = ph2 + 1; i <= ph - 1; ++i)
    for (int j = std::max(0, i - t); j <= std::min(p, i); ++j)
      bezalfs[i][j] = bezalfs[ph - i][p - j];

  std::vector<Vec3> Qw(nctrl_new, Vec3::Zero());
  std::vector<double> Uh(nctrl_new + ph + 1, 0.0);
  std::vector<Vec3> bpts(p + 1), ebpts(ph + 1), nextbpts(std::max(p - 1, 0));
  std::vector<double> alfs(std::max(p - 1, 0), 0.0);

  int mh = ph, kind = ph + 1, r = -1, a = p, b = p + 1, cind = 1;
  double ua = U[0];
  Qw[0] = Pw[0];
  for (int i = 0; i <= ph; ++i) Uh[i] = ua;
  for (int i = 0; i <= p; ++i) bpts[i] = Pw[i];

  while (b < m) {
    const int i0 = b;
    while (b < m && U[b] == U[b + 1]) ++b;
    const int mul = b - i0 + 1;
    mh += mul + t;
    const double ub = U[b];
    const int oldr = r;
    r = p - mul;
    const int lbz = (oldr > 0) ? (oldr + 2) / 2 : 1;
    const int rbz = (r > 0) ? ph - (r + 1) / 2 : ph;
    if (r > 0) {
      const double numer = ub - ua;
      for (int k = p; k > mul; --k) alfs[k - mul - 1] = numer / (U[a + k] - ua);
      for (int j = 1; j <= r; ++j) {
        const int save = r - j, s = mul + j;
        for (int k = p; k >= s; --k)
          bpts[k] = alfs[k - s] * bpts[k] + (1.0 - alfs[k - s]) * bpts[k - 1];
        nextbpts[save] = bpts[p];
      }
    }
    for (int i = lbz; i <= ph; ++i) {
      ebpts[i] = Vec3::Zero();
      for (int j = std::max(0, i - t); j <= std::min(p, i); ++j)
        ebpts[i] += bezalfs[i][j] * bpts[j];
    }
    if (oldr > 1) {
      // remove the previously inserted knot ua (oldr - 1) times
      int first = kind - 2, last = kind;
      const double den = ub - ua;
      const double bet = (ub - Uh[kind - 1]) / den;
      for (int tr = 1; tr < oldr; ++tr) {
        int i = first, j = last, kj = j - kind + 1;
        while (j - i > tr) {
          if (i < cind) {
            const double alf = (ub - Uh[i]) / (ua - Uh[i]);
            Qw[i] = alf * Qw[i] + (1.0 - alf) * Qw[i - 1];
          }
          if (j >= lbz) {
            if (j - tr <= kind - ph + oldr) {
              const double gam = (ub - Uh[j - tr]) / den;
              ebpts[kj] = gam * ebpts[kj] + (1.0 - gam) * ebpts[kj + 1];
            } else {
              ebpts[kj] = bet * ebpts[kj] + (1.0 - bet) * ebpts[kj + 1];
            }
          }
          ++i;
          --j;
          --kj;
        }
        --first;
        ++last;
      }
    }
    if (a != p)
      for (int i = 0; i < ph - oldr; ++i) Uh[kind++] = ua;
    for (int j = lbz; j <= rbz; ++j) Qw[cind++] = ebpts[j];

    if (b < m) {
      for (int j = 0; j < r; ++j) bpts[j] = nextbpts[j];
      for (int j = r; j <= p; ++j) bpts[j] = Pw[b - p + j];
      a = b;
      ++b;
      ua = ub;
    } else {
      for (int i = 0; i <= ph; ++i) Uh[kind + i] = ub;
    }
  }

  KnotVector kv2;
  kv2.degree = ph;
  kv2.knots = std::move(Uh);
  std::vector<Vec3> q(Qw.begin(), Qw.begin() + (mh - ph));
  return from_homog(std::move(kv2), q);
}

std::vector<double> greville(const KnotVector& kv) {
  const int p = kv.degree;
  std::vector<double> g(kv.num_basis(), 0.0);
  for (int i = 0; i < kv.num_basis(); ++i) {
    double s = 0.0;
    for (int j = 1; j <= p; ++j) s += kv.knots[i + j];
    g[i] = s / p;
  }
  return g;
}

std::vector<double> chord_length_params(const std::vector<Vec2>& pts) {
  if (pts.size() < 2) throw std::invalid_argument("need at least two points");
  std::vector<double> t(pts.size(), 0.0);
  for (size_t i = 1; i < pts.size(); ++i)
    t[i] = t[i - 1] + (pts[i] - pts[i - 1]).norm();
  const double total = t.back();
  if (!(total > 0.0)) throw std::invalid_argument("degenerate point sequence");
  for (double& v : t) v /= total;
  return t;
}

FitResult least_squares_fit(const KnotVector& kv, const std::vector<double>& params,
                            const std::vector<Vec2>& pts, bool fix_endpoints,
                            double smoothing) {
  validate_knots(kv);
  if (params.size() != pts.size()) throw std::invalid_argument("params/pts size mismatch");
  const int n = kv.num_basis();
  const int m = static_cast<int>(pts.size());
  const int nfree = fix_endpoints ? n - 2 : n;
  if (m < nfree) throw std::invalid_argument("fewer samples than unknowns");
  if (fix_endpoints && n < 3) throw std::invalid_argument("too few control points to fix endpoints");

  // optional ridge on second differences of the control polygon, appended as
  // extra least-squares rows with zero targets
  const int nsm = smoothing > 0.0 && n > 2 ? n - 2 : 0;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m + nsm, n);
  for (int k = 0; k < m; ++k) {
    const BasisSpan bs = eval_basis(kv, params[k]);
    for (int j = 0; j <= kv.degree; ++j) A(k, bs.span - kv.degree + j) = bs.value[j];
  }
  const double sm = std::sqrt(std::max(smoothing, 0.0));
  for (int i = 0; i < nsm; ++i) {
    A(m + i, i) = sm;
    A(m + i, i + 1) = -2.0 * sm;
    A(m + i, i + 2) = sm;
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + nsm, 2);
  for (int k = 0; k < m; ++k) rhs.row(k) = pts[k].transpose();

  FitResult res;
  res.curve.kv = kv;
  res.curve.ctrl.assign(n, Vec2::Zero());
  res.curve.weight.assign(n, 1.0);

  if (fix_endpoints) {
    const Vec2 p0 = pts.front(), p1 = pts.back();
    rhs -= A.col(0) * p0.transpose();
    rhs -= A.col(n - 1) * p1.transpose();
    Eigen::MatrixXd Ai = A.middleCols(1, n - 2);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ai);
    if (qr.rank() < n - 2)
      throw std::runtime_error("rank-deficient fit (samples do not cover all basis supports)");
    Eigen::MatrixXd x = qr.solve(rhs);
    res.curve.ctrl[0] = p0;
    res.curve.ctrl[n - 1] = p1;
    for (int i = 0; i < n - 2; ++i) res.curve.ctrl[i + 1] = x.row(i).transpose();
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < n)
      throw std::runtime_error("rank-deficient fit (samples do not cover all basis supports)");
    Eigen::MatrixXd x = qr.solve(rhs);
    for (int i = 0; i < n; ++i) res.curve.ctrl[i] = x.row(i).transpose();
  }

  double ss = 0.0, mx = 0.0;
  for (int k = 0; k < m; ++k) {
    const double e = (eval_curve(res.curve, params[k]) - pts[k]).norm();
    ss += e * e;
    mx = std::max(mx, e);
  }
  res.rms_residual = std::sqrt(ss / m);
  res.max_residual = mx;
  return res;
}

bool NurbsSurface::rational() const {
  return std::any_of(weight.begin(), weight.end(), [](double w) { return w != 1.0; });
}

Vec2 eval_surface(const NurbsSurface& s, double u, double v) {
  return eval_surface_jacobian(s, u, v).x;
}

SurfacePoint eval_surface_jacobian(const NurbsSurface& s, double u, double v) {
  return eval_surface_jacobian_at(s, u, v, -1, -1);
}

SurfacePoint eval_surface_jacobian_at(const NurbsSurface& s, double u, double v,
                                      int span_u, int span_v) {
  const int pu = s.ku.degree, pv = s.kv.degree;
  const BasisSpan bu = (span_u < 0) ? eval_basis(s.ku, u, 1)
                                    : eval_basis_at_span(s.ku, span_u, u, 1);
  const BasisSpan bv = (span_v < 0) ? eval_basis(s.kv, v, 1)
                                    : eval_basis_at_span(s.kv, span_v, v, 1);

  Vec3 acc = Vec3::Zero(), du = Vec3::Zero(), dv = Vec3::Zero();
  for (int jj = 0; jj <= pv; ++jj) {
    const int j = bv.span - pv + jj;
    for (int ii = 0; ii <= pu; ++ii) {
      const int i = bu.span - pu + ii;
      const Vec3 h = homog(s.at(i, j), s.weight[s.idx(i, j)]);
      acc += bu.value[ii] * bv.value[jj] * h;
      du += bu.deriv[0][ii] * bv.value[jj] * h;
      dv += bu.value[ii] * bv.deriv[0][jj] * h;
    }
  }
  SurfacePoint out;
  const double w = acc.z();
  out.x = Vec2(acc.x() / w, acc.y() / w);
  const Vec2 xu = (Vec2(du.x(), du.y()) - out.x * du.z()) / w;
  const Vec2 xv = (Vec2(dv.x(), dv.y()) - out.x * dv.z()) / w;
  out.jac.col(0) = xu;
  out.jac.col(1) = xv;
  out.det = out.jac.determinant();
  return out;
}

NurbsCurve extract_side(const NurbsSurface& s, int side) {
  NurbsCurve c;
  switch (side) {
    case 0:
    case 2: {
      const int j = (side == 0) ? 0 : s.nv - 1;
      c.kv = s.ku;
      for (int i = 0; i < s.nu; ++i) {
        c.ctrl.push_back(s.at(i, j));
        c.weight.push_back(s.weight[s.idx(i, j)]);
      }
      break;
    }
    case 1:
    case 3: {
      const int i = (side == 1) ? s.nu - 1 : 0;
      c.kv = s.kv;
      for (int j = 0; j < s.nv; ++j) {
        c.ctrl.push_back(s.at(i, j));
        c.weight.push_back(s.weight[s.idx(i, j)]);
      }
      break;
    }
    default:
      throw std::invalid_argument("side must be 0..3");
  }
  return c;
}

NurbsSurface coons_patch(const NurbsCurve& south, const NurbsCurve& north,
                         const NurbsCurve& west, const NurbsCurve& east) {
  if (!(south.kv == north.kv) || !(west.kv == east.kv))
    throw std::invalid_argument("opposite boundary curves must share a knot vector");
  for (const NurbsCurve* c : {&south, &north, &west, &east})
    if (c->rational())
      throw std::invalid_argument("transfinite patches require unit weights");
  auto near = [](const Vec2& a, const Vec2& b) { return (a - b).norm() < 1e-9; };
  if (!near(south.ctrl.front(), west.ctrl.front()) ||
      !near(south.ctrl.back(), east.ctrl.front()) ||
      !near(north.ctrl.front(), west.ctrl.back()) ||
      !near(north.ctrl.back(), east.ctrl.back()))
    throw std::invalid_argument("boundary curves do not meet at the corners");

  NurbsSurface s;
  s.ku = south.kv;
  s.kv = west.kv;
  s.nu = static_cast<int>(south.ctrl.size());
  s.nv = static_cast<int>(west.ctrl.size());
  s.ctrl.assign(size_t(s.nu) * s.nv, Vec2::Zero());
  s.weight.assign(size_t(s.nu) * s.nv, 1.0);

  const auto gu = greville(s.ku), gv = greville(s.kv);
  const Vec2 c00 = south.ctrl.front(), c10 = south.ctrl.back();
  const Vec2 c01 = north.ctrl.front(), c11 = north.ctrl.back();
  for (int j = 0; j < s.nv; ++j) {
    for (int i = 0; i < s.nu; ++i) {
      const double a = gu[i], b = gv[j];
      Vec2 q = (1.0 - b) * south.ctrl[i] + b * north.ctrl[i] +
               (1.0 - a) * west.ctrl[j] + a * east.ctrl[j] -
               ((1.0 - a) * (1.0 - b) * c00 + a * (1.0 - b) * c10 +
                (1.0 - a) * b * c01 + a * b * c11);
      s.at(i, j) = q;
    }
  }
  // boundary rows must reproduce the inputs bit-for-bit for conformity checks
  for (int i = 0; i < s.nu; ++i) {
    s.at(i, 0) = south.ctrl[i];
    s.at(i, s.nv - 1) = north.ctrl[i];
  }
  for (int j = 0; j < s.nv; ++j) {
    s.at(0, j) = west.ctrl[j];
    s.at(s.nu - 1, j) = east.ctrl[j];
  }
  return s;
}

QuadRule gauss_rule(int n) {
  if (n < 1) throw std::invalid_argument("quadrature order must be >= 1");
  QuadRule q;
  q.node.resize(n);
  q.weight.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      const double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    q.node[i] = 0.5 * (1.0 - x);
    q.node[n - 1 - i] = 0.5 * (1.0 + x);
    const double w = 2.0 / ((1.0 - x * x) * pp * pp);
    q.weight[i] = 0.5 * w;
    q.weight[n - 1 - i] = 0.5 * w;
  }
  return q;
}

QuadRule lobatto_rule(int n) {
  if (n < 2) throw std::invalid_argument("Lobatto rule needs n >= 2");
  QuadRule q;
  q.node.resize(n);
  q.weight.resize(n);
  const int m = n - 1;  // interior nodes are roots of P'_m
  auto legendre = [&](double x, double& P, double& dP, double& d2P) {
    double p0 = 1.0, p1 = 0.0;
    for (int j = 0; j < m; ++j) {
      const double p2 = p1;
      p1 = p0;
      p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1);
    }
    P = p0;
    dP = m * (x * p0 - p1) / (x * x - 1.0);
    d2P = (2.0 * x * dP - m * (m + 1) * P) / (1.0 - x * x);
  };
  q.node[0] = 0.0;
  q.node[n - 1] = 1.0;
  q.weight[0] = q.weight[n - 1] = 0.5 * 2.0 / (m * (m + 1));
  for (int i = 1; i < n - 1; ++i) {
    // x = cos(pi*i/m) seeds Newton on P'_m; descending x fills ascending nodes
    double x = std::cos(std::numbers::pi * i / m);
    for (int it = 0; it < 100; ++it) {
      double P, dP, d2P;
      legendre(x, P, dP, d2P);
      const double dx = (d2P != 0.0) ? dP / d2P : 0.0;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double P, dP, d2P;
    legendre(x, P, dP, d2P);
    q.node[n - 1 - i] = 0.5 * (1.0 + x);
    q.weight[n - 1 - i] = 0.5 * 2.0 / (m * (m + 1) * P * P);
  }
  return q;
}

}  // namespace egun
