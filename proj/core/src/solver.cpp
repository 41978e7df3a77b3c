#include "egun/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>

namespace egun {

namespace {

struct Dsu {
  std::vector<int> parent;
  explicit Dsu(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

// local (i,j) of the m-th coefficient along a side, ordered by the side's
// surviving parameter
void side_coeff(const PatchSpace& ps, int side, int m, int& i, int& j) {
  switch (side & 3) {
    case 0: i = m; j = 0; break;
    case 1: i = ps.nu - 1; j = m; break;
    case 2: i = m; j = ps.nv - 1; break;
    default: i = 0; j = m; break;
  }
}

int side_count(const PatchSpace& ps, int side) { return (side & 1) ? ps.nv : ps.nu; }

double permittivity(const MultiPatchModel& geo, int patch) {
  return vacuum_permittivity *
         (geo.patches[patch].material == Material::insulator ? geo.eps_ins_rel : 1.0);
}

// shared element loop: emits symmetric stiffness contributions (gi, gj, val)
template <typename Emit>
void assemble_entries(const SplineSpace& space, Emit&& emit) {
  const int p = space.degree;
  const QuadRule q = gauss_rule(p + 1);
  const int nq = static_cast<int>(q.node.size());
  const int nloc = p + 1;

  for (std::size_t k = 0; k < space.patches.size(); ++k) {
    const PatchSpace& ps = space.patches[k];
    const NurbsSurface& geo = space.geo.patches[k].geo;
    const double eps = permittivity(space.geo, static_cast<int>(k));
    const auto bu = ps.ku.breakpoints();
    const auto bv = ps.kv.breakpoints();

    std::vector<BasisSpan> us(nq), vs(nq);
    Eigen::MatrixXd local(nloc * nloc, nloc * nloc);
    std::vector<Eigen::Vector2d> grad(nloc * nloc);

    for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu) {
      const double hu = bu[eu + 1] - bu[eu];
      for (int g = 0; g < nq; ++g) us[g] = eval_basis(ps.ku, bu[eu] + hu * q.node[g], 1);
      for (std::size_t ev = 0; ev + 1 < bv.size(); ++ev) {
        const double hv = bv[ev + 1] - bv[ev];
        for (int g = 0; g < nq; ++g) vs[g] = eval_basis(ps.kv, bv[ev] + hv * q.node[g], 1);

        local.setZero();
        for (int gu = 0; gu < nq; ++gu) {
          const double u = bu[eu] + hu * q.node[gu];
          for (int gv = 0; gv < nq; ++gv) {
            const double v = bv[ev] + hv * q.node[gv];
            const SurfacePoint sp = eval_surface_jacobian(geo, u, v);
            if (!(sp.det > 0.0))
              throw std::runtime_error("singular geometry Jacobian at a quadrature point");
            const double w =
                q.weight[gu] * q.weight[gv] * hu * hv * sp.det * sp.x.y() * eps;

            const Eigen::Matrix2d jti = sp.jac.transpose().inverse();
            for (int a = 0; a < nloc; ++a)
              for (int b = 0; b < nloc; ++b) {
                const Eigen::Vector2d ref(us[gu].deriv[0][a] * vs[gv].value[b],
                                          us[gu].value[a] * vs[gv].deriv[0][b]);
                grad[a + nloc * b] = jti * ref;
              }
            for (int a = 0; a < nloc * nloc; ++a)
              for (int b = a; b < nloc * nloc; ++b)
                local(a, b) += w * grad[a].dot(grad[b]);
          }
        }

        for (int a = 0; a < nloc * nloc; ++a) {
          const int ia = us[0].span - p + a % nloc;
          const int ja = vs[0].span - p + a / nloc;
          const int ga = ps.global[ps.idx(ia, ja)];
          for (int b = a; b < nloc * nloc; ++b) {
            const int ib = us[0].span - p + b % nloc;
            const int jb = vs[0].span - p + b / nloc;
            const int gb = ps.global[ps.idx(ib, jb)];
            emit(ga, gb, local(a, b));
            if (b != a) emit(gb, ga, local(a, b));
          }
        }
      }
    }
  }
}

struct SpaceBasisEval {
  const PatchSpace& ps;
  BasisSpan bu, bv;
  double value = 0.0;
  Eigen::Vector2d grad_ref = Eigen::Vector2d::Zero();

  SpaceBasisEval(const FieldSolution& sol, int patch, double u, double v, int span_u, int span_v)
      : ps(sol.space.patches.at(patch)) {
    bu = span_u < 0 ? eval_basis(ps.ku, u, 1) : eval_basis_at_span(ps.ku, span_u, u, 1);
    bv = span_v < 0 ? eval_basis(ps.kv, v, 1) : eval_basis_at_span(ps.kv, span_v, v, 1);
    const int p1 = ps.ku.degree, p2 = ps.kv.degree;
    for (int a = 0; a <= p1; ++a) {
      const int i = bu.span - p1 + a;
      for (int b = 0; b <= p2; ++b) {
        const int j = bv.span - p2 + b;
        const double c = sol.phi[ps.global[ps.idx(i, j)]];
        value += c * bu.value[a] * bv.value[b];
        grad_ref.x() += c * bu.deriv[0][a] * bv.value[b];
        grad_ref.y() += c * bu.value[a] * bv.deriv[0][b];
      }
    }
  }
};

}  // namespace

double BoundaryVoltages::of(BoundaryTag t) const {
  switch (t) {
    case BoundaryTag::gamma_d0: return d0;
    case BoundaryTag::gamma_d1: return d1;
    case BoundaryTag::gamma_d2: return d2;
    default: throw std::logic_error("tag carries no voltage");
  }
}

SplineSpace build_space(const MultiPatchModel& model, int degree, int continuity, int n_sub) {
  if (degree < 1 || continuity < 0 || continuity > degree - 1 || n_sub < 1)
    throw std::invalid_argument("need degree >= 1, 0 <= continuity <= degree-1, n_sub >= 1");
  const Diagnostics d = validate(model);
  if (!d.ok)
    throw std::invalid_argument("space on a non-conforming model: " +
                                (d.issues.empty() ? std::string("unknown") : d.issues.front()));

  SplineSpace sp;
  sp.geo = model;
  sp.degree = degree;
  sp.continuity = continuity;
  sp.n_sub = n_sub;

  std::vector<double> interior;
  for (int i = 1; i < n_sub; ++i)
    interior.insert(interior.end(), degree - continuity, double(i) / n_sub);
  const KnotVector kv = make_open_knots(degree, interior);

  std::vector<int> offset{0};
  for (std::size_t k = 0; k < model.patches.size(); ++k) {
    PatchSpace ps;
    ps.ku = kv;
    ps.kv = kv;
    ps.nu = ps.nv = kv.num_basis();
    sp.patches.push_back(std::move(ps));
    offset.push_back(offset.back() + sp.patches.back().nu * sp.patches.back().nv);
  }

  Dsu dsu(offset.back());
  for (const PatchInterface& f : model.interfaces) {
    const PatchSpace& pa = sp.patches[f.patch_a];
    const PatchSpace& pb = sp.patches[f.patch_b];
    const int n = side_count(pa, f.side_a);
    if (n != side_count(pb, f.side_b))
      throw std::invalid_argument("interface trace spaces differ in size");
    for (int m = 0; m < n; ++m) {
      int ia, ja, ib, jb;
      side_coeff(pa, f.side_a, m, ia, ja);
      side_coeff(pb, f.side_b, f.reversed ? n - 1 - m : m, ib, jb);
      dsu.unite(offset[f.patch_a] + pa.idx(ia, ja), offset[f.patch_b] + pb.idx(ib, jb));
    }
  }

  std::vector<int> root_to_global(offset.back(), -1);
  sp.n_total = 0;
  for (std::size_t k = 0; k < sp.patches.size(); ++k) {
    PatchSpace& ps = sp.patches[k];
    ps.global.resize(ps.nu * ps.nv);
    for (int j = 0; j < ps.nv; ++j)
      for (int i = 0; i < ps.nu; ++i) {
        const int r = dsu.find(offset[k] + ps.idx(i, j));
        if (root_to_global[r] < 0) root_to_global[r] = sp.n_total++;
        ps.global[ps.idx(i, j)] = root_to_global[r];
      }
  }

  // Dirichlet tags, weakest first so gamma_d1 > gamma_d2 > gamma_d0 at corners
  sp.coeff_tag.assign(sp.n_total, -1);
  const BoundaryTag order[3] = {BoundaryTag::gamma_d0, BoundaryTag::gamma_d2,
                                BoundaryTag::gamma_d1};
  const int tag_id[3] = {0, 2, 1};
  for (int t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < sp.patches.size(); ++k)
      for (int side = 0; side < 4; ++side) {
        if (model.patches[k].tag[side] != order[t]) continue;
        const PatchSpace& ps = sp.patches[k];
        for (int m = 0; m < side_count(ps, side); ++m) {
          int i, j;
          side_coeff(ps, side, m, i, j);
          sp.coeff_tag[ps.global[ps.idx(i, j)]] = tag_id[t];
        }
      }

  sp.free_index.assign(sp.n_total, -1);
  sp.n_free = 0;
  for (int g = 0; g < sp.n_total; ++g)
    if (sp.coeff_tag[g] < 0) sp.free_index[g] = sp.n_free++;
  return sp;
}

Eigen::SparseMatrix<double> assemble_unconstrained(const SplineSpace& space) {
  std::vector<Eigen::Triplet<double>> trip;
  assemble_entries(space, [&](int i, int j, double v) { trip.emplace_back(i, j, v); });
  Eigen::SparseMatrix<double> K(space.n_total, space.n_total);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

LinearSystem assemble(const SplineSpace& space, const BoundaryVoltages& volts) {
  LinearSystem sys;
  sys.phi_full = Eigen::VectorXd::Zero(space.n_total);
  for (int g = 0; g < space.n_total; ++g)
    if (space.coeff_tag[g] >= 0)
      sys.phi_full[g] = volts.of(space.coeff_tag[g] == 0   ? BoundaryTag::gamma_d0
                                 : space.coeff_tag[g] == 1 ? BoundaryTag::gamma_d1
                                                           : BoundaryTag::gamma_d2);

  sys.rho = Eigen::VectorXd::Zero(space.n_free);
  std::vector<Eigen::Triplet<double>> trip;
  assemble_entries(space, [&](int i, int j, double v) {
    const int fi = space.free_index[i];
    if (fi < 0) return;
    const int fj = space.free_index[j];
    if (fj >= 0)
      trip.emplace_back(fi, fj, v);
    else
      sys.rho[fi] += v * sys.phi_full[j];
  });
  sys.K.resize(space.n_free, space.n_free);
  sys.K.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

FieldSolution solve(const SplineSpace& space, const BoundaryVoltages& volts,
                    const SolveOptions& opts) {
  LinearSystem sys = assemble(space, volts);

  Eigen::VectorXd x(0);
  if (space.n_free == 0) {
    FieldSolution sol;
    sol.space = space;
    sol.phi = sys.phi_full;
    return sol;
  }
  if (opts.use_cg) {
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>>
        cg;
    cg.setTolerance(opts.cg_tol);
    cg.setMaxIterations(opts.cg_max_iter);
    cg.compute(sys.K);
    x = cg.solve(-sys.rho);
    if (cg.info() != Eigen::Success) throw std::runtime_error("iterative solve did not converge");
  } else {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sys.K);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("stiffness factorization failed (matrix not SPD?)");
    x = ldlt.solve(-sys.rho);
  }

  const double rn = sys.rho.norm();
  if (rn > 0.0 && (sys.K * x + sys.rho).norm() > 1e-10 * rn)
    throw std::runtime_error("linear solve residual exceeds tolerance");

  FieldSolution sol;
  sol.space = space;
  sol.phi = sys.phi_full;
  for (int g = 0; g < space.n_total; ++g)
    if (space.free_index[g] >= 0) sol.phi[g] = x[space.free_index[g]];
  return sol;
}

double eval_potential(const FieldSolution& sol, int patch, double u, double v) {
  return SpaceBasisEval(sol, patch, u, v, -1, -1).value;
}

Vec2 eval_field_at(const FieldSolution& sol, int patch, double u, double v, int span_u,
                   int span_v) {
  const SpaceBasisEval e(sol, patch, u, v, span_u, span_v);
  const SurfacePoint sp = eval_surface_jacobian(sol.space.geo.patches[patch].geo, u, v);
  const Eigen::Vector2d g = sp.jac.transpose().partialPivLu().solve(e.grad_ref);
  return Vec2(-g.x(), -g.y());
}

Vec2 eval_field(const FieldSolution& sol, int patch, double u, double v) {
  return eval_field_at(sol, patch, u, v, -1, -1);
}

MaxField max_field(const FieldSolution& sol, const std::vector<RoiRect>& region) {
  std::vector<RoiRect> rects = region;
  if (rects.empty())
    for (std::size_t k = 0; k < sol.space.patches.size(); ++k)
      rects.push_back({static_cast<int>(k), 0.0, 1.0, 0.0, 1.0});

  const QuadRule q = lobatto_rule(sol.space.degree + 2);
  MaxField best;
  for (const RoiRect& r : rects) {
    const PatchSpace& ps = sol.space.patches.at(r.patch);
    const auto bu = ps.ku.breakpoints();
    const auto bv = ps.kv.breakpoints();
    for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu) {
      const double ua = std::max(bu[eu], r.u0), ub = std::min(bu[eu + 1], r.u1);
      if (!(ub > ua)) continue;
      for (std::size_t ev = 0; ev + 1 < bv.size(); ++ev) {
        const double va = std::max(bv[ev], r.v0), vb = std::min(bv[ev + 1], r.v1);
        if (!(vb > va)) continue;
        for (double nu : q.node)
          for (double nv : q.node) {
            const double u = ua + (ub - ua) * nu;
            const double v = va + (vb - va) * nv;
            const double e = eval_field(sol, r.patch, u, v).norm();
            if (e > best.value) {
              best.value = e;
              best.patch = r.patch;
              best.u = u;
              best.v = v;
              best.x = eval_surface(sol.space.geo.patches[r.patch].geo, u, v);
            }
          }
      }
    }
  }
  return best;
}

double triple_point_term(const FieldSolution& sol) {
  if (sol.space.geo.tp_points.empty())
    throw std::invalid_argument("model carries no triple-point sample set");
  double sum = 0.0;
  for (const Vec2& x : sol.space.geo.tp_points) {
    const auto loc = locate(sol.space.geo, x);
    if (!loc) throw std::runtime_error("triple-point sample lies outside the model");
    sum += eval_field(sol, loc->patch, loc->u, loc->v).norm();
  }
  return sum;
}

std::vector<ProfileSample> boundary_profile(const FieldSolution& sol, const std::string& name,
                                            int n_samples) {
  if (n_samples < 2) throw std::invalid_argument("need at least two profile samples");
  std::vector<std::pair<int, int>> sides;
  bool is_tag = true;
  BoundaryTag tag = BoundaryTag::natural;
  try {
    tag = tag_from_string(name);
  } catch (const std::invalid_argument&) {
    is_tag = false;
  }
  if (is_tag) {
    for (std::size_t k = 0; k < sol.space.geo.patches.size(); ++k)
      for (int s = 0; s < 4; ++s)
        if (sol.space.geo.patches[k].tag[s] == tag) sides.emplace_back(static_cast<int>(k), s);
  } else {
    for (const PatchInterface& f : sol.space.geo.interfaces)
      if (f.name == name) sides.emplace_back(f.patch_a, f.side_a);
  }
  if (sides.empty()) throw std::invalid_argument("no boundary named " + name);

  std::vector<ProfileSample> out;
  double s_acc = 0.0;
  for (const auto& [patch, side] : sides) {
    Vec2 prev;
    for (int k = 0; k < n_samples; ++k) {
      const double t = double(k) / (n_samples - 1);
      double u, v;
      side_param(side, t, u, v);
      ProfileSample ps;
      ps.x = eval_surface(sol.space.geo.patches[patch].geo, u, v);
      if (k > 0) s_acc += (ps.x - prev).norm();
      prev = ps.x;
      ps.s = s_acc;
      ps.phi = eval_potential(sol, patch, u, v);
      ps.emag = eval_field(sol, patch, u, v).norm();
      out.push_back(ps);
    }
  }
  return out;
}

void export_fieldmap(const FieldSolution& sol, const FieldmapSpec& grid, const std::string& path) {
  if (grid.nz < 2 || grid.nr < 2 || !(grid.z1 > grid.z0) || !(grid.r1 > grid.r0))
    throw std::invalid_argument("malformed fieldmap grid");
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::max());
  Vec2 hi = Vec2::Constant(std::numeric_limits<double>::lowest());
  for (const Patch& p : sol.space.geo.patches)
    for (const Vec2& c : p.geo.ctrl) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  if (grid.z1 < lo.x() || grid.z0 > hi.x() || grid.r1 < lo.y() || grid.r0 > hi.y())
    throw std::invalid_argument("fieldmap grid outside the model bounding box");

  std::ofstream out(path);
  std::ofstream mask(path + ".mask");
  if (!out || !mask) throw std::runtime_error("cannot write fieldmap " + path);
  char line[160];
  std::snprintf(line, sizeof line, "# %d %d %.17g %.17g %.17g %.17g\n", grid.nz, grid.nr,
                grid.z0, grid.z1, grid.r0, grid.r1);
  out << line;
  for (int iz = 0; iz < grid.nz; ++iz) {
    const double z = grid.z0 + (grid.z1 - grid.z0) * iz / (grid.nz - 1);
    for (int ir = 0; ir < grid.nr; ++ir) {
      const double r = grid.r0 + (grid.r1 - grid.r0) * ir / (grid.nr - 1);
      Vec2 e = Vec2::Zero();
      bool inside = false;
      // vacuum only: the tracker must not see dielectric or metal-adjacent values
      if (const auto loc = locate(sol.space.geo, Vec2(z, r))) {
        if (sol.space.geo.patches[loc->patch].material == Material::vacuum) {
          e = eval_field(sol, loc->patch, loc->u, loc->v);
          inside = true;
        }
      }
      std::snprintf(line, sizeof line, "%.17g %.17g %.17g %.17g\n", z, r, e.x(), e.y());
      out << line;
      mask << (inside ? 1 : 0) << "\n";
    }
  }
}

double l2_error(const FieldSolution& sol, const std::function<double(const Vec2&)>& ref) {
  const QuadRule q = gauss_rule(sol.space.degree + 2);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < sol.space.patches.size(); ++k) {
    const PatchSpace& ps = sol.space.patches[k];
    const NurbsSurface& geo = sol.space.geo.patches[k].geo;
    const auto bu = ps.ku.breakpoints();
    const auto bv = ps.kv.breakpoints();
    for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu)
      for (std::size_t ev = 0; ev + 1 < bv.size(); ++ev) {
        const double hu = bu[eu + 1] - bu[eu], hv = bv[ev + 1] - bv[ev];
        for (std::size_t a = 0; a < q.node.size(); ++a)
          for (std::size_t b = 0; b < q.node.size(); ++b) {
            const double u = bu[eu] + hu * q.node[a];
            const double v = bv[ev] + hv * q.node[b];
            const SurfacePoint sp = eval_surface_jacobian(geo, u, v);
            const double w = q.weight[a] * q.weight[b] * hu * hv * sp.det * sp.x.y();
            const double fh = eval_potential(sol, static_cast<int>(k), u, v);
            const double fr = ref(sp.x);
            num += w * (fh - fr) * (fh - fr);
            den += w * fr * fr;
          }
      }
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace egun
