#include "egun/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace egun {

namespace {

const char* side_name(int side) {
  static const char* names[4] = {"south", "east", "north", "west"};
  return names[side & 3];
}

void grow_bbox(const NurbsSurface& s, Vec2& lo, Vec2& hi) {
  for (const Vec2& p : s.ctrl) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
}

double model_scale(const MultiPatchModel& m) {
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::max());
  Vec2 hi = Vec2::Constant(std::numeric_limits<double>::lowest());
  for (const Patch& p : m.patches) grow_bbox(p.geo, lo, hi);
  if (m.patches.empty()) return 1.0;
  return std::max((hi - lo).norm(), 1e-30);
}

struct BadJacobian {
  double u, v, det;
};

// Scans every knot span on a closed per-span grid so degenerate corners are
// sampled exactly.
std::optional<BadJacobian> find_bad_jacobian(const NurbsSurface& s, int samples_per_span) {
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::max());
  Vec2 hi = Vec2::Constant(std::numeric_limits<double>::lowest());
  grow_bbox(s, lo, hi);
  const double floor_det = 1e-12 * (hi - lo).squaredNorm();

  const int ns = std::max(2, samples_per_span);
  const auto bu = s.ku.breakpoints();
  const auto bv = s.kv.breakpoints();
  for (std::size_t su = 0; su + 1 < bu.size(); ++su) {
    for (std::size_t sv = 0; sv + 1 < bv.size(); ++sv) {
      for (int i = 0; i < ns; ++i) {
        const double u = bu[su] + (bu[su + 1] - bu[su]) * i / (ns - 1);
        for (int j = 0; j < ns; ++j) {
          const double v = bv[sv] + (bv[sv + 1] - bv[sv]) * j / (ns - 1);
          const SurfacePoint sp = eval_surface_jacobian(s, u, v);
          if (!(sp.det > floor_det)) return BadJacobian{u, v, sp.det};
        }
      }
    }
  }
  return std::nullopt;
}

bool knots_match(const KnotVector& a, const KnotVector& b) {
  if (a.degree != b.degree || a.knots.size() != b.knots.size()) return false;
  for (std::size_t i = 0; i < a.knots.size(); ++i)
    if (std::abs(a.knots[i] - b.knots[i]) > 1e-12) return false;
  return true;
}

Vec2 loop_entry_begin(const LoopEntry& e) {
  return e.reverse ? e.curve.ctrl.back() : e.curve.ctrl.front();
}

Vec2 loop_entry_end(const LoopEntry& e) {
  return e.reverse ? e.curve.ctrl.front() : e.curve.ctrl.back();
}

std::string fmt_point(const Vec2& x) {
  std::ostringstream os;
  os << "(" << x.x() << ", " << x.y() << ")";
  return os.str();
}

}  // namespace

const char* to_string(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::interface_: return "interface";
    case BoundaryTag::gamma_d0: return "gamma_d0";
    case BoundaryTag::gamma_d1: return "gamma_d1";
    case BoundaryTag::gamma_d2: return "gamma_d2";
    case BoundaryTag::axis: return "axis";
    case BoundaryTag::natural: return "natural";
  }
  return "natural";
}

BoundaryTag tag_from_string(const std::string& s) {
  if (s == "interface") return BoundaryTag::interface_;
  if (s == "gamma_d0") return BoundaryTag::gamma_d0;
  if (s == "gamma_d1") return BoundaryTag::gamma_d1;
  if (s == "gamma_d2") return BoundaryTag::gamma_d2;
  if (s == "axis") return BoundaryTag::axis;
  if (s == "natural") return BoundaryTag::natural;
  throw std::invalid_argument("unknown boundary tag: " + s);
}

bool jacobians_positive(const NurbsSurface& s, int samples_per_span) {
  return !find_bad_jacobian(s, samples_per_span).has_value();
}

Diagnostics validate(const MultiPatchModel& model) {
  Diagnostics d;
  auto fail = [&](const std::string& msg) {
    d.ok = false;
    d.issues.push_back(msg);
  };

  if (model.patches.empty()) {
    fail("model has no patches");
    return d;
  }

  const double scale = model_scale(model);

  for (std::size_t k = 0; k < model.patches.size(); ++k) {
    const NurbsSurface& s = model.patches[k].geo;
    std::ostringstream tagk;
    tagk << "patch " << k << ": ";

    if (s.nu != s.ku.num_basis() || s.nv != s.kv.num_basis() ||
        static_cast<int>(s.ctrl.size()) != s.nu * s.nv || s.weight.size() != s.ctrl.size()) {
      fail(tagk.str() + "control net size does not match the knot vectors");
      continue;
    }
    try {
      validate_knots(s.ku);
      validate_knots(s.kv);
    } catch (const std::exception& e) {
      fail(tagk.str() + e.what());
      continue;
    }
    if (std::any_of(s.weight.begin(), s.weight.end(), [](double w) { return !(w > 0.0); })) {
      fail(tagk.str() + "nonpositive weight");
      continue;
    }

    if (auto bad = find_bad_jacobian(s, 6)) {
      std::ostringstream os;
      os << tagk.str() << "Jacobian " << bad->det << " at (u,v) = (" << bad->u << ", "
         << bad->v << ")";
      fail(os.str());
    }

    for (const Vec2& p : s.ctrl) {
      if (p.y() < -1e-12 * scale) {
        fail(tagk.str() + "control point below the axis, rho = " + std::to_string(p.y()));
        break;
      }
    }

    for (int side = 0; side < 4; ++side) {
      if (model.patches[k].tag[side] != BoundaryTag::axis) continue;
      const NurbsCurve edge = extract_side(s, side);
      for (const Vec2& p : edge.ctrl) {
        if (std::abs(p.y()) > 1e-12 * scale) {
          fail(tagk.str() + std::string(side_name(side)) + " side tagged axis but rho != 0");
          break;
        }
      }
    }
  }
  if (!d.ok) return d;  // geometric wrecks make the remaining checks noisy

  std::map<std::pair<int, int>, int> side_use;
  for (std::size_t i = 0; i < model.interfaces.size(); ++i) {
    const PatchInterface& f = model.interfaces[i];
    std::ostringstream tagi;
    tagi << "interface " << i << " (" << f.name << "): ";

    const int np = static_cast<int>(model.patches.size());
    if (f.patch_a < 0 || f.patch_a >= np || f.patch_b < 0 || f.patch_b >= np ||
        f.side_a < 0 || f.side_a > 3 || f.side_b < 0 || f.side_b > 3) {
      fail(tagi.str() + "patch/side index out of range");
      continue;
    }
    ++side_use[{f.patch_a, f.side_a}];
    ++side_use[{f.patch_b, f.side_b}];

    if (model.patches[f.patch_a].tag[f.side_a] != BoundaryTag::interface_ ||
        model.patches[f.patch_b].tag[f.side_b] != BoundaryTag::interface_)
      fail(tagi.str() + "listed sides are not tagged as interfaces");

    const NurbsCurve ca = extract_side(model.patches[f.patch_a].geo, f.side_a);
    NurbsCurve cb = extract_side(model.patches[f.patch_b].geo, f.side_b);
    if (f.reversed) cb = reverse_curve(cb);
    if (!knots_match(ca.kv, cb.kv)) {
      fail(tagi.str() + "sides live on different knot vectors");
      continue;
    }
    bool coincide = true;
    for (std::size_t m = 0; m < ca.ctrl.size(); ++m) {
      if ((ca.ctrl[m] - cb.ctrl[m]).norm() > 1e-12 * std::max(1.0, scale) ||
          std::abs(ca.weight[m] - cb.weight[m]) > 1e-12)
        coincide = false;
    }
    if (!coincide) fail(tagi.str() + "side control points do not coincide");
  }
  for (const auto& [key, count] : side_use) {
    if (count > 1) {
      std::ostringstream os;
      os << "patch " << key.first << " " << side_name(key.second)
         << " side appears in more than one interface";
      fail(os.str());
    }
  }
  for (std::size_t k = 0; k < model.patches.size(); ++k) {
    for (int side = 0; side < 4; ++side) {
      const bool tagged = model.patches[k].tag[side] == BoundaryTag::interface_;
      const bool listed = side_use.count({static_cast<int>(k), side}) > 0;
      if (tagged && !listed) {
        std::ostringstream os;
        os << "patch " << k << " " << side_name(side)
           << " side tagged interface but not listed";
        fail(os.str());
      }
    }
  }

  if (model.cap_patch >= 0) {
    if (model.cap_patch >= static_cast<int>(model.patches.size())) {
      fail("cap patch index out of range");
      return d;
    }
    const Patch& cap = model.patches[model.cap_patch];
    if (cap.tag[0] != BoundaryTag::gamma_d1)
      fail("designable cap side is not tagged gamma_d1");
    const int n = cap.geo.nu;
    std::vector<int> seen;
    for (int idx : model.free_ctrl) {
      if (idx < 1 || idx > n - 2) fail("free control index outside the movable range");
      if (std::count(seen.begin(), seen.end(), idx)) fail("duplicate free control index");
      seen.push_back(idx);
    }
    if (!(model.bounds_z.x() < model.bounds_z.y() && model.bounds_rho.x() < model.bounds_rho.y()))
      fail("empty design bounds box");
    const Eigen::VectorXd x = get_design(model);
    const Eigen::VectorXd xl = design_lower(model), xu = design_upper(model);
    for (int i = 0; i < x.size(); ++i)
      if (x[i] < xl[i] - 1e-12 || x[i] > xu[i] + 1e-12) {
        fail("current design violates its bounds");
        break;
      }
  }

  if (!model.electrode_loop.empty()) {
    std::vector<LoopEntry> loop = model.electrode_loop;
    bool resolvable = true;
    for (LoopEntry& e : loop) {
      if (!e.is_cap) continue;
      if (model.cap_patch < 0) {
        fail("electrode loop references a cap but the model has no cap patch");
        resolvable = false;
        break;
      }
      e.curve = design_curve(model);
    }
    if (resolvable) {
      for (std::size_t i = 0; i < loop.size(); ++i) {
        const Vec2 a = loop_entry_end(loop[i]);
        const Vec2 b = loop_entry_begin(loop[(i + 1) % loop.size()]);
        if ((a - b).norm() > 1e-9) {
          std::ostringstream os;
          os << "electrode loop gap after entry " << i << ": " << fmt_point(a) << " vs "
             << fmt_point(b);
          fail(os.str());
        }
      }
    }
  }

  for (const RoiRect& r : model.roi) {
    if (r.patch < 0 || r.patch >= static_cast<int>(model.patches.size()) ||
        !(r.u0 >= 0 && r.u0 < r.u1 && r.u1 <= 1) || !(r.v0 >= 0 && r.v0 < r.v1 && r.v1 <= 1))
      fail("malformed objective region rectangle");
  }

  if (d.ok) {
    for (const Vec2& x : model.tp_points) {
      if (!locate(model, x)) {
        fail("field sample point " + fmt_point(x) + " lies outside the model");
        break;
      }
    }
  }
  return d;
}

NurbsCurve design_curve(const MultiPatchModel& model) {
  if (model.cap_patch < 0 || model.cap_patch >= static_cast<int>(model.patches.size()))
    throw std::logic_error("model has no designable cap patch");
  return extract_side(model.patches[model.cap_patch].geo, 0);
}

int design_dim(const MultiPatchModel& model) {
  return 2 * static_cast<int>(model.free_ctrl.size());
}

Eigen::VectorXd get_design(const MultiPatchModel& model) {
  const NurbsCurve cap = design_curve(model);
  Eigen::VectorXd x(design_dim(model));
  for (std::size_t k = 0; k < model.free_ctrl.size(); ++k) {
    const Vec2& p = cap.ctrl[model.free_ctrl[k]];
    x[2 * k] = p.x();
    x[2 * k + 1] = p.y();
  }
  return x;
}

Eigen::VectorXd design_lower(const MultiPatchModel& model) {
  Eigen::VectorXd x(design_dim(model));
  for (std::size_t k = 0; k < model.free_ctrl.size(); ++k) {
    x[2 * k] = model.bounds_z.x();
    x[2 * k + 1] = model.bounds_rho.x();
  }
  return x;
}

Eigen::VectorXd design_upper(const MultiPatchModel& model) {
  Eigen::VectorXd x(design_dim(model));
  for (std::size_t k = 0; k < model.free_ctrl.size(); ++k) {
    x[2 * k] = model.bounds_z.y();
    x[2 * k + 1] = model.bounds_rho.y();
  }
  return x;
}

void apply_design(MultiPatchModel& model, const Eigen::VectorXd& v) {
  if (v.size() != design_dim(model))
    throw std::invalid_argument("design vector has the wrong size");
  const Eigen::VectorXd xl = design_lower(model), xu = design_upper(model);
  for (int i = 0; i < v.size(); ++i) {
    if (v[i] < xl[i] - 1e-12 || v[i] > xu[i] + 1e-12) {
      std::ostringstream os;
      os << "design component " << i << " = " << v[i] << " outside [" << xl[i] << ", "
         << xu[i] << "]";
      throw std::domain_error(os.str());
    }
  }

  NurbsCurve cap = design_curve(model);
  for (std::size_t k = 0; k < model.free_ctrl.size(); ++k)
    cap.ctrl[model.free_ctrl[k]] = Vec2(v[2 * k], v[2 * k + 1]);

  Patch& p = model.patches[model.cap_patch];
  const NurbsCurve north = extract_side(p.geo, 2);
  const NurbsCurve west = extract_side(p.geo, 3);
  const NurbsCurve east = extract_side(p.geo, 1);
  p.geo = coons_patch(cap, north, west, east);
}

void replace_design_curve(MultiPatchModel& model, const NurbsCurve& cap) {
  Patch& p = model.patches.at(model.cap_patch);
  const NurbsCurve old_cap = extract_side(p.geo, 0);
  if ((cap.ctrl.front() - old_cap.ctrl.front()).norm() > 1e-9 ||
      (cap.ctrl.back() - old_cap.ctrl.back()).norm() > 1e-9)
    throw std::invalid_argument("replacement cap must keep the cap endpoints");

  // The opposite side has to move to the same knot vector. That is only
  // shape-preserving when it is straight, which linear precision of the
  // Greville points then reproduces exactly.
  const NurbsCurve old_north = extract_side(p.geo, 2);
  const Vec2 a = old_north.ctrl.front(), b = old_north.ctrl.back();
  const Vec2 dir = b - a;
  for (const Vec2& q : old_north.ctrl) {
    const Vec2 r = q - a;
    if (std::abs(r.x() * dir.y() - r.y() * dir.x()) > 1e-9 * dir.norm())
      throw std::invalid_argument("cap replacement requires a straight opposite side");
  }
  NurbsCurve north;
  north.kv = cap.kv;
  for (double g : greville(cap.kv)) north.ctrl.push_back(a + g * dir);
  north.weight.assign(north.ctrl.size(), 1.0);

  p.geo = coons_patch(cap, north, extract_side(p.geo, 3), extract_side(p.geo, 1));
  model.free_ctrl.clear();
  for (int i = 1; i + 1 < static_cast<int>(cap.ctrl.size()); ++i) model.free_ctrl.push_back(i);
}

double volume_of_revolution(const std::vector<LoopEntry>& loop) {
  if (loop.empty()) throw std::invalid_argument("empty boundary loop");
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Vec2 a = loop_entry_end(loop[i]);
    const Vec2 b = loop_entry_begin(loop[(i + 1) % loop.size()]);
    if ((a - b).norm() > 1e-9)
      throw std::invalid_argument("boundary loop does not close: gap " + fmt_point(a) +
                                  " -> " + fmt_point(b));
  }

  double vol = 0.0;
  for (const LoopEntry& e : loop) {
    const int p = e.curve.kv.degree;
    // rho^2 z' has polynomial degree 3p-1; rational curves get a saturated rule
    const int npts = e.curve.rational() ? 30 : (3 * p) / 2 + 1;
    const QuadRule q = gauss_rule(npts);
    double contrib = 0.0;
    const auto brk = e.curve.kv.breakpoints();
    for (std::size_t s = 0; s + 1 < brk.size(); ++s) {
      const double h = brk[s + 1] - brk[s];
      for (std::size_t g = 0; g < q.node.size(); ++g) {
        Vec2 x, t;
        eval_curve_deriv(e.curve, brk[s] + h * q.node[g], x, t);
        contrib += q.weight[g] * h * x.y() * x.y() * t.x();
      }
    }
    vol += (e.reverse ? 1.0 : -1.0) * M_PI * contrib;
  }
  return vol;
}

double electrode_volume(const MultiPatchModel& model) {
  std::vector<LoopEntry> loop = model.electrode_loop;
  for (LoopEntry& e : loop)
    if (e.is_cap) e.curve = design_curve(model);
  return volume_of_revolution(loop);
}

std::optional<ParamPoint> locate(const MultiPatchModel& model, const Vec2& x, double tol) {
  const double scale = model_scale(model);
  const double margin = 1e-9 * scale;
  const double accept = std::max(tol, 1e-14 * scale);

  for (std::size_t k = 0; k < model.patches.size(); ++k) {
    const NurbsSurface& s = model.patches[k].geo;
    Vec2 lo = Vec2::Constant(std::numeric_limits<double>::max());
    Vec2 hi = Vec2::Constant(std::numeric_limits<double>::lowest());
    grow_bbox(s, lo, hi);
    if (x.x() < lo.x() - margin - tol || x.x() > hi.x() + margin + tol ||
        x.y() < lo.y() - margin - tol || x.y() > hi.y() + margin + tol)
      continue;

    for (double u0 : {0.1, 0.5, 0.9}) {
      for (double v0 : {0.1, 0.5, 0.9}) {
        double u = u0, v = v0;
        for (int it = 0; it < 60; ++it) {
          const SurfacePoint sp = eval_surface_jacobian(s, u, v);
          const Vec2 r = x - sp.x;
          if (r.norm() <= accept) return ParamPoint{static_cast<int>(k), u, v};
          if (std::abs(sp.det) < 1e-30) break;
          Vec2 d;
          d.x() = (r.x() * sp.jac(1, 1) - r.y() * sp.jac(0, 1)) / sp.det;
          d.y() = (r.y() * sp.jac(0, 0) - r.x() * sp.jac(1, 0)) / sp.det;
          const double cap = d.cwiseAbs().maxCoeff();
          if (cap > 0.5) d *= 0.5 / cap;
          u = std::clamp(u + d.x(), 0.0, 1.0);
          v = std::clamp(v + d.y(), 0.0, 1.0);
        }
      }
    }
  }
  return std::nullopt;
}

void side_param(int side, double t, double& u, double& v) {
  switch (side & 3) {
    case 0: u = t; v = 0.0; break;
    case 1: u = 1.0; v = t; break;
    case 2: u = t; v = 1.0; break;
    default: u = 0.0; v = t; break;
  }
}

nlohmann::json curve_to_json(const NurbsCurve& c) {
  nlohmann::json j;
  j["degree"] = c.kv.degree;
  j["knots"] = c.kv.knots;
  auto& ctrl = j["ctrl"] = nlohmann::json::array();
  for (const Vec2& p : c.ctrl) ctrl.push_back({p.x(), p.y()});
  j["weights"] = c.weight;
  return j;
}

NurbsCurve curve_from_json(const nlohmann::json& j) {
  NurbsCurve c;
  c.kv.degree = j.at("degree").get<int>();
  c.kv.knots = j.at("knots").get<std::vector<double>>();
  for (const auto& p : j.at("ctrl")) c.ctrl.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  c.weight = j.at("weights").get<std::vector<double>>();
  return c;
}

namespace {

nlohmann::json surface_to_json(const NurbsSurface& s) {
  nlohmann::json j;
  j["degree_u"] = s.ku.degree;
  j["degree_v"] = s.kv.degree;
  j["knots_u"] = s.ku.knots;
  j["knots_v"] = s.kv.knots;
  j["nu"] = s.nu;
  j["nv"] = s.nv;
  auto& ctrl = j["ctrl"] = nlohmann::json::array();
  for (const Vec2& p : s.ctrl) ctrl.push_back({p.x(), p.y()});
  j["weights"] = s.weight;
  return j;
}

NurbsSurface surface_from_json(const nlohmann::json& j) {
  NurbsSurface s;
  s.ku.degree = j.at("degree_u").get<int>();
  s.kv.degree = j.at("degree_v").get<int>();
  s.ku.knots = j.at("knots_u").get<std::vector<double>>();
  s.kv.knots = j.at("knots_v").get<std::vector<double>>();
  s.nu = j.at("nu").get<int>();
  s.nv = j.at("nv").get<int>();
  for (const auto& p : j.at("ctrl")) s.ctrl.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  s.weight = j.at("weights").get<std::vector<double>>();
  return s;
}

}  // namespace

nlohmann::json model_to_json(const MultiPatchModel& model) {
  nlohmann::json j;
  j["name"] = model.name;
  j["eps_ins_rel"] = model.eps_ins_rel;

  auto& patches = j["patches"] = nlohmann::json::array();
  for (const Patch& p : model.patches) {
    nlohmann::json jp;
    jp["surface"] = surface_to_json(p.geo);
    jp["material"] = p.material == Material::insulator ? "insulator" : "vacuum";
    jp["tags"] = {to_string(p.tag[0]), to_string(p.tag[1]), to_string(p.tag[2]),
                  to_string(p.tag[3])};
    patches.push_back(std::move(jp));
  }

  auto& ifs = j["interfaces"] = nlohmann::json::array();
  for (const PatchInterface& f : model.interfaces) {
    nlohmann::json jf;
    jf["a"] = {f.patch_a, f.side_a};
    jf["b"] = {f.patch_b, f.side_b};
    jf["reversed"] = f.reversed;
    jf["name"] = f.name;
    ifs.push_back(std::move(jf));
  }

  j["cap_patch"] = model.cap_patch;
  j["free_ctrl"] = model.free_ctrl;
  j["bounds_z"] = {model.bounds_z.x(), model.bounds_z.y()};
  j["bounds_rho"] = {model.bounds_rho.x(), model.bounds_rho.y()};

  auto& loop = j["electrode_loop"] = nlohmann::json::array();
  for (const LoopEntry& e : model.electrode_loop) {
    nlohmann::json je;
    je["curve"] = curve_to_json(e.curve);
    je["reverse"] = e.reverse;
    je["is_cap"] = e.is_cap;
    loop.push_back(std::move(je));
  }

  j["triple_point"] = {model.triple_point.x(), model.triple_point.y()};
  auto& tps = j["tp_points"] = nlohmann::json::array();
  for (const Vec2& p : model.tp_points) tps.push_back({p.x(), p.y()});

  auto& roi = j["roi"] = nlohmann::json::array();
  for (const RoiRect& r : model.roi) {
    nlohmann::json jr;
    jr["patch"] = r.patch;
    jr["u"] = {r.u0, r.u1};
    jr["v"] = {r.v0, r.v1};
    roi.push_back(std::move(jr));
  }
  return j;
}

MultiPatchModel model_from_json(const nlohmann::json& j) {
  MultiPatchModel m;
  m.name = j.at("name").get<std::string>();
  m.eps_ins_rel = j.at("eps_ins_rel").get<double>();

  for (const auto& jp : j.at("patches")) {
    Patch p;
    p.geo = surface_from_json(jp.at("surface"));
    p.material = jp.at("material").get<std::string>() == "insulator" ? Material::insulator
                                                                     : Material::vacuum;
    const auto& tags = jp.at("tags");
    for (int s = 0; s < 4; ++s) p.tag[s] = tag_from_string(tags.at(s).get<std::string>());
    m.patches.push_back(std::move(p));
  }

  for (const auto& jf : j.at("interfaces")) {
    PatchInterface f;
    f.patch_a = jf.at("a").at(0).get<int>();
    f.side_a = jf.at("a").at(1).get<int>();
    f.patch_b = jf.at("b").at(0).get<int>();
    f.side_b = jf.at("b").at(1).get<int>();
    f.reversed = jf.at("reversed").get<bool>();
    f.name = jf.at("name").get<std::string>();
    m.interfaces.push_back(std::move(f));
  }

  m.cap_patch = j.at("cap_patch").get<int>();
  m.free_ctrl = j.at("free_ctrl").get<std::vector<int>>();
  m.bounds_z = Vec2(j.at("bounds_z").at(0).get<double>(), j.at("bounds_z").at(1).get<double>());
  m.bounds_rho =
      Vec2(j.at("bounds_rho").at(0).get<double>(), j.at("bounds_rho").at(1).get<double>());

  for (const auto& je : j.at("electrode_loop")) {
    LoopEntry e;
    e.curve = curve_from_json(je.at("curve"));
    e.reverse = je.at("reverse").get<bool>();
    e.is_cap = je.at("is_cap").get<bool>();
    m.electrode_loop.push_back(std::move(e));
  }

  m.triple_point = Vec2(j.at("triple_point").at(0).get<double>(),
                        j.at("triple_point").at(1).get<double>());
  for (const auto& p : j.at("tp_points"))
    m.tp_points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());

  for (const auto& jr : j.at("roi")) {
    RoiRect r;
    r.patch = jr.at("patch").get<int>();
    r.u0 = jr.at("u").at(0).get<double>();
    r.u1 = jr.at("u").at(1).get<double>();
    r.v0 = jr.at("v").at(0).get<double>();
    r.v1 = jr.at("v").at(1).get<double>();
    m.roi.push_back(r);
  }
  return m;
}

void save_model(const MultiPatchModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_to_json(model).dump(2) << "\n";
}

MultiPatchModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return model_from_json(nlohmann::json::parse(in));
}

NurbsSurface make_rect_patch(const Vec2& lo, const Vec2& hi) {
  NurbsSurface s;
  s.ku = make_open_knots(1);
  s.kv = make_open_knots(1);
  s.nu = s.nv = 2;
  s.ctrl = {Vec2(lo.x(), lo.y()), Vec2(hi.x(), lo.y()), Vec2(lo.x(), hi.y()),
            Vec2(hi.x(), hi.y())};
  s.weight.assign(4, 1.0);
  return s;
}

MultiPatchModel make_plate_model(double gap, double r0, double r1) {
  MultiPatchModel m;
  m.name = "plate";
  Patch p;
  p.geo = make_rect_patch(Vec2(0, r0), Vec2(gap, r1));
  p.tag = {r0 == 0.0 ? BoundaryTag::axis : BoundaryTag::natural, BoundaryTag::gamma_d0,
           BoundaryTag::natural, BoundaryTag::gamma_d1};
  m.patches.push_back(std::move(p));
  return m;
}

MultiPatchModel make_spherical_capacitor_model(double a, double b) {
  MultiPatchModel m;
  m.name = "spherical_capacitor";
  const Vec2 c(0, 0);

  // meridian quadrant patches, u running away from the equator keeps the
  // Jacobian positive
  auto quadrant = [&](double th0, double th1) {
    const NurbsCurve inner = reverse_curve(make_arc(c, a, th0, th1));
    const NurbsCurve outer = reverse_curve(make_arc(c, b, th0, th1));
    NurbsSurface s;
    s.ku = inner.kv;
    s.kv = make_open_knots(1);
    s.nu = static_cast<int>(inner.ctrl.size());
    s.nv = 2;
    s.ctrl.resize(2 * s.nu);
    s.weight.resize(2 * s.nu);
    for (int i = 0; i < s.nu; ++i) {
      s.at(i, 0) = inner.ctrl[i];
      s.at(i, 1) = outer.ctrl[i];
      s.weight[s.idx(i, 0)] = inner.weight[i];
      s.weight[s.idx(i, 1)] = outer.weight[i];
    }
    return s;
  };

  Patch north;  // theta in [0, pi/2], u = 0 at the equator
  north.geo = quadrant(0, M_PI / 2);
  north.tag = {BoundaryTag::gamma_d1, BoundaryTag::axis, BoundaryTag::gamma_d0,
               BoundaryTag::interface_};
  Patch south;  // theta in [pi/2, pi], u = 1 at the equator
  south.geo = quadrant(M_PI / 2, M_PI);
  south.tag = {BoundaryTag::gamma_d1, BoundaryTag::interface_, BoundaryTag::gamma_d0,
               BoundaryTag::axis};
  m.patches.push_back(std::move(north));
  m.patches.push_back(std::move(south));
  m.interfaces.push_back({0, 3, 1, 1, false, "equator"});
  return m;
}

}  // namespace egun
