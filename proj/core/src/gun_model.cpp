#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "egun/geometry.hpp"

namespace egun {

namespace {

struct Piece {
  Vec2 a, b;        // segment endpoints, or arc start/end angles in a.x, b.x
  Vec2 center;      // arc center (radius in center-to-point distance)
  bool arc = false;
  double radius = 0.0;
  double length() const {
    if (!arc) return (b - a).norm();
    return radius * std::abs(b.x() - a.x());
  }
  Vec2 at(double t) const {
    if (!arc) return a + t * (b - a);
    const double ang = a.x() + t * (b.x() - a.x());
    return center + radius * Vec2(std::cos(ang), std::sin(ang));
  }
};

Piece seg(const Vec2& a, const Vec2& b) {
  Piece p;
  p.a = a;
  p.b = b;
  return p;
}

Piece arc(const Vec2& c, double r, double ang0, double ang1) {
  Piece p;
  p.arc = true;
  p.center = c;
  p.radius = r;
  p.a = Vec2(ang0, 0);
  p.b = Vec2(ang1, 0);
  return p;
}

NurbsCurve quadratic_through(const Vec2& a, const Vec2& mid, const Vec2& b) {
  NurbsCurve c;
  c.kv = make_open_knots(2);
  c.ctrl = {a, mid, b};
  c.weight = {1.0, 1.0, 1.0};
  return c;
}

// straight chamber segment expressed in the cap's knot space (linear
// precision of the Greville points keeps it exact)
NurbsCurve line_on_knots(const KnotVector& kv, const Vec2& a, const Vec2& b) {
  NurbsCurve c;
  c.kv = kv;
  for (double g : greville(kv)) c.ctrl.push_back(a + g * (b - a));
  c.weight.assign(c.ctrl.size(), 1.0);
  return c;
}

}  // namespace

std::vector<Vec2> flat_profile_samples(const GunConfig& cfg, int n) {
  const double z1 = cfg.insulator_z, z2 = cfg.cathode_z;
  const double rI = cfg.insulator_radius, rA = cfg.aperture_radius;
  const double rf = cfg.flat_radius;
  const double f = cfg.fillet_radius;
  const double g = std::min(cfg.fillet_radius, 0.003);  // front edge blend
  const double zd = z2 - 0.006;                         // front face plane
  const double pi = M_PI;

  if (!(rf - f > rA + g && zd - f > z1 + f && rf - f > rI))
    throw std::invalid_argument("flat profile dimensions do not leave room for the fillets");

  const std::vector<Piece> pieces = {
      seg(Vec2(z1, rI), Vec2(z1, rf - f)),
      arc(Vec2(z1 + f, rf - f), f, pi, pi / 2),
      seg(Vec2(z1 + f, rf), Vec2(zd - f, rf)),
      arc(Vec2(zd - f, rf - f), f, pi / 2, 0),
      seg(Vec2(zd, rf - f), Vec2(zd, rA + g)),
      arc(Vec2(zd + g, rA + g), g, pi, 1.5 * pi),
      seg(Vec2(zd + g, rA), Vec2(z2, rA)),
  };

  double total = 0.0;
  std::vector<double> cum{0.0};
  for (const Piece& p : pieces) cum.push_back(total += p.length());

  std::vector<Vec2> pts;
  pts.reserve(n);
  std::size_t piece = 0;
  for (int k = 0; k < n; ++k) {
    const double s = total * k / (n - 1);
    while (piece + 2 < cum.size() && s > cum[piece + 1]) ++piece;
    const double t = (s - cum[piece]) / (cum[piece + 1] - cum[piece]);
    pts.push_back(pieces[piece].at(std::clamp(t, 0.0, 1.0)));
  }
  pts.front() = Vec2(z1, rI);
  pts.back() = Vec2(z2, rA);
  return pts;
}

MultiPatchModel build_gun_model(const GunConfig& cfg, const std::optional<NurbsCurve>& cap_in) {
  const double z1 = cfg.insulator_z, z2 = cfg.cathode_z;
  const double z3 = z2 + cfg.gap, z4 = z3 + cfg.anode_thickness, z5 = cfg.chamber_length;
  const double rI = cfg.insulator_radius, rA = cfg.aperture_radius, R = cfg.chamber_radius;
  const double zl1 = z1 / 3.0;              // collar footprint on the chamber wall
  const double zl2 = z2 + 0.625 * cfg.gap;  // and its downstream end

  NurbsCurve cap;
  if (cap_in) {
    cap = *cap_in;
    if ((cap.ctrl.front() - Vec2(z1, rI)).norm() > 1e-9 ||
        (cap.ctrl.back() - Vec2(z2, rA)).norm() > 1e-9)
      throw std::invalid_argument("cap endpoints must match the triple point and the face edge");
  } else {
    const std::vector<Vec2> pts = flat_profile_samples(cfg);
    const KnotVector kv = make_open_knots(cfg.cap_degree, cfg.cap_internal_knots);
    cap = least_squares_fit(kv, chord_length_params(pts), pts, true, cfg.fit_smoothing).curve;
  }

  const NurbsCurve lat1 =
      quadratic_through(Vec2(z1, rI), Vec2(zl1, rI + (R - rI) / 6.0), Vec2(zl1, R));
  const NurbsCurve lat2 =
      quadratic_through(Vec2(z2, rA), Vec2(z2 + cfg.gap / 4.0, rA + (R - rA) / 2.8), Vec2(zl2, R));

  MultiPatchModel m;
  m.name = "gun";
  m.eps_ins_rel = cfg.eps_ins_rel;
  m.patches.resize(8);

  Patch& ins = m.patches[0];
  ins.geo = make_rect_patch(Vec2(0, 0), Vec2(z1, rI));
  ins.material = Material::insulator;
  ins.tag = {BoundaryTag::axis, BoundaryTag::gamma_d1, BoundaryTag::interface_,
             BoundaryTag::gamma_d0};

  Patch& back = m.patches[1];
  back.geo = coons_patch(make_line(Vec2(0, rI), Vec2(z1, rI)), make_line(Vec2(0, R), Vec2(zl1, R)),
                         make_line(Vec2(0, rI), Vec2(0, R), 2), lat1);
  back.tag = {BoundaryTag::interface_, BoundaryTag::interface_, BoundaryTag::gamma_d0,
              BoundaryTag::gamma_d0};

  Patch& collar = m.patches[2];
  collar.geo = coons_patch(cap, line_on_knots(cap.kv, Vec2(zl1, R), Vec2(zl2, R)), lat1, lat2);
  collar.tag = {BoundaryTag::gamma_d1, BoundaryTag::interface_, BoundaryTag::gamma_d0,
                BoundaryTag::interface_};

  Patch& gap_lo = m.patches[3];
  gap_lo.geo = make_rect_patch(Vec2(z2, 0), Vec2(z3, rA));
  gap_lo.tag = {BoundaryTag::axis, BoundaryTag::interface_, BoundaryTag::interface_,
                BoundaryTag::gamma_d1};

  Patch& gap_hi = m.patches[4];
  gap_hi.geo = coons_patch(make_line(Vec2(z2, rA), Vec2(z3, rA)), make_line(Vec2(zl2, R), Vec2(z3, R)),
                           lat2, make_line(Vec2(z3, rA), Vec2(z3, R), 2));
  gap_hi.tag = {BoundaryTag::interface_, BoundaryTag::gamma_d2, BoundaryTag::gamma_d0,
                BoundaryTag::interface_};

  Patch& bore = m.patches[5];
  bore.geo = make_rect_patch(Vec2(z3, 0), Vec2(z4, rA));
  bore.tag = {BoundaryTag::axis, BoundaryTag::interface_, BoundaryTag::gamma_d2,
              BoundaryTag::interface_};

  Patch& exit_lo = m.patches[6];
  exit_lo.geo = make_rect_patch(Vec2(z4, 0), Vec2(z5, rA));
  exit_lo.tag = {BoundaryTag::axis, BoundaryTag::gamma_d0, BoundaryTag::interface_,
                 BoundaryTag::interface_};

  Patch& exit_hi = m.patches[7];
  exit_hi.geo = make_rect_patch(Vec2(z4, rA), Vec2(z5, R));
  exit_hi.tag = {BoundaryTag::interface_, BoundaryTag::gamma_d0, BoundaryTag::gamma_d0,
                 BoundaryTag::gamma_d2};

  m.interfaces = {
      {1, 0, 0, 2, false, "insulator_surface"},
      {1, 1, 2, 3, false, "collar_back"},
      {2, 1, 4, 3, false, "collar_front"},
      {3, 2, 4, 0, false, "gap_ring"},
      {3, 1, 5, 3, false, "aperture_a"},
      {5, 1, 6, 3, false, "aperture_b"},
      {6, 2, 7, 0, false, "exit_ring"},
  };

  m.cap_patch = 2;
  for (int i = 1; i + 1 < static_cast<int>(cap.ctrl.size()); ++i) m.free_ctrl.push_back(i);
  m.bounds_z = cfg.design_bounds_z;
  m.bounds_rho = cfg.design_bounds_rho;

  LoopEntry axis_e, face_e, cap_e, contact_e;
  axis_e.curve = make_line(Vec2(z1, 0), Vec2(z2, 0));
  face_e.curve = make_line(Vec2(z2, 0), Vec2(z2, rA));
  cap_e.curve = cap;
  cap_e.reverse = true;
  cap_e.is_cap = true;
  contact_e.curve = make_line(Vec2(z1, rI), Vec2(z1, 0));
  m.electrode_loop = {axis_e, face_e, cap_e, contact_e};

  m.triple_point = Vec2(z1, rI);
  for (int k = 0; k < cfg.tp_count; ++k) {
    // vacuum wedge between the cap (leaving upward) and the insulator surface
    const double ang = (95.0 + 80.0 * k / (cfg.tp_count - 1)) * M_PI / 180.0;
    m.tp_points.push_back(m.triple_point +
                          cfg.tp_arc_radius * Vec2(std::cos(ang), std::sin(ang)));
  }

  RoiRect roi;
  roi.patch = 2;
  roi.u0 = cfg.roi_margin;
  roi.u1 = 1.0 - cfg.roi_margin;
  roi.v0 = 0.0;
  roi.v1 = cfg.roi_vmax;
  m.roi = {roi};
  return m;
}

nlohmann::json gun_config_to_json(const GunConfig& cfg) {
  nlohmann::json j;
  j["insulator_z"] = cfg.insulator_z;
  j["cathode_z"] = cfg.cathode_z;
  j["gap"] = cfg.gap;
  j["anode_thickness"] = cfg.anode_thickness;
  j["chamber_length"] = cfg.chamber_length;
  j["chamber_radius"] = cfg.chamber_radius;
  j["insulator_radius"] = cfg.insulator_radius;
  j["aperture_radius"] = cfg.aperture_radius;
  j["flat_radius"] = cfg.flat_radius;
  j["fillet_radius"] = cfg.fillet_radius;
  j["eps_ins_rel"] = cfg.eps_ins_rel;
  j["cap_degree"] = cfg.cap_degree;
  j["cap_internal_knots"] = cfg.cap_internal_knots;
  j["fit_smoothing"] = cfg.fit_smoothing;
  j["design_bounds_z"] = {cfg.design_bounds_z.x(), cfg.design_bounds_z.y()};
  j["design_bounds_rho"] = {cfg.design_bounds_rho.x(), cfg.design_bounds_rho.y()};
  j["tp_arc_radius"] = cfg.tp_arc_radius;
  j["tp_count"] = cfg.tp_count;
  j["roi_margin"] = cfg.roi_margin;
  j["roi_vmax"] = cfg.roi_vmax;
  return j;
}

GunConfig gun_config_from_json(const nlohmann::json& j) {
  GunConfig c;
  c.insulator_z = j.value("insulator_z", c.insulator_z);
  c.cathode_z = j.value("cathode_z", c.cathode_z);
  c.gap = j.value("gap", c.gap);
  c.anode_thickness = j.value("anode_thickness", c.anode_thickness);
  c.chamber_length = j.value("chamber_length", c.chamber_length);
  c.chamber_radius = j.value("chamber_radius", c.chamber_radius);
  c.insulator_radius = j.value("insulator_radius", c.insulator_radius);
  c.aperture_radius = j.value("aperture_radius", c.aperture_radius);
  c.flat_radius = j.value("flat_radius", c.flat_radius);
  c.fillet_radius = j.value("fillet_radius", c.fillet_radius);
  c.eps_ins_rel = j.value("eps_ins_rel", c.eps_ins_rel);
  c.cap_degree = j.value("cap_degree", c.cap_degree);
  c.cap_internal_knots = j.value("cap_internal_knots", c.cap_internal_knots);
  c.fit_smoothing = j.value("fit_smoothing", c.fit_smoothing);
  if (j.contains("design_bounds_z"))
    c.design_bounds_z = Vec2(j["design_bounds_z"].at(0).get<double>(),
                             j["design_bounds_z"].at(1).get<double>());
  if (j.contains("design_bounds_rho"))
    c.design_bounds_rho = Vec2(j["design_bounds_rho"].at(0).get<double>(),
                               j["design_bounds_rho"].at(1).get<double>());
  c.tp_arc_radius = j.value("tp_arc_radius", c.tp_arc_radius);
  c.tp_count = j.value("tp_count", c.tp_count);
  c.roi_margin = j.value("roi_margin", c.roi_margin);
  c.roi_vmax = j.value("roi_vmax", c.roi_vmax);
  return c;
}

}  // namespace egun
