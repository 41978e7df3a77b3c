#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "egun/geometry.hpp"
#include "egun/solver.hpp"

using namespace egun;

namespace {

// concentric spheres, inner radius a held at va, outer grounded
struct SphereCase {
  double a = 0.05, b = 0.10, va = -300e3;
  MultiPatchModel model = make_spherical_capacitor_model(0.05, 0.10);
  BoundaryVoltages volts;
  SphereCase() { volts.d1 = va; }
  double phi(const Vec2& x) const {
    const double r = x.norm();
    return va * (1.0 / r - 1.0 / b) / (1.0 / a - 1.0 / b);
  }
  double field_at_inner() const { return std::abs(va) / (a * a * (1.0 / a - 1.0 / b)); }
};

std::vector<std::vector<double>> parse_fieldmap(const std::string& path, int& nz, int& nr) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  char hash;
  double z0, z1, r0, r1;
  std::istringstream hdr(line);
  REQUIRE((hdr >> hash >> nz >> nr >> z0 >> z1 >> r0 >> r1));
  std::vector<std::vector<double>> rows;
  double z, r, ez, er;
  while (in >> z >> r >> ez >> er) rows.push_back({z, r, ez, er});
  return rows;
}

}  // namespace

TEST_SUITE("solver") {

TEST_CASE("space dimensions for uniform refinement") {
  MultiPatchModel plate = make_plate_model(0.08, 0.02, 0.15);

  SplineSpace cubic = build_space(plate, 3, 2, 16);
  CHECK(cubic.patches[0].nu == 19);  // n_sub + p for maximal smoothness
  CHECK(cubic.patches[0].nv == 19);
  CHECK(cubic.n_total == 19 * 19);

  SplineSpace bilinear = build_space(plate, 1, 0, 1);
  CHECK(bilinear.patches[0].nu == 2);
  CHECK(bilinear.n_total == 4);

  // two patches joined along one side share a full row of coefficients
  SphereCase sc;
  SplineSpace pair = build_space(sc.model, 1, 0, 1);
  CHECK(pair.n_total == 6);
  CHECK(pair.n_free == 0);  // every coefficient sits on a voltage side

  // gun: 8 patches of (8+3)^2 minus 7 shared interface rows of 11
  SplineSpace gun = build_space(build_gun_model(GunConfig{}), 3, 2, 8);
  CHECK(gun.n_total == 8 * 121 - 7 * 11);
  CHECK(gun.n_free < gun.n_total);
}

TEST_CASE("space construction rejects bad input") {
  MultiPatchModel plate = make_plate_model(0.08, 0.02, 0.15);
  CHECK_THROWS_AS(build_space(plate, 3, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_space(plate, 2, -1, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_space(plate, 2, 1, 0), std::invalid_argument);

  MultiPatchModel broken = SphereCase{}.model;
  broken.interfaces.pop_back();
  CHECK_THROWS_AS(build_space(broken, 2, 1, 2), std::invalid_argument);
}

TEST_CASE("stiffness kernel, symmetry and energy positivity") {
  SphereCase sc;
  for (int p : {1, 2, 3}) {
    SplineSpace space = build_space(sc.model, p, p - 1, 4);
    Eigen::SparseMatrix<double> K = assemble_unconstrained(space);

    Eigen::VectorXd ones = Eigen::VectorXd::Ones(space.n_total);
    CHECK((K * ones).lpNorm<Eigen::Infinity>() <= 1e-10);

    Eigen::MatrixXd Kd(K);
    const double kmax = Kd.cwiseAbs().maxCoeff();
    CHECK((Kd - Kd.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * kmax);

    std::mt19937_64 rng(7u + p);
    std::normal_distribution<double> gauss;
    for (int probe = 0; probe < 5; ++probe) {
      Eigen::VectorXd x(space.n_total);
      for (int i = 0; i < space.n_total; ++i) x[i] = gauss(rng);
      CHECK(x.dot(Kd * x) >= -1e-12 * kmax * x.squaredNorm());
    }
  }
}

TEST_CASE("bilinear element matches hand-computed rho-weighted integrals") {
  // one element, z = u on [0,1], rho = 1+v on [1,2]: integrals of the form
  // int rho dz drho over products of bilinear gradients, times eps0
  MultiPatchModel m = make_plate_model(1.0, 1.0, 2.0);
  SplineSpace space = build_space(m, 1, 0, 1);
  Eigen::MatrixXd K = Eigen::MatrixXd(assemble_unconstrained(space)) / vacuum_permittivity;

  const double want[4][4] = {{11.0 / 12, -1.0 / 6, -1.0 / 4, -1.0 / 2},
                             {-1.0 / 6, 11.0 / 12, -1.0 / 2, -1.0 / 4},
                             {-1.0 / 4, -1.0 / 2, 13.0 / 12, -1.0 / 3},
                             {-1.0 / 2, -1.0 / 4, -1.0 / 3, 13.0 / 12}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(K(i, j) == doctest::Approx(want[i][j]).epsilon(1e-13));
}

TEST_CASE("parallel plate reproduces the linear ramp") {
  const double gap = 0.08;
  MultiPatchModel m = make_plate_model(gap, 0.01, 0.05);

  BoundaryVoltages low;
  low.d1 = -100.0;
  FieldSolution sol = solve(build_space(m, 2, 1, 4), low);
  for (double u : {0.0, 0.13, 0.5, 0.77, 1.0})
    for (double v : {0.0, 0.2, 0.9}) {
      const Vec2 x = eval_surface(m.patches[0].geo, u, v);
      const double ref = low.d1 * (1.0 - x.x() / gap);
      CHECK(std::abs(eval_potential(sol, 0, u, v) - ref) <= 1e-10);
    }

  BoundaryVoltages hv;
  hv.d1 = -300e3;
  FieldSolution hsol = solve(build_space(m, 2, 1, 4), hv);
  const double ez_want = hv.d1 / gap;  // powered plate at z=0, grounded at z=gap
  for (double u : {0.1, 0.5, 0.9})
    for (double v : {0.05, 0.5, 0.95}) {
      const Vec2 e = eval_field(hsol, 0, u, v);
      CHECK(e.x() == doctest::Approx(ez_want).epsilon(1e-8));
      CHECK(std::abs(e.y()) <= 1e-8 * std::abs(ez_want));
    }

  // same voltage everywhere: constant potential, vanishing field
  BoundaryVoltages flat;
  flat.d0 = flat.d1 = flat.d2 = 7.0;
  FieldSolution csol = solve(build_space(m, 2, 1, 4), flat);
  CHECK(eval_potential(csol, 0, 0.37, 0.81) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(eval_field(csol, 0, 0.37, 0.81).norm() <= 1e-6);
}

TEST_CASE("eliminated system satisfies the residual bound") {
  SphereCase sc;
  SplineSpace space = build_space(sc.model, 3, 2, 8);
  LinearSystem sys = assemble(space, sc.volts);
  FieldSolution sol = solve(space, sc.volts);

  Eigen::VectorXd xfree(space.n_free);
  for (int g = 0; g < space.n_total; ++g)
    if (space.free_index[g] >= 0) xfree[space.free_index[g]] = sol.phi[g];
  CHECK((sys.K * xfree + sys.rho).norm() <= 1e-10 * sys.rho.norm());

  // constrained entries of the composed solution carry the boundary data
  for (int g = 0; g < space.n_total; ++g)
    if (space.coeff_tag[g] == 1) CHECK(sol.phi[g] == sc.va);
}

TEST_CASE("spherical capacitor matches the closed-form potential") {
  SphereCase sc;
  FieldSolution sol = solve(build_space(sc.model, 3, 2, 16), sc.volts);

  CHECK(l2_error(sol, [&](const Vec2& x) { return sc.phi(x); }) < 1e-4);

  MaxField mf = max_field(sol, {});
  CHECK(mf.value == doctest::Approx(sc.field_at_inner()).epsilon(5e-3));
  CHECK(mf.value == doctest::Approx(12.0e6).epsilon(5e-3));
  CHECK(mf.x.norm() == doctest::Approx(sc.a).epsilon(1e-6));  // hugs the inner sphere

  // potential along the axis (a radial line) against the analytic profile
  for (const ProfileSample& ps : boundary_profile(sol, "axis", 41))
    CHECK(std::abs(ps.phi - sc.phi(ps.x)) <= 1e-3 * std::abs(sc.va));

  // interface continuity: the equator is one row of shared coefficients
  for (double t : {0.0, 0.21, 0.5, 0.83, 1.0}) {
    double ua, va, ub, vb;
    side_param(sc.model.interfaces[0].side_a, t, ua, va);
    side_param(sc.model.interfaces[0].side_b, t, ub, vb);
    const double fa = eval_potential(sol, sc.model.interfaces[0].patch_a, ua, va);
    const double fb = eval_potential(sol, sc.model.interfaces[0].patch_b, ub, vb);
    CHECK(std::abs(fa - fb) <= 1e-12 * std::abs(sc.va));
  }
}

TEST_CASE("conjugate gradient option agrees with the direct factorization") {
  SphereCase sc;
  SplineSpace space = build_space(sc.model, 2, 1, 8);
  FieldSolution direct = solve(space, sc.volts);
  SolveOptions opts;
  opts.use_cg = true;
  FieldSolution iterative = solve(space, sc.volts, opts);
  CHECK((direct.phi - iterative.phi).lpNorm<Eigen::Infinity>() <=
        1e-7 * std::abs(sc.va));
}

TEST_CASE("voltage scaling is linear in the reported quantities") {
  SphereCase sc;
  SplineSpace space = build_space(sc.model, 2, 1, 8);
  FieldSolution one = solve(space, sc.volts);
  BoundaryVoltages twice;
  twice.d1 = 2 * sc.volts.d1;
  FieldSolution two = solve(space, twice);
  CHECK(max_field(two, {}).value ==
        doctest::Approx(2 * max_field(one, {}).value).epsilon(1e-12));
}

TEST_CASE("triple point term sums field magnitudes at the samples") {
  const double gap = 0.08, v1 = -300e3;
  MultiPatchModel m = make_plate_model(gap, 0.01, 0.05);
  for (int k = 0; k < 8; ++k) m.tp_points.push_back(Vec2(0.01 + 0.008 * k, 0.03));

  SplineSpace space = build_space(m, 2, 1, 4);
  BoundaryVoltages bv;
  bv.d1 = v1;
  FieldSolution sol = solve(space, bv);
  const double term = triple_point_term(sol);
  CHECK(term == doctest::Approx(8.0 * std::abs(v1) / gap).epsilon(1e-8));

  BoundaryVoltages tripled;
  tripled.d1 = 3 * v1;
  CHECK(triple_point_term(solve(space, tripled)) ==
        doctest::Approx(3 * term).epsilon(1e-12));

  BoundaryVoltages flat;
  flat.d0 = flat.d1 = flat.d2 = 5.0;
  CHECK(triple_point_term(solve(space, flat)) <= 8e-6);

  MultiPatchModel bare = make_plate_model(gap, 0.01, 0.05);
  FieldSolution bare_sol = solve(build_space(bare, 1, 0, 1), bv);
  CHECK_THROWS_AS(triple_point_term(bare_sol), std::invalid_argument);
}

TEST_CASE("convergence rate on the sphere exceeds p plus one half") {
  SphereCase sc;
  for (int p : {2, 3}) {
    double prev = 0.0;
    for (int n : {2, 4, 8, 16}) {
      FieldSolution sol = solve(build_space(sc.model, p, p - 1, n), sc.volts);
      const double err = l2_error(sol, [&](const Vec2& x) { return sc.phi(x); });
      if (prev > 0.0) CHECK(std::log2(prev / err) >= p + 0.5);
      prev = err;
    }
  }
}

TEST_CASE("field components stay continuous across element boundaries") {
  SphereCase sc;
  FieldSolution sol = solve(build_space(sc.model, 3, 2, 8), sc.volts);
  const double emax = max_field(sol, {}).value;
  const KnotVector& ku = sol.space.patches[0].ku;

  double worst = 0.0;
  for (int k = 1; k < 8; ++k) {
    const double u = double(k) / 8;
    const int left = find_span_left(ku, u);
    const int right = find_span(ku, u);
    REQUIRE(left != right);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      worst = std::max(worst, (eval_field_at(sol, 0, u, t, left, -1) -
                               eval_field_at(sol, 0, u, t, right, -1))
                                  .lpNorm<Eigen::Infinity>());
      worst = std::max(worst, (eval_field_at(sol, 0, t, u, -1, left) -
                               eval_field_at(sol, 0, t, u, -1, right))
                                  .lpNorm<Eigen::Infinity>());
    }
  }
  CHECK(worst <= 1e-9 * emax);

  // tangential derivative along the crossing stays bounded on both sides
  const double u = 0.5, dt = 1e-6;
  for (int span : {find_span_left(ku, u), find_span(ku, u)}) {
    const Vec2 d = (eval_field_at(sol, 0, u, 0.5 + dt, span, -1) -
                    eval_field_at(sol, 0, u, 0.5 - dt, span, -1)) /
                   (2 * dt);
    CHECK(d.norm() <= 1e3 * emax);  // scaled by the patch size, nothing blows up
  }
}

TEST_CASE("potential respects the discrete maximum principle") {
  MultiPatchModel gun = build_gun_model(GunConfig{});
  SplineSpace space = build_space(gun, 2, 1, 4);
  BoundaryVoltages bv;
  bv.d1 = -300e3;
  bv.d2 = 1e3;
  FieldSolution sol = solve(space, bv);

  const double lo = std::min({bv.d0, bv.d1, bv.d2});
  const double hi = std::max({bv.d0, bv.d1, bv.d2});
  const double slack = 1e-8 * (hi - lo);
  const QuadRule q = gauss_rule(space.degree + 1);
  for (std::size_t k = 0; k < space.patches.size(); ++k) {
    const auto bu = space.patches[k].ku.breakpoints();
    for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu)
      for (std::size_t ev = 0; ev + 1 < bu.size(); ++ev)
        for (double qu : q.node)
          for (double qv : q.node) {
            const double phi =
                eval_potential(sol, static_cast<int>(k), bu[eu] + (bu[eu + 1] - bu[eu]) * qu,
                               bu[ev] + (bu[ev + 1] - bu[ev]) * qv);
            CHECK(phi >= lo - slack);
            CHECK(phi <= hi + slack);
          }
  }
}

TEST_CASE("gun model field solve behaves physically") {
  MultiPatchModel gun = build_gun_model(GunConfig{});
  SplineSpace space = build_space(gun, 3, 2, 8);
  BoundaryVoltages bv;
  bv.d1 = -300e3;
  bv.d2 = 1e3;
  FieldSolution sol = solve(space, bv);

  // the hot spot of the region of interest sits on the electrode surface
  MaxField mf = max_field(sol, gun.roi);
  CHECK(mf.patch == gun.cap_patch);
  CHECK(mf.v <= 0.05);
  CHECK(mf.value > 5e6);
  CHECK(mf.value < 2e7);

  CHECK(triple_point_term(sol) > 0.0);

  // axisymmetry: no radial field on the axis inside the gap
  const Vec2 e_axis = eval_field(sol, 3, 0.5, 0.0);
  CHECK(std::abs(e_axis.y()) <= 1e-4 * std::abs(e_axis.x()));
  CHECK(e_axis.x() < 0.0);  // pulls electrons toward the anode

  // cathode boundary is an equipotential at the applied voltage
  for (const ProfileSample& ps : boundary_profile(sol, "gamma_d1", 25))
    CHECK(ps.phi == doctest::Approx(bv.d1).epsilon(1e-12));
}

TEST_CASE("boundary profile orders samples by arclength") {
  const double gap = 0.08;
  MultiPatchModel m = make_plate_model(gap, 0.01, 0.05);
  BoundaryVoltages bv;
  bv.d1 = -200.0;
  FieldSolution sol = solve(build_space(m, 2, 1, 4), bv);

  // the grounded side runs along the plate at z = gap: constant potential
  auto prof = boundary_profile(sol, "gamma_d0", 17);
  REQUIRE(prof.size() == 17);
  for (std::size_t i = 1; i < prof.size(); ++i) CHECK(prof[i].s > prof[i - 1].s);
  CHECK(prof.back().s == doctest::Approx(0.04).epsilon(1e-9));
  for (const ProfileSample& ps : prof) CHECK(std::abs(ps.phi) <= 1e-10);

  CHECK_THROWS_AS(boundary_profile(sol, "no_such_boundary", 9), std::invalid_argument);
  CHECK_THROWS_AS(boundary_profile(sol, "gamma_d0", 1), std::invalid_argument);
}

TEST_CASE("fieldmap export writes the documented grid format") {
  const double gap = 0.08, v1 = -300e3;
  MultiPatchModel m = make_plate_model(gap, 0.01, 0.05);
  BoundaryVoltages bv;
  bv.d1 = v1;
  FieldSolution sol = solve(build_space(m, 2, 1, 6), bv);

  const std::string path = (std::filesystem::temp_directory_path() / "plate_map.txt").string();
  FieldmapSpec grid;
  grid.nz = 9;
  grid.nr = 5;
  grid.z0 = 0.01;
  grid.z1 = 0.07;
  grid.r0 = 0.015;
  grid.r1 = 0.045;
  export_fieldmap(sol, grid, path);

  int nz = 0, nr = 0;
  auto rows = parse_fieldmap(path, nz, nr);
  CHECK(nz == 9);
  CHECK(nr == 5);
  REQUIRE(rows.size() == std::size_t(9 * 5));

  // z-major ordering and the documented sign: powered plate at z=0 makes Ez
  // negative for a negative voltage
  CHECK(rows[0][0] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(rows[4][0] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(rows[5][0] > rows[4][0]);
  for (const auto& row : rows) {
    CHECK(row[2] == doctest::Approx(v1 / gap).epsilon(1e-8));
    CHECK(std::abs(row[3]) <= 1e-8 * std::abs(v1 / gap));
  }

  // every node of this grid lies in vacuum
  std::ifstream mask(path + ".mask");
  REQUIRE(mask.good());
  int flag = 0, count = 0, ones = 0;
  while (mask >> flag) {
    ++count;
    ones += flag;
  }
  CHECK(count == 9 * 5);
  CHECK(ones == count);

  // round trip: parsed doubles equal fresh evaluations bit for bit
  for (int iz = 0; iz < 9; ++iz)
    for (int ir = 0; ir < 5; ++ir) {
      const auto& row = rows[iz * 5 + ir];
      const auto loc = locate(m, Vec2(row[0], row[1]));
      REQUIRE(loc.has_value());
      const Vec2 e = eval_field(sol, loc->patch, loc->u, loc->v);
      CHECK(row[2] == e.x());
      CHECK(row[3] == e.y());
    }

  // doubled resolution keeps the values at the shared coarse nodes
  const std::string fine_path =
      (std::filesystem::temp_directory_path() / "plate_map_fine.txt").string();
  FieldmapSpec fine = grid;
  fine.nz = 17;
  fine.nr = 9;
  export_fieldmap(sol, fine, fine_path);
  int fnz = 0, fnr = 0;
  auto frows = parse_fieldmap(fine_path, fnz, fnr);
  for (int iz = 0; iz < 9; ++iz)
    for (int ir = 0; ir < 5; ++ir) {
      const auto& c = rows[iz * 5 + ir];
      const auto& f = frows[(2 * iz) * 9 + 2 * ir];
      CHECK(std::abs(f[2] - c[2]) <= 1e-10 * (1.0 + std::abs(c[2])));
      CHECK(std::abs(f[3] - c[3]) <= 1e-10 * (1.0 + std::abs(c[3])));
    }

  FieldmapSpec outside = grid;
  outside.z0 = 1.0;
  outside.z1 = 2.0;
  CHECK_THROWS_AS(export_fieldmap(sol, outside, path), std::invalid_argument);
  FieldmapSpec malformed = grid;
  malformed.nz = 1;
  CHECK_THROWS_AS(export_fieldmap(sol, malformed, path), std::invalid_argument);
}

TEST_CASE("fieldmap mask flags nodes buried in metal") {
  MultiPatchModel gun = build_gun_model(GunConfig{});
  SplineSpace space = build_space(gun, 2, 1, 4);
  BoundaryVoltages bv;
  bv.d1 = -300e3;
  bv.d2 = 1e3;
  FieldSolution sol = solve(space, bv);

  const std::string path = (std::filesystem::temp_directory_path() / "gun_map.txt").string();
  FieldmapSpec grid;
  grid.nz = 9;
  grid.nr = 5;
  grid.z0 = 0.205;
  grid.z1 = 0.245;  // 5 mm steps put nodes strictly inside the anode plate
  grid.r0 = 0.0;
  grid.r1 = 0.02;   // reaches past the bore wall into the metal
  export_fieldmap(sol, grid, path);

  int nz = 0, nr = 0;
  auto rows = parse_fieldmap(path, nz, nr);
  std::ifstream mask(path + ".mask");
  std::vector<int> flags;
  int f = 0;
  while (mask >> f) flags.push_back(f);
  REQUIRE(flags.size() == rows.size());

  int masked = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!flags[i]) {
      ++masked;
      CHECK(rows[i][2] == 0.0);
      CHECK(rows[i][3] == 0.0);
    }
  }
  CHECK(masked > 0);
  CHECK(masked < static_cast<int>(rows.size()));

  // on-axis node in the gap is vacuum; a node inside the anode ring is not
  auto flag_at = [&](double z, double r) {
    int iz = static_cast<int>(std::lround((z - grid.z0) / (grid.z1 - grid.z0) * (grid.nz - 1)));
    int ir = static_cast<int>(std::lround((r - grid.r0) / (grid.r1 - grid.r0) * (grid.nr - 1)));
    return flags[iz * grid.nr + ir];
  };
  CHECK(flag_at(0.21, 0.0) == 1);     // gap vacuum on the axis
  CHECK(flag_at(0.225, 0.0) == 1);    // inside the bore
  CHECK(flag_at(0.225, 0.015) == 0);  // buried in the anode
  CHECK(flag_at(0.24, 0.005) == 1);   // downstream of the aperture
}

}  // TEST_SUITE
