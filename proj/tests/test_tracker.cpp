#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "egun/geometry.hpp"
#include "egun/solver.hpp"
#include "egun/tracker.hpp"

using namespace egun;

namespace {

Fieldmap uniform_map(double ez, double zlen = 0.08, double rmax = 0.01) {
  Fieldmap fm;
  fm.nz = 41;
  fm.nr = 9;
  fm.z0 = 0.0;
  fm.z1 = zlen;
  fm.r0 = 0.0;
  fm.r1 = rmax;
  fm.ez.assign(std::size_t(fm.nz) * fm.nr, ez);
  fm.er.assign(std::size_t(fm.nz) * fm.nr, 0.0);
  fm.valid.assign(std::size_t(fm.nz) * fm.nr, 1);
  return fm;
}

TrackingConfig gap_config(double dt = 0.244e-12) {
  TrackingConfig cfg;
  cfg.dt = dt;
  cfg.cathode_z = 0.0;
  cfg.exit_z = 0.08;
  cfg.n_planes = 16;
  return cfg;
}

double mean_exit_energy(const TrackResult& tr) {
  double sum = 0.0;
  int n = 0;
  for (const Macroparticle& mp : tr.final_state)
    if (mp.alive && mp.exited) {
      sum += kinetic_energy_ev(mp);
      ++n;
    }
  REQUIRE(n > 0);
  return sum / n;
}

// synthetic single-plane result for statistics closed forms
TrackResult plane_of(const std::vector<Macroparticle>& bunch) {
  TrackResult tr;
  PlaneSnapshot snap;
  snap.z = 0.0;
  snap.bunch = bunch;
  tr.planes.push_back(snap);
  return tr;
}

Macroparticle particle(double x, double y, double z, double px, double py, double pz) {
  Macroparticle mp;
  mp.x = Vec3(x, y, z);
  mp.p = Vec3(px, py, pz);
  return mp;
}

}  // namespace

TEST_SUITE("tracker") {

TEST_CASE("bunch sampling reproduces the source statistics") {
  BunchSource src;
  auto bunch = sample_bunch(src, 2048, 2, 0.14);
  REQUIRE(bunch.size() == 2048);

  double sx = 0, sy = 0, st = 0;
  for (const Macroparticle& mp : bunch) {
    CHECK(mp.x.z() == 0.14);
    CHECK(mp.p.norm() == 0.0);
    sx += mp.x.x() * mp.x.x();
    sy += mp.x.y() * mp.x.y();
    st += mp.t_emit * mp.t_emit;
  }
  CHECK(std::sqrt(sx / 2048) == doctest::Approx(0.41e-3).epsilon(0.05));
  CHECK(std::sqrt(sy / 2048) == doctest::Approx(0.72e-3).epsilon(0.05));
  CHECK(std::sqrt(st / 2048) == doctest::Approx(5e-12).epsilon(0.05));

  auto again = sample_bunch(src, 2048, 2, 0.14);
  for (std::size_t i = 0; i < bunch.size(); ++i) {
    CHECK(bunch[i].x == again[i].x);
    CHECK(bunch[i].t_emit == again[i].t_emit);
  }

  BunchSource bad;
  bad.rx_rms = -1.0;
  CHECK_THROWS_AS(sample_bunch(bad, 8, 1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_bunch(src, 0, 1, 0.0), std::invalid_argument);
}

TEST_CASE("bunch sampling can resample a measured spot") {
  BunchSource src;
  src.spot = {Vec2(1e-4, 0), Vec2(-1e-4, 0), Vec2(0, 2e-4), Vec2(0, -2e-4)};
  auto bunch = sample_bunch(src, 64, 5, 0.1);
  for (const Macroparticle& mp : bunch) {
    bool found = false;
    for (const Vec2& s : src.spot)
      if (mp.x.x() == s.x() && mp.x.y() == s.y()) found = true;
    CHECK(found);
  }
}

TEST_CASE("field interpolation is node-exact and axis-symmetric") {
  Fieldmap fm = uniform_map(0.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (double& v : fm.ez) v = 1e6 * unif(rng);
  for (double& v : fm.er) v = 1e5 * unif(rng);
  for (int ir = 0; ir < fm.nr; ++ir) fm.er[fm.idx(0, ir)] = 0.0;  // not on axis: iz row
  for (int iz = 0; iz < fm.nz; ++iz) fm.er[fm.idx(iz, 0)] = 0.0;  // axis row proper

  for (int iz : {0, 1, 17, 40})
    for (int ir : {0, 1, 5, 8}) {
      const double z = fm.z0 + iz * fm.dz();
      const double r = fm.r0 + ir * fm.dr();
      const auto e = field_at(fm, Vec3(r, 0.0, z));
      REQUIRE(e.has_value());
      CHECK(e->z() == doctest::Approx(fm.ez[fm.idx(iz, ir)]).epsilon(1e-12));
      CHECK(e->x() == doctest::Approx(fm.er[fm.idx(iz, ir)]).epsilon(1e-12));
    }

  // on the axis the transverse components vanish identically
  const auto axis = field_at(fm, Vec3(0.0, 0.0, 0.033));
  REQUIRE(axis.has_value());
  CHECK(axis->x() == 0.0);
  CHECK(axis->y() == 0.0);

  // azimuthal reconstruction respects the direction of the query point
  Fieldmap radial = uniform_map(0.0);
  for (double& v : radial.er) v = 2.0e5;
  const auto diag = field_at(radial, Vec3(3e-3, 4e-3, 0.04));
  REQUIRE(diag.has_value());
  CHECK(diag->x() == doctest::Approx(2.0e5 * 0.6).epsilon(1e-12));
  CHECK(diag->y() == doctest::Approx(2.0e5 * 0.8).epsilon(1e-12));

  CHECK_FALSE(field_at(radial, Vec3(0.02, 0.0, 0.04)).has_value());  // outside radially
  CHECK_FALSE(field_at(radial, Vec3(0.0, 0.0, -0.01)).has_value());  // before the grid
}

TEST_CASE("uniform map returns the constant everywhere") {
  Fieldmap fm = uniform_map(-3.75e6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uz(0.0, 0.08), ur(-0.007, 0.007);
  for (int k = 0; k < 50; ++k) {
    const auto e = field_at(fm, Vec3(ur(rng), ur(rng) * 0.5, uz(rng)));
    REQUIRE(e.has_value());
    CHECK(e->z() == doctest::Approx(-3.75e6).epsilon(1e-12));
    CHECK(std::abs(e->x()) <= 1e-9);
    CHECK(std::abs(e->y()) <= 1e-9);
  }
}

TEST_CASE("masked stencil marks the particle lost") {
  Fieldmap fm = uniform_map(-3.75e6);
  for (int iz = 20; iz < 24; ++iz)
    for (int ir = 0; ir < fm.nr; ++ir) fm.valid[fm.idx(iz, ir)] = 0;

  BunchSource src;
  src.sigma_t = 0.0;
  auto bunch = sample_bunch(src, 4, 1, 0.0);
  TrackResult tr = track(bunch, fm, gap_config());
  CHECK(tr.lost == 4);
  CHECK(tr.exited == 0);
  for (const Macroparticle& mp : tr.final_state) CHECK_FALSE(mp.alive);
}

TEST_CASE("uniform gap accelerates to the full voltage") {
  const double v = 300e3, d = 0.08;
  Fieldmap fm = uniform_map(-v / d, d);
  BunchSource src;
  src.sigma_t = 0.0;

  auto bunch = sample_bunch(src, 16, 42, 0.0);
  TrackResult tr = track(bunch, fm, gap_config());
  CHECK(tr.complete);
  CHECK(tr.lost == 0);
  CHECK(tr.exited == 16);

  const double ke = mean_exit_energy(tr);
  CHECK(ke == doctest::Approx(v).epsilon(1e-3));

  // integrator sanity: halving the step barely moves the answer
  const double ke_half = mean_exit_energy(track(bunch, fm, gap_config(0.122e-12)));
  CHECK(std::abs(ke_half - ke) / ke < 1e-4);

  // a bunch with zero momentum spread stays emittance-free
  BeamStats bs = beam_stats(tr);
  REQUIRE(bs.plane.size() == 16);
  for (const PlaneStats& ps : bs.plane) {
    CHECK(ps.eps_x == 0.0);
    CHECK(ps.eps_y == 0.0);
  }
  CHECK(bs.de_rms <= 1e-6);
}

TEST_CASE("zero field drifts ballistically") {
  Fieldmap fm = uniform_map(0.0);
  std::vector<Macroparticle> bunch;
  for (int k = 0; k < 4; ++k) bunch.push_back(particle(1e-4 * k, 0, 0, 1e-3 * k, 0, 1.0));

  TrackingConfig cfg = gap_config();
  TrackResult tr = track(bunch, fm, cfg);
  CHECK(tr.complete);
  CHECK(tr.exited == 4);
  for (std::size_t i = 0; i < bunch.size(); ++i) {
    const Macroparticle& out = tr.final_state[i];
    CHECK(out.p == bunch[i].p);  // untouched, bit for bit
    // straight line: transverse displacement proportional to distance flown
    const double slope = bunch[i].p.x() / bunch[i].p.z();
    CHECK(out.x.x() == doctest::Approx(bunch[i].x.x() + slope * out.x.z()).epsilon(1e-9));
  }
}

TEST_CASE("purely longitudinal field conserves transverse momentum") {
  Fieldmap fm = uniform_map(-3.75e6);
  std::vector<Macroparticle> bunch = {particle(2e-3, -1e-3, 0, 1e-3, -2e-3, 0.1),
                                      particle(-1e-3, 3e-3, 0, -5e-4, 1e-3, 0.05)};
  TrackResult tr = track(bunch, fm, gap_config());
  for (std::size_t i = 0; i < bunch.size(); ++i) {
    CHECK(tr.final_state[i].p.x() == bunch[i].p.x());
    CHECK(tr.final_state[i].p.y() == bunch[i].p.y());
  }
}

TEST_CASE("statistics closed forms") {
  const double a = 2e-3, b = 0.4;

  // perfectly correlated pair: zero phase-space area
  BeamStats corr = beam_stats(plane_of({particle(a, 0, 0, b, 0, 1), particle(-a, 0, 0, -b, 0, 1)}));
  CHECK(corr.plane[0].x_rms == doctest::Approx(a).epsilon(1e-12));
  CHECK(corr.plane[0].eps_x <= 1e-7 * a * b);  // determinant cancels up to roundoff

  // decorrelated four-particle pattern: area a*b exactly
  BeamStats quad = beam_stats(plane_of({particle(a, 0, 0, b, 0, 1), particle(a, 0, 0, -b, 0, 1),
                                        particle(-a, 0, 0, b, 0, 1),
                                        particle(-a, 0, 0, -b, 0, 1)}));
  CHECK(quad.plane[0].eps_x == doctest::Approx(a * b).epsilon(1e-12));
  CHECK(quad.plane[0].x_rms == doctest::Approx(a).epsilon(1e-12));

  // Cauchy-Schwarz keeps the determinant non-negative on random clouds
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss;
  std::vector<Macroparticle> cloud;
  for (int k = 0; k < 200; ++k)
    cloud.push_back(particle(1e-3 * gauss(rng), 1e-3 * gauss(rng), 1e-4 * gauss(rng),
                             0.1 * gauss(rng), 0.1 * gauss(rng), 1.0 + 0.01 * gauss(rng)));
  BeamStats rnd = beam_stats(plane_of(cloud));
  CHECK(rnd.plane[0].eps_x >= 0.0);
  CHECK(rnd.plane[0].eps_y >= 0.0);
  CHECK(rnd.plane[0].eps_z >= 0.0);

  // relabeling leaves every statistic unchanged
  std::vector<Macroparticle> shuffled = cloud;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  BeamStats rs = beam_stats(plane_of(shuffled));
  CHECK(rs.plane[0].x_rms == doctest::Approx(rnd.plane[0].x_rms).epsilon(1e-12));
  CHECK(rs.plane[0].eps_x == doctest::Approx(rnd.plane[0].eps_x).epsilon(1e-12));

  // quarter-turn about the axis swaps the transverse roles
  std::vector<Macroparticle> rotated;
  for (const Macroparticle& mp : cloud)
    rotated.push_back(particle(-mp.x.y(), mp.x.x(), mp.x.z(), -mp.p.y(), mp.p.x(), mp.p.z()));
  BeamStats rr = beam_stats(plane_of(rotated));
  CHECK(rr.plane[0].x_rms == doctest::Approx(rnd.plane[0].y_rms).epsilon(1e-12));
  CHECK(rr.plane[0].y_rms == doctest::Approx(rnd.plane[0].x_rms).epsilon(1e-12));
  CHECK(rr.plane[0].eps_x == doctest::Approx(rnd.plane[0].eps_y).epsilon(1e-12));

  // too few survivors is an error
  CHECK_THROWS_AS(beam_stats(plane_of({particle(0, 0, 0, 0, 0, 0)})), std::invalid_argument);
}

TEST_CASE("self convergence report") {
  BeamStats ref;
  for (int k = 0; k < 4; ++k) {
    PlaneStats ps;
    ps.z = 0.1 * (k + 1);
    ps.x_rms = 1e-3 + 1e-4 * k;
    ps.y_rms = 2e-3;
    ps.z_rms = 5e-4;
    ps.eps_x = 1e-7;
    ps.eps_y = 2e-7;
    ps.eps_z = 3e-5;
    ref.plane.push_back(ps);
  }

  CHECK(self_convergence(ref, ref).worst() == 0.0);

  BeamStats scaled = ref;
  for (PlaneStats& ps : scaled.plane) {
    ps.x_rms *= 1.05;
    ps.y_rms *= 1.05;
    ps.z_rms *= 1.05;
    ps.eps_x *= 1.05;
    ps.eps_y *= 1.05;
    ps.eps_z *= 1.05;
  }
  ConvergenceReport rep = self_convergence(scaled, ref);
  CHECK(rep.x_rms == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(rep.eps_z == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(rep.worst() == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(rep.excluded_planes == 0);

  // zero reference entries are skipped, not divided by
  BeamStats degenerate = ref;
  degenerate.plane[1].eps_x = 0.0;
  BeamStats other = degenerate;
  other.plane[2].x_rms *= 1.01;
  ConvergenceReport skip = self_convergence(other, degenerate);
  CHECK(skip.excluded_planes == 1);
  CHECK(skip.x_rms == doctest::Approx(0.01).epsilon(1e-9));

  BeamStats wrong;
  wrong.plane.resize(3);
  CHECK_THROWS_AS(self_convergence(wrong, ref), std::invalid_argument);
}

TEST_CASE("fieldmap reader rejects broken files") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path().string();

  CHECK_THROWS_AS(read_fieldmap(dir + "/does_not_exist.txt"), std::runtime_error);

  const std::string bad_header = dir + "/bad_header_map.txt";
  std::ofstream(bad_header) << "not a header\n1 2 3 4\n";
  CHECK_THROWS_AS(read_fieldmap(bad_header), std::runtime_error);

  const std::string truncated = dir + "/truncated_map.txt";
  std::ofstream(truncated) << "# 3 2 0 1 0 1\n0 0 1 0\n0 1 1 0\n";
  CHECK_THROWS_AS(read_fieldmap(truncated), std::runtime_error);
}

TEST_CASE("tracking through the solved gun field") {
  MultiPatchModel gun = build_gun_model(GunConfig{});
  SplineSpace space = build_space(gun, 3, 2, 8);
  BoundaryVoltages bv;
  bv.d1 = -300e3;
  bv.d2 = 1e3;
  FieldSolution sol = solve(space, bv);

  const std::string path =
      (std::filesystem::temp_directory_path() / "gun_track_map.txt").string();
  export_fieldmap(sol, FieldmapSpec{}, path);
  Fieldmap fm = read_fieldmap(path);
  CHECK(fm.nz == 256);
  CHECK(fm.nr == 48);

  BunchSource src;
  auto bunch = sample_bunch(src, 128, 2, 0.14);
  TrackingConfig cfg;
  TrackResult tr = track(bunch, fm, cfg);
  CHECK(tr.complete);
  CHECK(tr.lost == 0);
  CHECK(tr.exited > 100);

  // static field: every particle leaves with the full design energy
  CHECK(mean_exit_energy(tr) == doctest::Approx(300e3).epsilon(1e-3));

  BeamStats bs = beam_stats(tr);
  REQUIRE(bs.plane.size() == std::size_t(cfg.n_planes));
  const PlaneStats& exit_plane = bs.plane.back();
  CHECK(exit_plane.x_rms > 0.1e-3);
  CHECK(exit_plane.x_rms < 3e-3);
  CHECK(exit_plane.y_rms > exit_plane.x_rms);  // oval source stays oval
  CHECK(exit_plane.z_rms > 0.3e-3);
  CHECK(exit_plane.z_rms < 5e-3);
  CHECK(bs.de_rms < 10.0);  // static fields leave no energy spread to speak of

  // same seed, same run
  TrackResult tr2 = track(sample_bunch(src, 128, 2, 0.14), fm, cfg);
  BeamStats bs2 = beam_stats(tr2);
  CHECK(bs2.plane.back().x_rms == exit_plane.x_rms);
  CHECK(bs2.plane.back().eps_x == exit_plane.eps_x);
}

}  // TEST_SUITE
