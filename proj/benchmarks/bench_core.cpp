// Microbenchmarks for the hot paths: basis and surface evaluation, space
// construction, assembly, the sparse solve, field scans, the full objective
// evaluation, and the tracker inner loop. Run from the build tree:
//   ./benchmarks/egun_bench --benchmark_min_time=0.2s

#include <benchmark/benchmark.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <egun/geometry.hpp>
#include <egun/optimizer.hpp>
#include <egun/solver.hpp>
#include <egun/splines.hpp>
#include <egun/tracker.hpp>

namespace {

using namespace egun;

const BoundaryVoltages gun_volts{0.0, -300e3, 1e3};

const MultiPatchModel& gun_model() {
  static const MultiPatchModel model = build_gun_model(GunConfig{});
  return model;
}

// production discretization used by the acceptance runs
const FieldSolution& gun_solution() {
  static const FieldSolution sol = solve(build_space(gun_model(), 3, 2, 8), gun_volts);
  return sol;
}

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

const Fieldmap& gun_map() {
  static const Fieldmap fm = [] {
    const std::string path = tmp_path("egun_bench_map.txt");
    export_fieldmap(gun_solution(), FieldmapSpec{}, path);
    Fieldmap m = read_fieldmap(path);
    std::remove(path.c_str());
    std::remove((path + ".mask").c_str());
    return m;
  }();
  return fm;
}

// golden-ratio stride so repeated iterations do not hit the same span
double next01(double& u) {
  u += 0.6180339887498949;
  if (u >= 1.0) u -= 1.0;
  return u;
}

void bm_basis_eval(benchmark::State& state) {
  const KnotVector kv = make_open_knots(int(state.range(0)), {0.2, 0.4, 0.6, 0.8});
  double u = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(eval_basis(kv, next01(u), 1));
}
BENCHMARK(bm_basis_eval)->Arg(3)->Arg(7)->Arg(10);

void bm_curve_eval(benchmark::State& state) {
  const NurbsCurve cap = design_curve(gun_model());
  double u = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(eval_curve(cap, next01(u)));
}
BENCHMARK(bm_curve_eval);

void bm_surface_jacobian(benchmark::State& state) {
  const MultiPatchModel& m = gun_model();
  const NurbsSurface& s = m.patches[m.cap_patch].geo;
  double u = 0.0, v = 0.3;
  for (auto _ : state)
    benchmark::DoNotOptimize(eval_surface_jacobian(s, next01(u), next01(v)));
}
BENCHMARK(bm_surface_jacobian);

void bm_profile_fit(benchmark::State& state) {
  const GunConfig cfg;
  const std::vector<Vec2> pts = flat_profile_samples(cfg);
  const std::vector<double> params = chord_length_params(pts);
  const KnotVector kv = make_open_knots(cfg.cap_degree, cfg.cap_internal_knots);
  for (auto _ : state)
    benchmark::DoNotOptimize(least_squares_fit(kv, params, pts, true, cfg.fit_smoothing));
}
BENCHMARK(bm_profile_fit);

void bm_cap_refine(benchmark::State& state) {
  const NurbsCurve cap = design_curve(gun_model());
  const std::vector<double> mids{0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875};
  for (auto _ : state) benchmark::DoNotOptimize(insert_knots(cap, mids));
}
BENCHMARK(bm_cap_refine);

void bm_apply_design(benchmark::State& state) {
  MultiPatchModel m = gun_model();
  const Eigen::VectorXd x = get_design(m);
  for (auto _ : state) {
    apply_design(m, x);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(bm_apply_design);

void bm_electrode_volume(benchmark::State& state) {
  const MultiPatchModel& m = gun_model();
  for (auto _ : state) benchmark::DoNotOptimize(electrode_volume(m));
}
BENCHMARK(bm_electrode_volume);

void bm_build_space(benchmark::State& state) {
  const int n_sub = int(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_space(gun_model(), 3, 2, n_sub));
}
BENCHMARK(bm_build_space)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void bm_assemble(benchmark::State& state) {
  const SplineSpace space = build_space(gun_model(), 3, 2, int(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(assemble(space, gun_volts));
  state.counters["dof"] = double(space.n_free);
}
BENCHMARK(bm_assemble)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void bm_solve(benchmark::State& state) {
  const SplineSpace space = build_space(gun_model(), 3, 2, int(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(solve(space, gun_volts));
  state.counters["dof"] = double(space.n_free);
}
BENCHMARK(bm_solve)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void bm_max_field(benchmark::State& state) {
  const FieldSolution& sol = gun_solution();
  for (auto _ : state) benchmark::DoNotOptimize(max_field(sol, gun_model().roi));
}
BENCHMARK(bm_max_field)->Unit(benchmark::kMillisecond);

void bm_boundary_profile(benchmark::State& state) {
  const FieldSolution& sol = gun_solution();
  for (auto _ : state) benchmark::DoNotOptimize(boundary_profile(sol, "gamma_d1", 400));
}
BENCHMARK(bm_boundary_profile)->Unit(benchmark::kMillisecond);

// one optimizer inner-loop unit: apply design, volume check, solve, scan
void bm_objective_eval(benchmark::State& state) {
  const MultiPatchModel& m = gun_model();
  const Objective obj;
  const ConstraintSet cons;
  const Eigen::VectorXd x = get_design(m);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(m, x, obj, cons, gun_volts));
}
BENCHMARK(bm_objective_eval)->Unit(benchmark::kMillisecond);

void bm_fieldmap_export(benchmark::State& state) {
  const FieldSolution& sol = gun_solution();
  const std::string path = tmp_path("egun_bench_export.txt");
  for (auto _ : state) export_fieldmap(sol, FieldmapSpec{}, path);
  std::remove(path.c_str());
  std::remove((path + ".mask").c_str());
}
BENCHMARK(bm_fieldmap_export)->Unit(benchmark::kMillisecond);

void bm_field_probe(benchmark::State& state) {
  const Fieldmap& fm = gun_map();
  Vec3 x(0.0005, 0.0003, 0.0);
  double t = 0.0;
  for (auto _ : state) {
    x.z() = fm.z0 + 0.98 * next01(t) * (fm.z1 - fm.z0);
    benchmark::DoNotOptimize(field_at(fm, x));
  }
}
BENCHMARK(bm_field_probe);

void bm_track(benchmark::State& state) {
  const Fieldmap& fm = gun_map();
  TrackingConfig tc;
  tc.cathode_z = fm.z0;
  tc.exit_z = fm.z1;
  const std::vector<Macroparticle> bunch =
      sample_bunch(BunchSource{}, int(state.range(0)), 7, tc.cathode_z);
  for (auto _ : state) benchmark::DoNotOptimize(track(bunch, fm, tc));
}
BENCHMARK(bm_track)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_stochastic_rank(benchmark::State& state) {
  std::vector<EvalRecord> pop(std::size_t(state.range(0)));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (EvalRecord& r : pop) {
    r.f = u01(rng);
    r.pen = u01(rng) < 0.4 ? u01(rng) : 0.0;
  }
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(stochastic_rank(pop, 0.45, ++seed));
}
BENCHMARK(bm_stochastic_rank)->Arg(260);

}  // namespace

BENCHMARK_MAIN();
