// Command-line driver: fit / solve / optimize / refine-study / track / report.
// One JSON config describes a run; flags override individual keys. Every
// output file is stamped with the config hash and seed so runs can be matched
// to their inputs later.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "egun/config.hpp"
#include "egun/geometry.hpp"
#include "egun/optimizer.hpp"
#include "egun/solver.hpp"
#include "egun/splines.hpp"
#include "egun/tracker.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egun;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;      // bad flags, bad config file, missing inputs
constexpr int exit_infeasible = 3;  // final design violates the volume cap
constexpr int exit_numerical = 4;   // solver / tracker / optimizer failure

// One writer per output directory. The lock is advisory: a crashed run leaves
// the file behind and the next run refuses to start until it is removed.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::invalid_argument("output directory '" + dir.string() +
                                  "' is locked by another run; remove '" + path_.string() +
                                  "' if that run is no longer alive");
    const std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd_, pid.data(), pid.size());
    (void)n;
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::ofstream open_csv(const fs::path& path, const std::string& hash, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "# config " << hash << " seed " << seed << '\n';
  out << std::setprecision(17);
  return out;
}

// Rows of two numbers, comma or whitespace separated; '#' starts a comment.
std::vector<Vec2> read_xy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::vector<Vec2> pts;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    for (char& c : line)
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    std::istringstream row(line);
    double a, b;
    if (row >> a >> b) pts.emplace_back(a, b);
  }
  if (pts.empty()) throw std::invalid_argument("no samples found in '" + path + "'");
  return pts;
}

MultiPatchModel build_model(const RunConfig& cfg, const std::string& cap_path) {
  std::optional<NurbsCurve> cap;
  if (!cap_path.empty()) {
    std::ifstream in(cap_path);
    if (!in) throw std::invalid_argument("cannot open cap curve '" + cap_path + "'");
    json j;
    in >> j;
    cap = curve_from_json(j);
  }
  if (!cfg.geometry_file.empty()) {
    if (cap) throw std::invalid_argument("--cap cannot be combined with a geometry file");
    return load_model(cfg.geometry_file);
  }
  return build_gun_model(cfg.gun, cap);
}

json vec2_json(const Vec2& x) { return json::array({x.x(), x.y()}); }

// Field magnitudes at the reporting points: peak over the objective region,
// global peak, cathode center, anode surface peak, triple-point samples, and
// the electrode volume of the model the solution was computed on.
json critical_fields(const FieldSolution& sol, const MultiPatchModel& model,
                     const RunConfig& cfg) {
  json j;
  const MaxField roi_peak = max_field(sol, model.roi);
  j["e_max"] = {{"value", roi_peak.value},
                {"patch", roi_peak.patch},
                {"u", roi_peak.u},
                {"v", roi_peak.v},
                {"x", vec2_json(roi_peak.x)}};
  const MaxField global_peak = max_field(sol, {});
  j["e_max_global"] = {{"value", global_peak.value},
                       {"patch", global_peak.patch},
                       {"x", vec2_json(global_peak.x)}};

  j["e_c"] = nullptr;
  try {
    const auto prof = boundary_profile(sol, "gamma_d1", 1024);
    const Vec2 target(cfg.gun.cathode_z, 0.0);
    double best = std::numeric_limits<double>::infinity();
    double emag = 0.0;
    for (const auto& s : prof) {
      const double d = (s.x - target).norm();
      if (d < best) {
        best = d;
        emag = s.emag;
      }
    }
    if (std::isfinite(best)) j["e_c"] = emag;
  } catch (const std::exception&) {
  }

  j["e_ar"] = nullptr;
  try {
    const auto prof = boundary_profile(sol, "gamma_d2", 1024);
    double peak = 0.0;
    for (const auto& s : prof) peak = std::max(peak, s.emag);
    if (!prof.empty()) j["e_ar"] = peak;
  } catch (const std::exception&) {
  }

  auto& tp = j["e_tp_samples"] = json::array();
  double tp_peak = 0.0;
  for (const Vec2& x : model.tp_points) {
    if (auto p = locate(model, x)) {
      const double emag = eval_field(sol, p->patch, p->u, p->v).norm();
      tp.push_back(emag);
      tp_peak = std::max(tp_peak, emag);
    } else {
      tp.push_back(nullptr);
    }
  }
  j["e_tp"] = model.tp_points.empty() ? json(nullptr) : json(tp_peak);
  j["tp_term"] = model.tp_points.empty() ? json(nullptr) : json(triple_point_term(sol));
  try {
    j["v_el"] = electrode_volume(model);
  } catch (const std::exception&) {
    j["v_el"] = nullptr;  // no closed electrode loop in this model
  }
  return j;
}

// ---------------------------------------------------------------------------
// Effective configuration: defaults <- config file <- flags.

struct Flags {
  std::string config_path;
  std::optional<std::string> out, geometry, mode, spot;
  std::optional<std::uint64_t> seed;
  std::optional<int> degree, continuity, n_sub, n_particles;
  std::optional<long> max_evals;
  std::optional<double> tp_weight, volume_cap, dt;
  bool skip_global = false;
};

void add_common_flags(CLI::App* cmd, Flags& fl) {
  cmd->fallthrough();
  cmd->add_option("-c,--config", fl.config_path, "run configuration (JSON)");
  cmd->add_option("-o,--out", fl.out, "output directory");
  cmd->add_option("--seed", fl.seed, "master seed (sampling and optimizer)");
  cmd->add_option("--geometry", fl.geometry, "prebuilt model JSON instead of the gun parameters");
  cmd->add_option("--degree", fl.degree, "spline degree of the field solve");
  cmd->add_option("--continuity", fl.continuity, "inter-element continuity of the field solve");
  cmd->add_option("--n-sub", fl.n_sub, "elements per patch direction");
  cmd->add_option("--mode", fl.mode, "objective: max_field or triple_point_weighted");
  cmd->add_option("--tp-weight", fl.tp_weight, "triple-point term weight");
  cmd->add_option("--volume-cap", fl.volume_cap, "electrode volume cap [m^3]");
  cmd->add_option("--max-evals", fl.max_evals, "optimizer budget per stage");
  cmd->add_flag("--skip-global", fl.skip_global, "run the local stage only");
  cmd->add_option("--n-particles", fl.n_particles, "bunch size for tracking");
  cmd->add_option("--dt", fl.dt, "tracking time step [s]");
  cmd->add_option("--spot", fl.spot, "measured cathode spot samples (x,y CSV)");
}

RunConfig make_config(const Flags& fl) {
  RunConfig cfg;
  if (!fl.config_path.empty()) cfg = load_run_config(fl.config_path);
  if (fl.out) cfg.out_dir = *fl.out;
  if (fl.geometry) cfg.geometry_file = *fl.geometry;
  if (fl.seed) cfg.seed = *fl.seed;
  if (fl.degree) cfg.degree = *fl.degree;
  if (fl.continuity) cfg.continuity = *fl.continuity;
  if (fl.n_sub) cfg.n_sub = *fl.n_sub;
  if (fl.mode) cfg.mode = objective_mode_from_string(*fl.mode);
  if (fl.tp_weight) cfg.tp_weight = *fl.tp_weight;
  if (fl.volume_cap) cfg.volume_cap = *fl.volume_cap;
  if (fl.max_evals) cfg.opt.max_evals = *fl.max_evals;
  if (fl.skip_global) cfg.opt.skip_global = true;
  if (fl.n_particles) cfg.n_particles = *fl.n_particles;
  if (fl.dt) cfg.tracking.dt = *fl.dt;
  if (fl.spot) cfg.spot_file = *fl.spot;

  if (cfg.degree < 1) throw std::invalid_argument("degree must be at least 1");
  if (cfg.continuity < 0 || cfg.continuity >= cfg.degree)
    throw std::invalid_argument("continuity must lie in [0, degree-1]");
  if (cfg.n_sub < 1) throw std::invalid_argument("n_sub must be at least 1");
  if (cfg.n_particles < 1) throw std::invalid_argument("n_particles must be at least 1");
  if (cfg.tracking.dt <= 0) throw std::invalid_argument("tracking dt must be positive");

  cfg.opt.seed = cfg.seed;
  cfg.tracking.cathode_z = cfg.gun.cathode_z;
  cfg.tracking.exit_z = cfg.gun.chamber_length;
  return cfg;
}

// Drop a copy of the effective configuration next to the outputs.
void echo_config(const RunConfig& cfg, const std::string& hash) {
  json j = config_to_json(cfg);
  j["hash"] = hash;
  write_json_file(fs::path(cfg.out_dir) / "config_used.json", j);
}

// ---------------------------------------------------------------------------
// fit: least-squares cap fit of a measured or generated profile.

struct FitOpts {
  std::string samples;
  int n_samples = 240;
  std::optional<int> cap_degree;
  std::optional<std::vector<double>> knots;
  std::optional<double> smoothing;
  std::string params = "chord";  // or "uniform": exact for equispaced in-space samples
};

int cmd_fit(const RunConfig& cfg, const FitOpts& fo) {
  DirLock lock(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  echo_config(cfg, hash);

  std::vector<Vec2> pts = fo.samples.empty() ? flat_profile_samples(cfg.gun, fo.n_samples)
                                             : read_xy_csv(fo.samples);
  const int degree = fo.cap_degree.value_or(cfg.gun.cap_degree);
  std::vector<double> internal = fo.knots.value_or(cfg.gun.cap_internal_knots);
  const double smoothing = fo.smoothing.value_or(cfg.gun.fit_smoothing);

  KnotVector kv;
  kv.degree = degree;
  kv.knots.assign(degree + 1, 0.0);
  std::sort(internal.begin(), internal.end());
  kv.knots.insert(kv.knots.end(), internal.begin(), internal.end());
  kv.knots.insert(kv.knots.end(), degree + 1, 1.0);

  std::vector<double> params;
  if (fo.params == "chord") {
    params = chord_length_params(pts);
  } else if (fo.params == "uniform") {
    params.resize(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k)
      params[k] = double(k) / double(pts.size() - 1);
  } else {
    throw std::invalid_argument("--params must be chord or uniform");
  }
  const FitResult fit = least_squares_fit(kv, params, pts, /*fix_endpoints=*/true, smoothing);

  json curve = curve_to_json(fit.curve);
  curve["config"] = hash;
  curve["seed"] = cfg.seed;
  write_json_file(fs::path(cfg.out_dir) / "cap_curve.json", curve);

  json rep;
  rep["config"] = hash;
  rep["seed"] = cfg.seed;
  rep["n_samples"] = pts.size();
  rep["degree"] = degree;
  rep["n_ctrl"] = fit.curve.ctrl.size();
  rep["smoothing"] = smoothing;
  rep["rms_residual"] = fit.rms_residual;
  rep["max_residual"] = fit.max_residual;
  write_json_file(fs::path(cfg.out_dir) / "fit.json", rep);

  std::cout << "fit: " << pts.size() << " samples -> " << fit.curve.ctrl.size()
            << " control points, rms residual " << fit.rms_residual << " m\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// solve: one field solve with profiles, critical points, and the fieldmap.

int cmd_solve(const RunConfig& cfg, const std::string& cap_path, bool no_fieldmap) {
  DirLock lock(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  echo_config(cfg, hash);
  const fs::path out(cfg.out_dir);

  const MultiPatchModel model = build_model(cfg, cap_path);
  const auto t0 = std::chrono::steady_clock::now();
  const SplineSpace space = build_space(model, cfg.degree, cfg.continuity, cfg.n_sub);
  const FieldSolution sol = solve(space, cfg.voltages);
  const double wall = seconds_since(t0);

  json rep = critical_fields(sol, model, cfg);
  rep["config"] = hash;
  rep["seed"] = cfg.seed;
  rep["dofs"] = {{"total", space.n_total}, {"free", space.n_free}};
  rep["voltages"] = {{"d0", cfg.voltages.d0}, {"d1", cfg.voltages.d1}, {"d2", cfg.voltages.d2}};
  rep["wall_s"] = wall;
  write_json_file(out / "solve.json", rep);

  for (const char* tag : {"gamma_d0", "gamma_d1", "gamma_d2"}) {
    try {
      const auto prof = boundary_profile(sol, tag, 400);
      if (prof.empty()) continue;
      auto csv = open_csv(out / (std::string("profile_") + tag + ".csv"), hash, cfg.seed);
      csv << "s,phi,Emag\n";
      for (const auto& s : prof) csv << s.s << ',' << s.phi << ',' << s.emag << '\n';
    } catch (const std::exception&) {
      // tag absent from this model
    }
  }

  if (!no_fieldmap) export_fieldmap(sol, cfg.fieldmap, (out / "fieldmap.txt").string());

  std::cout << "solve: " << space.n_total << " dofs (" << space.n_free << " free), peak |E| "
            << rep["e_max"]["value"].get<double>() / 1e6 << " MV/m in the objective region, "
            << wall << " s\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// optimize: two-stage shape optimization with checkpoint/resume.

int cmd_optimize(const RunConfig& cfg, bool restart, bool no_checkpoint) {
  DirLock lock(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  echo_config(cfg, hash);
  const fs::path out(cfg.out_dir);
  const fs::path ckpt = out / "checkpoint.json";
  const fs::path trace_path = out / "trace.jsonl";

  if (restart) {
    fs::remove(ckpt);
    fs::remove(trace_path);
  }

  MultiPatchModel model = build_model(cfg, "");
  Objective obj;
  obj.mode = cfg.mode;
  obj.weight = cfg.tp_weight;
  obj.degree = cfg.degree;
  obj.continuity = cfg.continuity;
  obj.n_sub = cfg.n_sub;
  const ConstraintSet cons{cfg.volume_cap};
  Problem prob = gun_problem(model, obj, cons, cfg.voltages);

  OptimizerConfig oc = cfg.opt;
  if (!no_checkpoint) oc.checkpoint = ckpt.string();

  // Resuming appends to the trace; evaluations the interrupted run already
  // logged (they re-run identically from the checkpoint) are skipped by index.
  const bool resuming = !no_checkpoint && fs::exists(ckpt);
  long max_seen = -1;
  if (resuming && fs::exists(trace_path)) {
    std::ifstream in(trace_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.contains("i")) max_seen = std::max(max_seen, j["i"].get<long>());
    }
  }
  TraceWriter trace(trace_path.string(), cfg.seed, resuming);
  TraceSink sink = [&](const EvalRecord& r) {
    if (r.index > max_seen) trace(r);
  };

  const Eigen::VectorXd start = get_design(model);
  const EvalRecord initial = evaluate(model, start, obj, cons, cfg.voltages);

  const auto t0 = std::chrono::steady_clock::now();
  const TwoStageResult res = two_stage_optimize(prob, start, oc, sink);
  const double wall = seconds_since(t0);

  // Final design: re-solve at the run discretization for the report block,
  // export the optimized fieldmap, and cross-check on a finer mesh.
  MultiPatchModel final_model = model;
  apply_design(final_model, res.best.design);
  save_model(final_model, (out / "model_final.json").string());

  const SplineSpace space = build_space(final_model, cfg.degree, cfg.continuity, cfg.n_sub);
  const FieldSolution sol = solve(space, cfg.voltages);
  json fin = critical_fields(sol, final_model, cfg);
  export_fieldmap(sol, cfg.fieldmap, (out / "fieldmap_final.txt").string());

  Objective obj_fine = obj;
  obj_fine.n_sub = 16;
  const EvalRecord fine = evaluate(model, res.best.design, obj_fine, cons, cfg.voltages);
  const double rel_fine = std::abs(fine.f - res.best.f) / std::max(std::abs(res.best.f), 1e-300);

  auto record_json = [](const EvalRecord& r) {
    json j;
    j["f"] = std::isfinite(r.f) ? json(r.f) : json(nullptr);
    j["g"] = r.g;
    j["pen"] = r.pen;
    j["design"] = std::vector<double>(r.design.data(), r.design.data() + r.design.size());
    j["index"] = r.index;
    return j;
  };

  json rep;
  rep["config"] = hash;
  rep["seed"] = cfg.seed;
  rep["mode"] = to_string(cfg.mode);
  rep["tp_weight"] = cfg.tp_weight;
  rep["volume_cap"] = cfg.volume_cap;
  rep["initial"] = record_json(initial);
  rep["initial"]["v_el"] = electrode_volume(model);
  rep["best"] = record_json(res.best);
  rep["global_best"] = res.global_best.index >= 0 ? record_json(res.global_best) : json(nullptr);
  rep["n_evals"] = res.n_evals;
  rep["converged"] = res.converged;
  rep["resumed"] = resuming;
  rep["wall_s"] = wall;
  rep["fine_check"] = {{"n_sub", 16}, {"f", fine.f}, {"rel_diff", rel_fine}};
  rep["final"] = fin;
  rep["feasible"] = is_feasible(res.best);
  write_json_file(out / "optimize.json", rep);

  std::cout << "optimize: " << res.n_evals << " evaluations, f " << initial.f << " -> "
            << res.best.f << " (" << (1.0 - res.best.f / initial.f) * 100.0 << "% down), "
            << "V_el " << fin["v_el"].get<double>() * 1e6 << " cm^3, " << wall << " s\n";

  if (!is_feasible(res.best)) {
    std::cerr << "final design exceeds the volume cap by " << res.best.g.at(0) * 1e6
              << " cm^3\n";
    return exit_infeasible;
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------
// refine-study: degree sweep x nested knot refinement, local polish each.

int cmd_refine_study(const RunConfig& cfg, std::vector<int> degrees, int levels) {
  DirLock lock(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  echo_config(cfg, hash);
  if (degrees.empty()) degrees = {7, 8, 9, 10};
  if (levels < 1) throw std::invalid_argument("levels must be at least 1");

  const ConstraintSet cons{cfg.volume_cap};
  Objective obj;
  obj.mode = cfg.mode;
  obj.weight = cfg.tp_weight;
  obj.degree = cfg.degree;
  obj.continuity = cfg.continuity;
  obj.n_sub = cfg.n_sub;
  Objective pure = obj;
  pure.mode = ObjectiveMode::max_field;
  pure.weight = 0.0;

  auto csv = open_csv(fs::path(cfg.out_dir) / "refine_study.csv", hash, cfg.seed);
  csv << "degree,level,n_opt,e_max,v_el,n_evals\n";

  for (const int d : degrees) {
    GunConfig gun = cfg.gun;
    gun.cap_degree = d;
    MultiPatchModel model = build_gun_model(gun);
    Eigen::VectorXd start = get_design(model);

    for (int level = 0; level < levels; ++level) {
      Problem prob = gun_problem(model, obj, cons, cfg.voltages);
      OptimizerConfig oc = cfg.opt;
      oc.skip_global = true;
      oc.checkpoint.clear();
      const TwoStageResult res = two_stage_optimize(prob, start, oc, {});

      // Pure peak field and volume of the polished design, for the table.
      const EvalRecord er = evaluate(model, res.best.design, pure, cons, cfg.voltages);
      MultiPatchModel polished = model;
      apply_design(polished, res.best.design);
      const double v_el = electrode_volume(polished);
      csv << d << ',' << level << ',' << design_dim(model) << ',' << er.f << ',' << v_el << ','
          << res.n_evals << '\n';
      csv.flush();
      std::cout << "refine-study: degree " << d << " level " << level << ": " << design_dim(model)
                << " dof, peak |E| " << er.f / 1e6 << " MV/m, V_el " << v_el * 1e6 << " cm^3\n";

      if (level + 1 == levels) break;

      // Seed the next level: halve every knot span of the optimized cap so the
      // refined space contains the current optimum exactly.
      MultiPatchModel optimum = model;
      apply_design(optimum, res.best.design);
      const NurbsCurve cap = design_curve(optimum);
      const std::vector<double> bps = cap.kv.breakpoints();
      std::vector<double> mids;
      for (std::size_t i = 0; i + 1 < bps.size(); ++i) mids.push_back(0.5 * (bps[i] + bps[i + 1]));
      replace_design_curve(model, insert_knots(cap, mids));
      start = get_design(model);
    }
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------
// track: sample a bunch, push it through a fieldmap, emit plane statistics,
// and compare against a rerun with half the time step.

struct TrackOpts {
  std::string fieldmap;
  std::optional<double> cathode_z, exit_z;
  bool no_refined = false;
};

json stats_json(const PlaneStats& p) {
  return {{"z", p.z},         {"x_rms", p.x_rms}, {"y_rms", p.y_rms}, {"z_rms", p.z_rms},
          {"eps_x", p.eps_x}, {"eps_y", p.eps_y}, {"eps_z", p.eps_z}};
}

int cmd_track(const RunConfig& cfg, const TrackOpts& to) {
  DirLock lock(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  echo_config(cfg, hash);
  const fs::path out(cfg.out_dir);

  fs::path fm_path(to.fieldmap);
  if (fm_path.empty()) {
    fm_path = out / "fieldmap_final.txt";
    if (!fs::exists(fm_path)) fm_path = out / "fieldmap.txt";
  }
  if (!fs::exists(fm_path))
    throw std::invalid_argument("fieldmap '" + fm_path.string() +
                                "' not found; run `egun solve` first or pass --fieldmap");
  const Fieldmap fm = read_fieldmap(fm_path.string());

  TrackingConfig tc = cfg.tracking;
  tc.cathode_z = to.cathode_z.value_or(fm.z0);
  tc.exit_z = to.exit_z.value_or(fm.z1);

  BunchSource src = cfg.source;
  if (!cfg.spot_file.empty()) src.spot = read_xy_csv(cfg.spot_file);
  const std::vector<Macroparticle> bunch = sample_bunch(src, cfg.n_particles, cfg.seed, tc.cathode_z);

  const auto t0 = std::chrono::steady_clock::now();
  const TrackResult res = track(bunch, fm, tc);
  const double wall = seconds_since(t0);
  const BeamStats stats = beam_stats(res);

  auto csv = open_csv(out / "planes.csv", hash, cfg.seed);
  csv << "z,x_rms,y_rms,z_rms,eps_x,eps_y,eps_z\n";
  for (const auto& p : stats.plane)
    csv << p.z << ',' << p.x_rms << ',' << p.y_rms << ',' << p.z_rms << ',' << p.eps_x << ','
        << p.eps_y << ',' << p.eps_z << '\n';

  json rep;
  rep["config"] = hash;
  rep["seed"] = cfg.seed;
  rep["fieldmap"] = fm_path.string();
  rep["n_particles"] = cfg.n_particles;
  rep["dt"] = tc.dt;
  rep["lost"] = res.lost;
  rep["exited"] = res.exited;
  rep["complete"] = res.complete;
  rep["de_rms"] = stats.de_rms;
  double ke_sum = 0.0;
  long ke_n = 0;
  for (const Macroparticle& mp : res.final_state)
    if (mp.alive && mp.exited) {
      ke_sum += (std::sqrt(1.0 + mp.p.squaredNorm()) - 1.0) * electron_mc2_ev;
      ++ke_n;
    }
  rep["ke_mean"] = ke_n > 0 ? json(ke_sum / double(ke_n)) : json(nullptr);
  rep["exit"] = stats.plane.empty() ? json(nullptr) : stats_json(stats.plane.back());
  rep["wall_s"] = wall;

  if (!to.no_refined) {
    TrackingConfig half = tc;
    half.dt = 0.5 * tc.dt;
    half.max_steps = 2 * tc.max_steps;
    const BeamStats ref = beam_stats(track(bunch, fm, half));
    const ConvergenceReport cr = self_convergence(stats, ref);
    rep["self_convergence"] = {{"x_rms", cr.x_rms},   {"y_rms", cr.y_rms},
                               {"z_rms", cr.z_rms},   {"eps_x", cr.eps_x},
                               {"eps_y", cr.eps_y},   {"eps_z", cr.eps_z},
                               {"worst", cr.worst()}, {"excluded_planes", cr.excluded_planes}};
  } else {
    rep["self_convergence"] = nullptr;
  }
  write_json_file(out / "track.json", rep);

  std::cout << "track: " << cfg.n_particles << " particles, " << res.exited << " exited, "
            << res.lost << " lost";
  if (!stats.plane.empty())
    std::cout << ", exit x_rms " << stats.plane.back().x_rms * 1e3 << " mm";
  std::cout << ", " << wall << " s\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------
// report: consolidate the run directory into one JSON + text summary.

json require_json(const fs::path& path, const char* produced_by) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("report: missing '" + path.string() + "' (run `egun " +
                                produced_by + "` first)");
  json j;
  in >> j;
  return j;
}

int cmd_report(const RunConfig& cfg) {
  DirLock lock(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  const json solve_j = require_json(out / "solve.json", "solve");
  const json opt_j = require_json(out / "optimize.json", "optimize");

  // Replay the trace and cross-check the stored best against it.
  const fs::path trace_path = out / "trace.jsonl";
  std::ifstream trace(trace_path);
  if (!trace)
    throw std::invalid_argument("report: missing '" + trace_path.string() +
                                "' (run `egun optimize` first)");
  long n_records = 0;
  double first_f = std::numeric_limits<double>::quiet_NaN();
  double best_f = std::numeric_limits<double>::infinity();
  bool any_feasible = false;
  std::string line;
  while (std::getline(trace, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("i")) continue;  // header or noise
    ++n_records;
    const double f = j["f"].is_null() ? std::numeric_limits<double>::infinity()
                                      : j["f"].get<double>();
    if (n_records == 1) first_f = f;
    const bool feas = j["pen"].get<double>() == 0.0;
    if (feas && (!any_feasible || f < best_f)) {
      best_f = f;
      any_feasible = true;
    }
  }
  if (n_records == 0)
    throw std::invalid_argument("report: trace '" + trace_path.string() + "' holds no records");

  const double stored_best = opt_j.at("best").at("f").get<double>();
  if (any_feasible &&
      std::abs(stored_best - best_f) > 1e-9 * std::max(std::abs(best_f), 1.0))
    throw std::runtime_error("report: optimize.json best does not match the trace (" +
                             std::to_string(stored_best) + " vs " + std::to_string(best_f) + ")");

  json track_j = nullptr;
  {
    std::ifstream in(out / "track.json");
    if (in) in >> track_j;
  }

  json rep;
  rep["config"] = solve_j.at("config");
  rep["seed"] = solve_j.at("seed");
  rep["initial"] = {{"e_max", solve_j.at("e_max").at("value")},
                    {"e_max_x", solve_j.at("e_max").at("x")},
                    {"e_tp", solve_j.at("e_tp")},
                    {"e_c", solve_j.at("e_c")},
                    {"e_ar", solve_j.at("e_ar")},
                    {"v_el", solve_j.at("v_el")}};
  const json& fin = opt_j.at("final");
  rep["final"] = {{"e_max", fin.at("e_max").at("value")},
                  {"e_max_x", fin.at("e_max").at("x")},
                  {"e_tp", fin.at("e_tp")},
                  {"e_c", fin.at("e_c")},
                  {"e_ar", fin.at("e_ar")},
                  {"v_el", fin.at("v_el")}};
  rep["objective"] = {{"mode", opt_j.at("mode")},
                      {"tp_weight", opt_j.at("tp_weight")},
                      {"initial_f", first_f},
                      {"final_f", any_feasible ? json(best_f) : json(nullptr)},
                      {"reduction", any_feasible && first_f > 0 ? json(1.0 - best_f / first_f)
                                                                : json(nullptr)}};
  rep["feasible"] = opt_j.at("feasible");
  rep["n_evals"] = opt_j.at("n_evals");
  rep["trace_records"] = n_records;
  rep["wall_s"] = opt_j.at("wall_s");
  rep["tracking"] = track_j;
  write_json_file(out / "report.json", rep);

  // Text rendering of the same numbers.
  std::ostringstream txt;
  txt << std::setprecision(6);
  auto mv = [](const json& v) -> std::string {
    if (v.is_null()) return "-";
    std::ostringstream os;
    os << std::setprecision(4) << v.get<double>() / 1e6;
    return os.str();
  };
  auto cm3 = [](const json& v) -> std::string {
    std::ostringstream os;
    os << std::setprecision(6) << v.get<double>() * 1e6;
    return os.str();
  };
  txt << "run " << rep["config"].get<std::string>() << "  seed " << rep["seed"] << "\n\n";
  txt << "field magnitudes at critical points [MV/m], electrode volume [cm^3]\n";
  txt << "  quantity      initial      final\n";
  txt << "  E_max     " << std::setw(12) << mv(rep["initial"]["e_max"]) << std::setw(11)
      << mv(rep["final"]["e_max"]) << "\n";
  txt << "  E_tp      " << std::setw(12) << mv(rep["initial"]["e_tp"]) << std::setw(11)
      << mv(rep["final"]["e_tp"]) << "\n";
  txt << "  E_c       " << std::setw(12) << mv(rep["initial"]["e_c"]) << std::setw(11)
      << mv(rep["final"]["e_c"]) << "\n";
  txt << "  E_ar      " << std::setw(12) << mv(rep["initial"]["e_ar"]) << std::setw(11)
      << mv(rep["final"]["e_ar"]) << "\n";
  txt << "  V_el      " << std::setw(12) << cm3(rep["initial"]["v_el"]) << std::setw(11)
      << cm3(rep["final"]["v_el"]) << "\n\n";
  txt << "objective " << rep["objective"]["mode"].get<std::string>() << ": " << first_f;
  if (any_feasible)
    txt << " -> " << best_f << "  (" << rep["objective"]["reduction"].get<double>() * 100.0
        << "% down)";
  txt << "\n";
  txt << "evaluations " << rep["n_evals"] << " (" << n_records << " trace records), wall "
      << rep["wall_s"].get<double>() << " s\n";
  if (!track_j.is_null()) {
    txt << "tracking: " << track_j["n_particles"] << " particles, " << track_j["lost"]
        << " lost";
    if (track_j.contains("ke_mean") && !track_j["ke_mean"].is_null())
      txt << ", exit KE " << track_j["ke_mean"].get<double>() / 1e3 << " keV";
    txt << ", dE_rms " << track_j["de_rms"].get<double>() << " eV\n";
    if (!track_j["exit"].is_null()) {
      const json& e = track_j["exit"];
      txt << "  exit plane z " << e["z"].get<double>() << " m: x_rms "
          << e["x_rms"].get<double>() * 1e3 << " mm, y_rms " << e["y_rms"].get<double>() * 1e3
          << " mm, z_rms " << e["z_rms"].get<double>() * 1e3 << " mm, eps_x "
          << e["eps_x"].get<double>() * 1e6 << " mm mrad, eps_y "
          << e["eps_y"].get<double>() * 1e6 << " mm mrad, eps_z "
          << e["eps_z"].get<double>() << " keV mm\n";
    }
  }
  std::ofstream tf(out / "report.txt");
  if (!tf) throw std::runtime_error("cannot write report.txt");
  tf << txt.str();

  std::cout << "report: wrote " << (out / "report.json").string() << " and report.txt\n";
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("EGUN_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"electrostatic gun design: spline field solves, shape optimization, tracking"};
  app.require_subcommand(1);

  Flags fl;
  FitOpts fit_opts;
  std::string cap_path;
  bool no_fieldmap = false;
  bool restart = false, no_checkpoint = false;
  std::vector<int> degrees;
  int levels = 4;
  TrackOpts track_opts;

  CLI::App* c_fit = app.add_subcommand("fit", "least-squares spline fit of an electrode profile");
  add_common_flags(c_fit, fl);
  c_fit->add_option("--samples", fit_opts.samples, "profile samples (z,r CSV); default: generated flat profile");
  c_fit->add_option("--n-samples", fit_opts.n_samples, "generated profile sample count");
  c_fit->add_option("--cap-degree", fit_opts.cap_degree, "degree of the fitted curve");
  c_fit->add_option("--knots", fit_opts.knots, "internal knots of the fitted curve");
  c_fit->add_option("--smoothing", fit_opts.smoothing, "ridge weight on the control polygon");
  c_fit->add_option("--params", fit_opts.params, "sample parameterization: chord or uniform");

  CLI::App* c_solve = app.add_subcommand("solve", "field solve with profiles and fieldmap export");
  add_common_flags(c_solve, fl);
  c_solve->add_option("--cap", cap_path, "cap curve JSON replacing the fitted flat profile");
  c_solve->add_flag("--no-fieldmap", no_fieldmap, "skip the fieldmap export");

  CLI::App* c_opt = app.add_subcommand("optimize", "two-stage shape optimization");
  add_common_flags(c_opt, fl);
  c_opt->add_flag("--restart", restart, "discard checkpoint and trace before starting");
  c_opt->add_flag("--no-checkpoint", no_checkpoint, "run without writing checkpoints");

  CLI::App* c_ref = app.add_subcommand("refine-study", "degree x knot-refinement optimization study");
  add_common_flags(c_ref, fl);
  c_ref->add_option("--degrees", degrees, "cap degrees to sweep (default 7 8 9 10)");
  c_ref->add_option("--levels", levels, "knot refinement levels per degree");

  CLI::App* c_track = app.add_subcommand("track", "push a sampled bunch through a fieldmap");
  add_common_flags(c_track, fl);
  c_track->add_option("--fieldmap", track_opts.fieldmap, "fieldmap path (default: <out>/fieldmap_final.txt, then fieldmap.txt)");
  c_track->add_option("--cathode-z", track_opts.cathode_z, "emission plane [m] (default: fieldmap low edge)");
  c_track->add_option("--exit-z", track_opts.exit_z, "exit plane [m] (default: fieldmap high edge)");
  c_track->add_flag("--no-refined", track_opts.no_refined, "skip the half-step convergence rerun");

  CLI::App* c_rep = app.add_subcommand("report", "consolidate a run directory into one report");
  add_common_flags(c_rep, fl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? exit_ok : exit_config;
  }

  try {
    const RunConfig cfg = make_config(fl);
    if (c_fit->parsed()) return cmd_fit(cfg, fit_opts);
    if (c_solve->parsed()) return cmd_solve(cfg, cap_path, no_fieldmap);
    if (c_opt->parsed()) return cmd_optimize(cfg, restart, no_checkpoint);
    if (c_ref->parsed()) return cmd_refine_study(cfg, degrees, levels);
    if (c_track->parsed()) return cmd_track(cfg, track_opts);
    if (c_rep->parsed()) return cmd_report(cfg);
    return exit_config;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  }
}
