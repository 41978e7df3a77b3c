// Drives the installed binary end to end through std::system. Each case works
// in its own directory under the build tree's test scratch space.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "egun/geometry.hpp"
#include "egun/splines.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egun;

namespace {

const fs::path& cli_root() {
  static const fs::path root = [] {
    fs::path p = fs::path(EGUN_TEST_TMP) / "cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  static int counter = 0;
  const fs::path log = cli_root() / ("run" + std::to_string(counter++) + ".log");
  const std::string cmd =
      std::string(EGUN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE_MESSAGE(in.good(), "missing " << p.string());
  json j;
  in >> j;
  return j;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  REQUIRE(out.good());
  out << s;
}

// Small discretization so a full optimize fits in test time.
json base_config(const fs::path& out) {
  json j;
  j["schema"] = 1;
  j["degree"] = 2;
  j["continuity"] = 1;
  j["n_sub"] = 4;
  j["optimizer"] = {{"max_evals", 40}, {"skip_global", true}};
  j["fieldmap"] = {{"nz", 64}, {"nr", 16}};
  j["n_particles"] = 48;
  j["out_dir"] = out.string();
  j["seed"] = 2;
  return j;
}

fs::path write_config(const std::string& name, const json& j) {
  const fs::path p = cli_root() / name;
  write_file(p, j.dump(2));
  return p;
}

// Trace records with the volatile fields stripped, for equality checks.
std::vector<json> trace_records(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<json> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (!j.contains("i")) continue;
    j.erase("wall_s");
    j.erase("ts");
    recs.push_back(std::move(j));
  }
  return recs;
}

std::string uniform_gap_map(int nz, int nr, double zlen, double rmax, double ez) {
  std::ostringstream os;
  os << "# " << nz << ' ' << nr << " 0 " << zlen << " 0 " << rmax << "\n";
  os.precision(17);
  for (int iz = 0; iz < nz; ++iz)
    for (int ir = 0; ir < nr; ++ir)
      os << (zlen * iz) / (nz - 1) << ' ' << (rmax * ir) / (nr - 1) << ' ' << ez << " 0\n";
  return os.str();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("fit preserves endpoints and refits in-space samples exactly") {
  const fs::path dir = cli_root() / "fit";
  json cfg = base_config(dir);
  const fs::path cfg_path = write_config("fit.json", cfg);

  CHECK(run_cli("fit --config " + cfg_path.string()) == 0);
  const json curve_j = read_json(dir / "cap_curve.json");
  const json rep = read_json(dir / "fit.json");

  const auto profile = flat_profile_samples(GunConfig{});
  const NurbsCurve curve = curve_from_json(curve_j);
  CHECK(curve.ctrl.front().x() == profile.front().x());
  CHECK(curve.ctrl.front().y() == profile.front().y());
  CHECK(curve.ctrl.back().x() == profile.back().x());
  CHECK(curve.ctrl.back().y() == profile.back().y());
  CHECK(rep["rms_residual"].get<double>() > 0.0);
  CHECK(rep["max_residual"].get<double>() >= rep["rms_residual"].get<double>());
  CHECK(rep["config"].get<std::string>().size() == 16);

  // Equispaced samples of the fitted curve lie in its own space, so a
  // smoothing-free uniform-parameter refit must reproduce them.
  std::ostringstream samples;
  samples.precision(17);
  const int n = 200;
  for (int k = 0; k < n; ++k) {
    const Vec2 x = eval_curve(curve, double(k) / (n - 1));
    samples << x.x() << ',' << x.y() << '\n';
  }
  write_file(cli_root() / "insample.csv", samples.str());
  json cfg2 = base_config(cli_root() / "fit2");
  const fs::path cfg2_path = write_config("fit2.json", cfg2);
  CHECK(run_cli("fit --config " + cfg2_path.string() + " --samples " +
                (cli_root() / "insample.csv").string() +
                " --params uniform --smoothing 0") == 0);
  const json rep2 = read_json(cli_root() / "fit2" / "fit.json");
  CHECK(rep2["rms_residual"].get<double>() < 1e-10);
  CHECK(rep2["max_residual"].get<double>() < 1e-9);
}

TEST_CASE("solve emits stamped profiles, critical fields, and a fieldmap") {
  const fs::path dir = cli_root() / "solve";
  const fs::path cfg_path = write_config("solve.json", base_config(dir));

  CHECK(run_cli("solve --config " + cfg_path.string()) == 0);
  const json rep = read_json(dir / "solve.json");
  CHECK(rep["dofs"]["free"].get<int>() > 0);
  CHECK(rep["e_max"]["value"].get<double>() > 1e6);
  CHECK(rep["e_c"].get<double>() > 0.0);
  CHECK(rep["e_ar"].get<double>() > 0.0);
  CHECK(rep["e_tp_samples"].size() == 8);
  // the flat starting electrode is known to sit slightly over the 625 cm^3 cap
  CHECK(rep["v_el"].get<double>() == doctest::Approx(630.26e-6).epsilon(1e-3));

  const std::string hash = rep["config"].get<std::string>();
  for (const char* tag : {"gamma_d0", "gamma_d1", "gamma_d2"}) {
    const std::string head = read_file(dir / (std::string("profile_") + tag + ".csv"));
    CHECK(head.rfind("# config " + hash + " seed 2", 0) == 0);
    CHECK(head.find("s,phi,Emag") != std::string::npos);
  }
  const std::string fm = read_file(dir / "fieldmap.txt");
  CHECK(fm.rfind("# 64 16 ", 0) == 0);
  CHECK(fs::exists(dir / "fieldmap.txt.mask"));
  CHECK(fs::exists(dir / "config_used.json"));
}

TEST_CASE("voltage scaling is linear through the driver") {
  json c1 = base_config(cli_root() / "volt1");
  json c2 = base_config(cli_root() / "volt2");
  c2["voltages"] = {{"d0", 0.0}, {"d1", -600e3}, {"d2", 2e3}};
  CHECK(run_cli("solve --config " + write_config("volt1.json", c1).string()) == 0);
  CHECK(run_cli("solve --config " + write_config("volt2.json", c2).string()) == 0);
  const json a = read_json(cli_root() / "volt1" / "solve.json");
  const json b = read_json(cli_root() / "volt2" / "solve.json");
  CHECK(b["e_max"]["value"].get<double>() / a["e_max"]["value"].get<double>() ==
        doctest::Approx(2.0).epsilon(1e-10));
  CHECK(b["e_c"].get<double>() / a["e_c"].get<double>() == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(b["e_ar"].get<double>() / a["e_ar"].get<double>() == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(b["e_tp"].get<double>() / a["e_tp"].get<double>() == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("a prebuilt geometry file reproduces the analytic capacitor field") {
  const fs::path model_path = cli_root() / "capacitor_model.json";
  save_model(make_spherical_capacitor_model(0.05, 0.10), model_path.string());

  json cfg = base_config(cli_root() / "capacitor");
  cfg["geometry_file"] = model_path.string();
  cfg["degree"] = 3;
  cfg["continuity"] = 2;
  cfg["n_sub"] = 16;
  cfg["voltages"] = {{"d0", 0.0}, {"d1", -300e3}, {"d2", 0.0}};
  CHECK(run_cli("solve --config " + write_config("capacitor.json", cfg).string() +
                " --no-fieldmap") == 0);

  // |E(a)| = |V| / (a^2 (1/a - 1/b)) = 12 MV/m for a 5/10 cm pair at 300 kV
  const json rep = read_json(cli_root() / "capacitor" / "solve.json");
  CHECK(rep["e_max"]["value"].get<double>() == doctest::Approx(12.0e6).epsilon(5e-3));
}

TEST_CASE("optimize resumes from its checkpoint without changing the trace") {
  json part = base_config(cli_root() / "resume");
  part["optimizer"] = {{"max_evals", 30}, {"skip_global", true}};
  json full = base_config(cli_root() / "resume");
  full["optimizer"] = {{"max_evals", 60}, {"skip_global", true}};
  json fresh = base_config(cli_root() / "fresh");
  fresh["optimizer"] = {{"max_evals", 60}, {"skip_global", true}};

  CHECK(run_cli("optimize --config " + write_config("part.json", part).string()) == 0);
  CHECK(run_cli("optimize --config " + write_config("full.json", full).string()) == 0);
  CHECK(run_cli("optimize --config " + write_config("fresh.json", fresh).string()) == 0);

  const auto resumed = trace_records(cli_root() / "resume" / "trace.jsonl");
  const auto straight = trace_records(cli_root() / "fresh" / "trace.jsonl");
  REQUIRE(resumed.size() == straight.size());
  CHECK(resumed == straight);
  for (std::size_t k = 0; k < resumed.size(); ++k) CHECK(resumed[k]["i"].get<long>() == long(k));

  const json a = read_json(cli_root() / "resume" / "optimize.json");
  const json b = read_json(cli_root() / "fresh" / "optimize.json");
  CHECK(a["best"]["f"] == b["best"]["f"]);
  CHECK(a["best"]["design"] == b["best"]["design"]);
  CHECK(a["resumed"].get<bool>());
  CHECK_FALSE(b["resumed"].get<bool>());
  CHECK(a["feasible"].get<bool>());
  CHECK(b["fine_check"]["rel_diff"].get<double>() < 0.25);
}

TEST_CASE("optimize exits 3 when the volume cap cannot be met") {
  json cfg = base_config(cli_root() / "infeasible");
  cfg["volume_cap"] = 1e-6;  // 1 cm^3: far below what the fixed stem occupies
  cfg["optimizer"] = {{"max_evals", 20}, {"skip_global", true}};
  std::string out;
  CHECK(run_cli("optimize --config " + write_config("infeasible.json", cfg).string(), &out) == 3);
  const json rep = read_json(cli_root() / "infeasible" / "optimize.json");
  CHECK_FALSE(rep["feasible"].get<bool>());
  CHECK(out.find("volume cap") != std::string::npos);
}

TEST_CASE("track through a uniform gap is deterministic and divergence-free") {
  const fs::path dir = cli_root() / "track";
  fs::create_directories(dir);
  const fs::path map_path = cli_root() / "gap_map.txt";
  write_file(map_path, uniform_gap_map(41, 9, 0.08, 0.01, -300e3 / 0.08));

  const fs::path cfg_path = write_config("track.json", base_config(dir));
  CHECK(run_cli("track --config " + cfg_path.string() + " --fieldmap " + map_path.string()) == 0);

  const json rep = read_json(dir / "track.json");
  CHECK(rep["exited"].get<int>() == 48);
  CHECK(rep["lost"].get<int>() == 0);
  CHECK(rep["complete"].get<bool>());
  CHECK(rep["ke_mean"].get<double>() == doctest::Approx(300e3).epsilon(1e-3));
  // no transverse field and a momentum-free emission: the bunch stays parallel
  CHECK(rep["exit"]["x_rms"].get<double>() > 0.0);
  CHECK(rep["exit"]["eps_x"].get<double>() == 0.0);
  CHECK(rep["exit"]["eps_y"].get<double>() == 0.0);
  // eps_z is analytically zero here (z and energy are perfectly correlated
  // through the emission time), so only the well-posed spreads are compared
  CHECK(rep["self_convergence"]["x_rms"].get<double>() < 1e-4);
  CHECK(rep["self_convergence"]["y_rms"].get<double>() < 1e-4);
  CHECK(rep["self_convergence"]["z_rms"].get<double>() < 1e-4);
  CHECK(rep["self_convergence"]["eps_x"].get<double>() == 0.0);
  CHECK(rep["self_convergence"]["eps_y"].get<double>() == 0.0);

  // plane listing: header, column names, then one row per statistics plane
  std::istringstream planes(read_file(dir / "planes.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(planes, line))
    if (!line.empty() && line[0] != '#' && line[0] != 'z') ++rows;
  CHECK(rows == 32);

  json snap = rep;
  CHECK(run_cli("track --config " + cfg_path.string() + " --fieldmap " + map_path.string()) == 0);
  json again = read_json(dir / "track.json");
  snap.erase("wall_s");
  again.erase("wall_s");
  CHECK(snap == again);
}

TEST_CASE("a one-point emission spot tracks with exactly zero spread") {
  const fs::path dir = cli_root() / "spot";
  fs::create_directories(dir);
  // dyadic coordinates keep the mean subtraction exact in every moment
  write_file(cli_root() / "spot.csv", "0.001953125,-0.00048828125\n");

  json cfg = base_config(dir);
  cfg["spot_file"] = (cli_root() / "spot.csv").string();
  const fs::path cfg_path = write_config("spot.json", cfg);
  CHECK(run_cli("track --config " + cfg_path.string() + " --fieldmap " +
                (cli_root() / "gap_map.txt").string() + " --no-refined") == 0);

  const json rep = read_json(dir / "track.json");
  CHECK(rep["exited"].get<int>() == 48);
  CHECK(rep["exit"]["x_rms"].get<double>() == 0.0);
  CHECK(rep["exit"]["y_rms"].get<double>() == 0.0);
  CHECK(rep["exit"]["eps_x"].get<double>() == 0.0);
  CHECK(rep["exit"]["eps_y"].get<double>() == 0.0);
  CHECK(rep["self_convergence"].is_null());
}

TEST_CASE("report matches the trace files and regenerates identically") {
  const fs::path dir = cli_root() / "pipeline";
  json cfg = base_config(dir);
  cfg["optimizer"] = {{"max_evals", 50}, {"skip_global", true}};
  const fs::path cfg_path = write_config("pipeline.json", cfg);

  CHECK(run_cli("solve --config " + cfg_path.string()) == 0);
  CHECK(run_cli("optimize --config " + cfg_path.string()) == 0);
  CHECK(run_cli("track --config " + cfg_path.string()) == 0);
  CHECK(run_cli("report --config " + cfg_path.string()) == 0);

  const json rep = read_json(dir / "report.json");
  const json solve_j = read_json(dir / "solve.json");
  const json opt_j = read_json(dir / "optimize.json");
  const json track_j = read_json(dir / "track.json");

  // the tracked fieldmap must be the optimized one once optimize has run
  CHECK(track_j["fieldmap"].get<std::string>() == (dir / "fieldmap_final.txt").string());

  CHECK(rep["initial"]["e_max"] == solve_j["e_max"]["value"]);
  CHECK(rep["initial"]["v_el"] == solve_j["v_el"]);
  CHECK(rep["final"]["e_max"] == opt_j["final"]["e_max"]["value"]);
  CHECK(rep["final"]["v_el"] == opt_j["final"]["v_el"]);
  CHECK(rep["tracking"]["de_rms"] == track_j["de_rms"]);

  double best = std::numeric_limits<double>::infinity();
  double first = 0.0;
  const auto recs = trace_records(dir / "trace.jsonl");
  REQUIRE_FALSE(recs.empty());
  first = recs.front()["f"].get<double>();
  for (const json& r : recs)
    if (r["pen"].get<double>() == 0.0 && !r["f"].is_null())
      best = std::min(best, r["f"].get<double>());
  CHECK(rep["objective"]["initial_f"].get<double>() == first);
  CHECK(rep["objective"]["final_f"].get<double>() == best);
  CHECK(rep["objective"]["final_f"].get<double>() == opt_j["best"]["f"].get<double>());

  const std::string json_before = read_file(dir / "report.json");
  const std::string txt_before = read_file(dir / "report.txt");
  CHECK(run_cli("report --config " + cfg_path.string()) == 0);
  CHECK(read_file(dir / "report.json") == json_before);
  CHECK(read_file(dir / "report.txt") == txt_before);

  fs::remove(dir / "trace.jsonl");
  std::string out;
  CHECK(run_cli("report --config " + cfg_path.string(), &out) == 2);
  CHECK(out.find("trace") != std::string::npos);
}

TEST_CASE("the lock file admits one writer per output directory") {
  const fs::path dir = cli_root() / "locked";
  fs::create_directories(dir);
  write_file(dir / ".lock", "12345\n");
  const fs::path cfg_path = write_config("locked.json", base_config(dir));
  std::string out;
  CHECK(run_cli("solve --config " + cfg_path.string(), &out) == 2);
  CHECK(out.find("locked") != std::string::npos);
  fs::remove(dir / ".lock");
  CHECK(run_cli("solve --config " + cfg_path.string()) == 0);
  CHECK_FALSE(fs::exists(dir / ".lock"));  // released on exit
}

TEST_CASE("configuration mistakes exit with the config error code") {
  CHECK(run_cli("solve --config /definitely/not/there.json") == 2);

  json bad_key = base_config(cli_root() / "bad");
  bad_key["voltage"] = 1.0;  // typo for "voltages"
  std::string out;
  CHECK(run_cli("solve --config " + write_config("bad_key.json", bad_key).string(), &out) == 2);
  CHECK(out.find("unknown key") != std::string::npos);

  json bad_schema = base_config(cli_root() / "bad");
  bad_schema["schema"] = 99;
  CHECK(run_cli("solve --config " + write_config("bad_schema.json", bad_schema).string()) == 2);

  json bad_mode = base_config(cli_root() / "bad");
  bad_mode["mode"] = "sharpest_field";
  CHECK(run_cli("solve --config " + write_config("bad_mode.json", bad_mode).string()) == 2);

  json bad_cont = base_config(cli_root() / "bad");
  bad_cont["continuity"] = 2;  // not below the degree
  CHECK(run_cli("solve --config " + write_config("bad_cont.json", bad_cont).string()) == 2);

  CHECK(run_cli("frobnicate") == 2);
}

}  // TEST_SUITE
