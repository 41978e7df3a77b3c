#include "egun/config.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace egun {

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["schema"] = cfg.schema;
  j["gun"] = gun_config_to_json(cfg.gun);
  j["geometry_file"] = cfg.geometry_file;
  j["degree"] = cfg.degree;
  j["continuity"] = cfg.continuity;
  j["n_sub"] = cfg.n_sub;
  j["voltages"] = {{"d0", cfg.voltages.d0}, {"d1", cfg.voltages.d1}, {"d2", cfg.voltages.d2}};
  j["mode"] = to_string(cfg.mode);
  j["tp_weight"] = cfg.tp_weight;
  j["volume_cap"] = cfg.volume_cap;
  j["optimizer"] = {{"lambda", cfg.opt.lambda},
                    {"mu", cfg.opt.mu},
                    {"rank_pf", cfg.opt.rank_pf},
                    {"max_evals", cfg.opt.max_evals},
                    {"global_tol", cfg.opt.global_tol},
                    {"local_tol", cfg.opt.local_tol},
                    {"initial_step", cfg.opt.initial_step},
                    {"skip_global", cfg.opt.skip_global}};
  j["fieldmap"] = {{"nz", cfg.fieldmap.nz},
                   {"nr", cfg.fieldmap.nr},
                   {"z0", cfg.fieldmap.z0},
                   {"z1", cfg.fieldmap.z1},
                   {"r0", cfg.fieldmap.r0},
                   {"r1", cfg.fieldmap.r1}};
  j["n_particles"] = cfg.n_particles;
  j["tracking"] = {{"dt", cfg.tracking.dt},
                   {"n_planes", cfg.tracking.n_planes},
                   {"max_steps", cfg.tracking.max_steps}};
  j["source"] = {{"rx_rms", cfg.source.rx_rms},
                 {"ry_rms", cfg.source.ry_rms},
                 {"sigma_t", cfg.source.sigma_t},
                 {"charge", cfg.source.charge}};
  j["spot_file"] = cfg.spot_file;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");

  static const std::set<std::string> known = {
      "schema",    "gun",        "geometry_file", "degree",   "continuity",
      "n_sub",     "voltages",   "mode",          "tp_weight", "volume_cap",
      "optimizer", "fieldmap",   "n_particles",   "tracking", "source",
      "spot_file", "out_dir",    "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "'");

  RunConfig c;
  int schema = j.value("schema", 1);
  if (schema != c.schema)
    throw std::invalid_argument("config: unsupported schema version " + std::to_string(schema));

  if (j.contains("gun")) c.gun = gun_config_from_json(j.at("gun"));
  c.geometry_file = j.value("geometry_file", c.geometry_file);
  c.degree = j.value("degree", c.degree);
  c.continuity = j.value("continuity", c.continuity);
  c.n_sub = j.value("n_sub", c.n_sub);
  if (j.contains("voltages")) {
    const auto& v = j.at("voltages");
    c.voltages.d0 = v.value("d0", c.voltages.d0);
    c.voltages.d1 = v.value("d1", c.voltages.d1);
    c.voltages.d2 = v.value("d2", c.voltages.d2);
  }
  if (j.contains("mode")) c.mode = objective_mode_from_string(j.at("mode").get<std::string>());
  c.tp_weight = j.value("tp_weight", c.tp_weight);
  c.volume_cap = j.value("volume_cap", c.volume_cap);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.opt.lambda = o.value("lambda", c.opt.lambda);
    c.opt.mu = o.value("mu", c.opt.mu);
    c.opt.rank_pf = o.value("rank_pf", c.opt.rank_pf);
    c.opt.max_evals = o.value("max_evals", c.opt.max_evals);
    c.opt.global_tol = o.value("global_tol", c.opt.global_tol);
    c.opt.local_tol = o.value("local_tol", c.opt.local_tol);
    c.opt.initial_step = o.value("initial_step", c.opt.initial_step);
    c.opt.skip_global = o.value("skip_global", c.opt.skip_global);
  }
  if (j.contains("fieldmap")) {
    const auto& f = j.at("fieldmap");
    c.fieldmap.nz = f.value("nz", c.fieldmap.nz);
    c.fieldmap.nr = f.value("nr", c.fieldmap.nr);
    c.fieldmap.z0 = f.value("z0", c.fieldmap.z0);
    c.fieldmap.z1 = f.value("z1", c.fieldmap.z1);
    c.fieldmap.r0 = f.value("r0", c.fieldmap.r0);
    c.fieldmap.r1 = f.value("r1", c.fieldmap.r1);
  }
  c.n_particles = j.value("n_particles", c.n_particles);
  if (j.contains("tracking")) {
    const auto& t = j.at("tracking");
    c.tracking.dt = t.value("dt", c.tracking.dt);
    c.tracking.n_planes = t.value("n_planes", c.tracking.n_planes);
    c.tracking.max_steps = t.value("max_steps", c.tracking.max_steps);
  }
  if (j.contains("source")) {
    const auto& s = j.at("source");
    c.source.rx_rms = s.value("rx_rms", c.source.rx_rms);
    c.source.ry_rms = s.value("ry_rms", c.source.ry_rms);
    c.source.sigma_t = s.value("sigma_t", c.source.sigma_t);
    c.source.charge = s.value("charge", c.source.charge);
  }
  c.spot_file = j.value("spot_file", c.spot_file);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);

  // One seed drives the whole run; tracking planes follow the gun geometry.
  c.opt.seed = c.seed;
  c.tracking.cathode_z = c.gun.cathode_z;
  c.tracking.exit_z = c.gun.chamber_length;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: parse error in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string dump = config_to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace egun
