// Run configuration: everything a command-line run needs, serialized as a
// single versioned JSON document so a run can be reproduced from its config
// hash and seed alone.
#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "egun/geometry.hpp"
#include "egun/optimizer.hpp"
#include "egun/solver.hpp"
#include "egun/tracker.hpp"

namespace egun {

struct RunConfig {
  int schema = 1;

  // Geometry: either the parametric gun description, or a prebuilt model
  // file (takes precedence when set).
  GunConfig gun;
  std::string geometry_file;

  // Discretization of the field solve.
  int degree = 3;
  int continuity = 2;
  int n_sub = 8;

  BoundaryVoltages voltages{0.0, -300e3, 1e3};

  // Objective and constraint.
  ObjectiveMode mode = ObjectiveMode::max_field;
  double tp_weight = 0.0;
  double volume_cap = 625e-6;  // m^3

  OptimizerConfig opt;

  FieldmapSpec fieldmap;

  // Tracking.
  int n_particles = 2048;
  TrackingConfig tracking;
  BunchSource source;
  std::string spot_file;  // optional measured (x,y) spot samples, CSV

  std::string out_dir = "out";
  std::uint64_t seed = 1;  // master seed; the optimizer stage inherits it
};

// Canonical JSON form (keys sorted, every field present). Two configs hash
// equal exactly when this form is byte-identical.
nlohmann::json config_to_json(const RunConfig& cfg);

// Throws std::invalid_argument on schema mismatch or unknown top-level keys;
// missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);

// FNV-1a 64-bit over the canonical dump, as 16 hex digits. Stamped on every
// output file next to the seed.
std::string config_hash(const RunConfig& cfg);

}  // namespace egun
