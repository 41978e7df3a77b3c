#pragma once
// Derivative-free constrained minimization of the cap field objective:
// a stochastic-ranking evolution strategy for the global stage and a
// linear-approximation trust-region method for the local polish, plus the
// evaluation plumbing (trace, checkpoint) shared by both.

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "egun/geometry.hpp"
#include "egun/solver.hpp"

namespace egun {

enum class ObjectiveMode {
  max_field,              // peak ||E|| over the objective region
  triple_point_weighted,  // adds weight * sum ||E|| at the triple-point samples
};

ObjectiveMode objective_mode_from_string(const std::string& s);
std::string to_string(ObjectiveMode mode);

struct Objective {
  ObjectiveMode mode = ObjectiveMode::max_field;
  double weight = 0.0;  // triple-point term weight; 0 reduces to max_field exactly
  // discretization used for evaluations inside the optimization loop
  int degree = 3;
  int continuity = 2;
  int n_sub = 8;
};

struct ConstraintSet {
  double volume_cap = 625e-6;  // electrode volume budget, m^3
};

// One objective evaluation. g holds the violation vector in natural units
// (gun problem: g[0] volume excess in m^3, g[1] invalid-geometry flag);
// pen is the scalarized ranking penalty the evaluator derived from g
// (gun problem: excess in cm^3, invalid geometry counted as 1e6).
struct EvalRecord {
  Eigen::VectorXd design;
  double f = std::numeric_limits<double>::infinity();
  std::vector<double> g;
  double pen = 0.0;
  double wall_s = 0.0;
  long index = -1;  // evaluation counter, stamped by the driver
  int stage = 0;    // 1 = global, 2 = local
};

inline bool is_feasible(const EvalRecord& rec) { return rec.pen == 0.0; }

// Lexicographic "better": feasibility first, then objective.
bool better(const EvalRecord& a, const EvalRecord& b);

// Full evaluation chain for the gun problem: apply the design, check the
// volume budget, build the analysis space, solve, and scan the objective
// region. Any geometry or solver failure yields f = +inf with the invalid
// flag set instead of an exception.
EvalRecord evaluate(const MultiPatchModel& model, const Eigen::VectorXd& design,
                    const Objective& obj, const ConstraintSet& cons,
                    const BoundaryVoltages& volts);

// A box-bounded problem: eval must accept any point inside [lower, upper].
struct Problem {
  Eigen::VectorXd lower, upper;
  std::function<EvalRecord(const Eigen::VectorXd&)> eval;
  int dim() const { return int(lower.size()); }
};

// Binds evaluate() over the model's design box.
Problem gun_problem(const MultiPatchModel& model, const Objective& obj,
                    const ConstraintSet& cons, const BoundaryVoltages& volts);

struct OptimizerConfig {
  int lambda = 0;    // offspring per generation; 0 picks 20*(dim+1)
  int mu = 0;        // parents; 0 picks lambda/7
  double rank_pf = 0.45;  // probability of comparing by objective when ranking
  long max_evals = 5000;  // budget per stage
  std::uint64_t seed = 1;
  double global_tol = 1e-3;  // relative best-f change over 5 generations
  double local_tol = 1e-4;   // relative best-f change over 2n+1 evaluations
  double initial_step = 0.1;  // local stage: first trust radius, fraction of box width
  bool skip_global = false;   // two-stage driver: go straight to the local polish
  std::string checkpoint;     // optional path; resumed when the file exists
};

using TraceSink = std::function<void(const EvalRecord&)>;

// JSON-lines trace writer: a header line carrying the seed, then one line
// per evaluation (design, f, g, stage, index, wall seconds, timestamp).
class TraceWriter {
 public:
  // append continues an existing trace in place (no second header line).
  TraceWriter(const std::string& path, std::uint64_t seed, bool append = false);
  void operator()(const EvalRecord& rec);

 private:
  std::ofstream out_;
};

// Stochastic ranking (bubble sweeps with randomized comparison criterion):
// adjacent pairs compare by objective when both are feasible or with
// probability pf, by penalty otherwise. Returns the permutation, best first.
// rng must be a seeded engine; the result is deterministic given its state.
std::vector<std::size_t> stochastic_rank(const std::vector<EvalRecord>& records,
                                         double pf, std::uint64_t seed);

struct OptimizeResult {
  EvalRecord best;       // best-ever feasible record, or least violating
  long n_evals = 0;
  bool converged = false;  // tolerance met before the budget ran out
};

// (mu, lambda) evolution strategy with per-coordinate log-normal step-size
// self-adaptation, bound clipping, and stochastic-ranking selection.
// start, when given, seeds one individual of the initial population.
OptimizeResult isres_minimize(const Problem& problem, const OptimizerConfig& cfg,
                              const TraceSink& sink = {},
                              const std::optional<Eigen::VectorXd>& start = {});

// Trust-region method on an n+1 point simplex: linear models of f and of
// each violation, a box-constrained linear subproblem per step, radius
// halving on failure. Keeps the best feasible vertex monotone.
OptimizeResult local_minimize(const Problem& problem, const Eigen::VectorXd& start,
                              const OptimizerConfig& cfg, const TraceSink& sink = {});

struct TwoStageResult {
  EvalRecord global_best;  // incumbent after the global stage (== start when skipped)
  EvalRecord best;         // final incumbent after the local polish
  long n_evals = 0;
  bool converged = false;
};

// Global stage at global_tol seeding the local stage at local_tol.
TwoStageResult two_stage_optimize(const Problem& problem, const Eigen::VectorXd& start,
                                  const OptimizerConfig& cfg, const TraceSink& sink = {});

}  // namespace egun
