#include "egun/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace egun {

namespace {

using json = nlohmann::ordered_json;

// Uniform in (0,1), one engine draw, no distribution-object state. Keeping
// all randomness stateless apart from the engine makes checkpoints exact:
// serializing the engine is enough to resume mid-run bit-for-bit.
double uniform01(std::mt19937_64& g) { return (double(g() >> 11) + 0.5) * 0x1p-53; }

double normal01(std::mt19937_64& g) {
  const double u = uniform01(g);
  const double v = uniform01(g);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

double clamp(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

void check_box(const Problem& p) {
  if (p.lower.size() == 0 || p.lower.size() != p.upper.size())
    throw std::invalid_argument("search box has no dimensions");
  for (int j = 0; j < p.dim(); ++j)
    if (!(p.upper[j] > p.lower[j]) || !std::isfinite(p.lower[j]) || !std::isfinite(p.upper[j]))
      throw std::invalid_argument("search box must have finite positive measure");
}

json record_to_json(const EvalRecord& rec) {
  json j;
  j["i"] = rec.index;
  j["stage"] = rec.stage;
  j["f"] = rec.f;
  j["g"] = rec.g;
  j["pen"] = rec.pen;
  j["design"] = std::vector<double>(rec.design.begin(), rec.design.end());
  j["wall_s"] = rec.wall_s;
  return j;
}

EvalRecord record_from_json(const json& j) {
  EvalRecord rec;
  rec.index = j.at("i").get<long>();
  rec.stage = j.at("stage").get<int>();
  rec.f = j.at("f").is_null() ? std::numeric_limits<double>::infinity()
                              : j.at("f").get<double>();
  rec.g = j.at("g").get<std::vector<double>>();
  rec.pen = j.at("pen").get<double>();
  const auto d = j.at("design").get<std::vector<double>>();
  rec.design = Eigen::Map<const Eigen::VectorXd>(d.data(), long(d.size()));
  rec.wall_s = j.value("wall_s", 0.0);
  return rec;
}

void write_checkpoint(const std::string& path, const json& j) {
  if (path.empty()) return;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

std::optional<json> read_checkpoint(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  json j;
  in >> j;
  return j;
}

std::string engine_state(const std::mt19937_64& g) {
  std::ostringstream ss;
  ss << g;
  return ss.str();
}

void restore_engine(std::mt19937_64& g, const std::string& s) {
  std::istringstream ss(s);
  ss >> g;
}

// Relative-change stall test over a trailing window of the best-value history.
bool window_converged(const std::vector<double>& hist, std::size_t window, double tol) {
  if (hist.size() <= window) return false;
  const double a = hist[hist.size() - 1 - window];
  const double b = hist.back();
  if (!std::isfinite(a) || !std::isfinite(b)) return false;
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace

ObjectiveMode objective_mode_from_string(const std::string& s) {
  if (s == "max_field") return ObjectiveMode::max_field;
  if (s == "triple_point_weighted") return ObjectiveMode::triple_point_weighted;
  throw std::invalid_argument("unknown objective mode: " + s);
}

std::string to_string(ObjectiveMode mode) {
  return mode == ObjectiveMode::max_field ? "max_field" : "triple_point_weighted";
}

bool better(const EvalRecord& a, const EvalRecord& b) {
  if (is_feasible(a) != is_feasible(b)) return is_feasible(a);
  if (!is_feasible(a) && a.pen != b.pen) return a.pen < b.pen;
  return a.f < b.f;
}

EvalRecord evaluate(const MultiPatchModel& model, const Eigen::VectorXd& design,
                    const Objective& obj, const ConstraintSet& cons,
                    const BoundaryVoltages& volts) {
  if (design.size() != design_dim(model))
    throw std::invalid_argument("design size does not match the model's free control points");
  if (!(cons.volume_cap > 0)) throw std::invalid_argument("volume cap must be positive");

  const auto t0 = std::chrono::steady_clock::now();
  EvalRecord rec;
  rec.design = design;
  try {
    MultiPatchModel m = model;
    apply_design(m, design);
    const double excess = std::max(0.0, electrode_volume(m) - cons.volume_cap);
    rec.g = {excess, 0.0};
    SplineSpace space = build_space(m, obj.degree, obj.continuity, obj.n_sub);
    FieldSolution sol = solve(space, volts);
    rec.f = max_field(sol, m.roi).value;
    if (obj.mode == ObjectiveMode::triple_point_weighted && obj.weight > 0.0)
      rec.f += obj.weight * triple_point_term(sol);
    rec.pen = rec.g[0] * 1e6;  // volume excess ranked in cm^3
  } catch (const std::exception&) {
    // invalid geometry (bounds, tangling, singular Jacobian) or a failed
    // solve: keep the record, poison the objective, flag the violation
    rec.f = std::numeric_limits<double>::infinity();
    if (rec.g.empty()) rec.g = {0.0, 0.0};
    rec.g[1] = 1.0;
    rec.pen = rec.g[0] * 1e6 + 1e6;
  }
  rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

Problem gun_problem(const MultiPatchModel& model, const Objective& obj,
                    const ConstraintSet& cons, const BoundaryVoltages& volts) {
  Problem p;
  p.lower = design_lower(model);
  p.upper = design_upper(model);
  p.eval = [model, obj, cons, volts](const Eigen::VectorXd& x) {
    return evaluate(model, x, obj, cons, volts);
  };
  return p;
}

TraceWriter::TraceWriter(const std::string& path, std::uint64_t seed, bool append) {
  bool has_content = false;
  if (append) {
    std::ifstream probe(path);
    has_content = probe && probe.peek() != std::ifstream::traits_type::eof();
  }
  out_.open(path, append ? std::ios::app : std::ios::out);
  if (!out_) throw std::runtime_error("cannot open trace file: " + path);
  if (!has_content) {
    json header;
    header["schema"] = 1;
    header["seed"] = seed;
    out_ << header.dump() << '\n';
  }
}

void TraceWriter::operator()(const EvalRecord& rec) {
  json j = record_to_json(rec);
  char ts[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["ts"] = ts;
  out_ << j.dump() << '\n';
  out_.flush();
}

std::vector<std::size_t> stochastic_rank(const std::vector<EvalRecord>& records,
                                         double pf, std::uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("ranking an empty population");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(records.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

  for (std::size_t sweep = 0; sweep < records.size(); ++sweep) {
    bool swapped = false;
    for (std::size_t i = 0; i + 1 < perm.size(); ++i) {
      const EvalRecord& a = records[perm[i]];
      const EvalRecord& b = records[perm[i + 1]];
      const bool both_feasible = a.pen == 0.0 && b.pen == 0.0;
      const bool by_f = both_feasible || uniform01(rng) < pf;
      const bool out_of_order = by_f ? a.f > b.f : a.pen > b.pen;
      if (out_of_order) {
        std::swap(perm[i], perm[i + 1]);
        swapped = true;
      }
    }
    if (!swapped) break;
  }
  return perm;
}

namespace {

struct Individual {
  Eigen::VectorXd x, sigma;
  EvalRecord rec;
};

json individual_to_json(const Individual& ind) {
  json j = record_to_json(ind.rec);
  j["sigma"] = std::vector<double>(ind.sigma.begin(), ind.sigma.end());
  return j;
}

Individual individual_from_json(const json& j) {
  Individual ind;
  ind.rec = record_from_json(j);
  ind.x = ind.rec.design;
  const auto s = j.at("sigma").get<std::vector<double>>();
  ind.sigma = Eigen::Map<const Eigen::VectorXd>(s.data(), long(s.size()));
  return ind;
}

}  // namespace

OptimizeResult isres_minimize(const Problem& problem, const OptimizerConfig& cfg,
                              const TraceSink& sink,
                              const std::optional<Eigen::VectorXd>& start) {
  check_box(problem);
  if (cfg.rank_pf < 0.0 || cfg.rank_pf > 1.0)
    throw std::invalid_argument("ranking probability must lie in [0, 1]");
  const int n = problem.dim();
  const int lambda = cfg.lambda > 0 ? cfg.lambda : 20 * (n + 1);
  const int mu = cfg.mu > 0 ? cfg.mu : std::max(1, lambda / 7);
  if (mu >= lambda) throw std::invalid_argument("need fewer parents than offspring");

  const double tau = 1.0 / std::sqrt(2.0 * std::sqrt(double(n)));
  const double tau_prime = 1.0 / std::sqrt(2.0 * double(n));
  const Eigen::VectorXd width = problem.upper - problem.lower;

  std::mt19937_64 rng(cfg.seed);
  std::vector<Individual> pop(lambda);
  OptimizeResult result;
  EvalRecord best;
  bool have_best = false;
  std::vector<double> fhist;
  int gen = 0;

  const auto note = [&](const EvalRecord& rec) {
    if (!have_best || better(rec, best)) {
      best = rec;
      have_best = true;
    }
    if (sink) sink(rec);
  };

  if (const auto ck = read_checkpoint(cfg.checkpoint); ck && ck->at("stage") == 1) {
    const json& j = *ck;
    restore_engine(rng, j.at("rng").get<std::string>());
    gen = j.at("gen").get<int>();
    result.n_evals = j.at("n_evals").get<long>();
    fhist = j.at("fhist").get<std::vector<double>>();
    best = record_from_json(j.at("best"));
    have_best = true;
    pop.clear();
    for (const json& ij : j.at("pop")) pop.push_back(individual_from_json(ij));
    if (int(pop.size()) != lambda)
      throw std::runtime_error("checkpoint population does not match the configuration");
  } else {
    for (int k = 0; k < lambda; ++k) {
      Individual& ind = pop[k];
      ind.x.resize(n);
      for (int j = 0; j < n; ++j)
        ind.x[j] = problem.lower[j] + width[j] * uniform01(rng);
      if (k == 0 && start) {
        for (int j = 0; j < n; ++j)
          ind.x[j] = clamp((*start)[j], problem.lower[j], problem.upper[j]);
      }
      ind.sigma = width / std::sqrt(double(n));
    }
    for (Individual& ind : pop) {
      if (result.n_evals >= cfg.max_evals) break;
      ind.rec = problem.eval(ind.x);
      ind.rec.index = result.n_evals++;
      ind.rec.stage = 1;
      note(ind.rec);
    }
  }

  while (result.n_evals < cfg.max_evals) {
    std::vector<EvalRecord> records;
    records.reserve(pop.size());
    for (const Individual& ind : pop) records.push_back(ind.rec);
    const auto perm = stochastic_rank(records, cfg.rank_pf, rng());

    std::vector<Individual> next(lambda);
    for (int k = 0; k < lambda; ++k) {
      const Individual& parent = pop[perm[std::size_t(k % mu)]];
      Individual& child = next[k];
      child.x.resize(n);
      child.sigma.resize(n);
      const double global = tau_prime * normal01(rng);
      for (int j = 0; j < n; ++j) {
        child.sigma[j] = clamp(parent.sigma[j] * std::exp(global + tau * normal01(rng)),
                               1e-12 * width[j], width[j]);
        child.x[j] = clamp(parent.x[j] + child.sigma[j] * normal01(rng),
                           problem.lower[j], problem.upper[j]);
      }
    }
    for (Individual& ind : next) {
      if (result.n_evals >= cfg.max_evals) break;
      ind.rec = problem.eval(ind.x);
      ind.rec.index = result.n_evals++;
      ind.rec.stage = 1;
      note(ind.rec);
    }
    if (result.n_evals >= cfg.max_evals && next.back().rec.index < 0) break;
    pop = std::move(next);
    ++gen;

    if (is_feasible(best)) fhist.push_back(best.f);
    if (!cfg.checkpoint.empty()) {
      json j;
      j["stage"] = 1;
      j["rng"] = engine_state(rng);
      j["gen"] = gen;
      j["n_evals"] = result.n_evals;
      j["fhist"] = fhist;
      j["best"] = record_to_json(best);
      json pj = json::array();
      for (const Individual& ind : pop) pj.push_back(individual_to_json(ind));
      j["pop"] = std::move(pj);
      write_checkpoint(cfg.checkpoint, j);
    }
    if (window_converged(fhist, 5, cfg.global_tol)) {
      result.converged = true;
      break;
    }
  }

  if (!have_best) throw std::runtime_error("optimization budget too small to evaluate anything");
  result.best = best;
  return result;
}

namespace {

// Minimize c.d subject to a.d <= b, lo <= d <= hi (all componentwise boxes).
// Single linear constraint plus a box: start at the box minimizer of c.d and,
// if that breaks the constraint, buy back feasibility coordinate by
// coordinate in order of objective cost per unit of constraint slack.
Eigen::VectorXd box_lp(const Eigen::VectorXd& c, const Eigen::VectorXd& a, double b,
                       const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  const int n = int(c.size());
  Eigen::VectorXd d(n);
  for (int j = 0; j < n; ++j) d[j] = c[j] > 0 ? lo[j] : (c[j] < 0 ? hi[j] : 0.0);

  double slack = b - a.dot(d);
  if (slack >= 0 || a.isZero(0.0)) return d;

  struct Move {
    int j;
    double gain;  // constraint reduction available from flipping this coordinate
    double cost;  // objective increase per unit of reduction
  };
  std::vector<Move> moves;
  for (int j = 0; j < n; ++j) {
    const double other = a[j] > 0 ? lo[j] : hi[j];  // end that minimizes a_j d_j
    const double gain = a[j] * (d[j] - other);
    if (gain > 0) moves.push_back({j, gain, std::abs(c[j] * (other - d[j])) / gain});
  }
  std::sort(moves.begin(), moves.end(),
            [](const Move& p, const Move& q) { return p.cost < q.cost; });

  double need = -slack;
  for (const Move& m : moves) {
    if (need <= 0) break;
    const double other = a[m.j] > 0 ? lo[m.j] : hi[m.j];
    const double frac = std::min(1.0, need / m.gain);
    d[m.j] += frac * (other - d[m.j]);
    need -= frac * m.gain;
  }
  // if need > 0 the constraint cannot be met inside the box: d is now the
  // least-violating corner, which is the right fallback step anyway
  return d;
}

struct Simplex {
  std::vector<EvalRecord> v;  // n+1 vertices
  int best() const {
    int b = 0;
    for (int i = 1; i < int(v.size()); ++i)
      if (better(v[i], v[b])) b = i;
    return b;
  }
  int worst() const {
    int w = 0;
    for (int i = 1; i < int(v.size()); ++i)
      if (better(v[w], v[i])) w = i;
    return w;
  }
};

}  // namespace

OptimizeResult local_minimize(const Problem& problem, const Eigen::VectorXd& start,
                              const OptimizerConfig& cfg, const TraceSink& sink) {
  check_box(problem);
  if (start.size() != problem.lower.size())
    throw std::invalid_argument("start point size does not match the search box");
  const int n = problem.dim();
  const Eigen::VectorXd width = problem.upper - problem.lower;
  const std::size_t window = 2 * std::size_t(n) + 1;

  OptimizeResult result;
  std::vector<double> fhist;
  double delta = cfg.initial_step > 0 ? cfg.initial_step : 0.1;

  const auto eval_at = [&](Eigen::VectorXd x) {
    for (int j = 0; j < n; ++j) x[j] = clamp(x[j], problem.lower[j], problem.upper[j]);
    EvalRecord rec = problem.eval(x);
    rec.index = result.n_evals++;
    rec.stage = 2;
    if (sink) sink(rec);
    return rec;
  };

  Simplex sx;
  // vertex i > 0 is an axis step along coordinate i-1 off vertex 0, so a
  // partially built simplex can always be completed from its size alone
  const auto extend_simplex = [&] {
    while (int(sx.v.size()) < n + 1 && result.n_evals < cfg.max_evals) {
      const int j = int(sx.v.size()) - 1;
      Eigen::VectorXd x = sx.v[0].design;
      const double h = delta * width[j];
      x[j] += (x[j] + h <= problem.upper[j]) ? h : -h;
      sx.v.push_back(eval_at(x));
    }
  };
  // keep is taken by value: callers pass vertices of the simplex this clears
  const auto rebuild = [&](EvalRecord keep) {
    sx.v.clear();
    sx.v.push_back(std::move(keep));
    extend_simplex();
  };

  // an empty stored simplex is a stage handoff, not a resumable state
  if (const auto ck = read_checkpoint(cfg.checkpoint);
      ck && ck->at("stage") == 2 && !ck->at("simplex").empty()) {
    const json& j = *ck;
    result.n_evals = j.at("n_evals").get<long>();
    delta = j.at("delta").get<double>();
    fhist = j.at("fhist").get<std::vector<double>>();
    for (const json& vj : j.at("simplex")) sx.v.push_back(record_from_json(vj));
    // a short simplex means the last run stopped mid-rebuild; finish it, which
    // replays exactly the evaluations the uninterrupted run would have made
    extend_simplex();
  } else {
    rebuild(eval_at(start));
  }

  const auto save = [&](const json* extra) {
    if (cfg.checkpoint.empty()) return;
    json j;
    j["stage"] = 2;
    j["n_evals"] = result.n_evals;
    j["delta"] = delta;
    j["fhist"] = fhist;
    json vj = json::array();
    for (const EvalRecord& rec : sx.v) vj.push_back(record_to_json(rec));
    j["simplex"] = std::move(vj);
    if (extra) j["carry"] = *extra;
    write_checkpoint(cfg.checkpoint, j);
  };
  std::optional<json> carry;
  if (const auto ck = read_checkpoint(cfg.checkpoint); ck && ck->contains("carry"))
    carry = ck->at("carry");

  while (result.n_evals < cfg.max_evals && int(sx.v.size()) == n + 1) {
    const EvalRecord& vb = sx.v[std::size_t(sx.best())];

    // linear models around the best vertex, in box-scaled coordinates
    Eigen::MatrixXd edges(n, n);
    Eigen::VectorXd df(n);
    const std::size_t ng = vb.g.size();
    Eigen::MatrixXd dg(n, long(ng));
    {
      int row = 0;
      double fcap = 0.0;
      for (const EvalRecord& rec : sx.v)
        if (std::isfinite(rec.f)) fcap = std::max(fcap, std::abs(rec.f));
      for (int i = 0; i < n + 1; ++i) {
        if (&sx.v[std::size_t(i)] == &vb) continue;
        const EvalRecord& rec = sx.v[std::size_t(i)];
        edges.row(row) = ((rec.design - vb.design).array() / width.array()).matrix();
        // an invalid vertex has f = inf; a large finite surrogate keeps the
        // model pointing away from it without wrecking the linear solve
        const double fi = std::isfinite(rec.f) ? rec.f : 10.0 * fcap + 1.0;
        df[row] = fi - (std::isfinite(vb.f) ? vb.f : 0.0);
        for (std::size_t k = 0; k < ng; ++k)
          dg(row, long(k)) = (k < rec.g.size() ? rec.g[k] : 0.0) - vb.g[k];
        ++row;
      }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(edges);
    if (!lu.isInvertible()) {
      rebuild(vb);
      if (int(sx.v.size()) < n + 1) break;  // budget ran out mid-rebuild
      Eigen::MatrixXd e2(n, n);
      int row = 0;
      for (int i = 1; i < n + 1; ++i)
        e2.row(row++) =
            ((sx.v[std::size_t(i)].design - sx.v[0].design).array() / width.array()).matrix();
      if (!Eigen::FullPivLU<Eigen::MatrixXd>(e2).isInvertible())
        throw std::runtime_error("degenerate simplex could not be repaired");
      continue;
    }
    const Eigen::VectorXd c = lu.solve(df);

    // step box: trust radius intersected with the design box, scaled units
    Eigen::VectorXd lo(n), hi(n);
    const Eigen::VectorXd x0 = vb.design;
    for (int j = 0; j < n; ++j) {
      lo[j] = std::max(-delta, (problem.lower[j] - x0[j]) / width[j]);
      hi[j] = std::min(delta, (problem.upper[j] - x0[j]) / width[j]);
    }

    // enforce the most-violated linearized constraint, if any bites
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
    double b = 1.0;
    {
      double worst_pred = 0.0;
      const Eigen::VectorXd dfree = box_lp(c, a, b, lo, hi);
      for (std::size_t k = 0; k < ng; ++k) {
        const Eigen::VectorXd ak = lu.solve(dg.col(long(k)));
        const double pred = vb.g[k] + ak.dot(dfree);
        if (pred > worst_pred) {
          worst_pred = pred;
          a = ak;
          b = -vb.g[k];
        }
      }
    }
    const Eigen::VectorXd d = box_lp(c, a, b, lo, hi);

    if (d.lpNorm<Eigen::Infinity>() < 1e-14) {
      delta *= 0.5;
      if (delta < 1e-9) {
        result.converged = true;
        break;
      }
      continue;
    }

    const EvalRecord trial = eval_at(x0 + (d.array() * width.array()).matrix());
    const int wi = sx.worst();
    const bool improved_best = better(trial, vb);
    if (better(trial, sx.v[std::size_t(wi)])) {
      sx.v[std::size_t(wi)] = trial;
      if (improved_best) {
        delta = std::min(delta * 1.6, 0.5);
        // history of incumbents: stop once a full window of improvements
        // no longer moves the best value in relative terms
        fhist.push_back(is_feasible(trial) ? trial.f
                                           : std::numeric_limits<double>::infinity());
        if (window_converged(fhist, window, cfg.local_tol)) {
          result.converged = true;
          save(carry ? &*carry : nullptr);
          break;
        }
      }
    } else {
      delta *= 0.5;
      // vertices left far outside the shrunken radius make the model stale
      double spread = 0.0;
      const Eigen::VectorXd& xb = sx.v[std::size_t(sx.best())].design;
      for (const EvalRecord& rec : sx.v)
        spread = std::max(spread,
                          ((rec.design - xb).array() / width.array()).abs().maxCoeff());
      if (spread > 3.0 * delta) rebuild(sx.v[std::size_t(sx.best())]);
      if (delta < 1e-9) {
        result.converged = true;
        save(carry ? &*carry : nullptr);
        break;
      }
    }
    save(carry ? &*carry : nullptr);
  }

  if (sx.v.empty()) throw std::runtime_error("optimization budget too small to evaluate anything");
  result.best = sx.v[std::size_t(sx.best())];
  return result;
}

TwoStageResult two_stage_optimize(const Problem& problem, const Eigen::VectorXd& start,
                                  const OptimizerConfig& cfg, const TraceSink& sink) {
  TwoStageResult out;
  long offset = 0;
  std::optional<EvalRecord> global_best;

  // a stage-2 checkpoint means the global stage already finished; its result
  // rides along inside the checkpoint so the re-dispatch can skip it
  const auto ck = read_checkpoint(cfg.checkpoint);
  const bool resume_local = ck && ck->at("stage") == 2;
  if (resume_local && ck->contains("carry")) {
    global_best = record_from_json(ck->at("carry").at("global_best"));
    offset = ck->at("carry").at("global_evals").get<long>();
  }

  if (!cfg.skip_global && !resume_local) {
    OptimizeResult global = isres_minimize(problem, cfg, sink, start);
    offset = global.n_evals;
    global_best = global.best;
    // stamp the handoff into the checkpoint before the local stage claims it
    if (!cfg.checkpoint.empty()) {
      json carry;
      carry["global_best"] = record_to_json(global.best);
      carry["global_evals"] = global.n_evals;
      json j;
      j["stage"] = 2;
      j["n_evals"] = 0;
      j["delta"] = cfg.initial_step > 0 ? cfg.initial_step : 0.1;
      j["fhist"] = std::vector<double>{};
      j["simplex"] = json::array();
      j["carry"] = carry;
      // written only so a crash between stages can still resume as stage 2;
      // an empty simplex makes local_minimize start fresh from the seed
      write_checkpoint(cfg.checkpoint, j);
    }
  }

  const long base = offset;
  const TraceSink lsink = sink ? TraceSink([&sink, base](const EvalRecord& rec) {
    EvalRecord shifted = rec;
    shifted.index += base;
    sink(shifted);
  })
                               : TraceSink();
  const Eigen::VectorXd lstart = global_best ? global_best->design : start;
  OptimizeResult local = local_minimize(problem, lstart, cfg, lsink);
  out.global_best = global_best ? *global_best : local.best;
  out.best = better(out.global_best, local.best) ? out.global_best : local.best;
  out.n_evals = offset + local.n_evals;
  out.converged = local.converged;
  return out;
}

}  // namespace egun
