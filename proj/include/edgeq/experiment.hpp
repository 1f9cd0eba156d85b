#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "edgeq/baselines.hpp"
#include "edgeq/env.hpp"
#include "edgeq/mappo.hpp"

namespace edgeq {

/// K=5, N=5, arrival 0.8, query cost 0.005, capacity 3; servers 1,3,5 (one-based)
/// use (0.95, 0.50), servers 2,4 use (0.50, 0.95).
EnvConfig default_paper_config();

enum class SweptParameter { QueryCost, ArrivalProb, NDispatchers };

const char* to_string(SweptParameter p);
SweptParameter swept_parameter_from_string(const std::string& s);

/// Returns `base` with the swept parameter set; arrival applies to every
/// dispatcher and a dispatcher count reuses the first arrival probability.
EnvConfig apply_swept_value(EnvConfig base, SweptParameter p, double value);

struct PolicySpec {
  enum class Kind { Baseline, MappoCheckpoint, MappoTrain };

  Kind kind = Kind::Baseline;
  BaselineKind baseline;
  std::string checkpoint;

  /// never | random:<p> | always | mappo | mappo:<checkpoint-path>
  static PolicySpec parse(const std::string& text);
  std::string label() const;
};

struct SweepSpec {
  SweptParameter parameter = SweptParameter::QueryCost;
  std::vector<double> values;
  std::vector<PolicySpec> policies;
  std::vector<std::uint64_t> seeds;
  EnvConfig base;
  mappo::TrainConfig train;
  int eval_episodes = 4;
  mappo::ExecutionMode mappo_mode = mappo::ExecutionMode::Sampled;

  /// Rejects the whole sweep before anything runs: empty lists, invalid
  /// swept values, unreadable or shape-incompatible checkpoints.
  void validate() const;
};

/// JSON document: {"parameter", "values", "policies", "seeds", "eval_episodes",
/// "mappo_mode", "env": {key: value}, "train": {key: value}}. Missing env keys
/// fall back to default_paper_config().
SweepSpec parse_sweep_spec(const std::string& json_text);
SweepSpec load_sweep_spec(const std::string& path);

struct ResultRow {
  std::string policy;
  double value = 0.0;
  std::uint64_t seed = 0;
  double query_cost = 0.0;
  double reward = 0.0;      // mean team reward per slot
  double throughput = 0.0;  // ACKs per slot
  double queries = 0.0;     // queries per slot
  double drops = 0.0;       // NAKs per slot
  std::int64_t slots = 0;
};

ResultRow make_row(const std::string& policy, double value, std::uint64_t seed,
                   const EvalSummary& summary);

using RowSink = std::function<void(const ResultRow&)>;

/// Evaluates policy x value x seed. Rows come back (and reach `sink`) in
/// value-major, then policy, then seed order regardless of completion order.
std::vector<ResultRow> run_sweep(const SweepSpec& spec, const RowSink& sink = {},
                                 bool parallel = true);

struct AggregateRow {
  std::string policy;
  double value = 0.0;
  int seeds = 0;
  double reward_mean = 0.0;
  double reward_se = 0.0;
  double throughput_mean = 0.0;
  double throughput_se = 0.0;
  double queries_mean = 0.0;
  double drops_mean = 0.0;
};

/// Groups by (policy, value) in first-appearance order; standard errors use
/// the sample standard deviation over seeds.
std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows);

class AccountingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// reward == throughput - query_cost * queries for every row, within `tol`.
void check_accounting(const std::vector<ResultRow>& rows, double tol = 1e-9);

enum class ReportFormat { Csv, Jsonl };
ReportFormat report_format_from_string(const std::string& s);

struct ReportFiles {
  std::string rows;
  std::string aggregate;
  std::string plot;
};

std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::string aggregate_to_csv(const std::vector<AggregateRow>& rows);
/// One line per swept value, `<policy>_mean,<policy>_se` column pairs.
std::string plot_table(const std::vector<AggregateRow>& rows, const std::string& value_name);

/// Checks accounting, then writes rows, per-(policy, value) aggregates and a
/// plot-ready table into `out_dir`.
ReportFiles emit_report(const std::vector<ResultRow>& rows, const std::string& out_dir,
                        ReportFormat format, const std::string& value_name = "value",
                        bool plot = true);

}  // namespace edgeq
