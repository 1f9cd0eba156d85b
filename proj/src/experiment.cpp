#include "edgeq/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "edgeq/config_io.hpp"
#include "edgeq/parallel.hpp"

namespace edgeq {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::string json_scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ",";
      out += json_scalar_text(v[i]);
    }
    return out;
  }
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return num(v.get<double>());
  throw ConfigError("unsupported value in sweep spec: " + v.dump());
}

}  // namespace

EnvConfig default_paper_config() {
  EnvConfig c = EnvConfig::homogeneous(5, 5, 0.8, 0.95, 0.50, 3, 0.005);
  for (int k = 0; k < 5; ++k) {
    const bool odd = k % 2 == 0;  // one-based 1, 3, 5
    c.stay_available[k] = odd ? 0.95 : 0.50;
    c.stay_unavailable[k] = odd ? 0.50 : 0.95;
  }
  return c;
}

const char* to_string(SweptParameter p) {
  switch (p) {
    case SweptParameter::QueryCost: return "query_cost";
    case SweptParameter::ArrivalProb: return "arrival_prob";
    case SweptParameter::NDispatchers: return "n_dispatchers";
  }
  return "?";
}

SweptParameter swept_parameter_from_string(const std::string& s) {
  if (s == "query_cost" || s == "beta") return SweptParameter::QueryCost;
  if (s == "arrival_prob" || s == "lambda") return SweptParameter::ArrivalProb;
  if (s == "n_dispatchers" || s == "N") return SweptParameter::NDispatchers;
  throw ConfigError("unknown swept parameter '" + s + "'");
}

EnvConfig apply_swept_value(EnvConfig base, SweptParameter p, double value) {
  switch (p) {
    case SweptParameter::QueryCost:
      base.query_cost = value;
      break;
    case SweptParameter::ArrivalProb:
      for (auto& a : base.arrival_prob) a = value;
      break;
    case SweptParameter::NDispatchers: {
      const double rounded = std::round(value);
      if (rounded != value || value < 1)
        throw ConfigError("n_dispatchers must be a positive integer, got " + num(value));
      const double a = base.arrival_prob.empty() ? 0.5 : base.arrival_prob.front();
      base.n_dispatchers = static_cast<int>(rounded);
      base.arrival_prob.assign(base.n_dispatchers, a);
      break;
    }
  }
  return base;
}

PolicySpec PolicySpec::parse(const std::string& text) {
  PolicySpec s;
  if (text == "never") {
    s.baseline = BaselineKind::never();
  } else if (text == "always") {
    s.baseline = BaselineKind::always();
  } else if (text == "random") {
    s.baseline = BaselineKind::random(0.5);
  } else if (text.rfind("random:", 0) == 0) {
    double p = 0;
    try {
      std::size_t pos = 0;
      p = std::stod(text.substr(7), &pos);
      if (pos != text.size() - 7) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw ConfigError("bad random query probability in '" + text + "'");
    }
    s.baseline = BaselineKind::random(p);
  } else if (text == "mappo") {
    s.kind = Kind::MappoTrain;
  } else if (text.rfind("mappo:", 0) == 0 && text.size() > 6) {
    s.kind = Kind::MappoCheckpoint;
    s.checkpoint = text.substr(6);
  } else {
    throw ConfigError("unknown policy '" + text + "'");
  }
  return s;
}

std::string PolicySpec::label() const {
  switch (kind) {
    case Kind::Baseline: return baseline.label();
    case Kind::MappoTrain: return "mappo";
    case Kind::MappoCheckpoint: return "mappo:" + checkpoint;
  }
  return "?";
}

void SweepSpec::validate() const {
  if (values.empty()) throw ConfigError("sweep has no values");
  if (policies.empty()) throw ConfigError("sweep has no policies");
  if (seeds.empty()) throw ConfigError("sweep has no seeds");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  train.validate();
  std::vector<EnvConfig> configs;
  for (double v : values) {
    EnvConfig c = apply_swept_value(base, parameter, v);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(to_string(parameter)) + "=" + num(v) + ": " + e.what());
    }
    configs.push_back(std::move(c));
  }
  for (const auto& p : policies) {
    if (p.kind != PolicySpec::Kind::MappoCheckpoint) continue;
    const auto cp = mappo::load_checkpoint(p.checkpoint);
    for (std::size_t i = 0; i < configs.size(); ++i) {
      mappo::Agents a = cp.agents;
      a.env = configs[i];
      try {
        a.check_shapes();
      } catch (const ContractError& e) {
        throw ConfigError("checkpoint '" + p.checkpoint + "' does not fit " +
                          to_string(parameter) + "=" + num(values[i]) + ": " + e.what());
      }
    }
  }
}

SweepSpec parse_sweep_spec(const std::string& json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("sweep spec is not valid JSON: ") + e.what());
  }
  SweepSpec s;
  try {
    s.parameter = swept_parameter_from_string(doc.at("parameter").get<std::string>());
    s.values = doc.at("values").get<std::vector<double>>();
    for (const auto& p : doc.at("policies")) s.policies.push_back(PolicySpec::parse(p.get<std::string>()));
    if (doc.contains("seeds")) s.seeds = doc["seeds"].get<std::vector<std::uint64_t>>();
    else s.seeds = {1, 2, 3, 4, 5};
    if (doc.contains("eval_episodes")) s.eval_episodes = doc["eval_episodes"].get<int>();
    if (doc.contains("mappo_mode"))
      s.mappo_mode = mappo::execution_mode_from_string(doc["mappo_mode"].get<std::string>());

    Settings settings{default_paper_config(), {}};
    KeyValues kv;
    for (const char* section : {"env", "train"}) {
      if (!doc.contains(section)) continue;
      for (const auto& [k, v] : doc[section].items()) kv.emplace_back(k, json_scalar_text(v));
    }
    apply_settings(settings, kv);
    s.base = settings.env;
    s.train = settings.train;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sweep spec: ") + e.what());
  }
  return s;
}

SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sweep spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_sweep_spec(ss.str());
}

ResultRow make_row(const std::string& policy, double value, std::uint64_t seed,
                   const EvalSummary& summary) {
  ResultRow r;
  r.policy = policy;
  r.value = value;
  r.seed = seed;
  r.query_cost = summary.query_cost;
  r.reward = summary.average_reward();
  r.throughput = summary.throughput();
  r.queries = summary.queries_per_slot();
  r.drops = summary.drops_per_slot();
  r.slots = summary.totals.slots;
  return r;
}

namespace {

ResultRow run_cell(const SweepSpec& spec, const PolicySpec& policy, double value,
                   std::uint64_t seed, bool parallel) {
  const EnvConfig config = apply_swept_value(spec.base, spec.parameter, value);
  EvalSummary summary;
  switch (policy.kind) {
    case PolicySpec::Kind::Baseline:
      summary = evaluate_policy(BaselinePolicy(policy.baseline), config, spec.eval_episodes, seed,
                                parallel);
      break;
    case PolicySpec::Kind::MappoCheckpoint: {
      auto cp = mappo::load_checkpoint(policy.checkpoint);
      cp.agents.env = config;
      summary = mappo::evaluate(cp.agents, config, spec.eval_episodes, seed, spec.mappo_mode,
                                parallel);
      break;
    }
    case PolicySpec::Kind::MappoTrain: {
      mappo::TrainConfig train = spec.train;
      train.seed = seed;
      mappo::Trainer trainer(config, train);
      trainer.run();
      summary = mappo::evaluate(trainer.agents(), config, spec.eval_episodes, seed,
                                spec.mappo_mode, parallel);
      break;
    }
  }
  return make_row(policy.label(), value, seed, summary);
}

}  // namespace

std::vector<ResultRow> run_sweep(const SweepSpec& spec, const RowSink& sink, bool parallel) {
  spec.validate();

  struct Cell {
    std::size_t policy, value, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t v = 0; v < spec.values.size(); ++v)
    for (std::size_t p = 0; p < spec.policies.size(); ++p)
      for (std::size_t s = 0; s < spec.seeds.size(); ++s) cells.push_back({p, v, s});

  std::vector<ResultRow> rows(cells.size());
  std::vector<char> done(cells.size(), 0);
  std::size_t flushed = 0;
  std::mutex mu;
  std::exception_ptr failure;

  const auto finish = [&](std::size_t i, ResultRow row) {
    std::lock_guard lock(mu);
    rows[i] = std::move(row);
    done[i] = 1;
    while (flushed < cells.size() && done[flushed]) {
      if (sink) sink(rows[flushed]);
      ++flushed;
    }
  };
  const auto work = [&](std::size_t i, bool inner_parallel) {
    const Cell& c = cells[i];
    finish(i, run_cell(spec, spec.policies[c.policy], spec.values[c.value], spec.seeds[c.seed],
                       inner_parallel));
  };

  if (parallel && par::max_threads() > 1) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(cells.size()); ++i) {
      try {
        work(static_cast<std::size_t>(i), false);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) work(i, parallel);
  }
  return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.policy, r.value);
    auto& g = groups[key];
    if (g.empty()) order.push_back(key);
    g.push_back(&r);
  }
  const auto stats = [](const std::vector<const ResultRow*>& g, double ResultRow::*field) {
    const double n = static_cast<double>(g.size());
    double mean = 0;
    for (const auto* r : g) mean += r->*field;
    mean /= n;
    if (g.size() < 2) return std::make_pair(mean, 0.0);
    double ss = 0;
    for (const auto* r : g) ss += (r->*field - mean) * (r->*field - mean);
    return std::make_pair(mean, std::sqrt(ss / (n - 1) / n));
  };
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    AggregateRow a;
    a.policy = key.first;
    a.value = key.second;
    a.seeds = static_cast<int>(g.size());
    std::tie(a.reward_mean, a.reward_se) = stats(g, &ResultRow::reward);
    std::tie(a.throughput_mean, a.throughput_se) = stats(g, &ResultRow::throughput);
    a.queries_mean = stats(g, &ResultRow::queries).first;
    a.drops_mean = stats(g, &ResultRow::drops).first;
    out.push_back(a);
  }
  return out;
}

void check_accounting(const std::vector<ResultRow>& rows, double tol) {
  for (const auto& r : rows) {
    const double expect = r.throughput - r.query_cost * r.queries;
    if (!(std::abs(r.reward - expect) <= tol))
      throw AccountingError("accounting mismatch for " + r.policy + " at value " + num(r.value) +
                            " seed " + std::to_string(r.seed) + ": reward " + num(r.reward) +
                            " vs " + num(expect));
  }
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "jsonl") return ReportFormat::Jsonl;
  throw ConfigError("format must be csv or jsonl");
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "policy,value,seed,query_cost,reward,throughput,queries,drops,slots\n";
  for (const auto& r : rows)
    os << csv_field(r.policy) << ',' << num(r.value) << ',' << r.seed << ',' << num(r.query_cost)
       << ',' << num(r.reward) << ',' << num(r.throughput) << ',' << num(r.queries) << ','
       << num(r.drops) << ',' << r.slots << '\n';
  return os.str();
}

std::string aggregate_to_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << "policy,value,seeds,reward_mean,reward_se,throughput_mean,throughput_se,queries_mean,"
        "drops_mean\n";
  for (const auto& a : rows)
    os << csv_field(a.policy) << ',' << num(a.value) << ',' << a.seeds << ','
       << num(a.reward_mean) << ',' << num(a.reward_se) << ',' << num(a.throughput_mean) << ','
       << num(a.throughput_se) << ',' << num(a.queries_mean) << ',' << num(a.drops_mean) << '\n';
  return os.str();
}

std::string plot_table(const std::vector<AggregateRow>& rows, const std::string& value_name) {
  std::vector<std::string> policies;
  std::vector<double> values;
  std::map<std::pair<std::string, double>, const AggregateRow*> at;
  for (const auto& a : rows) {
    if (std::find(policies.begin(), policies.end(), a.policy) == policies.end())
      policies.push_back(a.policy);
    if (std::find(values.begin(), values.end(), a.value) == values.end()) values.push_back(a.value);
    at[{a.policy, a.value}] = &a;
  }
  std::ostringstream os;
  os << value_name;
  for (const auto& p : policies) os << ',' << csv_field(p + "_mean") << ',' << csv_field(p + "_se");
  os << '\n';
  for (double v : values) {
    os << num(v);
    for (const auto& p : policies) {
      const auto it = at.find({p, v});
      if (it == at.end()) os << ",,";
      else os << ',' << num(it->second->reward_mean) << ',' << num(it->second->reward_se);
    }
    os << '\n';
  }
  return os.str();
}

ReportFiles emit_report(const std::vector<ResultRow>& rows, const std::string& out_dir,
                        ReportFormat format, const std::string& value_name, bool plot) {
  check_accounting(rows);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto agg = aggregate(rows);
  ReportFiles files;
  if (format == ReportFormat::Csv) {
    files.rows = (fs::path(out_dir) / "rows.csv").string();
    files.aggregate = (fs::path(out_dir) / "aggregate.csv").string();
    write_file(files.rows, rows_to_csv(rows));
    write_file(files.aggregate, aggregate_to_csv(agg));
  } else {
    using nlohmann::json;
    files.rows = (fs::path(out_dir) / "rows.jsonl").string();
    files.aggregate = (fs::path(out_dir) / "aggregate.jsonl").string();
    std::string text;
    for (const auto& r : rows)
      text += json{{"policy", r.policy}, {"value", r.value}, {"seed", r.seed},
                   {"query_cost", r.query_cost}, {"reward", r.reward},
                   {"throughput", r.throughput}, {"queries", r.queries}, {"drops", r.drops},
                   {"slots", r.slots}}.dump() + "\n";
    write_file(files.rows, text);
    text.clear();
    for (const auto& a : agg)
      text += json{{"policy", a.policy}, {"value", a.value}, {"seeds", a.seeds},
                   {"reward_mean", a.reward_mean}, {"reward_se", a.reward_se},
                   {"throughput_mean", a.throughput_mean}, {"throughput_se", a.throughput_se},
                   {"queries_mean", a.queries_mean}, {"drops_mean", a.drops_mean}}.dump() + "\n";
    write_file(files.aggregate, text);
  }
  if (plot) {
    files.plot = (fs::path(out_dir) / "plot.csv").string();
    write_file(files.plot, plot_table(agg, value_name));
  }
  return files;
}

}  // namespace edgeq
