// edgeq: simulate / train / evaluate / sweep / selftest

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "edgeq/baselines.hpp"
#include "edgeq/config_io.hpp"
#include "edgeq/evaluation.hpp"
#include "edgeq/experiment.hpp"
#include "edgeq/mappo.hpp"
#include "edgeq/parallel.hpp"
#include "edgeq/selfcheck.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace edgeq;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format = "csv";
  int threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value settings file");
  app->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out-dir", c.out_dir, "directory for output files");
  app->add_option("--format", c.format, "csv or jsonl")->check(CLI::IsMember({"csv", "jsonl"}));
  app->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)");
}

Settings load(const Common& c) {
  Settings s{default_paper_config(), {}};
  if (!c.config.empty()) s = load_settings(c.config, s);
  KeyValues kv;
  for (const auto& a : c.sets) kv.push_back(split_assignment(a));
  apply_settings(s, kv);
  if (c.seed) {
    s.env.seed = *c.seed;
    s.train.seed = *c.seed;
  }
  s.env.validate();
  s.train.validate();
  par::set_threads(c.threads);
  return s;
}

// Writes to out_dir/name, or stdout when no directory was given.
class Output {
 public:
  Output(const std::string& dir, const std::string& name) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    path_ = (fs::path(dir) / name).string();
    file_.open(path_);
    if (!file_) throw ConfigError("cannot write '" + path_ + "'");
  }
  std::ostream& os() { return path_.empty() ? std::cout : file_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream file_;
};

PolicyPtr make_policy(const std::string& text, const EnvConfig& env,
                      mappo::ExecutionMode mode) {
  const auto spec = PolicySpec::parse(text);
  switch (spec.kind) {
    case PolicySpec::Kind::Baseline:
      return std::make_shared<BaselinePolicy>(spec.baseline);
    case PolicySpec::Kind::MappoCheckpoint: {
      auto cp = mappo::load_checkpoint(spec.checkpoint);
      if (cp.agents.env.n_dispatchers != env.n_dispatchers ||
          cp.agents.env.n_servers != env.n_servers)
        throw ConfigError("checkpoint was trained for a different N or K");
      return std::make_shared<mappo::MappoPolicy>(
          std::make_shared<const mappo::Agents>(std::move(cp.agents)), mode);
    }
    case PolicySpec::Kind::MappoTrain:
      throw ConfigError("use mappo:<checkpoint> here; train one with `edgeq train`");
  }
  return {};
}

json summary_json(const std::string& policy, const EvalSummary& s) {
  return {{"policy", policy},
          {"episodes", s.episodes.size()},
          {"slots", s.totals.slots},
          {"reward", s.average_reward()},
          {"throughput", s.throughput()},
          {"queries", s.queries_per_slot()},
          {"drops", s.drops_per_slot()},
          {"query_cost", s.query_cost}};
}

void write_summary(std::ostream& os, const json& j, bool csv) {
  if (!csv) {
    os << j.dump() << "\n";
    return;
  }
  os << "policy,episodes,slots,reward,throughput,queries,drops,query_cost\n";
  os << j["policy"].get<std::string>() << ',' << j["episodes"] << ',' << j["slots"] << ','
     << j["reward"] << ',' << j["throughput"] << ',' << j["queries"] << ',' << j["drops"] << ','
     << j["query_cost"] << "\n";
}

int cmd_simulate(const Common& c, const std::string& policy_text, int slots,
                 const std::string& mode) {
  Settings s = load(c);
  if (slots > 0) s.env.horizon = slots;
  const auto policy = make_policy(policy_text, s.env, mappo::execution_mode_from_string(mode));
  const bool csv = c.format == "csv";
  Output out(c.out_dir, csv ? "trajectory.csv" : "trajectory.jsonl");
  auto& os = out.os();
  if (csv) os << "slot,team_reward,acks,drops,queries,jobs_in_queues,available,queues\n";

  const auto observer = [&](const WorldState& before, const JointAction& a,
                            const StepOutcome& o) {
    int acks = 0, drops = 0;
    for (int v : o.completions) acks += v;
    for (int v : o.drops) drops += v;
    std::string avail, queues;
    for (const auto& sv : before.servers) {
      avail += sv.available ? '1' : '0';
      if (!queues.empty()) queues += ' ';
      queues += std::to_string(sv.queue.size());
    }
    if (csv) {
      os << before.slot << ',' << o.team_reward << ',' << acks << ',' << drops << ','
         << o.total_queries << ',' << before.jobs_in_queues() << ',' << avail << ',' << queues
         << '\n';
      return;
    }
    json dispatch = json::array(), queries = json::array();
    for (const auto& d : a.dispatchers) {
      dispatch.push_back(d.dispatch ? json(*d.dispatch) : json(nullptr));
      queries.push_back(d.queries);
    }
    os << json{{"slot", before.slot},    {"available", avail}, {"queues", queues},
               {"queries", queries},     {"dispatch", dispatch}, {"rewards", o.rewards},
               {"team_reward", o.team_reward}, {"acks", acks}, {"drops", drops}}
              .dump()
       << '\n';
  };
  const auto totals =
      run_episode(*policy, s.env, s.env.seed, derive_seed(s.env.seed, 1, 0), observer);
  std::cerr << policy->name() << ": " << totals.slots << " slots, reward/slot "
            << totals.team_reward / static_cast<double>(std::max<std::int64_t>(1, totals.slots))
            << ", acks " << totals.acks << ", drops " << totals.drops << ", queries "
            << totals.queries << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& resume, int updates) {
  Settings s = load(c);
  if (updates > 0) s.train.total_updates = updates;
  std::unique_ptr<mappo::Trainer> trainer;
  if (!resume.empty()) {
    auto cp = mappo::load_checkpoint(resume);
    cp.agents.train.total_updates = s.train.total_updates;
    trainer = std::make_unique<mappo::Trainer>(std::move(cp.agents), cp.updates_done);
    std::cerr << "resumed at update " << trainer->updates_done() << "\n";
  } else {
    trainer = std::make_unique<mappo::Trainer>(s.env, s.train);
  }
  const std::string dir = c.out_dir.empty() ? "." : c.out_dir;
  fs::create_directories(dir);
  const bool csv = c.format == "csv";
  const auto log_path = fs::path(dir) / (csv ? "progress.csv" : "progress.jsonl");
  const bool fresh = resume.empty() || !fs::exists(log_path);
  std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw ConfigError("cannot write '" + log_path.string() + "'");
  if (csv && fresh)
    log << "update,rollout_reward,eval_reward,surrogate,value_loss,entropy,mean_ratio,"
           "clip_fraction,aborted_minibatches\n";

  trainer->run(
      [&](const mappo::ProgressRecord& r) {
        if (csv) {
          log << r.update << ',' << r.rollout_reward << ','
              << (r.eval_reward ? std::to_string(*r.eval_reward) : "") << ','
              << r.stats.surrogate << ',' << r.stats.value_loss << ',' << r.stats.entropy << ','
              << r.stats.mean_ratio << ',' << r.stats.clip_fraction << ','
              << r.stats.aborted_minibatches << '\n';
        } else {
          json j{{"update", r.update},
                 {"rollout_reward", r.rollout_reward},
                 {"surrogate", r.stats.surrogate},
                 {"value_loss", r.stats.value_loss},
                 {"entropy", r.stats.entropy},
                 {"mean_ratio", r.stats.mean_ratio},
                 {"clip_fraction", r.stats.clip_fraction},
                 {"aborted_minibatches", r.stats.aborted_minibatches}};
          if (r.eval_reward) j["eval_reward"] = *r.eval_reward;
          log << j.dump() << '\n';
        }
        log.flush();
        if (r.eval_reward)
          std::cerr << "update " << r.update << " eval reward/slot " << *r.eval_reward << "\n";
      },
      [&](const mappo::Agents& agents, int done) {
        mappo::save_checkpoint(agents, done, (fs::path(dir) / "checkpoint.json").string());
      });
  std::cerr << "checkpoint: " << (fs::path(dir) / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& policy_text, int episodes,
                 const std::string& mode) {
  Settings s = load(c);
  const auto policy = make_policy(policy_text, s.env, mappo::execution_mode_from_string(mode));
  const auto summary = evaluate_policy(*policy, s.env, episodes, s.env.seed);
  const bool csv = c.format == "csv";
  Output out(c.out_dir, csv ? "metrics.csv" : "metrics.jsonl");
  write_summary(out.os(), summary_json(policy_text, summary), csv);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& spec_path, int seed_count) {
  auto spec = load_sweep_spec(spec_path);
  KeyValues kv;
  for (const auto& a : c.sets) kv.push_back(split_assignment(a));
  Settings s{spec.base, spec.train};
  if (!c.config.empty()) s = load_settings(c.config, s);
  apply_settings(s, kv);
  spec.base = s.env;
  spec.train = s.train;
  if (c.seed || seed_count > 0) {
    const std::uint64_t first = c.seed.value_or(1);
    const int n = seed_count > 0 ? seed_count : static_cast<int>(spec.seeds.size());
    spec.seeds.clear();
    for (int i = 0; i < n; ++i) spec.seeds.push_back(first + static_cast<std::uint64_t>(i));
  }
  par::set_threads(c.threads);
  spec.validate();

  const std::string dir = c.out_dir.empty() ? "." : c.out_dir;
  fs::create_directories(dir);
  // partial results, one line per finished cell in final order
  std::ofstream partial(fs::path(dir) / "rows.partial.csv");
  partial << "policy,value,seed,query_cost,reward,throughput,queries,drops,slots\n";
  const auto rows = run_sweep(spec, [&](const ResultRow& r) {
    partial << rows_to_csv({r}).substr(rows_to_csv({}).size());
    partial.flush();
    std::cerr << r.policy << " " << to_string(spec.parameter) << "=" << r.value << " seed "
              << r.seed << ": reward " << r.reward << "\n";
  });
  partial.close();
  const auto files = emit_report(rows, dir, report_format_from_string(c.format),
                                 to_string(spec.parameter));
  fs::remove(fs::path(dir) / "rows.partial.csv");
  std::cerr << "wrote " << files.rows << ", " << files.aggregate << ", " << files.plot << "\n";
  return 0;
}

int cmd_selftest(const Common& c) {
  par::set_threads(c.threads);
  auto results = selfcheck::run_all();
  bool ok = true;
  const bool csv = c.format == "csv";
  Output out(c.out_dir, csv ? "selftest.csv" : "selftest.jsonl");
  if (csv) out.os() << "check,passed,detail\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (csv) out.os() << r.name << ',' << (r.passed ? "true" : "false") << ",\"" << r.detail << "\"\n";
    else out.os() << json{{"check", r.name}, {"passed", r.passed}, {"detail", r.detail}}.dump() << "\n";
    if (!c.out_dir.empty())
      std::cerr << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edgeq: query-aware job dispatching simulator and MAPPO trainer"};
  app.require_subcommand(1);

  Common common;
  std::string policy = "never", mode = "sampled", resume, spec_path;
  int slots = 0, updates = 0, episodes = 4, seed_count = 0;

  auto* sim = app.add_subcommand("simulate", "run one episode and dump the trajectory");
  add_common(sim, common);
  sim->add_option("--policy", policy, "never | random:p | always | mappo:<checkpoint>");
  sim->add_option("--slots", slots, "episode length (defaults to horizon)");
  sim->add_option("--mode", mode, "MAPPO execution: sampled or greedy");

  auto* train = app.add_subcommand("train", "train MAPPO, writing progress and checkpoints");
  add_common(train, common);
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--updates", updates, "total updates (overrides total_updates)");

  auto* eval = app.add_subcommand("evaluate", "evaluate a baseline or a checkpoint");
  add_common(eval, common);
  eval->add_option("--policy", policy, "never | random:p | always | mappo:<checkpoint>");
  eval->add_option("--episodes", episodes, "evaluation episodes")->check(CLI::PositiveNumber);
  eval->add_option("--mode", mode, "MAPPO execution: sampled or greedy");

  auto* sweep = app.add_subcommand("sweep", "run a sweep spec and write reports");
  add_common(sweep, common);
  sweep->add_option("--spec", spec_path, "sweep spec (JSON)")->required();
  sweep->add_option("--seeds", seed_count, "number of seeds, starting at --seed (default 1)");

  auto* self = app.add_subcommand("selftest", "invariant, Markov oracle and gradient checks");
  add_common(self, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return cmd_simulate(common, policy, slots, mode);
    if (*train) return cmd_train(common, resume, updates);
    if (*eval) return cmd_evaluate(common, policy, episodes, mode);
    if (*sweep) return cmd_sweep(common, spec_path, seed_count);
    if (*self) return cmd_selftest(common);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
