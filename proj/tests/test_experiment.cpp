#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "edgeq/config_io.hpp"
#include "edgeq/experiment.hpp"

using namespace edgeq;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SweepSpec small_sweep() {
  SweepSpec s;
  s.parameter = SweptParameter::QueryCost;
  s.values = {0.0, 0.005, 0.05, 0.1};
  for (const char* p : {"never", "random:0.5", "always", "random:0.2"})
    s.policies.push_back(PolicySpec::parse(p));
  s.seeds = {1, 2, 3};
  s.base = default_paper_config();
  s.base.horizon = 64;
  s.eval_episodes = 1;
  return s;
}

}  // namespace

TEST_CASE("default config") {
  const auto c = default_paper_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.n_servers == 5);
  CHECK(c.n_dispatchers == 5);
  CHECK(c.query_cost == 0.005);
  for (double a : c.arrival_prob) CHECK(a == 0.8);
  for (int q : c.queue_capacity) CHECK(q == 3);
  CHECK(c.stay_available[0] == 0.95);
  CHECK(c.stay_unavailable[0] == 0.50);
  CHECK(c.stay_available[1] == 0.50);
  CHECK(c.stay_unavailable[1] == 0.95);
  CHECK(c.stay_available[4] == 0.95);
}

TEST_CASE("key-value settings") {
  std::istringstream in(
      "# comment\n"
      "n_servers = 3\n"
      "stay_available = 0.9, 0.8\n"
      "queue_capacity = 4   # trailing comment\n"
      "overflow = drop_newest\n"
      "learning_rate = 0.001\n"
      "two_phase = true\n");
  Settings s{default_paper_config(), {}};
  apply_settings(s, read_key_values(in));
  CHECK(s.env.n_servers == 3);
  CHECK(s.env.stay_available == std::vector<double>{0.9, 0.8, 0.9});
  CHECK(s.env.stay_unavailable.size() == 3);
  CHECK(s.env.queue_capacity == std::vector<int>{4, 4, 4});
  CHECK(s.env.overflow == OverflowPolicy::DropNewest);
  CHECK(s.train.learning_rate == 0.001);
  CHECK(s.train.two_phase);

  CHECK_THROWS_AS(apply_settings(s, {{"bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_settings(s, {{"horizon", "ten"}}), ConfigError);
  CHECK_THROWS_AS(apply_settings(s, {{"two_phase", "maybe"}}), ConfigError);
  std::istringstream broken("horizon 10\n");
  CHECK_THROWS_AS(read_key_values(broken), ConfigError);
  CHECK(split_assignment("a = b") == std::pair<std::string, std::string>{"a", "b"});
  CHECK_THROWS_AS(split_assignment("ab"), ConfigError);

  // text round trip
  std::istringstream again(to_text(s));
  Settings t{default_paper_config(), {}};
  apply_settings(t, read_key_values(again));
  CHECK(t.env.stay_available == s.env.stay_available);
  CHECK(t.env.query_cost == s.env.query_cost);
  CHECK(t.train == s.train);
}

TEST_CASE("policy specs") {
  CHECK(PolicySpec::parse("never").label() == "never");
  CHECK(PolicySpec::parse("random:0.25").baseline.query_prob == 0.25);
  CHECK(PolicySpec::parse("mappo").kind == PolicySpec::Kind::MappoTrain);
  const auto m = PolicySpec::parse("mappo:runs/c.json");
  CHECK(m.kind == PolicySpec::Kind::MappoCheckpoint);
  CHECK(m.checkpoint == "runs/c.json");
  CHECK_THROWS_AS(PolicySpec::parse("sometimes"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("random:x"), ConfigError);
  CHECK_THROWS_AS(PolicySpec::parse("random:2"), ConfigError);
}

TEST_CASE("swept values") {
  const auto base = default_paper_config();
  CHECK(apply_swept_value(base, SweptParameter::QueryCost, 0.1).query_cost == 0.1);
  const auto a = apply_swept_value(base, SweptParameter::ArrivalProb, 0.3);
  for (double x : a.arrival_prob) CHECK(x == 0.3);
  const auto n = apply_swept_value(base, SweptParameter::NDispatchers, 12);
  CHECK(n.n_dispatchers == 12);
  CHECK(n.n_servers == 5);
  CHECK(n.arrival_prob.size() == 12);
  CHECK_THROWS_AS(apply_swept_value(base, SweptParameter::NDispatchers, 2.5), ConfigError);
}

TEST_CASE("sweep validation happens before any cell runs") {
  auto s = small_sweep();
  int rows = 0;
  const RowSink count = [&](const ResultRow&) { ++rows; };

  auto bad = s;
  bad.values.push_back(-1.0);
  CHECK_THROWS_AS(run_sweep(bad, count), ConfigError);
  bad = s;
  bad.seeds.clear();
  CHECK_THROWS_AS(run_sweep(bad, count), ConfigError);
  bad = s;
  bad.policies.push_back(PolicySpec::parse("mappo:/nonexistent/checkpoint.json"));
  CHECK_THROWS_AS(run_sweep(bad, count), ConfigError);
  bad = s;
  bad.parameter = SweptParameter::ArrivalProb;
  bad.values = {0.5, 1.5};
  CHECK_THROWS_AS(run_sweep(bad, count), ConfigError);
  CHECK(rows == 0);
}

TEST_CASE("sweep rows and reports") {
  const auto s = small_sweep();
  std::vector<ResultRow> streamed;
  const auto rows = run_sweep(s, [&](const ResultRow& r) { streamed.push_back(r); });
  REQUIRE(rows.size() == 48);
  CHECK(streamed.size() == 48);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(streamed[i].policy == rows[i].policy);

  // value-major, then policy, then seed
  CHECK(rows[0].value == 0.0);
  CHECK(rows[0].policy == "never");
  CHECK(rows[1].seed == 2);
  CHECK(rows[3].policy == "random:0.5");
  CHECK(rows[12].value == 0.005);

  const int nk = s.base.n_dispatchers * s.base.n_servers;
  for (const auto& r : rows) {
    if (r.policy == "never") CHECK(r.queries == 0.0);
    if (r.policy == "always") CHECK(r.queries == nk);
    CHECK(r.query_cost == doctest::Approx(r.value));
  }
  CHECK_NOTHROW(check_accounting(rows));
  auto broken = rows;
  broken[5].reward += 1e-6;
  CHECK_THROWS_AS(check_accounting(broken), AccountingError);

  const auto agg = aggregate(rows);
  REQUIRE(agg.size() == 16);
  double m = 0;
  for (int i = 0; i < 3; ++i) m += rows[static_cast<std::size_t>(i)].reward;
  CHECK(agg[0].reward_mean == doctest::Approx(m / 3).epsilon(1e-14));
  CHECK(agg[0].seeds == 3);
  CHECK(agg[0].reward_se >= 0.0);

  // always-query loses reward as the query cost rises, seeds held fixed
  std::vector<double> always;
  for (const auto& a : agg)
    if (a.policy == "always") always.push_back(a.reward_mean);
  REQUIRE(always.size() == 4);
  for (std::size_t i = 1; i < always.size(); ++i) CHECK(always[i] < always[i - 1]);

  const auto dir = fs::temp_directory_path() / "edgeq_test_report";
  fs::remove_all(dir);
  const auto f1 = emit_report(rows, (dir / "a").string(), ReportFormat::Csv, "query_cost");
  const auto again = run_sweep(s, {}, false);
  const auto f2 = emit_report(again, (dir / "b").string(), ReportFormat::Csv, "query_cost");
  CHECK(slurp(f1.rows) == slurp(f2.rows));
  CHECK(slurp(f1.aggregate) == slurp(f2.aggregate));
  const auto header = slurp(f1.rows).substr(0, slurp(f1.rows).find('\n'));
  CHECK(header == "policy,value,seed,query_cost,reward,throughput,queries,drops,slots");
  const auto plot = slurp(f1.plot);
  CHECK(plot.rfind("query_cost,never_mean,never_se,random:0.5_mean", 0) == 0);

  const auto j = emit_report(rows, (dir / "j").string(), ReportFormat::Jsonl);
  std::ifstream in(j.rows);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 48);
  CHECK_THROWS_AS(emit_report(broken, (dir / "c").string(), ReportFormat::Csv), AccountingError);
  fs::remove_all(dir);
}

TEST_CASE("sweep spec json") {
  const auto s = parse_sweep_spec(R"({
    "parameter": "n_dispatchers",
    "values": [5, 10, 15],
    "policies": ["never", "always", "mappo"],
    "seeds": [7, 8],
    "eval_episodes": 2,
    "env": {"horizon": 128, "query_cost": 0.01},
    "train": {"total_updates": 10, "learning_rate": 0.001}
  })");
  CHECK(s.parameter == SweptParameter::NDispatchers);
  CHECK(s.values.size() == 3);
  CHECK(s.policies[2].kind == PolicySpec::Kind::MappoTrain);
  CHECK(s.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK(s.base.horizon == 128);
  CHECK(s.base.query_cost == 0.01);
  CHECK(s.base.n_servers == 5);
  CHECK(s.train.total_updates == 10);
  CHECK_NOTHROW(s.validate());
  CHECK_THROWS_AS(parse_sweep_spec("{"), ConfigError);
  CHECK_THROWS_AS(parse_sweep_spec(R"({"parameter": "k", "values": [1], "policies": []})"),
                  ConfigError);
}
