#include "edgeq/config_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace edgeq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  const long long v = parse_integer(key, text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(key + ": value out of range");
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (out.empty()) out.push_back({});
  return out;
}

template <class T, class Parse>
std::vector<T> parse_list(const std::string& key, const std::string& text, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse(key, item));
  return out;
}

template <class T>
void fit_to(std::vector<T>& v, int count) {
  const auto n = static_cast<std::size_t>(std::max(count, 0));
  if (v.size() == n || v.empty()) return;
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = v[i % v.size()];
  v = std::move(out);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  // Prefer the short form when it round-trips.
  std::ostringstream shorter;
  shorter << std::setprecision(12) << v;
  if (std::stod(shorter.str()) == v) return shorter.str();
  return os.str();
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  if (!v.empty() && std::all_of(v.begin(), v.end(), [&](const T& x) { return x == v.front(); })) {
    if constexpr (std::is_floating_point_v<T>) return format_double(v.front());
    else return std::to_string(v.front());
  }
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += format_double(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

bool apply_env(EnvConfig& env, const std::string& key, const std::string& value) {
  const auto as_list = [&](auto& field, auto parse) {
    using T = typename std::decay_t<decltype(field)>::value_type;
    field = parse_list<T>(key, value, parse);
  };
  if (key == "arrival_prob") as_list(env.arrival_prob, parse_double);
  else if (key == "stay_available") as_list(env.stay_available, parse_double);
  else if (key == "stay_unavailable") as_list(env.stay_unavailable, parse_double);
  else if (key == "queue_capacity") as_list(env.queue_capacity, parse_int);
  else if (key == "query_cost") env.query_cost = parse_double(key, value);
  else if (key == "discount") env.discount = parse_double(key, value);
  else if (key == "horizon") env.horizon = parse_int(key, value);
  else if (key == "seed") env.seed = parse_unsigned(key, value);
  else if (key == "aoi_cap") env.aoi_cap = parse_int(key, value);
  else if (key == "allow_absorbing") env.allow_absorbing = parse_bool(key, value);
  else if (key == "overflow") {
    if (value == "drop_oldest") env.overflow = OverflowPolicy::DropOldest;
    else if (value == "drop_newest") env.overflow = OverflowPolicy::DropNewest;
    else throw ConfigError("overflow must be drop_oldest or drop_newest");
  } else if (key == "feedback_report") {
    if (value == "slot_start") env.feedback_report = FeedbackReport::SlotStart;
    else if (value == "post_service") env.feedback_report = FeedbackReport::PostService;
    else throw ConfigError("feedback_report must be slot_start or post_service");
  } else {
    return false;
  }
  return true;
}

bool apply_train(mappo::TrainConfig& t, const std::string& key, const std::string& value) {
  if (key == "clip_epsilon") t.clip_epsilon = parse_double(key, value);
  else if (key == "value_coef") t.value_coef = parse_double(key, value);
  else if (key == "entropy_coef") t.entropy_coef = parse_double(key, value);
  else if (key == "gae_lambda") t.gae_lambda = parse_double(key, value);
  else if (key == "rollout_length") t.rollout_length = parse_int(key, value);
  else if (key == "epochs_per_update") t.epochs_per_update = parse_int(key, value);
  else if (key == "minibatch_count") t.minibatch_count = parse_int(key, value);
  else if (key == "total_updates") t.total_updates = parse_int(key, value);
  else if (key == "learning_rate") t.learning_rate = parse_double(key, value);
  else if (key == "max_grad_norm") t.max_grad_norm = parse_double(key, value);
  else if (key == "parameter_sharing") t.parameter_sharing = parse_bool(key, value);
  else if (key == "normalize_advantages") t.normalize_advantages = parse_bool(key, value);
  else if (key == "value_normalization") t.value_normalization = parse_bool(key, value);
  else if (key == "two_phase") t.two_phase = parse_bool(key, value);
  else if (key == "hidden_units") t.hidden_units = parse_int(key, value);
  else if (key == "hidden_layers") t.hidden_layers = parse_int(key, value);
  else if (key == "workers") t.workers = parse_int(key, value);
  else if (key == "eval_interval") t.eval_interval = parse_int(key, value);
  else if (key == "eval_episodes") t.eval_episodes = parse_int(key, value);
  else if (key == "eval_mode") t.eval_mode = mappo::execution_mode_from_string(value);
  else if (key == "train_seed") t.seed = parse_unsigned(key, value);
  else return false;
  return true;
}

}  // namespace

KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return read_key_values(in);
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void apply_settings(Settings& s, const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "n_dispatchers") s.env.n_dispatchers = parse_int(key, value);
    if (key == "n_servers") s.env.n_servers = parse_int(key, value);
  }
  fit_to(s.env.arrival_prob, s.env.n_dispatchers);
  fit_to(s.env.stay_available, s.env.n_servers);
  fit_to(s.env.stay_unavailable, s.env.n_servers);
  fit_to(s.env.queue_capacity, s.env.n_servers);

  for (const auto& [key, value] : kv) {
    if (key == "n_dispatchers" || key == "n_servers") continue;
    if (!apply_env(s.env, key, value) && !apply_train(s.train, key, value))
      throw ConfigError("unknown setting '" + key + "'");
  }
  fit_to(s.env.arrival_prob, s.env.n_dispatchers);
  fit_to(s.env.stay_available, s.env.n_servers);
  fit_to(s.env.stay_unavailable, s.env.n_servers);
  fit_to(s.env.queue_capacity, s.env.n_servers);
}

Settings load_settings(const std::string& path, Settings base) {
  apply_settings(base, read_key_values_file(path));
  return base;
}

KeyValues env_to_key_values(const EnvConfig& e) {
  return {
      {"n_dispatchers", std::to_string(e.n_dispatchers)},
      {"n_servers", std::to_string(e.n_servers)},
      {"arrival_prob", format_list(e.arrival_prob)},
      {"stay_available", format_list(e.stay_available)},
      {"stay_unavailable", format_list(e.stay_unavailable)},
      {"queue_capacity", format_list(e.queue_capacity)},
      {"query_cost", format_double(e.query_cost)},
      {"discount", format_double(e.discount)},
      {"horizon", std::to_string(e.horizon)},
      {"seed", std::to_string(e.seed)},
      {"aoi_cap", std::to_string(e.aoi_cap)},
      {"overflow", e.overflow == OverflowPolicy::DropOldest ? "drop_oldest" : "drop_newest"},
      {"feedback_report",
       e.feedback_report == FeedbackReport::SlotStart ? "slot_start" : "post_service"},
      {"allow_absorbing", e.allow_absorbing ? "true" : "false"},
  };
}

KeyValues train_to_key_values(const mappo::TrainConfig& t) {
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"clip_epsilon", format_double(t.clip_epsilon)},
      {"value_coef", format_double(t.value_coef)},
      {"entropy_coef", format_double(t.entropy_coef)},
      {"gae_lambda", format_double(t.gae_lambda)},
      {"rollout_length", std::to_string(t.rollout_length)},
      {"epochs_per_update", std::to_string(t.epochs_per_update)},
      {"minibatch_count", std::to_string(t.minibatch_count)},
      {"total_updates", std::to_string(t.total_updates)},
      {"learning_rate", format_double(t.learning_rate)},
      {"max_grad_norm", format_double(t.max_grad_norm)},
      {"parameter_sharing", b(t.parameter_sharing)},
      {"normalize_advantages", b(t.normalize_advantages)},
      {"value_normalization", b(t.value_normalization)},
      {"two_phase", b(t.two_phase)},
      {"hidden_units", std::to_string(t.hidden_units)},
      {"hidden_layers", std::to_string(t.hidden_layers)},
      {"workers", std::to_string(t.workers)},
      {"eval_interval", std::to_string(t.eval_interval)},
      {"eval_episodes", std::to_string(t.eval_episodes)},
      {"eval_mode", mappo::to_string(t.eval_mode)},
      {"train_seed", std::to_string(t.seed)},
  };
}

std::string to_text(const Settings& s) {
  std::ostringstream os;
  os << "# environment\n";
  for (const auto& [k, v] : env_to_key_values(s.env)) os << k << " = " << v << "\n";
  os << "# training\n";
  for (const auto& [k, v] : train_to_key_values(s.train)) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace edgeq
