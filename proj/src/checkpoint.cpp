#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "edgeq/config_io.hpp"
#include "edgeq/mappo.hpp"

namespace edgeq::mappo {

namespace {

using nlohmann::json;

json net_to_json(const nn::DenseNet& net, const nn::OptimizerState& opt) {
  json layers = json::array();
  for (const auto& l : net.layers())
    layers.push_back({{"in", l.in}, {"out", l.out}, {"activation", nn::to_string(l.activation)}});
  const auto p = net.parameters();
  return {
      {"layers", layers},
      {"parameters", std::vector<double>(p.begin(), p.end())},
      {"adam",
       {{"learning_rate", opt.config.learning_rate},
        {"beta1", opt.config.beta1},
        {"beta2", opt.config.beta2},
        {"epsilon", opt.config.epsilon},
        {"max_grad_norm", opt.config.max_grad_norm},
        {"steps", opt.steps},
        {"first_moment", opt.first_moment},
        {"second_moment", opt.second_moment}}},
  };
}

std::pair<nn::DenseNet, nn::OptimizerState> net_from_json(const json& j) {
  std::vector<std::pair<int, int>> shapes;
  std::vector<nn::Activation> acts;
  for (const auto& l : j.at("layers")) {
    shapes.emplace_back(l.at("in").get<int>(), l.at("out").get<int>());
    acts.push_back(nn::activation_from_string(l.at("activation").get<std::string>()));
  }
  auto net = nn::DenseNet::from_layers(shapes, acts, j.at("parameters").get<std::vector<double>>());
  const auto& a = j.at("adam");
  nn::OptimizerState opt;
  opt.config.learning_rate = a.at("learning_rate").get<double>();
  opt.config.beta1 = a.at("beta1").get<double>();
  opt.config.beta2 = a.at("beta2").get<double>();
  opt.config.epsilon = a.at("epsilon").get<double>();
  opt.config.max_grad_norm = a.at("max_grad_norm").get<double>();
  opt.steps = a.at("steps").get<std::int64_t>();
  opt.first_moment = a.at("first_moment").get<std::vector<double>>();
  opt.second_moment = a.at("second_moment").get<std::vector<double>>();
  if (opt.first_moment.size() != net.parameter_count() ||
      opt.second_moment.size() != net.parameter_count())
    throw ConfigError("optimizer moments do not match the network");
  return {std::move(net), std::move(opt)};
}

json kv_to_json(const KeyValues& kv) {
  json o = json::object();
  for (const auto& [k, v] : kv) o[k] = v;
  return o;
}

KeyValues kv_from_json(const json& o) {
  KeyValues kv;
  for (const auto& [k, v] : o.items()) kv.emplace_back(k, v.get<std::string>());
  return kv;
}

}  // namespace

void save_checkpoint(const Agents& agents, int updates_done, const std::string& path) {
  json actors = json::array();
  for (std::size_t i = 0; i < agents.actors.size(); ++i)
    actors.push_back(net_to_json(agents.actors[i], agents.actor_opt[i]));
  const json doc = {
      {"format", "edgeq-mappo-checkpoint"},
      {"version", kCheckpointVersion},
      {"updates_done", updates_done},
      {"env", kv_to_json(env_to_key_values(agents.env))},
      {"train", kv_to_json(train_to_key_values(agents.train))},
      {"actors", actors},
      {"critic", net_to_json(agents.critic, agents.critic_opt)},
      {"value_norm",
       {{"mean", agents.value_norm.mean},
        {"var", agents.value_norm.var},
        {"count", agents.value_norm.count}}},
  };
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out << doc.dump() << "\n";
    if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ConfigError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "edgeq-mappo-checkpoint")
      throw ConfigError("'" + path + "' is not a checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version");

    Settings s;
    apply_settings(s, kv_from_json(doc.at("env")));
    apply_settings(s, kv_from_json(doc.at("train")));
    s.env.validate();
    s.train.validate();

    Checkpoint cp;
    cp.updates_done = doc.at("updates_done").get<int>();
    cp.agents.env = s.env;
    cp.agents.train = s.train;
    for (const auto& a : doc.at("actors")) {
      auto [net, opt] = net_from_json(a);
      cp.agents.actors.push_back(std::move(net));
      cp.agents.actor_opt.push_back(std::move(opt));
    }
    auto [critic, copt] = net_from_json(doc.at("critic"));
    cp.agents.critic = std::move(critic);
    cp.agents.critic_opt = std::move(copt);
    const auto& vn = doc.at("value_norm");
    cp.agents.value_norm = {vn.at("mean").get<double>(), vn.at("var").get<double>(),
                            vn.at("count").get<double>()};
    try {
      cp.agents.check_shapes();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("checkpoint shapes are inconsistent: ") + e.what());
    }
    return cp;
  } catch (const json::exception& e) {
    throw ConfigError("malformed checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace edgeq::mappo
