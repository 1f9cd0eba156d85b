#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "edgeq/env.hpp"
#include "edgeq/mappo.hpp"

namespace edgeq {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Environment plus training parameters, as read from one `key = value` file.
struct Settings {
  EnvConfig env;
  mappo::TrainConfig train;
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
KeyValues read_key_values(std::istream& in);
KeyValues read_key_values_file(const std::string& path);

/// Splits "key=value" (CLI override syntax).
std::pair<std::string, std::string> split_assignment(const std::string& text);

/// Applies settings in two passes: n_dispatchers / n_servers first, then the
/// rest. Per-entity lists whose length no longer matches are repeated
/// cyclically; a single value is broadcast to every entity.
void apply_settings(Settings& settings, const KeyValues& kv);

Settings load_settings(const std::string& path, Settings base);

KeyValues env_to_key_values(const EnvConfig& env);
KeyValues train_to_key_values(const mappo::TrainConfig& train);
std::string to_text(const Settings& settings);

}  // namespace edgeq
