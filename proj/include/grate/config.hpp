#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "grate/learn.hpp"

namespace grate {

/// Flat key=value text config. '#' starts a comment; blank lines ignored.
/// Duplicate keys are rejected, naming the key.
inline std::map<std::string, std::string> parse_config(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto l = line.find_first_not_of(" \t\r");
    if (l == std::string::npos) continue;
    const auto r = line.find_last_not_of(" \t\r");
    line = line.substr(l, r - l + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not key=value: '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    trim(key);
    trim(val);
    if (key.empty())
      throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    if (out.count(key))
      throw std::runtime_error("config: duplicate key '" + key + "'");
    out[key] = val;
  }
  return out;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return parse_config(f);
}

namespace detail {

template <class T>
inline T parse_scalar(const std::string& key, const std::string& val);

template <>
inline double parse_scalar<double>(const std::string& key, const std::string& val) {
  size_t pos = 0;
  double x;
  try {
    x = std::stod(val, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' has malformed value '" + val + "'");
  }
  if (pos != val.size())
    throw std::runtime_error("config: key '" + key + "' has malformed value '" + val + "'");
  return x;
}

template <>
inline int64_t parse_scalar<int64_t>(const std::string& key, const std::string& val) {
  size_t pos = 0;
  long long x;
  try {
    x = std::stoll(val, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' has malformed value '" + val + "'");
  }
  if (pos != val.size())
    throw std::runtime_error("config: key '" + key + "' has malformed value '" + val + "'");
  return x;
}

}  // namespace detail

/// Builds a TrainConfig from key=value entries on top of the defaults.
/// Unknown keys are rejected by name.
inline TrainConfig train_config_from_map(
    const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  for (const auto& [key, val] : kv) {
    auto d = [&]() { return detail::parse_scalar<double>(key, val); };
    auto i = [&]() { return detail::parse_scalar<int64_t>(key, val); };
    if (key == "gamma") cfg.gamma = d();
    else if (key == "batch") cfg.batch = static_cast<int>(i());
    else if (key == "episode_cap") cfg.episode_cap = static_cast<int>(i());
    else if (key == "lr_actor") cfg.lr_actor = d();
    else if (key == "lr_critic") cfg.lr_critic = d();
    else if (key == "lr_alpha") cfg.lr_alpha = d();
    else if (key == "target_update") cfg.target_update = static_cast<int>(i());
    else if (key == "iters_per_episode") cfg.iters_per_episode = static_cast<int>(i());
    else if (key == "buffer_capacity") cfg.buffer_capacity = static_cast<size_t>(i());
    else if (key == "min_buffer") cfg.min_buffer = static_cast<size_t>(i());
    else if (key == "target_entropy_scale") cfg.target_entropy_scale = d();
    else if (key == "init_alpha") cfg.init_alpha = d();
    else if (key == "collectors") cfg.collectors = static_cast<int>(i());
    else if (key == "episodes") cfg.episodes = static_cast<int>(i());
    else if (key == "greedy_every") cfg.greedy_every = static_cast<int>(i());
    else if (key == "map_width") cfg.map_width = static_cast<int>(i());
    else if (key == "map_height") cfg.map_height = static_cast<int>(i());
    else if (key == "cell_size") cfg.cell_size = d();
    else if (key == "sensor_range") cfg.sensor_range = d();
    else if (key == "node_resolution") cfg.graph.node_resolution = static_cast<int>(i());
    else if (key == "k") cfg.graph.k = static_cast<int>(i());
    else if (key == "d") cfg.net.d = static_cast<int>(i());
    else if (key == "L") cfg.net.L = static_cast<int>(i());
    else if (key == "m") cfg.net.m = static_cast<int>(i());
    else if (key == "n") cfg.net.n = static_cast<int>(i());
    else if (key == "heads") cfg.net.heads = static_cast<int>(i());
    else if (key == "alpha_mix") cfg.net.alpha_mix = d();
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(i());
    else if (key == "checkpoint_every") cfg.checkpoint_every = static_cast<int>(i());
    else
      throw std::runtime_error("config: unknown key '" + key + "'");
  }
  cfg.graph.sensor_range = cfg.sensor_range;
  return cfg;
}

inline TrainConfig train_config_from_file(const std::string& path) {
  return train_config_from_map(parse_config_file(path));
}

}  // namespace grate
