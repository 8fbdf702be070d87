#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "skyalign/common.hpp"
#include "skyalign/csv.hpp"
#include "skyalign/dataset.hpp"
#include "skyalign/trainer.hpp"

// Flat `key = value` experiment configs. '#' starts a comment. One file may
// carry both generator and training keys; keys unknown to both are rejected.
namespace skyalign::config {

using KeyValues = std::map<std::string, std::string>;

inline const std::set<std::string>& gen_keys() {
  static const std::set<std::string> keys{"n_buildings", "views_per_building", "latent_dim",
                                          "noise_sigma", "fail_prob", "seed", "bins"};
  return keys;
}

inline const std::set<std::string>& train_keys() {
  static const std::set<std::string> keys{
      "peak_lr",      "warmup_frac",   "epochs",        "batch_size",     "weight_decay",
      "betas",        "adam_eps",      "seed",          "rotation_prob",  "smoothing",
      "temperature",  "trainable_temperature",          "orientation_mode",
      "orientation_weight",            "bins",          "hidden_dim",     "embed_dim"};
  return keys;
}

inline bool known_key(const std::string& k) { return gen_keys().count(k) || train_keys().count(k); }

inline KeyValues parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(csv::trim(line.substr(0, eq)));
    const std::string value(csv::trim(line.substr(eq + 1)));
    if (!known_key(key)) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
    kv[key] = value;
    if (end == text.size()) break;
  }
  return kv;
}

inline KeyValues load(const std::string& path) {
  std::string text;
  for (const auto& line : csv::read_lines(path)) text += line + "\n";
  return parse(text);
}

// SKYALIGN_<KEY> environment variables override file values.
inline void apply_env_overrides(KeyValues& kv,
                                const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  std::set<std::string> all = gen_keys();
  all.insert(train_keys().begin(), train_keys().end());
  for (const auto& key : all) {
    std::string name = "SKYALIGN_" + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    if (const char* v = getenv_fn(name.c_str()); v != nullptr && *v != '\0') kv[key] = v;
  }
}

namespace detail {

template <typename T>
void read_number(const KeyValues& kv, const char* key, T& out) {
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  try {
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(csv::parse_double(it->second));
    } else {
      const long long v = csv::parse_int(it->second);
      if (v < 0 && std::is_unsigned_v<T>) throw FormatError("negative");
      out = static_cast<T>(v);
    }
  } catch (const FormatError&) {
    throw ConfigError(std::string("config key '") + key + "': bad value '" + it->second + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false");
}

}  // namespace detail

inline GenConfig to_gen_config(const KeyValues& kv, GenConfig cfg = {}) {
  detail::read_number(kv, "n_buildings", cfg.n_buildings);
  detail::read_number(kv, "views_per_building", cfg.views_per_building);
  detail::read_number(kv, "latent_dim", cfg.latent_dim);
  detail::read_number(kv, "noise_sigma", cfg.noise_sigma);
  detail::read_number(kv, "fail_prob", cfg.fail_prob);
  detail::read_number(kv, "seed", cfg.seed);
  detail::read_number(kv, "bins", cfg.bins);
  cfg.validate();
  return cfg;
}

inline TrainConfig to_train_config(const KeyValues& kv, TrainConfig cfg = {}) {
  detail::read_number(kv, "peak_lr", cfg.peak_lr);
  detail::read_number(kv, "warmup_frac", cfg.warmup_frac);
  detail::read_number(kv, "epochs", cfg.epochs);
  detail::read_number(kv, "batch_size", cfg.batch_size);
  detail::read_number(kv, "weight_decay", cfg.weight_decay);
  detail::read_number(kv, "adam_eps", cfg.adam_eps);
  detail::read_number(kv, "seed", cfg.seed);
  detail::read_number(kv, "rotation_prob", cfg.rotation_prob);
  detail::read_number(kv, "hidden_dim", cfg.hidden_dim);
  detail::read_number(kv, "embed_dim", cfg.embed_dim);
  detail::read_number(kv, "smoothing", cfg.loss.smoothing);
  detail::read_number(kv, "temperature", cfg.loss.temperature);
  detail::read_number(kv, "orientation_weight", cfg.loss.orientation_weight);
  detail::read_number(kv, "bins", cfg.loss.bins);
  if (const auto it = kv.find("betas"); it != kv.end()) {
    const auto parts = csv::split(it->second);
    if (parts.size() != 2) throw ConfigError("config key 'betas': expected 'beta1, beta2'");
    try {
      cfg.beta1 = csv::parse_double(parts[0]);
      cfg.beta2 = csv::parse_double(parts[1]);
    } catch (const FormatError&) {
      throw ConfigError("config key 'betas': bad value '" + it->second + "'");
    }
  }
  if (const auto it = kv.find("trainable_temperature"); it != kv.end()) {
    cfg.loss.trainable_temperature = detail::parse_bool(it->first, it->second);
  }
  if (const auto it = kv.find("orientation_mode"); it != kv.end()) {
    cfg.loss.orientation_mode = parse_orientation_mode(it->second);
  }
  cfg.validate();
  return cfg;
}

}  // namespace skyalign::config
