#pragma once

#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "curvgib/data_io.hpp"
#include "curvgib/trainer.hpp"

namespace curvgib {

/// Calls f(key, field) for every TrainConfig field, in a fixed order. The
/// same keys name config-file entries, manifest fields and CLI flags.
template <class Cfg, class F>
void visit_config(Cfg& c, F&& f) {
  f("outer_epochs", c.outer_epochs);
  f("inner_repr_epochs", c.inner_repr_epochs);
  f("inner_struct_epochs", c.inner_struct_epochs);
  f("beta", c.beta);
  f("alpha", c.alpha);
  f("tau", c.tau);
  f("learning_rate", c.learning_rate);
  f("lambda_curv", c.lambda_curv);
  f("depth", c.depth);
  f("hidden_dim", c.hidden_dim);
  f("dropout", c.dropout);
  f("seed", c.seed);
  f("candidate_k", c.candidate_k);
  f("dense_candidates", c.dense_candidates);
  f("patience", c.patience);
  f("floor_epsilon", c.floor_epsilon);
  f("signed_numerator", c.signed_numerator);
  f("normalize_weights", c.normalize_weights);
  f("head_gain", c.head_gain);
  f("dataset", c.dataset);
}

/// Keys a config file must set; the rest fall back to defaults.
inline const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{"outer_epochs", "inner_repr_epochs", "inner_struct_epochs",
                                             "beta",         "alpha",             "tau",
                                             "learning_rate", "depth",            "hidden_dim",
                                             "seed",         "candidate_k",       "dataset"};
  return keys;
}

namespace config_detail {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seed and counts share one integer parser");

inline void assign(const std::string& key, const std::string& text, std::size_t& out) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError("config key '" + key + "': '" + text + "' is not a non-negative integer");
  }
  out = static_cast<std::size_t>(std::stoull(text));
}
inline void assign(const std::string& key, const std::string& text, double& out) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0') throw UsageError("config key '" + key + "': '" + text + "' is not a number");
  out = v;
}
inline void assign(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1") {
    out = true;
  } else if (text == "false" || text == "0") {
    out = false;
  } else {
    throw UsageError("config key '" + key + "': '" + text + "' is not a boolean");
  }
}
inline void assign(const std::string&, const std::string& text, std::string& out) { out = text; }

inline std::string render(std::size_t v) { return std::to_string(v); }
inline std::string render(bool v) { return v ? "true" : "false"; }
inline std::string render(const std::string& v) { return v; }
inline std::string render(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace config_detail

inline std::set<std::string> config_keys() {
  std::set<std::string> keys;
  TrainConfig c;
  visit_config(c, [&](const char* k, auto&) { keys.insert(k); });
  return keys;
}

/// Sets one field from its textual value. Unknown keys are usage errors.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  bool found = false;
  visit_config(cfg, [&](const char* k, auto& field) {
    if (key == k) {
      config_detail::assign(key, value, field);
      found = true;
    }
  });
  if (!found) throw UsageError("unknown config key '" + key + "'");
}

/// Parses `key = value` lines; '#' starts a comment. Every required key
/// must be present and no key may repeat.
inline TrainConfig parse_config(std::istream& is, const std::string& source = "config") {
  TrainConfig cfg;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = io_detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError(source + ":" + std::to_string(no) + ": expected key = value");
    const auto key = io_detail::trim(t.substr(0, eq));
    const auto value = io_detail::trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw UsageError(source + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  std::vector<std::string> missing;
  for (const auto& k : required_config_keys()) {
    if (!seen.count(k)) missing.push_back(k);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& k : missing) list += (list.empty() ? "" : ", ") + k;
    throw UsageError(source + ": missing config key(s): " + list);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config " + path);
  return parse_config(is, path);
}

/// Writes every field; parse_config(write_config(c)) == c.
inline void write_config(std::ostream& os, const TrainConfig& cfg) {
  visit_config(cfg, [&](const char* k, const auto& field) { os << k << " = " << config_detail::render(field) << '\n'; });
}

}  // namespace curvgib
