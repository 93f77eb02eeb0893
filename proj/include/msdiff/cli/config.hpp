//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat `key = value` lines, '#' comments, no nesting.
// Keys are drawn from a fixed registry so typos fail loudly; every key in
// the `paths.` namespace must point at an existing file when loaded.
//

#ifndef MSDIFF_CLI_CONFIG_HPP
#define MSDIFF_CLI_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "msdiff/denoiser/denoiser.hpp"
#include "msdiff/diffusion/diffusion.hpp"
#include "msdiff/specenc/specenc.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

namespace detail {

/// Every key the pipeline understands. Paths are inputs only; outputs go to
/// the directory named by the --out flag.
inline const std::set<std::string> &config_key_registry() {
  static const std::set<std::string> keys = {
      "diffusion.steps",
      "diffusion.prior",
      "denoiser.layers",
      "denoiser.hidden_node",
      "denoiser.hidden_edge",
      "denoiser.hidden_global",
      "denoiser.heads",
      "denoiser.time_embedding",
      "denoiser.condition_dim",
      "encoder.layers",
      "encoder.dim",
      "encoder.heads",
      "encoder.hidden",
      "encoder.mz_embedding",
      "encoder.fingerprint_bits",
      "fingerprint.width",
      "fingerprint.radius",
      "train.seed",
      "train.steps",
      "train.batch",
      "train.lr",
      "train.lr_min",
      "train.weight_decay",
      "train.checkpoint_every",
      "train.freeze_encoder",
      "sample.count",
      "paths.corpus",
      "paths.exclusion",
      "paths.dataset",
      "paths.spectra",
      "paths.molecules",
      "paths.formulae",
      "paths.encoder_checkpoint",
      "paths.decoder_checkpoint",
      "paths.checkpoint",
      "paths.samples",
      "paths.samples_manifest",
      "paths.truth",
  };
  return keys;
}

inline std::string trim_ws(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() = default;

  /// Parses flat key=value text. `source` names the origin for messages.
  static RunConfig parse(std::istream &in, const std::string &source) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string stripped = detail::trim_ws(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source + ":" + std::to_string(lineno) +
                          ": expected key = value");
      std::string key = detail::trim_ws(stripped.substr(0, eq));
      std::string value = detail::trim_ws(stripped.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(source + ":" + std::to_string(lineno) +
                          ": empty key or value");
      if (!detail::config_key_registry().count(key))
        throw ConfigError(source + ":" + std::to_string(lineno) +
                          ": unknown key '" + key + "'");
      if (cfg.values_.count(key))
        throw ConfigError(source + ":" + std::to_string(lineno) +
                          ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static RunConfig parse_string(const std::string &text,
                                const std::string &source = "<config>") {
    std::istringstream in(text);
    return parse(in, source);
  }

  /// Loads a file and enforces the load-time invariants: seed present,
  /// every provided path exists.
  static RunConfig load(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg = parse(in, path);
    if (!cfg.has("train.seed"))
      throw ConfigError(path + ": train.seed is mandatory");
    (void)cfg.seed();  // validates the integer now, not at first use
    cfg.check_paths_exist();
    return cfg;
  }

  bool has(const std::string &key) const { return values_.count(key) > 0; }

  void set(const std::string &key, const std::string &value) {
    if (!detail::config_key_registry().count(key))
      throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string &get_string(const std::string &key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string &key, const std::string &dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::int64_t get_int(const std::string &key, std::int64_t dflt) const {
    if (!has(key)) return dflt;
    return parse_int(key, get_string(key));
  }

  std::int64_t get_int(const std::string &key) const {
    return parse_int(key, get_string(key));
  }

  double get_double(const std::string &key, double dflt) const {
    if (!has(key)) return dflt;
    const std::string &text = get_string(key);
    try {
      std::size_t used = 0;
      double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception &) {
      throw ConfigError("config key '" + key + "': bad number '" + text + "'");
    }
  }

  bool get_bool(const std::string &key, bool dflt) const {
    if (!has(key)) return dflt;
    const std::string &text = get_string(key);
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" +
                      text + "'");
  }

  std::uint64_t seed() const {
    const std::string &text = get_string("train.seed");
    // stoull quietly wraps a leading minus; only digit strings are seeds.
    if (text.empty() ||
        text.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("train.seed: bad unsigned integer '" + text + "'");
    try {
      std::size_t used = 0;
      unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception &) {
      throw ConfigError("train.seed: bad unsigned integer '" + text + "'");
    }
  }

  /// Sorted `key = value` lines; the canonical form that gets hashed and
  /// embedded in manifests and checkpoints.
  std::string normalized() const {
    std::ostringstream out;
    for (const auto &[k, v] : values_) out << k << " = " << v << '\n';
    return out.str();
  }

  const std::map<std::string, std::string> &values() const { return values_; }

  void check_paths_exist() const {
    for (const auto &[k, v] : values_) {
      if (k.rfind("paths.", 0) != 0) continue;
      if (!std::filesystem::exists(v))
        throw ConfigError("config key '" + k + "': path does not exist: " + v);
    }
  }

  // Typed views over the registry, each validated by the target module.

  int diffusion_steps() const {
    auto v = get_int("diffusion.steps", 100);
    if (v < 1 || v > 100000)
      throw ConfigError("diffusion.steps out of range: " + std::to_string(v));
    return static_cast<int>(v);
  }

  PriorKind prior_kind() const {
    return parse_prior_kind(get_string("diffusion.prior", "marginal"));
  }

  DenoiserConfig denoiser_config() const {
    DenoiserConfig c;
    c.layers = static_cast<int>(get_int("denoiser.layers", c.layers));
    c.hidden_node =
        static_cast<int>(get_int("denoiser.hidden_node", c.hidden_node));
    c.hidden_edge =
        static_cast<int>(get_int("denoiser.hidden_edge", c.hidden_edge));
    c.hidden_global =
        static_cast<int>(get_int("denoiser.hidden_global", c.hidden_global));
    c.heads = static_cast<int>(get_int("denoiser.heads", c.heads));
    c.time_embedding =
        static_cast<int>(get_int("denoiser.time_embedding", c.time_embedding));
    c.condition_dim =
        static_cast<int>(get_int("denoiser.condition_dim", c.condition_dim));
    c.validate();
    return c;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig c;
    c.layers = static_cast<int>(get_int("encoder.layers", c.layers));
    c.dim = static_cast<int>(get_int("encoder.dim", c.dim));
    c.heads = static_cast<int>(get_int("encoder.heads", c.heads));
    c.hidden = static_cast<int>(get_int("encoder.hidden", c.hidden));
    c.mz_embedding =
        static_cast<int>(get_int("encoder.mz_embedding", c.mz_embedding));
    c.fingerprint_bits = static_cast<int>(
        get_int("encoder.fingerprint_bits", c.fingerprint_bits));
    c.validate();
    return c;
  }

  int fingerprint_width() const {
    auto v = get_int("fingerprint.width", 2048);
    return static_cast<int>(v);
  }

  int fingerprint_radius() const {
    auto v = get_int("fingerprint.radius", 2);
    if (v < 0 || v > 16)
      throw ConfigError("fingerprint.radius out of range: " + std::to_string(v));
    return static_cast<int>(v);
  }

 private:
  static std::int64_t parse_int(const std::string &key,
                                const std::string &text) {
    try {
      std::size_t used = 0;
      long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception &) {
      throw ConfigError("config key '" + key + "': bad integer '" + text + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace msdiff

#endif  // MSDIFF_CLI_CONFIG_HPP
