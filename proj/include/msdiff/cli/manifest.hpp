//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Run manifests: every pipeline command records its config snapshot, the
// content hashes of its inputs and outputs, the seed, wall-clock time, and
// final metrics. The snapshot's hash is stored alongside the snapshot, so a
// manifest is self-verifying; evaluate refuses sample sets whose manifest
// fails that check.
//

#ifndef MSDIFF_CLI_MANIFEST_HPP
#define MSDIFF_CLI_MANIFEST_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "msdiff/cli/config.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/hash.hpp"

namespace msdiff {

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  double wallclock_seconds = 0.0;
  RunConfig config;
  std::map<std::string, std::string> input_hashes;   // config path key -> sha256
  std::map<std::string, std::string> metrics;        // metric name -> value text
  std::map<std::string, std::string> output_hashes;  // file name -> sha256
};

/// Same flat `key = value` shape as configs. Atomic: written to a temp file
/// in the same directory, then renamed into place.
inline void write_manifest(const std::string &path, const RunManifest &m) {
  std::ostringstream out;
  out.precision(17);
  out << "manifest.version = 1\n";
  out << "command = " << m.command << '\n';
  out << "seed = " << m.seed << '\n';
  out << "wallclock_seconds = " << m.wallclock_seconds << '\n';
  out << "config.sha256 = " << sha256_hex(m.config.normalized()) << '\n';
  for (const auto &[k, v] : m.config.values())
    out << "config." << k << " = " << v << '\n';
  for (const auto &[k, v] : m.input_hashes)
    out << "input." << k << ".sha256 = " << v << '\n';
  for (const auto &[k, v] : m.metrics) out << "metric." << k << " = " << v << '\n';
  for (const auto &[k, v] : m.output_hashes)
    out << "output." << k << ".sha256 = " << v << '\n';
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write manifest: " + tmp);
    f << out.str();
    if (!f) throw DataError("manifest write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// Parses a manifest, rebuilds the embedded config snapshot, and verifies
/// the recorded hash against it. Any tampering with either side fails.
inline RunManifest read_manifest(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::map<std::string, std::string> pairs;
  std::string config_lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = detail::trim_ws(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected key = value");
    std::string key = detail::trim_ws(stripped.substr(0, eq));
    std::string value = detail::trim_ws(stripped.substr(eq + 1));
    if (key.rfind("config.", 0) == 0 && key != "config.sha256") {
      config_lines += key.substr(7) + " = " + value + "\n";
    } else {
      pairs[key] = value;
    }
  }
  if (pairs["manifest.version"] != "1")
    throw DataError(path + ": unsupported manifest version");

  RunManifest m;
  m.command = pairs["command"];
  m.config = RunConfig::parse_string(config_lines, path + " (config snapshot)");
  auto hash_it = pairs.find("config.sha256");
  if (hash_it == pairs.end())
    throw DataError(path + ": manifest has no config hash");
  if (hash_it->second != sha256_hex(m.config.normalized()))
    throw DataError(path +
                    ": manifest hash mismatches its config snapshot; the "
                    "manifest or the snapshot was modified after the run");
  try {
    m.seed = std::stoull(pairs["seed"]);
    m.wallclock_seconds = std::stod(pairs["wallclock_seconds"]);
  } catch (const std::exception &) {
    throw DataError(path + ": malformed seed or wallclock field");
  }
  for (const auto &[k, v] : pairs) {
    if (k.rfind("input.", 0) == 0 && k.size() > 13 &&
        k.compare(k.size() - 7, 7, ".sha256") == 0)
      m.input_hashes[k.substr(6, k.size() - 13)] = v;
    else if (k.rfind("metric.", 0) == 0)
      m.metrics[k.substr(7)] = v;
    else if (k.rfind("output.", 0) == 0 && k.size() > 14 &&
             k.compare(k.size() - 7, 7, ".sha256") == 0)
      m.output_hashes[k.substr(7, k.size() - 14)] = v;
  }
  return m;
}

}  // namespace msdiff

#endif  // MSDIFF_CLI_MANIFEST_HPP
