//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_FP_FINGERPRINT_HPP
#define MSDIFF_FP_FINGERPRINT_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/hash.hpp"

namespace msdiff {

/// Fixed-width bit vector. Bit 0 is the least significant bit of word 0; the
/// hex form prints the most significant nibble first.
class Fingerprint {
 public:
  Fingerprint() = default;

  explicit Fingerprint(int width)
      : width_(width),
        words_(static_cast<std::size_t>((width + 63) / 64), 0) {
    if (width <= 0 || (width & 3) != 0)
      throw WidthMismatchError("fingerprint width must be a positive multiple of 4");
  }

  int width() const { return width_; }

  void set_bit(int i) {
    words_[static_cast<std::size_t>(i) >> 6] |= 1ULL << (i & 63);
  }

  bool test_bit(int i) const {
    return (words_[static_cast<std::size_t>(i) >> 6] >> (i & 63)) & 1ULL;
  }

  int popcount() const {
    int total = 0;
    for (std::uint64_t w : words_) total += std::popcount(w);
    return total;
  }

  const std::vector<std::uint64_t> &words() const { return words_; }

  bool operator==(const Fingerprint &other) const {
    return width_ == other.width_ && words_ == other.words_;
  }

  std::string to_hex() const {
    static const char digits[] = "0123456789abcdef";
    std::string out(static_cast<std::size_t>(width_ / 4), '0');
    for (int nib = 0; nib < width_ / 4; ++nib) {
      int value = 0;
      for (int k = 0; k < 4; ++k) {
        int bit = width_ - 4 * (nib + 1) + k;
        if (test_bit(bit)) value |= 1 << k;
      }
      out[static_cast<std::size_t>(nib)] = digits[value];
    }
    return out;
  }

  static Fingerprint from_hex(std::string_view hex) {
    if (hex.empty()) throw DataError("empty fingerprint hex string");
    Fingerprint fp(static_cast<int>(hex.size()) * 4);
    for (std::size_t nib = 0; nib < hex.size(); ++nib) {
      char c = hex[nib];
      int value;
      if (c >= '0' && c <= '9') value = c - '0';
      else if (c >= 'a' && c <= 'f') value = c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') value = c - 'A' + 10;
      else throw DataError(std::string("bad hex digit '") + c + "' in fingerprint");
      for (int k = 0; k < 4; ++k) {
        if (value & (1 << k))
          fp.set_bit(fp.width_ - 4 * (static_cast<int>(nib) + 1) + k);
      }
    }
    return fp;
  }

 private:
  int width_ = 0;
  std::vector<std::uint64_t> words_;
};

namespace detail {

/// Initial circular-fingerprint atom invariant, hashed with FNV-1a. Implicit
/// hydrogen counts are non-negative here because the caller guarantees a
/// valid graph. Total bond order is doubled to stay integral with aromatics.
inline std::uint64_t morgan_initial_invariant(const MolecularGraph &g, int i,
                                              const std::vector<int> &hydro,
                                              bool in_ring) {
  double order = 0.0;
  for (int j = 0; j < g.atom_count(); ++j)
    if (j != i) order += bond_order(g.bond(i, j));
  Fnv1a h;
  h.update_u32(static_cast<std::uint32_t>(g.atom(i)));
  h.update_u32(static_cast<std::uint32_t>(g.degree(i)));
  h.update_u32(static_cast<std::uint32_t>(hydro[static_cast<std::size_t>(i)]));
  h.update_u32(static_cast<std::uint32_t>(std::lround(order * 2.0)));
  h.update_u32(in_ring ? 1u : 0u);
  return h.digest();
}

/// Feature values of the circular decomposition: one per atom at radius 0,
/// then per (atom, radius) environments deduplicated by their bond set. When
/// two environments share a bond set, the numerically smallest hash wins so
/// the feature set is permutation-invariant.
inline std::vector<std::uint64_t> morgan_features(const MolecularGraph &g,
                                                  int radius) {
  int n = g.atom_count();
  auto hydro = implicit_hydrogens(g);
  auto bridge = find_bridges(g, [](int, int) { return true; });
  std::vector<std::uint64_t> hash(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    bool in_ring = false;
    for (int j = 0; j < n && !in_ring; ++j)
      if (j != i && g.bond(i, j) != BondType::None &&
          !bridge[static_cast<std::size_t>(i) * n + j])
        in_ring = true;
    hash[static_cast<std::size_t>(i)] =
        morgan_initial_invariant(g, i, hydro, in_ring);
  }

  std::vector<std::uint64_t> features(hash.begin(), hash.end());

  // BFS distances from every atom, for environment bond sets.
  std::vector<std::vector<int>> dist(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    auto &d = dist[static_cast<std::size_t>(s)];
    d.assign(static_cast<std::size_t>(n), -1);
    d[static_cast<std::size_t>(s)] = 0;
    std::vector<int> queue{s};
    std::size_t head = 0;
    while (head < queue.size()) {
      int u = queue[head++];
      for (int v = 0; v < n; ++v) {
        if (v != u && d[static_cast<std::size_t>(v)] < 0 &&
            g.bond(u, v) != BondType::None) {
          d[static_cast<std::size_t>(v)] = d[static_cast<std::size_t>(u)] + 1;
          queue.push_back(v);
        }
      }
    }
  }

  auto edge_list = g.edges();
  std::set<std::vector<int>> seen_envs;
  // An environment that grew no bonds never contributes.
  seen_envs.insert(std::vector<int>{});

  for (int r = 1; r <= radius; ++r) {
    std::vector<std::uint64_t> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<std::uint32_t, std::uint64_t>> nb;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        BondType b = g.bond(i, j);
        if (b != BondType::None)
          nb.emplace_back(static_cast<std::uint32_t>(b),
                          hash[static_cast<std::size_t>(j)]);
      }
      std::sort(nb.begin(), nb.end());
      Fnv1a h;
      h.update_u32(static_cast<std::uint32_t>(r));
      h.update_u64(hash[static_cast<std::size_t>(i)]);
      for (auto &[bt, nh] : nb) {
        h.update_u32(bt);
        h.update_u64(nh);
      }
      next[static_cast<std::size_t>(i)] = h.digest();
    }
    hash = std::move(next);

    // Environment of atom i at radius r: every bond with an endpoint at
    // BFS distance <= r-1 from i.
    std::map<std::vector<int>, std::uint64_t> kept;
    for (int i = 0; i < n; ++i) {
      std::vector<int> env;
      for (std::size_t e = 0; e < edge_list.size(); ++e) {
        const auto &ed = edge_list[e];
        int da = dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(ed.i)];
        int db = dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(ed.j)];
        if ((da >= 0 && da <= r - 1) || (db >= 0 && db <= r - 1))
          env.push_back(static_cast<int>(e));
      }
      if (seen_envs.count(env)) continue;
      auto it = kept.find(env);
      if (it == kept.end() || hash[static_cast<std::size_t>(i)] < it->second)
        kept[env] = hash[static_cast<std::size_t>(i)];
    }
    for (auto &[env, value] : kept) {
      seen_envs.insert(env);
      features.push_back(value);
    }
  }
  return features;
}

}  // namespace detail

/// Circular (Morgan/ECFP-style) fingerprint. Deterministic, permutation
/// invariant, FNV-1a hashed; bit index is the feature hash mod width. No bit
/// compatibility with external toolkits is promised.
inline Fingerprint morgan_fingerprint(const MolecularGraph &g, int width = 2048,
                                      int radius = 2) {
  if (width <= 0 || (width & (width - 1)) != 0)
    throw WidthMismatchError("fingerprint width must be a power of two");
  if (radius < 0) throw WidthMismatchError("fingerprint radius must be >= 0");
  auto report = is_valid(g);
  if (!report.ok())
    throw InvalidGraphError("morgan_fingerprint: " + report.reason());
  Fingerprint fp(width);
  for (std::uint64_t f : detail::morgan_features(g, radius))
    fp.set_bit(static_cast<int>(f % static_cast<std::uint64_t>(width)));
  return fp;
}

/// |a AND b| / |a OR b| with the empty/empty case defined as 1.
inline double tanimoto(const Fingerprint &a, const Fingerprint &b) {
  if (a.width() != b.width())
    throw WidthMismatchError("tanimoto: fingerprint widths differ (" +
                             std::to_string(a.width()) + " vs " +
                             std::to_string(b.width()) + ")");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) {
    inter += std::popcount(a.words()[w] & b.words()[w]);
    uni += std::popcount(a.words()[w] | b.words()[w]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct FingerprintRecord {
  std::string id;
  Fingerprint fp;
};

/// Fingerprint file: one `<id>\t<hex>` record per line, most significant
/// nibble first, `#` comments and blank lines ignored.
inline std::vector<FingerprintRecord> read_fingerprint_file(
    const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fingerprint file: " + path);
  std::vector<FingerprintRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <id>\\t<hex>");
    out.push_back({line.substr(0, tab),
                   Fingerprint::from_hex(std::string_view(line).substr(tab + 1))});
  }
  return out;
}

inline void write_fingerprint_file(const std::string &path,
                                   const std::vector<FingerprintRecord> &recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write fingerprint file: " + path);
  for (const auto &r : recs) out << r.id << '\t' << r.fp.to_hex() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace msdiff

#endif  // MSDIFF_FP_FINGERPRINT_HPP
