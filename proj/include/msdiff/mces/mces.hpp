//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_MCES_MCES_HPP
#define MSDIFF_MCES_MCES_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

struct McesResult {
  double distance = 0.0;
  int matched_edges = 0;
  bool exact = true;
};

/// Histogram lower bound on the edit distance: edges are bucketed by
/// (unordered endpoint elements, bond type); every matched pair must agree on
/// its bucket, so distance >= sum of absolute bucket differences.
inline double mces_lower_bound(const MolecularGraph &g1,
                               const MolecularGraph &g2) {
  using Key = std::tuple<int, int, int>;
  std::map<Key, int> h;
  for (auto e : g1.edges()) {
    int a = static_cast<int>(g1.atom(e.i)), b = static_cast<int>(g1.atom(e.j));
    if (a > b) std::swap(a, b);
    ++h[{a, b, static_cast<int>(e.type)}];
  }
  for (auto e : g2.edges()) {
    int a = static_cast<int>(g2.atom(e.i)), b = static_cast<int>(g2.atom(e.j));
    if (a > b) std::swap(a, b);
    --h[{a, b, static_cast<int>(e.type)}];
  }
  int total = 0;
  for (auto &[k, v] : h) total += v < 0 ? -v : v;
  return static_cast<double>(total);
}

namespace detail {

/// Word-packed adjacency rows for the branch-and-bound clique search.
class BitGraph {
 public:
  explicit BitGraph(int n)
      : n_(n), words_((static_cast<std::size_t>(n) + 63) / 64),
        rows_(static_cast<std::size_t>(n) * words_, 0) {}

  void add_edge(int u, int v) {
    rows_[static_cast<std::size_t>(u) * words_ + static_cast<std::size_t>(v >> 6)] |=
        1ULL << (v & 63);
    rows_[static_cast<std::size_t>(v) * words_ + static_cast<std::size_t>(u >> 6)] |=
        1ULL << (u & 63);
  }

  const std::uint64_t *row(int u) const {
    return rows_.data() + static_cast<std::size_t>(u) * words_;
  }

  bool adjacent(int u, int v) const {
    return (row(u)[v >> 6] >> (v & 63)) & 1ULL;
  }

  int n() const { return n_; }
  std::size_t words() const { return words_; }

 private:
  int n_;
  std::size_t words_;
  std::vector<std::uint64_t> rows_;
};

/// Tomita-style maximum clique: candidates are greedily colored each call and
/// expanded in descending color order, pruning when depth + color <= best.
class MaxCliqueSolver {
 public:
  explicit MaxCliqueSolver(const BitGraph &g) : g_(g) {}

  int solve() {
    std::vector<int> all(static_cast<std::size_t>(g_.n()));
    for (int i = 0; i < g_.n(); ++i) all[static_cast<std::size_t>(i)] = i;
    best_ = 0;
    expand(all, 0);
    return best_;
  }

 private:
  const BitGraph &g_;
  int best_ = 0;

  void expand(const std::vector<int> &candidates, int depth) {
    if (candidates.empty()) {
      best_ = std::max(best_, depth);
      return;
    }
    // Greedy coloring; `ordered` holds (vertex, color) with colors ascending.
    std::vector<std::pair<int, int>> ordered;
    ordered.reserve(candidates.size());
    std::vector<int> uncolored = candidates;
    int color = 0;
    while (!uncolored.empty()) {
      ++color;
      std::vector<int> leftover;
      std::vector<int> cls;
      for (int v : uncolored) {
        bool clash = false;
        for (int u : cls) {
          if (g_.adjacent(u, v)) {
            clash = true;
            break;
          }
        }
        if (clash) leftover.push_back(v);
        else {
          cls.push_back(v);
          ordered.emplace_back(v, color);
        }
      }
      uncolored = std::move(leftover);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const auto &a, const auto &b) { return a.second < b.second; });

    for (std::size_t idx = ordered.size(); idx-- > 0;) {
      auto [v, c] = ordered[idx];
      if (depth + c <= best_) return;
      std::vector<int> next;
      for (std::size_t k = 0; k < idx; ++k) {
        int u = ordered[k].first;
        if (g_.adjacent(u, v)) next.push_back(u);
      }
      expand(next, depth + 1);
    }
  }
};

}  // namespace detail

/// Exact maximum common edge subgraph distance. Matched edges must agree on
/// bond type and endpoint elements, and the union of their endpoint maps must
/// stay a partial bijection. Reduction: each compatible oriented edge pair is
/// a vertex of a modular product graph; cliques are exactly the consistent
/// common edge subgraphs, so matched_edges is the maximum clique size and
/// distance = |E1| + |E2| - 2 * matched_edges.
///
/// With a threshold: when the histogram lower bound already reaches it, the
/// search is skipped and the bound is returned with exact=false.
inline McesResult mces_distance(const MolecularGraph &g1,
                                const MolecularGraph &g2,
                                std::optional<double> threshold = std::nullopt) {
  for (const MolecularGraph *g : {&g1, &g2}) {
    auto report = is_valid(*g);
    if (!report.ok())
      throw InvalidGraphError("mces_distance: " + report.reason());
  }
  if (threshold && *threshold < 0.0)
    throw InvalidGraphError("mces_distance: negative threshold");

  auto e1 = g1.edges();
  auto e2 = g2.edges();
  int total = static_cast<int>(e1.size() + e2.size());

  if (threshold) {
    double lb = mces_lower_bound(g1, g2);
    if (lb >= *threshold) {
      // Histogram overlap caps how many edges could ever match.
      int cap = (total - static_cast<int>(lb)) / 2;
      return {lb, cap, false};
    }
  }

  // Oriented compatible edge pairs. Orientation fixes which endpoint of the
  // g1 edge maps to which endpoint of the g2 edge, so pairwise-consistent
  // selections compose into one global partial bijection.
  struct PNode {
    int p, q;  // edge indices
    int a, b;  // g1 endpoints
    int c, d;  // their images in g2
  };
  std::vector<PNode> nodes;
  for (std::size_t p = 0; p < e1.size(); ++p) {
    for (std::size_t q = 0; q < e2.size(); ++q) {
      if (e1[p].type != e2[q].type) continue;
      int i = e1[p].i, j = e1[p].j, k = e2[q].i, l = e2[q].j;
      if (g1.atom(i) == g2.atom(k) && g1.atom(j) == g2.atom(l))
        nodes.push_back({static_cast<int>(p), static_cast<int>(q), i, j, k, l});
      if (g1.atom(i) == g2.atom(l) && g1.atom(j) == g2.atom(k))
        nodes.push_back({static_cast<int>(p), static_cast<int>(q), i, j, l, k});
    }
  }

  int m = static_cast<int>(nodes.size());
  detail::BitGraph product(m);
  auto consistent = [](int x1, int y1, int x2, int y2) {
    return (x1 == x2) == (y1 == y2);
  };
  for (int u = 0; u < m; ++u) {
    for (int v = u + 1; v < m; ++v) {
      const PNode &nu = nodes[static_cast<std::size_t>(u)];
      const PNode &nv = nodes[static_cast<std::size_t>(v)];
      if (nu.p == nv.p || nu.q == nv.q) continue;
      if (consistent(nu.a, nu.c, nv.a, nv.c) &&
          consistent(nu.a, nu.c, nv.b, nv.d) &&
          consistent(nu.b, nu.d, nv.a, nv.c) &&
          consistent(nu.b, nu.d, nv.b, nv.d))
        product.add_edge(u, v);
    }
  }

  int matched = m == 0 ? 0 : detail::MaxCliqueSolver(product).solve();
  return {static_cast<double>(total - 2 * matched), matched, true};
}

}  // namespace msdiff

#endif  // MSDIFF_MCES_MCES_HPP
