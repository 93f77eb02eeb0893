//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_ISOMORPHISM_HPP
#define MSDIFF_CHEM_ISOMORPHISM_HPP

#include <algorithm>
#include <array>
#include <vector>

#include "msdiff/chem/mol_graph.hpp"

namespace msdiff {

namespace detail {

/// Match order: BFS from atom 0, components appended one after another, so
/// every non-root atom has a previously mapped neighbor inside its component.
inline std::vector<int> bfs_match_order(const MolecularGraph &g) {
  int n = g.atom_count();
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int root = 0; root < n; ++root) {
    if (seen[static_cast<std::size_t>(root)]) continue;
    std::vector<int> queue{root};
    seen[static_cast<std::size_t>(root)] = true;
    std::size_t head = 0;
    while (head < queue.size()) {
      int u = queue[head++];
      order.push_back(u);
      for (int v = 0; v < n; ++v) {
        if (v != u && !seen[static_cast<std::size_t>(v)] &&
            g.bond(u, v) != BondType::None) {
          seen[static_cast<std::size_t>(v)] = true;
          queue.push_back(v);
        }
      }
    }
  }
  return order;
}

inline bool extend_mapping(const MolecularGraph &g1, const MolecularGraph &g2,
                           const std::vector<int> &order, std::size_t depth,
                           std::vector<int> &map, std::vector<bool> &used) {
  if (depth == order.size()) return true;
  int u = order[depth];
  int n = g1.atom_count();
  for (int cand = 0; cand < n; ++cand) {
    if (used[static_cast<std::size_t>(cand)]) continue;
    if (g2.atom(cand) != g1.atom(u)) continue;
    if (g2.degree(cand) != g1.degree(u)) continue;
    bool ok = true;
    for (std::size_t d = 0; d < depth; ++d) {
      int w = order[d];
      if (g1.bond(u, w) != g2.bond(cand, map[static_cast<std::size_t>(w)])) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    map[static_cast<std::size_t>(u)] = cand;
    used[static_cast<std::size_t>(cand)] = true;
    if (extend_mapping(g1, g2, order, depth + 1, map, used)) return true;
    used[static_cast<std::size_t>(cand)] = false;
  }
  return false;
}

}  // namespace detail

/// True iff an atom bijection exists preserving element and bond-type labels.
/// Backtracking with label and degree pruning over a connectivity-friendly
/// match order; exact, intended for small molecular graphs.
inline bool is_isomorphic(const MolecularGraph &g1, const MolecularGraph &g2) {
  int n = g1.atom_count();
  if (n != g2.atom_count()) return false;
  if (n == 0) return true;

  std::array<int, kElementCount> h1{}, h2{};
  for (int i = 0; i < n; ++i) {
    ++h1[static_cast<std::size_t>(g1.atom(i))];
    ++h2[static_cast<std::size_t>(g2.atom(i))];
  }
  if (h1 != h2) return false;

  std::array<int, kBondTypeCount> b1{}, b2{};
  std::vector<int> deg1, deg2;
  for (int i = 0; i < n; ++i) {
    deg1.push_back(g1.degree(i));
    deg2.push_back(g2.degree(i));
    for (int j = i + 1; j < n; ++j) {
      ++b1[static_cast<std::size_t>(g1.bond(i, j))];
      ++b2[static_cast<std::size_t>(g2.bond(i, j))];
    }
  }
  if (b1 != b2) return false;
  std::sort(deg1.begin(), deg1.end());
  std::sort(deg2.begin(), deg2.end());
  if (deg1 != deg2) return false;

  auto order = detail::bfs_match_order(g1);
  std::vector<int> map(static_cast<std::size_t>(n), -1);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  return detail::extend_mapping(g1, g2, order, 0, map, used);
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_ISOMORPHISM_HPP
