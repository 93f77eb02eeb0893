//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_CANONICAL_HPP
#define MSDIFF_CHEM_CANONICAL_HPP

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "msdiff/chem/mol_graph.hpp"

namespace msdiff {

namespace detail {

/// One round of neighborhood refinement: new rank = dense index of
/// (old rank, sorted multiset of (bond type, neighbor old rank)).
inline std::vector<int> refine_once(const MolecularGraph &g,
                                    const std::vector<int> &rank) {
  int n = g.atom_count();
  using Sig = std::pair<int, std::vector<std::pair<int, int>>>;
  std::vector<Sig> sigs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<int, int>> nb;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      BondType b = g.bond(i, j);
      if (b != BondType::None)
        nb.emplace_back(static_cast<int>(b), rank[static_cast<std::size_t>(j)]);
    }
    std::sort(nb.begin(), nb.end());
    sigs[static_cast<std::size_t>(i)] = {rank[static_cast<std::size_t>(i)],
                                         std::move(nb)};
  }
  std::map<Sig, int> dense;
  for (const Sig &s : sigs) dense.emplace(s, 0);
  int next = 0;
  for (auto &[sig, idx] : dense) idx = next++;
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] =
      dense[sigs[static_cast<std::size_t>(i)]];
  return out;
}

inline std::vector<int> refine_to_fixpoint(const MolecularGraph &g,
                                           std::vector<int> rank) {
  while (true) {
    auto next = refine_once(g, rank);
    if (next == rank) return rank;
    rank = std::move(next);
  }
}

/// Serialization of the graph relabeled by a discrete rank vector. Encodes
/// atom count, element sequence, and the sorted typed edge list, so two equal
/// strings denote identical labeled graphs.
inline std::string serialize_by_rank(const MolecularGraph &g,
                                     const std::vector<int> &rank) {
  int n = g.atom_count();
  std::vector<int> pos(static_cast<std::size_t>(n));  // rank -> original index
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(
      rank[static_cast<std::size_t>(i)])] = i;
  std::string out = "n" + std::to_string(n) + "|a";
  for (int r = 0; r < n; ++r) {
    out += std::to_string(static_cast<int>(g.atom(pos[static_cast<std::size_t>(r)])));
    out += ',';
  }
  out += "|b";
  std::vector<std::tuple<int, int, int>> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (g.bond(i, j) == BondType::None) continue;
      int ri = rank[static_cast<std::size_t>(i)];
      int rj = rank[static_cast<std::size_t>(j)];
      if (ri > rj) std::swap(ri, rj);
      edges.emplace_back(ri, rj, static_cast<int>(g.bond(i, j)));
    }
  }
  std::sort(edges.begin(), edges.end());
  for (auto &[a, b, t] : edges) {
    out += std::to_string(a) + "-" + std::to_string(b) + ":" +
           std::to_string(t) + ",";
  }
  return out;
}

inline bool rank_discrete(const std::vector<int> &rank) {
  int n = static_cast<int>(rank.size());
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int r : rank) {
    if (r < 0 || r >= n || seen[static_cast<std::size_t>(r)]) return false;
    seen[static_cast<std::size_t>(r)] = true;
  }
  return true;
}

/// Individualization-refinement: whenever refinement stalls on a non-discrete
/// partition, branch on every member of the first smallest non-singleton
/// class and keep the lexicographically smallest serialization. The branch
/// set is determined by the partition alone, so the result is invariant
/// under relabeling of the input.
inline std::string canonical_serialize(const MolecularGraph &g,
                                       std::vector<int> rank) {
  rank = refine_to_fixpoint(g, rank);
  if (rank_discrete(rank)) return serialize_by_rank(g, rank);

  int n = g.atom_count();
  std::vector<int> class_size(static_cast<std::size_t>(n), 0);
  for (int r : rank) ++class_size[static_cast<std::size_t>(r)];
  int target = -1;
  for (int r = 0; r < n; ++r) {
    if (class_size[static_cast<std::size_t>(r)] < 2) continue;
    if (target == -1 || class_size[static_cast<std::size_t>(r)] <
                            class_size[static_cast<std::size_t>(target)])
      target = r;
  }

  std::string best;
  for (int i = 0; i < n; ++i) {
    if (rank[static_cast<std::size_t>(i)] != target) continue;
    auto branched = rank;
    // Split atom i off into its own class, ahead of its former classmates.
    for (int j = 0; j < n; ++j)
      if (branched[static_cast<std::size_t>(j)] >= target)
        ++branched[static_cast<std::size_t>(j)];
    branched[static_cast<std::size_t>(i)] = target;
    std::string s = canonical_serialize(g, branched);
    if (best.empty() || s < best) best = std::move(s);
  }
  return best;
}

}  // namespace detail

/// Permutation-invariant byte string; equal keys denote isomorphic graphs
/// with matching atom and bond labels. Backed by iterative refinement plus
/// individualization, lexicographically smallest serialization.
inline std::string canonical_key(const MolecularGraph &g) {
  if (g.atom_count() == 0) return "n0|a|b";
  std::vector<int> rank(static_cast<std::size_t>(g.atom_count()));
  for (int i = 0; i < g.atom_count(); ++i)
    rank[static_cast<std::size_t>(i)] = static_cast<int>(g.atom(i));
  return detail::canonical_serialize(g, rank);
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_CANONICAL_HPP
