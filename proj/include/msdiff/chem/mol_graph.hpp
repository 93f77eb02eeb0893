//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_MOL_GRAPH_HPP
#define MSDIFF_CHEM_MOL_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/chem/element.hpp"
#include "msdiff/chem/formula.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

/// Edge categories. Index order is frozen; it is the one-hot channel order of
/// every adjacency tensor and of the transition-matrix rows.
enum class BondType : std::uint8_t {
  None = 0,
  Single = 1,
  Double = 2,
  Triple = 3,
  Aromatic = 4,
};

inline constexpr int kBondTypeCount = 5;

inline double bond_order(BondType b) {
  switch (b) {
    case BondType::None: return 0.0;
    case BondType::Single: return 1.0;
    case BondType::Double: return 2.0;
    case BondType::Triple: return 3.0;
    case BondType::Aromatic: return 1.5;
  }
  return 0.0;
}

inline char bond_type_char(BondType b) {
  switch (b) {
    case BondType::None: return '.';
    case BondType::Single: return '-';
    case BondType::Double: return '=';
    case BondType::Triple: return '#';
    case BondType::Aromatic: return ':';
  }
  return '?';
}

struct Edge {
  int i;
  int j;
  BondType type;
};

/// Heavy-atom molecular graph: typed atoms plus a symmetric bond-type matrix
/// with a None diagonal. Hydrogens are implicit.
class MolecularGraph {
 public:
  MolecularGraph() = default;

  explicit MolecularGraph(std::vector<Element> atoms)
      : atoms_(std::move(atoms)),
        bonds_(atoms_.size() * atoms_.size(), BondType::None) {}

  int atom_count() const { return static_cast<int>(atoms_.size()); }

  Element atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }

  const std::vector<Element> &atoms() const { return atoms_; }

  BondType bond(int i, int j) const {
    return bonds_[static_cast<std::size_t>(i) * atoms_.size() +
                  static_cast<std::size_t>(j)];
  }

  /// Sets both (i,j) and (j,i). Self-bonds are rejected.
  void set_bond(int i, int j, BondType type) {
    if (i == j) throw InvalidGraphError("self-bond on atom " + std::to_string(i));
    bonds_[static_cast<std::size_t>(i) * atoms_.size() + j] = type;
    bonds_[static_cast<std::size_t>(j) * atoms_.size() + i] = type;
  }

  int degree(int i) const {
    int d = 0;
    for (int j = 0; j < atom_count(); ++j)
      if (j != i && bond(i, j) != BondType::None) ++d;
    return d;
  }

  std::vector<int> neighbors(int i) const {
    std::vector<int> out;
    for (int j = 0; j < atom_count(); ++j)
      if (j != i && bond(i, j) != BondType::None) out.push_back(j);
    return out;
  }

  /// Upper-triangle edges (i < j) with non-None type, in (i, j) order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (int i = 0; i < atom_count(); ++i)
      for (int j = i + 1; j < atom_count(); ++j)
        if (bond(i, j) != BondType::None) out.push_back({i, j, bond(i, j)});
    return out;
  }

  int edge_count() const {
    int m = 0;
    for (int i = 0; i < atom_count(); ++i)
      for (int j = i + 1; j < atom_count(); ++j)
        if (bond(i, j) != BondType::None) ++m;
    return m;
  }

  /// Heavy-atom composition; hydrogens left at zero.
  ChemicalFormula heavy_formula() const {
    ChemicalFormula f;
    for (Element e : atoms_) ++f.count(e);
    return f;
  }

  /// Heavy atoms plus the non-negative part of every implicit-hydrogen
  /// deficit. Valence-violating atoms contribute zero hydrogens.
  ChemicalFormula full_formula() const;

  bool operator==(const MolecularGraph &other) const {
    return atoms_ == other.atoms_ && bonds_ == other.bonds_;
  }

  /// Relabels atoms: result atom perm[i] is this graph's atom i.
  MolecularGraph permuted(const std::vector<int> &perm) const {
    MolecularGraph out;
    out.atoms_.resize(atoms_.size());
    out.bonds_.assign(bonds_.size(), BondType::None);
    for (int i = 0; i < atom_count(); ++i)
      out.atoms_[static_cast<std::size_t>(perm[i])] = atoms_[i];
    for (int i = 0; i < atom_count(); ++i)
      for (int j = i + 1; j < atom_count(); ++j)
        if (bond(i, j) != BondType::None)
          out.set_bond(perm[i], perm[j], bond(i, j));
    return out;
  }

 private:
  std::vector<Element> atoms_;
  std::vector<BondType> bonds_;
};

/// Per-atom hydrogen deficit: max_valence minus floor of the summed bond
/// orders of incident bonds. May be negative; validity checking reports those
/// atoms, this function just does the arithmetic.
inline std::vector<int> implicit_hydrogens(const MolecularGraph &g) {
  std::vector<int> out(static_cast<std::size_t>(g.atom_count()), 0);
  for (int i = 0; i < g.atom_count(); ++i) {
    double order = 0.0;
    for (int j = 0; j < g.atom_count(); ++j)
      if (j != i) order += bond_order(g.bond(i, j));
    out[static_cast<std::size_t>(i)] =
        max_valence(g.atom(i)) - static_cast<int>(std::floor(order + 1e-9));
  }
  return out;
}

inline ChemicalFormula MolecularGraph::full_formula() const {
  ChemicalFormula f = heavy_formula();
  for (int h : implicit_hydrogens(*this))
    if (h > 0) f.hydrogens += h;
  return f;
}

/// Validity verdict. `ok()` is true iff the graph is connected, no atom
/// exceeds its valence, and every aromatic bond lies on an aromatic cycle.
struct ValidityReport {
  enum class Code {
    Valid,
    Empty,
    Disconnected,
    ValenceExceeded,
    DanglingAromatic,
  };

  Code code = Code::Valid;
  int atom = -1;       // offending atom for ValenceExceeded
  int atom_other = -1; // second endpoint for DanglingAromatic

  bool ok() const { return code == Code::Valid; }

  std::string reason() const {
    switch (code) {
      case Code::Valid: return "valid";
      case Code::Empty: return "empty graph";
      case Code::Disconnected: return "disconnected";
      case Code::ValenceExceeded:
        return "valence exceeded at atom " + std::to_string(atom);
      case Code::DanglingAromatic:
        return "aromatic bond (" + std::to_string(atom) + "," +
               std::to_string(atom_other) + ") not on an aromatic cycle";
    }
    return "unknown";
  }
};

namespace detail {

/// Bridge finding (iterative DFS, low-link). `use_edge(i, j)` selects which
/// bonds participate. Returns a vector keyed by i*n+j marking bridge edges.
template <typename EdgePred>
std::vector<bool> find_bridges(const MolecularGraph &g, EdgePred use_edge) {
  int n = g.atom_count();
  std::vector<bool> bridge(static_cast<std::size_t>(n) * n, false);
  std::vector<int> disc(n, -1), low(n, 0), parent(n, -1);
  int timer = 0;
  for (int root = 0; root < n; ++root) {
    if (disc[root] != -1) continue;
    std::vector<std::pair<int, int>> stack;  // (node, next neighbor index)
    stack.emplace_back(root, 0);
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      auto &[u, next] = stack.back();
      if (next < n) {
        int v = next++;
        if (v == u || !use_edge(u, v) || g.bond(u, v) == BondType::None)
          continue;
        if (disc[v] == -1) {
          parent[v] = u;
          disc[v] = low[v] = timer++;
          stack.emplace_back(v, 0);
        } else if (v != parent[u]) {
          low[u] = std::min(low[u], disc[v]);
        }
      } else {
        stack.pop_back();
        if (!stack.empty()) {
          int p = stack.back().first;
          low[p] = std::min(low[p], low[u]);
          if (low[u] > disc[p]) {
            bridge[static_cast<std::size_t>(p) * n + u] = true;
            bridge[static_cast<std::size_t>(u) * n + p] = true;
          }
        }
      }
    }
  }
  return bridge;
}

}  // namespace detail

inline ValidityReport is_valid(const MolecularGraph &g) {
  int n = g.atom_count();
  if (n == 0) return {ValidityReport::Code::Empty};

  // Connectivity over non-None bonds.
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<int> stack{0};
  seen[0] = true;
  int reached = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v = 0; v < n; ++v) {
      if (v != u && !seen[v] && g.bond(u, v) != BondType::None) {
        seen[static_cast<std::size_t>(v)] = true;
        ++reached;
        stack.push_back(v);
      }
    }
  }
  if (reached != n) return {ValidityReport::Code::Disconnected};

  auto deficits = implicit_hydrogens(g);
  for (int i = 0; i < n; ++i) {
    if (deficits[static_cast<std::size_t>(i)] < 0)
      return {ValidityReport::Code::ValenceExceeded, i};
  }

  // An aromatic bond must sit on a cycle made of aromatic bonds, i.e. must
  // not be a bridge of the aromatic-only subgraph.
  auto aromatic_only = [&g](int i, int j) {
    return g.bond(i, j) == BondType::Aromatic;
  };
  auto bridge = detail::find_bridges(g, aromatic_only);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (g.bond(i, j) == BondType::Aromatic &&
          bridge[static_cast<std::size_t>(i) * n + j]) {
        return {ValidityReport::Code::DanglingAromatic, i, j};
      }
    }
  }
  return {};
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_MOL_GRAPH_HPP
