//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_SMILES_HPP
#define MSDIFF_CHEM_SMILES_HPP

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msdiff/chem/element.hpp"
#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

struct SmilesParseResult {
  MolecularGraph graph;
  std::vector<std::string> warnings;
};

namespace detail {

struct RawAtom {
  int elem;  // index into kElementTable, or -1 for an explicit hydrogen
  bool aromatic;
};

struct RawBond {
  int a;
  int b;
  char ann;  // 0 default, '-', '=', '#', ':'
};

class SmilesParser {
 public:
  explicit SmilesParser(std::string_view text) : text_(text) {}

  SmilesParseResult run() {
    parse_all();
    return finish();
  }

  std::vector<std::string> warnings;

 private:
  std::string_view text_;
  std::size_t p_ = 0;

  std::vector<RawAtom> atoms_;
  std::vector<RawBond> bonds_;
  int prev_ = -1;
  char pending_ = 0;
  bool has_pending_ = false;
  std::vector<int> branch_stack_;
  // ring number -> (atom, annotation, has annotation)
  std::map<int, std::tuple<int, char, bool>> open_rings_;

  [[noreturn]] void fail(const std::string &msg) const {
    throw ParseError("SMILES: " + msg + " at position " + std::to_string(p_));
  }

  bool done() const { return p_ >= text_.size(); }
  char peek() const { return done() ? '\0' : text_[p_]; }
  char peek2() const { return p_ + 1 < text_.size() ? text_[p_ + 1] : '\0'; }

  void warn(const std::string &msg) { warnings.push_back(msg); }

  void add_bond(int a, int b, char ann) {
    if (a == b) fail("ring bond joins an atom to itself");
    for (const RawBond &rb : bonds_) {
      if ((rb.a == a && rb.b == b) || (rb.a == b && rb.b == a))
        fail("duplicate bond between atoms " + std::to_string(a) + " and " +
             std::to_string(b));
    }
    bonds_.push_back({a, b, ann});
  }

  char take_pending() {
    char c = has_pending_ ? pending_ : 0;
    has_pending_ = false;
    pending_ = 0;
    return c;
  }

  void set_pending(char c) {
    if (has_pending_) fail("two bond symbols in a row");
    pending_ = c;
    has_pending_ = true;
  }

  void on_atom(int elem, bool aromatic) {
    int idx = static_cast<int>(atoms_.size());
    atoms_.push_back({elem, aromatic});
    if (prev_ >= 0) add_bond(prev_, idx, take_pending());
    else if (has_pending_) fail("bond symbol before first atom");
    prev_ = idx;
  }

  void on_ring_digit(int number) {
    if (prev_ < 0) fail("ring closure before any atom");
    char ann = take_pending();
    auto it = open_rings_.find(number);
    if (it == open_rings_.end()) {
      open_rings_[number] = {prev_, ann, ann != 0};
      return;
    }
    auto [other, open_ann, open_has] = it->second;
    open_rings_.erase(it);
    char eff = 0;
    if (open_has && ann != 0 && open_ann != ann)
      fail("conflicting bond symbols on ring closure " + std::to_string(number));
    eff = open_has ? open_ann : ann;
    add_bond(other, prev_, eff);
  }

  // Bracket atom: [isotope? symbol chirality? Hcount? charge? class?]
  void parse_bracket() {
    ++p_;  // '['
    if (std::isdigit(static_cast<unsigned char>(peek()))) {
      while (std::isdigit(static_cast<unsigned char>(peek()))) ++p_;
      warn("isotope label stripped");
    }
    int elem = -2;
    bool aromatic = false;
    char c = peek();
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      if (std::islower(static_cast<unsigned char>(peek2()))) sym += peek2();
      if (sym == "H") {
        elem = -1;
        ++p_;
      } else {
        auto e = element_from_symbol(sym);
        if (!e) throw UnknownElementError(sym);
        elem = static_cast<int>(*e);
        p_ += sym.size();
      }
    } else if (std::islower(static_cast<unsigned char>(c))) {
      std::string sym(1, c);
      if (std::islower(static_cast<unsigned char>(peek2()))) sym += peek2();
      std::string cap = sym;
      cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
      auto e = element_from_symbol(cap);
      if (sym.size() == 2 && !e) {
        // Not a two-letter aromatic symbol; retry as a single letter.
        sym.resize(1);
        cap.resize(1);
        e = element_from_symbol(cap);
      }
      if (!e) throw UnknownElementError(sym);
      elem = static_cast<int>(*e);
      aromatic = true;
      p_ += sym.size();
    } else {
      fail("expected element symbol in bracket atom");
    }

    bool warned_stereo = false, warned_charge = false;
    while (!done() && peek() != ']') {
      char k = peek();
      if (k == '@') {
        while (peek() == '@') ++p_;
        if (!warned_stereo) warn("stereochemistry marker stripped");
        warned_stereo = true;
      } else if (k == 'H') {
        ++p_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++p_;
        // Explicit hydrogen counts are recomputed from valence downstream.
      } else if (k == '+' || k == '-') {
        while (peek() == k) ++p_;
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++p_;
        if (!warned_charge) warn("formal charge stripped");
        warned_charge = true;
      } else if (k == ':') {
        ++p_;
        if (!std::isdigit(static_cast<unsigned char>(peek())))
          fail("atom class without a number");
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++p_;
        warn("atom class label stripped");
      } else {
        fail(std::string("unexpected character '") + k + "' in bracket atom");
      }
    }
    if (done()) fail("unterminated bracket atom");
    ++p_;  // ']'
    on_atom(elem, aromatic);
  }

  void parse_all() {
    while (!done()) {
      char c = peek();
      switch (c) {
        case 'C': {
          if (peek2() == 'l') {
            p_ += 2;
            on_atom(static_cast<int>(Element::Cl), false);
          } else {
            ++p_;
            on_atom(static_cast<int>(Element::C), false);
          }
          break;
        }
        case 'B': {
          if (peek2() == 'r') {
            p_ += 2;
            on_atom(static_cast<int>(Element::Br), false);
          } else {
            ++p_;
            on_atom(static_cast<int>(Element::B), false);
          }
          break;
        }
        case 'N': ++p_; on_atom(static_cast<int>(Element::N), false); break;
        case 'O': ++p_; on_atom(static_cast<int>(Element::O), false); break;
        case 'P': ++p_; on_atom(static_cast<int>(Element::P), false); break;
        case 'S': ++p_; on_atom(static_cast<int>(Element::S), false); break;
        case 'F': ++p_; on_atom(static_cast<int>(Element::F), false); break;
        case 'I': ++p_; on_atom(static_cast<int>(Element::I), false); break;
        case 'b': ++p_; on_atom(static_cast<int>(Element::B), true); break;
        case 'c': ++p_; on_atom(static_cast<int>(Element::C), true); break;
        case 'n': ++p_; on_atom(static_cast<int>(Element::N), true); break;
        case 'o': ++p_; on_atom(static_cast<int>(Element::O), true); break;
        case 'p': ++p_; on_atom(static_cast<int>(Element::P), true); break;
        case 's': ++p_; on_atom(static_cast<int>(Element::S), true); break;
        case '[': parse_bracket(); break;
        case '-': case '=': case '#': case ':': ++p_; set_pending(c); break;
        case '/': case '\\':
          ++p_;
          set_pending('-');
          warn("bond direction marker stripped");
          break;
        case '%': {
          if (!std::isdigit(static_cast<unsigned char>(peek2())) ||
              p_ + 2 >= text_.size() ||
              !std::isdigit(static_cast<unsigned char>(text_[p_ + 2])))
            fail("'%' ring closure needs two digits");
          int num = (peek2() - '0') * 10 + (text_[p_ + 2] - '0');
          p_ += 3;
          on_ring_digit(num);
          break;
        }
        case '(': {
          if (has_pending_) fail("bond symbol before branch open");
          if (prev_ < 0) fail("branch before any atom");
          ++p_;
          branch_stack_.push_back(prev_);
          break;
        }
        case ')': {
          if (has_pending_) fail("bond symbol before branch close");
          if (branch_stack_.empty()) fail("unbalanced branch close");
          ++p_;
          prev_ = branch_stack_.back();
          branch_stack_.pop_back();
          break;
        }
        case '.':
          throw UnsupportedFeatureError(
              "SMILES with disconnected components ('.') is not supported");
        case '*':
          throw UnsupportedFeatureError("wildcard atom '*' is not supported");
        default:
          if (std::isdigit(static_cast<unsigned char>(c))) {
            ++p_;
            on_ring_digit(c - '0');
          } else {
            fail(std::string("unexpected character '") + c + "'");
          }
      }
    }
    if (has_pending_) fail("dangling bond symbol at end of input");
    if (!branch_stack_.empty()) fail("unbalanced branch open");
    if (!open_rings_.empty())
      fail("unclosed ring " + std::to_string(open_rings_.begin()->first));
    if (atoms_.empty()) fail("no atoms");
  }

  SmilesParseResult finish() {
    // Drop explicit hydrogens; implicit counts are recomputed from valence.
    std::vector<int> remap(atoms_.size(), -1);
    std::vector<Element> heavy;
    std::vector<bool> aromatic_flag;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (atoms_[i].elem < 0) continue;
      remap[i] = static_cast<int>(heavy.size());
      heavy.push_back(static_cast<Element>(atoms_[i].elem));
      aromatic_flag.push_back(atoms_[i].aromatic);
    }
    if (heavy.empty()) throw ParseError("SMILES: no heavy atoms");

    MolecularGraph g(heavy);
    int n = g.atom_count();
    // Candidate subgraph for ring perception: explicit ':' bonds plus
    // default bonds between two aromatic atoms.
    MolecularGraph candidates(heavy);
    struct Typed { int a; int b; char ann; bool candidate; };
    std::vector<Typed> typed;
    for (const RawBond &rb : bonds_) {
      int a = remap[static_cast<std::size_t>(rb.a)];
      int b = remap[static_cast<std::size_t>(rb.b)];
      if (a < 0 || b < 0) continue;  // bond to an explicit hydrogen
      bool cand = rb.ann == 0 &&
                  aromatic_flag[static_cast<std::size_t>(a)] &&
                  aromatic_flag[static_cast<std::size_t>(b)];
      if (cand || rb.ann == ':') candidates.set_bond(a, b, BondType::Single);
      typed.push_back({a, b, rb.ann, cand});
    }
    auto bridge = detail::find_bridges(candidates, [](int, int) { return true; });
    for (const Typed &t : typed) {
      BondType bt = BondType::Single;
      switch (t.ann) {
        case 0:
          bt = (t.candidate &&
                !bridge[static_cast<std::size_t>(t.a) * n + t.b])
                   ? BondType::Aromatic
                   : BondType::Single;
          break;
        case '-': bt = BondType::Single; break;
        case '=': bt = BondType::Double; break;
        case '#': bt = BondType::Triple; break;
        case ':': bt = BondType::Aromatic; break;
      }
      if (g.bond(t.a, t.b) != BondType::None)
        throw ParseError("SMILES: duplicate bond after hydrogen removal");
      g.set_bond(t.a, t.b, bt);
    }
    return {std::move(g), std::move(warnings)};
  }
};

inline std::string smiles_atom_token(Element e, bool lower) {
  std::string sym{element_symbol(e)};
  bool bracket = (e == Element::Si || e == Element::Se);
  if (lower)
    sym[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(sym[0])));
  return bracket ? "[" + sym + "]" : sym;
}

class SmilesWriter {
 public:
  explicit SmilesWriter(const MolecularGraph &g) : g_(g), n_(g.atom_count()) {
    lower_.assign(static_cast<std::size_t>(n_), false);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        if (j != i && g_.bond(i, j) == BondType::Aromatic)
          lower_[static_cast<std::size_t>(i)] = true;
    visited_.assign(static_cast<std::size_t>(n_), false);
  }

  // Serializes the component containing `root`; marks its atoms visited.
  std::string component(int root) {
    plan_tree(root);
    out_.clear();
    emit(root);
    return out_;
  }

  bool seen(int i) const { return visited_[static_cast<std::size_t>(i)]; }

 private:
  const MolecularGraph &g_;
  int n_;
  std::vector<bool> lower_;
  std::vector<bool> visited_;
  std::vector<int> parent_;
  std::vector<int> preorder_;
  std::vector<std::vector<int>> children_;
  // Back edges keyed by (opener, closer), opener has the earlier preorder.
  std::vector<std::pair<int, int>> back_edges_;
  std::map<std::pair<int, int>, int> ring_digit_;
  std::vector<bool> digit_used_;
  std::string out_;

  std::string bond_symbol(int a, int b) const {
    switch (g_.bond(a, b)) {
      case BondType::Aromatic: return "";
      case BondType::Single:
        return (lower_[static_cast<std::size_t>(a)] &&
                lower_[static_cast<std::size_t>(b)])
                   ? "-"
                   : "";
      case BondType::Double: return "=";
      case BondType::Triple: return "#";
      default: return "";
    }
  }

  void plan_tree(int root) {
    parent_.assign(static_cast<std::size_t>(n_), -1);
    preorder_.assign(static_cast<std::size_t>(n_), -1);
    children_.assign(static_cast<std::size_t>(n_), {});
    back_edges_.clear();
    ring_digit_.clear();
    digit_used_.assign(100, false);

    int counter = 0;
    std::vector<std::pair<int, int>> stack{{root, 0}};
    visited_[static_cast<std::size_t>(root)] = true;
    preorder_[static_cast<std::size_t>(root)] = counter++;
    while (!stack.empty()) {
      auto &[u, next] = stack.back();
      if (next >= n_) {
        stack.pop_back();
        continue;
      }
      int v = next++;
      if (v == u || g_.bond(u, v) == BondType::None) continue;
      if (!visited_[static_cast<std::size_t>(v)]) {
        visited_[static_cast<std::size_t>(v)] = true;
        parent_[static_cast<std::size_t>(v)] = u;
        preorder_[static_cast<std::size_t>(v)] = counter++;
        children_[static_cast<std::size_t>(u)].push_back(v);
        stack.emplace_back(v, 0);
      } else if (v != parent_[static_cast<std::size_t>(u)] &&
                 preorder_[static_cast<std::size_t>(v)] <
                     preorder_[static_cast<std::size_t>(u)]) {
        back_edges_.emplace_back(v, u);  // opener v, closer u
      }
    }
  }

  std::string digit_token(int d) const {
    if (d < 10) return std::string(1, static_cast<char>('0' + d));
    return "%" + std::to_string(d);
  }

  int allocate_digit() {
    for (int d = 1; d < 100; ++d) {
      if (!digit_used_[static_cast<std::size_t>(d)]) {
        digit_used_[static_cast<std::size_t>(d)] = true;
        return d;
      }
    }
    throw InvalidGraphError("more than 99 simultaneously open ring closures");
  }

  void emit(int root) {
    // Explicit stack. Ring digits are emitted with the atom token; the bond
    // symbol for a ring bond sits on the opening side. A non-last child is
    // wrapped in parentheses, closed when its frame pops.
    struct Frame {
      int u;
      std::size_t slot;
      bool close_on_pop;
    };
    std::vector<Frame> stack;
    emit_atom(root);
    stack.push_back({root, 0, false});
    while (!stack.empty()) {
      Frame &f = stack.back();
      const auto &kids = children_[static_cast<std::size_t>(f.u)];
      if (f.slot >= kids.size()) {
        bool close = f.close_on_pop;
        stack.pop_back();
        if (close) out_ += ')';
        continue;
      }
      int u = f.u;
      int c = kids[f.slot++];
      bool is_last = f.slot == kids.size();
      if (!is_last) out_ += '(';
      out_ += bond_symbol(u, c);
      emit_atom(c);
      stack.push_back({c, 0, !is_last});
    }
  }

  void emit_atom(int u) {
    out_ += smiles_atom_token(g_.atom(u), lower_[static_cast<std::size_t>(u)]);
    // Closings first (digit order), then openings (partner preorder order).
    std::vector<std::pair<int, int>> closings;  // (digit, opener)
    for (const auto &be : back_edges_) {
      if (be.second != u) continue;
      auto it = ring_digit_.find(be);
      if (it != ring_digit_.end()) closings.emplace_back(it->second, be.first);
    }
    std::sort(closings.begin(), closings.end());
    for (auto &[d, opener] : closings) {
      out_ += digit_token(d);
      digit_used_[static_cast<std::size_t>(d)] = false;
      (void)opener;
    }
    std::vector<std::pair<int, int>> openings;  // (closer preorder, closer)
    for (const auto &be : back_edges_) {
      if (be.first != u) continue;
      openings.emplace_back(preorder_[static_cast<std::size_t>(be.second)],
                            be.second);
    }
    std::sort(openings.begin(), openings.end());
    for (auto &[pre, closer] : openings) {
      (void)pre;
      int d = allocate_digit();
      ring_digit_[{u, closer}] = d;
      out_ += bond_symbol(u, closer);
      out_ += digit_token(d);
    }
  }
};

}  // namespace detail

/// Parses a SMILES subset: organic-subset and bracket atoms over the
/// supported elements, bonds - = # :, branches, ring closures (digits and
/// %nn), aromatic lowercase atoms. Charge, isotope, stereochemistry, and
/// atom-class tokens are stripped into `warnings`. Explicit hydrogens are
/// dropped; implicit hydrogen counts are always recomputed from valence.
inline SmilesParseResult parse_smiles_verbose(std::string_view text) {
  // Trim surrounding whitespace; interior whitespace is an error.
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  if (b == e) throw ParseError("SMILES: empty string");
  detail::SmilesParser parser(text.substr(b, e - b));
  return parser.run();
}

inline MolecularGraph parse_smiles(std::string_view text) {
  return parse_smiles_verbose(text).graph;
}

/// Serializes one connected component per DFS from the lowest-index atom.
/// No validity gate; disconnected graphs come out '.'-joined. Intended for
/// logging raw samples; such strings are not re-parseable by parse_smiles.
inline std::string write_smiles_unchecked(const MolecularGraph &g) {
  if (g.atom_count() == 0) return "";
  detail::SmilesWriter writer(g);
  std::string out;
  for (int i = 0; i < g.atom_count(); ++i) {
    if (writer.seen(i)) continue;
    if (!out.empty()) out += '.';
    out += writer.component(i);
  }
  return out;
}

/// Serializes a valid molecular graph. Round-trip contract: parsing the
/// result yields a graph isomorphic to the input.
inline std::string write_smiles(const MolecularGraph &g) {
  auto report = is_valid(g);
  if (!report.ok()) throw InvalidGraphError("write_smiles: " + report.reason());
  detail::SmilesWriter writer(g);
  return writer.component(0);
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_SMILES_HPP
