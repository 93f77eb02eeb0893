//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_FORMULA_HPP
#define MSDIFF_CHEM_FORMULA_HPP

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include "msdiff/chem/element.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

/// Heavy-atom composition plus a separate hydrogen count. Hydrogens are never
/// graph nodes; they only participate in formula arithmetic and masses.
struct ChemicalFormula {
  std::array<int, kElementCount> counts{};
  int hydrogens = 0;

  int count(Element e) const { return counts[static_cast<std::size_t>(e)]; }

  int &count(Element e) { return counts[static_cast<std::size_t>(e)]; }

  int heavy_atom_total() const {
    int total = 0;
    for (int c : counts) total += c;
    return total;
  }

  bool empty() const { return heavy_atom_total() == 0; }

  double monoisotopic_mass() const {
    double m = hydrogens * kHydrogenMass;
    for (int i = 0; i < kElementCount; ++i)
      m += counts[i] * kElementTable[i].monoisotopic_mass;
    return m;
  }

  /// Componentwise difference (this - other), hydrogens included. Empty when
  /// any count would go negative.
  std::optional<ChemicalFormula> subtract(const ChemicalFormula &other) const {
    ChemicalFormula out;
    for (int i = 0; i < kElementCount; ++i) {
      out.counts[i] = counts[i] - other.counts[i];
      if (out.counts[i] < 0) return std::nullopt;
    }
    out.hydrogens = hydrogens - other.hydrogens;
    if (out.hydrogens < 0) return std::nullopt;
    return out;
  }

  /// True when every heavy-atom count of `other` fits inside this formula.
  /// Hydrogens are not compared.
  bool contains_heavy(const ChemicalFormula &other) const {
    for (int i = 0; i < kElementCount; ++i)
      if (other.counts[i] > counts[i]) return false;
    return true;
  }

  bool operator==(const ChemicalFormula &other) const {
    return counts == other.counts && hydrogens == other.hydrogens;
  }

  bool same_heavy_atoms(const ChemicalFormula &other) const {
    return counts == other.counts;
  }

  /// Hill order: C, H, then remaining element symbols alphabetically.
  std::string to_string() const {
    auto append = [](std::string &s, std::string_view sym, int c) {
      if (c <= 0) return;
      s += sym;
      if (c > 1) s += std::to_string(c);
    };
    std::string s;
    append(s, "C", count(Element::C));
    append(s, "H", hydrogens);
    // Alphabetical tail over the supported set.
    static constexpr Element kHillTail[] = {
        Element::B,  Element::Br, Element::Cl, Element::F,  Element::I,
        Element::N,  Element::O,  Element::P,  Element::S,  Element::Se,
        Element::Si};
    for (Element e : kHillTail) append(s, element_symbol(e), count(e));
    return s;
  }
};

/// Parse a Hill-order-style formula string such as "C6H12O6". The H token
/// feeds `hydrogens`; every other symbol must be in the supported set.
inline ChemicalFormula parse_formula(std::string_view text) {
  if (text.empty()) throw MalformedFormulaError("empty formula");
  ChemicalFormula formula;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (!std::isupper(static_cast<unsigned char>(c))) {
      throw MalformedFormulaError("unexpected character '" +
                                  std::string(1, c) + "' in formula \"" +
                                  std::string(text) + "\"");
    }
    std::string sym(1, c);
    ++i;
    if (i < text.size() && std::islower(static_cast<unsigned char>(text[i]))) {
      sym += text[i];
      ++i;
    }
    long count = 1;
    if (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      count = 0;
      while (i < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[i]))) {
        count = count * 10 + (text[i] - '0');
        if (count > 100000)
          throw MalformedFormulaError("count overflow in formula");
        ++i;
      }
      if (count == 0)
        throw MalformedFormulaError("zero count in formula \"" +
                                    std::string(text) + "\"");
    }
    if (sym == "H") {
      formula.hydrogens += static_cast<int>(count);
      continue;
    }
    auto elem = element_from_symbol(sym);
    if (!elem) {
      // A two-letter guess that failed may still be a one-letter element
      // followed by a lowercase junk character; report the symbol as seen.
      throw UnknownElementError(sym);
    }
    formula.count(*elem) += static_cast<int>(count);
  }
  if (formula.empty())
    throw MalformedFormulaError("formula has no heavy atoms: \"" +
                                std::string(text) + "\"");
  return formula;
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_FORMULA_HPP
