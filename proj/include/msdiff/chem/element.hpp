//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_ELEMENT_HPP
#define MSDIFF_CHEM_ELEMENT_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "msdiff/util/errors.hpp"

namespace msdiff {

/// The supported heavy-atom alphabet. The enumerator order is frozen: it is
/// the one-hot feature index of every atom, part of checkpoint and dataset
/// compatibility.
enum class Element : std::uint8_t {
  C = 0,
  N,
  O,
  S,
  P,
  F,
  Cl,
  Br,
  I,
  B,
  Si,
  Se,
};

inline constexpr int kElementCount = 12;

struct ElementInfo {
  const char *symbol;
  int max_valence;
  double monoisotopic_mass;  // Daltons, most abundant isotope
};

inline constexpr std::array<ElementInfo, kElementCount> kElementTable = {{
    {"C", 4, 12.0},
    {"N", 3, 14.0030740},
    {"O", 2, 15.9949146},
    {"S", 6, 31.9720707},
    {"P", 5, 30.9737615},
    {"F", 1, 18.9984032},
    {"Cl", 1, 34.9688527},
    {"Br", 1, 78.9183376},
    {"I", 1, 126.9044719},
    {"B", 3, 11.0093055},
    {"Si", 4, 27.9769265},
    {"Se", 6, 79.9165218},
}};

inline constexpr double kHydrogenMass = 1.0078250;

inline const ElementInfo &element_info(Element e) {
  return kElementTable[static_cast<std::size_t>(e)];
}

inline std::string_view element_symbol(Element e) {
  return element_info(e).symbol;
}

inline int max_valence(Element e) { return element_info(e).max_valence; }

inline std::optional<Element> element_from_symbol(std::string_view sym) {
  for (int i = 0; i < kElementCount; ++i) {
    if (sym == kElementTable[i].symbol) return static_cast<Element>(i);
  }
  return std::nullopt;
}

inline Element element_from_symbol_or_throw(std::string_view sym) {
  auto e = element_from_symbol(sym);
  if (!e) throw UnknownElementError(std::string(sym));
  return *e;
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_ELEMENT_HPP
