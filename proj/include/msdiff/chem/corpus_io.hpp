//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_CHEM_CORPUS_IO_HPP
#define MSDIFF_CHEM_CORPUS_IO_HPP

#include <fstream>
#include <string>
#include <vector>

#include "msdiff/util/errors.hpp"

namespace msdiff {

struct MoleculeRecord {
  std::string id;
  std::string smiles;
};

/// Molecule corpus: one `<id>\t<SMILES>` record per line, `#` comment lines
/// and blank lines ignored.
inline std::vector<MoleculeRecord> read_molecule_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open molecule file: " + path);
  std::vector<MoleculeRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <id>\\t<SMILES>");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

inline void write_molecule_file(const std::string &path,
                                const std::vector<MoleculeRecord> &records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write molecule file: " + path);
  for (const auto &r : records) out << r.id << '\t' << r.smiles << '\n';
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace msdiff

#endif  // MSDIFF_CHEM_CORPUS_IO_HPP
