//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "msdiff/chem/canonical.hpp"
#include "msdiff/chem/corpus_io.hpp"
#include "msdiff/chem/formula.hpp"
#include "msdiff/chem/isomorphism.hpp"
#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/chem/smiles.hpp"
#include "msdiff/util/rng.hpp"
#include "support/random_mol.hpp"

using namespace msdiff;

namespace {

/// Exhaustive isomorphism oracle: tries every bijection. Only for tiny graphs.
bool oracle_isomorphic(const MolecularGraph &g1, const MolecularGraph &g2) {
  int n = g1.atom_count();
  if (n != g2.atom_count()) return false;
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  do {
    bool ok = true;
    for (int i = 0; ok && i < n; ++i)
      if (g1.atom(i) != g2.atom(p[static_cast<std::size_t>(i)])) ok = false;
    for (int i = 0; ok && i < n; ++i)
      for (int j = i + 1; ok && j < n; ++j)
        if (g1.bond(i, j) != g2.bond(p[static_cast<std::size_t>(i)],
                                     p[static_cast<std::size_t>(j)]))
          ok = false;
    if (ok) return true;
  } while (std::next_permutation(p.begin(), p.end()));
  return false;
}

std::vector<int> random_permutation(Rng &rng, int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  rng.shuffle(p);
  return p;
}

}  // namespace

TEST_CASE("element table basics") {
  CHECK(kElementCount == 12);
  CHECK(element_symbol(Element::C) == "C");
  CHECK(element_symbol(Element::Se) == "Se");
  CHECK(max_valence(Element::C) == 4);
  CHECK(max_valence(Element::N) == 3);
  CHECK(max_valence(Element::O) == 2);
  CHECK(max_valence(Element::S) == 6);
  CHECK(max_valence(Element::P) == 5);
  CHECK(max_valence(Element::F) == 1);
  CHECK(max_valence(Element::Cl) == 1);
  CHECK(max_valence(Element::Br) == 1);
  CHECK(max_valence(Element::I) == 1);
  CHECK(max_valence(Element::B) == 3);
  CHECK(max_valence(Element::Si) == 4);
  CHECK(max_valence(Element::Se) == 6);
  for (int i = 0; i < kElementCount; ++i) {
    auto e = static_cast<Element>(i);
    auto back = element_from_symbol(element_symbol(e));
    REQUIRE(back.has_value());
    CHECK(*back == e);
  }
  CHECK_FALSE(element_from_symbol("X").has_value());
  CHECK_FALSE(element_from_symbol("Na").has_value());
}

TEST_CASE("parse_formula reads Hill-style strings") {
  auto f = parse_formula("C6H12O6");
  CHECK(f.count(Element::C) == 6);
  CHECK(f.count(Element::O) == 6);
  CHECK(f.hydrogens == 12);
  CHECK(f.heavy_atom_total() == 12);

  auto m = parse_formula("CH4");
  CHECK(m.count(Element::C) == 1);
  CHECK(m.hydrogens == 4);
  CHECK(m.heavy_atom_total() == 1);

  auto two_letter = parse_formula("C2H3Cl3Se");
  CHECK(two_letter.count(Element::Cl) == 3);
  CHECK(two_letter.count(Element::Se) == 1);

  CHECK_THROWS_AS(parse_formula("C6H12X2"), UnknownElementError);
  CHECK_THROWS_AS(parse_formula(""), MalformedFormulaError);
  CHECK_THROWS_AS(parse_formula("6C"), MalformedFormulaError);
  CHECK_THROWS_AS(parse_formula("C0"), MalformedFormulaError);
  CHECK_THROWS_AS(parse_formula("H2"), MalformedFormulaError);
  CHECK_THROWS_AS(parse_formula("c6h6"), MalformedFormulaError);
}

TEST_CASE("formula to_string uses Hill order and round-trips") {
  auto f = parse_formula("C9H8O4");
  CHECK(f.to_string() == "C9H8O4");
  auto g = parse_formula("O4C9H8");
  CHECK(g.to_string() == "C9H8O4");
  CHECK(f == g);

  auto salt = parse_formula("BrCH3");
  CHECK(salt.to_string() == "CH3Br");

  auto glucose = parse_formula("C6H12O6");
  CHECK_THAT(glucose.monoisotopic_mass(),
             Catch::Matchers::WithinAbs(180.0634, 1e-3));

  auto diff = glucose.subtract(parse_formula("CH2O"));
  REQUIRE(diff.has_value());
  CHECK(diff->to_string() == "C5H10O5");
  CHECK_FALSE(glucose.subtract(parse_formula("C7H1")).has_value());
  CHECK(glucose.contains_heavy(parse_formula("C2O2")));
  CHECK_FALSE(glucose.contains_heavy(parse_formula("C2N1H99")));
}

TEST_CASE("molecular graph stores symmetric typed bonds") {
  MolecularGraph g({Element::C, Element::C, Element::O});
  g.set_bond(0, 1, BondType::Single);
  g.set_bond(1, 2, BondType::Double);
  CHECK(g.bond(1, 0) == BondType::Single);
  CHECK(g.bond(2, 1) == BondType::Double);
  CHECK(g.bond(0, 2) == BondType::None);
  CHECK(g.bond(0, 0) == BondType::None);
  CHECK(g.degree(1) == 2);
  CHECK(g.edge_count() == 2);
  auto edges = g.edges();
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].i == 0);
  CHECK(edges[0].j == 1);
  CHECK(edges[1].type == BondType::Double);
  CHECK_THROWS_AS(g.set_bond(1, 1, BondType::Single), InvalidGraphError);
}

TEST_CASE("implicit hydrogens from valence deficits") {
  auto ethanol = parse_smiles("CCO");
  CHECK(implicit_hydrogens(ethanol) == std::vector<int>{3, 2, 1});

  MolecularGraph lone_c({Element::C});
  CHECK(implicit_hydrogens(lone_c) == std::vector<int>{4});

  MolecularGraph cumulene({Element::C, Element::C, Element::C});
  cumulene.set_bond(0, 1, BondType::Triple);
  cumulene.set_bond(1, 2, BondType::Triple);
  CHECK(implicit_hydrogens(cumulene)[1] == -2);

  auto benzene = parse_smiles("c1ccccc1");
  CHECK(implicit_hydrogens(benzene) == std::vector<int>(6, 1));

  auto pyridine = parse_smiles("c1ccncc1");
  auto h = implicit_hydrogens(pyridine);
  int total = 0;
  for (int x : h) total += x;
  CHECK(total == 5);  // five CH, zero on the nitrogen
  for (int i = 0; i < pyridine.atom_count(); ++i) {
    if (pyridine.atom(i) == Element::N) CHECK(h[static_cast<std::size_t>(i)] == 0);
  }
}

TEST_CASE("is_valid checks connectivity, valence, and aromatic rings") {
  CHECK(is_valid(parse_smiles("c1ccccc1")).ok());
  CHECK(is_valid(parse_smiles("CCO")).ok());
  CHECK(is_valid(parse_smiles("C")).ok());

  MolecularGraph detached({Element::C, Element::C, Element::C, Element::C});
  detached.set_bond(0, 1, BondType::Single);
  detached.set_bond(2, 3, BondType::Single);
  auto rep = is_valid(detached);
  CHECK_FALSE(rep.ok());
  CHECK(rep.code == ValidityReport::Code::Disconnected);

  auto overfull = parse_smiles("CN(C)(C)C");
  auto rep2 = is_valid(overfull);
  CHECK_FALSE(rep2.ok());
  REQUIRE(rep2.code == ValidityReport::Code::ValenceExceeded);
  CHECK(overfull.atom(rep2.atom) == Element::N);

  MolecularGraph dangling({Element::C, Element::C});
  dangling.set_bond(0, 1, BondType::Aromatic);
  auto rep3 = is_valid(dangling);
  CHECK_FALSE(rep3.ok());
  CHECK(rep3.code == ValidityReport::Code::DanglingAromatic);

  CHECK_FALSE(is_valid(MolecularGraph{}).ok());

  // Adding one bond to a saturated atom always breaks validity.
  auto methane_chain = parse_smiles("CC(C)(C)C");  // central C saturated
  MolecularGraph extended(
      {Element::C, Element::C, Element::C, Element::C, Element::C, Element::F});
  for (int j = 1; j <= 4; ++j) extended.set_bond(0, j, BondType::Single);
  extended.set_bond(0, 5, BondType::Single);
  auto rep4 = is_valid(extended);
  CHECK_FALSE(rep4.ok());
  CHECK(rep4.code == ValidityReport::Code::ValenceExceeded);
  CHECK(rep4.atom == 0);
  (void)methane_chain;

  // Aromatic accounting quirk: a lone aromatic oxygen ring overflows the
  // oxygen valence (floor(1.5 + 1.5) = 3 > 2), so furan counts as invalid.
  auto furan = parse_smiles("c1ccoc1");
  auto rep5 = is_valid(furan);
  CHECK_FALSE(rep5.ok());
  CHECK(rep5.code == ValidityReport::Code::ValenceExceeded);

  // Thiophene and pyrrole survive the same accounting.
  CHECK(is_valid(parse_smiles("c1ccsc1")).ok());
  CHECK(is_valid(parse_smiles("[nH]1cccc1")).ok());
}

TEST_CASE("parse_smiles reads chains, branches, rings, and bond symbols") {
  auto ethanol = parse_smiles("CCO");
  REQUIRE(ethanol.atom_count() == 3);
  CHECK(ethanol.atom(0) == Element::C);
  CHECK(ethanol.atom(1) == Element::C);
  CHECK(ethanol.atom(2) == Element::O);
  CHECK(ethanol.bond(0, 1) == BondType::Single);
  CHECK(ethanol.bond(1, 2) == BondType::Single);
  CHECK(ethanol.bond(0, 2) == BondType::None);

  auto benzene = parse_smiles("c1ccccc1");
  REQUIRE(benzene.atom_count() == 6);
  int aromatic = 0;
  for (auto e : benzene.edges()) {
    CHECK(e.type == BondType::Aromatic);
    ++aromatic;
  }
  CHECK(aromatic == 6);

  auto acetone = parse_smiles("CC(=O)C");
  CHECK(acetone.bond(1, 2) == BondType::Double);
  CHECK(acetone.bond(1, 3) == BondType::Single);

  auto nitrile = parse_smiles("C#N");
  CHECK(nitrile.bond(0, 1) == BondType::Triple);

  auto cyclohexane = parse_smiles("C1CCCCC1");
  CHECK(cyclohexane.edge_count() == 6);
  for (auto e : cyclohexane.edges()) CHECK(e.type == BondType::Single);

  auto pct = parse_smiles("C%12CCCCC%12");
  CHECK(is_isomorphic(pct, cyclohexane));

  auto ring_bond = parse_smiles("C=1CCCCC=1");
  CHECK(ring_bond.bond(0, 5) == BondType::Double);
  auto ring_bond_one_side = parse_smiles("C=1CCCCC1");
  CHECK(ring_bond_one_side.bond(0, 5) == BondType::Double);

  auto reuse = parse_smiles("C1CC1C1CC1");
  CHECK(reuse.edge_count() == 7);

  auto bicyclic = parse_smiles("C12CC1C2");
  CHECK(bicyclic.edge_count() == 5);
}

TEST_CASE("parse_smiles aromatic perception trusts lowercase ring bonds") {
  // Bond between the two rings stays single even without an explicit '-'.
  auto biphenyl = parse_smiles("c1ccccc1c1ccccc1");
  int aromatic = 0, single = 0;
  for (auto e : biphenyl.edges()) {
    if (e.type == BondType::Aromatic) ++aromatic;
    if (e.type == BondType::Single) ++single;
  }
  CHECK(aromatic == 12);
  CHECK(single == 1);
  CHECK(is_valid(biphenyl).ok());

  auto toluene = parse_smiles("Cc1ccccc1");
  CHECK(toluene.bond(0, 1) == BondType::Single);

  auto explicit_aromatic = parse_smiles("C:1:C:C:C:C:C:1");
  for (auto e : explicit_aromatic.edges()) CHECK(e.type == BondType::Aromatic);

  auto naphthalene = parse_smiles("c1ccc2ccccc2c1");
  CHECK(naphthalene.atom_count() == 10);
  CHECK(naphthalene.edge_count() == 11);
  for (auto e : naphthalene.edges()) CHECK(e.type == BondType::Aromatic);
  CHECK(is_valid(naphthalene).ok());
}

TEST_CASE("parse_smiles strips decorations with warnings") {
  auto r1 = parse_smiles_verbose("[NH4+]");
  REQUIRE(r1.graph.atom_count() == 1);
  CHECK(r1.graph.atom(0) == Element::N);
  REQUIRE_FALSE(r1.warnings.empty());

  auto r2 = parse_smiles_verbose("[13CH4]");
  CHECK(r2.graph.atom_count() == 1);
  CHECK_FALSE(r2.warnings.empty());

  auto r3 = parse_smiles_verbose("C/C=C/C");
  CHECK(r3.graph.atom_count() == 4);
  CHECK(r3.graph.bond(1, 2) == BondType::Double);
  CHECK(r3.graph.bond(0, 1) == BondType::Single);
  CHECK(r3.warnings.size() == 2);

  auto r4 = parse_smiles_verbose("C[C@@H](N)C(=O)O");
  CHECK(r4.graph.atom_count() == 6);
  CHECK_FALSE(r4.warnings.empty());

  auto r5 = parse_smiles_verbose("[O-]C(=O)c1ccccc1");
  CHECK(r5.graph.atom_count() == 9);
  CHECK_FALSE(r5.warnings.empty());
  // Explicit hydrogens fold away entirely.
  auto r6 = parse_smiles_verbose("[H]C([H])([H])[H]");
  CHECK(r6.graph.atom_count() == 1);
  CHECK(r6.graph.edge_count() == 0);

  auto silane = parse_smiles("[Si](C)(C)(C)C");
  CHECK(silane.atom_count() == 5);
  CHECK(silane.atom(0) == Element::Si);
  CHECK(is_valid(silane).ok());

  auto selenophene = parse_smiles("[se]1cccc1");
  CHECK(selenophene.atom(0) == Element::Se);
  CHECK(is_valid(selenophene).ok());
}

TEST_CASE("parse_smiles rejects malformed input") {
  CHECK_THROWS_AS(parse_smiles("C(C"), ParseError);
  CHECK_THROWS_AS(parse_smiles("CC)"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C1CC"), ParseError);
  CHECK_THROWS_AS(parse_smiles("CC-"), ParseError);
  CHECK_THROWS_AS(parse_smiles("(C)C"), ParseError);
  CHECK_THROWS_AS(parse_smiles("1CC"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C11"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C-=C"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C-1CCCCC=1"), ParseError);
  CHECK_THROWS_AS(parse_smiles("Cx"), ParseError);
  CHECK_THROWS_AS(parse_smiles(""), ParseError);
  CHECK_THROWS_AS(parse_smiles("  "), ParseError);
  CHECK_THROWS_AS(parse_smiles("[Na]"), UnknownElementError);
  CHECK_THROWS_AS(parse_smiles("[Hg]C"), UnknownElementError);
  CHECK_THROWS_AS(parse_smiles("C.C"), UnsupportedFeatureError);
  CHECK_THROWS_AS(parse_smiles("C*"), UnsupportedFeatureError);
  CHECK_THROWS_AS(parse_smiles("[H][H]"), ParseError);  // no heavy atoms
  CHECK_THROWS_AS(parse_smiles("C[C"), ParseError);
  // UnknownElement and UnsupportedFeature are both parse errors.
  CHECK_THROWS_AS(parse_smiles("[Na]"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C.C"), ParseError);
}

TEST_CASE("write_smiles round-trips simple molecules") {
  MolecularGraph lone_c({Element::C});
  CHECK(write_smiles(lone_c) == "C");

  auto benzene = parse_smiles("c1ccccc1");
  auto rewritten = parse_smiles(write_smiles(benzene));
  REQUIRE(rewritten.atom_count() == 6);
  for (auto e : rewritten.edges()) CHECK(e.type == BondType::Aromatic);
  CHECK(rewritten.edge_count() == 6);

  auto ethanol = parse_smiles("CCO");
  CHECK(is_isomorphic(parse_smiles(write_smiles(ethanol)), ethanol));

  auto overfull = parse_smiles("CN(C)(C)C");
  CHECK_THROWS_AS(write_smiles(overfull), InvalidGraphError);

  MolecularGraph detached({Element::C, Element::C, Element::C, Element::C});
  detached.set_bond(0, 1, BondType::Single);
  detached.set_bond(2, 3, BondType::Single);
  auto unchecked = write_smiles_unchecked(detached);
  CHECK(unchecked.find('.') != std::string::npos);
}

TEST_CASE("write_smiles handles fused rings, biphenyl links, and brackets") {
  for (const char *s :
       {"c1ccc2ccccc2c1", "c1ccccc1-c1ccccc1", "c1ccccc1c1ccccc1",
        "C1CCc2ccccc2C1", "[Si](C)(C)(C)C", "[se]1cccc1", "CC(C)CC(N)C(=O)O",
        "O=C(O)c1ccccc1", "C1CC2(CC1)CC2", "N#Cc1ccncc1"}) {
    auto g = parse_smiles(s);
    auto back = parse_smiles(write_smiles(g));
    INFO(s << " -> " << write_smiles(g));
    CHECK(is_isomorphic(g, back));
  }
}

TEST_CASE("is_isomorphic agrees with the exhaustive oracle") {
  auto leucine = parse_smiles("CC(C)CC(N)C(=O)O");
  auto isoleucine = parse_smiles("CCC(C)C(N)C(=O)O");
  CHECK_FALSE(is_isomorphic(leucine, isoleucine));
  CHECK_FALSE(oracle_isomorphic(leucine, isoleucine));

  auto ethanol = parse_smiles("CCO");
  auto dme = parse_smiles("COC");
  CHECK_FALSE(is_isomorphic(ethanol, dme));
  CHECK_FALSE(oracle_isomorphic(ethanol, dme));

  // Same element multiset and degree sequence, different shape.
  auto m2 = parse_smiles("CC(C)CCC");
  auto m3 = parse_smiles("CCC(C)CC");
  CHECK_FALSE(is_isomorphic(m2, m3));
  CHECK_FALSE(oracle_isomorphic(m2, m3));

  Rng rng(0xc0ffee);
  for (int trial = 0; trial < 40; ++trial) {
    auto mol = testsupport::random_molecule(rng, 7);
    auto perm = random_permutation(rng, mol.graph.atom_count());
    auto shuffled = mol.graph.permuted(perm);
    CHECK(is_isomorphic(mol.graph, shuffled));
    CHECK(oracle_isomorphic(mol.graph, shuffled));

    auto other = testsupport::random_molecule(rng, 7);
    CHECK(is_isomorphic(mol.graph, other.graph) ==
          oracle_isomorphic(mol.graph, other.graph));
  }
}

TEST_CASE("is_isomorphic is invariant under 20 random permutations") {
  Rng rng(0xabcdef);
  auto mol = testsupport::random_molecule(rng, 14);
  for (int k = 0; k < 20; ++k) {
    auto perm = random_permutation(rng, mol.graph.atom_count());
    CHECK(is_isomorphic(mol.graph, mol.graph.permuted(perm)));
  }
}

TEST_CASE("canonical keys are permutation invariant and separate molecules") {
  auto leucine = parse_smiles("CC(C)CC(N)C(=O)O");
  auto isoleucine = parse_smiles("CCC(C)C(N)C(=O)O");
  CHECK(canonical_key(leucine) != canonical_key(isoleucine));

  Rng rng(0x5eed);
  for (int trial = 0; trial < 60; ++trial) {
    auto mol = testsupport::random_molecule(rng, 12);
    auto perm = random_permutation(rng, mol.graph.atom_count());
    CHECK(canonical_key(mol.graph) == canonical_key(mol.graph.permuted(perm)));
  }

  // Same SMILES spelled differently maps to the same key.
  CHECK(canonical_key(parse_smiles("OCC")) == canonical_key(parse_smiles("CCO")));
  CHECK(canonical_key(parse_smiles("c1ccccc1")) ==
        canonical_key(parse_smiles("C:1:C:C:C:C:C:1")));

  // Key equality matches the isomorphism oracle across a mixed corpus.
  std::vector<MolecularGraph> corpus;
  Rng rng2(0xfeed);
  for (int i = 0; i < 25; ++i)
    corpus.push_back(testsupport::random_molecule(rng2, 8).graph);
  for (std::size_t a = 0; a < corpus.size(); ++a) {
    for (std::size_t b = a + 1; b < corpus.size(); ++b) {
      bool same_key = canonical_key(corpus[a]) == canonical_key(corpus[b]);
      CHECK(same_key == is_isomorphic(corpus[a], corpus[b]));
    }
  }
}

TEST_CASE("random molecules round-trip through SMILES with formula oracle") {
  Rng rng(0x12345678);
  for (int trial = 0; trial < 200; ++trial) {
    auto mol = testsupport::random_molecule(rng, 16);
    auto s = write_smiles(mol.graph);
    INFO("trial " << trial << ": " << s);
    auto back = parse_smiles(s);
    REQUIRE(is_isomorphic(mol.graph, back));
    CHECK(canonical_key(mol.graph) == canonical_key(back));

    // Independent formula bookkeeping from the generator.
    CHECK(back.full_formula() == mol.formula);
    CHECK(mol.graph.full_formula() == mol.formula);
  }
}

TEST_CASE("demo corpus parses, validates, and round-trips") {
  auto records =
      read_molecule_file(std::string(MSDIFF_DATA_DIR) + "/molecules_demo.tsv");
  REQUIRE(records.size() >= 100);
  int small = 0;
  for (const auto &rec : records) {
    INFO(rec.id << ": " << rec.smiles);
    auto g = parse_smiles(rec.smiles);
    auto report = is_valid(g);
    INFO("validity: " << report.reason());
    REQUIRE(report.ok());
    auto back = parse_smiles(write_smiles(g));
    CHECK(is_isomorphic(g, back));
    if (g.atom_count() <= 12) ++small;
  }
  CHECK(small >= 20);
}

TEST_CASE("molecule corpus files read and write") {
  auto tmp = (std::filesystem::temp_directory_path() /
              "msdiff_test_corpus roundtrip.tsv")
                 .string();
  std::vector<MoleculeRecord> records{{"mol-1", "CCO"}, {"mol-2", "c1ccccc1"}};
  write_molecule_file(tmp, records);
  auto back = read_molecule_file(tmp);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "mol-1");
  CHECK(back[1].smiles == "c1ccccc1");
  std::filesystem::remove(tmp);
  CHECK_THROWS_AS(read_molecule_file("/nonexistent/missing.tsv"), DataError);
}
