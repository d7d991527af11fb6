#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/molecule.hpp"
#include "unigem/rng.hpp"

namespace unigem {

// ---------------------------------------------------------------------------
// Distance-based bond inference. Reference lengths are standard covalent
// single/double/triple bond lengths in picometers; margins follow the
// EDM-lineage convention (single 10, double 5, triple 3). The table ships as
// a versioned CSV (`elem1,elem2,order,length_pm`) so metric drift is
// diffable.
// ---------------------------------------------------------------------------

struct BondTable {
  // key: ordered pair "A-B" with A <= B lexicographically
  std::map<std::string, std::array<double, 3>> lengths;  // [single, double, triple], 0 = undefined
  double margin_single = 10.0;
  double margin_double = 5.0;
  double margin_triple = 3.0;

  static std::string key(const std::string& a, const std::string& b) {
    return a <= b ? a + "-" + b : b + "-" + a;
  }

  bool has_pair(const std::string& a, const std::string& b) const {
    return lengths.count(key(a, b)) > 0;
  }

  /// Bond order for a distance in Angstrom: compare against
  /// (reference + margin) from the largest order downward.
  int order(const std::string& a, const std::string& b,
            double distance_angstrom) const {
    const auto it = lengths.find(key(a, b));
    if (it == lengths.end()) return 0;
    const double pm = distance_angstrom * 100.0;
    const auto& ref = it->second;
    if (ref[2] > 0 && pm < ref[2] + margin_triple) return 3;
    if (ref[1] > 0 && pm < ref[1] + margin_double) return 2;
    if (ref[0] > 0 && pm < ref[0] + margin_single) return 1;
    return 0;
  }

  static BondTable qm9_default() {
    BondTable t;
    auto set = [&](const char* a, const char* b, double s, double d = 0,
                   double tr = 0) {
      t.lengths[key(a, b)] = {s, d, tr};
    };
    set("H", "H", 74);
    set("H", "C", 109);
    set("H", "N", 101);
    set("H", "O", 96);
    set("H", "F", 92);
    set("C", "C", 154, 134, 120);
    set("C", "N", 147, 129, 116);
    set("C", "O", 143, 120, 113);
    set("C", "F", 135);
    set("N", "N", 145, 125, 110);
    set("N", "O", 140, 121);
    set("N", "F", 136);
    set("O", "O", 148, 121);
    set("O", "F", 142);
    set("F", "F", 142);
    return t;
  }
};

inline void save_bond_table(std::ostream& os, const BondTable& t) {
  os << "elem1,elem2,order,length_pm\n";
  char buf[96];
  for (const auto& [k, ref] : t.lengths) {
    const auto dash = k.find('-');
    const std::string a = k.substr(0, dash), b = k.substr(dash + 1);
    for (int o = 0; o < 3; ++o)
      if (ref[static_cast<std::size_t>(o)] > 0) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.17g\n", a.c_str(), b.c_str(),
                      o + 1, ref[static_cast<std::size_t>(o)]);
        os << buf;
      }
  }
}

inline BondTable load_bond_table(std::istream& is) {
  BondTable t;
  t.lengths.clear();
  std::string line;
  if (!std::getline(is, line) || line != "elem1,elem2,order,length_pm")
    throw DataError("bond table: missing header");
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, field;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ','))
      throw DataError("bond table line " + std::to_string(line_no));
    int order;
    double pm;
    try {
      std::getline(ls, field, ',');
      order = std::stoi(field);
      std::getline(ls, field, ',');
      pm = std::stod(field);
    } catch (const std::exception&) {
      throw DataError("bond table line " + std::to_string(line_no) +
                      ": bad numeric field");
    }
    if (order < 1 || order > 3)
      throw DataError("bond table line " + std::to_string(line_no) +
                      ": order must be 1..3");
    t.lengths[BondTable::key(a, b)][static_cast<std::size_t>(order - 1)] = pm;
  }
  return t;
}

/// Allowed valences. Atom stability demands the bond-order sum hit these
/// exactly; the validity proxy only bounds it from above.
inline const std::map<std::string, int>& valency_table() {
  static const std::map<std::string, int> table = {
      {"H", 1}, {"C", 4}, {"N", 3}, {"O", 2}, {"F", 1}};
  return table;
}

// ---------------------------------------------------------------------------
// Bond graph and stability.
// ---------------------------------------------------------------------------

struct BondGraph {
  std::size_t atoms = 0;
  std::vector<int> order;          // atoms x atoms, symmetric
  std::size_t missing_pairs = 0;   // element pairs absent from the table

  int at(std::size_t i, std::size_t j) const { return order[i * atoms + j]; }
};

inline BondGraph infer_bonds(const Molecule& mol, const Vocabulary& vocab,
                             const BondTable& table = BondTable::qm9_default()) {
  const std::size_t m = mol.atom_count();
  BondGraph g;
  g.atoms = m;
  g.order.assign(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const std::string& a = vocab.symbols[static_cast<std::size_t>(mol.types[i])];
      const std::string& b = vocab.symbols[static_cast<std::size_t>(mol.types[j])];
      if (!table.has_pair(a, b)) {
        ++g.missing_pairs;
        continue;
      }
      const double dx = mol.x(i) - mol.x(j);
      const double dy = mol.y(i) - mol.y(j);
      const double dz = mol.z(i) - mol.z(j);
      const int o = table.order(a, b, std::sqrt(dx * dx + dy * dy + dz * dz));
      g.order[i * m + j] = o;
      g.order[j * m + i] = o;
    }
  }
  return g;
}

inline std::vector<int> bond_order_sums(const BondGraph& g) {
  std::vector<int> sums(g.atoms, 0);
  for (std::size_t i = 0; i < g.atoms; ++i)
    for (std::size_t j = 0; j < g.atoms; ++j) sums[i] += g.at(i, j);
  return sums;
}

inline std::vector<bool> stable_atoms(const Molecule& mol,
                                      const Vocabulary& vocab,
                                      const BondGraph& g) {
  const auto sums = bond_order_sums(g);
  std::vector<bool> stable(mol.atom_count());
  for (std::size_t i = 0; i < mol.atom_count(); ++i) {
    const std::string& sym = vocab.symbols[static_cast<std::size_t>(mol.types[i])];
    const auto it = valency_table().find(sym);
    stable[i] = it != valency_table().end() && sums[i] == it->second;
  }
  return stable;
}

inline bool molecule_stable(const Molecule& mol, const Vocabulary& vocab,
                            const BondTable& table = BondTable::qm9_default()) {
  const auto g = infer_bonds(mol, vocab, table);
  for (bool s : stable_atoms(mol, vocab, g))
    if (!s) return false;
  return true;
}

/// Validity proxy: the inferred bond graph is one connected component and no
/// atom exceeds its allowed valency. (Stands in for RDKit sanitization;
/// divergence from RDKit-based numbers is expected, directional comparisons
/// remain meaningful.)
inline bool molecule_valid(const Molecule& mol, const Vocabulary& vocab,
                           const BondGraph& g) {
  const std::size_t m = mol.atom_count();
  const auto sums = bond_order_sums(g);
  for (std::size_t i = 0; i < m; ++i) {
    const std::string& sym = vocab.symbols[static_cast<std::size_t>(mol.types[i])];
    const auto it = valency_table().find(sym);
    if (it == valency_table().end() || sums[i] > it->second) return false;
  }
  // connectivity over bonds of order >= 1
  if (m == 0) return false;
  std::vector<bool> seen(m, false);
  std::vector<std::size_t> stack = {0};
  seen[0] = true;
  std::size_t visited = 1;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < m; ++j)
      if (!seen[j] && g.at(i, j) > 0) {
        seen[j] = true;
        ++visited;
        stack.push_back(j);
      }
  }
  return visited == m;
}

// ---------------------------------------------------------------------------
// Canonical hashing: iterative neighborhood refinement over the typed
// multigraph with bond orders as edge labels, 10 rounds; permutation
// invariant by construction.
// ---------------------------------------------------------------------------

inline std::uint64_t canonical_hash(const Molecule& mol, const Vocabulary& vocab,
                                    const BondGraph& g, int rounds = 10) {
  const std::size_t m = mol.atom_count();
  std::vector<std::uint64_t> label(m);
  for (std::size_t i = 0; i < m; ++i)
    label[i] = fnv1a(vocab.symbols[static_cast<std::size_t>(mol.types[i])]);
  for (int r = 0; r < rounds; ++r) {
    std::vector<std::uint64_t> next(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<std::uint64_t> neigh;
      for (std::size_t j = 0; j < m; ++j)
        if (g.at(i, j) > 0)
          neigh.push_back(
              splitmix64(static_cast<std::uint64_t>(g.at(i, j)) * 0x9e37uLL ^
                         label[j]));
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t h = splitmix64(label[i]);
      for (std::uint64_t v : neigh) h = splitmix64(h ^ v);
      next[i] = h;
    }
    label = std::move(next);
  }
  std::sort(label.begin(), label.end());
  std::uint64_t h = splitmix64(m);
  for (std::uint64_t v : label) h = splitmix64(h ^ v);
  return h;
}

// ---------------------------------------------------------------------------
// Corpus-level metrics.
// ---------------------------------------------------------------------------

struct EvalReport {
  std::size_t molecules = 0;
  double atom_stability = 0.0;
  double molecule_stability = 0.0;
  std::optional<double> validity;    // absent on empty input
  std::optional<double> uniqueness;  // among valid molecules
  std::optional<double> average_mae;
  std::optional<double> stable_mae;
  std::optional<double> mol_stable_fraction;
};

inline std::pair<double, double> atom_and_molecule_stability(
    const std::vector<Molecule>& mols, const Vocabulary& vocab,
    const BondTable& table = BondTable::qm9_default()) {
  std::size_t atoms = 0, stable_count = 0, stable_mols = 0;
  for (const auto& mol : mols) {
    const auto g = infer_bonds(mol, vocab, table);
    const auto flags = stable_atoms(mol, vocab, g);
    bool all = true;
    for (bool s : flags) {
      ++atoms;
      if (s) ++stable_count;
      all &= s;
    }
    if (all && !flags.empty()) ++stable_mols;
    // consistency: molecule stable implies every atom stable (by definition)
  }
  const double atom_frac =
      atoms ? static_cast<double>(stable_count) / static_cast<double>(atoms) : 0.0;
  const double mol_frac =
      mols.empty() ? 0.0
                   : static_cast<double>(stable_mols) / static_cast<double>(mols.size());
  return {atom_frac, mol_frac};
}

inline std::pair<std::optional<double>, std::optional<double>>
validity_and_uniqueness(const std::vector<Molecule>& mols,
                        const Vocabulary& vocab,
                        const BondTable& table = BondTable::qm9_default()) {
  if (mols.empty()) return {std::nullopt, std::nullopt};
  std::size_t valid = 0;
  std::set<std::uint64_t> hashes;
  for (const auto& mol : mols) {
    const auto g = infer_bonds(mol, vocab, table);
    if (molecule_valid(mol, vocab, g)) {
      ++valid;
      hashes.insert(canonical_hash(mol, vocab, g));
    }
  }
  const double validity =
      static_cast<double>(valid) / static_cast<double>(mols.size());
  if (valid == 0) return {validity, std::nullopt};
  return {validity,
          static_cast<double>(hashes.size()) / static_cast<double>(valid)};
}

/// Average MAE over all molecules, MAE over the stable subset, and the
/// stable fraction. Predictions and references in original units.
struct PropertyMaeReport {
  std::optional<double> average_mae;
  std::optional<double> stable_mae;  // absent when nothing is stable
  double mol_stable_fraction = 0.0;
};

inline PropertyMaeReport property_mae(
    const std::vector<Molecule>& mols, const std::vector<double>& predictions,
    const std::vector<double>& references, const Vocabulary& vocab,
    const BondTable& table = BondTable::qm9_default()) {
  if (mols.size() != predictions.size() || mols.size() != references.size())
    throw ShapeError("property_mae: molecules/predictions/references differ in length");
  PropertyMaeReport rep;
  if (mols.empty()) return rep;
  double total = 0.0, stable_total = 0.0;
  std::size_t stable_n = 0;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const double err = std::abs(predictions[i] - references[i]);
    total += err;
    if (molecule_stable(mols[i], vocab, table)) {
      stable_total += err;
      ++stable_n;
    }
  }
  rep.average_mae = total / static_cast<double>(mols.size());
  rep.mol_stable_fraction =
      static_cast<double>(stable_n) / static_cast<double>(mols.size());
  if (stable_n > 0) rep.stable_mae = stable_total / static_cast<double>(stable_n);
  return rep;
}

inline EvalReport evaluate(const std::vector<Molecule>& mols,
                           const Vocabulary& vocab,
                           const BondTable& table = BondTable::qm9_default()) {
  EvalReport rep;
  rep.molecules = mols.size();
  auto [atom_frac, mol_frac] = atom_and_molecule_stability(mols, vocab, table);
  rep.atom_stability = atom_frac;
  rep.molecule_stability = mol_frac;
  auto [validity, uniqueness] = validity_and_uniqueness(mols, vocab, table);
  rep.validity = validity;
  rep.uniqueness = uniqueness;
  return rep;
}

inline std::string eval_report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "molecules " << r.molecules << "\n";
  os << "atom_stability " << r.atom_stability << "\n";
  os << "molecule_stability " << r.molecule_stability << "\n";
  os << "validity " << (r.validity ? std::to_string(*r.validity) : "absent") << "\n";
  os << "uniqueness "
     << (r.uniqueness ? std::to_string(*r.uniqueness) : "absent") << "\n";
  if (r.average_mae) os << "average_mae " << *r.average_mae << "\n";
  if (r.stable_mae) os << "stable_mae " << *r.stable_mae << "\n";
  if (r.mol_stable_fraction)
    os << "mol_stable_fraction " << *r.mol_stable_fraction << "\n";
  return os.str();
}

inline std::string eval_report_csv_header() {
  return "molecules,atom_stability,molecule_stability,validity,uniqueness,"
         "average_mae,stable_mae,mol_stable_fraction";
}

inline std::string eval_report_csv_row(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string("");
  };
  std::ostringstream os;
  os << r.molecules << "," << r.atom_stability << "," << r.molecule_stability
     << "," << opt(r.validity) << "," << opt(r.uniqueness) << ","
     << opt(r.average_mae) << "," << opt(r.stable_mae) << ","
     << opt(r.mol_stable_fraction);
  return os.str();
}

}  // namespace unigem
