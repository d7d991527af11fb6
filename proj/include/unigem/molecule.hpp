#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "unigem/common.hpp"
#include "unigem/rng.hpp"

namespace unigem {

/// Ordered atom-type vocabulary. The head width H of the denoiser equals its
/// size, so it is fixed per run.
struct Vocabulary {
  std::vector<std::string> symbols;

  static Vocabulary qm9() { return Vocabulary{{"H", "C", "N", "O", "F"}}; }

  std::size_t size() const { return symbols.size(); }

  int index_of(const std::string& sym) const {
    for (std::size_t i = 0; i < symbols.size(); ++i)
      if (symbols[i] == sym) return static_cast<int>(i);
    return -1;
  }
};

/// A molecule: coordinates in Angstrom (flat 3M), atom types as vocabulary
/// indices (one-hot by construction), optional scalar property labels.
struct Molecule {
  std::vector<double> coords;  // M x 3 row-major
  std::vector<int> types;      // M entries
  std::map<std::string, double> properties;

  std::size_t atom_count() const { return types.size(); }

  double x(std::size_t i) const { return coords[3 * i]; }
  double y(std::size_t i) const { return coords[3 * i + 1]; }
  double z(std::size_t i) const { return coords[3 * i + 2]; }

  std::array<double, 3> com() const {
    std::array<double, 3> c = {0, 0, 0};
    const std::size_t m = atom_count();
    for (std::size_t i = 0; i < m; ++i)
      for (int d = 0; d < 3; ++d) c[d] += coords[3 * i + d];
    for (int d = 0; d < 3; ++d) c[d] /= static_cast<double>(m);
    return c;
  }
};

/// Subtracts the coordinate mean; idempotent.
inline Molecule center_com(const Molecule& mol) {
  Molecule out = mol;
  const auto c = mol.com();
  for (std::size_t i = 0; i < mol.atom_count(); ++i)
    for (int d = 0; d < 3; ++d) out.coords[3 * i + d] -= c[d];
  return out;
}

struct Corpus {
  std::vector<Molecule> molecules;
  Vocabulary vocabulary;

  std::size_t size() const { return molecules.size(); }

  /// Empirical distribution over atom counts; probabilities sum to 1.
  std::map<std::size_t, double> size_histogram() const {
    std::map<std::size_t, double> hist;
    for (const auto& m : molecules) hist[m.atom_count()] += 1.0;
    for (auto& [k, v] : hist) v /= static_cast<double>(molecules.size());
    return hist;
  }
};

// ---------------------------------------------------------------------------
// Extended-XYZ corpus file:
//   repeated blocks of
//     line 1:      integer M
//     line 2:      space-separated key=value property pairs (may be empty)
//     lines 3..M+2: SYMBOL x y z   (Angstrom)
// UTF-8, LF line endings.
// ---------------------------------------------------------------------------

inline Corpus load_corpus(std::istream& is,
                          Vocabulary vocab = Vocabulary::qm9()) {
  Corpus corpus;
  corpus.vocabulary = std::move(vocab);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    // skip blank separator lines between blocks
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::size_t m = 0;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(line, &pos);
      if (v <= 0 || line.find_first_not_of(" \t\r", pos) != std::string::npos)
        throw std::invalid_argument("trailing data");
      m = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw DataError("corpus line " + std::to_string(line_no) +
                      ": malformed atom count '" + line + "'");
    }

    Molecule mol;
    if (!std::getline(is, line))
      throw DataError("corpus line " + std::to_string(line_no) +
                      ": missing property line");
    ++line_no;
    {
      std::istringstream ps(line);
      std::string token;
      while (ps >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos || eq == 0)
          throw DataError("corpus line " + std::to_string(line_no) +
                          ": expected key=value, got '" + token + "'");
        try {
          mol.properties[token.substr(0, eq)] = std::stod(token.substr(eq + 1));
        } catch (const std::exception&) {
          throw DataError("corpus line " + std::to_string(line_no) +
                          ": bad property value in '" + token + "'");
        }
      }
    }

    for (std::size_t i = 0; i < m; ++i) {
      if (!std::getline(is, line))
        throw DataError("corpus: unexpected end of file inside molecule at line " +
                        std::to_string(line_no));
      ++line_no;
      std::istringstream as(line);
      std::string sym;
      double x, y, z;
      if (!(as >> sym >> x >> y >> z))
        throw DataError("corpus line " + std::to_string(line_no) +
                        ": malformed atom record '" + line + "'");
      const int idx = corpus.vocabulary.index_of(sym);
      if (idx < 0)
        throw DataError("corpus line " + std::to_string(line_no) +
                        ": unknown element symbol '" + sym + "'");
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw DataError("corpus line " + std::to_string(line_no) +
                        ": non-finite coordinate");
      mol.types.push_back(idx);
      mol.coords.insert(mol.coords.end(), {x, y, z});
    }
    corpus.molecules.push_back(std::move(mol));
  }
  return corpus;
}

inline Corpus load_corpus_file(const std::string& path,
                               Vocabulary vocab = Vocabulary::qm9()) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open corpus file: " + path);
  return load_corpus(f, std::move(vocab));
}

/// Canonical writer: properties sorted by key, floats at 17 significant
/// digits, LF endings. Reload-and-rewrite reproduces the bytes exactly.
inline void save_corpus(std::ostream& os, const Corpus& corpus) {
  char buf[64];
  for (const auto& mol : corpus.molecules) {
    os << mol.atom_count() << "\n";
    bool first = true;
    for (const auto& [k, v] : mol.properties) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      os << (first ? "" : " ") << k << "=" << buf;
      first = false;
    }
    os << "\n";
    for (std::size_t i = 0; i < mol.atom_count(); ++i) {
      os << corpus.vocabulary.symbols[static_cast<std::size_t>(mol.types[i])];
      for (int d = 0; d < 3; ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", mol.coords[3 * i + d]);
        os << " " << buf;
      }
      os << "\n";
    }
  }
}

inline void save_corpus_file(const std::string& path, const Corpus& corpus) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open output file: " + path);
  save_corpus(f, corpus);
}

// ---------------------------------------------------------------------------
// Property normalization (training-split statistics, population convention).
// ---------------------------------------------------------------------------

struct PropertyStats {
  std::string name;
  double mean = 0.0;
  double stddev = 1.0;

  double normalize(double v) const { return (v - mean) / stddev; }
  double denormalize(double v) const { return v * stddev + mean; }
};

inline PropertyStats compute_property_stats(
    const Corpus& corpus, const std::string& name,
    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("property stats: empty index set");
  double sum = 0.0;
  for (std::size_t i : indices) {
    const auto& props = corpus.molecules[i].properties;
    const auto it = props.find(name);
    if (it == props.end())
      throw DataError("molecule " + std::to_string(i) + " lacks property '" +
                      name + "'");
    sum += it->second;
  }
  const double mean = sum / static_cast<double>(indices.size());
  double var = 0.0;
  for (std::size_t i : indices) {
    const double d = corpus.molecules[i].properties.at(name) - mean;
    var += d * d;
  }
  var /= static_cast<double>(indices.size());
  if (var <= 0.0)
    throw DataError("property '" + name + "' is constant over the training split");
  return PropertyStats{name, mean, std::sqrt(var)};
}

/// Normalized labels for the given indices, plus the stats used.
inline std::pair<std::vector<double>, PropertyStats> normalize_property(
    const Corpus& corpus, const std::string& name,
    const std::vector<std::size_t>& indices) {
  PropertyStats stats = compute_property_stats(corpus, name, indices);
  std::vector<double> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices)
    labels.push_back(stats.normalize(corpus.molecules[i].properties.at(name)));
  return {std::move(labels), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Dataset splitting.
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<std::size_t> train, validation, test;
  std::uint64_t seed = 0;
};

inline SplitSpec split_counts(std::size_t corpus_size, std::size_t n_train,
                              std::size_t n_val, std::size_t n_test,
                              std::uint64_t seed) {
  if (n_train + n_val + n_test > corpus_size)
    throw DataError("split: requested " +
                    std::to_string(n_train + n_val + n_test) +
                    " molecules from a corpus of " +
                    std::to_string(corpus_size));
  std::vector<std::size_t> perm(corpus_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  // Fisher-Yates
  for (std::size_t i = corpus_size; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(perm[i - 1], perm[j]);
  }
  SplitSpec s;
  s.seed = seed;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                      perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val + n_test));
  return s;
}

/// Ratio split; leftover molecules from floor rounding go to the train set.
inline SplitSpec split_ratios(std::size_t corpus_size, double r_train,
                              double r_val, double r_test, std::uint64_t seed) {
  if (r_train < 0 || r_val < 0 || r_test < 0 || r_train + r_val + r_test > 1.0 + 1e-12)
    throw DataError("split: ratios must be nonnegative and sum to at most 1");
  const auto n_val = static_cast<std::size_t>(r_val * static_cast<double>(corpus_size));
  const auto n_test = static_cast<std::size_t>(r_test * static_cast<double>(corpus_size));
  std::size_t n_train = static_cast<std::size_t>(r_train * static_cast<double>(corpus_size));
  if (r_train + r_val + r_test > 1.0 - 1e-12)
    n_train = corpus_size - n_val - n_test;  // absorb rounding remainder
  return split_counts(corpus_size, n_train, n_val, n_test, seed);
}

/// Draws an atom count from a normalized size histogram.
inline std::size_t sample_size(const std::map<std::size_t, double>& histogram,
                               Rng& rng) {
  if (histogram.empty()) throw DataError("sample_size: empty histogram");
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& [m, p] : histogram) {
    acc += p;
    if (u < acc) return m;
  }
  return histogram.rbegin()->first;  // guard against rounding at u ~ 1
}

}  // namespace unigem
