#include "unigem/molecule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "unigem/rng.hpp"

using namespace unigem;

namespace {

const char* kTwoMoleculeFile =
    "5\n"
    "lumo=-0.267\n"
    "C 0.0 0.0 0.0\n"
    "H 0.629 0.629 0.629\n"
    "H -0.629 -0.629 0.629\n"
    "H -0.629 0.629 -0.629\n"
    "H 0.629 -0.629 -0.629\n"
    "3\n"
    "lumo=0.05\n"
    "O 0.0 0.0 0.119\n"
    "H 0.0 0.763 -0.477\n"
    "H 0.0 -0.763 -0.477\n";

Molecule random_molecule(std::size_t m, Rng& rng) {
  Molecule mol;
  for (std::size_t i = 0; i < m; ++i) {
    mol.types.push_back(static_cast<int>(rng.uniform_int(0, 4)));
    for (int d = 0; d < 3; ++d) mol.coords.push_back(rng.normal() * 2.0);
  }
  return mol;
}

}  // namespace

TEST(Moldata, ParsesMethaneAndWater) {
  std::istringstream is(kTwoMoleculeFile);
  Corpus corpus = load_corpus(is);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus.molecules[0].atom_count(), 5u);
  EXPECT_EQ(corpus.molecules[1].atom_count(), 3u);
  EXPECT_EQ(corpus.molecules[0].types[0], 1);  // C
  EXPECT_EQ(corpus.molecules[1].types[0], 3);  // O
  EXPECT_DOUBLE_EQ(corpus.molecules[0].properties.at("lumo"), -0.267);
}

TEST(Moldata, UnknownSymbolNamesLine) {
  std::istringstream is("1\n\nXx 0 0 0\n");
  try {
    load_corpus(is);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Xx"), std::string::npos);
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  }
}

TEST(Moldata, MalformedCountRejected) {
  std::istringstream is("abc\n\nH 0 0 0\n");
  EXPECT_THROW(load_corpus(is), DataError);
  std::istringstream is2("2 extra\n\nH 0 0 0\nH 1 0 0\n");
  EXPECT_THROW(load_corpus(is2), DataError);
}

TEST(Moldata, RoundTripIsByteIdentical) {
  std::istringstream is(kTwoMoleculeFile);
  Corpus corpus = load_corpus(is);
  std::ostringstream first;
  save_corpus(first, corpus);
  std::istringstream is2(first.str());
  Corpus reloaded = load_corpus(is2);
  std::ostringstream second;
  save_corpus(second, reloaded);
  EXPECT_EQ(first.str(), second.str());
}

TEST(Moldata, CenterComExamples) {
  Molecule pre;
  pre.types = {0, 0};
  pre.coords = {1, 0, 0, -1, 0, 0};
  Molecule c = center_com(pre);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(c.coords[i], pre.coords[i]);

  Molecule two;
  two.types = {0, 0};
  two.coords = {2, 2, 2, 0, 0, 0};
  Molecule c2 = center_com(two);
  EXPECT_DOUBLE_EQ(c2.coords[0], 1);
  EXPECT_DOUBLE_EQ(c2.coords[3], -1);
  EXPECT_DOUBLE_EQ(c2.coords[4], -1);

  Rng rng(derive_seed(5, "center"));
  Molecule r = center_com(random_molecule(10, rng));
  const auto com = r.com();
  for (int d = 0; d < 3; ++d) EXPECT_LT(std::abs(com[d]), 1e-12);
}

TEST(Moldata, CenteringIdempotentAndCommutesWithRotation) {
  Rng rng(derive_seed(6, "center-rot"));
  Molecule mol = random_molecule(7, rng);
  // rotation about z by 0.7 rad
  const double ct = std::cos(0.7), st = std::sin(0.7);
  auto rotate = [&](const Molecule& m) {
    Molecule out = m;
    for (std::size_t i = 0; i < m.atom_count(); ++i) {
      const double x = m.coords[3 * i], y = m.coords[3 * i + 1];
      out.coords[3 * i] = ct * x - st * y;
      out.coords[3 * i + 1] = st * x + ct * y;
    }
    return out;
  };
  const Molecule a = center_com(rotate(mol));
  const Molecule b = rotate(center_com(mol));
  for (std::size_t i = 0; i < mol.coords.size(); ++i)
    EXPECT_NEAR(a.coords[i], b.coords[i], 1e-12);
  const Molecule c1 = center_com(mol);
  const Molecule c2 = center_com(c1);
  for (std::size_t i = 0; i < mol.coords.size(); ++i)
    EXPECT_NEAR(c1.coords[i], c2.coords[i], 1e-14);
}

TEST(Moldata, NormalizePropertyPopulationConvention) {
  Corpus corpus;
  corpus.vocabulary = Vocabulary::qm9();
  for (double v : {1.0, 3.0}) {
    Molecule m;
    m.types = {0};
    m.coords = {0, 0, 0};
    m.properties["p"] = v;
    corpus.molecules.push_back(m);
  }
  auto [labels, stats] = normalize_property(corpus, "p", {0, 1});
  EXPECT_DOUBLE_EQ(stats.mean, 2.0);
  EXPECT_DOUBLE_EQ(stats.stddev, 1.0);
  EXPECT_DOUBLE_EQ(labels[0], -1.0);
  EXPECT_DOUBLE_EQ(labels[1], 1.0);
  EXPECT_NEAR(stats.denormalize(stats.normalize(2.7)), 2.7, 1e-12);
}

TEST(Moldata, ConstantPropertyRejected) {
  Corpus corpus;
  corpus.vocabulary = Vocabulary::qm9();
  for (int i = 0; i < 3; ++i) {
    Molecule m;
    m.types = {0};
    m.coords = {0, 0, 0};
    m.properties["p"] = 5.0;
    corpus.molecules.push_back(m);
  }
  EXPECT_THROW(normalize_property(corpus, "p", {0, 1, 2}), DataError);
}

TEST(Moldata, DenormalizedMaeEqualsRawMae) {
  Rng rng(derive_seed(8, "mae"));
  Corpus corpus;
  corpus.vocabulary = Vocabulary::qm9();
  std::vector<std::size_t> idx;
  for (int i = 0; i < 20; ++i) {
    Molecule m;
    m.types = {0};
    m.coords = {0, 0, 0};
    m.properties["p"] = rng.normal() * 4.0 + 1.5;
    corpus.molecules.push_back(m);
    idx.push_back(static_cast<std::size_t>(i));
  }
  auto [labels, stats] = normalize_property(corpus, "p", idx);
  // predictions in normalized space, compare MAE computed both ways
  double mae_denorm = 0.0, mae_raw = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double pred_norm = labels[i] + 0.1 * rng.normal();
    const double raw = corpus.molecules[i].properties.at("p");
    mae_denorm += std::abs(stats.denormalize(pred_norm) - raw);
    mae_raw += std::abs(pred_norm - stats.normalize(raw)) * stats.stddev;
  }
  EXPECT_NEAR(mae_denorm / 20.0, mae_raw / 20.0, 1e-12);
}

TEST(Moldata, SplitSizesAndDeterminism) {
  SplitSpec s = split_ratios(10, 0.8, 0.1, 0.1, 7);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);

  std::set<std::size_t> all;
  for (auto v : s.train) all.insert(v);
  for (auto v : s.validation) all.insert(v);
  for (auto v : s.test) all.insert(v);
  EXPECT_EQ(all.size(), 10u);  // disjoint, covering

  SplitSpec s2 = split_ratios(10, 0.8, 0.1, 0.1, 7);
  EXPECT_EQ(s.train, s2.train);
  EXPECT_EQ(s.validation, s2.validation);
  EXPECT_EQ(s.test, s2.test);

  SplitSpec s3 = split_ratios(100, 0.8, 0.1, 0.1, 8);
  SplitSpec s4 = split_ratios(100, 0.8, 0.1, 0.1, 9);
  EXPECT_NE(s3.train, s4.train);  // different seeds permute differently

  EXPECT_THROW(split_counts(10, 9, 1, 1, 0), DataError);
}

TEST(Moldata, SizeHistogramSamplingMatchesFrequencies) {
  Corpus corpus;
  corpus.vocabulary = Vocabulary::qm9();
  Rng rng(derive_seed(10, "hist"));
  const std::vector<std::size_t> sizes = {3, 3, 3, 5, 5, 9};
  for (std::size_t m : sizes) corpus.molecules.push_back(random_molecule(m, rng));
  auto hist = corpus.size_histogram();
  double total = 0;
  for (auto& [m, p] : hist) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(hist.at(3), 0.5, 1e-12);

  const int n = 100000;
  std::map<std::size_t, int> counts;
  Rng draw_rng(derive_seed(10, "hist-draws"));
  for (int i = 0; i < n; ++i) ++counts[sample_size(hist, draw_rng)];
  for (const auto& [m, p] : hist) {
    const double expected = p * n;
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(counts[m], expected, 3 * sigma) << "size " << m;
  }
}

TEST(Moldata, DegenerateHistogramAlwaysSampled) {
  std::map<std::size_t, double> hist = {{5, 1.0}};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_size(hist, rng), 5u);
}
