#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unigem/adam.hpp"
#include "unigem/common.hpp"
#include "unigem/denoiser.hpp"
#include "unigem/molecule.hpp"
#include "unigem/rng.hpp"
#include "unigem/schedule.hpp"
#include "unigem/serialize.hpp"
#include "unigem/training.hpp"

namespace unigem {

// Checkpoint file: "UGCK1" magic, u64 LE header length, JSON header, then a
// UGTN1 tensor container holding parameters and optimizer moments. The JSON
// header makes the checkpoint self-describing: network configuration,
// schedule, training mode, step count, vocabulary, property normalization,
// and the size histogram the sampler draws atom counts from.

inline constexpr const char* kCheckpointMagic = "UGCK1";

struct CheckpointMeta {
  std::string version = kVersion;
  std::string scalar_type = "f64";
  DenoiserConfig denoiser;
  std::size_t horizon = 1000;
  std::size_t nucleation_time = 10;
  double schedule_precision = 1e-5;
  TrainMode mode = TrainMode::unigem;
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> vocabulary;
  std::optional<PropertyStats> property_stats;
  std::map<std::size_t, double> size_histogram;
  std::uint64_t corpus_fingerprint = 0;
  std::uint64_t split_seed = 0;
  std::size_t train_count = 0;
  std::string config_echo;  // full run configuration as launched

  NoiseSchedule schedule() const {
    return build_schedule(horizon, nucleation_time, schedule_precision);
  }
};

inline std::uint64_t corpus_fingerprint(const Corpus& corpus) {
  std::ostringstream os;
  save_corpus(os, corpus);
  return fnv1a(os.str());
}

namespace detail {

inline nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["scalar_type"] = m.scalar_type;
  j["denoiser"] = {{"hidden", m.denoiser.hidden},
                   {"layers", m.denoiser.layers},
                   {"shared_layers", m.denoiser.shared_layers},
                   {"atom_types", m.denoiser.atom_types},
                   {"property_head", m.denoiser.property_head},
                   {"coord_clip", m.denoiser.coord_clip}};
  j["schedule"] = {{"horizon", m.horizon},
                   {"nucleation_time", m.nucleation_time},
                   {"precision", m.schedule_precision}};
  j["mode"] = train_mode_name(m.mode);
  j["step"] = m.step;
  j["seed"] = m.seed;
  j["vocabulary"] = m.vocabulary;
  if (m.property_stats) {
    j["property"] = {{"name", m.property_stats->name},
                     {"mean", m.property_stats->mean},
                     {"std", m.property_stats->stddev}};
  }
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [size, p] : m.size_histogram)
    hist.push_back({{"atoms", size}, {"p", p}});
  j["size_histogram"] = hist;
  j["corpus_fingerprint"] = m.corpus_fingerprint;
  j["split_seed"] = m.split_seed;
  j["train_count"] = m.train_count;
  j["config_echo"] = m.config_echo;
  return j;
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.version = j.at("version").get<std::string>();
  m.scalar_type = j.at("scalar_type").get<std::string>();
  const auto& d = j.at("denoiser");
  m.denoiser.hidden = d.at("hidden").get<std::size_t>();
  m.denoiser.layers = d.at("layers").get<std::size_t>();
  m.denoiser.shared_layers = d.at("shared_layers").get<std::size_t>();
  m.denoiser.atom_types = d.at("atom_types").get<std::size_t>();
  m.denoiser.property_head = d.at("property_head").get<bool>();
  m.denoiser.coord_clip = d.at("coord_clip").get<double>();
  const auto& s = j.at("schedule");
  m.horizon = s.at("horizon").get<std::size_t>();
  m.nucleation_time = s.at("nucleation_time").get<std::size_t>();
  m.schedule_precision = s.at("precision").get<double>();
  m.mode = parse_train_mode(j.at("mode").get<std::string>());
  m.step = j.at("step").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
  if (j.contains("property")) {
    PropertyStats ps;
    ps.name = j["property"].at("name").get<std::string>();
    ps.mean = j["property"].at("mean").get<double>();
    ps.stddev = j["property"].at("std").get<double>();
    m.property_stats = ps;
  }
  for (const auto& e : j.at("size_histogram"))
    m.size_histogram[e.at("atoms").get<std::size_t>()] = e.at("p").get<double>();
  m.corpus_fingerprint = j.at("corpus_fingerprint").get<std::uint64_t>();
  m.split_seed = j.at("split_seed").get<std::uint64_t>();
  m.train_count = j.at("train_count").get<std::size_t>();
  m.config_echo = j.value("config_echo", "");
  return m;
}

}  // namespace detail

template <class Real>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const Denoiser<Real>& net, const Adam<Real>* adam) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint file for writing: " + path);
  const std::string header = detail::meta_to_json(meta).dump();
  f.write(kCheckpointMagic, 5);
  detail::write_u64(f, header.size());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));

  NamedTensors<Real> tensors = net.params();
  if (adam != nullptr) {
    auto* mut = const_cast<Adam<Real>*>(adam);
    const auto& params = net.params();
    auto& ms = mut->first_moments();
    auto& vs = mut->second_moments();
    for (std::size_t k = 0; k < ms.size() && k < params.size(); ++k) {
      tensors.emplace_back("adam.m/" + params[k].first,
                           Tensor<Real>(params[k].second.shape(), ms[k]));
      tensors.emplace_back("adam.v/" + params[k].first,
                           Tensor<Real>(params[k].second.shape(), vs[k]));
    }
  }
  write_tensors(f, tensors);
  if (!f) throw DataError("checkpoint write failed: " + path);
}

template <class Real>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  NamedTensors<Real> params;       // network parameters only
  NamedTensors<Real> adam_moments;  // adam.m/* and adam.v/* entries
};

template <class Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint file: " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::string(magic, 5) != kCheckpointMagic)
    throw DataError("not a checkpoint file (bad magic): " + path);
  const std::uint64_t len = detail::read_u64(f);
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  if (!f) throw DataError("checkpoint header truncated: " + path);

  LoadedCheckpoint<Real> out;
  try {
    out.meta = detail::meta_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header is not valid JSON: " +
                    std::string(e.what()));
  }
  for (auto& [name, t] : read_tensors<Real>(f)) {
    if (name.rfind("adam.", 0) == 0)
      out.adam_moments.emplace_back(std::move(name), std::move(t));
    else
      out.params.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

/// Rebuilds a denoiser (and optionally Adam state) from a loaded checkpoint.
template <class Real>
Denoiser<Real> restore_denoiser(const LoadedCheckpoint<Real>& ck) {
  Denoiser<Real> net(ck.meta.denoiser, ck.meta.seed);
  net.load_params(ck.params);
  return net;
}

template <class Real>
void restore_adam(const LoadedCheckpoint<Real>& ck, const Denoiser<Real>& net,
                  Adam<Real>& adam) {
  if (ck.adam_moments.empty()) return;
  const auto& params = net.params();
  std::vector<std::vector<Real>> m(params.size()), v(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    m[k].assign(params[k].second.size(), Real(0));
    v[k].assign(params[k].second.size(), Real(0));
    for (const auto& [name, t] : ck.adam_moments) {
      if (name == "adam.m/" + params[k].first)
        m[k].assign(t.data(), t.data() + t.size());
      else if (name == "adam.v/" + params[k].first)
        v[k].assign(t.data(), t.data() + t.size());
    }
  }
  adam.restore(std::move(m), std::move(v), ck.meta.step);
}

/// Human-readable config diff used when a resume is refused.
inline std::string checkpoint_config_diff(const CheckpointMeta& a,
                                          const DenoiserConfig& b_denoiser,
                                          std::size_t b_horizon,
                                          std::size_t b_nucleation,
                                          double b_precision) {
  std::ostringstream os;
  auto diff = [&os](const char* field, auto lhs, auto rhs) {
    if (lhs != rhs)
      os << "  " << field << ": checkpoint=" << lhs << " run=" << rhs << "\n";
  };
  diff("hidden", a.denoiser.hidden, b_denoiser.hidden);
  diff("layers", a.denoiser.layers, b_denoiser.layers);
  diff("shared_layers", a.denoiser.shared_layers, b_denoiser.shared_layers);
  diff("atom_types", a.denoiser.atom_types, b_denoiser.atom_types);
  diff("property_head", a.denoiser.property_head, b_denoiser.property_head);
  diff("horizon", a.horizon, b_horizon);
  diff("nucleation_time", a.nucleation_time, b_nucleation);
  diff("precision", a.schedule_precision, b_precision);
  return os.str();
}

}  // namespace unigem
