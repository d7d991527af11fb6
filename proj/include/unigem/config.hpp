#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unigem/common.hpp"
#include "unigem/denoiser.hpp"
#include "unigem/molecule.hpp"
#include "unigem/training.hpp"

namespace unigem {

/// Flat run configuration: one JSON object, every knob a top-level key,
/// command-line flags override file values. Defaults mirror the reference
/// network/training hyperparameters (embedding 256, 9 layers, 1 shared,
/// batch 64, lr 1e-4, T 1000, nucleation time 10, weights 1).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "f64";  // f64 | f32

  // data
  std::string corpus;
  std::vector<std::string> vocabulary = {"H", "C", "N", "O", "F"};
  double split_train = 0.8, split_val = 0.1, split_test = 0.1;
  std::uint64_t split_seed = 0;

  // schedule
  std::size_t horizon = 1000;
  std::size_t nucleation_time = 10;
  double schedule_precision = 1e-5;

  // network
  std::size_t hidden = 256;
  std::size_t layers = 9;
  std::size_t shared_layers = 1;
  bool property_head = true;
  double coord_clip = 100.0;

  // training
  std::string mode = "unigem";
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  double learning_rate = 1e-4;
  double weight_x = 1.0, weight_h = 1.0, weight_c = 1.0;
  std::string property;
  double grad_clip = 0.0;
  std::size_t checkpoint_every = 0;

  // sampling
  std::size_t sample_count = 10;
  std::size_t fixed_size = 0;
  std::string target_property;
  double target_value = 0.0;
  double guidance_lambda = 0.0;
  std::size_t workers = 1;

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"seed", seed},
        {"precision", precision},
        {"corpus", corpus},
        {"vocabulary", vocabulary},
        {"split_train", split_train},
        {"split_val", split_val},
        {"split_test", split_test},
        {"split_seed", split_seed},
        {"horizon", horizon},
        {"nucleation_time", nucleation_time},
        {"schedule_precision", schedule_precision},
        {"hidden", hidden},
        {"layers", layers},
        {"shared_layers", shared_layers},
        {"property_head", property_head},
        {"coord_clip", coord_clip},
        {"mode", mode},
        {"batch_size", batch_size},
        {"epochs", epochs},
        {"learning_rate", learning_rate},
        {"weight_x", weight_x},
        {"weight_h", weight_h},
        {"weight_c", weight_c},
        {"property", property},
        {"grad_clip", grad_clip},
        {"checkpoint_every", checkpoint_every},
        {"sample_count", sample_count},
        {"fixed_size", fixed_size},
        {"target_property", target_property},
        {"target_value", target_value},
        {"guidance_lambda", guidance_lambda},
        {"workers", workers}};
  }

  void apply_json(const nlohmann::json& j) {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", seed);
    get("precision", precision);
    get("corpus", corpus);
    get("vocabulary", vocabulary);
    get("split_train", split_train);
    get("split_val", split_val);
    get("split_test", split_test);
    get("split_seed", split_seed);
    get("horizon", horizon);
    get("nucleation_time", nucleation_time);
    get("schedule_precision", schedule_precision);
    get("hidden", hidden);
    get("layers", layers);
    get("shared_layers", shared_layers);
    get("property_head", property_head);
    get("coord_clip", coord_clip);
    get("mode", mode);
    get("batch_size", batch_size);
    get("epochs", epochs);
    get("learning_rate", learning_rate);
    get("weight_x", weight_x);
    get("weight_h", weight_h);
    get("weight_c", weight_c);
    get("property", property);
    get("grad_clip", grad_clip);
    get("checkpoint_every", checkpoint_every);
    get("sample_count", sample_count);
    get("fixed_size", fixed_size);
    get("target_property", target_property);
    get("target_value", target_value);
    get("guidance_lambda", guidance_lambda);
    get("workers", workers);
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!to_json().contains(it.key()))
        throw ConfigError("config: unknown key '" + it.key() + "'");
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    RunConfig cfg;
    try {
      cfg.apply_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
    return cfg;
  }

  DenoiserConfig denoiser_config() const {
    DenoiserConfig d;
    d.hidden = hidden;
    d.layers = layers;
    d.shared_layers = shared_layers;
    d.atom_types = vocabulary.size();
    d.property_head = property_head;
    d.coord_clip = coord_clip;
    return d;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.mode = parse_train_mode(mode);
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.learning_rate = learning_rate;
    t.weight_x = weight_x;
    t.weight_h = weight_h;
    t.weight_c = weight_c;
    t.seed = seed;
    t.property = property;
    t.grad_clip = grad_clip;
    t.checkpoint_every = checkpoint_every;
    return t;
  }

  std::string echo() const { return to_json().dump(); }
};

}  // namespace unigem
