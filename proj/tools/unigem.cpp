// unigem command-line tool: train / sample / eval / diagnose / schedule-dump.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unigem/checkpoint.hpp"
#include "unigem/config.hpp"
#include "unigem/diagnostics.hpp"
#include "unigem/metrics.hpp"
#include "unigem/molecule.hpp"
#include "unigem/sampler.hpp"
#include "unigem/schedule.hpp"
#include "unigem/training.hpp"

namespace {

using namespace unigem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_artifact_comments(std::ostream& os, const RunConfig& cfg) {
  os << "# unigem " << kVersion << "\n";
  os << "# config " << cfg.echo() << "\n";
}

void write_meta_json(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write artifact metadata: " + path);
  nlohmann::json j;
  j["tool"] = std::string("unigem ") + kVersion;
  j["config"] = cfg.to_json();
  f << j.dump(2) << "\n";
}

Vocabulary vocab_from(const std::vector<std::string>& symbols) {
  return Vocabulary{symbols};
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainPaths {
  std::string out_checkpoint = "checkpoint.ugck";
  std::string log;
  std::string init_from;
};

template <class Real>
int run_train(const RunConfig& cfg, const TrainPaths& paths) {
  if (cfg.corpus.empty()) throw ConfigError("train: --corpus is required");
  const Vocabulary vocab = vocab_from(cfg.vocabulary);
  Corpus corpus = load_corpus_file(cfg.corpus, vocab);
  const SplitSpec split = split_ratios(corpus.size(), cfg.split_train,
                                       cfg.split_val, cfg.split_test,
                                       cfg.split_seed);
  TrainingData data =
      TrainingData::from_corpus(corpus, split.train, cfg.property);

  const NoiseSchedule sched = build_schedule(
      cfg.horizon, cfg.nucleation_time, cfg.schedule_precision);
  Denoiser<Real> net(cfg.denoiser_config(), cfg.seed);
  std::size_t start_step = 0;
  Adam<Real>* restored_adam = nullptr;
  LoadedCheckpoint<Real> ck;
  if (!paths.init_from.empty()) {
    ck = load_checkpoint<Real>(paths.init_from);
    const std::string diff = checkpoint_config_diff(
        ck.meta, cfg.denoiser_config(), cfg.horizon, cfg.nucleation_time,
        cfg.schedule_precision);
    if (!diff.empty())
      throw ConfigError("refusing to resume: checkpoint configuration differs\n" +
                        diff);
    net.load_params(ck.params);
    start_step = ck.meta.step;
  }

  Trainer<Real> trainer(cfg.train_config(), &net, sched, data);
  if (!paths.init_from.empty()) {
    restore_adam(ck, net, trainer.optimizer());
    if (cfg.train_config().mode != TrainMode::frozen_head)
      trainer.set_step_count(start_step);
  }

  std::ofstream log;
  if (!paths.log.empty()) {
    log.open(paths.log);
    if (!log) throw DataError("cannot open log file: " + paths.log);
    write_artifact_comments(log, cfg);
    log << run_log_header(trainer.config().mode) << "\n";
  }

  CheckpointMeta meta;
  meta.scalar_type = std::is_same_v<Real, float> ? "f32" : "f64";
  meta.denoiser = net.config();
  meta.horizon = cfg.horizon;
  meta.nucleation_time = cfg.nucleation_time;
  meta.schedule_precision = cfg.schedule_precision;
  meta.mode = trainer.config().mode;
  meta.seed = cfg.seed;
  meta.vocabulary = cfg.vocabulary;
  meta.property_stats = data.property_stats;
  {
    Corpus train_view;
    train_view.vocabulary = vocab;
    for (std::size_t i : split.train)
      train_view.molecules.push_back(corpus.molecules[i]);
    meta.size_histogram = train_view.size_histogram();
  }
  meta.corpus_fingerprint = corpus_fingerprint(corpus);
  meta.split_seed = cfg.split_seed;
  meta.train_count = split.train.size();
  meta.config_echo = cfg.echo();

  const std::size_t total_steps =
      cfg.epochs * trainer.steps_per_epoch();
  LossRecord last;
  for (std::size_t s = trainer.step_count(); s < total_steps;) {
    last = trainer.step();
    s = trainer.step_count();
    if (log) log << run_log_row(last) << "\n";
    if (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) {
      meta.step = s;
      save_checkpoint(paths.out_checkpoint, meta, net, &trainer.optimizer());
    }
  }
  meta.step = trainer.step_count();
  save_checkpoint(paths.out_checkpoint, meta, net, &trainer.optimizer());

  std::cout << "trained " << train_mode_name(meta.mode) << " for " << meta.step
            << " steps (" << cfg.epochs << " epochs x "
            << trainer.steps_per_epoch() << " steps)\n";
  std::cout << "final: " << run_log_header(meta.mode) << "\n";
  std::cout << "       " << run_log_row(last) << "\n";
  std::cout << "checkpoint: " << paths.out_checkpoint << "\n";
  if (net.clip_events() > 0)
    std::cout << "coordinate-update clip engaged " << net.clip_events()
              << " times\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

struct SamplePaths {
  std::string checkpoint;
  std::string out = "generated.xyz";
  std::string sidecar;
};

template <class Real>
int run_sample(const RunConfig& cfg, const SamplePaths& paths) {
  auto ck = load_checkpoint<Real>(paths.checkpoint);
  if (ck.meta.mode == TrainMode::joint)
    throw ConfigError(
        "sampling needs a coordinate-diffusion checkpoint; this one was "
        "trained in joint mode");
  Denoiser<Real> net = restore_denoiser(ck);
  const NoiseSchedule sched = ck.meta.schedule();
  Sampler<Real> sampler(&net, sched, ck.meta.property_stats);

  SampleRequest req;
  req.count = cfg.sample_count;
  req.fixed_size = cfg.fixed_size;
  req.seed = cfg.seed;
  req.workers = cfg.workers;
  if (cfg.guidance_lambda > 0.0 || !cfg.target_property.empty()) {
    if (!net.config().property_head || !ck.meta.property_stats)
      throw ConfigError(
          "guided sampling requires a checkpoint with a trained property head");
    if (cfg.target_property != ck.meta.property_stats->name)
      throw ConfigError("checkpoint predicts property '" +
                        ck.meta.property_stats->name + "', not '" +
                        cfg.target_property + "'");
    GuidanceSpec g;
    g.target = ck.meta.property_stats->normalize(cfg.target_value);
    g.strength = cfg.guidance_lambda;
    req.guidance = g;
  }

  const auto generated = sampler.generate(req, ck.meta.size_histogram);

  Corpus out;
  out.vocabulary = vocab_from(ck.meta.vocabulary);
  for (const auto& g : generated) {
    Molecule mol = g.molecule;
    if (g.predicted) mol.properties["predicted"] = *g.predicted;
    out.molecules.push_back(std::move(mol));
  }
  save_corpus_file(paths.out, out);
  write_meta_json(paths.out + ".meta.json", cfg);

  const std::string sidecar =
      paths.sidecar.empty() ? paths.out + ".chains.csv" : paths.sidecar;
  {
    std::ofstream f(sidecar);
    if (!f) throw DataError("cannot write chain metadata: " + sidecar);
    write_artifact_comments(f, cfg);
    f << "chain,seed,atoms,steps,max_com_norm\n";
    for (std::size_t i = 0; i < generated.size(); ++i) {
      const auto& g = generated[i];
      f << i << "," << g.chain_seed << "," << g.molecule.atom_count() << ","
        << g.steps << "," << g.max_com_norm << "\n";
    }
  }
  std::cout << "sampled " << generated.size() << " molecules -> " << paths.out
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string input;
  std::string reference;
  std::string csv;
  std::string bond_table;
  std::optional<double> target_value;
};

int run_eval(const RunConfig& cfg, const EvalArgs& args) {
  const Vocabulary vocab = vocab_from(cfg.vocabulary);
  Corpus corpus = load_corpus_file(args.input, vocab);
  if (corpus.molecules.empty()) throw DataError("eval: empty corpus");
  BondTable table = BondTable::qm9_default();
  if (!args.bond_table.empty()) {
    std::ifstream f(args.bond_table);
    if (!f) throw DataError("cannot open bond table: " + args.bond_table);
    table = load_bond_table(f);
  }

  EvalReport rep = evaluate(corpus.molecules, vocab, table);
  if (args.target_value) {
    std::vector<double> predictions, references;
    for (const auto& mol : corpus.molecules) {
      const auto it = mol.properties.find("predicted");
      if (it == mol.properties.end())
        throw DataError("eval: molecule lacks a predicted= property");
      predictions.push_back(it->second);
      references.push_back(*args.target_value);
    }
    const auto mae =
        property_mae(corpus.molecules, predictions, references, vocab, table);
    rep.average_mae = mae.average_mae;
    rep.stable_mae = mae.stable_mae;
    rep.mol_stable_fraction = mae.mol_stable_fraction;
  }

  std::cout << eval_report_text(rep);
  if (!args.reference.empty()) {
    Corpus ref = load_corpus_file(args.reference, vocab);
    std::cout << "--- reference ---\n"
              << eval_report_text(evaluate(ref.molecules, vocab, table));
  }
  if (!args.csv.empty()) {
    std::ofstream f(args.csv);
    if (!f) throw DataError("cannot write CSV: " + args.csv);
    write_artifact_comments(f, cfg);
    f << eval_report_csv_header() << "\n" << eval_report_csv_row(rep) << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

std::ofstream open_csv(const std::string& path, const RunConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write output: " + path);
  write_artifact_comments(f, cfg);
  return f;
}

int run_diagnose_tweedie(const RunConfig& cfg, const std::string& out) {
  const NoiseSchedule sched = build_schedule(
      cfg.horizon, cfg.nucleation_time, cfg.schedule_precision);
  ToyGaussian gauss{0.49, 1};
  ToyMixture mixture;
  auto f = open_csv(out, cfg);
  f << "t,gaussian_deviation,mixture_deviation\n";
  for (std::size_t t = 1; t <= sched.horizon;
       t = t < 10 ? t + 1 : t + sched.horizon / 20) {
    f << t << "," << tweedie_check_gaussian(gauss, sched, t, 101) << ","
      << tweedie_check_mixture(mixture, sched, t, 21, 10000) << "\n";
  }
  std::cout << "tweedie deviations -> " << out << "\n";
  return kExitOk;
}

template <class Real>
int run_diagnose_mi(const RunConfig& cfg, const std::string& out,
                    const std::string& checkpoint, std::size_t atoms,
                    std::size_t n_mc) {
  const NoiseSchedule sched = build_schedule(
      cfg.horizon, cfg.nucleation_time, cfg.schedule_precision);
  auto f = open_csv(out, cfg);
  f << "t,mutual_information,kl_estimate,lower_bound\n";

  std::optional<Denoiser<Real>> net;
  if (!checkpoint.empty()) {
    auto ck = load_checkpoint<Real>(checkpoint);
    net.emplace(restore_denoiser(ck));
  }
  // on a molecular checkpoint the toy is the zero-CoM subspace standard
  // normal over `atoms` atoms, dimension 3(M-1)
  ToyGaussian toy{1.0, net ? 3 * (atoms - 1) : 3};

  for (std::size_t t = 1; t <= sched.horizon;
       t = t < 10 ? t + 1 : t + sched.horizon / 50) {
    MiReport rep;
    if (!net) {
      rep = mi_lower_bound(toy, sched, t, nullptr, 0, cfg.seed);
    } else {
      auto x0hat = [&](const std::vector<double>& x_flat) {
        // interpret the flat vector as M x 3 coordinates; estimate
        // x0 = (x_t - sigma eps_hat) / alpha through the network
        std::vector<double> coords(atoms * 3, 0.0);
        for (std::size_t i = 0; i < x_flat.size() && i < coords.size(); ++i)
          coords[i] = x_flat[i];
        // project to zero CoM so the denoiser accepts it
        double cm[3] = {0, 0, 0};
        for (std::size_t i = 0; i < atoms; ++i)
          for (int d = 0; d < 3; ++d) cm[d] += coords[3 * i + d];
        for (int d = 0; d < 3; ++d) cm[d] /= static_cast<double>(atoms);
        for (std::size_t i = 0; i < atoms; ++i)
          for (int d = 0; d < 3; ++d) coords[3 * i + d] -= cm[d];
        Sampler<Real> s(&*net, sched);
        auto eps = s.eps_hat(coords, t);
        std::vector<double> x0(x_flat.size());
        for (std::size_t i = 0; i < x0.size(); ++i)
          x0[i] = (coords[i] - sched.sigma[t] * eps[i]) / sched.alpha[t];
        return x0;
      };
      rep = mi_lower_bound(toy, sched, t, x0hat, n_mc, cfg.seed);
    }
    f << t << "," << rep.mutual_information << "," << rep.kl_estimate << ","
      << rep.lower_bound << "\n";
  }
  std::cout << "mutual-information bound -> " << out << "\n";
  return kExitOk;
}

int run_diagnose_analytic_score(const RunConfig& cfg, const std::string& out,
                                const std::vector<std::size_t>& horizons,
                                std::size_t chains) {
  auto f = open_csv(out, cfg);
  f << "horizon,terminal_mean,terminal_variance,expected_variance,mean_se\n";
  ToyGaussian toy{1.0, 3};
  for (std::size_t T : horizons) {
    const NoiseSchedule sched =
        build_schedule(T, std::min<std::size_t>(cfg.nucleation_time, T - 1),
                       cfg.schedule_precision);
    const MomentReport rep = analytic_score_sampling(toy, sched, chains, cfg.seed);
    f << T << "," << rep.mean << "," << rep.variance << ","
      << rep.expected_variance << "," << rep.mean_se << "\n";
  }
  std::cout << "analytic-score sampler report -> " << out << "\n";
  return kExitOk;
}

/// Split ratios as used at training time, recovered from the checkpoint's
/// embedded config echo.
inline void apply_split_from_echo(const CheckpointMeta& meta, RunConfig& cfg) {
  if (meta.config_echo.empty()) return;
  try {
    const auto j = nlohmann::json::parse(meta.config_echo);
    cfg.split_train = j.value("split_train", cfg.split_train);
    cfg.split_val = j.value("split_val", cfg.split_val);
    cfg.split_test = j.value("split_test", cfg.split_test);
  } catch (const nlohmann::json::exception&) {
    // older or foreign checkpoint; fall back to the current config
  }
}

template <class Real>
int run_diagnose_profile(const RunConfig& cfg_in, const std::string& out,
                         const std::string& checkpoint, std::size_t n_per_t) {
  RunConfig cfg = cfg_in;
  auto ck = load_checkpoint<Real>(checkpoint);
  Denoiser<Real> net = restore_denoiser(ck);
  const NoiseSchedule sched = ck.meta.schedule();
  if (cfg.corpus.empty()) throw ConfigError("loss-profile: --corpus required");
  Corpus corpus = load_corpus_file(cfg.corpus, vocab_from(ck.meta.vocabulary));
  if (corpus_fingerprint(corpus) != ck.meta.corpus_fingerprint)
    std::cerr << "warning: corpus differs from the one the checkpoint was "
                 "trained on\n";
  apply_split_from_echo(ck.meta, cfg);
  const SplitSpec split = split_ratios(corpus.size(), cfg.split_train,
                                       cfg.split_val, cfg.split_test,
                                       ck.meta.split_seed);
  TrainingData data = TrainingData::from_corpus(corpus, split.train, "");
  const LossProfile prof =
      loss_profile(net, sched, data, ck.meta.mode, n_per_t, cfg.seed);
  auto f = open_csv(out, cfg);
  f << "t,coord_loss,coord_se,type_loss,type_se\n";
  for (std::size_t t = 1; t <= sched.horizon; ++t) {
    f << t << "," << prof.coord[t - 1] << ","
      << std::sqrt(prof.coord_var[t - 1] / static_cast<double>(n_per_t)) << ","
      << prof.type[t - 1] << ","
      << std::sqrt(prof.type_var[t - 1] / static_cast<double>(n_per_t)) << "\n";
  }
  std::cout << "loss profile -> " << out << "\n";
  return kExitOk;
}

template <class Real>
int run_diagnose_decomposition(const RunConfig& cfg_in, const std::string& out,
                               const std::string& unigem_ckpt,
                               const std::string& joint_ckpt,
                               std::size_t n_per_t) {
  RunConfig cfg = cfg_in;
  auto cku = load_checkpoint<Real>(unigem_ckpt);
  auto ckj = load_checkpoint<Real>(joint_ckpt);
  if (cku.meta.corpus_fingerprint != ckj.meta.corpus_fingerprint ||
      cku.meta.split_seed != ckj.meta.split_seed ||
      cku.meta.train_count != ckj.meta.train_count)
    throw ConfigError(
        "error-decomposition: checkpoints were trained on different "
        "corpora or splits; refusing to compare");
  Denoiser<Real> unigem_net = restore_denoiser(cku);
  Denoiser<Real> joint_net = restore_denoiser(ckj);
  const NoiseSchedule sched = cku.meta.schedule();
  if (cfg.corpus.empty())
    throw ConfigError("error-decomposition: --corpus required");
  Corpus corpus = load_corpus_file(cfg.corpus, vocab_from(cku.meta.vocabulary));
  apply_split_from_echo(cku.meta, cfg);
  const SplitSpec split = split_ratios(corpus.size(), cfg.split_train,
                                       cfg.split_val, cfg.split_test,
                                       cku.meta.split_seed);
  TrainingData data = TrainingData::from_corpus(corpus, split.train, "");

  const ErrorDecomposition dec = error_decomposition(
      unigem_net, joint_net, sched, data, n_per_t, cfg.seed);
  auto f = open_csv(out, cfg);
  f << "term,value,se\n";
  f << "coord_term_unigem," << dec.coord_term_unigem << ","
    << dec.coord_se_unigem << "\n";
  f << "coord_term_joint," << dec.coord_term_joint << "," << dec.coord_se_joint
    << "\n";
  f << "type_term_unigem," << dec.type_term_unigem << "," << dec.type_se_unigem
    << "\n";
  f << "type_term_joint," << dec.type_term_joint << "," << dec.type_se_joint
    << "\n";
  f << "l_step," << dec.l_step << ",0\n";
  f << "m2_x," << dec.m2_x << ",0\n";
  f << "m2_z," << dec.m2_z << ",0\n";
  f << "d_x," << dec.d_x << ",0\n";
  f << "d_z," << dec.d_z << ",0\n";
  std::cout << "orderings: d_x < d_z " << (dec.d_x < dec.d_z ? "ok" : "VIOLATED")
            << ", m2_x <= m2_z " << (dec.m2_x <= dec.m2_z ? "ok" : "VIOLATED")
            << "\n";
  std::cout << "atom-type terms: coordinate-diffusion "
            << dec.type_term_unigem << " vs joint " << dec.type_term_joint
            << "\n";
  std::cout << "decomposition -> " << out << "\n";
  return kExitOk;
}

template <class Real>
int run_diagnose_sweep(const RunConfig& cfg, const std::string& out,
                       const std::vector<std::size_t>& nucleation_times) {
  if (cfg.corpus.empty()) throw ConfigError("sweep: --corpus required");
  const Vocabulary vocab = vocab_from(cfg.vocabulary);
  Corpus corpus = load_corpus_file(cfg.corpus, vocab);
  const SplitSpec split = split_ratios(corpus.size(), cfg.split_train,
                                       cfg.split_val, cfg.split_test,
                                       cfg.split_seed);
  auto f = open_csv(out, cfg);
  f << "nucleation_time,atom_stability,molecule_stability,validity,uniqueness,"
       "property_mae\n";
  for (std::size_t tn : nucleation_times) {
    RunConfig sub = cfg;
    sub.nucleation_time = tn;
    const NoiseSchedule sched =
        build_schedule(sub.horizon, tn, sub.schedule_precision);
    TrainingData data =
        TrainingData::from_corpus(corpus, split.train, cfg.property);
    Denoiser<Real> net(sub.denoiser_config(), sub.seed);
    Trainer<Real> trainer(sub.train_config(), &net, sched, data);
    const std::size_t total = sub.epochs * trainer.steps_per_epoch();
    for (std::size_t s = 0; s < total; ++s) trainer.step();

    Sampler<Real> sampler(&net, sched, data.property_stats);
    SampleRequest req;
    req.count = sub.sample_count;
    req.seed = sub.seed;
    req.workers = sub.workers;
    Corpus train_view;
    train_view.vocabulary = vocab;
    for (std::size_t i : split.train)
      train_view.molecules.push_back(corpus.molecules[i]);
    const auto generated = sampler.generate(req, train_view.size_histogram());
    std::vector<Molecule> mols;
    for (const auto& g : generated) mols.push_back(g.molecule);
    const EvalReport rep = evaluate(mols, vocab);

    double mae = 0.0;
    if (!cfg.property.empty()) {
      const auto& eval_idx = split.test.empty() ? split.train : split.test;
      for (std::size_t i : eval_idx)
        mae += std::abs(sampler.predict_property(corpus.molecules[i]) -
                        corpus.molecules[i].properties.at(cfg.property));
      mae /= static_cast<double>(eval_idx.size());
    }
    f << tn << "," << rep.atom_stability << "," << rep.molecule_stability << ","
      << (rep.validity ? *rep.validity : 0.0) << ","
      << (rep.uniqueness ? *rep.uniqueness : 0.0) << "," << mae << "\n";
    std::cout << "nucleation_time " << tn << ": mol_stability "
              << rep.molecule_stability << (cfg.property.empty() ? "" : ", mae ")
              << (cfg.property.empty() ? std::string() : std::to_string(mae))
              << "\n";
  }
  std::cout << "nucleation sweep -> " << out << "\n";
  return kExitOk;
}

int run_schedule_dump(const RunConfig& cfg, const std::string& out) {
  const NoiseSchedule sched = build_schedule(
      cfg.horizon, cfg.nucleation_time, cfg.schedule_precision);
  std::ofstream f(out);
  if (!f) throw DataError("cannot write schedule: " + out);
  write_artifact_comments(f, cfg);
  dump_schedule_csv(f, sched);
  std::cout << "schedule -> " << out << "\n";
  return kExitOk;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stoul(tok));
  if (out.empty()) throw ConfigError("expected a comma-separated list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  // config file (flag or UNIGEM_CONFIG) loads first; explicit flags override
  try {
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i)
      if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (config_path.empty())
      if (const char* env = std::getenv("UNIGEM_CONFIG")) config_path = env;
    if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  CLI::App app{"unigem: two-phase molecular diffusion at desk scale"};
  app.fallthrough();
  app.set_version_flag("--version", std::string("unigem ") + kVersion);
  std::string config_path_unused;
  app.add_option("--config", config_path_unused,
                 "JSON config file (flags override; also via UNIGEM_CONFIG)");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--precision", cfg.precision, "f64 or f32");
    sub->add_option("--corpus", cfg.corpus, "extended-XYZ corpus path");
    sub->add_option("--horizon", cfg.horizon, "diffusion steps T");
    sub->add_option("--nucleation-time", cfg.nucleation_time, "t_n");
    sub->add_option("--schedule-precision", cfg.schedule_precision,
                    "schedule clip s");
    sub->add_option("--hidden", cfg.hidden, "embedding width");
    sub->add_option("--layers", cfg.layers, "total layers");
    sub->add_option("--shared-layers", cfg.shared_layers, "trunk depth");
    sub->add_option("--workers", cfg.workers, "worker thread cap");
  };

  // train
  TrainPaths train_paths;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--mode", cfg.mode, "training mode");
  train->add_option("--batch", cfg.batch_size, "batch size");
  train->add_option("--epochs", cfg.epochs, "epochs");
  train->add_option("--lr", cfg.learning_rate, "learning rate");
  train->add_option("--property", cfg.property, "property name for L^(c)");
  train->add_option("--weight-x", cfg.weight_x, "coordinate loss weight");
  train->add_option("--weight-h", cfg.weight_h, "atom-type loss weight");
  train->add_option("--weight-c", cfg.weight_c, "property loss weight");
  train->add_option("--grad-clip", cfg.grad_clip, "gradient norm cap, 0 = off");
  train->add_option("--checkpoint-every", cfg.checkpoint_every,
                    "checkpoint cadence in steps");
  train->add_option("--split-seed", cfg.split_seed, "dataset split seed");
  train->add_option("--out", train_paths.out_checkpoint, "checkpoint path");
  train->add_option("--log", train_paths.log, "run log CSV path");
  train->add_option("--init-from", train_paths.init_from,
                    "checkpoint to resume or continue from");

  // sample
  SamplePaths sample_paths;
  auto* sample = app.add_subcommand("sample", "generate molecules");
  add_common(sample);
  sample->add_option("--checkpoint", sample_paths.checkpoint, "trained model")
      ->required();
  sample->add_option("--count", cfg.sample_count, "molecules to generate");
  sample->add_option("--fixed-size", cfg.fixed_size,
                     "atom count (0 = draw from histogram)");
  sample->add_option("--target-property", cfg.target_property,
                     "property to guide toward");
  sample->add_option("--target-value", cfg.target_value,
                     "guidance target in original units");
  sample->add_option("--lambda", cfg.guidance_lambda, "guidance strength");
  sample->add_option("--out", sample_paths.out, "output extended-XYZ path");
  sample->add_option("--chains-out", sample_paths.sidecar,
                     "chain metadata CSV (default <out>.chains.csv)");

  // eval
  EvalArgs eval_args;
  double eval_target = 0.0;
  bool eval_has_target = false;
  auto* eval = app.add_subcommand("eval", "evaluate a molecule corpus");
  add_common(eval);
  eval->add_option("--input", eval_args.input, "corpus to evaluate")->required();
  eval->add_option("--reference", eval_args.reference, "reference corpus");
  eval->add_option("--csv", eval_args.csv, "CSV report path");
  eval->add_option("--bond-table", eval_args.bond_table,
                   "bond length table CSV override");
  eval->add_option("--target-value", eval_target,
                   "conditional target for Average/Stable MAE")
      ->each([&](const std::string&) { eval_has_target = true; });

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "theory diagnostics");
  std::string diag_out = "diagnostics.csv";
  std::string diag_checkpoint, diag_unigem, diag_joint;
  std::size_t diag_atoms = 5, diag_nmc = 200, diag_npt = 4,
              diag_chains = 10000;
  std::string diag_sweep_T = "50,200,1000";
  std::string diag_sweep_tn;

  auto* tweedie = diagnose->add_subcommand("tweedie", "posterior-mean identity");
  add_common(tweedie);
  tweedie->add_option("--out", diag_out, "output CSV");

  auto* mi = diagnose->add_subcommand("mi", "mutual-information lower bound");
  add_common(mi);
  mi->add_option("--out", diag_out, "output CSV");
  mi->add_option("--checkpoint", diag_checkpoint,
                 "evaluate a trained denoiser instead of the analytic one");
  mi->add_option("--atoms", diag_atoms, "toy molecule size for --checkpoint");
  mi->add_option("--mc", diag_nmc, "Monte-Carlo samples per t");

  auto* ascore = diagnose->add_subcommand("analytic-score",
                                          "sampler oracle with exact score");
  add_common(ascore);
  ascore->add_option("--out", diag_out, "output CSV");
  ascore->add_option("--sweep", diag_sweep_T, "horizons, comma separated");
  ascore->add_option("--chains", diag_chains, "chains per horizon");

  auto* profile = diagnose->add_subcommand("loss-profile",
                                           "per-timestep loss averages");
  add_common(profile);
  profile->add_option("--out", diag_out, "output CSV");
  profile->add_option("--checkpoint", diag_checkpoint, "model")->required();
  profile->add_option("--n-per-t", diag_npt, "Monte-Carlo samples per t");

  auto* decomp = diagnose->add_subcommand(
      "error-decomposition", "measurable generation-error terms");
  add_common(decomp);
  decomp->add_option("--out", diag_out, "output CSV");
  decomp->add_option("--unigem", diag_unigem, "coordinate-diffusion checkpoint")
      ->required();
  decomp->add_option("--joint", diag_joint, "joint-diffusion checkpoint")
      ->required();
  decomp->add_option("--n-per-t", diag_npt, "Monte-Carlo samples per t");

  auto* sweep = diagnose->add_subcommand("sweep-nucleation",
                                         "train/evaluate across t_n values");
  add_common(sweep);
  sweep->add_option("--out", diag_out, "output CSV");
  sweep->add_option("--sweep-nucleation", diag_sweep_tn,
                    "comma-separated nucleation times")
      ->required();
  sweep->add_option("--mode", cfg.mode, "training mode");
  sweep->add_option("--batch", cfg.batch_size, "batch size");
  sweep->add_option("--epochs", cfg.epochs, "epochs");
  sweep->add_option("--lr", cfg.learning_rate, "learning rate");
  sweep->add_option("--property", cfg.property, "property name");
  sweep->add_option("--count", cfg.sample_count, "molecules per evaluation");

  // schedule-dump
  std::string sched_out = "schedule.csv";
  auto* sched_dump = app.add_subcommand("schedule-dump", "write t,alpha,sigma");
  add_common(sched_dump);
  sched_dump->add_option("--out", sched_out, "output CSV");

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    app.exit(e);
    return kExitConfig;
  }

  const bool f32 = cfg.precision == "f32";
  if (!f32 && cfg.precision != "f64") {
    std::cerr << "error: --precision must be f64 or f32\n";
    return kExitConfig;
  }

  try {
    if (train->parsed())
      return f32 ? run_train<float>(cfg, train_paths)
                 : run_train<double>(cfg, train_paths);
    if (sample->parsed())
      return f32 ? run_sample<float>(cfg, sample_paths)
                 : run_sample<double>(cfg, sample_paths);
    if (eval->parsed()) {
      if (eval_has_target) eval_args.target_value = eval_target;
      return run_eval(cfg, eval_args);
    }
    if (diagnose->parsed()) {
      if (tweedie->parsed()) return run_diagnose_tweedie(cfg, diag_out);
      if (mi->parsed())
        return f32 ? run_diagnose_mi<float>(cfg, diag_out, diag_checkpoint,
                                            diag_atoms, diag_nmc)
                   : run_diagnose_mi<double>(cfg, diag_out, diag_checkpoint,
                                             diag_atoms, diag_nmc);
      if (ascore->parsed())
        return run_diagnose_analytic_score(cfg, diag_out,
                                           parse_size_list(diag_sweep_T),
                                           diag_chains);
      if (profile->parsed())
        return f32 ? run_diagnose_profile<float>(cfg, diag_out, diag_checkpoint,
                                                 diag_npt)
                   : run_diagnose_profile<double>(cfg, diag_out,
                                                  diag_checkpoint, diag_npt);
      if (decomp->parsed())
        return f32 ? run_diagnose_decomposition<float>(
                         cfg, diag_out, diag_unigem, diag_joint, diag_npt)
                   : run_diagnose_decomposition<double>(
                         cfg, diag_out, diag_unigem, diag_joint, diag_npt);
      if (sweep->parsed())
        return f32 ? run_diagnose_sweep<float>(cfg, diag_out,
                                               parse_size_list(diag_sweep_tn))
                   : run_diagnose_sweep<double>(cfg, diag_out,
                                                parse_size_list(diag_sweep_tn));
      std::cerr << "error: diagnose needs a subcommand\n";
      return kExitConfig;
    }
    if (sched_dump->parsed()) return run_schedule_dump(cfg, sched_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}
