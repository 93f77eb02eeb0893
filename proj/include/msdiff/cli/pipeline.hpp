//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline stages behind the command-line tool: dataset construction with
// isomorphism-based exclusion, decoder pretraining on fingerprint-molecule
// pairs, encoder pretraining on spectra, joint finetuning, conditional
// sampling, and evaluation against ground truth.
//
// Determinism contract: every stochastic step draws from an Rng seeded by
// derive_seed(seed, purpose, index), never from shared mutable state, so
// a (config, seed, inputs) triple fixes every output byte apart from the
// wall-clock entry in the manifest. Resuming a checkpoint at step S
// reproduces the uninterrupted run exactly because step S+1 never depends
// on the history of draws before it.
//

#ifndef MSDIFF_CLI_PIPELINE_HPP
#define MSDIFF_CLI_PIPELINE_HPP

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "msdiff/chem/isomorphism.hpp"
#include "msdiff/chem/smiles.hpp"
#include "msdiff/cli/checkpoint.hpp"
#include "msdiff/cli/config.hpp"
#include "msdiff/cli/manifest.hpp"
#include "msdiff/denoiser/denoiser.hpp"
#include "msdiff/diffusion/diffusion.hpp"
#include "msdiff/evalmetrics/evalmetrics.hpp"
#include "msdiff/fp/fingerprint.hpp"
#include "msdiff/specenc/specenc.hpp"
#include "msdiff/util/hash.hpp"

namespace msdiff {

// ---------------------------------------------------------------------------
// File formats.

struct MoleculeRecord {
  std::string id;
  std::string smiles;
  MolecularGraph graph;
};

/// Molecule file: `<id>\t<SMILES>` or bare `<SMILES>` per line, '#' comments
/// and blank lines ignored. Bare lines get ids m0001, m0002, ... in file
/// order.
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
    MoleculeRecord rec;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "m%04d",
                    static_cast<int>(out.size()) + 1);
      rec.id = buf;
      rec.smiles = line;
    } else {
      rec.id = line.substr(0, tab);
      rec.smiles = line.substr(tab + 1);
      if (rec.id.empty() || rec.smiles.empty())
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": empty id or SMILES");
    }
    try {
      rec.graph = parse_smiles(rec.smiles);
    } catch (const Error &e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw DataError(path + ": no molecules");
  return out;
}

/// Truth table for evaluation: molecule file with mandatory unique ids.
inline std::map<std::string, MolecularGraph> read_truth_file(
    const std::string &path) {
  std::map<std::string, MolecularGraph> out;
  for (MoleculeRecord &rec : read_molecule_file(path)) {
    if (!out.emplace(rec.id, std::move(rec.graph)).second)
      throw DataError(path + ": duplicate truth id '" + rec.id + "'");
  }
  return out;
}

struct DatasetPair {
  Fingerprint fp;
  std::string smiles;
  MolecularGraph graph;
};

/// Pretraining dataset rows: `<fingerprint hex>\t<SMILES>`.
inline void write_dataset_file(const std::string &path,
                               const std::vector<DatasetPair> &pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file: " + path);
  for (const DatasetPair &p : pairs)
    out << p.fp.to_hex() << '\t' << p.smiles << '\n';
  if (!out) throw DataError("dataset write failed: " + path);
}

inline std::vector<DatasetPair> read_dataset_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::vector<DatasetPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <hex>\\t<SMILES>");
    DatasetPair p;
    p.fp = Fingerprint::from_hex(std::string_view(line).substr(0, tab));
    p.smiles = line.substr(tab + 1);
    p.graph = parse_smiles(p.smiles);
    out.push_back(std::move(p));
  }
  if (out.empty()) throw DataError(path + ": empty dataset");
  return out;
}

struct SampleRow {
  std::string id;
  std::string smiles;  // "-" when the graph has no serializable form
  bool valid = false;
};

inline void write_samples_file(const std::string &path,
                               const std::vector<SampleRow> &rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write samples file: " + path);
  for (const SampleRow &r : rows)
    out << r.id << '\t' << r.smiles << '\t' << (r.valid ? 1 : 0) << '\n';
  if (!out) throw DataError("samples write failed: " + path);
}

inline std::vector<SampleRow> read_samples_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open samples file: " + path);
  std::vector<SampleRow> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? std::string::npos
                                      : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <id>\\t<SMILES>\\t<0|1>");
    SampleRow r;
    r.id = line.substr(0, t1);
    r.smiles = line.substr(t1 + 1, t2 - t1 - 1);
    std::string flag = line.substr(t2 + 1);
    if (flag != "0" && flag != "1")
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": valid flag must be 0 or 1");
    r.valid = flag == "1";
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError(path + ": no samples");
  return out;
}

/// Candidate formula file: `<id>\t<formula>[\t<formula>...]` per line.
inline std::map<std::string, std::vector<ChemicalFormula>> read_formulae_file(
    const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open formula file: " + path);
  std::map<std::string, std::vector<ChemicalFormula>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields = detail::split_tabs(line);
    if (fields.size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <id>\\t<formula>...");
    std::vector<ChemicalFormula> fs;
    for (std::size_t i = 1; i < fields.size(); ++i)
      fs.push_back(parse_formula(fields[i]));
    if (!out.emplace(fields[0], std::move(fs)).second)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": duplicate id '" + fields[0] + "'");
  }
  if (out.empty()) throw DataError(path + ": no formula candidates");
  return out;
}

// ---------------------------------------------------------------------------
// Shared plumbing.

namespace detail {

inline constexpr std::uint64_t kSeedInit = 0x01;
inline constexpr std::uint64_t kSeedTrainStep = 0x5e;
inline constexpr std::uint64_t kSeedSampleTask = 0xa3;

class WallClock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_ =
      std::chrono::steady_clock::now();
};

inline void ensure_out_dir(const std::string &out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw DataError("cannot create output directory " + out_dir + ": " +
                    ec.message());
}

inline std::string join_path(const std::string &dir, const std::string &name) {
  return (std::filesystem::path(dir) / name).string();
}

/// Hashes every input path named by the config into the manifest.
inline void record_input_hashes(RunManifest &m) {
  for (const auto &[k, v] : m.config.values())
    if (k.rfind("paths.", 0) == 0) m.input_hashes[k] = sha256_file_hex(v);
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

struct TrainLoopOptions {
  std::int64_t steps = 0;
  int batch = 0;
  double lr_max = 0.0;
  double lr_min = 0.0;
  double weight_decay = 0.0;
  std::int64_t checkpoint_every = 0;  // 0 disables intermediate checkpoints
  std::uint64_t seed = 0;
};

inline TrainLoopOptions train_options(const RunConfig &cfg) {
  TrainLoopOptions o;
  o.steps = cfg.get_int("train.steps", 200);
  o.batch = static_cast<int>(cfg.get_int("train.batch", 8));
  o.lr_max = cfg.get_double("train.lr", 1e-3);
  o.lr_min = cfg.get_double("train.lr_min", 1e-6);
  o.weight_decay = cfg.get_double("train.weight_decay", 0.0);
  o.checkpoint_every = cfg.get_int("train.checkpoint_every", 0);
  o.seed = cfg.seed();
  if (o.steps < 1) throw ConfigError("train.steps must be >= 1");
  if (o.batch < 1) throw ConfigError("train.batch must be >= 1");
  return o;
}

/// The transition model used by one training or sampling run.
inline TransitionModel make_transition_model(int total_steps,
                                             const Eigen::VectorXd &m) {
  return TransitionModel(make_cosine_schedule(total_steps), m);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset construction.

struct PretrainDatasetReport {
  std::vector<DatasetPair> pairs;
  int excluded = 0;       // removed as isomorphic to an exclusion molecule
  int skipped_small = 0;  // fewer than two heavy atoms; diffusion needs a pair
};

/// Fingerprint-molecule pairs from a corpus, minus everything isomorphic to
/// any exclusion-set molecule. Exclusion matches canonical keys first and
/// confirms with full isomorphism, so different SMILES spellings of the same
/// molecule are caught.
inline PretrainDatasetReport build_pretrain_dataset(
    const std::vector<MoleculeRecord> &corpus,
    const std::vector<MoleculeRecord> &exclusion, int fp_width,
    int fp_radius) {
  std::multimap<std::string, const MolecularGraph *> banned;
  for (const MoleculeRecord &rec : exclusion)
    banned.emplace(canonical_key(rec.graph), &rec.graph);

  PretrainDatasetReport report;
  for (const MoleculeRecord &rec : corpus) {
    if (rec.graph.atom_count() < 2) {
      ++report.skipped_small;
      continue;
    }
    auto [lo, hi] = banned.equal_range(canonical_key(rec.graph));
    bool excluded = false;
    for (auto it = lo; it != hi; ++it) {
      if (is_isomorphic(rec.graph, *it->second)) {
        excluded = true;
        break;
      }
    }
    if (excluded) {
      ++report.excluded;
      continue;
    }
    DatasetPair p;
    p.fp = morgan_fingerprint(rec.graph, fp_width, fp_radius);
    p.smiles = rec.smiles;
    p.graph = rec.graph;
    report.pairs.push_back(std::move(p));
  }
  if (report.pairs.empty())
    throw DataError("pretraining dataset is empty after exclusion");
  return report;
}

inline void run_build_dataset(const RunConfig &cfg, const std::string &out_dir) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  auto corpus = read_molecule_file(cfg.get_string("paths.corpus"));
  std::vector<MoleculeRecord> exclusion;
  if (cfg.has("paths.exclusion"))
    exclusion = read_molecule_file(cfg.get_string("paths.exclusion"));
  PretrainDatasetReport report = build_pretrain_dataset(
      corpus, exclusion, cfg.fingerprint_width(), cfg.fingerprint_radius());
  std::string dataset_path = detail::join_path(out_dir, "dataset.tsv");
  write_dataset_file(dataset_path, report.pairs);

  RunManifest m;
  m.command = "build-dataset";
  m.seed = cfg.seed();
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["pairs"] = std::to_string(report.pairs.size());
  m.metrics["excluded"] = std::to_string(report.excluded);
  m.metrics["skipped_small"] = std::to_string(report.skipped_small);
  m.output_hashes["dataset.tsv"] = sha256_file_hex(dataset_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
}

// ---------------------------------------------------------------------------
// Decoder pretraining.

/// One training step of the decoder: batch drawn iid from the dataset, each
/// item noised at a uniformly random time, gradients applied with AdamW
/// under a half-cosine schedule. All randomness comes from a per-step rng.
inline double pretrain_decoder_step(DenoiserParams &params, AdamWState &adam,
                                    std::span<const TrainItem> items,
                                    const TransitionModel &tm,
                                    const detail::TrainLoopOptions &opt,
                                    std::int64_t step) {
  Rng rng(derive_seed(opt.seed, detail::kSeedTrainStep, step));
  std::vector<TrainItem> batch;
  batch.reserve(static_cast<std::size_t>(opt.batch));
  for (int b = 0; b < opt.batch; ++b)
    batch.push_back(
        items[rng.uniform_int(static_cast<std::uint64_t>(items.size()))]);
  auto [loss, grad] = denoiser_backward(params, batch, tm, rng);
  double lr = cosine_lr(step - 1, opt.steps, opt.lr_max, opt.lr_min);
  adamw_step(params.theta, grad, adam, lr, opt.weight_decay);
  return loss;
}

inline Checkpoint make_decoder_checkpoint(const RunConfig &cfg,
                                          const DenoiserParams &params,
                                          const AdamWState &adam,
                                          const TransitionModel &tm,
                                          std::int64_t step) {
  Checkpoint ckpt;
  ckpt.kind = CheckpointKind::Denoiser;
  ckpt.step = static_cast<std::uint64_t>(step);
  ckpt.config_text = cfg.normalized();
  ckpt.diffusion_steps = tm.steps();
  ckpt.prior_m = tm.m();
  ckpt.groups.push_back({1, params.theta, adam});
  return ckpt;
}

inline void run_pretrain_decoder(const RunConfig &cfg,
                                 const std::string &out_dir) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  auto pairs = read_dataset_file(cfg.get_string("paths.dataset"));
  DenoiserConfig dcfg = cfg.denoiser_config();

  std::vector<TrainItem> items;
  std::vector<MolecularGraph> graphs;
  for (const DatasetPair &p : pairs) {
    if (p.fp.width() != dcfg.condition_dim)
      throw ConfigError("dataset fingerprint width " +
                        std::to_string(p.fp.width()) +
                        " != denoiser.condition_dim " +
                        std::to_string(dcfg.condition_dim));
    items.push_back({p.graph, fingerprint_to_vector(p.fp)});
    graphs.push_back(p.graph);
  }

  TransitionModel tm = detail::make_transition_model(
      cfg.diffusion_steps(), build_marginal(cfg.prior_kind(), graphs));
  detail::TrainLoopOptions opt = detail::train_options(cfg);

  DenoiserParams params(dcfg);
  AdamWState adam(params.theta.size());
  std::int64_t start_step = 0;
  if (cfg.has("paths.checkpoint")) {
    std::string path = cfg.get_string("paths.checkpoint");
    Checkpoint ckpt = load_checkpoint(path);
    require_checkpoint_kind(ckpt, CheckpointKind::Denoiser, path);
    const ParamGroup &g = ckpt.group(1);
    if (g.theta.size() != params.theta.size())
      throw ConfigError(path + ": checkpoint has " +
                        std::to_string(g.theta.size()) +
                        " parameters, current architecture needs " +
                        std::to_string(params.theta.size()));
    if (ckpt.diffusion_steps != tm.steps())
      throw ConfigError(path + ": checkpoint was trained with diffusion.steps " +
                        std::to_string(ckpt.diffusion_steps));
    params.theta = g.theta;
    adam = g.adam;
    start_step = static_cast<std::int64_t>(ckpt.step);
  } else {
    Rng init_rng(derive_seed(opt.seed, detail::kSeedInit));
    init_denoiser_params(params, init_rng);
  }

  std::string ckpt_path = detail::join_path(out_dir, "checkpoint.bin");
  std::ofstream loss_log(detail::join_path(out_dir, "loss.tsv"),
                         std::ios::binary | std::ios::trunc);
  loss_log << "step\tlr\tloss\n";

  Checkpoint last_good =
      make_decoder_checkpoint(cfg, params, adam, tm, start_step);
  double last_loss = 0.0;
  try {
    for (std::int64_t s = start_step + 1; s <= opt.steps; ++s) {
      last_loss = pretrain_decoder_step(params, adam, items, tm, opt, s);
      loss_log << s << '\t'
               << cosine_lr(s - 1, opt.steps, opt.lr_max, opt.lr_min) << '\t'
               << last_loss << '\n';
      last_good = make_decoder_checkpoint(cfg, params, adam, tm, s);
      if (opt.checkpoint_every > 0 && s % opt.checkpoint_every == 0)
        save_checkpoint(ckpt_path, last_good);
    }
  } catch (const NonFiniteError &) {
    save_checkpoint(ckpt_path, last_good);
    throw;
  }
  save_checkpoint(ckpt_path, last_good);

  RunManifest m;
  m.command = "pretrain-decoder";
  m.seed = opt.seed;
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["final_loss"] = detail::format_double(last_loss);
  m.metrics["steps"] = std::to_string(opt.steps);
  m.metrics["molecules"] = std::to_string(items.size());
  m.output_hashes["checkpoint.bin"] = sha256_file_hex(ckpt_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
}

// ---------------------------------------------------------------------------
// Encoder pretraining.

inline void run_pretrain_encoder(const RunConfig &cfg,
                                 const std::string &out_dir) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  SpectrumParseResult parsed =
      parse_spectra_file(cfg.get_string("paths.spectra"));
  EncoderConfig ecfg = cfg.encoder_config();

  std::vector<EncoderTrainItem> items;
  for (const Spectrum &s : parsed.spectra) {
    if (s.target_smiles.empty())
      throw DataError("spectrum " + s.id +
                      " has no target structure; encoder pretraining needs "
                      "fingerprint labels");
    items.push_back({s, morgan_fingerprint(parse_smiles(s.target_smiles),
                                           ecfg.fingerprint_bits,
                                           cfg.fingerprint_radius())});
  }

  detail::TrainLoopOptions opt = detail::train_options(cfg);
  EncoderParams params(ecfg);
  Rng init_rng(derive_seed(opt.seed, detail::kSeedInit));
  init_encoder_params(params, init_rng);

  EncoderTrainOptions eopt;
  eopt.steps = static_cast<int>(opt.steps);
  eopt.batch = opt.batch;
  eopt.lr_max = opt.lr_max;
  eopt.lr_min = opt.lr_min;
  eopt.weight_decay = opt.weight_decay;
  eopt.seed = opt.seed;
  EncoderTrainReport report = pretrain_encoder(params, items, eopt);

  Checkpoint ckpt;
  ckpt.kind = CheckpointKind::Encoder;
  ckpt.step = static_cast<std::uint64_t>(opt.steps);
  ckpt.config_text = cfg.normalized();
  ckpt.groups.push_back({2, params.theta, AdamWState(params.theta.size())});
  std::string ckpt_path = detail::join_path(out_dir, "checkpoint.bin");
  save_checkpoint(ckpt_path, ckpt);

  RunManifest m;
  m.command = "pretrain-encoder";
  m.seed = opt.seed;
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["final_loss"] = detail::format_double(report.final_loss);
  m.metrics["validation_cosine"] =
      detail::format_double(report.validation_cosine);
  m.metrics["spectra"] = std::to_string(items.size());
  m.metrics["dropped_peaks"] = std::to_string(parsed.dropped_peaks);
  m.output_hashes["checkpoint.bin"] = sha256_file_hex(ckpt_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
}

// ---------------------------------------------------------------------------
// Joint finetuning.

struct FinetuneItem {
  Spectrum spectrum;
  MolecularGraph graph;
};

/// Diffusion loss of one noised item with the condition produced by the
/// encoder on the same tape, so the gradient flows through both models.
/// The fingerprint head takes no part; only the trunk feeds the condition.
inline double joint_loss_grad(const EncoderParams &enc,
                              const DenoiserParams &dec, const Spectrum &s,
                              const NoisedGraph &noised,
                              const MolecularGraph &truth, int total_steps,
                              Eigen::VectorXd *enc_grad,
                              Eigen::VectorXd *dec_grad) {
  if (enc.config.dim != dec.config.condition_dim)
    throw ConfigError("encoder.dim " + std::to_string(enc.config.dim) +
                      " != denoiser.condition_dim " +
                      std::to_string(dec.config.condition_dim));
  int n = truth.atom_count();
  if (noised.graph.atom_count() != n)
    throw ShapeMismatchError("joint_loss_grad: atom count mismatch");
  ad::Tape tape;
  auto etp = detail::push_params(tape, enc.layout, enc.theta);
  auto dtp = detail::push_params(tape, dec.layout, dec.theta);
  ad::Var X = detail::encoder_states(tape, etp, enc.config, s);
  ad::Var y_row = ad::slice_rows(X, s.precursor_index(), 1);
  ad::Var logits =
      detail::denoiser_logits(tape, dtp, dec.config, noised, y_row, total_steps);
  std::vector<int> targets(static_cast<std::size_t>(n) * n, 0);
  std::vector<bool> mask(static_cast<std::size_t>(n) * n, false);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      targets[static_cast<std::size_t>(i) * n + j] =
          static_cast<int>(truth.bond(i, j));
      mask[static_cast<std::size_t>(i) * n + j] = true;
    }
  ad::Var loss = ad::cross_entropy_rows(logits, targets, mask);
  double value = tape.value(loss)(0, 0);
  if (!std::isfinite(value))
    throw NonFiniteError("joint_loss_grad: non-finite loss");
  if (enc_grad != nullptr || dec_grad != nullptr) tape.backward(loss);
  if (enc_grad != nullptr) {
    detail::collect_grads(tape, enc.layout, etp, *enc_grad);
    if (!enc_grad->allFinite())
      throw NonFiniteError("joint_loss_grad: non-finite encoder gradient");
  }
  if (dec_grad != nullptr) {
    detail::collect_grads(tape, dec.layout, dtp, *dec_grad);
    if (!dec_grad->allFinite())
      throw NonFiniteError("joint_loss_grad: non-finite decoder gradient");
  }
  return value;
}

struct JointBackward {
  double loss = 0.0;
  Eigen::VectorXd enc_grad;
  Eigen::VectorXd dec_grad;
};

/// Batch mean of joint_loss_grad with per-item noising, mirroring
/// denoiser_backward's sampling of t and the forward noise.
inline JointBackward finetune_backward(const EncoderParams &enc,
                                       const DenoiserParams &dec,
                                       std::span<const FinetuneItem> batch,
                                       const TransitionModel &tm, Rng &rng) {
  if (batch.empty()) throw DataError("finetune_backward: empty batch");
  JointBackward out;
  out.enc_grad = Eigen::VectorXd::Zero(enc.theta.size());
  out.dec_grad = Eigen::VectorXd::Zero(dec.theta.size());
  Eigen::VectorXd eg, dg;
  for (const FinetuneItem &item : batch) {
    int t = 1 + static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(tm.steps())));
    NoisedGraph noised = forward_sample(item.graph, t, tm, rng);
    out.loss += joint_loss_grad(enc, dec, item.spectrum, noised, item.graph,
                                tm.steps(), &eg, &dg);
    out.enc_grad += eg;
    out.dec_grad += dg;
  }
  double scale = 1.0 / static_cast<double>(batch.size());
  out.loss *= scale;
  out.enc_grad *= scale;
  out.dec_grad *= scale;
  return out;
}

inline Checkpoint make_joint_checkpoint(const RunConfig &cfg,
                                        const EncoderParams &enc,
                                        const AdamWState &enc_adam,
                                        const DenoiserParams &dec,
                                        const AdamWState &dec_adam,
                                        const TransitionModel &tm,
                                        std::int64_t step) {
  Checkpoint ckpt;
  ckpt.kind = CheckpointKind::Joint;
  ckpt.step = static_cast<std::uint64_t>(step);
  ckpt.config_text = cfg.normalized();
  ckpt.diffusion_steps = tm.steps();
  ckpt.prior_m = tm.m();
  ckpt.groups.push_back({1, dec.theta, dec_adam});
  ckpt.groups.push_back({2, enc.theta, enc_adam});
  return ckpt;
}

inline void run_finetune(const RunConfig &cfg, const std::string &out_dir) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  SpectrumParseResult parsed =
      parse_spectra_file(cfg.get_string("paths.spectra"));
  EncoderConfig ecfg = cfg.encoder_config();
  DenoiserConfig dcfg = cfg.denoiser_config();
  if (ecfg.dim != dcfg.condition_dim)
    throw ConfigError("encoder.dim " + std::to_string(ecfg.dim) +
                      " != denoiser.condition_dim " +
                      std::to_string(dcfg.condition_dim));

  std::vector<FinetuneItem> items;
  std::vector<MolecularGraph> graphs;
  for (const Spectrum &s : parsed.spectra) {
    if (s.target_smiles.empty())
      throw DataError("spectrum " + s.id +
                      " has no target structure; finetuning is supervised");
    FinetuneItem item{s, parse_smiles(s.target_smiles)};
    if (item.graph.atom_count() < 2)
      throw DataError("spectrum " + s.id + ": target needs >= 2 heavy atoms");
    graphs.push_back(item.graph);
    items.push_back(std::move(item));
  }

  TransitionModel tm = detail::make_transition_model(
      cfg.diffusion_steps(), build_marginal(cfg.prior_kind(), graphs));
  detail::TrainLoopOptions opt = detail::train_options(cfg);
  bool freeze_encoder = cfg.get_bool("train.freeze_encoder", false);

  EncoderParams enc(ecfg);
  {
    std::string path = cfg.get_string("paths.encoder_checkpoint");
    Checkpoint ckpt = load_checkpoint(path);
    require_checkpoint_kind(ckpt, CheckpointKind::Encoder, path);
    const ParamGroup &g = ckpt.group(2);
    if (g.theta.size() != enc.theta.size())
      throw ConfigError(path + ": encoder checkpoint parameter count " +
                        std::to_string(g.theta.size()) +
                        " != current architecture " +
                        std::to_string(enc.theta.size()));
    enc.theta = g.theta;
  }
  DenoiserParams dec(dcfg);
  {
    std::string path = cfg.get_string("paths.decoder_checkpoint");
    Checkpoint ckpt = load_checkpoint(path);
    require_checkpoint_kind(ckpt, CheckpointKind::Denoiser, path);
    const ParamGroup &g = ckpt.group(1);
    if (g.theta.size() != dec.theta.size())
      throw ConfigError(path + ": decoder checkpoint parameter count " +
                        std::to_string(g.theta.size()) +
                        " != current architecture " +
                        std::to_string(dec.theta.size()));
    if (ckpt.diffusion_steps != tm.steps())
      throw ConfigError(path + ": checkpoint was trained with diffusion.steps " +
                        std::to_string(ckpt.diffusion_steps));
    dec.theta = g.theta;
  }

  AdamWState enc_adam(enc.theta.size());
  AdamWState dec_adam(dec.theta.size());
  std::string ckpt_path = detail::join_path(out_dir, "checkpoint.bin");
  std::ofstream loss_log(detail::join_path(out_dir, "loss.tsv"),
                         std::ios::binary | std::ios::trunc);
  loss_log << "step\tlr\tloss\n";

  Checkpoint last_good =
      make_joint_checkpoint(cfg, enc, enc_adam, dec, dec_adam, tm, 0);
  double last_loss = 0.0;
  double encoder_grad_norm_step1 = 0.0;
  try {
    for (std::int64_t s = 1; s <= opt.steps; ++s) {
      Rng rng(derive_seed(opt.seed, detail::kSeedTrainStep, s));
      std::vector<FinetuneItem> batch;
      batch.reserve(static_cast<std::size_t>(opt.batch));
      for (int b = 0; b < opt.batch; ++b)
        batch.push_back(
            items[rng.uniform_int(static_cast<std::uint64_t>(items.size()))]);
      JointBackward back = finetune_backward(enc, dec, batch, tm, rng);
      if (s == 1) encoder_grad_norm_step1 = back.enc_grad.norm();
      double lr = cosine_lr(s - 1, opt.steps, opt.lr_max, opt.lr_min);
      adamw_step(dec.theta, back.dec_grad, dec_adam, lr, opt.weight_decay);
      if (!freeze_encoder)
        adamw_step(enc.theta, back.enc_grad, enc_adam, lr, opt.weight_decay);
      last_loss = back.loss;
      loss_log << s << '\t' << lr << '\t' << last_loss << '\n';
      last_good =
          make_joint_checkpoint(cfg, enc, enc_adam, dec, dec_adam, tm, s);
      if (opt.checkpoint_every > 0 && s % opt.checkpoint_every == 0)
        save_checkpoint(ckpt_path, last_good);
    }
  } catch (const NonFiniteError &) {
    save_checkpoint(ckpt_path, last_good);
    throw;
  }
  save_checkpoint(ckpt_path, last_good);

  RunManifest m;
  m.command = "finetune";
  m.seed = opt.seed;
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["final_loss"] = detail::format_double(last_loss);
  m.metrics["encoder_grad_norm_step1"] =
      detail::format_double(encoder_grad_norm_step1);
  m.metrics["frozen_encoder"] = freeze_encoder ? "1" : "0";
  m.metrics["spectra"] = std::to_string(items.size());
  m.output_hashes["checkpoint.bin"] = sha256_file_hex(ckpt_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
}

// ---------------------------------------------------------------------------
// Sampling.

namespace detail {

struct SampleTask {
  std::string id;
  ChemicalFormula formula;
  ConditionVector y;
  int count = 0;
};

/// Runs one task with its own derived rng; rows come out in draw order.
inline std::vector<SampleRow> run_sample_task(const SampleTask &task,
                                              std::size_t task_index,
                                              const DenoiserParams &dec,
                                              const TransitionModel &tm,
                                              std::uint64_t seed) {
  Rng rng(derive_seed(seed, kSeedSampleTask, task_index));
  DenoiseFn fn = make_denoise_fn(dec, tm.steps());
  std::vector<SampleRow> rows;
  rows.reserve(static_cast<std::size_t>(task.count));
  for (int i = 0; i < task.count; ++i) {
    MolecularGraph g = sample_molecule(task.formula, task.y, fn, tm, rng);
    SampleRow row;
    row.id = task.id;
    row.valid = is_valid(g).ok();
    row.smiles = write_smiles_unchecked(g);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Per-task parallel sampling. Results are deterministic for a fixed seed
/// regardless of worker count because each task owns a derived rng and the
/// output preserves task order.
inline std::vector<SampleRow> run_sample_tasks(
    const std::vector<detail::SampleTask> &tasks, const DenoiserParams &dec,
    const TransitionModel &tm, std::uint64_t seed, int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  std::vector<std::vector<SampleRow>> per_task(tasks.size());
  if (workers == 1 || tasks.size() <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      per_task[i] = detail::run_sample_task(tasks[i], i, dec, tm, seed);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(
        static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t i = next.fetch_add(1); i < tasks.size();
               i = next.fetch_add(1))
            per_task[i] = detail::run_sample_task(tasks[i], i, dec, tm, seed);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (std::thread &t : pool) t.join();
    for (const std::exception_ptr &e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<SampleRow> rows;
  for (std::vector<SampleRow> &chunk : per_task)
    for (SampleRow &r : chunk) rows.push_back(std::move(r));
  return rows;
}

inline void run_sample(const RunConfig &cfg, const std::string &out_dir,
                       int workers) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  bool molecules_mode = cfg.has("paths.molecules");
  bool spectra_mode = cfg.has("paths.spectra");
  if (molecules_mode == spectra_mode)
    throw ConfigError(
        "sample needs exactly one of paths.molecules (fingerprint "
        "conditioning) or paths.spectra (spectrum conditioning)");

  std::string ckpt_path = cfg.get_string("paths.checkpoint");
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (cfg.has("diffusion.steps") && cfg.diffusion_steps() != ckpt.diffusion_steps)
    throw ConfigError("diffusion.steps " +
                      std::to_string(cfg.diffusion_steps()) +
                      " != checkpoint's " +
                      std::to_string(ckpt.diffusion_steps));
  TransitionModel tm =
      detail::make_transition_model(ckpt.diffusion_steps, ckpt.prior_m);

  DenoiserConfig dcfg = cfg.denoiser_config();
  DenoiserParams dec(dcfg);
  {
    require_checkpoint_kind(
        ckpt,
        molecules_mode ? CheckpointKind::Denoiser : CheckpointKind::Joint,
        ckpt_path);
    const ParamGroup &g = ckpt.group(1);
    if (g.theta.size() != dec.theta.size())
      throw ConfigError(ckpt_path + ": decoder parameter count " +
                        std::to_string(g.theta.size()) +
                        " != current architecture " +
                        std::to_string(dec.theta.size()));
    dec.theta = g.theta;
  }

  int count = static_cast<int>(cfg.get_int("sample.count", 100));
  if (count < 1) throw ConfigError("sample.count must be >= 1");

  std::vector<detail::SampleTask> tasks;
  if (molecules_mode) {
    if (dcfg.condition_dim != cfg.fingerprint_width())
      throw ConfigError("fingerprint.width " +
                        std::to_string(cfg.fingerprint_width()) +
                        " != denoiser.condition_dim " +
                        std::to_string(dcfg.condition_dim));
    auto mols = read_molecule_file(cfg.get_string("paths.molecules"));
    for (const MoleculeRecord &rec : mols) {
      detail::SampleTask task;
      task.id = rec.id;
      task.formula = rec.graph.full_formula();
      task.y = fingerprint_to_vector(morgan_fingerprint(
          rec.graph, cfg.fingerprint_width(), cfg.fingerprint_radius()));
      task.count = count;
      tasks.push_back(std::move(task));
    }
  } else {
    EncoderConfig ecfg = cfg.encoder_config();
    if (ecfg.dim != dcfg.condition_dim)
      throw ConfigError("encoder.dim " + std::to_string(ecfg.dim) +
                        " != denoiser.condition_dim " +
                        std::to_string(dcfg.condition_dim));
    EncoderParams enc(ecfg);
    const ParamGroup &g = ckpt.group(2);
    if (g.theta.size() != enc.theta.size())
      throw ConfigError(ckpt_path + ": encoder parameter count " +
                        std::to_string(g.theta.size()) +
                        " != current architecture " +
                        std::to_string(enc.theta.size()));
    enc.theta = g.theta;

    SpectrumParseResult parsed =
        parse_spectra_file(cfg.get_string("paths.spectra"));
    std::map<std::string, std::vector<ChemicalFormula>> candidates;
    if (cfg.has("paths.formulae"))
      candidates = read_formulae_file(cfg.get_string("paths.formulae"));

    for (const Spectrum &s : parsed.spectra) {
      ConditionVector y = encode_spectrum(enc, s);
      auto it = candidates.find(s.id);
      if (it == candidates.end()) {
        detail::SampleTask task;
        task.id = s.id;
        task.formula = s.precursor_formula;
        task.y = y;
        task.count = count;
        tasks.push_back(std::move(task));
      } else {
        // The sample budget is split across the candidate formulae; any
        // remainder goes to the earliest candidates, one extra each.
        int nf = static_cast<int>(it->second.size());
        int base = count / nf;
        int extra = count % nf;
        for (int c = 0; c < nf; ++c) {
          detail::SampleTask task;
          task.id = s.id;
          task.formula = it->second[static_cast<std::size_t>(c)];
          task.y = y;
          task.count = base + (c < extra ? 1 : 0);
          if (task.count > 0) tasks.push_back(std::move(task));
        }
      }
    }
  }

  std::vector<SampleRow> rows =
      run_sample_tasks(tasks, dec, tm, cfg.seed(), workers);
  std::string samples_path = detail::join_path(out_dir, "samples.tsv");
  write_samples_file(samples_path, rows);

  int valid = 0;
  for (const SampleRow &r : rows) valid += r.valid ? 1 : 0;

  RunManifest m;
  m.command = "sample";
  m.seed = cfg.seed();
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["samples"] = std::to_string(rows.size());
  m.metrics["valid"] = std::to_string(valid);
  m.metrics["tasks"] = std::to_string(tasks.size());
  m.output_hashes["samples.tsv"] = sha256_file_hex(samples_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
}

// ---------------------------------------------------------------------------
// Evaluation.

/// Groups sample rows by spectrum id (file order of first appearance),
/// ranks the valid ones, and evaluates each spectrum against its truth.
inline MetricsReport evaluate_samples(const std::vector<SampleRow> &rows,
                                      const std::map<std::string, MolecularGraph> &truth) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SampleRow *>> by_id;
  for (const SampleRow &r : rows) {
    auto [it, inserted] = by_id.try_emplace(r.id);
    if (inserted) order.push_back(r.id);
    it->second.push_back(&r);
  }

  std::vector<SpectrumEvaluation> evals;
  for (const std::string &id : order) {
    auto truth_it = truth.find(id);
    if (truth_it == truth.end())
      throw DataError("missing truth for spectrum id '" + id + "'");
    std::vector<MolecularGraph> valid_graphs;
    int total = 0;
    for (const SampleRow *r : by_id[id]) {
      ++total;
      if (r->valid) valid_graphs.push_back(parse_smiles(r->smiles));
    }
    RankedPredictions rp = rank_samples(valid_graphs);
    rp.total_samples = total;
    rp.invalid_samples = total - static_cast<int>(valid_graphs.size());
    evals.push_back(evaluate_spectrum(id, rp, truth_it->second));
  }
  return aggregate_metrics(std::move(evals));
}

inline MetricsReport run_evaluate(const RunConfig &cfg,
                                  const std::string &out_dir) {
  detail::WallClock clock;
  detail::ensure_out_dir(out_dir);
  std::string samples_path = cfg.get_string("paths.samples");

  // Provenance gate: the manifest must verify against its embedded config
  // snapshot, and the samples file must be the one that run produced.
  RunManifest sample_manifest =
      read_manifest(cfg.get_string("paths.samples_manifest"));
  auto recorded = sample_manifest.output_hashes.find("samples.tsv");
  if (recorded == sample_manifest.output_hashes.end())
    throw DataError("samples manifest records no samples.tsv output");
  if (recorded->second != sha256_file_hex(samples_path))
    throw DataError(
        "samples file hash does not match its manifest; refusing to "
        "evaluate samples of unknown provenance");

  std::vector<SampleRow> rows = read_samples_file(samples_path);
  auto truth = read_truth_file(cfg.get_string("paths.truth"));
  MetricsReport report = evaluate_samples(rows, truth);

  std::string tsv = metrics_tsv(report);
  std::string metrics_path = detail::join_path(out_dir, "metrics.tsv");
  {
    std::ofstream out(metrics_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write metrics file: " + metrics_path);
    out << tsv;
  }

  RunManifest m;
  m.command = "evaluate";
  m.seed = cfg.seed();
  m.config = cfg;
  detail::record_input_hashes(m);
  m.metrics["spectra"] = std::to_string(report.spectra);
  m.metrics["top1_accuracy"] = detail::format_double(report.top1_accuracy);
  m.metrics["top10_accuracy"] = detail::format_double(report.top10_accuracy);
  m.metrics["validity"] = detail::format_double(report.validity);
  m.metrics["mces_excluded"] = std::to_string(report.mces_excluded);
  m.output_hashes["metrics.tsv"] = sha256_file_hex(metrics_path);
  m.wallclock_seconds = clock.seconds();
  write_manifest(detail::join_path(out_dir, "manifest.txt"), m);
  return report;
}

}  // namespace msdiff

#endif  // MSDIFF_CLI_PIPELINE_HPP
