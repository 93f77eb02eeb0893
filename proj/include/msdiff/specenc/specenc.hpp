//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Spectrum encoder: peaks carry formula annotations from the input file,
// each peak is embedded from its formula, its neutral loss against the
// precursor, its intensity, and sinusoidal mass features, and a set
// transformer without positional encoding mixes the peak set. The final
// state of the precursor peak is the condition vector y. A sigmoid linear
// head on y predicts fingerprint bits during pretraining.
//

#ifndef MSDIFF_SPECENC_SPECENC_HPP
#define MSDIFF_SPECENC_SPECENC_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msdiff/chem/formula.hpp"
#include "msdiff/fp/fingerprint.hpp"
#include "msdiff/nn/autodiff.hpp"
#include "msdiff/nn/optimizer.hpp"
#include "msdiff/nn/params.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/rng.hpp"

namespace msdiff {

struct Peak {
  double mz = 0.0;
  double intensity = 0.0;
  ChemicalFormula formula;
  bool is_precursor = false;
};

struct Spectrum {
  std::string id;
  ChemicalFormula precursor_formula;
  std::string target_smiles;  // empty when the header carried "-"
  std::vector<Peak> peaks;

  int precursor_index() const {
    int found = -1;
    for (int i = 0; i < static_cast<int>(peaks.size()); ++i) {
      if (!peaks[static_cast<std::size_t>(i)].is_precursor) continue;
      if (found >= 0)
        throw DataError("spectrum " + id + ": multiple precursor peaks");
      found = i;
    }
    if (found < 0)
      throw DataError("spectrum " + id + ": no precursor peak");
    return found;
  }

  void validate() const {
    if (peaks.empty()) throw DataError("spectrum " + id + ": no peaks");
    (void)precursor_index();
    for (const Peak &p : peaks) {
      if (!(p.mz > 0.0))
        throw DataError("spectrum " + id + ": non-positive mz");
      if (!(p.intensity >= 0.0))
        throw DataError("spectrum " + id + ": negative intensity");
    }
  }
};

/// Scales intensities so the largest equals 1. Idempotent.
inline void normalize_intensities(Spectrum &s) {
  double max = 0.0;
  for (const Peak &p : s.peaks) max = std::max(max, p.intensity);
  if (!(max > 0.0))
    throw DataError("spectrum " + s.id + ": all intensities are zero");
  for (Peak &p : s.peaks) p.intensity /= max;
}

/// Heavy-atom counts in element order followed by the hydrogen count.
inline Eigen::RowVectorXd formula_count_vector(const ChemicalFormula &f) {
  Eigen::RowVectorXd out(kElementCount + 1);
  for (int i = 0; i < kElementCount; ++i) out[i] = f.counts[i];
  out[kElementCount] = f.hydrogens;
  return out;
}

/// Sinusoidal features of the mass scaled to s = mz / 1000 Daltons, same
/// frequency family as the diffusion step embedding.
inline Eigen::RowVectorXd mz_embedding(double mz, int dim) {
  double s = mz / 1000.0;
  int half = dim / 2;
  Eigen::RowVectorXd out(dim);
  for (int i = 0; i < half; ++i) {
    double freq =
        std::pow(10000.0, -static_cast<double>(i) /
                              std::max(1.0, static_cast<double>(half - 1)));
    out[2 * i] = std::sin(s * freq * 2.0 * std::numbers::pi);
    out[2 * i + 1] = std::cos(s * freq * 2.0 * std::numbers::pi);
  }
  return out;
}

/// Raw input row for one peak: formula counts, neutral-loss counts against
/// the precursor, intensity, mass features.
inline Eigen::RowVectorXd peak_features(const Peak &p,
                                        const ChemicalFormula &precursor,
                                        int mz_dim) {
  std::optional<ChemicalFormula> loss = precursor.subtract(p.formula);
  if (!loss)
    throw NegativeLossError("peak formula " + p.formula.to_string() +
                            " exceeds precursor " + precursor.to_string());
  int counts = kElementCount + 1;
  Eigen::RowVectorXd out(2 * counts + 1 + mz_dim);
  out.head(counts) = formula_count_vector(p.formula);
  out.segment(counts, counts) = formula_count_vector(*loss);
  out[2 * counts] = p.intensity;
  out.tail(mz_dim) = mz_embedding(p.mz, mz_dim);
  return out;
}

struct EncoderConfig {
  int layers = 2;
  int dim = 256;  // c, the condition vector width
  int heads = 8;
  int hidden = 256;
  int mz_embedding = 32;
  int fingerprint_bits = 2048;

  int feature_dim() const { return 2 * (kElementCount + 1) + 1 + mz_embedding; }

  void validate() const {
    if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("encoder: dim must be divisible by heads");
    if (hidden < 1) throw ConfigError("encoder: hidden must be positive");
    if (mz_embedding < 2 || mz_embedding % 2 != 0)
      throw ConfigError("encoder: mz_embedding must be even and >= 2");
    if (fingerprint_bits < 4 || fingerprint_bits % 4 != 0)
      throw ConfigError("encoder: fingerprint_bits must be a multiple of 4");
  }
};

inline ParamLayout encoder_layout(const EncoderConfig &cfg) {
  cfg.validate();
  ParamLayout layout;
  detail::add_mlp(layout, "peak_in", cfg.feature_dim(), cfg.hidden, cfg.dim);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "layer" + std::to_string(l);
    detail::add_linear(layout, p + ".q", cfg.dim, cfg.dim);
    detail::add_linear(layout, p + ".k", cfg.dim, cfg.dim);
    detail::add_linear(layout, p + ".v", cfg.dim, cfg.dim);
    detail::add_linear(layout, p + ".o", cfg.dim, cfg.dim);
    detail::add_mlp(layout, p + ".ffn", cfg.dim, 2 * cfg.dim, cfg.dim);
    detail::add_layernorm(layout, p + ".attn", cfg.dim);
    detail::add_layernorm(layout, p + ".ffnn", cfg.dim);
  }
  detail::add_linear(layout, "fp", cfg.dim, cfg.fingerprint_bits);
  return layout;
}

struct EncoderParams {
  EncoderConfig config;
  ParamLayout layout;
  Eigen::VectorXd theta;

  explicit EncoderParams(const EncoderConfig &cfg)
      : config(cfg), layout(encoder_layout(cfg)),
        theta(Eigen::VectorXd::Zero(layout.total())) {}

  Eigen::Index parameter_count() const { return theta.size(); }
};

inline void init_encoder_params(EncoderParams &params, Rng &rng) {
  glorot_init(params.layout, params.theta, rng);
}

namespace detail {

/// Set-attention forward pass: per-peak states, one row per peak. No
/// positional encoding anywhere, so the result is peak-order equivariant.
inline ad::Var encoder_states(ad::Tape &tape, const TapeParams &tp,
                              const EncoderConfig &cfg, const Spectrum &s) {
  s.validate();
  int n = static_cast<int>(s.peaks.size());
  Eigen::MatrixXd feats(n, cfg.feature_dim());
  for (int i = 0; i < n; ++i)
    feats.row(i) = peak_features(s.peaks[static_cast<std::size_t>(i)],
                                 s.precursor_formula, cfg.mz_embedding);

  ad::Var X = mlp(tp, "peak_in", ad::constant(tape, std::move(feats)));
  int dh = cfg.dim / cfg.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "layer" + std::to_string(l);
    ad::Var Q = linear(tp, p + ".q", X);
    ad::Var K = linear(tp, p + ".k", X);
    ad::Var V = linear(tp, p + ".v", X);
    std::vector<ad::Var> head_outs;
    for (int h = 0; h < cfg.heads; ++h) {
      ad::Var qh = ad::slice_cols(Q, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var kh = ad::slice_cols(K, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var vh = ad::slice_cols(V, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var attn = ad::rowwise_softmax(
          ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh));
      head_outs.push_back(ad::matmul(attn, vh));
    }
    ad::Var attn_out = linear(tp, p + ".o", ad::concat_cols(head_outs));
    X = layernorm(tp, p + ".attn", ad::add(X, attn_out));
    X = layernorm(tp, p + ".ffnn", ad::add(X, mlp(tp, p + ".ffn", X)));
  }
  return X;
}

}  // namespace detail

/// The peak-embedding MLP output for one peak, before any attention.
inline Eigen::VectorXd embed_peak(const EncoderParams &params, const Peak &p,
                                  const ChemicalFormula &precursor) {
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  Eigen::MatrixXd feat(1, params.config.feature_dim());
  feat.row(0) = peak_features(p, precursor, params.config.mz_embedding);
  ad::Var out = detail::mlp(tp, "peak_in", ad::constant(tape, std::move(feat)));
  return tape.value(out).row(0).transpose();
}

/// Condition vector y: the final state of the precursor peak.
inline Eigen::VectorXd encode_spectrum(const EncoderParams &params,
                                       const Spectrum &s) {
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  ad::Var X = detail::encoder_states(tape, tp, params.config, s);
  const Eigen::MatrixXd &v = tape.value(X);
  if (!v.allFinite())
    throw NonFiniteError("encode_spectrum: non-finite activations");
  return v.row(s.precursor_index()).transpose();
}

/// Per-bit probabilities from the fingerprint head: sigmoid of a linear map
/// of y. Pretraining-only surface; finetuning drops this head.
inline Eigen::VectorXd predict_fingerprint(const EncoderParams &params,
                                           const Spectrum &s) {
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  ad::Var X = detail::encoder_states(tape, tp, params.config, s);
  ad::Var logits =
      detail::linear(tp, "fp", ad::slice_rows(X, s.precursor_index(), 1));
  Eigen::ArrayXXd z = tape.value(logits).array();
  if (!z.isFinite().all())
    throw NonFiniteError("predict_fingerprint: non-finite logits");
  return (1.0 / (1.0 + (-z).exp())).matrix().row(0).transpose();
}

inline Eigen::VectorXd fingerprint_to_vector(const Fingerprint &fp) {
  Eigen::VectorXd out(fp.width());
  for (int i = 0; i < fp.width(); ++i) out[i] = fp.test_bit(i) ? 1.0 : 0.0;
  return out;
}

/// Cosine similarity; zero when either vector has zero norm.
inline double cosine_similarity(const Eigen::VectorXd &a,
                                const Eigen::VectorXd &b) {
  if (a.size() != b.size())
    throw ShapeMismatchError("cosine_similarity: size mismatch");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Mean per-bit binary cross-entropy of the fingerprint head against the
/// target bits, with the gradient over all encoder parameters.
inline double encoder_loss_grad(const EncoderParams &params,
                                const Spectrum &s, const Fingerprint &target,
                                Eigen::VectorXd *grad_out) {
  if (target.width() != params.config.fingerprint_bits)
    throw WidthMismatchError("encoder_loss_grad: fingerprint width " +
                             std::to_string(target.width()) + " != config " +
                             std::to_string(params.config.fingerprint_bits));
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  ad::Var X = detail::encoder_states(tape, tp, params.config, s);
  ad::Var logits =
      detail::linear(tp, "fp", ad::slice_rows(X, s.precursor_index(), 1));
  Eigen::MatrixXd bits(1, target.width());
  bits.row(0) = fingerprint_to_vector(target).transpose();
  ad::Var loss = ad::bce_with_logits_mean(logits, bits);
  double value = tape.value(loss)(0, 0);
  if (!std::isfinite(value))
    throw NonFiniteError("encoder_loss_grad: non-finite loss");
  if (grad_out != nullptr) {
    tape.backward(loss);
    detail::collect_grads(tape, params.layout, tp, *grad_out);
    if (!grad_out->allFinite())
      throw NonFiniteError("encoder_loss_grad: non-finite gradient");
  }
  return value;
}

struct EncoderTrainItem {
  Spectrum spectrum;
  Fingerprint fingerprint;
};

struct EncoderTrainOptions {
  int steps = 1000;
  int batch = 4;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct EncoderTrainReport {
  double final_loss = 0.0;          // mean BCE over the dataset after training
  double validation_cosine = 0.0;   // mean cosine(probabilities, true bits)
};

/// Minibatch pretraining of the fingerprint head and encoder trunk. Items
/// are visited in shuffled epochs; the learning rate follows a half cosine.
inline EncoderTrainReport pretrain_encoder(
    EncoderParams &params, std::span<const EncoderTrainItem> items,
    const EncoderTrainOptions &opt) {
  if (items.empty()) throw DataError("pretrain_encoder: no items");
  if (opt.steps < 1 || opt.batch < 1)
    throw ConfigError("pretrain_encoder: steps and batch must be positive");
  for (const auto &item : items)
    if (item.fingerprint.width() != params.config.fingerprint_bits)
      throw WidthMismatchError("pretrain_encoder: non-uniform widths");

  Rng rng(opt.seed);
  AdamWState state(params.theta.size());
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle on first use

  Eigen::VectorXd grad(params.theta.size());
  Eigen::VectorXd item_grad;
  int batch = std::min<int>(opt.batch, static_cast<int>(items.size()));
  for (int step = 0; step < opt.steps; ++step) {
    grad.setZero();
    for (int b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const EncoderTrainItem &item = items[order[cursor++]];
      encoder_loss_grad(params, item.spectrum, item.fingerprint, &item_grad);
      grad += item_grad;
    }
    grad /= static_cast<double>(batch);
    double lr = cosine_lr(step, opt.steps, opt.lr_max, opt.lr_min);
    adamw_step(params.theta, grad, state, lr, opt.weight_decay);
  }

  EncoderTrainReport report;
  for (const EncoderTrainItem &item : items) {
    report.final_loss +=
        encoder_loss_grad(params, item.spectrum, item.fingerprint, nullptr);
    Eigen::VectorXd probs = predict_fingerprint(params, item.spectrum);
    report.validation_cosine +=
        cosine_similarity(probs, fingerprint_to_vector(item.fingerprint));
  }
  report.final_loss /= static_cast<double>(items.size());
  report.validation_cosine /= static_cast<double>(items.size());
  return report;
}

// --- spectrum file I/O ---
//
// UTF-8 blocks separated by blank lines:
//   >> <id>\t<precursor_formula>\t<target_SMILES or ->
//   <mz>\t<relative_intensity>\t<formula>\t<P if precursor else F>
// A peak whose formula column is "-" is unannotated: the precursor peak
// falls back to the precursor formula, fragment peaks are dropped.

struct SpectrumParseResult {
  std::vector<Spectrum> spectra;
  int dropped_peaks = 0;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string &line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

inline double parse_number(const std::string &text, int line_no,
                           const char *what) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size())
      throw DataError("spectrum file line " + std::to_string(line_no) +
                      ": trailing junk in " + std::string(what));
    return v;
  } catch (const std::invalid_argument &) {
    throw DataError("spectrum file line " + std::to_string(line_no) +
                    ": bad " + std::string(what) + " \"" + text + "\"");
  } catch (const std::out_of_range &) {
    throw DataError("spectrum file line " + std::to_string(line_no) +
                    ": out-of-range " + std::string(what));
  }
}

}  // namespace detail

inline SpectrumParseResult parse_spectra(std::istream &in) {
  SpectrumParseResult result;
  std::optional<Spectrum> current;
  std::string line;
  int line_no = 0;

  auto finish = [&]() {
    if (!current) return;
    current->validate();
    for (const Peak &p : current->peaks)
      if (!current->precursor_formula.subtract(p.formula))
        throw DataError("spectrum " + current->id + ": peak formula " +
                        p.formula.to_string() + " exceeds precursor");
    normalize_intensities(*current);
    result.spectra.push_back(std::move(*current));
    current.reset();
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish();
      continue;
    }
    if (line.rfind(">> ", 0) == 0) {
      finish();
      auto fields = detail::split_tabs(line.substr(3));
      if (fields.size() != 3)
        throw DataError("spectrum file line " + std::to_string(line_no) +
                        ": header needs id, formula, target");
      Spectrum s;
      s.id = fields[0];
      s.precursor_formula = parse_formula(fields[1]);
      if (fields[2] != "-") s.target_smiles = fields[2];
      current = std::move(s);
      continue;
    }
    if (!current)
      throw DataError("spectrum file line " + std::to_string(line_no) +
                      ": peak before any header");
    auto fields = detail::split_tabs(line);
    if (fields.size() != 4)
      throw DataError("spectrum file line " + std::to_string(line_no) +
                      ": peak needs mz, intensity, formula, flag");
    Peak p;
    p.mz = detail::parse_number(fields[0], line_no, "mz");
    p.intensity = detail::parse_number(fields[1], line_no, "intensity");
    if (fields[3] == "P") {
      p.is_precursor = true;
    } else if (fields[3] != "F") {
      throw DataError("spectrum file line " + std::to_string(line_no) +
                      ": flag must be P or F");
    }
    if (fields[2] == "-") {
      if (!p.is_precursor) {
        ++result.dropped_peaks;
        continue;
      }
      p.formula = current->precursor_formula;
    } else {
      p.formula = parse_formula(fields[2]);
    }
    current->peaks.push_back(std::move(p));
  }
  finish();
  if (result.spectra.empty())
    throw DataError("spectrum file: no spectra found");
  return result;
}

inline SpectrumParseResult parse_spectra_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open spectrum file " + path);
  return parse_spectra(in);
}

inline void write_spectrum(std::ostream &out, const Spectrum &s) {
  out << ">> " << s.id << '\t' << s.precursor_formula.to_string() << '\t'
      << (s.target_smiles.empty() ? "-" : s.target_smiles) << '\n';
  std::ostringstream num;
  num.precision(10);
  for (const Peak &p : s.peaks) {
    num.str("");
    num << p.mz << '\t' << p.intensity;
    out << num.str() << '\t' << p.formula.to_string() << '\t'
        << (p.is_precursor ? 'P' : 'F') << '\n';
  }
}

inline void write_spectra(std::ostream &out, std::span<const Spectrum> all) {
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i > 0) out << '\n';
    write_spectrum(out, all[i]);
  }
}

}  // namespace msdiff

#endif  // MSDIFF_SPECENC_SPECENC_HPP
