//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Graph transformer predicting denoised bond-type probabilities from the
// noised adjacency, fixed node elements, a graph-level condition vector,
// and the diffusion step. Edge states modulate attention logits additively;
// edge states are refreshed from incident node pairs; the encoded condition
// is broadcast into nodes and edges at every layer. All arithmetic runs
// through the autodiff tape so training and evaluation share one code path.
//

#ifndef MSDIFF_DENOISER_DENOISER_HPP
#define MSDIFF_DENOISER_DENOISER_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/diffusion/diffusion.hpp"
#include "msdiff/nn/autodiff.hpp"
#include "msdiff/nn/params.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/rng.hpp"

namespace msdiff {

struct DenoiserConfig {
  int layers = 4;
  int hidden_node = 128;
  int hidden_edge = 64;
  int hidden_global = 64;
  int heads = 8;
  int time_embedding = 32;
  int condition_dim = 2048;  // dimension of y

  void validate() const {
    if (layers < 1) throw ConfigError("denoiser: layers must be >= 1");
    if (heads < 1 || hidden_node % heads != 0)
      throw ConfigError("denoiser: hidden_node must be divisible by heads");
    if (hidden_edge < 1 || hidden_global < 1 || condition_dim < 1)
      throw ConfigError("denoiser: dimensions must be positive");
    if (time_embedding < 2 || time_embedding % 2 != 0)
      throw ConfigError("denoiser: time_embedding must be even and >= 2");
  }
};

inline ParamLayout denoiser_layout(const DenoiserConfig &cfg) {
  cfg.validate();
  ParamLayout layout;
  Eigen::Index dn = cfg.hidden_node, de = cfg.hidden_edge,
               dg = cfg.hidden_global;
  detail::add_mlp(layout, "node_in", kElementCount + cfg.time_embedding, dn,
                  dn);
  detail::add_mlp(layout, "edge_in", kBondTypeCount, de, de);
  detail::add_mlp(layout, "global_in", cfg.condition_dim, dg, dg);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "layer" + std::to_string(l);
    detail::add_linear(layout, p + ".q", dn, dn);
    detail::add_linear(layout, p + ".k", dn, dn);
    detail::add_linear(layout, p + ".v", dn, dn);
    detail::add_linear(layout, p + ".o", dn, dn);
    detail::add_linear(layout, p + ".emod", de, cfg.heads);
    detail::add_mlp(layout, p + ".eup", 2 * dn + de, de, de);
    detail::add_mlp(layout, p + ".ffn", dn, 2 * dn, dn);
    detail::add_linear(layout, p + ".gn", dg, dn);
    detail::add_linear(layout, p + ".ge", dg, de);
    detail::add_layernorm(layout, p + ".attn", dn);
    detail::add_layernorm(layout, p + ".ffnn", dn);
    detail::add_layernorm(layout, p + ".edge", de);
  }
  detail::add_mlp(layout, "out", de, de, kBondTypeCount);
  return layout;
}

struct DenoiserParams {
  DenoiserConfig config;
  ParamLayout layout;
  Eigen::VectorXd theta;

  explicit DenoiserParams(const DenoiserConfig &cfg)
      : config(cfg), layout(denoiser_layout(cfg)),
        theta(Eigen::VectorXd::Zero(layout.total())) {}

  Eigen::Index parameter_count() const { return theta.size(); }
};

inline void init_denoiser_params(DenoiserParams &params, Rng &rng) {
  glorot_init(params.layout, params.theta, rng);
}

/// Sinusoidal features of s = t / T: pairs (sin, cos) over geometrically
/// spaced frequencies, one full period at the slowest.
inline Eigen::RowVectorXd time_embedding(int t, int total_steps, int dim) {
  if (total_steps <= 0) throw DataError("time_embedding: bad total");
  double s = static_cast<double>(t) / static_cast<double>(total_steps);
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

namespace detail {

/// Forward pass up to the symmetrized per-pair logits (n^2 x k). The
/// condition enters as a live tape variable (1 x condition_dim) so gradients
/// can flow back into whatever produced it.
inline ad::Var denoiser_logits(ad::Tape &tape, const TapeParams &tp,
                               const DenoiserConfig &cfg,
                               const NoisedGraph &noised, ad::Var y_row,
                               int total_steps) {
  int n = noised.graph.atom_count();
  if (n < 1) throw ShapeMismatchError("denoiser: empty graph");
  if (tape.value(y_row).rows() != 1 ||
      tape.value(y_row).cols() != cfg.condition_dim)
    throw ShapeMismatchError("denoiser: condition dimension mismatch");

  Eigen::MatrixXd node_feat =
      Eigen::MatrixXd::Zero(n, kElementCount + cfg.time_embedding);
  Eigen::RowVectorXd temb =
      time_embedding(noised.t, total_steps, cfg.time_embedding);
  for (int i = 0; i < n; ++i) {
    node_feat(i, static_cast<int>(noised.graph.atom(i))) = 1.0;
    node_feat.row(i).tail(cfg.time_embedding) = temb;
  }
  Eigen::MatrixXd edge_feat = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(n) * n, kBondTypeCount);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      edge_feat(static_cast<Eigen::Index>(i) * n + j,
                static_cast<int>(noised.graph.bond(i, j))) = 1.0;

  ad::Var X = mlp(tp, "node_in", ad::constant(tape, std::move(node_feat)));
  ad::Var E = mlp(tp, "edge_in", ad::constant(tape, std::move(edge_feat)));
  ad::Var G = mlp(tp, "global_in", y_row);

  int dh = cfg.hidden_node / cfg.heads;
  double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    std::string p = "layer" + std::to_string(l);
    X = ad::add_broadcast_row(X, linear(tp, p + ".gn", G));
    E = ad::add_broadcast_row(E, linear(tp, p + ".ge", G));

    ad::Var Q = linear(tp, p + ".q", X);
    ad::Var K = linear(tp, p + ".k", X);
    ad::Var V = linear(tp, p + ".v", X);
    ad::Var emod = linear(tp, p + ".emod", E);  // n^2 x heads
    std::vector<ad::Var> head_outs;
    for (int h = 0; h < cfg.heads; ++h) {
      ad::Var qh = ad::slice_cols(Q, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var kh = ad::slice_cols(K, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var vh = ad::slice_cols(V, static_cast<Eigen::Index>(h) * dh, dh);
      ad::Var scores =
          ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh);
      ad::Var mod = ad::reshape_square(ad::slice_cols(emod, h, 1), n);
      ad::Var attn = ad::rowwise_softmax(ad::add(scores, mod));
      head_outs.push_back(ad::matmul(attn, vh));
    }
    ad::Var attn_out = linear(tp, p + ".o", ad::concat_cols(head_outs));
    X = layernorm(tp, p + ".attn", ad::add(X, attn_out));
    X = layernorm(tp, p + ".ffnn", ad::add(X, mlp(tp, p + ".ffn", X)));

    ad::Var pair_feat =
        ad::concat_cols({ad::pair_left(X), ad::pair_right(X), E});
    E = layernorm(tp, p + ".edge", ad::add(E, mlp(tp, p + ".eup", pair_feat)));
  }
  ad::Var logits = mlp(tp, "out", E);
  return ad::pair_symmetrize(logits, n);
}

/// Convenience wrapper for a fixed condition vector.
inline ad::Var denoiser_logits(ad::Tape &tape, const TapeParams &tp,
                               const DenoiserConfig &cfg,
                               const NoisedGraph &noised,
                               const ConditionVector &y, int total_steps) {
  if (y.size() != cfg.condition_dim)
    throw ShapeMismatchError("denoiser: condition dimension mismatch");
  ad::Var y_row = ad::constant(tape, Eigen::MatrixXd(y.transpose()));
  return denoiser_logits(tape, tp, cfg, noised, y_row, total_steps);
}

}  // namespace detail

/// Evaluates the network and normalizes the symmetrized logits per pair.
inline EdgePrediction denoise(const DenoiserParams &params,
                              const NoisedGraph &noised,
                              const ConditionVector &y, int total_steps) {
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  ad::Var logits = detail::denoiser_logits(tape, tp, params.config, noised, y,
                                           total_steps);
  const Eigen::MatrixXd &z = tape.value(logits);
  if (!z.allFinite())
    throw NonFiniteError("denoise: non-finite activations");
  int n = noised.graph.atom_count();
  EdgePrediction pred(n, kBondTypeCount);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Eigen::RowVectorXd row = z.row(static_cast<Eigen::Index>(i) * n + j);
      Eigen::ArrayXd e = (row.transpose().array() - row.maxCoeff()).exp();
      Eigen::VectorXd prob = (e / e.sum()).matrix();
      for (int c = 0; c < kBondTypeCount; ++c) pred.set_prob(i, j, c, prob[c]);
    }
  return pred;
}

/// Adapts stored parameters to the sampling loop's callback shape. The
/// params object must outlive the returned callable.
inline DenoiseFn make_denoise_fn(const DenoiserParams &params,
                                 int total_steps) {
  const DenoiserParams *p = &params;
  return [p, total_steps](const NoisedGraph &ng, const ConditionVector &y) {
    return denoise(*p, ng, y, total_steps);
  };
}

/// Loss and gradient for one fixed noised graph against the clean truth.
/// Deterministic; the workhorse behind both training and gradient checks.
inline double denoiser_loss_grad(const DenoiserParams &params,
                                 const NoisedGraph &noised,
                                 const ConditionVector &y,
                                 const MolecularGraph &truth, int total_steps,
                                 Eigen::VectorXd *grad_out) {
  int n = truth.atom_count();
  if (noised.graph.atom_count() != n)
    throw ShapeMismatchError("denoiser_loss_grad: atom count mismatch");
  ad::Tape tape;
  auto tp = detail::push_params(tape, params.layout, params.theta);
  ad::Var logits = detail::denoiser_logits(tape, tp, params.config, noised, y,
                                           total_steps);
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
    throw NonFiniteError("denoiser_loss_grad: non-finite loss");
  if (grad_out != nullptr) {
    tape.backward(loss);
    detail::collect_grads(tape, params.layout, tp, *grad_out);
    if (!grad_out->allFinite())
      throw NonFiniteError("denoiser_loss_grad: non-finite gradient");
  }
  return value;
}

struct TrainItem {
  MolecularGraph graph;
  ConditionVector y;
};

/// Stochastic training objective over a batch: each item gets a uniformly
/// drawn step t in [1, T] and an independent forward noising, then the
/// cross-entropy of the denoised prediction against the clean bonds. Loss
/// is the batch mean; the gradient matches it exactly.
inline std::pair<double, Eigen::VectorXd> denoiser_backward(
    const DenoiserParams &params, std::span<const TrainItem> batch,
    const TransitionModel &tm, Rng &rng) {
  if (batch.empty()) throw DataError("denoiser_backward: empty batch");
  double total_loss = 0.0;
  Eigen::VectorXd total_grad = Eigen::VectorXd::Zero(params.theta.size());
  Eigen::VectorXd item_grad;
  for (const TrainItem &item : batch) {
    int t = 1 + static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(tm.steps())));
    NoisedGraph noised = forward_sample(item.graph, t, tm, rng);
    total_loss += denoiser_loss_grad(params, noised, item.y, item.graph,
                                     tm.steps(), &item_grad);
    total_grad += item_grad;
  }
  double scale = 1.0 / static_cast<double>(batch.size());
  return {total_loss * scale, total_grad * scale};
}

}  // namespace msdiff

#endif  // MSDIFF_DENOISER_DENOISER_HPP
