//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Discrete diffusion over bond-type categorical variables. The forward
// process noises each unordered atom pair independently through a cosine
// schedule towards a fixed prior over bond types; the reverse sampler walks
// back through the per-pair posterior, marginalized over a denoiser's
// prediction of the clean adjacency.
//

#ifndef MSDIFF_DIFFUSION_DIFFUSION_HPP
#define MSDIFF_DIFFUSION_DIFFUSION_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/chem/formula.hpp"
#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/rng.hpp"

namespace msdiff {

/// cos(pi (t/T + eps) / (2 (1 + eps)))^2, evaluated through the half-angle
/// identity cos(x)^2 = (1 + cos(2x)) / 2 so the symmetry point t = T/2 at
/// eps = 0 lands on one half exactly.
inline double cosine_alpha_bar(int t, int T, double epsilon) {
  if (T <= 0) throw DataError("cosine_alpha_bar: T must be positive");
  if (t < 0 || t > T)
    throw DataError("cosine_alpha_bar: t out of range: " + std::to_string(t));
  if (epsilon < 0.0)
    throw DataError("cosine_alpha_bar: epsilon must be non-negative");
  double frac = static_cast<double>(t) / static_cast<double>(T);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (frac + epsilon) /
                               (1.0 + epsilon)));
}

struct NoiseSchedule {
  int T = 0;
  double epsilon = 0.0;
  std::vector<double> alpha_bar;  // T + 1 entries, index 0..T
  std::vector<double> beta_bar;   // 1 - alpha_bar, elementwise exact
};

inline NoiseSchedule make_cosine_schedule(int T, double epsilon = 0.008) {
  NoiseSchedule s;
  s.T = T;
  s.epsilon = epsilon;
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.beta_bar.resize(static_cast<std::size_t>(T) + 1);
  for (int t = 0; t <= T; ++t) {
    double ab = cosine_alpha_bar(t, T, epsilon);
    s.alpha_bar[static_cast<std::size_t>(t)] = ab;
    s.beta_bar[static_cast<std::size_t>(t)] = 1.0 - ab;
  }
  for (int t = 1; t <= T; ++t) {
    if (s.alpha_bar[static_cast<std::size_t>(t)] >
        s.alpha_bar[static_cast<std::size_t>(t - 1)])
      throw DataError("make_cosine_schedule: alpha_bar not monotone");
  }
  return s;
}

enum class PriorKind { Marginal, Empty, FullyConnected };

inline PriorKind parse_prior_kind(const std::string &name) {
  if (name == "marginal") return PriorKind::Marginal;
  if (name == "empty") return PriorKind::Empty;
  if (name == "full") return PriorKind::FullyConnected;
  throw ConfigError("unknown prior kind: " + name +
                    " (expected marginal|empty|full)");
}

inline const char *prior_kind_name(PriorKind kind) {
  switch (kind) {
    case PriorKind::Marginal: return "marginal";
    case PriorKind::Empty: return "empty";
    case PriorKind::FullyConnected: return "full";
  }
  return "?";
}

/// Empirical frequency of each bond type over all unordered heavy-atom pairs
/// (i < j) of every corpus molecule. No cross-molecule padding: a molecule
/// with n atoms contributes exactly n(n-1)/2 observations.
inline Eigen::VectorXd build_marginal(std::span<const MolecularGraph> corpus) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(kBondTypeCount);
  double total = 0.0;
  for (const auto &g : corpus) {
    int n = g.atom_count();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        counts[static_cast<int>(g.bond(i, j))] += 1.0;
        total += 1.0;
      }
  }
  if (total <= 0.0)
    throw DataError("build_marginal: corpus has no atom pairs");
  return counts / total;
}

inline Eigen::VectorXd build_marginal(PriorKind kind,
                                      std::span<const MolecularGraph> corpus = {}) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(kBondTypeCount);
  switch (kind) {
    case PriorKind::Marginal:
      return build_marginal(corpus);
    case PriorKind::Empty:
      m[static_cast<int>(BondType::None)] = 1.0;
      return m;
    case PriorKind::FullyConnected:
      m[static_cast<int>(BondType::Single)] = 1.0;
      return m;
  }
  throw DataError("build_marginal: unreachable prior kind");
}

/// Immutable bundle of a noise schedule and the prior vector m. Produces the
/// cumulative matrices Qbar^t = abar^t I + (1 - abar^t) 1 m^T and the
/// single-step matrices Q^t = a^t I + (1 - a^t) 1 m^T with
/// a^t = abar^t / abar^{t-1}; the division is floored at 1e-12 so the chain
/// end cannot blow up. Rows always sum to 1 because m does.
class TransitionModel {
 public:
  TransitionModel(NoiseSchedule schedule, Eigen::VectorXd m)
      : schedule_(std::move(schedule)), m_(std::move(m)) {
    if (schedule_.alpha_bar.size() !=
        static_cast<std::size_t>(schedule_.T) + 1)
      throw ShapeMismatchError("TransitionModel: schedule size mismatch");
    if (m_.size() < 2)
      throw ShapeMismatchError("TransitionModel: prior needs >= 2 categories");
    double total = 0.0;
    for (Eigen::Index i = 0; i < m_.size(); ++i) {
      if (!std::isfinite(m_[i]) || m_[i] < 0.0)
        throw DataError("TransitionModel: prior entries must be >= 0");
      total += m_[i];
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw DataError("TransitionModel: prior must sum to 1");
    m_ /= total;
  }

  const NoiseSchedule &schedule() const { return schedule_; }
  const Eigen::VectorXd &m() const { return m_; }
  int k() const { return static_cast<int>(m_.size()); }
  int steps() const { return schedule_.T; }

  double alpha_bar(int t) const {
    if (t < 0 || t > schedule_.T)
      throw DataError("TransitionModel: t out of range");
    return schedule_.alpha_bar[static_cast<std::size_t>(t)];
  }

  /// Cumulative transition matrix, valid for 0 <= t <= T.
  Eigen::MatrixXd qbar(int t) const { return mix(alpha_bar(t)); }

  /// Single-step transition matrix, valid for 1 <= t <= T.
  Eigen::MatrixXd q(int t) const {
    if (t < 1 || t > schedule_.T)
      throw DataError("TransitionModel: single-step t out of range");
    double prev = std::max(alpha_bar(t - 1), 1e-12);
    return mix(alpha_bar(t) / prev);
  }

 private:
  Eigen::MatrixXd mix(double alpha) const {
    int n = k();
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(n, n) * alpha;
    out += (1.0 - alpha) * Eigen::VectorXd::Ones(n) * m_.transpose();
    return out;
  }

  NoiseSchedule schedule_;
  Eigen::VectorXd m_;
};

/// A molecular graph part way through the forward process. Atoms are the
/// clean node labels; bonds hold the noised adjacency at step t. Symmetry
/// and the None diagonal are maintained by MolecularGraph itself.
struct NoisedGraph {
  MolecularGraph graph;
  int t = 0;
};

/// Per-pair categorical distributions over bond types, indexed [i][j][c].
/// Stored densely; set_pair writes both (i, j) and (j, i) so the tensor
/// stays symmetric.
class EdgePrediction {
 public:
  EdgePrediction(int n, int k)
      : n_(n), k_(k),
        probs_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n) *
                   static_cast<std::size_t>(k),
               0.0) {
    if (n < 0 || k < 1)
      throw ShapeMismatchError("EdgePrediction: bad dimensions");
  }

  int atom_count() const { return n_; }
  int category_count() const { return k_; }

  double prob(int i, int j, int c) const { return probs_[index(i, j, c)]; }

  void set_prob(int i, int j, int c, double v) {
    probs_[index(i, j, c)] = v;
    probs_[index(j, i, c)] = v;
  }

  Eigen::VectorXd pair(int i, int j) const {
    Eigen::VectorXd out(k_);
    for (int c = 0; c < k_; ++c) out[c] = probs_[index(i, j, c)];
    return out;
  }

  void set_pair(int i, int j, const Eigen::VectorXd &p) {
    if (p.size() != k_)
      throw ShapeMismatchError("EdgePrediction: pair size mismatch");
    for (int c = 0; c < k_; ++c) set_prob(i, j, c, p[c]);
  }

  /// True when every off-diagonal pair is a probability vector summing to 1
  /// within tol and the tensor is symmetric.
  bool well_formed(double tol = 1e-9) const {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        if (i == j) continue;
        double sum = 0.0;
        for (int c = 0; c < k_; ++c) {
          double p = prob(i, j, c);
          if (!std::isfinite(p) || p < 0.0) return false;
          if (p != prob(j, i, c)) return false;
          sum += p;
        }
        if (std::abs(sum - 1.0) > tol) return false;
      }
    return true;
  }

 private:
  std::size_t index(int i, int j, int c) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(k_) +
           static_cast<std::size_t>(c);
  }

  int n_;
  int k_;
  std::vector<double> probs_;
};

/// Draws a^t_{ij} from the Qbar^t row of the clean bond type, independently
/// for each i < j, then mirrors the upper triangle.
inline NoisedGraph forward_sample(const MolecularGraph &g, int t,
                                  const TransitionModel &tm, Rng &rng) {
  if (tm.k() != kBondTypeCount)
    throw ShapeMismatchError("forward_sample: model is not over bond types");
  if (t < 1 || t > tm.steps())
    throw DataError("forward_sample: t out of range");
  Eigen::MatrixXd qb = tm.qbar(t);
  NoisedGraph out;
  out.graph = MolecularGraph(g.atoms());
  out.t = t;
  int n = g.atom_count();
  std::vector<double> row(static_cast<std::size_t>(tm.k()));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      int a0 = static_cast<int>(g.bond(i, j));
      for (int c = 0; c < tm.k(); ++c) row[static_cast<std::size_t>(c)] = qb(a0, c);
      std::size_t drawn = rng.categorical(row);
      if (drawn == SIZE_MAX)
        throw DegeneratePosteriorError("forward_sample: zero mass row");
      if (drawn != 0)
        out.graph.set_bond(i, j, static_cast<BondType>(drawn));
    }
  return out;
}

namespace detail {

/// Posterior over a^{t-1} for one pair given the denoiser's distribution
/// over a^0 and the observed a^t = w, with the transition matrices already
/// materialized. Terms whose a^0 hypothesis gives the observation zero
/// forward probability contribute nothing.
inline Eigen::VectorXd pair_posterior(const Eigen::VectorXd &pred, int w,
                                      const Eigen::MatrixXd &q_t,
                                      const Eigen::MatrixXd &qbar_prev,
                                      const Eigen::MatrixXd &qbar_t) {
  Eigen::Index k = pred.size();
  Eigen::VectorXd post = Eigen::VectorXd::Zero(k);
  for (Eigen::Index a0 = 0; a0 < k; ++a0) {
    double denom = qbar_t(a0, w);
    if (!(denom > 0.0)) continue;
    double weight = pred[a0] / denom;
    if (weight == 0.0) continue;
    for (Eigen::Index v = 0; v < k; ++v)
      post[v] += weight * q_t(v, w) * qbar_prev(a0, v);
  }
  double mass = post.sum();
  if (!(mass > 0.0))
    throw DegeneratePosteriorError("pair_posterior: all mass zero");
  return post / mass;
}

}  // namespace detail

/// Normalized posterior distribution of a^{t-1} for a single pair.
inline Eigen::VectorXd posterior_distribution(const Eigen::VectorXd &pred,
                                              int a_t, int t,
                                              const TransitionModel &tm) {
  if (pred.size() != tm.k())
    throw ShapeMismatchError("posterior_distribution: category mismatch");
  if (t < 1 || t > tm.steps())
    throw DataError("posterior_distribution: t out of range");
  if (a_t < 0 || a_t >= tm.k())
    throw DataError("posterior_distribution: observed category out of range");
  return detail::pair_posterior(pred, a_t, tm.q(t), tm.qbar(t - 1),
                                tm.qbar(t));
}

/// One reverse step: samples a^{t-1} for every pair i < j from the posterior
/// marginalized over the prediction, then mirrors the upper triangle.
inline NoisedGraph posterior_step(const EdgePrediction &pred,
                                  const NoisedGraph &noised,
                                  const TransitionModel &tm, Rng &rng) {
  int n = noised.graph.atom_count();
  if (pred.atom_count() != n || pred.category_count() != tm.k())
    throw ShapeMismatchError("posterior_step: prediction shape mismatch");
  if (tm.k() != kBondTypeCount)
    throw ShapeMismatchError("posterior_step: model is not over bond types");
  if (noised.t < 1 || noised.t > tm.steps())
    throw DataError("posterior_step: t out of range");
  int t = noised.t;
  Eigen::MatrixXd q_t = tm.q(t);
  Eigen::MatrixXd qbar_prev = tm.qbar(t - 1);
  Eigen::MatrixXd qbar_t = tm.qbar(t);
  NoisedGraph out;
  out.graph = MolecularGraph(noised.graph.atoms());
  out.t = t - 1;
  std::vector<double> weights(static_cast<std::size_t>(tm.k()));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      int w = static_cast<int>(noised.graph.bond(i, j));
      Eigen::VectorXd post =
          detail::pair_posterior(pred.pair(i, j), w, q_t, qbar_prev, qbar_t);
      for (int c = 0; c < tm.k(); ++c)
        weights[static_cast<std::size_t>(c)] = post[c];
      std::size_t drawn = rng.categorical(weights);
      if (drawn == SIZE_MAX)
        throw DegeneratePosteriorError("posterior_step: zero mass");
      if (drawn != 0)
        out.graph.set_bond(i, j, static_cast<BondType>(drawn));
    }
  return out;
}

/// Cross-entropy between the true bonds and the predicted distributions,
/// summed over unordered pairs. Probabilities are floored at 1e-30 so a
/// zero-confidence truth bond yields a large finite loss.
inline double diffusion_loss(const EdgePrediction &pred,
                             const MolecularGraph &truth) {
  int n = truth.atom_count();
  if (pred.atom_count() != n)
    throw ShapeMismatchError("diffusion_loss: atom count mismatch");
  if (pred.category_count() != kBondTypeCount)
    throw ShapeMismatchError("diffusion_loss: category count mismatch");
  double loss = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double p = pred.prob(i, j, static_cast<int>(truth.bond(i, j)));
      loss -= std::log(std::max(p, 1e-30));
    }
  return loss;
}

using ConditionVector = Eigen::VectorXd;
using DenoiseFn =
    std::function<EdgePrediction(const NoisedGraph &, const ConditionVector &)>;

/// Atom list for a formula: heavy atoms expanded in element-symbol order.
/// Sampling fixes this ordering up front; a permutation-equivariant denoiser
/// makes the choice a pure representation detail.
inline std::vector<Element> atoms_for_formula(const ChemicalFormula &formula) {
  std::vector<Element> order;
  for (int e = 0; e < kElementCount; ++e)
    order.push_back(static_cast<Element>(e));
  std::sort(order.begin(), order.end(), [](Element a, Element b) {
    return std::string(element_symbol(a)) < std::string(element_symbol(b));
  });
  std::vector<Element> atoms;
  for (Element e : order)
    for (int c = 0; c < formula.count(e); ++c) atoms.push_back(e);
  return atoms;
}

/// Full reverse chain: A^T drawn iid from the prior on the upper triangle,
/// then T posterior steps guided by the denoiser. Validity of the result is
/// deliberately not enforced; callers filter downstream.
inline MolecularGraph sample_molecule(const ChemicalFormula &formula,
                                      const ConditionVector &y,
                                      const DenoiseFn &denoiser,
                                      const TransitionModel &tm, Rng &rng) {
  if (tm.k() != kBondTypeCount)
    throw ShapeMismatchError("sample_molecule: model is not over bond types");
  auto atoms = atoms_for_formula(formula);
  int n = static_cast<int>(atoms.size());
  if (n < 2)
    throw InvalidGraphError(
        "sample_molecule: need at least two heavy atoms, got " +
        std::to_string(n));
  NoisedGraph state;
  state.graph = MolecularGraph(atoms);
  state.t = tm.steps();
  std::vector<double> prior(static_cast<std::size_t>(tm.k()));
  for (int c = 0; c < tm.k(); ++c)
    prior[static_cast<std::size_t>(c)] = tm.m()[c];
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      std::size_t drawn = rng.categorical(prior);
      if (drawn == SIZE_MAX)
        throw DegeneratePosteriorError("sample_molecule: zero mass prior");
      if (drawn != 0) state.graph.set_bond(i, j, static_cast<BondType>(drawn));
    }
  for (int t = tm.steps(); t >= 1; --t) {
    state.t = t;
    EdgePrediction pred = denoiser(state, y);
    state = posterior_step(pred, state, tm, rng);
  }
  return state.graph;
}

}  // namespace msdiff

#endif  // MSDIFF_DIFFUSION_DIFFUSION_HPP
