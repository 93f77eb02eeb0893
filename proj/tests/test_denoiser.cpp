//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Graph transformer denoiser: layout arithmetic, permutation equivariance,
// analytic gradients against finite differences, and a short end-to-end
// optimization run.
//

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "msdiff/chem/formula.hpp"
#include "msdiff/chem/smiles.hpp"
#include "msdiff/denoiser/denoiser.hpp"
#include "msdiff/diffusion/diffusion.hpp"
#include "msdiff/nn/optimizer.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/rng.hpp"

using namespace msdiff;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig cfg;
  cfg.layers = 1;
  cfg.hidden_node = 8;
  cfg.hidden_edge = 6;
  cfg.hidden_global = 4;
  cfg.heads = 2;
  cfg.time_embedding = 4;
  cfg.condition_dim = 3;
  return cfg;
}

ConditionVector random_condition(int dim, Rng &rng) {
  ConditionVector y(dim);
  for (int i = 0; i < dim; ++i) y[i] = 2.0 * rng.uniform() - 1.0;
  return y;
}

}  // namespace

TEST_CASE("denoiser configuration validation") {
  DenoiserConfig cfg = small_config();
  REQUIRE_NOTHROW(cfg.validate());

  DenoiserConfig bad = cfg;
  bad.layers = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.heads = 3;  // 8 % 3 != 0
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.time_embedding = 5;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.condition_dim = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("parameter layout size matches hand count") {
  // For layers=1, dn=8, de=6, dg=4, heads=2, temb=4, cond=3:
  //   node_in 208, edge_in 78, global_in 36,
  //   layer0: qkvo 288, emod 14, eup 180, ffn 280, gn 40, ge 30, norms 44,
  //   out 77. Total 1275.
  DenoiserParams params(small_config());
  CHECK(params.parameter_count() == 1275);
  CHECK(params.theta.size() == 1275);
  CHECK(params.theta.cwiseAbs().maxCoeff() == 0.0);

  const auto &entry = params.layout.at("layer0.q.w");
  CHECK(entry.rows == 8);
  CHECK(entry.cols == 8);
  REQUIRE_THROWS_AS(params.layout.at("layer9.q.w"), ConfigError);
}

TEST_CASE("initialization fills weights and leaves norms at identity") {
  DenoiserParams params(small_config());
  Rng rng(42);
  init_denoiser_params(params, rng);

  const auto &gamma = params.layout.at("layer0.attn.ln_g");
  const auto &beta = params.layout.at("layer0.attn.ln_b");
  const auto &bias = params.layout.at("node_in.0.b");
  const auto &weight = params.layout.at("node_in.0.w");
  for (Eigen::Index i = 0; i < gamma.cols; ++i)
    CHECK(params.theta[gamma.offset + i] == 1.0);
  for (Eigen::Index i = 0; i < beta.cols; ++i)
    CHECK(params.theta[beta.offset + i] == 0.0);
  for (Eigen::Index i = 0; i < bias.cols; ++i)
    CHECK(params.theta[bias.offset + i] == 0.0);

  double limit = std::sqrt(6.0 / (weight.rows + weight.cols));
  double max_abs = 0.0;
  bool any_nonzero = false;
  for (Eigen::Index i = 0; i < weight.rows * weight.cols; ++i) {
    double v = params.theta[weight.offset + i];
    max_abs = std::max(max_abs, std::abs(v));
    any_nonzero |= (v != 0.0);
  }
  CHECK(max_abs <= limit);
  CHECK(any_nonzero);

  DenoiserParams again(small_config());
  Rng rng2(42);
  init_denoiser_params(again, rng2);
  CHECK(again.theta == params.theta);
}

TEST_CASE("time embedding layout") {
  Eigen::RowVectorXd at0 = time_embedding(0, 10, 8);
  REQUIRE(at0.size() == 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(at0[2 * i] == Catch::Approx(0.0).margin(1e-15));
    CHECK(at0[2 * i + 1] == Catch::Approx(1.0).margin(1e-15));
  }
  Eigen::RowVectorXd a = time_embedding(3, 10, 8);
  Eigen::RowVectorXd b = time_embedding(4, 10, 8);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-3);
  CHECK(a.allFinite());
  REQUIRE_THROWS_AS(time_embedding(1, 0, 8), DataError);
}

TEST_CASE("denoiser output is a well formed symmetric prediction") {
  DenoiserParams params(small_config());
  Rng rng(7);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CC(=O)N");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  NoisedGraph noised = forward_sample(g, 6, tm, rng);
  ConditionVector y = random_condition(3, rng);

  EdgePrediction pred = denoise(params, noised, y, 10);
  CHECK(pred.well_formed(1e-9));
  int n = g.atom_count();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      Eigen::VectorXd pij = pred.pair(i, j);
      Eigen::VectorXd pji = pred.pair(j, i);
      CHECK((pij - pji).cwiseAbs().maxCoeff() < 1e-14);
      CHECK(pij.sum() == Catch::Approx(1.0).margin(1e-9));
      CHECK(pij.minCoeff() >= 0.0);
    }
}

TEST_CASE("relabeling atoms relabels the prediction") {
  DenoiserParams params(small_config());
  Rng rng(19);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("OCC=O");
  TransitionModel tm(make_cosine_schedule(12),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  NoisedGraph noised = forward_sample(g, 5, tm, rng);
  ConditionVector y = random_condition(3, rng);

  std::vector<int> perm{2, 0, 3, 1};
  NoisedGraph permuted{noised.graph.permuted(perm), noised.t};

  EdgePrediction base = denoise(params, noised, y, 12);
  EdgePrediction moved = denoise(params, permuted, y, 12);
  int n = g.atom_count();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Eigen::VectorXd a = base.pair(i, j);
      Eigen::VectorXd b = moved.pair(perm[static_cast<std::size_t>(i)],
                                     perm[static_cast<std::size_t>(j)]);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("prediction responds to the condition vector and the step") {
  DenoiserParams params(small_config());
  Rng rng(23);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CCO");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  NoisedGraph noised = forward_sample(g, 5, tm, rng);

  ConditionVector y1 = random_condition(3, rng);
  ConditionVector y2 = random_condition(3, rng);
  EdgePrediction p1 = denoise(params, noised, y1, 10);
  EdgePrediction p2 = denoise(params, noised, y2, 10);
  double dy = 0.0;
  int n = g.atom_count();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dy = std::max(dy, (p1.pair(i, j) - p2.pair(i, j)).cwiseAbs().maxCoeff());
  CHECK(dy > 1e-8);

  NoisedGraph late{noised.graph, 10};
  NoisedGraph early{noised.graph, 1};
  EdgePrediction pl = denoise(params, late, y1, 10);
  EdgePrediction pe = denoise(params, early, y1, 10);
  double dt = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dt = std::max(dt,
                    (pl.pair(i, j) - pe.pair(i, j)).cwiseAbs().maxCoeff());
  CHECK(dt > 1e-8);

  ConditionVector wrong = random_condition(5, rng);
  REQUIRE_THROWS_AS(denoise(params, noised, wrong, 10), ShapeMismatchError);
}

TEST_CASE("all-zero parameters yield the uniform prediction and its loss") {
  // Zero norm scales push every activation to zero, so the logits vanish
  // and each pair softmax is exactly uniform over the five bond states.
  DenoiserParams params(small_config());
  MolecularGraph g = parse_smiles("CCO");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Empty));
  Rng rng(3);
  NoisedGraph noised = forward_sample(g, 4, tm, rng);
  ConditionVector y = random_condition(3, rng);

  EdgePrediction pred = denoise(params, noised, y, 10);
  int n = g.atom_count();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int c = 0; c < kBondTypeCount; ++c)
        CHECK(pred.pair(i, j)[c] == Catch::Approx(0.2).margin(1e-12));

  double loss = denoiser_loss_grad(params, noised, y, g, 10, nullptr);
  double pairs = n * (n - 1) / 2.0;
  CHECK(loss == Catch::Approx(pairs * std::log(5.0)).margin(1e-12));
}

TEST_CASE("tape loss equals the probability-space loss of the same forward") {
  DenoiserParams params(small_config());
  Rng rng(31);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CC(C)O");
  TransitionModel tm(make_cosine_schedule(16),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  NoisedGraph noised = forward_sample(g, 9, tm, rng);
  ConditionVector y = random_condition(3, rng);

  double tape_loss = denoiser_loss_grad(params, noised, y, g, 16, nullptr);
  EdgePrediction pred = denoise(params, noised, y, 16);
  CHECK(tape_loss == Catch::Approx(diffusion_loss(pred, g)).epsilon(1e-10));
}

TEST_CASE("analytic gradient agrees with central differences") {
  DenoiserParams params(small_config());
  Rng rng(57);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CC=O");
  TransitionModel tm(make_cosine_schedule(8),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  NoisedGraph noised = forward_sample(g, 3, tm, rng);
  ConditionVector y = random_condition(3, rng);

  Eigen::VectorXd analytic;
  denoiser_loss_grad(params, noised, y, g, 8, &analytic);
  REQUIRE(analytic.size() == params.theta.size());

  auto loss_fn = [&](const Eigen::VectorXd &theta) {
    DenoiserParams probe = params;
    probe.theta = theta;
    return denoiser_loss_grad(probe, noised, y, g, 8, nullptr);
  };

  // Every eighth coordinate, covering all parameter groups.
  std::vector<Eigen::Index> coords;
  for (Eigen::Index c = 0; c < params.theta.size(); c += 8)
    coords.push_back(c);
  double err = max_relative_fd_error(loss_fn, params.theta, analytic, coords);
  CHECK(err < 1e-4);
}

TEST_CASE("training draws are reproducible and match a manual replay") {
  DenoiserParams params(small_config());
  Rng init_rng(71);
  init_denoiser_params(params, init_rng);

  MolecularGraph g = parse_smiles("CCN");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  Rng yrng(5);
  std::vector<TrainItem> batch;
  batch.push_back(TrainItem{g, random_condition(3, yrng)});

  Rng r1(99), r2(99);
  auto [loss1, grad1] = denoiser_backward(params, batch, tm, r1);
  auto [loss2, grad2] = denoiser_backward(params, batch, tm, r2);
  CHECK(loss1 == loss2);
  CHECK((grad1 - grad2).cwiseAbs().maxCoeff() == 0.0);

  // Replay the same stream by hand: one step draw, one forward noising.
  Rng r3(99);
  int t = 1 + static_cast<int>(
                  r3.uniform_int(static_cast<std::uint64_t>(tm.steps())));
  NoisedGraph noised = forward_sample(g, t, tm, r3);
  Eigen::VectorXd grad3;
  double loss3 =
      denoiser_loss_grad(params, noised, batch[0].y, g, tm.steps(), &grad3);
  CHECK(loss1 == loss3);
  CHECK((grad1 - grad3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a short optimization run reduces the denoising loss") {
  DenoiserConfig cfg = small_config();
  DenoiserParams params(cfg);
  Rng rng(13);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CCO");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  std::vector<TrainItem> batch;
  batch.push_back(TrainItem{g, random_condition(3, rng)});

  AdamWState state(params.theta.size());
  const int steps = 120;
  double head = 0.0, tail = 0.0;
  for (int s = 0; s < steps; ++s) {
    auto [loss, grad] = denoiser_backward(params, batch, tm, rng);
    adamw_step(params.theta, grad, state, 2e-3, 0.0);
    if (s < 10) head += loss;
    if (s >= steps - 10) tail += loss;
  }
  CHECK(tail < 0.7 * head);
}

TEST_CASE("the denoiser plugs into the reverse sampler") {
  DenoiserParams params(small_config());
  Rng rng(83);
  init_denoiser_params(params, rng);

  MolecularGraph g = parse_smiles("CCO");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Marginal, {&g, 1}));
  ConditionVector y = random_condition(3, rng);
  DenoiseFn fn = make_denoise_fn(params, tm.steps());

  MolecularGraph sampled =
      sample_molecule(parse_formula("C2H6O"), y, fn, tm, rng);
  REQUIRE(sampled.atom_count() == 3);
  int carbons = 0, oxygens = 0;
  for (int i = 0; i < 3; ++i) {
    if (sampled.atom(i) == Element::C) ++carbons;
    if (sampled.atom(i) == Element::O) ++oxygens;
  }
  CHECK(carbons == 2);
  CHECK(oxygens == 1);
}

TEST_CASE("batch gradients reject shape drift") {
  DenoiserParams params(small_config());
  MolecularGraph g = parse_smiles("CC");
  TransitionModel tm(make_cosine_schedule(10),
                     build_marginal(PriorKind::Empty));
  Rng rng(1);
  std::vector<TrainItem> empty;
  REQUIRE_THROWS_AS(denoiser_backward(params, empty, tm, rng), DataError);

  NoisedGraph noised = forward_sample(g, 2, tm, rng);
  MolecularGraph bigger = parse_smiles("CCC");
  ConditionVector y = Eigen::VectorXd::Zero(3);
  REQUIRE_THROWS_AS(
      denoiser_loss_grad(params, noised, y, bigger, 10, nullptr),
      ShapeMismatchError);
}
