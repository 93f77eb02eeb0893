//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter vectors with named blocks, shared by every network in the
// project. A ParamLayout maps block names to offsets; push_params mirrors
// the blocks onto an autodiff tape; the linear/mlp/layernorm helpers consume
// blocks registered by the matching add_* functions.
//

#ifndef MSDIFF_NN_PARAMS_HPP
#define MSDIFF_NN_PARAMS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "msdiff/nn/autodiff.hpp"
#include "msdiff/util/errors.hpp"
#include "msdiff/util/rng.hpp"

namespace msdiff {

/// Named offsets into a flat parameter vector. Registration order defines
/// the serialized layout.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
  };

  Eigen::Index add(const std::string &name, Eigen::Index rows,
                   Eigen::Index cols) {
    Entry e{name, rows, cols, total_};
    index_[name] = entries_.size();
    entries_.push_back(e);
    total_ += rows * cols;
    return e.offset;
  }

  const Entry &at(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ConfigError("ParamLayout: unknown parameter " + name);
    return entries_[it->second];
  }

  Eigen::Index total() const { return total_; }
  const std::vector<Entry> &entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  Eigen::Index total_ = 0;
};

namespace detail {

inline void add_linear(ParamLayout &layout, const std::string &name,
                       Eigen::Index in, Eigen::Index out) {
  layout.add(name + ".w", in, out);
  layout.add(name + ".b", 1, out);
}

inline void add_mlp(ParamLayout &layout, const std::string &name,
                    Eigen::Index in, Eigen::Index hidden, Eigen::Index out) {
  add_linear(layout, name + ".0", in, hidden);
  add_linear(layout, name + ".1", hidden, out);
}

inline void add_layernorm(ParamLayout &layout, const std::string &name,
                          Eigen::Index dim) {
  layout.add(name + ".ln_g", 1, dim);
  layout.add(name + ".ln_b", 1, dim);
}

}  // namespace detail

/// Glorot-uniform weights, zero biases, unit layer-norm scales, zero
/// layer-norm shifts. Deterministic given the random source.
inline void glorot_init(const ParamLayout &layout, Eigen::VectorXd &theta,
                        Rng &rng) {
  if (theta.size() != layout.total())
    throw ShapeMismatchError("glorot_init: theta size mismatch");
  for (const auto &e : layout.entries()) {
    Eigen::Map<Eigen::MatrixXd> block(theta.data() + e.offset, e.rows, e.cols);
    auto ends_with = [&](const char *suffix) {
      std::string s(suffix);
      return e.name.size() >= s.size() &&
             e.name.compare(e.name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".ln_g")) {
      block.setOnes();
    } else if (ends_with(".ln_b") || ends_with(".b")) {
      block.setZero();
    } else {
      double limit = std::sqrt(6.0 / static_cast<double>(e.rows + e.cols));
      for (Eigen::Index c = 0; c < e.cols; ++c)
        for (Eigen::Index r = 0; r < e.rows; ++r)
          block(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    }
  }
}

namespace detail {

struct TapeParams {
  std::map<std::string, ad::Var> vars;
  std::vector<ad::Var> ordered;  // aligned with layout.entries()

  ad::Var at(const std::string &name) const {
    auto it = vars.find(name);
    if (it == vars.end())
      throw ConfigError("TapeParams: unknown parameter " + name);
    return it->second;
  }
};

inline TapeParams push_params(ad::Tape &tape, const ParamLayout &layout,
                              const Eigen::VectorXd &theta) {
  TapeParams tp;
  for (const auto &e : layout.entries()) {
    Eigen::Map<const Eigen::MatrixXd> block(theta.data() + e.offset, e.rows,
                                            e.cols);
    ad::Var v = ad::leaf(tape, Eigen::MatrixXd(block));
    tp.vars[e.name] = v;
    tp.ordered.push_back(v);
  }
  return tp;
}

/// Copies the tape gradients of every parameter block back into a flat
/// vector laid out like theta. Call after tape.backward().
inline void collect_grads(ad::Tape &tape, const ParamLayout &layout,
                          const TapeParams &tp, Eigen::VectorXd &grad) {
  grad.resize(layout.total());
  const auto &entries = layout.entries();
  for (std::size_t idx = 0; idx < entries.size(); ++idx) {
    const auto &e = entries[idx];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + e.offset, e.rows, e.cols) =
        tape.grad(tp.ordered[idx]);
  }
}

inline ad::Var linear(const TapeParams &tp, const std::string &name,
                      ad::Var x) {
  return ad::add_broadcast_row(ad::matmul(x, tp.at(name + ".w")),
                               tp.at(name + ".b"));
}

inline ad::Var mlp(const TapeParams &tp, const std::string &name, ad::Var x) {
  return linear(tp, name + ".1", ad::silu(linear(tp, name + ".0", x)));
}

inline ad::Var layernorm(const TapeParams &tp, const std::string &name,
                         ad::Var x) {
  return ad::layernorm_rows(x, tp.at(name + ".ln_g"), tp.at(name + ".ln_b"));
}

}  // namespace detail

}  // namespace msdiff

#endif  // MSDIFF_NN_PARAMS_HPP
