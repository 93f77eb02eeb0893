//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints: model parameters in full double precision plus the
// optimizer moments, the step counter, the noise-model constants baked at
// training time, and the normalized config text that produced the run.
// Fixed little-endian encoding; resuming restores training bit-exactly.
//

#ifndef MSDIFF_CLI_CHECKPOINT_HPP
#define MSDIFF_CLI_CHECKPOINT_HPP

#include <Eigen/Dense>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msdiff/nn/optimizer.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

enum class CheckpointKind : std::uint32_t {
  Denoiser = 1,
  Encoder = 2,
  Joint = 3,
};

inline const char *checkpoint_kind_name(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::Denoiser: return "denoiser";
    case CheckpointKind::Encoder: return "encoder";
    case CheckpointKind::Joint: return "joint";
  }
  return "?";
}

struct ParamGroup {
  std::uint32_t tag = 0;  // 1 denoiser, 2 encoder
  Eigen::VectorXd theta;
  AdamWState adam;
};

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Denoiser;
  std::uint64_t step = 0;      // completed optimizer steps
  std::string config_text;     // RunConfig::normalized() of the training run
  int diffusion_steps = 0;     // 0 for encoder-only checkpoints
  Eigen::VectorXd prior_m;     // empty for encoder-only checkpoints
  std::vector<ParamGroup> groups;

  const ParamGroup &group(std::uint32_t tag) const {
    for (const ParamGroup &g : groups)
      if (g.tag == tag) return g;
    throw DataError("checkpoint has no parameter group with tag " +
                    std::to_string(tag));
  }
};

namespace detail {

inline constexpr std::uint32_t kCheckpointMagic = 0x4644534d;  // "MSDF"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string &out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string &out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void put_vec(std::string &out, const Eigen::VectorXd &v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

class ByteReader {
 public:
  ByteReader(const std::string &data, const std::string &what)
      : data_(data), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  Eigen::VectorXd vec() {
    std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / 8)
      throw DataError(what_ + ": truncated vector");
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
    return v;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) throw DataError(what_ + ": truncated");
  }

  const std::string &data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Atomic write: serialize to <path>.tmp, then rename over the target.
inline void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
  std::string out;
  detail::put_u32(out, detail::kCheckpointMagic);
  detail::put_u32(out, detail::kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.kind));
  detail::put_u64(out, ckpt.step);
  detail::put_u64(out, ckpt.config_text.size());
  out += ckpt.config_text;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.diffusion_steps));
  detail::put_vec(out, ckpt.prior_m);
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.groups.size()));
  for (const ParamGroup &g : ckpt.groups) {
    detail::put_u32(out, g.tag);
    detail::put_vec(out, g.theta);
    detail::put_vec(out, g.adam.m);
    detail::put_vec(out, g.adam.v);
    detail::put_u64(out, static_cast<std::uint64_t>(g.adam.step));
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  detail::ByteReader r(data, "checkpoint " + path);
  if (r.u32() != detail::kCheckpointMagic)
    throw DataError(path + ": not a checkpoint file");
  std::uint32_t version = r.u32();
  if (version != detail::kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  Checkpoint ckpt;
  std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 3)
    throw DataError(path + ": bad checkpoint kind " + std::to_string(kind));
  ckpt.kind = static_cast<CheckpointKind>(kind);
  ckpt.step = r.u64();
  std::uint64_t cfg_len = r.u64();
  ckpt.config_text = r.bytes(static_cast<std::size_t>(cfg_len));
  ckpt.diffusion_steps = static_cast<int>(r.u32());
  ckpt.prior_m = r.vec();
  std::uint32_t n_groups = r.u32();
  for (std::uint32_t i = 0; i < n_groups; ++i) {
    ParamGroup g;
    g.tag = r.u32();
    g.theta = r.vec();
    g.adam.m = r.vec();
    g.adam.v = r.vec();
    g.adam.step = static_cast<std::int64_t>(r.u64());
    if (g.adam.m.size() != g.theta.size() ||
        g.adam.v.size() != g.theta.size())
      throw DataError(path + ": optimizer state size mismatch");
    ckpt.groups.push_back(std::move(g));
  }
  if (!r.done()) throw DataError(path + ": trailing bytes after checkpoint");
  return ckpt;
}

inline void require_checkpoint_kind(const Checkpoint &ckpt,
                                    CheckpointKind want,
                                    const std::string &path) {
  if (ckpt.kind != want)
    throw DataError(path + ": expected a " +
                    std::string(checkpoint_kind_name(want)) +
                    " checkpoint, found " + checkpoint_kind_name(ckpt.kind));
}

}  // namespace msdiff

#endif  // MSDIFF_CLI_CHECKPOINT_HPP
