#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sweettok/autograd.hpp"

namespace sweettok::nn {

enum class Init { kZeros, kOnes, kTruncNormal, kNormal };

// Named, trainable parameters. Names are hierarchical ("spatial.enc.0.ff.up.w")
// and iteration order is lexicographic, which fixes the checkpoint layout.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0, double init_std = 0.02);

  ag::Var create(const std::string& name, std::size_t rows, std::size_t cols, Init init);
  ag::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, ag::Var>& params() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::map<std::string, ag::Var> params_;
  std::mt19937_64 rng_;
  double init_std_;
};

struct Linear {
  ag::Var weight;  // (in x out)
  ag::Var bias;    // (1 x out)

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
         Init weight_init = Init::kTruncNormal);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
};

struct LayerNorm {
  ag::Var gamma;
  ag::Var beta;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads);
  // query rows = groups * q_len and memory rows = groups * kv_len; each group
  // attends only within itself.
  ag::Var operator()(const ag::Var& q, const ag::Var& memory, std::size_t groups = 1) const;
};

struct FeedForward {
  Linear up;
  Linear down;

  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden);
  ag::Var operator()(const ag::Var& x) const { return down(ag::gelu(up(x))); }
};

enum class AttentionAxis { kSpatial, kTemporal };

// Rows of a token stream are ordered (tau, location). Spatial blocks attend
// across locations within a time step; temporal blocks attend across time at
// a fixed location.
struct StreamLayout {
  std::size_t steps = 1;
  std::size_t area = 1;
  AttentionAxis axis = AttentionAxis::kSpatial;
};

// Self-attention -> feed-forward -> cross-attention, pre-norm, each residual.
struct DqaeBlock {
  LayerNorm self_norm;
  MultiHeadAttention self_attention;
  LayerNorm ff_norm;
  FeedForward feed_forward;
  LayerNorm cross_norm;
  LayerNorm memory_norm;
  MultiHeadAttention cross_attention;

  DqaeBlock() = default;
  DqaeBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t mlp_ratio);

  // x + SA(LN x) followed by x + FF(LN x), with SA grouped per layout.
  ag::Var self_and_feed_forward(const ag::Var& x, const StreamLayout& layout) const;
  // stream + CA(LN stream, LN memory).
  ag::Var cross(const ag::Var& stream, const ag::Var& memory) const;
};

// Self-attention -> feed-forward, pre-norm, each residual; attention over
// the whole stream. Used by the unpartitioned baselines.
struct SelfBlock {
  LayerNorm self_norm;
  MultiHeadAttention self_attention;
  LayerNorm ff_norm;
  FeedForward feed_forward;

  SelfBlock() = default;
  SelfBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads, std::size_t mlp_ratio);
  ag::Var operator()(const ag::Var& x) const;
};

// Permutation taking (tau, location) row order to (location, tau).
std::vector<std::size_t> time_major_to_location_major(std::size_t steps, std::size_t area);

}  // namespace sweettok::nn
