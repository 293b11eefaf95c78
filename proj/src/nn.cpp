#include "sweettok/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sweettok::nn {

ParamStore::ParamStore(std::uint64_t seed, double init_std) : rng_(seed), init_std_(init_std) {}

ag::Var ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols, Init init) {
  if (params_.count(name)) throw std::logic_error("duplicate parameter " + name);
  Tensor t(rows, cols);
  std::normal_distribution<double> normal(0.0, init_std_);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      t.fill(1.0);
      break;
    case Init::kNormal:
      for (double& v : t.values()) v = normal(rng_);
      break;
    case Init::kTruncNormal:
      for (double& v : t.values()) {
        do {
          v = normal(rng_);
        } while (std::abs(v) > 2.0 * init_std_);
      }
      break;
  }
  ag::Var var(std::move(t), true);
  params_.emplace(name, var);
  return var;
}

ag::Var ParamStore::get(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += v.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params_) {
    ag::Var copy = v;
    copy.zero_grad();
  }
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Init weight_init)
    : weight(store.create(name + ".w", in, out, weight_init)), bias(store.create(name + ".b", 1, out, Init::kZeros)) {}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim)
    : gamma(store.create(name + ".gamma", 1, dim, Init::kOnes)), beta(store.create(name + ".beta", 1, dim, Init::kZeros)) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim, std::size_t h)
    : query(store, name + ".q", dim, dim),
      key(store, name + ".k", dim, dim),
      value(store, name + ".v", dim, dim),
      out(store, name + ".o", dim, dim),
      heads(h) {
  if (dim % h != 0) throw std::invalid_argument("attention: heads must divide the model width");
}

ag::Var MultiHeadAttention::operator()(const ag::Var& q, const ag::Var& memory, std::size_t groups) const {
  if (q.rows() % groups != 0 || memory.rows() % groups != 0) {
    throw std::invalid_argument("attention: rows not divisible by group count");
  }
  kernels::AttentionShape shape;
  shape.groups = groups;
  shape.q_len = q.rows() / groups;
  shape.kv_len = memory.rows() / groups;
  shape.heads = heads;
  shape.head_dim = q.cols() / heads;
  return out(ag::attention(query(q), key(memory), value(memory), shape));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t hidden)
    : up(store, name + ".up", dim, hidden), down(store, name + ".down", hidden, dim) {}

DqaeBlock::DqaeBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                     std::size_t mlp_ratio)
    : self_norm(store, name + ".self_norm", dim),
      self_attention(store, name + ".self_attn", dim, heads),
      ff_norm(store, name + ".ff_norm", dim),
      feed_forward(store, name + ".ff", dim, dim * mlp_ratio),
      cross_norm(store, name + ".cross_norm", dim),
      memory_norm(store, name + ".memory_norm", dim),
      cross_attention(store, name + ".cross_attn", dim, heads) {}

std::vector<std::size_t> time_major_to_location_major(std::size_t steps, std::size_t area) {
  std::vector<std::size_t> perm(steps * area);
  for (std::size_t loc = 0; loc < area; ++loc) {
    for (std::size_t tau = 0; tau < steps; ++tau) perm[loc * steps + tau] = tau * area + loc;
  }
  return perm;
}

ag::Var DqaeBlock::self_and_feed_forward(const ag::Var& x, const StreamLayout& layout) const {
  if (x.rows() != layout.steps * layout.area) throw std::invalid_argument("block: stream/layout mismatch");
  const ag::Var normed = self_norm(x);
  ag::Var attended;
  if (layout.axis == AttentionAxis::kSpatial) {
    attended = self_attention(normed, normed, layout.steps);
  } else {
    const auto perm = time_major_to_location_major(layout.steps, layout.area);
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    const ag::Var by_location = ag::gather_rows(normed, perm);
    attended = ag::gather_rows(self_attention(by_location, by_location, layout.area), inverse);
  }
  const ag::Var h = ag::add(x, attended);
  return ag::add(h, feed_forward(ff_norm(h)));
}

ag::Var DqaeBlock::cross(const ag::Var& stream, const ag::Var& memory) const {
  return ag::add(stream, cross_attention(cross_norm(stream), memory_norm(memory)));
}

SelfBlock::SelfBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                     std::size_t mlp_ratio)
    : self_norm(store, name + ".self_norm", dim),
      self_attention(store, name + ".self_attn", dim, heads),
      ff_norm(store, name + ".ff_norm", dim),
      feed_forward(store, name + ".ff", dim, dim * mlp_ratio) {}

ag::Var SelfBlock::operator()(const ag::Var& x) const {
  const ag::Var normed = self_norm(x);
  const ag::Var h = ag::add(x, self_attention(normed, normed));
  return ag::add(h, feed_forward(ff_norm(h)));
}

}  // namespace sweettok::nn
