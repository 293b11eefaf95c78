#include "sweettok/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sweettok/errors.hpp"

namespace sweettok {

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw ValidationError("lr_at: step " + std::to_string(step) + " exceeds total_steps " +
                          std::to_string(cfg.total_steps));
  }
  if (step < cfg.warmup_steps) {
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::size_t span = cfg.total_steps - cfg.warmup_steps;
  if (span == 0) return cfg.max_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span);
  return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// Optimizer and EMA

AdamW::AdamW(const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {}

void AdamW::step(nn::ParamStore& store, double lr, const ParamFilter& trainable) {
  ++updates_;
  const double t = static_cast<double>(updates_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (const auto& [name, param] : store.params()) {
    if (!param.has_grad()) continue;
    if (trainable && !trainable(name)) continue;
    ag::Var p = param;
    Tensor& w = p.mutable_value();
    const Tensor& g = param.grad();
    Tensor& m = m_[name];
    Tensor& v = v_[name];
    if (m.empty()) {
      m = Tensor(w.rows(), w.cols());
      v = Tensor(w.rows(), w.cols());
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
    }
  }
}

void AdamW::restore(std::uint64_t updates, TensorMap first, TensorMap second) {
  updates_ = updates;
  m_ = std::move(first);
  v_ = std::move(second);
}

TensorMap snapshot(const nn::ParamStore& store) {
  TensorMap out;
  for (const auto& [name, p] : store.params()) out.emplace(name, p.value());
  return out;
}

void load_params(nn::ParamStore& store, const TensorMap& values) {
  if (values.size() != store.params().size()) {
    throw ValidationError("checkpoint: holds " + std::to_string(values.size()) + " tensors, model expects " +
                          std::to_string(store.params().size()));
  }
  for (const auto& [name, p] : store.params()) {
    const auto it = values.find(name);
    if (it == values.end()) throw ValidationError("checkpoint: missing parameter " + name);
    if (!it->second.same_shape(p.value())) throw ValidationError("checkpoint: shape mismatch for " + name);
  }
  for (const auto& [name, p] : store.params()) {
    ag::Var v = p;
    v.mutable_value() = values.at(name);
  }
}

void ema_update(TensorMap& shadow, const TensorMap& live, double decay) {
  if (shadow.size() != live.size()) throw ValidationError("ema_update: parameter trees differ in size");
  for (auto& [name, s] : shadow) {
    const auto it = live.find(name);
    if (it == live.end() || !it->second.same_shape(s)) {
      throw ValidationError("ema_update: parameter trees differ at " + name);
    }
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + (1.0 - decay) * it->second[i];
  }
}

void ema_update(TensorMap& shadow, const nn::ParamStore& live, double decay) {
  ema_update(shadow, snapshot(live), decay);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

BatchLoss assemble(const std::vector<ag::Var>& l2s, const std::vector<ag::Var>& vqs,
                   const std::vector<ag::Var>& perceptual, const std::vector<ag::Var>& adversarial,
                   const LossWeights& w) {
  const auto mean = [](const std::vector<ag::Var>& xs) {
    return ag::sum_scalars(xs, std::vector<double>(xs.size(), 1.0 / static_cast<double>(xs.size())));
  };
  std::vector<ag::Var> terms{mean(l2s), mean(vqs)};
  std::vector<double> weights{w.l2, w.vq};
  BatchLoss out;
  out.terms.l2 = terms[0].item();
  out.terms.vq = terms[1].item();
  if (!perceptual.empty()) {
    terms.push_back(mean(perceptual));
    weights.push_back(w.perceptual);
    out.terms.perceptual = terms.back().item();
  }
  if (!adversarial.empty()) {
    terms.push_back(mean(adversarial));
    weights.push_back(w.adversarial);
    out.terms.adversarial = terms.back().item();
  }
  out.total = ag::sum_scalars(terms, weights);
  double total = 0.0;
  total += w.l2 * out.terms.l2;
  total += w.vq * out.terms.vq;
  if (!perceptual.empty()) total += w.perceptual * out.terms.perceptual;
  if (!adversarial.empty()) total += w.adversarial * out.terms.adversarial;
  out.terms.total = total;
  return out;
}

template <typename RunFn>
BatchLoss collect(const std::vector<VideoClip>& batch, const LossWeights& weights, const LossHooks& hooks,
                  RunFn&& run_one) {
  if (batch.empty()) throw ValidationError("batch: no clips");
  std::vector<ag::Var> l2s;
  std::vector<ag::Var> vqs;
  std::vector<ag::Var> perceptual;
  std::vector<ag::Var> adversarial;
  for (const VideoClip& clip : batch) {
    const ReconstructionPass pass = run_one(clip);
    l2s.push_back(ag::mse(pass.reconstruction, ag::constant(clip_to_tensor(clip))));
    vqs.push_back(pass.vq_loss);
    if (hooks.perceptual) perceptual.push_back(hooks.perceptual(clip, pass.reconstruction));
    if (hooks.adversarial) adversarial.push_back(hooks.adversarial(clip, pass.reconstruction));
  }
  return assemble(l2s, vqs, perceptual, adversarial, weights);
}

}  // namespace

BatchLoss batch_loss(const VideoTokenizer& model, const std::vector<VideoClip>& batch, const LossWeights& weights,
                     const LossHooks& hooks) {
  const ag::Var projected = model.project();
  return collect(batch, weights, hooks, [&](const VideoClip& clip) { return model.run(clip, projected); });
}

BatchLoss image_batch_loss(const DqaeModel& model, const std::vector<VideoClip>& frames, const LossWeights& weights,
                           const LossHooks& hooks) {
  const ag::Var projected = model.project();
  return collect(frames, weights, hooks, [&](const VideoClip& frame) { return model.run_image(frame, projected); });
}

std::string format_log_line(std::size_t step, double lr, const LossBreakdown& terms) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu\t%.9g\t%.9g\t%.9g\t%.9g", step, lr, terms.l2, terms.vq, terms.total);
  return buf;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(VideoTokenizer& model, const TrainConfig& cfg, TrainMode mode)
    : model_(model), cfg_(cfg), mode_(mode), optimizer_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  if (mode_ == TrainMode::kImage && !dynamic_cast<DqaeModel*>(&model_)) {
    throw ValidationError("image finetuning needs the decoupled model");
  }
  ema_ = snapshot(model_.params());
}

bool Trainer::trainable(const std::string& name) const {
  return mode_ == TrainMode::kVideo || !DqaeModel::is_temporal_parameter(name);
}

std::vector<std::size_t> Trainer::next_batch(std::size_t corpus_size) {
  if (order_.size() != corpus_size) {
    order_.clear();
    cursor_ = 0;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cfg_.batch_size; ++i) {
    if (cursor_ == order_.size()) {
      order_.resize(corpus_size);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

namespace {

std::string describe_failure(std::size_t step, double lr, const LossBreakdown& t, const nn::ParamStore& store) {
  std::ostringstream out;
  out << "non-finite loss at step " << step << " (lr=" << lr << " l2=" << t.l2 << " vq=" << t.vq
      << " perceptual=" << t.perceptual << " adversarial=" << t.adversarial << " total=" << t.total << ")";
  std::size_t shown = 0;
  for (const auto& [name, p] : store.params()) {
    bool bad_value = false;
    bool bad_grad = false;
    for (double v : p.value().values()) bad_value = bad_value || !std::isfinite(v);
    if (p.has_grad()) {
      for (double v : p.grad().values()) bad_grad = bad_grad || !std::isfinite(v);
    }
    if ((bad_value || bad_grad) && shown++ < 16) {
      out << "\n  " << name << (bad_value ? " value" : "") << (bad_grad ? " grad" : "") << " non-finite";
    }
  }
  return out.str();
}

}  // namespace

LossBreakdown Trainer::step(const std::vector<VideoClip>& corpus) {
  if (corpus.empty()) throw ValidationError("train: empty corpus");
  if (step_ >= cfg_.total_steps) throw ValidationError("train: already at total_steps");
  std::vector<VideoClip> batch;
  for (std::size_t i : next_batch(corpus.size())) {
    batch.push_back(mode_ == TrainMode::kImage && corpus[i].frames > 1 ? corpus[i].first_frame() : corpus[i]);
  }
  const double lr = lr_at(step_ + 1, cfg_);
  model_.params().zero_grad();
  const BatchLoss loss = mode_ == TrainMode::kImage
                             ? image_batch_loss(dynamic_cast<DqaeModel&>(model_), batch, cfg_.loss_weights, hooks_)
                             : batch_loss(model_, batch, cfg_.loss_weights, hooks_);
  if (!std::isfinite(loss.terms.total) || !std::isfinite(loss.total.item())) {
    throw NumericError(describe_failure(step_ + 1, lr, loss.terms, model_.params()));
  }
  ag::backward(loss.total);
  for (const auto& [name, p] : model_.params().params()) {
    if (!p.has_grad()) continue;
    for (double g : p.grad().values()) {
      if (!std::isfinite(g)) throw NumericError(describe_failure(step_ + 1, lr, loss.terms, model_.params()));
    }
  }
  const ParamFilter filter = [this](const std::string& name) { return trainable(name); };
  optimizer_.step(model_.params(), lr, filter);
  for (auto& [name, shadow] : ema_) {
    if (!trainable(name)) continue;
    const Tensor& live = model_.params().get(name).value();
    for (std::size_t i = 0; i < shadow.size(); ++i) {
      shadow[i] = cfg_.ema_decay * shadow[i] + (1.0 - cfg_.ema_decay) * live[i];
    }
  }
  model_.params().zero_grad();
  ++step_;
  return loss.terms;
}

void Trainer::run(const std::vector<VideoClip>& corpus,
                  const std::function<void(std::size_t, double, const LossBreakdown&)>& on_step) {
  while (step_ < cfg_.total_steps) {
    const LossBreakdown terms = step(corpus);
    if (on_step) on_step(step_, lr_at(step_, cfg_), terms);
  }
}

void Trainer::save_checkpoint(const std::string& path, const RunConfig& run) const {
  Checkpoint c;
  c.run = run;
  c.step = step_;
  std::ostringstream rng;
  rng << rng_;
  c.rng_state = rng.str();
  c.order = order_;
  c.cursor = cursor_;
  c.adam_updates = optimizer_.updates();
  c.params = snapshot(model_.params());
  c.adam_m = optimizer_.first_moments();
  c.adam_v = optimizer_.second_moments();
  c.ema = ema_;
  write_checkpoint(path, c);
}

void Trainer::load_checkpoint(const std::string& path) {
  Checkpoint c = read_checkpoint(path);
  load_params(model_.params(), c.params);
  if (c.ema.size() != ema_.size()) throw ValidationError("checkpoint: EMA shadow does not match the model");
  ema_ = std::move(c.ema);
  optimizer_.restore(c.adam_updates, std::move(c.adam_m), std::move(c.adam_v));
  std::istringstream rng(c.rng_state);
  rng >> rng_;
  if (!rng) throw ValidationError("checkpoint: unreadable RNG state");
  order_ = std::move(c.order);
  cursor_ = c.cursor;
  step_ = c.step;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "SWTC", u32 version, then length-prefixed fields, all
// little-endian. Tensors are stored as float64 so a resumed run continues
// bit-exactly.

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'W', 'T', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { raw(v); }
  void u64(std::uint64_t v) { raw(v); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    raw(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensors(const TensorMap& m) {
    u64(m.size());
    for (const auto& [name, t] : m) {
      str(name);
      u64(t.rows());
      u64(t.cols());
      for (double v : t.values()) f64(v);
    }
  }
  std::vector<char> bytes;

 private:
  template <typename T>
  void raw(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : bytes_(std::move(data)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  double f64() {
    const std::uint64_t bits = raw(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  TensorMap tensors() {
    TensorMap out;
    const std::uint64_t count = u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      std::string name = str();
      const std::uint64_t rows = u64();
      const std::uint64_t cols = u64();
      if (cols != 0 && rows > (bytes_.size() - pos_) / 8 / cols) throw IoError("checkpoint: truncated tensor " + name);
      Tensor t(rows, cols);
      for (double& v : t.values()) v = f64();
      out.emplace(std::move(name), std::move(t));
    }
    return out;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw IoError("checkpoint: trailing bytes");
  }
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw IoError("checkpoint: truncated file");
  }

 private:
  std::uint64_t raw(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  Writer w;
  w.bytes.insert(w.bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  w.u32(kCheckpointVersion);
  w.str(to_ini(c.run));
  w.u64(c.step);
  w.str(c.rng_state);
  w.u64(c.order.size());
  for (std::size_t i : c.order) w.u64(i);
  w.u64(c.cursor);
  w.u64(c.adam_updates);
  w.tensors(c.params);
  w.tensors(c.adam_m);
  w.tensors(c.adam_v);
  w.tensors(c.ema);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 8 || std::memcmp(data.data(), kCheckpointMagic, 4) != 0) {
    throw IoError(path + ": not a checkpoint file");
  }
  Reader r(std::vector<char>(data.begin() + 4, data.end()));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.run = parse_config(r.str(), RunConfig{});
  c.step = r.u64();
  c.rng_state = r.str();
  const std::uint64_t n = r.u64();
  r.need(n * 8);
  c.order.resize(n);
  for (auto& i : c.order) i = r.u64();
  c.cursor = r.u64();
  c.adam_updates = r.u64();
  c.params = r.tensors();
  c.adam_m = r.tensors();
  c.adam_v = r.tensors();
  c.ema = r.tensors();
  r.expect_end();
  return c;
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

std::vector<nn::SelfBlock> make_self_blocks(nn::ParamStore& store, const std::string& prefix, std::size_t count,
                                            const ModelConfig& c) {
  std::vector<nn::SelfBlock> blocks;
  for (std::size_t i = 0; i < count; ++i) {
    blocks.emplace_back(store, prefix + "." + std::to_string(i), c.d_model, c.n_heads, c.mlp_ratio);
  }
  return blocks;
}

void check_clip_shape(const VideoClip& clip, const ModelConfig& c) {
  if (clip.frames != c.frames || clip.height != c.height || clip.width != c.width) {
    throw ValidationError("model: clip shape does not match the config");
  }
}

// Splits decoded patch rows into the first-frame grid and the tube grid and
// maps both to pixels.
ag::Var decode_pixels(const ag::Var& rows, const ModelConfig& c, const PatchKernel& kernel) {
  const std::size_t area = c.grid_area();
  PatchGrid first{ag::slice_rows(rows, 0, area), 1, c.grid_h(), c.grid_w(), GridKind::kSpatial};
  PatchGrid rest{ag::slice_rows(rows, area, rows.rows()), c.grid_t(), c.grid_h(), c.grid_w(), GridKind::kTemporal};
  return ag::clamp(ag::concat_rows({unpatchify_spatial(first, kernel), unpatchify_temporal(rest, kernel)}), -0.5,
                   0.5);
}

ag::Var embed_clip(const VideoClip& clip, const PatchKernel& kernel) {
  const auto [first, rest] = split_first_frame(clip);
  return ag::concat_rows({patchify_spatial(first, kernel).data, patchify_temporal(rest, kernel).data});
}

TokenSequence split_tokens(const std::string& id, const std::vector<std::size_t>& indices, std::size_t l_spatial) {
  TokenSequence t;
  t.clip_id = id;
  t.spatial.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(l_spatial));
  t.temporal.assign(indices.begin() + static_cast<std::ptrdiff_t>(l_spatial), indices.end());
  return t;
}

}  // namespace

CoupledQueryModel::CoupledQueryModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets,
                                     std::uint64_t seed)
    : config_(config), assets_(std::move(assets)), store_(seed, config.init_std) {
  config_.validate();
  if (!assets_) throw ValidationError("model: codebook assets are required");
  const auto& c = config_;
  const std::size_t patches = c.grid_area() * (1 + c.grid_t());
  const std::size_t depth = c.spatial_blocks + c.temporal_blocks;
  kernel_ = PatchKernel(store_, "patch", c);
  queries_ = store_.create("query.tokens", c.token_count(), c.d_model, nn::Init::kNormal);
  patch_placeholders_ = store_.create("decoder.placeholders", patches, c.d_model, nn::Init::kNormal);
  encoder_ = make_self_blocks(store_, "encoder", depth, c);
  decoder_ = make_self_blocks(store_, "decoder", depth, c);
  encoder_norm_ = nn::LayerNorm(store_, "encoder.norm", c.d_model);
  decoder_norm_ = nn::LayerNorm(store_, "decoder.norm", c.d_model);
  to_latent_ = nn::Linear(store_, "bridge.in", c.d_model, c.d_latent);
  from_latent_ = nn::Linear(store_, "bridge.out", c.d_latent, c.d_model);
  head_ = nn::Linear(store_, "decoder.head", c.d_model, c.d_model);
  projector_ = GcnProjector(store_, "gcn", c.d_text, c.gcn_hidden, c.d_latent);
}

ag::Var CoupledQueryModel::project() const {
  return project_codebook(assets_->codebook, assets_->adjacency, projector_);
}

ReconstructionPass CoupledQueryModel::run(const VideoClip& clip, const ag::Var& projected) const {
  check_clip_shape(clip, config_);
  const ag::Var e = embed_clip(clip, kernel_);
  const std::size_t patches = e.rows();
  ag::Var x = ag::concat_rows({e, queries_});
  for (const auto& block : encoder_) x = block(x);
  const ag::Var z = to_latent_(encoder_norm_(ag::slice_rows(x, patches, x.rows())));
  const QuantizedTokens q = quantize_span(z, projected, 0, assets_->codebook.size(), TokenKind::kSpatial);
  ag::Var y = ag::concat_rows({patch_placeholders_, from_latent_(q.straight_through)});
  for (const auto& block : decoder_) y = block(y);
  const ag::Var rows = head_(decoder_norm_(ag::slice_rows(y, 0, patches)));
  ReconstructionPass pass;
  pass.reconstruction = decode_pixels(rows, config_, kernel_);
  pass.vq_loss = vq_loss_single(z, q.embeddings, config_.commitment_beta);
  pass.tokens = split_tokens(clip.clip_id, q.indices, config_.l_spatial);
  return pass;
}

kernels::Csr linear_interpolation(std::size_t m, std::size_t n) {
  if (m == 0 || n == 0) throw ValidationError("interpolation: empty sequence");
  kernels::Csr out;
  out.n_rows = m;
  out.n_cols = n;
  out.row_ptr.push_back(0);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = m == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(m - 1);
    const std::size_t lo = std::min(n - 1, static_cast<std::size_t>(std::floor(pos)));
    const double frac = pos - static_cast<double>(lo);
    out.col.push_back(lo);
    out.val.push_back(1.0 - frac);
    if (frac > 0.0 && lo + 1 < n) {
      out.col.push_back(lo + 1);
      out.val.push_back(frac);
    }
    out.row_ptr.push_back(out.col.size());
  }
  return out;
}

DownsampleModel::DownsampleModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets,
                                 std::uint64_t seed)
    : config_(config), assets_(std::move(assets)), store_(seed, config.init_std) {
  config_.validate();
  if (!assets_) throw ValidationError("model: codebook assets are required");
  const auto& c = config_;
  const std::size_t patches = c.grid_area() * (1 + c.grid_t());
  const std::size_t depth = c.spatial_blocks + c.temporal_blocks;
  kernel_ = PatchKernel(store_, "patch", c);
  down_ = std::make_shared<const kernels::Csr>(linear_interpolation(c.token_count(), patches));
  up_ = std::make_shared<const kernels::Csr>(linear_interpolation(patches, c.token_count()));
  decoder_position_ = store_.create("decoder.position", patches, c.d_model, nn::Init::kNormal);
  encoder_ = make_self_blocks(store_, "encoder", depth, c);
  decoder_ = make_self_blocks(store_, "decoder", depth, c);
  encoder_norm_ = nn::LayerNorm(store_, "encoder.norm", c.d_model);
  decoder_norm_ = nn::LayerNorm(store_, "decoder.norm", c.d_model);
  to_latent_ = nn::Linear(store_, "bridge.in", c.d_model, c.d_latent);
  from_latent_ = nn::Linear(store_, "bridge.out", c.d_latent, c.d_model);
  head_ = nn::Linear(store_, "decoder.head", c.d_model, c.d_model);
  projector_ = GcnProjector(store_, "gcn", c.d_text, c.gcn_hidden, c.d_latent);
}

ag::Var DownsampleModel::project() const { return project_codebook(assets_->codebook, assets_->adjacency, projector_); }

ReconstructionPass DownsampleModel::run(const VideoClip& clip, const ag::Var& projected) const {
  check_clip_shape(clip, config_);
  ag::Var x = embed_clip(clip, kernel_);
  for (const auto& block : encoder_) x = block(x);
  const ag::Var z = to_latent_(ag::spmm(down_, encoder_norm_(x)));
  const QuantizedTokens q = quantize_span(z, projected, 0, assets_->codebook.size(), TokenKind::kSpatial);
  ag::Var y = ag::add(ag::spmm(up_, from_latent_(q.straight_through)), decoder_position_);
  for (const auto& block : decoder_) y = block(y);
  ReconstructionPass pass;
  pass.reconstruction = decode_pixels(head_(decoder_norm_(y)), config_, kernel_);
  pass.vq_loss = vq_loss_single(z, q.embeddings, config_.commitment_beta);
  pass.tokens = split_tokens(clip.clip_id, q.indices, config_.l_spatial);
  return pass;
}

std::unique_ptr<VideoTokenizer> make_tokenizer(Strategy strategy, const ModelConfig& config,
                                               std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed) {
  switch (strategy) {
    case Strategy::kDecoupledQuery:
      return std::make_unique<DqaeModel>(config, std::move(assets), seed);
    case Strategy::kCoupledQuery:
      return std::make_unique<CoupledQueryModel>(config, std::move(assets), seed);
    case Strategy::kDownsample:
      return std::make_unique<DownsampleModel>(config, std::move(assets), seed);
  }
  throw ValidationError("unknown strategy");
}

// ---------------------------------------------------------------------------
// Evaluation and ablation

MetricsReport evaluate(const VideoTokenizer& model, const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw ValidationError("evaluate: no clips");
  MetricsReport mean;
  mean.l2 = 0.0;
  mean.ssim = 0.0;
  const ag::Var projected = [&] {
    ag::NoGradGuard guard;
    return model.project();
  }();
  for (const VideoClip& clip : clips) {
    ag::NoGradGuard guard;
    const ReconstructionPass pass = model.run(clip, projected);
    const VideoClip rec = tensor_to_clip(pass.reconstruction.value(), clip.frames, clip.height, clip.width);
    const MetricsReport r = compute_metrics(clip, rec);
    mean.l2 += r.l2 / static_cast<double>(clips.size());
    mean.ssim += r.ssim / static_cast<double>(clips.size());
  }
  mean.psnr = mean.l2 > 0.0 ? -10.0 * std::log10(mean.l2) : INFINITY;
  return mean;
}

std::vector<AblationRow> run_ablation(const std::vector<Strategy>& strategies, const std::vector<VideoClip>& corpus,
                                      std::shared_ptr<const CodebookAssets> assets, const RunConfig& cfg,
                                      std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (Strategy s : strategies) {
    auto model = make_tokenizer(s, cfg.model, assets, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    AblationRow row;
    row.strategy = s;
    row.seed = seed;
    row.tokens = cfg.model.token_count();
    row.steps = tc.total_steps;
    row.initial_l2 = evaluate(*model, corpus).l2;
    Trainer trainer(*model, tc);
    trainer.run(corpus);
    const MetricsReport r = evaluate(*model, corpus);
    row.final_l2 = r.l2;
    row.psnr = r.psnr;
    row.ssim = r.ssim;
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "strategy\tseed\ttokens\tsteps\tinitial_l2\tfinal_l2\tpsnr\tssim\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%llu\t%zu\t%zu\t%.9g\t%.9g\t%.6g\t%.6g\n", to_string(r.strategy).c_str(),
                  static_cast<unsigned long long>(r.seed), r.tokens, r.steps, r.initial_l2, r.final_l2, r.psnr,
                  r.ssim);
    out << buf;
  }
  return out.str();
}

}  // namespace sweettok
