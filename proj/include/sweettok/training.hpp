#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sweettok/config.hpp"
#include "sweettok/dqae.hpp"
#include "sweettok/mlc.hpp"
#include "sweettok/nn.hpp"

namespace sweettok {

// Linear warmup from 0 to max_lr, then cosine decay to min_lr at total_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

using ParamFilter = std::function<bool(const std::string&)>;
using TensorMap = std::map<std::string, Tensor>;

// Adaptive moments with decoupled weight decay. Parameters without an
// accumulated gradient, or rejected by the filter, are left untouched.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg);

  void step(nn::ParamStore& store, double lr, const ParamFilter& trainable = {});

  std::uint64_t updates() const { return updates_; }
  const TensorMap& first_moments() const { return m_; }
  const TensorMap& second_moments() const { return v_; }
  void restore(std::uint64_t updates, TensorMap first, TensorMap second);

 private:
  double beta1_;
  double beta2_;
  double eps_;
  double weight_decay_;
  std::uint64_t updates_ = 0;
  TensorMap m_;
  TensorMap v_;
};

TensorMap snapshot(const nn::ParamStore& store);
// Copies tensors into the store; names and shapes must match exactly.
void load_params(nn::ParamStore& store, const TensorMap& values);

// shadow <- decay * shadow + (1 - decay) * live, elementwise.
void ema_update(TensorMap& shadow, const TensorMap& live, double decay);
void ema_update(TensorMap& shadow, const nn::ParamStore& live, double decay);

// Extra reconstruction terms (perceptual, adversarial). An empty hook
// contributes zero.
using LossHook = std::function<ag::Var(const VideoClip& original, const ag::Var& reconstruction)>;

struct LossHooks {
  LossHook perceptual;
  LossHook adversarial;
};

// Batch means of each term and the weighted total the update used.
struct LossBreakdown {
  double l2 = 0.0;
  double vq = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
};

// Weighted batch loss as a graph plus its scalar breakdown.
struct BatchLoss {
  ag::Var total;
  LossBreakdown terms;
};

BatchLoss batch_loss(const VideoTokenizer& model, const std::vector<VideoClip>& batch, const LossWeights& weights,
                     const LossHooks& hooks = {});
BatchLoss image_batch_loss(const DqaeModel& model, const std::vector<VideoClip>& frames, const LossWeights& weights,
                           const LossHooks& hooks = {});

// step<TAB>lr<TAB>l2<TAB>vq<TAB>total
std::string format_log_line(std::size_t step, double lr, const LossBreakdown& terms);

enum class TrainMode { kVideo, kImage };

// Owns the optimizer, EMA shadow, batch order and step counter of one run.
class Trainer {
 public:
  Trainer(VideoTokenizer& model, const TrainConfig& cfg, TrainMode mode = TrainMode::kVideo);

  // One optimizer update on the next batch drawn from the corpus. Returns
  // the loss evaluated before the update.
  LossBreakdown step(const std::vector<VideoClip>& corpus);
  // Runs until total_steps, calling `on_step` after every update.
  void run(const std::vector<VideoClip>& corpus,
           const std::function<void(std::size_t step, double lr, const LossBreakdown&)>& on_step = {});

  std::size_t current_step() const { return step_; }
  const TensorMap& ema() const { return ema_; }
  const TrainConfig& config() const { return cfg_; }
  LossHooks& hooks() { return hooks_; }
  TrainMode mode() const { return mode_; }
  bool trainable(const std::string& name) const;

  void save_checkpoint(const std::string& path, const RunConfig& run) const;
  // Restores weights, optimizer, EMA, batch order and step from a file
  // written by save_checkpoint.
  void load_checkpoint(const std::string& path);

 private:
  std::vector<std::size_t> next_batch(std::size_t corpus_size);

  VideoTokenizer& model_;
  TrainConfig cfg_;
  TrainMode mode_;
  AdamW optimizer_;
  TensorMap ema_;
  LossHooks hooks_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t step_ = 0;
};

// Checkpoint contents, readable without a model.
struct Checkpoint {
  RunConfig run;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<std::size_t> order;
  std::uint64_t cursor = 0;
  std::uint64_t adam_updates = 0;
  TensorMap params;
  TensorMap adam_m;
  TensorMap adam_v;
  TensorMap ema;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Baseline compression strategies sharing the tokenizer contract.

// Patch embeddings E of the whole clip are concatenated with L learnable
// queries Q and encoded jointly; the query outputs Z_Q are quantized against
// the whole codebook and decoded from learnable patch placeholders E_Q
// concatenated with the quantized queries.
class CoupledQueryModel : public VideoTokenizer {
 public:
  CoupledQueryModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed);

  const ModelConfig& config() const override { return config_; }
  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  const CodebookAssets& assets() const override { return *assets_; }
  ag::Var project() const override;
  ReconstructionPass run(const VideoClip& clip, const ag::Var& projected) const override;
  using VideoTokenizer::run;

 private:
  ModelConfig config_;
  std::shared_ptr<const CodebookAssets> assets_;
  nn::ParamStore store_;
  PatchKernel kernel_;
  ag::Var queries_;
  ag::Var patch_placeholders_;
  std::vector<nn::SelfBlock> encoder_;
  std::vector<nn::SelfBlock> decoder_;
  nn::LayerNorm encoder_norm_;
  nn::LayerNorm decoder_norm_;
  nn::Linear to_latent_;
  nn::Linear from_latent_;
  nn::Linear head_;
  GcnProjector projector_;
};

// The flattened patch sequence is encoded, linearly interpolated down to L
// tokens, quantized against the whole codebook, interpolated back up and
// decoded.
class DownsampleModel : public VideoTokenizer {
 public:
  DownsampleModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed);

  const ModelConfig& config() const override { return config_; }
  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  const CodebookAssets& assets() const override { return *assets_; }
  ag::Var project() const override;
  ReconstructionPass run(const VideoClip& clip, const ag::Var& projected) const override;
  using VideoTokenizer::run;

 private:
  ModelConfig config_;
  std::shared_ptr<const CodebookAssets> assets_;
  nn::ParamStore store_;
  PatchKernel kernel_;
  std::shared_ptr<const kernels::Csr> down_;
  std::shared_ptr<const kernels::Csr> up_;
  ag::Var decoder_position_;
  std::vector<nn::SelfBlock> encoder_;
  std::vector<nn::SelfBlock> decoder_;
  nn::LayerNorm encoder_norm_;
  nn::LayerNorm decoder_norm_;
  nn::Linear to_latent_;
  nn::Linear from_latent_;
  nn::Linear head_;
  GcnProjector projector_;
};

// Row i samples position i * (n - 1) / (m - 1) of an n-long sequence with
// linear weights (m x n).
kernels::Csr linear_interpolation(std::size_t m, std::size_t n);

std::unique_ptr<VideoTokenizer> make_tokenizer(Strategy strategy, const ModelConfig& config,
                                               std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  Strategy strategy = Strategy::kDecoupledQuery;
  std::uint64_t seed = 0;
  std::size_t tokens = 0;
  std::size_t steps = 0;
  double initial_l2 = 0.0;
  double final_l2 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

// Trains each strategy from the same seed on the same clips and evaluates
// reconstruction on those clips with the live weights.
std::vector<AblationRow> run_ablation(const std::vector<Strategy>& strategies, const std::vector<VideoClip>& corpus,
                                      std::shared_ptr<const CodebookAssets> assets, const RunConfig& cfg,
                                      std::uint64_t seed);
std::string format_ablation(const std::vector<AblationRow>& rows);

// Mean metrics of reconstruct() over a set of clips.
MetricsReport evaluate(const VideoTokenizer& model, const std::vector<VideoClip>& clips);

}  // namespace sweettok
