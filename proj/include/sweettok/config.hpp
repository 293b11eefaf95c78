#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sweettok {

// Shapes and architecture. Every tensor dimension in the model derives from
// these fields.
struct ModelConfig {
  std::size_t frames = 5;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch_t = 2;
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t spatial_blocks = 2;
  std::size_t temporal_blocks = 1;
  std::size_t l_spatial = 4;
  std::size_t l_temporal = 8;
  std::size_t d_latent = 16;
  std::size_t d_text = 32;
  std::size_t gcn_hidden = 64;
  double commitment_beta = 0.25;
  double init_std = 0.02;

  std::size_t grid_h() const { return height / patch_h; }
  std::size_t grid_w() const { return width / patch_w; }
  std::size_t grid_t() const { return (frames - 1) / patch_t; }
  std::size_t grid_area() const { return grid_h() * grid_w(); }
  std::size_t spatial_patch_dim() const { return patch_h * patch_w * 3; }
  std::size_t temporal_patch_dim() const { return patch_t * patch_h * patch_w * 3; }
  std::size_t token_count() const { return l_spatial + l_temporal; }

  // Throws ValidationError naming the offending field.
  void validate() const;
};

struct LossWeights {
  double l2 = 1.0;
  double vq = 1.0;
  double perceptual = 0.0;
  double adversarial = 0.0;
};

struct TrainConfig {
  double max_lr = 1e-4;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 10000;
  std::size_t total_steps = 1000000;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double ema_decay = 0.999;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  // Recorded for completeness; inert while the adversarial weight is zero.
  std::size_t discriminator_start = 20000;
  std::size_t checkpoint_every = 0;

  void validate() const;
};

// Synthetic moving-shape corpus parameters.
struct MotionSpec {
  std::vector<std::string> shapes{"square", "circle", "triangle", "diamond"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow", "white", "purple"};
  std::vector<std::string> backgrounds{"black", "gray"};
  double slow_speed = 1.0;  // pixels per frame
  double fast_speed = 2.0;
  double static_fraction = 0.0;
  std::size_t min_size = 6;
  std::size_t max_size = 12;

  void validate() const;
};

struct DataConfig {
  std::uint64_t seed = 0;
  std::size_t n_clips = 2;
  MotionSpec motion;
  std::size_t min_freq = 1;
  std::size_t window = 5;
  // Empty: build the codebook in memory from the synthetic captions with
  // pseudo embeddings. Otherwise a directory written by build-codebook.
  std::string codebook_dir;
  std::string clips_dir;

  void validate() const;
};

enum class Strategy { kDecoupledQuery, kCoupledQuery, kDownsample };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  Strategy strategy = Strategy::kDecoupledQuery;

  void validate() const;
};

// Built-in presets: "paper" carries the published hyperparameters, "desk" the
// toy dimensions used for tests and quick runs.
RunConfig preset(const std::string& name);

// Flat INI-style text: [model], [train], [data], [motion] sections with
// key = value lines. Keys absent from the text keep the base values.
RunConfig parse_config(const std::string& text, const RunConfig& base);
RunConfig load_config(const std::string& path, const RunConfig& base);
std::string to_ini(const RunConfig& cfg);

}  // namespace sweettok
