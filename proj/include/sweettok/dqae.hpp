#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sweettok/autograd.hpp"
#include "sweettok/config.hpp"
#include "sweettok/mlc.hpp"
#include "sweettok/nn.hpp"
#include "sweettok/patchify.hpp"
#include "sweettok/videodata.hpp"

// Decoupled query autoencoder: the first frame is compressed into L_spatial
// query tokens, the frame-wise residual of the remaining tubes into
// L_temporal query tokens, each quantized against its own language sub-book.

namespace sweettok {

struct LatentTokens {
  ag::Var values;  // L x d_latent
  TokenKind kind = TokenKind::kSpatial;
  bool quantized = false;
};

struct QueryBank {
  ag::Var spatial;        // L_spatial x d_model
  ag::Var temporal;       // L_temporal x d_model
  ag::Var spatial_patch;  // (h*w) x d_model, decoder queries for the first frame

  QueryBank() = default;
  QueryBank(nn::ParamStore& store, const ModelConfig& config);
};

// Token indices relative to each sub-book, the export contract.
struct TokenSequence {
  std::string clip_id;
  std::vector<std::size_t> spatial;
  std::vector<std::size_t> temporal;
  bool operator==(const TokenSequence&) const = default;
};

// clip_id<TAB>S:<indices><TAB>T:<indices>, one record per line.
std::string format_tokens(const std::vector<TokenSequence>& records);
std::vector<TokenSequence> parse_tokens(const std::string& text);

// Differentiable outcome of one clip pass, shared by every compression
// strategy so the trainer can treat them alike.
struct ReconstructionPass {
  ag::Var reconstruction;  // (T*H*W) x 3, clamped to [-0.5, 0.5]
  ag::Var vq_loss;         // 1x1
  TokenSequence tokens;
};

class VideoTokenizer {
 public:
  virtual ~VideoTokenizer() = default;

  virtual const ModelConfig& config() const = 0;
  virtual nn::ParamStore& params() = 0;
  virtual const nn::ParamStore& params() const = 0;
  virtual const CodebookAssets& assets() const = 0;

  // Projected codebook (L_c x d_latent) under the current projector weights.
  virtual ag::Var project() const = 0;
  virtual ReconstructionPass run(const VideoClip& clip, const ag::Var& projected) const = 0;

  // Encoder and quantizer only; the default runs the full pass.
  virtual TokenSequence tokenize(const VideoClip& clip, const ag::Var& projected) const;

  ReconstructionPass run(const VideoClip& clip) const { return run(clip, project()); }
  TokenSequence tokenize(const VideoClip& clip) const;
  VideoClip reconstruct(const VideoClip& clip) const;
};

// Residual of content embeddings: delta[tau, loc] = v_s[loc] - v_t[tau, loc].
PatchGrid compute_residual(const PatchGrid& v_s, const PatchGrid& v_t);

// Repeats a spatial grid `steps` times along the temporal axis.
PatchGrid tile_spatial(const PatchGrid& v_s, std::size_t steps);

class DqaeModel : public VideoTokenizer {
 public:
  DqaeModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed);

  const ModelConfig& config() const override { return config_; }
  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  const CodebookAssets& assets() const override { return *assets_; }

  ag::Var project() const override;
  ReconstructionPass run(const VideoClip& clip, const ag::Var& projected) const override;
  using VideoTokenizer::run;
  TokenSequence tokenize(const VideoClip& clip, const ag::Var& projected) const override;
  using VideoTokenizer::tokenize;

  LatentTokens encode_spatial(const PatchGrid& v_s) const;
  PatchGrid decode_spatial(const LatentTokens& zq_s) const;
  LatentTokens encode_temporal(const PatchGrid& delta_v) const;
  // When tiled_input is non-null it receives the decoder input stream before
  // the time embedding and the first block.
  PatchGrid decode_temporal(const PatchGrid& v_s_tilde, const LatentTokens& zq_t,
                            Tensor* tiled_input = nullptr) const;
  // Full clip in pixel space: frame 1 from the spatial grid, frames 2..T from
  // the temporal grid, clamped to [-0.5, 0.5].
  ag::Var pixel_decode(const PatchGrid& v_s_tilde, const PatchGrid& v_tilde) const;

  // Every intermediate of a video pass, for inspection and tests.
  struct Trace {
    PatchGrid v_s;
    PatchGrid delta_v;
    LatentTokens z_s;
    LatentTokens z_t;
    QuantizedTokens q_s;
    QuantizedTokens q_t;
    PatchGrid v_s_tilde;
    PatchGrid v_tilde;
    VqLoss vq;
    ag::Var reconstruction;
  };
  Trace trace(const VideoClip& clip, const ag::Var& projected) const;

  // Decodes a clip from token indices alone.
  VideoClip decode_tokens(const TokenSequence& tokens, const ag::Var& projected) const;

  // Image mode: only the spatial branch and the spatial pixel decoder run.
  ReconstructionPass run_image(const VideoClip& frame, const ag::Var& projected) const;
  std::vector<std::size_t> encode_image(const VideoClip& frame, const ag::Var& projected) const;
  VideoClip decode_image(const std::vector<std::size_t>& spatial_tokens, const ag::Var& projected) const;

  // Parameters belonging to the temporal branch (encoder, decoder, queries,
  // tube kernel, tube unprojection, latent bridges).
  static bool is_temporal_parameter(const std::string& name);

  const PatchKernel& kernel() const { return kernel_; }
  const QueryBank& queries() const { return queries_; }
  const GcnProjector& projector() const { return projector_; }
  nn::Linear& spatial_decoder_head() { return spatial_head_; }

 private:
  PatchGrid run_spatial_decoder(const ag::Var& memory) const;
  void check_clip(const VideoClip& clip) const;
  void encode_into(const VideoClip& clip, const ag::Var& projected, Trace& tr) const;

  ModelConfig config_;
  std::shared_ptr<const CodebookAssets> assets_;
  nn::ParamStore store_;
  PatchKernel kernel_;
  QueryBank queries_;
  std::vector<nn::DqaeBlock> spatial_encoder_;
  std::vector<nn::DqaeBlock> spatial_decoder_;
  std::vector<nn::DqaeBlock> temporal_encoder_;
  std::vector<nn::DqaeBlock> temporal_decoder_;
  nn::LayerNorm spatial_encoder_norm_;
  nn::LayerNorm temporal_encoder_norm_;
  nn::LayerNorm spatial_decoder_norm_;
  nn::LayerNorm temporal_decoder_norm_;
  nn::Linear spatial_to_latent_;
  nn::Linear spatial_from_latent_;
  nn::Linear temporal_to_latent_;
  nn::Linear temporal_from_latent_;
  nn::Linear spatial_head_;
  nn::Linear temporal_head_;
  ag::Var temporal_decoder_position_;
  GcnProjector projector_;
};

}  // namespace sweettok
