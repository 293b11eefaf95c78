#include "sweettok/dqae.hpp"

#include <sstream>

#include "sweettok/errors.hpp"

namespace sweettok {
namespace {

std::vector<nn::DqaeBlock> make_blocks(nn::ParamStore& store, const std::string& prefix, std::size_t count,
                                       const ModelConfig& c) {
  std::vector<nn::DqaeBlock> blocks;
  for (std::size_t i = 0; i < count; ++i) {
    blocks.emplace_back(store, prefix + "." + std::to_string(i), c.d_model, c.n_heads, c.mlp_ratio);
  }
  return blocks;
}

std::string join_indices(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? " " : "") + std::to_string(xs[i]);
  return out;
}

std::vector<std::size_t> parse_indices(const std::string& field, const std::string& prefix, std::size_t line_no) {
  if (field.rfind(prefix, 0) != 0) {
    throw ValidationError("token line " + std::to_string(line_no) + ": expected field starting with " + prefix);
  }
  std::vector<std::size_t> out;
  std::istringstream in(field.substr(prefix.size()));
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (tok.front() == '-') throw std::invalid_argument("negative");
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || used == 0) {
      throw ValidationError("token line " + std::to_string(line_no) + ": bad index '" + tok + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

QueryBank::QueryBank(nn::ParamStore& store, const ModelConfig& c)
    : spatial(store.create("query.spatial", c.l_spatial, c.d_model, nn::Init::kNormal)),
      temporal(store.create("query.temporal", c.l_temporal, c.d_model, nn::Init::kNormal)),
      spatial_patch(store.create("query.spatial_patch", c.grid_area(), c.d_model, nn::Init::kNormal)) {}

std::string format_tokens(const std::vector<TokenSequence>& records) {
  std::ostringstream out;
  for (const auto& r : records) {
    out << r.clip_id << "\tS:" << join_indices(r.spatial) << "\tT:" << join_indices(r.temporal) << '\n';
  }
  return out.str();
}

std::vector<TokenSequence> parse_tokens(const std::string& text) {
  std::vector<TokenSequence> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) {
      throw ValidationError("token line " + std::to_string(line_no) + ": expected clip_id<TAB>S:...<TAB>T:...");
    }
    out.push_back({fields[0], parse_indices(fields[1], "S:", line_no), parse_indices(fields[2], "T:", line_no)});
  }
  return out;
}

TokenSequence VideoTokenizer::tokenize(const VideoClip& clip, const ag::Var& projected) const {
  ag::NoGradGuard guard;
  return run(clip, projected).tokens;
}

TokenSequence VideoTokenizer::tokenize(const VideoClip& clip) const {
  ag::NoGradGuard guard;
  return tokenize(clip, project());
}

VideoClip VideoTokenizer::reconstruct(const VideoClip& clip) const {
  ag::NoGradGuard guard;
  const ReconstructionPass pass = run(clip);
  return tensor_to_clip(pass.reconstruction.value(), clip.frames, clip.height, clip.width, clip.clip_id);
}

PatchGrid compute_residual(const PatchGrid& v_s, const PatchGrid& v_t) {
  if (v_s.kind != GridKind::kSpatial || v_t.kind != GridKind::kTemporal) {
    throw ValidationError("compute_residual: expects a spatial and a temporal grid");
  }
  if (v_s.grid_h != v_t.grid_h || v_s.grid_w != v_t.grid_w || v_s.dim() != v_t.dim()) {
    throw ValidationError("compute_residual: spatial dimensions differ");
  }
  const PatchGrid tiled = tile_spatial(v_s, v_t.steps);
  PatchGrid out = v_t;
  out.data = ag::sub(tiled.data, v_t.data);
  return out;
}

PatchGrid tile_spatial(const PatchGrid& v_s, std::size_t steps) {
  std::vector<std::size_t> rows(steps * v_s.area());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i % v_s.area();
  PatchGrid out = v_s;
  out.data = ag::gather_rows(v_s.data, std::move(rows));
  out.steps = steps;
  out.kind = GridKind::kTemporal;
  return out;
}

DqaeModel::DqaeModel(const ModelConfig& config, std::shared_ptr<const CodebookAssets> assets, std::uint64_t seed)
    : config_(config), assets_(std::move(assets)), store_(seed, config.init_std) {
  config_.validate();
  if (!assets_) throw ValidationError("model: codebook assets are required");
  if (assets_->codebook.text_dim() != config_.d_text) {
    throw ValidationError("model.d_text: config says " + std::to_string(config_.d_text) +
                          " but the codebook embeddings have width " +
                          std::to_string(assets_->codebook.text_dim()));
  }
  const auto& c = config_;
  kernel_ = PatchKernel(store_, "patch", c);
  queries_ = QueryBank(store_, c);
  spatial_encoder_ = make_blocks(store_, "spatial_enc", c.spatial_blocks, c);
  spatial_decoder_ = make_blocks(store_, "spatial_dec", c.spatial_blocks, c);
  temporal_encoder_ = make_blocks(store_, "temporal_enc", c.temporal_blocks, c);
  temporal_decoder_ = make_blocks(store_, "temporal_dec", c.temporal_blocks, c);
  spatial_encoder_norm_ = nn::LayerNorm(store_, "spatial_enc.norm", c.d_model);
  temporal_encoder_norm_ = nn::LayerNorm(store_, "temporal_enc.norm", c.d_model);
  spatial_decoder_norm_ = nn::LayerNorm(store_, "spatial_dec.norm", c.d_model);
  temporal_decoder_norm_ = nn::LayerNorm(store_, "temporal_dec.norm", c.d_model);
  spatial_to_latent_ = nn::Linear(store_, "bridge.spatial_in", c.d_model, c.d_latent);
  spatial_from_latent_ = nn::Linear(store_, "bridge.spatial_out", c.d_latent, c.d_model);
  temporal_to_latent_ = nn::Linear(store_, "bridge.temporal_in", c.d_model, c.d_latent);
  temporal_from_latent_ = nn::Linear(store_, "bridge.temporal_out", c.d_latent, c.d_model);
  spatial_head_ = nn::Linear(store_, "spatial_dec.head", c.d_model, c.d_model);
  temporal_head_ = nn::Linear(store_, "temporal_dec.head", c.d_model, c.d_model);
  temporal_decoder_position_ =
      store_.create("temporal_dec.position", c.grid_t() * c.grid_area(), c.d_model, nn::Init::kNormal);
  projector_ = GcnProjector(store_, "gcn", c.d_text, c.gcn_hidden, c.d_latent);
}

bool DqaeModel::is_temporal_parameter(const std::string& name) {
  return name.rfind("temporal", 0) == 0 || name.find(".temporal") != std::string::npos;
}

ag::Var DqaeModel::project() const { return project_codebook(assets_->codebook, assets_->adjacency, projector_); }

LatentTokens DqaeModel::encode_spatial(const PatchGrid& v_s) const {
  if (v_s.kind != GridKind::kSpatial || v_s.grid_h != config_.grid_h() || v_s.grid_w != config_.grid_w() ||
      v_s.dim() != config_.d_model) {
    throw ValidationError("encode_spatial: grid does not match the configured spatial grid");
  }
  const nn::StreamLayout layout{1, v_s.area(), nn::AttentionAxis::kSpatial};
  ag::Var x = v_s.data;
  ag::Var q = queries_.spatial;
  for (const auto& block : spatial_encoder_) {
    x = block.self_and_feed_forward(x, layout);
    q = block.cross(q, x);
  }
  return {spatial_to_latent_(spatial_encoder_norm_(q)), TokenKind::kSpatial, false};
}

PatchGrid DqaeModel::run_spatial_decoder(const ag::Var& memory) const {
  const nn::StreamLayout layout{1, config_.grid_area(), nn::AttentionAxis::kSpatial};
  ag::Var x = queries_.spatial_patch;
  for (const auto& block : spatial_decoder_) {
    x = block.self_and_feed_forward(x, layout);
    x = block.cross(x, memory);
  }
  PatchGrid out;
  out.data = spatial_head_(spatial_decoder_norm_(x));
  out.steps = 1;
  out.grid_h = config_.grid_h();
  out.grid_w = config_.grid_w();
  out.kind = GridKind::kSpatial;
  return out;
}

PatchGrid DqaeModel::decode_spatial(const LatentTokens& zq_s) const {
  if (!zq_s.quantized) throw ValidationError("decode_spatial: tokens must be quantized");
  if (zq_s.kind != TokenKind::kSpatial || zq_s.values.rows() != config_.l_spatial) {
    throw ValidationError("decode_spatial: expects " + std::to_string(config_.l_spatial) + " spatial tokens");
  }
  return run_spatial_decoder(spatial_from_latent_(zq_s.values));
}

LatentTokens DqaeModel::encode_temporal(const PatchGrid& delta_v) const {
  if (delta_v.kind != GridKind::kTemporal || delta_v.steps != config_.grid_t() ||
      delta_v.grid_h != config_.grid_h() || delta_v.grid_w != config_.grid_w() ||
      delta_v.dim() != config_.d_model) {
    throw ValidationError("encode_temporal: residual grid does not match the configured temporal grid");
  }
  const PatchGrid positioned = add_position(delta_v, kernel_);
  const nn::StreamLayout layout{delta_v.steps, delta_v.area(), nn::AttentionAxis::kTemporal};
  ag::Var x = positioned.data;
  ag::Var q = queries_.temporal;
  for (const auto& block : temporal_encoder_) {
    x = block.self_and_feed_forward(x, layout);
    q = block.cross(q, x);
  }
  return {temporal_to_latent_(temporal_encoder_norm_(q)), TokenKind::kTemporal, false};
}

PatchGrid DqaeModel::decode_temporal(const PatchGrid& v_s_tilde, const LatentTokens& zq_t,
                                     Tensor* tiled_input) const {
  if (!zq_t.quantized) throw ValidationError("decode_temporal: tokens must be quantized");
  if (zq_t.kind != TokenKind::kTemporal || zq_t.values.rows() != config_.l_temporal) {
    throw ValidationError("decode_temporal: expects " + std::to_string(config_.l_temporal) + " temporal tokens");
  }
  if (v_s_tilde.kind != GridKind::kSpatial || v_s_tilde.area() != config_.grid_area()) {
    throw ValidationError("decode_temporal: spatial grid does not match the config");
  }
  const PatchGrid tiled = tile_spatial(v_s_tilde, config_.grid_t());
  if (tiled_input) *tiled_input = tiled.data.value();
  const ag::Var memory = temporal_from_latent_(zq_t.values);
  const nn::StreamLayout layout{tiled.steps, tiled.area(), nn::AttentionAxis::kTemporal};
  ag::Var x = ag::add(tiled.data, temporal_decoder_position_);
  for (const auto& block : temporal_decoder_) {
    x = block.self_and_feed_forward(x, layout);
    x = block.cross(x, memory);
  }
  PatchGrid out = tiled;
  out.data = temporal_head_(temporal_decoder_norm_(x));
  return out;
}

ag::Var DqaeModel::pixel_decode(const PatchGrid& v_s_tilde, const PatchGrid& v_tilde) const {
  if (v_s_tilde.grid_h != v_tilde.grid_h || v_s_tilde.grid_w != v_tilde.grid_w ||
      v_s_tilde.dim() != v_tilde.dim()) {
    throw ValidationError("pixel_decode: spatial and temporal grids are inconsistent");
  }
  const ag::Var first = unpatchify_spatial(v_s_tilde, kernel_);
  const ag::Var rest = unpatchify_temporal(v_tilde, kernel_);
  return ag::clamp(ag::concat_rows({first, rest}), -0.5, 0.5);
}

void DqaeModel::check_clip(const VideoClip& clip) const {
  if (clip.frames != config_.frames || clip.height != config_.height || clip.width != config_.width) {
    throw ValidationError("model: clip shape (" + std::to_string(clip.frames) + "," + std::to_string(clip.height) +
                          "," + std::to_string(clip.width) + ") does not match the config (" +
                          std::to_string(config_.frames) + "," + std::to_string(config_.height) + "," +
                          std::to_string(config_.width) + ")");
  }
}

void DqaeModel::encode_into(const VideoClip& clip, const ag::Var& projected, Trace& tr) const {
  check_clip(clip);
  const auto [first, rest] = split_first_frame(clip);
  const PatchGrid content_s = embed_spatial(first, kernel_);
  const PatchGrid content_t = embed_temporal(rest, kernel_);
  tr.v_s = add_position(content_s, kernel_);
  tr.delta_v = compute_residual(content_s, content_t);
  tr.z_s = encode_spatial(tr.v_s);
  tr.z_t = encode_temporal(tr.delta_v);
  tr.q_s = quantize(tr.z_s.values, projected, assets_->codebook, TokenKind::kSpatial);
  tr.q_t = quantize(tr.z_t.values, projected, assets_->codebook, TokenKind::kTemporal);
}

TokenSequence DqaeModel::tokenize(const VideoClip& clip, const ag::Var& projected) const {
  ag::NoGradGuard guard;
  Trace tr;
  encode_into(clip, projected, tr);
  return {clip.clip_id, tr.q_s.local_indices(), tr.q_t.local_indices()};
}

DqaeModel::Trace DqaeModel::trace(const VideoClip& clip, const ag::Var& projected) const {
  Trace tr;
  encode_into(clip, projected, tr);
  tr.v_s_tilde = decode_spatial({tr.q_s.straight_through, TokenKind::kSpatial, true});
  tr.v_tilde = decode_temporal(tr.v_s_tilde, {tr.q_t.straight_through, TokenKind::kTemporal, true});
  tr.reconstruction = pixel_decode(tr.v_s_tilde, tr.v_tilde);
  tr.vq = vq_loss(tr.z_s.values, tr.q_s.embeddings, tr.z_t.values, tr.q_t.embeddings, config_.commitment_beta);
  return tr;
}

ReconstructionPass DqaeModel::run(const VideoClip& clip, const ag::Var& projected) const {
  Trace tr = trace(clip, projected);
  return {tr.reconstruction, tr.vq.total, {clip.clip_id, tr.q_s.local_indices(), tr.q_t.local_indices()}};
}

VideoClip DqaeModel::decode_tokens(const TokenSequence& tokens, const ag::Var& projected) const {
  if (tokens.spatial.size() != config_.l_spatial || tokens.temporal.size() != config_.l_temporal) {
    throw ValidationError("decode: expected " + std::to_string(config_.l_spatial) + " spatial and " +
                          std::to_string(config_.l_temporal) + " temporal tokens, got " +
                          std::to_string(tokens.spatial.size()) + " and " + std::to_string(tokens.temporal.size()));
  }
  ag::NoGradGuard guard;
  const auto q_s = lookup_tokens(tokens.spatial, projected, assets_->codebook, TokenKind::kSpatial);
  const auto q_t = lookup_tokens(tokens.temporal, projected, assets_->codebook, TokenKind::kTemporal);
  const PatchGrid v_s_tilde = decode_spatial({q_s.embeddings, TokenKind::kSpatial, true});
  const PatchGrid v_tilde = decode_temporal(v_s_tilde, {q_t.embeddings, TokenKind::kTemporal, true});
  return tensor_to_clip(pixel_decode(v_s_tilde, v_tilde).value(), config_.frames, config_.height, config_.width,
                        tokens.clip_id);
}

ReconstructionPass DqaeModel::run_image(const VideoClip& frame, const ag::Var& projected) const {
  if (frame.frames != 1) throw ValidationError("image mode: expects a single frame, got T=" + std::to_string(frame.frames));
  if (frame.height != config_.height || frame.width != config_.width) {
    throw ValidationError("image mode: frame size does not match the config");
  }
  const PatchGrid v_s = patchify_spatial(frame, kernel_);
  const LatentTokens z_s = encode_spatial(v_s);
  const QuantizedTokens q_s = quantize(z_s.values, projected, assets_->codebook, TokenKind::kSpatial);
  const PatchGrid v_s_tilde = decode_spatial({q_s.straight_through, TokenKind::kSpatial, true});
  ReconstructionPass pass;
  pass.reconstruction = ag::clamp(unpatchify_spatial(v_s_tilde, kernel_), -0.5, 0.5);
  pass.vq_loss = vq_loss_single(z_s.values, q_s.embeddings, config_.commitment_beta);
  pass.tokens = {frame.clip_id, q_s.local_indices(), {}};
  return pass;
}

std::vector<std::size_t> DqaeModel::encode_image(const VideoClip& frame, const ag::Var& projected) const {
  ag::NoGradGuard guard;
  return run_image(frame, projected).tokens.spatial;
}

VideoClip DqaeModel::decode_image(const std::vector<std::size_t>& spatial_tokens, const ag::Var& projected) const {
  if (spatial_tokens.size() != config_.l_spatial) {
    throw ValidationError("decode_image: expected " + std::to_string(config_.l_spatial) + " spatial tokens");
  }
  ag::NoGradGuard guard;
  const auto q_s = lookup_tokens(spatial_tokens, projected, assets_->codebook, TokenKind::kSpatial);
  const PatchGrid v_s_tilde = decode_spatial({q_s.embeddings, TokenKind::kSpatial, true});
  return tensor_to_clip(ag::clamp(unpatchify_spatial(v_s_tilde, kernel_), -0.5, 0.5).value(), 1, config_.height,
                        config_.width);
}

}  // namespace sweettok
