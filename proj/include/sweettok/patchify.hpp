#pragma once

#include <cstddef>

#include "sweettok/autograd.hpp"
#include "sweettok/config.hpp"
#include "sweettok/nn.hpp"
#include "sweettok/videodata.hpp"

namespace sweettok {

enum class GridKind { kSpatial, kTemporal };

// Embedded patches, rows ordered (tau, i, j) row-major, one D-vector per row.
struct PatchGrid {
  ag::Var data;
  std::size_t steps = 1;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  GridKind kind = GridKind::kSpatial;

  std::size_t area() const { return grid_h * grid_w; }
  std::size_t dim() const { return data.cols(); }
};

// Patch embedding for the first frame (2D kernel) and the remaining frames
// (3D tube kernel), plus the linear pixel unprojections used by the decoder.
struct PatchKernel {
  std::size_t p_t = 1;
  std::size_t p_h = 1;
  std::size_t p_w = 1;
  std::size_t dim = 1;
  nn::Linear spatial;           // p_h*p_w*3 -> D
  nn::Linear temporal;          // p_t*p_h*p_w*3 -> D
  ag::Var spatial_position;     // (h*w) x D
  ag::Var temporal_position;    // (t*h*w) x D
  nn::Linear spatial_unproject;   // D -> p_h*p_w*3
  nn::Linear temporal_unproject;  // D -> p_t*p_h*p_w*3

  PatchKernel() = default;
  PatchKernel(nn::ParamStore& store, const std::string& name, const ModelConfig& config);
};

// Pixel blocks as rows: (h*w) x (p_h*p_w*3), columns ordered (dy, dx, c).
Tensor extract_spatial_patches(const VideoClip& frame, std::size_t p_h, std::size_t p_w);
// Tubes over all frames of `frames`: (t*h*w) x (p_t*p_h*p_w*3), columns
// ordered (dt, dy, dx, c).
Tensor extract_tubes(const VideoClip& frames, std::size_t p_t, std::size_t p_h, std::size_t p_w);

// Content embeddings without positional terms. The temporal residual is
// taken on these.
PatchGrid embed_spatial(const VideoClip& frame, const PatchKernel& kernel);
PatchGrid embed_temporal(const VideoClip& frames, const PatchKernel& kernel);
PatchGrid add_position(const PatchGrid& grid, const PatchKernel& kernel);

// frame: a single-frame clip. Output (1, H/p_h, W/p_w, D) with positions.
PatchGrid patchify_spatial(const VideoClip& frame, const PatchKernel& kernel);
// frames: x_{2:T}, i.e. T-1 frames. Output ((T-1)/p_t, H/p_h, W/p_w, D).
PatchGrid patchify_temporal(const VideoClip& frames, const PatchKernel& kernel);

// Pixel tensors are (frames*H*W) x 3 in VideoClip memory order.
ag::Var unpatchify_spatial(const PatchGrid& grid, const PatchKernel& kernel);
ag::Var unpatchify_temporal(const PatchGrid& grid, const PatchKernel& kernel);

// Splits x into (x_1, x_{2:T}).
std::pair<VideoClip, VideoClip> split_first_frame(const VideoClip& clip);

Tensor clip_to_tensor(const VideoClip& clip);
VideoClip tensor_to_clip(const Tensor& pixels, std::size_t frames, std::size_t height, std::size_t width,
                         std::string clip_id = {});

}  // namespace sweettok
