#include "sweettok/patchify.hpp"

#include <algorithm>
#include <stdexcept>

#include "sweettok/errors.hpp"

namespace sweettok {

PatchKernel::PatchKernel(nn::ParamStore& store, const std::string& name, const ModelConfig& config)
    : p_t(config.patch_t),
      p_h(config.patch_h),
      p_w(config.patch_w),
      dim(config.d_model),
      spatial(store, name + ".spatial", config.spatial_patch_dim(), config.d_model),
      temporal(store, name + ".temporal", config.temporal_patch_dim(), config.d_model),
      spatial_position(store.create(name + ".spatial_pos", config.grid_area(), config.d_model, nn::Init::kNormal)),
      temporal_position(store.create(name + ".temporal_pos", config.grid_t() * config.grid_area(), config.d_model,
                                     nn::Init::kNormal)),
      spatial_unproject(store, "pixel.spatial", config.d_model, config.spatial_patch_dim()),
      temporal_unproject(store, "pixel.temporal", config.d_model, config.temporal_patch_dim()) {}

Tensor extract_spatial_patches(const VideoClip& frame, std::size_t p_h, std::size_t p_w) {
  if (frame.height % p_h != 0 || frame.width % p_w != 0) {
    throw ValidationError("patchify: frame size not divisible by the patch size");
  }
  const std::size_t gh = frame.height / p_h;
  const std::size_t gw = frame.width / p_w;
  Tensor out(gh * gw, p_h * p_w * 3);
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      double* row = out.data() + (i * gw + j) * out.cols();
      for (std::size_t dy = 0; dy < p_h; ++dy) {
        for (std::size_t dx = 0; dx < p_w; ++dx) {
          for (std::size_t c = 0; c < 3; ++c) *row++ = frame.at(0, i * p_h + dy, j * p_w + dx, c);
        }
      }
    }
  }
  return out;
}

Tensor extract_tubes(const VideoClip& frames, std::size_t p_t, std::size_t p_h, std::size_t p_w) {
  if (frames.frames % p_t != 0) throw ValidationError("patchify: frame count not divisible by patch_t");
  if (frames.height % p_h != 0 || frames.width % p_w != 0) {
    throw ValidationError("patchify: frame size not divisible by the patch size");
  }
  const std::size_t gt = frames.frames / p_t;
  const std::size_t gh = frames.height / p_h;
  const std::size_t gw = frames.width / p_w;
  Tensor out(gt * gh * gw, p_t * p_h * p_w * 3);
  for (std::size_t tau = 0; tau < gt; ++tau) {
    for (std::size_t i = 0; i < gh; ++i) {
      for (std::size_t j = 0; j < gw; ++j) {
        double* row = out.data() + ((tau * gh + i) * gw + j) * out.cols();
        for (std::size_t dt = 0; dt < p_t; ++dt) {
          for (std::size_t dy = 0; dy < p_h; ++dy) {
            for (std::size_t dx = 0; dx < p_w; ++dx) {
              for (std::size_t c = 0; c < 3; ++c) *row++ = frames.at(tau * p_t + dt, i * p_h + dy, j * p_w + dx, c);
            }
          }
        }
      }
    }
  }
  return out;
}

PatchGrid embed_spatial(const VideoClip& frame, const PatchKernel& kernel) {
  if (frame.frames != 1) throw ValidationError("patchify_spatial: expects a single frame");
  PatchGrid grid;
  grid.data = kernel.spatial(ag::constant(extract_spatial_patches(frame, kernel.p_h, kernel.p_w)));
  grid.steps = 1;
  grid.grid_h = frame.height / kernel.p_h;
  grid.grid_w = frame.width / kernel.p_w;
  grid.kind = GridKind::kSpatial;
  return grid;
}

PatchGrid embed_temporal(const VideoClip& frames, const PatchKernel& kernel) {
  PatchGrid grid;
  grid.data = kernel.temporal(ag::constant(extract_tubes(frames, kernel.p_t, kernel.p_h, kernel.p_w)));
  grid.steps = frames.frames / kernel.p_t;
  grid.grid_h = frames.height / kernel.p_h;
  grid.grid_w = frames.width / kernel.p_w;
  grid.kind = GridKind::kTemporal;
  return grid;
}

PatchGrid add_position(const PatchGrid& grid, const PatchKernel& kernel) {
  const ag::Var& table = grid.kind == GridKind::kSpatial ? kernel.spatial_position : kernel.temporal_position;
  if (table.rows() != grid.data.rows()) {
    throw ValidationError("patchify: grid of " + std::to_string(grid.data.rows()) +
                          " patches does not match the configured positional table (" +
                          std::to_string(table.rows()) + ")");
  }
  PatchGrid out = grid;
  out.data = ag::add(grid.data, table);
  return out;
}

PatchGrid patchify_spatial(const VideoClip& frame, const PatchKernel& kernel) {
  return add_position(embed_spatial(frame, kernel), kernel);
}

PatchGrid patchify_temporal(const VideoClip& frames, const PatchKernel& kernel) {
  return add_position(embed_temporal(frames, kernel), kernel);
}

ag::Var unpatchify_spatial(const PatchGrid& grid, const PatchKernel& kernel) {
  if (grid.kind != GridKind::kSpatial || grid.steps != 1) {
    throw ValidationError("unpatchify_spatial: expects a spatial grid");
  }
  const ag::Var blocks = kernel.spatial_unproject(grid.data);
  const std::size_t height = grid.grid_h * kernel.p_h;
  const std::size_t width = grid.grid_w * kernel.p_w;
  const std::size_t block_cols = blocks.cols();
  std::vector<std::size_t> index(height * width * 3);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t patch = (y / kernel.p_h) * grid.grid_w + x / kernel.p_w;
      const std::size_t offset = ((y % kernel.p_h) * kernel.p_w + x % kernel.p_w) * 3;
      for (std::size_t c = 0; c < 3; ++c) index[(y * width + x) * 3 + c] = patch * block_cols + offset + c;
    }
  }
  return ag::gather(blocks, height * width, 3, std::move(index));
}

ag::Var unpatchify_temporal(const PatchGrid& grid, const PatchKernel& kernel) {
  if (grid.kind != GridKind::kTemporal) throw ValidationError("unpatchify_temporal: expects a temporal grid");
  const ag::Var tubes = kernel.temporal_unproject(grid.data);
  const std::size_t frames = grid.steps * kernel.p_t;
  const std::size_t height = grid.grid_h * kernel.p_h;
  const std::size_t width = grid.grid_w * kernel.p_w;
  const std::size_t tube_cols = tubes.cols();
  std::vector<std::size_t> index(frames * height * width * 3);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t tube = ((t / kernel.p_t) * grid.grid_h + y / kernel.p_h) * grid.grid_w + x / kernel.p_w;
        const std::size_t offset =
            (((t % kernel.p_t) * kernel.p_h + y % kernel.p_h) * kernel.p_w + x % kernel.p_w) * 3;
        for (std::size_t c = 0; c < 3; ++c) {
          index[((t * height + y) * width + x) * 3 + c] = tube * tube_cols + offset + c;
        }
      }
    }
  }
  return ag::gather(tubes, frames * height * width, 3, std::move(index));
}

std::pair<VideoClip, VideoClip> split_first_frame(const VideoClip& clip) {
  if (clip.frames < 2) throw ValidationError("split_first_frame: clip has fewer than two frames");
  VideoClip first = clip.first_frame();
  VideoClip rest(clip.frames - 1, clip.height, clip.width, clip.clip_id);
  rest.frame_rate = clip.frame_rate;
  std::copy(clip.pixels.begin() + static_cast<std::ptrdiff_t>(clip.frame_size()), clip.pixels.end(),
            rest.pixels.begin());
  return {std::move(first), std::move(rest)};
}

Tensor clip_to_tensor(const VideoClip& clip) {
  return Tensor(clip.frames * clip.height * clip.width, 3, clip.pixels);
}

VideoClip tensor_to_clip(const Tensor& pixels, std::size_t frames, std::size_t height, std::size_t width,
                         std::string clip_id) {
  if (pixels.size() != frames * height * width * 3) throw ValidationError("tensor_to_clip: size mismatch");
  VideoClip clip(frames, height, width, std::move(clip_id));
  clip.pixels = pixels.values();
  return clip;
}

}  // namespace sweettok
