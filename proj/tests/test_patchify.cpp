#include <gtest/gtest.h>

#include <random>

#include "sweettok/config.hpp"
#include "sweettok/errors.hpp"
#include "sweettok/patchify.hpp"

using namespace sweettok;

namespace {

ModelConfig toy(std::size_t t, std::size_t hw, std::size_t pt, std::size_t p, std::size_t d) {
  ModelConfig m;
  m.frames = t;
  m.height = m.width = hw;
  m.patch_t = pt;
  m.patch_h = m.patch_w = p;
  m.d_model = d;
  return m;
}

VideoClip random_clip(std::size_t t, std::size_t hw, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  VideoClip c(t, hw, hw, "x");
  for (double& v : c.pixels) v = u(rng);
  return c;
}

void randomize(nn::ParamStore& store, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& [name, p] : store.params()) {
    ag::Var v = p;
    for (double& x : v.mutable_value().values()) x = n(rng);
  }
}

void zero(nn::ParamStore& store) {
  for (auto& [name, p] : store.params()) {
    ag::Var v = p;
    v.mutable_value().fill(0.0);
  }
}

}  // namespace

TEST(Patchify, PaperGridShapes) {
  const ModelConfig m = toy(17, 256, 4, 8, 8);
  nn::ParamStore store(0);
  const PatchKernel k(store, "patch", m);
  const VideoClip clip(17, 256, 256);
  const auto [first, rest] = split_first_frame(clip);
  const PatchGrid vs = patchify_spatial(first, k);
  const PatchGrid vt = patchify_temporal(rest, k);
  EXPECT_EQ(vs.steps, 1u);
  EXPECT_EQ(vs.grid_h, 32u);
  EXPECT_EQ(vs.grid_w, 32u);
  EXPECT_EQ(vs.data.rows(), 1024u);
  EXPECT_EQ(vt.steps, 4u);
  EXPECT_EQ(vt.grid_h, 32u);
  EXPECT_EQ(vt.grid_w, 32u);
  EXPECT_EQ(vt.data.rows(), 4096u);
  EXPECT_EQ(vt.kind, GridKind::kTemporal);
}

TEST(Patchify, IdentityKernelReinterpretsPixels) {
  const ModelConfig m = toy(3, 4, 1, 1, 3);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  zero(store);
  ag::Var w = k.spatial.weight;
  for (std::size_t i = 0; i < 3; ++i) w.mutable_value()(i, i) = 1.0;
  const VideoClip clip = random_clip(3, 4, 1);
  const PatchGrid g = patchify_spatial(clip.first_frame(), k);
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g.data.value()(p, c), clip.pixels[p * 3 + c]);
}

TEST(Patchify, SpatialMatchesIm2colOracle) {
  const ModelConfig m = toy(3, 8, 2, 4, 5);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  randomize(store, 2);
  const VideoClip frame = random_clip(1, 8, 3);
  const Tensor got = patchify_spatial(frame, k).data.value();
  const Tensor& W = k.spatial.weight.value();
  const Tensor& b = k.spatial.bias.value();
  const Tensor& pos = k.spatial_position.value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t d = 0; d < 5; ++d) {
        double acc = b(0, d) + pos(i * 2 + j, d);
        for (std::size_t dy = 0; dy < 4; ++dy)
          for (std::size_t dx = 0; dx < 4; ++dx)
            for (std::size_t c = 0; c < 3; ++c)
              acc += W((dy * 4 + dx) * 3 + c, d) * frame.at(0, i * 4 + dy, j * 4 + dx, c);
        EXPECT_NEAR(got(i * 2 + j, d), acc, 1e-6);
      }
}

TEST(Patchify, ZeroFramesGiveZeroGrid) {
  const ModelConfig m = toy(5, 8, 2, 4, 4);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  randomize(store, 4);
  ag::Var(k.temporal.bias).mutable_value().fill(0.0);
  ag::Var(k.temporal_position).mutable_value().fill(0.0);
  const PatchGrid g = patchify_temporal(VideoClip(4, 8, 8), k);
  for (double v : g.data.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Patchify, TubesMatchScalarOracle) {
  const ModelConfig m = toy(5, 8, 2, 4, 6);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  randomize(store, 5);
  const VideoClip clip = random_clip(5, 8, 6);
  const auto [first, rest] = split_first_frame(clip);
  const Tensor got = patchify_temporal(rest, k).data.value();
  const Tensor& W = k.temporal.weight.value();
  const Tensor& b = k.temporal.bias.value();
  const Tensor& pos = k.temporal_position.value();
  ASSERT_EQ(got.rows(), 8u);
  for (std::size_t tau = 0; tau < 2; ++tau)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t d = 0; d < 6; ++d) {
          const std::size_t row = (tau * 2 + i) * 2 + j;
          double acc = b(0, d) + pos(row, d);
          for (std::size_t dt = 0; dt < 2; ++dt)
            for (std::size_t dy = 0; dy < 4; ++dy)
              for (std::size_t dx = 0; dx < 4; ++dx)
                for (std::size_t c = 0; c < 3; ++c)
                  acc += W(((dt * 4 + dy) * 4 + dx) * 3 + c, d) *
                         clip.at(1 + tau * 2 + dt, i * 4 + dy, j * 4 + dx, c);
          EXPECT_NEAR(got(row, d), acc, 1e-6);
        }
}

TEST(Unpatchify, BlockLayoutLaw) {
  const ModelConfig m = toy(3, 4, 2, 2, 12);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  zero(store);
  ag::Var u = k.spatial_unproject.weight;
  for (std::size_t i = 0; i < 12; ++i) u.mutable_value()(i, i) = 1.0;
  PatchGrid g;
  g.grid_h = g.grid_w = 2;
  Tensor data(4, 12);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 12; ++c) data(p, c) = static_cast<double>(p);
  g.data = ag::constant(data);
  const Tensor px = unpatchify_spatial(g, k).value();
  ASSERT_EQ(px.rows(), 16u);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(px(y * 4 + x, 0), static_cast<double>((y / 2) * 2 + x / 2));
}

TEST(Unpatchify, ZeroGridZeroBiasGivesZeroFrame) {
  const ModelConfig m = toy(5, 8, 2, 4, 4);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  randomize(store, 7);
  ag::Var(k.spatial_unproject.bias).mutable_value().fill(0.0);
  ag::Var(k.temporal_unproject.bias).mutable_value().fill(0.0);
  PatchGrid s;
  s.grid_h = s.grid_w = 2;
  s.data = ag::constant(Tensor(4, 4));
  const ag::Var frame = unpatchify_spatial(s, k);
  for (double v : frame.value().values()) EXPECT_EQ(v, 0.0);
  PatchGrid t = s;
  t.kind = GridKind::kTemporal;
  t.steps = 2;
  t.data = ag::constant(Tensor(8, 4));
  const ag::Var frames = unpatchify_temporal(t, k);
  for (double v : frames.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Unpatchify, RandomGridMatchesScatterOracle) {
  const ModelConfig m = toy(5, 16, 2, 4, 3);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  randomize(store, 8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  PatchGrid g;
  g.grid_h = g.grid_w = 4;
  Tensor data(16, 3);
  for (double& v : data.values()) v = n(rng);
  g.data = ag::constant(data);
  const Tensor px = unpatchify_spatial(g, k).value();
  const Tensor& U = k.spatial_unproject.weight.value();
  const Tensor& b = k.spatial_unproject.bias.value();
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t patch = (y / 4) * 4 + x / 4;
        const std::size_t off = ((y % 4) * 4 + x % 4) * 3 + c;
        double acc = b(0, off);
        for (std::size_t d = 0; d < 3; ++d) acc += data(patch, d) * U(d, off);
        EXPECT_NEAR(px(y * 16 + x, c), acc, 1e-6);
      }

  PatchGrid t;
  t.kind = GridKind::kTemporal;
  t.steps = 2;
  t.grid_h = t.grid_w = 4;
  Tensor tdata(32, 3);
  for (double& v : tdata.values()) v = n(rng);
  t.data = ag::constant(tdata);
  const Tensor tpx = unpatchify_temporal(t, k).value();
  const Tensor& V = k.temporal_unproject.weight.value();
  const Tensor& tb = k.temporal_unproject.bias.value();
  ASSERT_EQ(tpx.rows(), 4u * 16 * 16);
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t y = 0; y < 16; y += 3)
      for (std::size_t x = 0; x < 16; x += 5)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t tube = ((f / 2) * 4 + y / 4) * 4 + x / 4;
          const std::size_t off = (((f % 2) * 4 + y % 4) * 4 + x % 4) * 3 + c;
          double acc = tb(0, off);
          for (std::size_t d = 0; d < 3; ++d) acc += tdata(tube, d) * V(d, off);
          EXPECT_NEAR(tpx((f * 16 + y) * 16 + x, c), acc, 1e-6);
        }
}

TEST(Patchify, IndivisibleInputsRejected) {
  const ModelConfig m = toy(5, 8, 2, 4, 4);
  nn::ParamStore store(0);
  PatchKernel k(store, "patch", m);
  EXPECT_THROW(patchify_spatial(VideoClip(1, 6, 8), k), ValidationError);
  EXPECT_THROW(patchify_temporal(VideoClip(3, 8, 8), k), ValidationError);
  EXPECT_THROW(split_first_frame(VideoClip(1, 8, 8)), ValidationError);
}
