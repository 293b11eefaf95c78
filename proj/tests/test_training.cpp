#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sweettok/errors.hpp"
#include "sweettok/training.hpp"

using namespace sweettok;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  const fs::path dir = fs::path(SWEETTOK_TEST_TMP) / "training";
  fs::create_directories(dir);
  return (dir / name).string();
}

// The desk preset with its two synthetic clips and their captions' codebook.
struct Desk {
  RunConfig cfg = preset("desk");
  std::vector<VideoClip> clips;
  std::shared_ptr<const CodebookAssets> assets;

  Desk() {
    const auto samples = synthesize_corpus(cfg.data.seed, cfg.data.n_clips, cfg.data.motion, cfg.model.frames,
                                           cfg.model.height, cfg.model.width);
    for (const auto& s : samples) clips.push_back(s.clip);
    assets = std::make_shared<const CodebookAssets>(
        build_codebook_assets(captions_of(samples), cfg.data.min_freq, cfg.data.window, "pseudo", cfg.model.d_text));
  }
};

std::vector<std::string> train_log(VideoTokenizer& model, Trainer& trainer, const std::vector<VideoClip>& clips,
                                   std::size_t until) {
  std::vector<std::string> lines;
  while (trainer.current_step() < until) {
    const LossBreakdown t = trainer.step(clips);
    lines.push_back(format_log_line(trainer.current_step(), lr_at(trainer.current_step(), trainer.config()), t));
  }
  (void)model;
  return lines;
}

}  // namespace

TEST(Schedule, PaperEndpointsAndShape) {
  const TrainConfig c = preset("paper").train;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(c.warmup_steps, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(c.total_steps, c), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(c.warmup_steps / 2, c), 0.5e-4);
  EXPECT_NEAR(lr_at(c.warmup_steps - 1, c), lr_at(c.warmup_steps, c), 1e-4 / c.warmup_steps + 1e-15);
  double prev = lr_at(c.warmup_steps, c);
  for (std::size_t s = c.warmup_steps; s <= c.total_steps; s += 997) {
    const double lr = lr_at(s, c);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, c.min_lr);
    prev = lr;
  }
  EXPECT_THROW(lr_at(c.total_steps + 1, c), ValidationError);
}

TEST(AdamW, MatchesHandComputedMoments) {
  TrainConfig cfg;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.99;
  cfg.adam_eps = 1e-8;
  cfg.weight_decay = 0.01;
  nn::ParamStore store(0);
  ag::Var w = store.create("w", 1, 3, nn::Init::kZeros);
  ag::Var frozen = store.create("frozen", 1, 1, nn::Init::kOnes);
  ag::Var idle = store.create("idle", 1, 1, nn::Init::kOnes);
  w.mutable_value() = Tensor(1, 3, {1.0, -2.0, 0.5});
  const Tensor target(1, 3, {0.5, 1.0, -1.0});

  std::vector<double> ow{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  AdamW opt(cfg);
  const double lrs[] = {0.1, 0.05, 0.02};
  for (int t = 1; t <= 3; ++t) {
    // f = mean (w - target)^2 so df/dw_i = 2 (w_i - target_i) / 3.
    store.zero_grad();
    ag::backward(ag::add(ag::mse(w, ag::constant(target)), ag::mse(frozen, ag::constant(Tensor(1, 1)))));
    opt.step(store, lrs[t - 1], [](const std::string& n) { return n != "frozen"; });
    for (int i = 0; i < 3; ++i) {
      const double g = 2.0 * (ow[i] - target[i]) / 3.0;
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.99 * v[i] + 0.01 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.99, t));
      ow[i] -= lrs[t - 1] * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ow[i]);
      EXPECT_NEAR(w.value()[i], ow[i], 1e-8) << "step " << t << " element " << i;
    }
  }
  EXPECT_EQ(frozen.value()[0], 1.0);
  EXPECT_EQ(idle.value()[0], 1.0);
  EXPECT_EQ(opt.updates(), 3u);
}

TEST(Ema, EdgeDecaysAndClosedForm) {
  TensorMap shadow{{"x", Tensor(1, 2, {1.0, -1.0})}};
  const TensorMap live{{"x", Tensor(1, 2, {3.0, 5.0})}};
  TensorMap s0 = shadow;
  ema_update(s0, live, 0.0);
  EXPECT_EQ(s0.at("x"), live.at("x"));
  TensorMap s1 = shadow;
  ema_update(s1, live, 1.0);
  EXPECT_EQ(s1.at("x"), shadow.at("x"));

  // s_n = d^n s_0 + (1 - d) sum_k d^(n-k) l_k
  const double d = 0.9;
  TensorMap s = shadow;
  double closed[2] = {1.0, -1.0};
  std::vector<std::pair<double, double>> lives;
  for (int k = 1; k <= 10; ++k) lives.emplace_back(0.3 * k, -0.7 * k + 1.0);
  for (int k = 1; k <= 10; ++k) ema_update(s, TensorMap{{"x", Tensor(1, 2, {lives[k - 1].first, lives[k - 1].second})}}, d);
  for (int c = 0; c < 2; ++c) {
    double acc = std::pow(d, 10) * closed[c];
    for (int k = 1; k <= 10; ++k) acc += (1 - d) * std::pow(d, 10 - k) * (c == 0 ? lives[k - 1].first : lives[k - 1].second);
    EXPECT_NEAR(s.at("x")[c], acc, 1e-12);
  }
  TensorMap wrong{{"y", Tensor(1, 2)}};
  EXPECT_THROW(ema_update(s, wrong, 0.5), ValidationError);
}

TEST(Loss, TermsMatchScalarOracle) {
  Desk d;
  DqaeModel model(d.cfg.model, d.assets, 3);
  LossWeights w;
  w.l2 = 0.7;
  w.vq = 0.3;
  const BatchLoss loss = batch_loss(model, d.clips, w);
  double l2 = 0.0, vq = 0.0;
  const ag::Var projected = model.project();
  for (const VideoClip& clip : d.clips) {
    const DqaeModel::Trace tr = model.trace(clip, projected);
    const Tensor rec = tr.reconstruction.value();
    double e = 0.0;
    for (std::size_t i = 0; i < rec.size(); ++i) e += (rec[i] - clip.pixels[i]) * (rec[i] - clip.pixels[i]);
    l2 += e / rec.size() / d.clips.size();
    vq += oracle::vq_loss(tr.z_s.values.value(), tr.q_s.embeddings.value(), tr.z_t.values.value(),
                          tr.q_t.embeddings.value(), d.cfg.model.commitment_beta) /
          d.clips.size();
  }
  EXPECT_NEAR(loss.terms.l2, l2, 1e-6);
  EXPECT_NEAR(loss.terms.vq, vq, 1e-6);
  EXPECT_NEAR(loss.terms.total, 0.7 * l2 + 0.3 * vq, 1e-6);
  EXPECT_NEAR(loss.total.item(), loss.terms.total, 1e-12);
}

TEST(Loss, HooksContributeWithTheirWeights) {
  Desk d;
  DqaeModel model(d.cfg.model, d.assets, 3);
  LossWeights w;
  w.perceptual = 2.0;
  w.adversarial = 0.5;
  const BatchLoss base = batch_loss(model, d.clips, w);
  LossHooks hooks;
  hooks.perceptual = [](const VideoClip&, const ag::Var&) { return ag::constant(Tensor(1, 1, {0.25})); };
  hooks.adversarial = [](const VideoClip&, const ag::Var&) { return ag::constant(Tensor(1, 1, {1.0})); };
  const BatchLoss hooked = batch_loss(model, d.clips, w, hooks);
  EXPECT_DOUBLE_EQ(hooked.terms.perceptual, 0.25);
  EXPECT_NEAR(hooked.terms.total, base.terms.total + 2.0 * 0.25 + 0.5 * 1.0, 1e-12);
}

TEST(Loss, LogLineFormat) {
  LossBreakdown t;
  t.l2 = 0.5;
  t.vq = 0.25;
  t.total = 0.525;
  EXPECT_EQ(format_log_line(7, 0.001, t), "7\t0.001\t0.5\t0.25\t0.525");
}

TEST(Trainer, OverfitsTwoClipsIn300Steps) {
  Desk d;
  ASSERT_EQ(d.cfg.train.total_steps, 300u);
  auto model = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, d.cfg.train.seed);
  const Tensor raw_before = d.assets->codebook.raw_embeddings;
  const double initial = evaluate(*model, d.clips).l2;
  Trainer trainer(*model, d.cfg.train);
  std::vector<double> l2;
  trainer.run(d.clips, [&](std::size_t, double, const LossBreakdown& t) { l2.push_back(t.l2); });
  const double final_l2 = evaluate(*model, d.clips).l2;
  EXPECT_LE(final_l2, 0.1 * initial) << "initial " << initial << " final " << final_l2;
  ASSERT_EQ(l2.size(), 300u);
  double prev = INFINITY;
  for (std::size_t w = 0; w < 6; ++w) {
    double mean = 0.0;
    for (std::size_t i = w * 50; i < (w + 1) * 50; ++i) mean += l2[i] / 50.0;
    EXPECT_LE(mean, prev) << "window " << w;
    prev = mean;
  }
  EXPECT_EQ(d.assets->codebook.raw_embeddings, raw_before);
}

TEST(Trainer, IdenticalRunsGiveIdenticalLogs) {
  Desk d;
  d.cfg.train.total_steps = 20;
  std::vector<std::string> logs[2];
  for (auto& log : logs) {
    auto model = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 5);
    Trainer trainer(*model, d.cfg.train);
    log = train_log(*model, trainer, d.clips, 20);
  }
  EXPECT_EQ(logs[0], logs[1]);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  Desk d;
  d.cfg.train.batch_size = 1;
  auto a = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 4);
  Trainer ta(*a, d.cfg.train);
  const auto full = train_log(*a, ta, d.clips, 300);

  const std::string path = tmp_path("resume.bin");
  std::vector<std::string> resumed;
  {
    auto b = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 4);
    Trainer tb(*b, d.cfg.train);
    resumed = train_log(*b, tb, d.clips, 150);
    tb.save_checkpoint(path, d.cfg);
  }
  auto c = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 99);
  Trainer tc(*c, d.cfg.train);
  tc.load_checkpoint(path);
  EXPECT_EQ(tc.current_step(), 150u);
  const auto rest = train_log(*c, tc, d.clips, 300);
  resumed.insert(resumed.end(), rest.begin(), rest.end());
  EXPECT_EQ(resumed, full);
  EXPECT_EQ(snapshot(c->params()), snapshot(a->params()));
  EXPECT_EQ(tc.ema(), ta.ema());
}

TEST(Trainer, NonFiniteLossAbortsWithDiagnostics) {
  Desk d;
  auto model = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 1);
  ag::Var w = model->params().get("pixel.spatial.w");
  w.mutable_value()[0] = NAN;
  Trainer trainer(*model, d.cfg.train);
  try {
    trainer.step(d.clips);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("non-finite loss at step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("pixel.spatial.w"), std::string::npos) << msg;
  }
  EXPECT_EQ(trainer.current_step(), 0u);
}

TEST(Trainer, ImageFinetuneFreezesTemporalBranchAndFits) {
  Desk d;
  DqaeModel model(d.cfg.model, d.assets, 2);
  std::vector<VideoClip> images;
  for (const auto& c : d.clips) images.push_back(c.first_frame());
  const TensorMap before = snapshot(model.params());
  const auto image_l2 = [&] {
    ag::NoGradGuard g;
    return image_batch_loss(model, images, LossWeights{}).terms.l2;
  };
  const double initial = image_l2();
  Trainer trainer(model, d.cfg.train, TrainMode::kImage);
  trainer.run(d.clips);
  const double final_l2 = image_l2();
  EXPECT_LE(final_l2, 0.1 * initial) << "initial " << initial << " final " << final_l2;
  std::size_t temporal = 0, moved = 0;
  for (const auto& [name, p] : model.params().params()) {
    if (DqaeModel::is_temporal_parameter(name)) {
      ++temporal;
      EXPECT_EQ(p.value(), before.at(name)) << name;
      EXPECT_EQ(trainer.ema().at(name), before.at(name)) << name;
    } else if (!(p.value() == before.at(name))) {
      ++moved;
    }
  }
  EXPECT_GT(temporal, 10u);
  EXPECT_GT(moved, 10u);
  EXPECT_EQ(model.encode_image(images[0], model.project()).size(), d.cfg.model.l_spatial);
}

TEST(Trainer, ImageModeNeedsDecoupledModel) {
  Desk d;
  auto model = make_tokenizer(Strategy::kCoupledQuery, d.cfg.model, d.assets, 1);
  EXPECT_THROW(Trainer(*model, d.cfg.train, TrainMode::kImage), ValidationError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Desk d;
  auto model = make_tokenizer(Strategy::kDecoupledQuery, d.cfg.model, d.assets, 1);
  Trainer trainer(*model, d.cfg.train);
  trainer.step(d.clips);
  const std::string path = tmp_path("ckpt.bin");
  trainer.save_checkpoint(path, d.cfg);
  const Checkpoint c = read_checkpoint(path);
  EXPECT_EQ(c.step, 1u);
  EXPECT_EQ(c.params, snapshot(model->params()));
  EXPECT_EQ(to_ini(c.run), to_ini(d.cfg));
  EXPECT_EQ(c.adam_updates, 1u);

  EXPECT_THROW(read_checkpoint(tmp_path("missing.bin")), IoError);
  {
    std::ofstream out(tmp_path("bad.bin"), std::ios::binary);
    out << "SWTCgarbage";
  }
  EXPECT_THROW(read_checkpoint(tmp_path("bad.bin")), IoError);

  RunConfig other = d.cfg;
  other.model.d_model = 16;
  auto small = make_tokenizer(Strategy::kDecoupledQuery, other.model, d.assets, 1);
  Trainer ts(*small, other.train);
  EXPECT_THROW(ts.load_checkpoint(path), ValidationError);
}

TEST(Baselines, ShareTheTokenBudget) {
  Desk d;
  for (Strategy s : {Strategy::kDecoupledQuery, Strategy::kCoupledQuery, Strategy::kDownsample}) {
    auto model = make_tokenizer(s, d.cfg.model, d.assets, 1);
    const TokenSequence t = model->tokenize(d.clips[0]);
    EXPECT_EQ(t.spatial.size() + t.temporal.size(), d.cfg.model.token_count()) << to_string(s);
    const VideoClip r = model->reconstruct(d.clips[0]);
    EXPECT_TRUE(r.same_shape(d.clips[0]));
  }
}

TEST(Baselines, LinearInterpolationWeights) {
  const kernels::Csr m = linear_interpolation(3, 5);
  ASSERT_EQ(m.n_rows, 3u);
  Tensor dense(3, 5);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p) {
      dense(r, m.col[p]) = m.val[p];
      sum += m.val[p];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_EQ(dense(0, 0), 1.0);
  EXPECT_EQ(dense(1, 2), 1.0);
  EXPECT_EQ(dense(2, 4), 1.0);
  const kernels::Csr up = linear_interpolation(4, 2);
  Tensor u(4, 2);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t p = up.row_ptr[r]; p < up.row_ptr[r + 1]; ++p) u(r, up.col[p]) = up.val[p];
  EXPECT_NEAR(u(1, 0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(u(1, 1), 1.0 / 3.0, 1e-12);
}

TEST(Ablation, DeterministicRowsAndSchema) {
  Desk d;
  d.cfg.train.total_steps = 3;
  d.cfg.train.warmup_steps = 1;
  const std::vector<Strategy> all{Strategy::kDecoupledQuery, Strategy::kCoupledQuery, Strategy::kDownsample};
  const auto a = run_ablation(all, d.clips, d.assets, d.cfg, 1);
  const auto b = run_ablation(all, d.clips, d.assets, d.cfg, 1);
  const std::string ta = format_ablation(a);
  EXPECT_EQ(ta, format_ablation(b));
  std::istringstream in(ta);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "strategy\tseed\ttokens\tsteps\tinitial_l2\tfinal_l2\tpsnr\tssim");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 7);
  }
  EXPECT_EQ(rows, 3u);
  for (const auto& r : a) {
    EXPECT_EQ(r.tokens, 12u);
    EXPECT_EQ(r.steps, 3u);
  }
}
