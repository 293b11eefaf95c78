// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sweettok/config.hpp"
#include "sweettok/dqae.hpp"
#include "sweettok/mlc.hpp"
#include "sweettok/patchify.hpp"
#include "sweettok/training.hpp"
#include "sweettok/videodata.hpp"

using namespace sweettok;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Corpus {
  std::vector<VideoClip> clips;
  std::shared_ptr<const CodebookAssets> assets;
};

Corpus make_corpus(const RunConfig& cfg, std::size_t n_clips, std::uint64_t seed) {
  const auto samples =
      synthesize_corpus(seed, n_clips, cfg.data.motion, cfg.model.frames, cfg.model.height, cfg.model.width);
  Corpus c;
  for (const auto& s : samples) c.clips.push_back(s.clip);
  c.assets = std::make_shared<const CodebookAssets>(
      build_codebook_assets(captions_of(samples), cfg.data.min_freq, cfg.data.window, "pseudo", cfg.model.d_text));
  return c;
}

void randomize(nn::ParamStore& store, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, p] : store.params()) {
    ag::Var v = p;
    for (double& x : v.mutable_value().values()) x = n(rng);
  }
}

// ---------------------------------------------------------------------------

Outcome shapes_at_paper_scale() {
  const RunConfig cfg = preset("paper");
  const auto t0 = std::chrono::steady_clock::now();
  // Captions do not depend on resolution; 64 small clips give every word the
  // paper's minimum frequency.
  Corpus c;
  c.clips.push_back(
      synthesize_corpus(0, 1, cfg.data.motion, cfg.model.frames, cfg.model.height, cfg.model.width)[0].clip);
  c.assets = std::make_shared<const CodebookAssets>(
      build_codebook_assets(captions_of(synthesize_corpus(0, 64, cfg.data.motion, 5, 32, 32)), cfg.data.min_freq,
                            cfg.data.window, "pseudo", cfg.model.d_text));
  const DqaeModel model(cfg.model, c.assets, 0);
  ag::NoGradGuard guard;
  const auto [first, rest] = split_first_frame(c.clips[0]);
  const PatchGrid vs = patchify_spatial(first, model.kernel());
  const PatchGrid vt = patchify_temporal(rest, model.kernel());
  const TokenSequence tok = model.tokenize(c.clips[0]);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool grids = vs.steps == 1 && vs.grid_h == 32 && vs.grid_w == 32 && vt.steps == 4 && vt.grid_h == 32 &&
                     vt.grid_w == 32;
  const std::size_t n = tok.spatial.size() + tok.temporal.size();
  std::ostringstream d;
  d << "indices " << n << " (" << tok.spatial.size() << "+" << tok.temporal.size() << "), grids " << vs.steps << "x"
    << vs.grid_h << "x" << vs.grid_w << " and " << vt.steps << "x" << vt.grid_h << "x" << vt.grid_w << ", "
    << fmt("%.1f s", secs) << " (limit 60 s)";
  return {n == 1280 && tok.spatial.size() == 256 && grids && secs < 60.0, d.str()};
}

Outcome quantizer_matches_brute_force() {
  const std::size_t n_codes = 128, n_tokens = 1024, dim = 8;
  Tensor codes = oracle::random_tensor(n_codes, dim, 101);
  for (std::size_t c = 0; c < dim; ++c) codes(77, c) = codes(12, c);  // duplicate row: tie
  Tensor z = oracle::random_tensor(n_tokens, dim, 102);
  for (std::size_t c = 0; c < dim; ++c) {
    z(0, c) = codes(12, c);  // exact hit on a tied pair
    z(1, c) = codes(5, c);
  }
  std::size_t mismatches = 0, checked = 0;
  const ag::Var projected = ag::constant(codes);
  for (const auto [begin, end] : {std::pair<std::size_t, std::size_t>{0, n_codes}, {0, 64}, {64, n_codes}}) {
    const QuantizedTokens q = quantize_span(ag::constant(z), projected, begin, end, TokenKind::kSpatial);
    const auto want = oracle::brute_force_nearest(z, codes, begin, end);
    for (std::size_t i = 0; i < n_tokens; ++i) mismatches += q.indices[i] != want[i];
    checked += n_tokens;
  }
  return {mismatches == 0, std::to_string(checked) + " tokens over a " + std::to_string(n_codes) +
                               "-entry codebook and two sub-spans, " + std::to_string(mismatches) + " mismatches"};
}

Outcome stop_gradient_semantics() {
  const RunConfig cfg = preset("desk");
  const Corpus c = make_corpus(cfg, 16, 21);
  nn::ParamStore store(0);
  const GcnProjector proj(store, "gcn", cfg.model.d_text, 8, 4);
  randomize(store, 22, 0.3);
  const Tensor zs0 = oracle::random_tensor(5, 4, 23), zt0 = oracle::random_tensor(7, 4, 24);
  const double beta = 0.25, eps = 1e-6;
  const Codebook& book = c.assets->codebook;
  double worst_blocked = 0.0, worst_fd = 0.0;

  // (a) Codebook term: no gradient reaches z; the projector gradient agrees
  // with central differences at frozen indices.
  std::vector<std::size_t> idx_s, idx_t;
  {
    store.zero_grad();
    ag::Var zs(zs0, true), zt(zt0, true);
    const ag::Var p = project_codebook(book, c.assets->adjacency, proj);
    const QuantizedTokens qs = quantize(zs, p, book, TokenKind::kSpatial);
    const QuantizedTokens qt = quantize(zt, p, book, TokenKind::kTemporal);
    idx_s = qs.indices;
    idx_t = qt.indices;
    const VqLoss l = vq_loss(zs, qs.embeddings, zt, qt.embeddings, beta);
    ag::backward(ag::sum_scalars({l.codebook_spatial, l.codebook_temporal}, {1.0, 1.0}));
    for (const ag::Var& z : {zs, zt})
      if (z.has_grad())
        for (double g : z.grad().values()) worst_blocked = std::max(worst_blocked, std::abs(g));
    auto term1 = [&] {
      ag::NoGradGuard guard;
      const Tensor proj_rows = project_codebook(book, c.assets->adjacency, proj).value();
      Tensor qsv(idx_s.size(), 4), qtv(idx_t.size(), 4);
      for (std::size_t i = 0; i < idx_s.size(); ++i)
        for (std::size_t d = 0; d < 4; ++d) qsv(i, d) = proj_rows(idx_s[i], d);
      for (std::size_t i = 0; i < idx_t.size(); ++i)
        for (std::size_t d = 0; d < 4; ++d) qtv(i, d) = proj_rows(idx_t[i], d);
      return oracle::mean_sq_dist(zs0, qsv) + oracle::mean_sq_dist(zt0, qtv);
    };
    for (const auto& [name, p] : store.params()) {
      ag::Var v = p;
      for (std::size_t k = 0; k < std::min<std::size_t>(v.value().size(), 6); ++k) {
        const double orig = v.value()[k];
        v.mutable_value()[k] = orig + eps;
        const double up = term1();
        v.mutable_value()[k] = orig - eps;
        const double down = term1();
        v.mutable_value()[k] = orig;
        const double analytic = v.has_grad() ? v.grad()[k] : 0.0;
        worst_fd = std::max(worst_fd, std::abs(analytic - (up - down) / (2 * eps)));
      }
    }
  }
  // (b) Commitment term: no gradient reaches the projector; the z gradient
  // agrees with central differences of beta * ||z - q||^2.
  double worst_blocked_b = 0.0;
  {
    store.zero_grad();
    ag::Var zs(zs0, true), zt(zt0, true);
    const ag::Var p = project_codebook(book, c.assets->adjacency, proj);
    const QuantizedTokens qs = quantize(zs, p, book, TokenKind::kSpatial);
    const QuantizedTokens qt = quantize(zt, p, book, TokenKind::kTemporal);
    const VqLoss l = vq_loss(zs, qs.embeddings, zt, qt.embeddings, beta);
    ag::backward(ag::scale(ag::sum_scalars({l.commit_spatial, l.commit_temporal}, {1.0, 1.0}), beta));
    for (const auto& [name, v] : store.params())
      if (v.has_grad())
        for (double g : v.grad().values()) worst_blocked_b = std::max(worst_blocked_b, std::abs(g));
    const Tensor qsv = qs.embeddings.value();
    for (std::size_t i = 0; i < zs0.size(); ++i) {
      Tensor up = zs0, down = zs0;
      up[i] += eps;
      down[i] -= eps;
      const double fd = beta * (oracle::mean_sq_dist(up, qsv) - oracle::mean_sq_dist(down, qsv)) / (2 * eps);
      worst_fd = std::max(worst_fd, std::abs(zs.grad()[i] - fd));
    }
  }
  // (c) Straight-through: dL/dz equals dL/dzhat for a downstream loss.
  double worst_st = 0.0;
  {
    store.zero_grad();
    ag::Var zt(zt0, true);
    const ag::Var p = project_codebook(book, c.assets->adjacency, proj);
    const QuantizedTokens qt = quantize(zt, p, book, TokenKind::kTemporal);
    const Tensor w = oracle::random_tensor(4, 3, 25), b = oracle::random_tensor(1, 3, 26);
    const Tensor target = oracle::random_tensor(zt0.rows(), 3, 27);
    auto rec = [&](const ag::Var& x) {
      return ag::mse(ag::linear(x, ag::constant(w), ag::constant(b)), ag::constant(target));
    };
    ag::backward(rec(qt.straight_through));
    const Tensor zhat = qt.embeddings.value();
    ag::NoGradGuard guard;
    for (std::size_t i = 0; i < zhat.size(); ++i) {
      Tensor up = zhat, down = zhat;
      up[i] += eps;
      down[i] -= eps;
      const double fd = (rec(ag::constant(up)).item() - rec(ag::constant(down)).item()) / (2 * eps);
      worst_st = std::max(worst_st, std::abs(zt.grad()[i] - fd));
    }
  }
  const bool pass = worst_blocked <= 1e-6 && worst_blocked_b <= 1e-6 && worst_st <= 1e-6 && worst_fd <= 1e-6;
  std::ostringstream d;
  d << "max |dT1/dz| " << worst_blocked << ", max |dT2/dproj| " << worst_blocked_b << ", straight-through gap "
    << worst_st << ", unblocked FD gap " << worst_fd << " (tol 1e-6)";
  return {pass, d.str()};
}

Outcome end_to_end_gradcheck() {
  RunConfig cfg = preset("desk");
  cfg.model.d_model = 32;
  cfg.model.spatial_blocks = 1;
  cfg.model.temporal_blocks = 1;
  cfg.model.l_spatial = 4;
  cfg.model.l_temporal = 8;
  const Corpus c = make_corpus(cfg, 1, 0);
  DqaeModel model(cfg.model, c.assets, 7);
  randomize(model.params(), 8, 0.1);
  const LossWeights weights{1.0, 1.0, 0.0, 0.0};
  const std::vector<VideoClip> batch{c.clips[0]};
  // Stop-gradient and straight-through constants are frozen at the base
  // point, so the differences probe the function backward() differentiates.
  ag::SurrogateTape tape;
  auto loss = [&] {
    ag::NoGradGuard guard;
    ag::SurrogateTape::Scope replay(tape, ag::SurrogateTape::Mode::kReplay);
    return batch_loss(model, batch, weights).total.item();
  };
  auto tokens = [&] {
    ag::NoGradGuard guard;
    return model.tokenize(c.clips[0]);
  };
  model.params().zero_grad();
  {
    ag::SurrogateTape::Scope record(tape, ag::SurrogateTape::Mode::kRecord);
    ag::backward(batch_loss(model, batch, weights).total);
  }
  const TokenSequence base = tokens();

  std::vector<std::string> names;
  for (const auto& [name, p] : model.params().params()) names.push_back(name);
  std::mt19937_64 rng(2024);
  const double eps = 1e-4, floor = 1e-6;
  std::size_t checked = 0, failed = 0, skipped = 0;
  double worst = 0.0;
  std::string worst_name;
  while (checked < 40 && skipped < 200) {
    const std::string& name = names[rng() % names.size()];
    ag::Var v = model.params().get(name);
    const std::size_t k = rng() % v.value().size();
    const double orig = v.value()[k];
    v.mutable_value()[k] = orig + eps;
    const double up = loss();
    const bool same_up = tokens() == base;
    v.mutable_value()[k] = orig - eps;
    const double down = loss();
    const bool same_down = tokens() == base;
    v.mutable_value()[k] = orig;
    if (!same_up || !same_down) {
      ++skipped;  // a code assignment flipped inside the probe
      continue;
    }
    const double numeric = (up - down) / (2 * eps);
    const double analytic = v.has_grad() ? v.grad()[k] : 0.0;
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    if (rel > worst) {
      worst = rel;
      worst_name = name + "[" + std::to_string(k) + "]";
    }
    if (std::getenv("SWEETTOK_GRADCHECK_VERBOSE")) std::fprintf(stderr, "%s[%zu] a=%.9g n=%.9g rel=%.3g\n", name.c_str(), k, analytic, numeric, rel);
    failed += rel >= 1e-3;
    ++checked;
  }
  std::ostringstream d;
  d << checked << " parameters (" << skipped << " probes skipped for index flips), worst rel " << worst << " at "
    << worst_name << " (tol 1e-3)";
  return {checked >= 16 && failed == 0, d.str()};
}

Outcome decoupling_isolation() {
  const RunConfig cfg = preset("desk");
  const Corpus c = make_corpus(cfg, 2, 0);
  DqaeModel model(cfg.model, c.assets, 3);
  Tensor before;
  {
    ag::NoGradGuard guard;
    before = model.trace(c.clips[0], model.project()).v_s_tilde.data.value();
  }
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.5);
  std::size_t perturbed = 0;
  for (auto& [name, p] : model.params().params()) {
    if (!DqaeModel::is_temporal_parameter(name)) continue;
    ag::Var v = p;
    for (double& x : v.mutable_value().values()) x += n(rng);
    ++perturbed;
  }
  Tensor after;
  {
    ag::NoGradGuard guard;
    after = model.trace(c.clips[0], model.project()).v_s_tilde.data.value();
  }
  const bool spatial_same = before == after;

  RunConfig ft = cfg;
  ft.train.total_steps = 20;
  ft.train.warmup_steps = 2;
  DqaeModel fresh(cfg.model, c.assets, 4);
  const TensorMap start = snapshot(fresh.params());
  Trainer trainer(fresh, ft.train, TrainMode::kImage);
  while (trainer.current_step() < ft.train.total_steps) trainer.step(c.clips);
  const TensorMap end = snapshot(fresh.params());
  std::size_t temporal = 0, temporal_changed = 0, spatial_changed = 0;
  for (const auto& [name, t] : start) {
    const bool changed = !(t == end.at(name));
    if (DqaeModel::is_temporal_parameter(name)) {
      ++temporal;
      temporal_changed += changed;
    } else {
      spatial_changed += changed;
    }
  }
  std::ostringstream d;
  d << perturbed << " temporal tensors perturbed, spatial decoder output " << (spatial_same ? "identical" : "CHANGED")
    << "; image finetune moved " << temporal_changed << "/" << temporal << " temporal and " << spatial_changed
    << " spatial tensors";
  return {perturbed > 0 && spatial_same && temporal_changed == 0 && spatial_changed > 0, d.str()};
}

Outcome partition_soundness() {
  const RunConfig cfg = preset("desk");
  const Corpus c = make_corpus(cfg, 32, 5);
  DqaeModel model(cfg.model, c.assets, 6);
  const Vocabulary& vocab = c.assets->vocab;
  std::size_t spatial = 0, temporal = 0, bad = 0;
  ag::NoGradGuard guard;
  const ag::Var projected = model.project();
  for (const auto& clip : c.clips) {
    const DqaeModel::Trace tr = model.trace(clip, projected);
    for (std::size_t i : tr.q_s.indices) bad += !is_spatial(vocab.entries.at(i).pos);
    for (std::size_t i : tr.q_t.indices) bad += !is_temporal(vocab.entries.at(i).pos);
    spatial += tr.q_s.indices.size();
    temporal += tr.q_t.indices.size();
    const TokenSequence tok = model.tokenize(clip, projected);
    for (std::size_t i : tok.spatial) bad += i >= vocab.spatial_size();
    for (std::size_t i : tok.temporal) bad += i >= vocab.temporal_size();
  }
  std::ostringstream d;
  d << c.clips.size() << " clips, " << spatial << " spatial and " << temporal << " temporal indices, " << bad
    << " outside their part of speech";
  return {bad == 0 && spatial > 0 && temporal > 0, d.str()};
}

RunConfig overfit_config() {
  RunConfig cfg = preset("desk");
  cfg.train.total_steps = 1000;
  return cfg;
}

Outcome overfit_two_clips() {
  const RunConfig cfg = overfit_config();
  const Corpus c = make_corpus(cfg, 2, cfg.data.seed);
  auto model = make_tokenizer(Strategy::kDecoupledQuery, cfg.model, c.assets, cfg.train.seed);
  Trainer trainer(*model, cfg.train);
  const double initial = trainer.step(c.clips).l2;
  while (trainer.current_step() < cfg.train.total_steps) trainer.step(c.clips);
  const MetricsReport r = evaluate(*model, c.clips);
  const double ratio = r.l2 / initial;
  std::ostringstream d;
  d << cfg.train.total_steps << " steps, L2 " << initial << " -> " << r.l2 << " (ratio " << fmt("%.4f", ratio)
    << ", limit 0.1), PSNR " << fmt("%.2f", r.psnr) << " dB (limit 25)";
  return {ratio <= 0.1 && r.psnr >= 25.0, d.str()};
}

Outcome ablation_ordering() {
  RunConfig cfg = overfit_config();
  const Corpus c = make_corpus(cfg, 2, cfg.data.seed);
  std::size_t held = 0;
  std::ostringstream d;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto rows = run_ablation({Strategy::kDecoupledQuery, Strategy::kCoupledQuery, Strategy::kDownsample},
                                   c.clips, c.assets, cfg, seed);
    const double dq = rows[0].final_l2, cq = rows[1].final_l2, ds = rows[2].final_l2;
    const bool ok = dq <= cq && cq <= ds;
    held += ok;
    d << "seed " << seed << ": " << fmt("%.5f", dq) << " / " << fmt("%.5f", cq) << " / " << fmt("%.5f", ds)
      << (ok ? " holds" : " violated") << "; ";
  }
  d << "decoupled/coupled/downsample at " << cfg.train.total_steps << " steps, " << cfg.model.token_count()
    << " tokens each, held in " << held << "/3 (need 2)";
  return {held >= 2, d.str()};
}

Outcome determinism_and_resume() {
  RunConfig cfg = preset("desk");
  cfg.train.total_steps = 40;
  cfg.train.warmup_steps = 5;
  const Corpus c = make_corpus(cfg, 2, 0);
  auto run = [&](std::size_t until, Trainer& t) {
    std::vector<std::string> log;
    while (t.current_step() < until) {
      const LossBreakdown b = t.step(c.clips);
      log.push_back(format_log_line(t.current_step(), lr_at(t.current_step(), cfg.train), b));
    }
    return log;
  };
  const fs::path dir = fs::path(SWEETTOK_TEST_TMP) / "acceptance";
  fs::create_directories(dir);
  auto read = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };

  auto m1 = make_tokenizer(cfg.strategy, cfg.model, c.assets, cfg.train.seed);
  Trainer t1(*m1, cfg.train);
  const auto full = run(cfg.train.total_steps, t1);
  t1.save_checkpoint((dir / "full.bin").string(), cfg);

  auto m2 = make_tokenizer(cfg.strategy, cfg.model, c.assets, cfg.train.seed);
  Trainer t2(*m2, cfg.train);
  const auto repeat = run(cfg.train.total_steps, t2);

  auto m3 = make_tokenizer(cfg.strategy, cfg.model, c.assets, cfg.train.seed);
  Trainer t3(*m3, cfg.train);
  auto resumed = run(cfg.train.total_steps / 2, t3);
  t3.save_checkpoint((dir / "half.bin").string(), cfg);
  auto m4 = make_tokenizer(cfg.strategy, cfg.model, c.assets, 999);
  Trainer t4(*m4, cfg.train);
  t4.load_checkpoint((dir / "half.bin").string());
  const auto rest = run(cfg.train.total_steps, t4);
  resumed.insert(resumed.end(), rest.begin(), rest.end());
  t4.save_checkpoint((dir / "resumed.bin").string(), cfg);

  const bool logs_same = full == repeat;
  const bool resume_same = full == resumed && snapshot(m1->params()) == snapshot(m4->params()) &&
                           t1.ema() == t4.ema() && read(dir / "full.bin") == read(dir / "resumed.bin");
  std::ostringstream d;
  d << full.size() << "-step logs " << (logs_same ? "identical" : "DIFFER") << "; resume at step "
    << cfg.train.total_steps / 2 << " " << (resume_same ? "matches" : "DIFFERS")
    << " (logs, weights, EMA, checkpoint bytes)";
  return {logs_same && resume_same, d.str()};
}

Outcome codebook_fixtures() {
  std::size_t failures = 0;
  std::ostringstream d;
  // Vocabulary: hand fixture and frequency oracle.
  {
    const CaptionCorpus hand = parse_captions("c0\tred/ADJ ball/NOUN rolls/VERB slowly/ADV ball/NOUN\n");
    const Vocabulary v = build_vocabulary(hand, 1);
    const std::vector<VocabEntry> want{
        {"ball", Pos::kNoun, 2}, {"red", Pos::kAdjective, 1}, {"rolls", Pos::kVerb, 1}, {"slowly", Pos::kAdverb, 1}};
    failures += !(v.entries == want);
    const CaptionCorpus corpus = captions_of(synthesize_corpus(3, 64, MotionSpec{}, 5, 32, 32));
    for (std::size_t min_freq : {1u, 5u}) {
      std::vector<VocabEntry> expect;
      for (const auto& [key, freq] : oracle::word_counts(corpus))
        if (freq >= min_freq) expect.push_back({key.second, static_cast<Pos>(key.first), freq});
      failures += !(build_vocabulary(corpus, min_freq).entries == expect);
    }
  }
  // Graph: window boundary and all-pairs oracle.
  {
    const CaptionCorpus hand = parse_captions("c0\ta/NOUN b/NOUN c/NOUN d/NOUN e/NOUN f/NOUN\n");
    const Vocabulary v = build_vocabulary(hand, 1);
    const CooccurrenceGraph g = build_graph(hand, v, 5);
    const auto at = [&](const char* w) { return *v.find(w, Pos::kNoun); };
    failures += !g.has_edge(at("a"), at("e")) || g.has_edge(at("a"), at("f")) || !g.has_edge(at("b"), at("f"));
    const CaptionCorpus corpus = captions_of(synthesize_corpus(11, 40, MotionSpec{}, 5, 32, 32));
    const Vocabulary cv = build_vocabulary(corpus, 2);
    for (std::size_t window : {2u, 3u, 5u}) {
      const CooccurrenceGraph cg = build_graph(corpus, cv, window);
      failures += std::set(cg.edges.begin(), cg.edges.end()) != oracle::graph_edges(corpus, cv, window);
    }
  }
  // Projector: sparse GCN against the dense scalar loop.
  double worst = 0.0;
  {
    const CaptionCorpus corpus = captions_of(synthesize_corpus(5, 12, MotionSpec{}, 5, 32, 32));
    const Vocabulary v = build_vocabulary(corpus, 1);
    const CooccurrenceGraph g = build_graph(corpus, v);
    const CodebookAssets assets = make_codebook_assets(v, g, pseudo_embeddings(v, 16));
    nn::ParamStore store(0);
    const GcnProjector proj(store, "gcn", 16, 12, 8);
    randomize(store, 2, 0.3);
    const Tensor got = project_codebook(assets.codebook, assets.adjacency, proj).value();
    const Tensor want = oracle::gcn(oracle::normalized_adjacency(g.nodes, g.edges), assets.codebook.raw_embeddings, proj);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  d << failures << " count mismatches (vocabulary, window boundary, edge sets), projector max error " << worst
    << " (tol 1e-6)";
  return {failures == 0 && worst <= 1e-6, d.str()};
}

}  // namespace

// Optional arguments select criteria by number; default runs all.
int main(int argc, char** argv) {
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"paper-scale shapes", shapes_at_paper_scale},
      {"quantizer equals brute force", quantizer_matches_brute_force},
      {"stop-gradient semantics", stop_gradient_semantics},
      {"end-to-end gradient check", end_to_end_gradcheck},
      {"decoupling isolation", decoupling_isolation},
      {"partition soundness", partition_soundness},
      {"overfit two clips", overfit_two_clips},
      {"ablation ordering", ablation_ordering},
      {"determinism and resume", determinism_and_resume},
      {"codebook fixtures", codebook_fixtures},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s criterion %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
