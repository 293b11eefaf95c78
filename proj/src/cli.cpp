#include "sweettok/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <boost/uuid/detail/sha1.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "sweettok/config.hpp"
#include "sweettok/dqae.hpp"
#include "sweettok/errors.hpp"
#include "sweettok/mlc.hpp"
#include "sweettok/training.hpp"

namespace sweettok {

std::string git_blob_sha1(const std::string& content) {
  boost::uuids::detail::sha1 h;
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  h.process_bytes(header.data(), header.size());
  h.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type digest;
  h.get_digest(digest);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", digest[i]);
  return std::string(buf, 40);
}

std::string encode_grid_ppm(const VideoClip& original, const VideoClip& reconstruction) {
  if (!original.same_shape(reconstruction)) throw ValidationError("grid: original and reconstruction shapes differ");
  const RawVideo a = denormalize(original);
  const RawVideo b = denormalize(reconstruction);
  const std::size_t t_n = original.frames, h = original.height, w = original.width;
  const std::size_t cols = t_n * w, rows = 3 * h;
  std::string header = "P6\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  std::string out = header;
  out.resize(header.size() + cols * rows * 3);
  auto* px = reinterpret_cast<unsigned char*>(out.data() + header.size());
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t t = 0; t < t_n; ++t) {
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t src = ((t * h + y) * w + x) * 3 + c;
            const int va = a.samples[src], vb = b.samples[src];
            const int v = r == 0 ? va : r == 1 ? vb : std::abs(va - vb);
            px[((r * h + y) * cols + t * w + x) * 3 + c] = static_cast<unsigned char>(v);
          }
        }
      }
    }
  }
  return out;
}

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Options {
  std::string config_path;
  std::string preset_name = "desk";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  int threads = 0;
  bool ema = false;
  std::vector<std::string> clips;
  std::string captions;
  std::string embeddings = "pseudo";
  std::string tokens;
  std::string resume;
  std::optional<std::size_t> stop_at;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> strategies{"decoupled", "coupled", "downsample"};
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << content;
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void make_dir(const std::string& dir) {
  if (dir.empty()) throw ValidationError("--out: an output directory is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// One per artifact directory: what ran, on which inputs, with which config.
class Manifest {
 public:
  Manifest(const std::string& command, const std::vector<std::string>& args, const Options& opt,
           const RunConfig& cfg) {
    j_["command"] = command;
    j_["args"] = args;
    j_["config_path"] = opt.config_path;
    j_["preset"] = opt.preset_name;
    j_["seed"] = cfg.train.seed;
    j_["config_sha1"] = git_blob_sha1(to_ini(cfg));
    j_["inputs"] = json::array();
    j_["outputs"] = json::array();
    j_["started_at"] = utc_now();
  }
  void input(const std::string& path) { j_["inputs"].push_back(path); }
  void output(const fs::path& path) { j_["outputs"].push_back(path.string()); }
  void write(const std::string& dir) {
    j_["finished_at"] = utc_now();
    write_file(fs::path(dir) / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  json j_;
};

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = preset(opt.preset_name);
  if (!opt.config_path.empty()) cfg = load_config(opt.config_path, cfg);
  if (opt.seed) cfg.train.seed = *opt.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::string> expand_clip_paths(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".swtv") found.push_back(e.path().string());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw IoError("no such clip file or directory: " + p);
    }
  }
  if (out.empty()) throw ValidationError("no .swtv clips found");
  return out;
}

std::vector<VideoClip> load_clips(const std::vector<std::string>& paths, const ModelConfig& model) {
  std::vector<VideoClip> clips;
  for (const auto& p : expand_clip_paths(paths)) {
    VideoClip clip = load_clip(p, model);
    if (clip.frames != model.frames || clip.height != model.height || clip.width != model.width) {
      throw ValidationError("clip " + p + " is " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) +
                            "x" + std::to_string(clip.width) + " but the config expects " +
                            std::to_string(model.frames) + "x" + std::to_string(model.height) + "x" +
                            std::to_string(model.width));
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<SyntheticSample> synthetic(const RunConfig& cfg) {
  return synthesize_corpus(cfg.data.seed, cfg.data.n_clips, cfg.data.motion, cfg.model.frames, cfg.model.height,
                           cfg.model.width);
}

std::vector<VideoClip> corpus_clips(const RunConfig& cfg) {
  if (!cfg.data.clips_dir.empty()) return load_clips({cfg.data.clips_dir}, cfg.model);
  std::vector<VideoClip> clips;
  for (auto& s : synthetic(cfg)) clips.push_back(std::move(s.clip));
  return clips;
}

CaptionCorpus corpus_captions(const RunConfig& cfg) {
  if (!cfg.data.clips_dir.empty()) return read_captions((fs::path(cfg.data.clips_dir) / "captions.tsv").string());
  return captions_of(synthetic(cfg));
}

std::shared_ptr<const CodebookAssets> corpus_assets(const RunConfig& cfg) {
  if (!cfg.data.codebook_dir.empty()) {
    return std::make_shared<const CodebookAssets>(load_codebook_assets(cfg.data.codebook_dir));
  }
  return std::make_shared<const CodebookAssets>(
      build_codebook_assets(corpus_captions(cfg), cfg.data.min_freq, cfg.data.window, "pseudo", cfg.model.d_text));
}

// Training writes the codebook next to its checkpoints.
std::shared_ptr<const CodebookAssets> checkpoint_assets(const std::string& checkpoint, const RunConfig& cfg) {
  const fs::path dir = fs::path(checkpoint).parent_path() / "codebook";
  if (fs::exists(dir / "vocab.tsv")) return std::make_shared<const CodebookAssets>(load_codebook_assets(dir.string()));
  return corpus_assets(cfg);
}

struct LoadedModel {
  Checkpoint ckpt;
  std::shared_ptr<const CodebookAssets> assets;
  std::unique_ptr<VideoTokenizer> model;
};

LoadedModel load_model(const Options& opt) {
  if (opt.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  LoadedModel m;
  m.ckpt = read_checkpoint(opt.checkpoint);
  m.ckpt.run.validate();
  m.assets = checkpoint_assets(opt.checkpoint, m.ckpt.run);
  m.model = make_tokenizer(m.ckpt.run.strategy, m.ckpt.run.model, m.assets, m.ckpt.run.train.seed);
  load_params(m.model->params(), opt.ema ? m.ckpt.ema : m.ckpt.params);
  return m;
}

std::vector<VideoClip> input_clips(const Options& opt, const RunConfig& cfg) {
  return opt.clips.empty() ? corpus_clips(cfg) : load_clips(opt.clips, cfg.model);
}

const DqaeModel& require_decoupled(const VideoTokenizer& model, const std::string& what) {
  const auto* dqae = dynamic_cast<const DqaeModel*>(&model);
  if (!dqae) throw ValidationError(what + ": needs a checkpoint of the decoupled strategy");
  return *dqae;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  make_dir(opt.out);
  Manifest manifest("synth", args, opt, cfg);
  const auto samples = synthetic(cfg);
  const fs::path clip_dir = fs::path(opt.out) / "clips";
  make_dir(clip_dir.string());
  for (const auto& s : samples) {
    const fs::path p = clip_dir / (s.clip.clip_id + ".swtv");
    save_clip(p.string(), s.clip);
    manifest.output(p);
  }
  const fs::path captions = fs::path(opt.out) / "captions.tsv";
  write_captions(captions.string(), captions_of(samples));
  manifest.output(captions);
  manifest.write(opt.out);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(corpus_checksum(samples)));
  out << "clips=" << samples.size() << " checksum=" << buf << "\n";
  return kExitOk;
}

int cmd_build_codebook(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  make_dir(opt.out);
  Manifest manifest("build-codebook", args, opt, cfg);
  CaptionCorpus captions;
  if (!opt.captions.empty()) {
    captions = read_captions(opt.captions);
    manifest.input(opt.captions);
  } else {
    captions = corpus_captions(cfg);
  }
  if (opt.embeddings != "pseudo") manifest.input(opt.embeddings);
  const CodebookAssets assets =
      build_codebook_assets(captions, cfg.data.min_freq, cfg.data.window, opt.embeddings, cfg.model.d_text);
  save_codebook_assets(opt.out, assets);
  for (const char* f : {"vocab.tsv", "graph.tsv", "embeddings.swte"}) manifest.output(fs::path(opt.out) / f);
  manifest.write(opt.out);
  out << "spatial=" << assets.vocab.spatial_size() << " temporal=" << assets.vocab.temporal_size() << "\n";
  return kExitOk;
}

// Shared loop of train and finetune-image.
int train_loop(Trainer& trainer, const RunConfig& cfg, const std::vector<VideoClip>& clips,
               const CodebookAssets& assets, const Options& opt, Manifest& manifest, std::ostream& out) {
  const fs::path dir(opt.out);
  make_dir((dir / "codebook").string());
  save_codebook_assets((dir / "codebook").string(), assets);
  manifest.output(dir / "codebook");
  std::ofstream log(dir / "train.log", std::ios::binary);
  if (!log) throw IoError("cannot write " + (dir / "train.log").string());
  manifest.output(dir / "train.log");
  const std::size_t stop = opt.stop_at ? std::min(*opt.stop_at, cfg.train.total_steps) : cfg.train.total_steps;
  LossBreakdown last;
  try {
    while (trainer.current_step() < stop) {
      last = trainer.step(clips);
      const std::size_t step = trainer.current_step();
      log << format_log_line(step, lr_at(step, cfg.train), last) << "\n";
      if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0) {
        const fs::path p = dir / ("checkpoint_" + std::to_string(step) + ".bin");
        trainer.save_checkpoint(p.string(), cfg);
        manifest.output(p);
      }
    }
  } catch (const NumericError& e) {
    log.flush();
    write_file(dir / "failure.txt", std::string(e.what()) + "\n");
    throw;
  }
  log.close();
  const fs::path ckpt = dir / "checkpoint.bin";
  trainer.save_checkpoint(ckpt.string(), cfg);
  manifest.output(ckpt);
  manifest.write(opt.out);
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%zu l2=%.9g vq=%.9g total=%.9g\n", trainer.current_step(), last.l2, last.vq,
                last.total);
  out << buf;
  return kExitOk;
}

int cmd_train(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg;
  std::shared_ptr<const CodebookAssets> assets;
  if (!opt.resume.empty()) {
    cfg = read_checkpoint(opt.resume).run;
    cfg.validate();
    assets = checkpoint_assets(opt.resume, cfg);
  } else {
    cfg = resolve_config(opt);
    assets = corpus_assets(cfg);
  }
  make_dir(opt.out);
  Manifest manifest("train", args, opt, cfg);
  if (!opt.resume.empty()) manifest.input(opt.resume);
  if (!cfg.data.codebook_dir.empty()) manifest.input(cfg.data.codebook_dir);
  const std::vector<VideoClip> clips = corpus_clips(cfg);
  auto model = make_tokenizer(cfg.strategy, cfg.model, assets, cfg.train.seed);
  Trainer trainer(*model, cfg.train);
  if (!opt.resume.empty()) trainer.load_checkpoint(opt.resume);
  return train_loop(trainer, cfg, clips, *assets, opt, manifest, out);
}

int cmd_finetune_image(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg;
  std::shared_ptr<const CodebookAssets> assets;
  std::optional<Checkpoint> ckpt;
  if (!opt.checkpoint.empty()) {
    ckpt = read_checkpoint(opt.checkpoint);
    cfg = ckpt->run;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path, cfg);
    if (opt.seed) cfg.train.seed = *opt.seed;
    cfg.validate();
    assets = checkpoint_assets(opt.checkpoint, ckpt->run);
  } else {
    cfg = resolve_config(opt);
    assets = corpus_assets(cfg);
  }
  if (cfg.strategy != Strategy::kDecoupledQuery) {
    throw ValidationError("finetune-image: model.strategy must be decoupled");
  }
  make_dir(opt.out);
  Manifest manifest("finetune-image", args, opt, cfg);
  if (ckpt) manifest.input(opt.checkpoint);
  auto model = make_tokenizer(cfg.strategy, cfg.model, assets, cfg.train.seed);
  if (ckpt) load_params(model->params(), ckpt->params);
  const std::vector<VideoClip> clips = opt.clips.empty() ? corpus_clips(cfg) : load_clips(opt.clips, cfg.model);
  for (const auto& p : opt.clips) manifest.input(p);
  Trainer trainer(*model, cfg.train, TrainMode::kImage);
  return train_loop(trainer, cfg, clips, *assets, opt, manifest, out);
}

int cmd_encode(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const LoadedModel m = load_model(opt);
  const auto clips = input_clips(opt, m.ckpt.run);
  std::vector<TokenSequence> records;
  {
    ag::NoGradGuard guard;
    const ag::Var projected = m.model->project();
    for (const auto& clip : clips) records.push_back(m.model->tokenize(clip, projected));
  }
  const std::string text = format_tokens(records);
  if (opt.out.empty()) {
    out << text;
    return kExitOk;
  }
  make_dir(opt.out);
  Manifest manifest("encode", args, opt, m.ckpt.run);
  manifest.input(opt.checkpoint);
  for (const auto& p : opt.clips) manifest.input(p);
  const fs::path path = fs::path(opt.out) / "tokens.tsv";
  write_file(path, text);
  manifest.output(path);
  manifest.write(opt.out);
  out << "clips=" << records.size() << " tokens_per_clip=" << m.ckpt.run.model.token_count() << "\n";
  return kExitOk;
}

int cmd_decode(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const LoadedModel m = load_model(opt);
  const DqaeModel& model = require_decoupled(*m.model, "decode");
  if (opt.tokens.empty()) throw ValidationError("decode: --tokens is required");
  const auto records = parse_tokens(read_file(opt.tokens));
  make_dir(opt.out);
  Manifest manifest("decode", args, opt, m.ckpt.run);
  manifest.input(opt.checkpoint);
  manifest.input(opt.tokens);
  ag::NoGradGuard guard;
  const ag::Var projected = model.project();
  for (const auto& r : records) {
    const VideoClip clip = model.decode_tokens(r, projected);
    const fs::path p = fs::path(opt.out) / (r.clip_id + ".swtv");
    save_clip(p.string(), clip);
    manifest.output(p);
  }
  manifest.write(opt.out);
  out << "clips=" << records.size() << "\n";
  return kExitOk;
}

int cmd_reconstruct(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const LoadedModel m = load_model(opt);
  const auto clips = input_clips(opt, m.ckpt.run);
  make_dir(opt.out);
  Manifest manifest("reconstruct", args, opt, m.ckpt.run);
  manifest.input(opt.checkpoint);
  for (const auto& p : opt.clips) manifest.input(p);
  MetricsReport mean;
  mean.l2 = 0.0;
  mean.ssim = 0.0;
  json per_clip = json::object();
  for (const auto& clip : clips) {
    const VideoClip rec = m.model->reconstruct(clip);
    const fs::path base = fs::path(opt.out) / clip.clip_id;
    save_clip(base.string() + ".swtv", rec);
    write_file(base.string() + ".ppm", encode_grid_ppm(clip, rec));
    manifest.output(base.string() + ".swtv");
    manifest.output(base.string() + ".ppm");
    const MetricsReport r = compute_metrics(clip, rec);
    per_clip[clip.clip_id] = json::parse(format_metrics(r));
    mean.l2 += r.l2 / static_cast<double>(clips.size());
    mean.ssim += r.ssim / static_cast<double>(clips.size());
  }
  mean.psnr = mean.l2 > 0.0 ? -10.0 * std::log10(mean.l2) : INFINITY;
  write_file(fs::path(opt.out) / "metrics.json", format_metrics(mean));
  write_file(fs::path(opt.out) / "metrics_per_clip.json", per_clip.dump(2) + "\n");
  manifest.output(fs::path(opt.out) / "metrics.json");
  manifest.output(fs::path(opt.out) / "metrics_per_clip.json");
  manifest.write(opt.out);
  out << format_metrics(mean);
  return kExitOk;
}

int cmd_eval(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const LoadedModel m = load_model(opt);
  const auto clips = input_clips(opt, m.ckpt.run);
  const std::string text = format_metrics(evaluate(*m.model, clips));
  out << text;
  if (!opt.out.empty()) {
    make_dir(opt.out);
    Manifest manifest("eval", args, opt, m.ckpt.run);
    manifest.input(opt.checkpoint);
    for (const auto& p : opt.clips) manifest.input(p);
    write_file(fs::path(opt.out) / "metrics.json", text);
    manifest.output(fs::path(opt.out) / "metrics.json");
    manifest.write(opt.out);
  }
  return kExitOk;
}

int cmd_words(const Options& opt, const std::vector<std::string>& /*args*/, std::ostream& out) {
  const LoadedModel m = load_model(opt);
  require_decoupled(*m.model, "words");
  const auto clips = input_clips(opt, m.ckpt.run);
  ag::NoGradGuard guard;
  const ag::Var projected = m.model->project();
  const Vocabulary& vocab = m.assets->vocab;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const TokenSequence t = m.model->tokenize(clips[i], projected);
    if (i) out << "\n";
    out << "clip " << t.clip_id << "\n";
    for (const auto& [label, idx, kind] : {std::tuple{"[spatial]", &t.spatial, TokenKind::kSpatial},
                                           std::tuple{"[temporal]", &t.temporal, TokenKind::kTemporal}}) {
      out << label << "\n";
      const auto words = indices_to_words(*idx, kind, vocab);
      for (std::size_t k = 0; k < words.size(); ++k) out << (k ? " " : "") << words[k];
      out << "\n";
    }
  }
  return kExitOk;
}

int cmd_ablate(const Options& opt, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  std::vector<Strategy> strategies;
  for (const auto& s : opt.strategies) strategies.push_back(parse_strategy(s));
  if (opt.seeds.empty()) throw ValidationError("ablate: --seeds must not be empty");
  const auto clips = corpus_clips(cfg);
  const auto assets = corpus_assets(cfg);
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : opt.seeds) {
    const auto r = run_ablation(strategies, clips, assets, cfg, seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const std::string table = format_ablation(rows);
  out << table;
  if (!opt.out.empty()) {
    make_dir(opt.out);
    Manifest manifest("ablate", args, opt, cfg);
    write_file(fs::path(opt.out) / "ablation.tsv", table);
    manifest.output(fs::path(opt.out) / "ablation.tsv");
    manifest.write(opt.out);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video tokenizer with a language codebook", "sweettok"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "INI config overriding the preset");
    sub->add_option("--preset", opt.preset_name, "Base preset")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--seed", opt.seed, "Training seed override");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--threads", opt.threads, "OpenMP worker count (0 keeps the default)");
  };
  auto model_input = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
    sub->add_flag("--ema", opt.ema, "Use the EMA weights");
    sub->add_option("--clips", opt.clips, "Clip files or directories (default: the training corpus)");
  };

  auto* synth = app.add_subcommand("synth", "Write the synthetic corpus as clip files and captions");
  common(synth);
  auto* build = app.add_subcommand("build-codebook", "Build vocabulary, graph and embeddings");
  common(build);
  build->add_option("--captions", opt.captions, "Caption file (default: corpus captions)");
  build->add_option("--embeddings", opt.embeddings, "SWTE embedding file or 'pseudo'");
  auto* train = app.add_subcommand("train", "Train a tokenizer");
  common(train);
  train->add_option("--resume", opt.resume, "Continue from a checkpoint");
  train->add_option("--stop-at", opt.stop_at, "Stop after this step");
  auto* finetune = app.add_subcommand("finetune-image", "Finetune the spatial branch on first frames");
  common(finetune);
  finetune->add_option("--checkpoint", opt.checkpoint, "Starting checkpoint (default: fresh model)");
  finetune->add_option("--clips", opt.clips, "Clip files or directories (default: the training corpus)");
  finetune->add_option("--stop-at", opt.stop_at, "Stop after this step");
  auto* encode = app.add_subcommand("encode", "Clips to token indices");
  common(encode);
  model_input(encode);
  auto* decode = app.add_subcommand("decode", "Token indices to clips");
  common(decode);
  decode->add_option("--checkpoint", opt.checkpoint, "Checkpoint file")->required();
  decode->add_flag("--ema", opt.ema, "Use the EMA weights");
  decode->add_option("--tokens", opt.tokens, "Token file")->required();
  auto* recon = app.add_subcommand("reconstruct", "Reconstruct clips with metrics and grid images");
  common(recon);
  model_input(recon);
  auto* ablate = app.add_subcommand("ablate", "Compare compression strategies");
  common(ablate);
  ablate->add_option("--seeds", opt.seeds, "Seeds")->delimiter(',');
  ablate->add_option("--strategies", opt.strategies, "Strategies")->delimiter(',');
  auto* words = app.add_subcommand("words", "Print the words behind each clip's tokens");
  common(words);
  model_input(words);
  auto* eval = app.add_subcommand("eval", "Mean reconstruction metrics");
  common(eval);
  model_input(eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (opt.threads > 0) omp_set_num_threads(opt.threads);
  try {
    if (*synth) return cmd_synth(opt, args, out);
    if (*build) return cmd_build_codebook(opt, args, out);
    if (*train) return cmd_train(opt, args, out);
    if (*finetune) return cmd_finetune_image(opt, args, out);
    if (*encode) return cmd_encode(opt, args, out);
    if (*decode) return cmd_decode(opt, args, out);
    if (*recon) return cmd_reconstruct(opt, args, out);
    if (*ablate) return cmd_ablate(opt, args, out);
    if (*words) return cmd_words(opt, args, out);
    if (*eval) return cmd_eval(opt, args, out);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitValidation;
}

}  // namespace sweettok
