#include "sweettok/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sweettok/errors.hpp"

namespace sweettok {
namespace {

namespace pt = boost::property_tree;

// Collects every failed check so one error names all offending fields.
struct Problems {
  std::vector<std::string> items;
  void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) items.push_back(field + ": " + why);
  }
  void raise() const {
    if (items.empty()) return;
    std::string msg = "invalid config (" + std::to_string(items.size()) + " problem" + (items.size() > 1 ? "s" : "") + ")";
    for (const auto& item : items) msg += "\n  " + item;
    throw ValidationError(msg);
  }
};

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& field) {
  const auto node = tree.get_optional<std::string>(key);
  if (!node) return;
  try {
    if constexpr (std::is_same_v<T, double>) {
      std::size_t used = 0;
      field = std::stod(*node, &used);
      if (used != node->size()) throw std::invalid_argument("trailing characters");
    } else if constexpr (std::is_same_v<T, std::string>) {
      field = *node;
    } else {
      if (!node->empty() && node->front() == '-') throw std::invalid_argument("negative");
      std::size_t used = 0;
      field = static_cast<T>(std::stoull(*node, &used));
      if (used != node->size()) throw std::invalid_argument("trailing characters");
    }
  } catch (const std::exception&) {
    throw ValidationError(key + ": cannot parse '" + *node + "'");
  }
}


void check_model(const ModelConfig& c, Problems& p) {
  p.require(c.frames >= 1, "model.frames", "must be >= 1");
  p.require(c.height >= 1 && c.width >= 1, "model.height/width", "must be >= 1");
  p.require(c.patch_t >= 1, "model.patch_t", "must be >= 1");
  p.require(c.patch_h >= 1, "model.patch_h", "must be >= 1");
  p.require(c.patch_w >= 1, "model.patch_w", "must be >= 1");
  p.require(c.patch_t == 0 || c.frames == 0 || (c.frames - 1) % c.patch_t == 0, "model.frames",
            "frames - 1 must be divisible by patch_t (got frames=" + std::to_string(c.frames) +
                ", patch_t=" + std::to_string(c.patch_t) + ")");
  p.require(c.frames > c.patch_t, "model.frames", "need at least one temporal tube (frames >= 1 + patch_t)");
  p.require(c.patch_h == 0 || c.height % c.patch_h == 0, "model.height", "must be divisible by patch_h");
  p.require(c.patch_w == 0 || c.width % c.patch_w == 0, "model.width", "must be divisible by patch_w");
  p.require(c.d_model >= 1, "model.d_model", "must be >= 1");
  p.require(c.n_heads >= 1 && c.d_model % c.n_heads == 0, "model.n_heads", "must divide d_model");
  p.require(c.mlp_ratio >= 1, "model.mlp_ratio", "must be >= 1");
  p.require(c.spatial_blocks >= 1, "model.spatial_blocks", "must be >= 1");
  p.require(c.temporal_blocks >= 1, "model.temporal_blocks", "must be >= 1");
  p.require(c.l_spatial >= 1, "model.l_spatial", "must be >= 1");
  p.require(c.l_temporal >= 1, "model.l_temporal", "must be >= 1");
  p.require(c.d_latent >= 1, "model.d_latent", "must be >= 1");
  p.require(c.d_text >= 1, "model.d_text", "must be >= 1");
  p.require(c.gcn_hidden >= 1, "model.gcn_hidden", "must be >= 1");
  p.require(c.commitment_beta >= 0.0, "model.commitment_beta", "must be >= 0");
  p.require(c.init_std > 0.0, "model.init_std", "must be > 0");
}

void check_train(const TrainConfig& c, Problems& p) {
  p.require(c.max_lr > 0.0, "train.max_lr", "must be > 0");
  p.require(c.min_lr >= 0.0 && c.min_lr <= c.max_lr, "train.min_lr", "must lie in [0, max_lr]");
  p.require(c.total_steps >= 1, "train.total_steps", "must be >= 1");
  p.require(c.warmup_steps <= c.total_steps, "train.warmup_steps", "must be <= total_steps");
  p.require(c.beta1 >= 0.0 && c.beta1 < 1.0, "train.beta1", "must lie in [0, 1)");
  p.require(c.beta2 >= 0.0 && c.beta2 < 1.0, "train.beta2", "must lie in [0, 1)");
  p.require(c.adam_eps > 0.0, "train.adam_eps", "must be > 0");
  p.require(c.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  p.require(c.ema_decay >= 0.0 && c.ema_decay <= 1.0, "train.ema_decay", "must lie in [0, 1]");
  p.require(c.batch_size >= 1, "train.batch_size", "must be >= 1");
  p.require(c.loss_weights.l2 >= 0.0, "train.w_l2", "must be >= 0");
  p.require(c.loss_weights.vq >= 0.0, "train.w_vq", "must be >= 0");
  p.require(c.loss_weights.perceptual >= 0.0, "train.w_perceptual", "must be >= 0");
  p.require(c.loss_weights.adversarial >= 0.0, "train.w_adversarial", "must be >= 0");
}

void check_motion(const MotionSpec& c, Problems& p) {
  p.require(!c.shapes.empty(), "motion.shapes", "must not be empty");
  p.require(!c.colors.empty(), "motion.colors", "must not be empty");
  p.require(!c.backgrounds.empty(), "motion.backgrounds", "must not be empty");
  p.require(c.slow_speed >= 0.0 && c.fast_speed >= 0.0, "motion.speed", "must be >= 0");
  p.require(c.static_fraction >= 0.0 && c.static_fraction <= 1.0, "motion.static_fraction", "must lie in [0, 1]");
  p.require(c.min_size >= 1 && c.min_size <= c.max_size, "motion.min_size", "must lie in [1, max_size]");
}

void check_data(const DataConfig& c, Problems& p) {
  p.require(c.n_clips >= 1, "data.n_clips", "must be >= 1");
  p.require(c.min_freq >= 1, "data.min_freq", "must be >= 1");
  p.require(c.window >= 1, "data.window", "must be >= 1");
  check_motion(c.motion, p);
}

}  // namespace

#define SWEETTOK_VALIDATE(Type, fn) \
  void Type::validate() const {     \
    Problems p;                     \
    fn(*this, p);                   \
    p.raise();                      \
  }
SWEETTOK_VALIDATE(ModelConfig, check_model)
SWEETTOK_VALIDATE(TrainConfig, check_train)
SWEETTOK_VALIDATE(MotionSpec, check_motion)
SWEETTOK_VALIDATE(DataConfig, check_data)
#undef SWEETTOK_VALIDATE

void RunConfig::validate() const {
  Problems p;
  check_model(model, p);
  check_train(train, p);
  check_data(data, p);
  p.raise();
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kDecoupledQuery:
      return "decoupled";
    case Strategy::kCoupledQuery:
      return "coupled";
    case Strategy::kDownsample:
      return "downsample";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "decoupled") return Strategy::kDecoupledQuery;
  if (s == "coupled") return Strategy::kCoupledQuery;
  if (s == "downsample") return Strategy::kDownsample;
  throw ValidationError("strategy: unknown value '" + s + "' (expected decoupled, coupled or downsample)");
}

RunConfig preset(const std::string& name) {
  RunConfig cfg;
  if (name == "paper") {
    auto& m = cfg.model;
    m.frames = 17;
    m.height = 256;
    m.width = 256;
    m.patch_t = 4;
    m.patch_h = 8;
    m.patch_w = 8;
    m.d_model = 512;
    m.n_heads = 8;
    m.mlp_ratio = 4;
    m.spatial_blocks = 8;
    m.temporal_blocks = 4;
    m.l_spatial = 256;
    m.l_temporal = 1024;
    m.d_latent = 256;
    m.d_text = 512;
    m.gcn_hidden = 512;
    auto& t = cfg.train;
    t.max_lr = 1e-4;
    t.min_lr = 1e-5;
    t.warmup_steps = 10000;
    t.total_steps = 1000000;
    t.beta1 = 0.9;
    t.beta2 = 0.99;
    t.adam_eps = 1e-8;
    t.weight_decay = 1e-4;
    t.ema_decay = 0.999;
    t.batch_size = 8;
    t.discriminator_start = 20000;
    cfg.data.min_freq = 5;
    cfg.data.window = 5;
    return cfg;
  }
  if (name == "desk") {
    auto& t = cfg.train;
    t.max_lr = 5e-4;
    t.min_lr = 2e-4;
    t.warmup_steps = 20;
    t.total_steps = 300;
    t.batch_size = 2;
    t.weight_decay = 1e-4;
    t.discriminator_start = 0;
    t.loss_weights.vq = 0.1;
    return cfg;
  }
  throw ValidationError("preset: unknown preset '" + name + "' (expected paper or desk)");
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  {
    pt::ptree known;
    std::istringstream in(to_ini(base));
    pt::read_ini(in, known);
    Problems p;
    for (const auto& [section, keys] : tree) {
      if (!keys.data().empty() && keys.empty()) {
        p.require(false, section, "key outside any section");
        continue;
      }
      for (const auto& [key, value] : keys) {
        p.require(known.get_optional<std::string>(pt::ptree::path_type(section + "." + key, '.')).has_value(),
                  section + "." + key, "unknown key");
      }
    }
    p.raise();
  }
  RunConfig cfg = base;
  auto& m = cfg.model;
  read(tree, "model.frames", m.frames);
  read(tree, "model.height", m.height);
  read(tree, "model.width", m.width);
  read(tree, "model.patch_t", m.patch_t);
  read(tree, "model.patch_h", m.patch_h);
  read(tree, "model.patch_w", m.patch_w);
  read(tree, "model.d_model", m.d_model);
  read(tree, "model.n_heads", m.n_heads);
  read(tree, "model.mlp_ratio", m.mlp_ratio);
  read(tree, "model.spatial_blocks", m.spatial_blocks);
  read(tree, "model.temporal_blocks", m.temporal_blocks);
  read(tree, "model.l_spatial", m.l_spatial);
  read(tree, "model.l_temporal", m.l_temporal);
  read(tree, "model.d_latent", m.d_latent);
  read(tree, "model.d_text", m.d_text);
  read(tree, "model.gcn_hidden", m.gcn_hidden);
  read(tree, "model.commitment_beta", m.commitment_beta);
  read(tree, "model.init_std", m.init_std);
  std::string strategy = to_string(cfg.strategy);
  read(tree, "model.strategy", strategy);
  cfg.strategy = parse_strategy(strategy);

  auto& t = cfg.train;
  read(tree, "train.max_lr", t.max_lr);
  read(tree, "train.min_lr", t.min_lr);
  read(tree, "train.warmup_steps", t.warmup_steps);
  read(tree, "train.total_steps", t.total_steps);
  read(tree, "train.beta1", t.beta1);
  read(tree, "train.beta2", t.beta2);
  read(tree, "train.adam_eps", t.adam_eps);
  read(tree, "train.weight_decay", t.weight_decay);
  read(tree, "train.ema_decay", t.ema_decay);
  read(tree, "train.batch_size", t.batch_size);
  read(tree, "train.seed", t.seed);
  read(tree, "train.w_l2", t.loss_weights.l2);
  read(tree, "train.w_vq", t.loss_weights.vq);
  read(tree, "train.w_perceptual", t.loss_weights.perceptual);
  read(tree, "train.w_adversarial", t.loss_weights.adversarial);
  read(tree, "train.discriminator_start", t.discriminator_start);
  read(tree, "train.checkpoint_every", t.checkpoint_every);

  auto& d = cfg.data;
  read(tree, "data.seed", d.seed);
  read(tree, "data.n_clips", d.n_clips);
  read(tree, "data.min_freq", d.min_freq);
  read(tree, "data.window", d.window);
  read(tree, "data.codebook_dir", d.codebook_dir);
  read(tree, "data.clips_dir", d.clips_dir);

  auto& mo = d.motion;
  std::string list;
  if (tree.get_optional<std::string>("motion.shapes")) {
    read(tree, "motion.shapes", list);
    mo.shapes = split_list(list);
  }
  if (tree.get_optional<std::string>("motion.colors")) {
    read(tree, "motion.colors", list);
    mo.colors = split_list(list);
  }
  if (tree.get_optional<std::string>("motion.backgrounds")) {
    read(tree, "motion.backgrounds", list);
    mo.backgrounds = split_list(list);
  }
  read(tree, "motion.slow_speed", mo.slow_speed);
  read(tree, "motion.fast_speed", mo.fast_speed);
  read(tree, "motion.static_fraction", mo.static_fraction);
  read(tree, "motion.min_size", mo.min_size);
  read(tree, "motion.max_size", mo.max_size);
  return cfg;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream o;
  const auto& m = cfg.model;
  o << "[model]\n"
    << "strategy = " << to_string(cfg.strategy) << "\n"
    << "frames = " << m.frames << "\nheight = " << m.height << "\nwidth = " << m.width << "\n"
    << "patch_t = " << m.patch_t << "\npatch_h = " << m.patch_h << "\npatch_w = " << m.patch_w << "\n"
    << "d_model = " << m.d_model << "\nn_heads = " << m.n_heads << "\nmlp_ratio = " << m.mlp_ratio << "\n"
    << "spatial_blocks = " << m.spatial_blocks << "\ntemporal_blocks = " << m.temporal_blocks << "\n"
    << "l_spatial = " << m.l_spatial << "\nl_temporal = " << m.l_temporal << "\n"
    << "d_latent = " << m.d_latent << "\nd_text = " << m.d_text << "\ngcn_hidden = " << m.gcn_hidden << "\n"
    << "commitment_beta = " << fmt_double(m.commitment_beta) << "\ninit_std = " << fmt_double(m.init_std)
    << "\n\n";
  const auto& t = cfg.train;
  o << "[train]\n"
    << "max_lr = " << fmt_double(t.max_lr) << "\nmin_lr = " << fmt_double(t.min_lr) << "\n"
    << "warmup_steps = " << t.warmup_steps << "\ntotal_steps = " << t.total_steps << "\n"
    << "beta1 = " << fmt_double(t.beta1) << "\nbeta2 = " << fmt_double(t.beta2) << "\n"
    << "adam_eps = " << fmt_double(t.adam_eps) << "\nweight_decay = " << fmt_double(t.weight_decay) << "\n"
    << "ema_decay = " << fmt_double(t.ema_decay) << "\nbatch_size = " << t.batch_size << "\n"
    << "seed = " << t.seed << "\n"
    << "w_l2 = " << fmt_double(t.loss_weights.l2) << "\nw_vq = " << fmt_double(t.loss_weights.vq) << "\n"
    << "w_perceptual = " << fmt_double(t.loss_weights.perceptual) << "\n"
    << "w_adversarial = " << fmt_double(t.loss_weights.adversarial) << "\n"
    << "discriminator_start = " << t.discriminator_start << "\ncheckpoint_every = " << t.checkpoint_every
    << "\n\n";
  const auto& d = cfg.data;
  o << "[data]\n"
    << "seed = " << d.seed << "\nn_clips = " << d.n_clips << "\nmin_freq = " << d.min_freq << "\n"
    << "window = " << d.window << "\ncodebook_dir = " << d.codebook_dir << "\nclips_dir = " << d.clips_dir
    << "\n\n";
  const auto& mo = d.motion;
  o << "[motion]\n"
    << "shapes = " << join(mo.shapes) << "\ncolors = " << join(mo.colors) << "\n"
    << "backgrounds = " << join(mo.backgrounds) << "\n"
    << "slow_speed = " << fmt_double(mo.slow_speed) << "\nfast_speed = " << fmt_double(mo.fast_speed) << "\n"
    << "static_fraction = " << fmt_double(mo.static_fraction) << "\n"
    << "min_size = " << mo.min_size << "\nmax_size = " << mo.max_size << "\n";
  return o.str();
}

}  // namespace sweettok
