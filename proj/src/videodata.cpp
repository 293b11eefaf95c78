#include "sweettok/videodata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include "json.hpp"
#include <random>
#include <sstream>

#include "sweettok/errors.hpp"

namespace sweettok {
namespace {

constexpr char kMagic[4] = {'S', 'W', 'T', 'V'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 1 + 3 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb color_of(const std::string& name) {
  static const std::pair<const char*, Rgb> table[] = {
      {"red", {220, 40, 40}},    {"green", {40, 200, 60}},   {"blue", {50, 80, 230}},
      {"yellow", {230, 210, 40}}, {"white", {240, 240, 240}}, {"purple", {150, 60, 200}},
      {"orange", {240, 140, 30}}, {"cyan", {40, 210, 220}},   {"black", {15, 15, 15}},
      {"gray", {110, 110, 110}},  {"brown", {120, 80, 40}},   {"pink", {240, 150, 190}},
  };
  for (const auto& [key, rgb] : table) {
    if (name == key) return rgb;
  }
  // Unknown names get a stable color derived from the spelling.
  std::uint32_t h = 2166136261u;
  for (unsigned char c : name) h = (h ^ c) * 16777619u;
  return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
}

bool inside(const std::string& shape, double dx, double dy, double r) {
  if (shape == "circle") return dx * dx + dy * dy <= r * r;
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= r;
  if (shape == "triangle") return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
  return std::abs(dx) <= r && std::abs(dy) <= r;  // square and anything unknown
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

constexpr std::uint64_t kFnvBasis = 14695981039346656037ull;

double channel_ssim(const VideoClip& a, const VideoClip& b, std::size_t t, std::size_t c) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  const std::size_t win = std::min<std::size_t>({7, a.height, a.width});
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + win <= a.height; ++y0) {
    for (std::size_t x0 = 0; x0 + win <= a.width; ++x0) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t y = y0; y < y0 + win; ++y) {
        for (std::size_t x = x0; x < x0 + win; ++x) {
          const double u = a.at(t, y, x, c);
          const double v = b.at(t, y, x, c);
          sx += u;
          sy += v;
          sxx += u * u;
          syy += v * v;
          sxy += u * v;
        }
      }
      const double mx = sx / n;
      const double my = sy / n;
      const double vx = sxx / n - mx * mx;
      const double vy = syy / n - my * my;
      const double cxy = sxy / n - mx * my;
      total += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

VideoClip::VideoClip(std::size_t t, std::size_t h, std::size_t w, std::string id)
    : frames(t), height(h), width(w), pixels(t * h * w * 3, 0.0), clip_id(std::move(id)) {}

VideoClip VideoClip::first_frame() const {
  VideoClip out(1, height, width, clip_id);
  out.frame_rate = frame_rate;
  std::copy(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(frame_size()), out.pixels.begin());
  return out;
}

std::vector<std::uint8_t> encode_container(const RawVideo& raw) {
  const std::size_t n = static_cast<std::size_t>(raw.frames) * raw.height * raw.width * 3;
  if (raw.samples.size() != n) throw ValidationError("video container: sample count does not match T*H*W*3");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  put_u32(out, raw.frames);
  put_u32(out, raw.height);
  put_u32(out, raw.width);
  out.insert(out.end(), raw.samples.begin(), raw.samples.end());
  return out;
}

RawVideo decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError("video container: bad magic or truncated header");
  }
  if (bytes[4] != kVersion) {
    throw ValidationError("video container: unsupported version " + std::to_string(bytes[4]));
  }
  RawVideo raw;
  raw.frames = get_u32(bytes.data() + 5);
  raw.height = get_u32(bytes.data() + 9);
  raw.width = get_u32(bytes.data() + 13);
  const std::size_t n = static_cast<std::size_t>(raw.frames) * raw.height * raw.width * 3;
  if (raw.frames == 0 || raw.height == 0 || raw.width == 0) {
    throw ValidationError("video container: zero-sized dimension");
  }
  if (bytes.size() != kHeaderSize + n) {
    throw ValidationError("video container: payload size " + std::to_string(bytes.size() - kHeaderSize) +
                          " does not match header (" + std::to_string(n) + ")");
  }
  raw.samples.assign(bytes.begin() + kHeaderSize, bytes.end());
  return raw;
}

RawVideo read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open video file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

void write_container(const std::string& path, const RawVideo& raw) {
  const auto bytes = encode_container(raw);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write video file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

VideoClip normalize(const RawVideo& raw, std::string clip_id) {
  VideoClip clip(raw.frames, raw.height, raw.width, std::move(clip_id));
  for (std::size_t i = 0; i < raw.samples.size(); ++i) clip.pixels[i] = raw.samples[i] / 255.0 - 0.5;
  return clip;
}

RawVideo denormalize(const VideoClip& clip) {
  RawVideo raw;
  raw.frames = static_cast<std::uint32_t>(clip.frames);
  raw.height = static_cast<std::uint32_t>(clip.height);
  raw.width = static_cast<std::uint32_t>(clip.width);
  raw.samples.resize(clip.pixels.size());
  for (std::size_t i = 0; i < clip.pixels.size(); ++i) {
    const double v = std::clamp((clip.pixels[i] + 0.5) * 255.0, 0.0, 255.0);
    raw.samples[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return raw;
}

void check_range(const VideoClip& clip) {
  for (double v : clip.pixels) {
    if (!(v >= -0.5 && v <= 0.5)) throw ValidationError("video clip: pixel value outside [-0.5, 0.5]");
  }
}

void check_divisibility(std::size_t frames, std::size_t height, std::size_t width, const ModelConfig& config) {
  if (frames < 1 || (frames - 1) % config.patch_t != 0) {
    throw ValidationError("video clip: T-1 = " + std::to_string(frames == 0 ? 0 : frames - 1) +
                          " is not divisible by patch_t = " + std::to_string(config.patch_t));
  }
  if (height % config.patch_h != 0) {
    throw ValidationError("video clip: H = " + std::to_string(height) + " is not divisible by patch_h = " +
                          std::to_string(config.patch_h));
  }
  if (width % config.patch_w != 0) {
    throw ValidationError("video clip: W = " + std::to_string(width) + " is not divisible by patch_w = " +
                          std::to_string(config.patch_w));
  }
}

VideoClip load_clip(const std::string& path, const ModelConfig& config) {
  const RawVideo raw = read_container(path);
  check_divisibility(raw.frames, raw.height, raw.width, config);
  std::string id = path;
  if (const auto slash = id.find_last_of('/'); slash != std::string::npos) id = id.substr(slash + 1);
  if (const auto dot = id.find_last_of('.'); dot != std::string::npos) id = id.substr(0, dot);
  return normalize(raw, id);
}

void save_clip(const std::string& path, const VideoClip& clip) {
  check_range(clip);
  write_container(path, denormalize(clip));
}

std::string to_string(Pos pos) {
  switch (pos) {
    case Pos::kNoun:
      return "noun";
    case Pos::kAdjective:
      return "adjective";
    case Pos::kVerb:
      return "verb";
    case Pos::kAdverb:
      return "adverb";
    case Pos::kOther:
      return "other";
  }
  return "other";
}

Pos parse_pos(const std::string& tag) {
  const std::string t = lower(tag);
  if (t == "noun") return Pos::kNoun;
  if (t == "adjective" || t == "adj") return Pos::kAdjective;
  if (t == "verb") return Pos::kVerb;
  if (t == "adverb" || t == "adv") return Pos::kAdverb;
  if (t == "other") return Pos::kOther;
  throw ValidationError("caption: unknown part-of-speech tag '" + tag + "'");
}

bool is_spatial(Pos pos) { return pos == Pos::kNoun || pos == Pos::kAdjective; }
bool is_temporal(Pos pos) { return pos == Pos::kVerb || pos == Pos::kAdverb; }

std::string format_captions(const CaptionCorpus& corpus) {
  std::ostringstream out;
  for (const auto& rec : corpus.records) {
    out << rec.clip_id << '\t';
    for (std::size_t i = 0; i < rec.words.size(); ++i) {
      out << (i ? " " : "") << rec.words[i].word << '/' << to_string(rec.words[i].pos);
    }
    out << '\n';
  }
  return out.str();
}

CaptionCorpus parse_captions(const std::string& text) {
  CaptionCorpus corpus;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ValidationError("caption line " + std::to_string(line_no) + ": missing TAB after clip id");
    }
    CaptionRecord rec;
    rec.clip_id = line.substr(0, tab);
    std::istringstream words(line.substr(tab + 1));
    std::string token;
    while (words >> token) {
      const auto slash = token.find_last_of('/');
      if (slash == std::string::npos || slash == 0 || slash + 1 == token.size()) {
        throw ValidationError("caption line " + std::to_string(line_no) + ": token '" + token +
                              "' is not word/POS");
      }
      rec.words.push_back({lower(token.substr(0, slash)), parse_pos(token.substr(slash + 1))});
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

CaptionCorpus read_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open caption file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_captions(ss.str());
}

void write_captions(const std::string& path, const CaptionCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write caption file " + path);
  out << format_captions(corpus);
}

std::vector<SyntheticSample> synthesize_corpus(std::uint64_t seed, std::size_t n_clips, const MotionSpec& motion,
                                               std::size_t frames, std::size_t height, std::size_t width) {
  motion.validate();
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  static const char* kDirections[] = {"left", "right", "upward", "downward"};
  static const double kDx[] = {-1, 1, 0, 0};
  static const double kDy[] = {0, 0, -1, 1};
  static const char* kVerbs[] = {"slides", "slides", "rises", "falls"};

  std::vector<SyntheticSample> out;
  out.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    const std::string& shape = motion.shapes[pick(motion.shapes.size())];
    const std::string& color = motion.colors[pick(motion.colors.size())];
    const std::string& background = motion.backgrounds[pick(motion.backgrounds.size())];
    const std::size_t size = motion.min_size + pick(motion.max_size - motion.min_size + 1);
    const bool is_static = uniform(0.0, 1.0) < motion.static_fraction;
    const std::size_t dir = pick(4);
    const bool fast = pick(2) == 1;
    const double speed = is_static ? 0.0 : (fast ? motion.fast_speed : motion.slow_speed);

    const double r = static_cast<double>(size) / 2.0;
    const double travel = speed * static_cast<double>(frames - 1);
    auto start_range = [&](double extent, double delta) {
      // Keep the shape centre inside the frame over the whole clip.
      double lo = r + std::max(0.0, -delta * travel);
      double hi = extent - r - std::max(0.0, delta * travel);
      if (hi < lo) lo = hi = extent / 2.0;
      return uniform(lo, std::nextafter(hi, hi + 1.0));
    };
    const double cx0 = start_range(static_cast<double>(width), kDx[dir]);
    const double cy0 = start_range(static_cast<double>(height), kDy[dir]);

    const Rgb fg = color_of(color);
    const Rgb bg = color_of(background);
    RawVideo raw;
    raw.frames = static_cast<std::uint32_t>(frames);
    raw.height = static_cast<std::uint32_t>(height);
    raw.width = static_cast<std::uint32_t>(width);
    raw.samples.resize(frames * height * width * 3);
    for (std::size_t t = 0; t < frames; ++t) {
      const double cx = cx0 + kDx[dir] * speed * static_cast<double>(t);
      const double cy = cy0 + kDy[dir] * speed * static_cast<double>(t);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const bool hit = inside(shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r);
          const Rgb& px = hit ? fg : bg;
          std::uint8_t* dst = raw.samples.data() + ((t * height + y) * width + x) * 3;
          dst[0] = px.r;
          dst[1] = px.g;
          dst[2] = px.b;
        }
      }
    }

    char id[32];
    std::snprintf(id, sizeof id, "clip_%04zu", i);
    SyntheticSample sample;
    sample.clip = normalize(raw, id);
    sample.caption.clip_id = id;
    auto& w = sample.caption.words;
    w.push_back({"a", Pos::kOther});
    w.push_back({color, Pos::kAdjective});
    w.push_back({shape, Pos::kNoun});
    if (is_static) {
      w.push_back({"rests", Pos::kVerb});
      w.push_back({"still", Pos::kAdverb});
    } else {
      w.push_back({kVerbs[dir], Pos::kVerb});
      w.push_back({fast ? "quickly" : "slowly", Pos::kAdverb});
      w.push_back({kDirections[dir], Pos::kAdverb});
    }
    w.push_back({"on", Pos::kOther});
    w.push_back({"a", Pos::kOther});
    w.push_back({background, Pos::kAdjective});
    w.push_back({"background", Pos::kNoun});
    out.push_back(std::move(sample));
  }
  return out;
}

CaptionCorpus captions_of(const std::vector<SyntheticSample>& samples) {
  CaptionCorpus corpus;
  for (const auto& s : samples) corpus.records.push_back(s.caption);
  return corpus;
}

std::uint64_t clip_checksum(const VideoClip& clip) {
  const RawVideo raw = denormalize(clip);
  std::uint64_t h = kFnvBasis;
  const std::uint32_t dims[3] = {raw.frames, raw.height, raw.width};
  h = fnv1a(h, dims, sizeof dims);
  return fnv1a(h, raw.samples.data(), raw.samples.size());
}

std::uint64_t corpus_checksum(const std::vector<SyntheticSample>& samples) {
  std::uint64_t h = kFnvBasis;
  for (const auto& s : samples) {
    const std::uint64_t c = clip_checksum(s.clip);
    h = fnv1a(h, &c, sizeof c);
    CaptionCorpus one;
    one.records.push_back(s.caption);
    const std::string text = format_captions(one);
    h = fnv1a(h, text.data(), text.size());
  }
  return h;
}

MetricsReport compute_metrics(const VideoClip& original, const VideoClip& reconstructed) {
  if (!original.same_shape(reconstructed)) throw ValidationError("metrics: clip shapes differ");
  MetricsReport report;
  double acc = 0.0;
  for (std::size_t i = 0; i < original.pixels.size(); ++i) {
    const double d = original.pixels[i] - reconstructed.pixels[i];
    acc += d * d;
  }
  report.l2 = acc / static_cast<double>(original.pixels.size());
  report.psnr = report.l2 == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(report.l2);
  double ssim = 0.0;
  for (std::size_t t = 0; t < original.frames; ++t) {
    for (std::size_t c = 0; c < 3; ++c) ssim += channel_ssim(original, reconstructed, t, c);
  }
  report.ssim = ssim / static_cast<double>(original.frames * 3);
  return report;
}

std::string format_metrics(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["l2"] = report.l2;
  if (std::isinf(report.psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = report.psnr;
  }
  j["ssim"] = report.ssim;
  return j.dump() + "\n";
}

}  // namespace sweettok
