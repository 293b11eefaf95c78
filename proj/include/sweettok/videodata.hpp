#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sweettok/config.hpp"

namespace sweettok {

// A (T, H, W, 3) clip with intensities normalized to [-0.5, 0.5], stored
// row-major as frames[t][y][x][c].
struct VideoClip {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
  double frame_rate = 8.0;
  std::string clip_id;

  VideoClip() = default;
  VideoClip(std::size_t t, std::size_t h, std::size_t w, std::string id = {});

  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return ((t * height + y) * width + x) * 3 + c;
  }
  double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) { return pixels[index(t, y, x, c)]; }
  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const { return pixels[index(t, y, x, c)]; }
  std::size_t frame_size() const { return height * width * 3; }
  bool same_shape(const VideoClip& o) const {
    return frames == o.frames && height == o.height && width == o.width;
  }
  // The first frame as a single-frame clip.
  VideoClip first_frame() const;
};

// Raw container contents: T x H x W x 3 uint8 samples.
struct RawVideo {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> samples;
};

// "SWTV" container, little-endian: magic, u8 version = 1, u32 T, u32 H, u32 W,
// then T*H*W*3 samples.
std::vector<std::uint8_t> encode_container(const RawVideo& raw);
RawVideo decode_container(const std::vector<std::uint8_t>& bytes);
RawVideo read_container(const std::string& path);
void write_container(const std::string& path, const RawVideo& raw);

// value / 255 - 0.5, and its exact inverse for values on the uint8 lattice.
VideoClip normalize(const RawVideo& raw, std::string clip_id = {});
RawVideo denormalize(const VideoClip& clip);

// Throws ValidationError unless every sample lies in [-0.5, 0.5].
void check_range(const VideoClip& clip);
// Throws ValidationError unless (T-1) % p_t == 0, H % p_h == 0, W % p_w == 0.
void check_divisibility(std::size_t frames, std::size_t height, std::size_t width, const ModelConfig& config);

VideoClip load_clip(const std::string& path, const ModelConfig& config);
void save_clip(const std::string& path, const VideoClip& clip);

// ---------------------------------------------------------------------------
// Captions

enum class Pos { kNoun, kAdjective, kVerb, kAdverb, kOther };

std::string to_string(Pos pos);
// Accepts long (noun) and short (NOUN, ADJ, ADV) forms, case-insensitive.
Pos parse_pos(const std::string& tag);
bool is_spatial(Pos pos);   // noun or adjective
bool is_temporal(Pos pos);  // verb or adverb

struct TaggedWord {
  std::string word;
  Pos pos = Pos::kOther;
  bool operator==(const TaggedWord&) const = default;
};

struct CaptionRecord {
  std::string clip_id;
  std::vector<TaggedWord> words;
  bool operator==(const CaptionRecord&) const = default;
};

struct CaptionCorpus {
  std::vector<CaptionRecord> records;
};

// One record per line: clip_id<TAB>word/POS word/POS ...
std::string format_captions(const CaptionCorpus& corpus);
CaptionCorpus parse_captions(const std::string& text);
CaptionCorpus read_captions(const std::string& path);
void write_captions(const std::string& path, const CaptionCorpus& corpus);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSample {
  VideoClip clip;
  CaptionRecord caption;
};

// One moving (or resting) shape per clip over a flat background. The caption
// is templated from the sampled attributes, so its POS tags are exact.
std::vector<SyntheticSample> synthesize_corpus(std::uint64_t seed, std::size_t n_clips, const MotionSpec& motion,
                                               std::size_t frames, std::size_t height, std::size_t width);

CaptionCorpus captions_of(const std::vector<SyntheticSample>& samples);

// FNV-1a over the quantized pixel bytes and caption text of every sample.
std::uint64_t corpus_checksum(const std::vector<SyntheticSample>& samples);
std::uint64_t clip_checksum(const VideoClip& clip);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  double l2 = 0.0;
  double psnr = 0.0;  // dB against a unit dynamic range; +inf when l2 == 0
  double ssim = 1.0;
};

// SSIM: single scale, 7x7 uniform window (clipped to the frame when smaller),
// valid windows only, population statistics, computed per frame and channel
// then averaged.
MetricsReport compute_metrics(const VideoClip& original, const VideoClip& reconstructed);
std::string format_metrics(const MetricsReport& report);

}  // namespace sweettok
