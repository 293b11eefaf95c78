#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sweettok/autograd.hpp"
#include "sweettok/config.hpp"
#include "sweettok/kernels.hpp"
#include "sweettok/nn.hpp"
#include "sweettok/videodata.hpp"

// Language codebook quantizer: vocabulary split by part of speech, a caption
// co-occurrence graph, a GCN that projects frozen text embeddings into the
// latent space, and nearest-neighbour quantization restricted to the
// sub-book matching the token kind.

namespace sweettok {

enum class TokenKind { kSpatial, kTemporal };

std::string to_string(TokenKind kind);

struct VocabEntry {
  std::string word;
  Pos pos = Pos::kNoun;
  std::size_t frequency = 0;
  bool operator==(const VocabEntry&) const = default;
};

// Entries ordered nouns, adjectives, verbs, adverbs; lexicographic inside
// each class. The spatial sub-book is the noun+adjective prefix, the
// temporal sub-book the verb+adverb suffix.
struct Vocabulary {
  std::vector<VocabEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t spatial_size() const;
  std::size_t temporal_size() const { return size() - spatial_size(); }
  std::size_t count(Pos pos) const;
  std::optional<std::size_t> find(const std::string& word, Pos pos) const;
  bool operator==(const Vocabulary&) const = default;
};

Vocabulary build_vocabulary(const CaptionCorpus& corpus, std::size_t min_freq);

// word<TAB>pos<TAB>frequency per line.
std::string format_vocabulary(const Vocabulary& vocab);
Vocabulary parse_vocabulary(const std::string& text);
Vocabulary read_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path, const Vocabulary& vocab);

// Undirected co-occurrence graph over vocabulary indices, self-loops
// included. Edges are stored once as (u, v) with u <= v, sorted.
struct CooccurrenceGraph {
  std::size_t nodes = 0;
  std::size_t window = 5;
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  bool has_edge(std::size_t u, std::size_t v) const;
  // D^-1/2 A D^-1/2 over the self-looped adjacency A.
  kernels::Csr normalized_adjacency() const;
  bool operator==(const CooccurrenceGraph&) const = default;
};

// Edge (u, v) iff the two words sit fewer than `window` token positions
// apart in some caption. Positions count every caption token, including
// words outside the vocabulary.
CooccurrenceGraph build_graph(const CaptionCorpus& corpus, const Vocabulary& vocab, std::size_t window = 5);

// First line "nodes<TAB>N<TAB>window<TAB>W", then one "u<TAB>v" line per edge.
std::string format_graph(const CooccurrenceGraph& graph);
CooccurrenceGraph parse_graph(const std::string& text);
CooccurrenceGraph read_graph(const std::string& path);
void write_graph(const std::string& path, const CooccurrenceGraph& graph);

// Frozen text embeddings plus the sub-book spans.
struct Codebook {
  Tensor raw_embeddings;  // L_c x D_text
  std::size_t spatial_begin = 0;
  std::size_t spatial_end = 0;
  std::size_t temporal_begin = 0;
  std::size_t temporal_end = 0;

  std::size_t size() const { return raw_embeddings.rows(); }
  std::size_t text_dim() const { return raw_embeddings.cols(); }
  std::pair<std::size_t, std::size_t> span(TokenKind kind) const;
};

Codebook make_codebook(const Vocabulary& vocab, Tensor raw_embeddings);

// Deterministic stand-in for a text encoder: a unit vector drawn from an RNG
// seeded by a hash of "word/pos", rounded to float32.
Tensor pseudo_embeddings(const Vocabulary& vocab, std::size_t dim);

// "SWTE" file: magic, u32 count, u32 dim, count*dim little-endian float32.
void write_embeddings(const std::string& path, const Tensor& embeddings);
Tensor read_embeddings(const std::string& path);

// Two hidden graph-convolution layers (ReLU) followed by a linear output map.
struct GcnProjector {
  nn::Linear layer1;  // D_text -> hidden
  nn::Linear layer2;  // hidden -> hidden
  nn::Linear output;  // hidden -> d_latent

  GcnProjector() = default;
  GcnProjector(nn::ParamStore& store, const std::string& name, std::size_t text_dim, std::size_t hidden,
               std::size_t latent_dim);
};

// relu(A relu(A X W1 + b1) W2 + b2) Wout + bout, gradients flowing to the
// projector only.
ag::Var project_codebook(const Codebook& codebook, const std::shared_ptr<const kernels::Csr>& adjacency,
                         const GcnProjector& projector);

struct QuantizedTokens {
  std::vector<std::size_t> indices;  // rows of the full codebook
  ag::Var embeddings;                // projected rows; gradient reaches the projector
  ag::Var straight_through;          // same values; gradient reaches the encoder
  TokenKind kind = TokenKind::kSpatial;
  std::size_t span_begin = 0;

  // Indices relative to the sub-book, the token export ordering.
  std::vector<std::size_t> local_indices() const;
};

// Exact nearest rows of codes[begin, end) for each row of z, lowest index on
// ties. Candidates are ranked with an expanded dot product and near-ties are
// settled by direct squared differences.
std::vector<std::size_t> nearest_indices(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end);

QuantizedTokens quantize(const ag::Var& z, const ag::Var& projected, const Codebook& codebook, TokenKind kind);
// Search over an explicit span (the unpartitioned baselines use [0, L_c)).
QuantizedTokens quantize_span(const ag::Var& z, const ag::Var& projected, std::size_t begin, std::size_t end,
                              TokenKind kind);
// Rebuilds tokens from stored sub-book indices (the decode path).
QuantizedTokens lookup_tokens(const std::vector<std::size_t>& local_indices, const ag::Var& projected,
                              const Codebook& codebook, TokenKind kind);

struct VqLoss {
  ag::Var codebook_spatial;    // ||sg[z_s] - q(z_s)||^2
  ag::Var commit_spatial;      // ||z_s - sg[q(z_s)]||^2
  ag::Var codebook_temporal;
  ag::Var commit_temporal;
  ag::Var total;               // codebook terms + beta * commitment terms
};

// Squared distances are summed over the latent width and averaged over tokens.
VqLoss vq_loss(const ag::Var& z_s, const ag::Var& zhat_s, const ag::Var& z_t, const ag::Var& zhat_t, double beta);
// Single-stream form used by the unpartitioned baselines.
ag::Var vq_loss_single(const ag::Var& z, const ag::Var& zhat, double beta);

std::vector<std::string> indices_to_words(const QuantizedTokens& tokens, const Vocabulary& vocab);
std::vector<std::string> indices_to_words(const std::vector<std::size_t>& local_indices, TokenKind kind,
                                          const Vocabulary& vocab);

// Everything the quantizer needs that is not trained: vocabulary, graph,
// frozen embeddings and the cached normalized adjacency.
struct CodebookAssets {
  Vocabulary vocab;
  CooccurrenceGraph graph;
  Codebook codebook;
  std::shared_ptr<const kernels::Csr> adjacency;
};

CodebookAssets make_codebook_assets(Vocabulary vocab, CooccurrenceGraph graph, Tensor embeddings);
// embeddings is "pseudo" or the path of an SWTE file whose rows follow the
// vocabulary order.
CodebookAssets build_codebook_assets(const CaptionCorpus& corpus, std::size_t min_freq, std::size_t window,
                                     const std::string& embeddings, std::size_t text_dim);

// A codebook directory holds vocab.tsv, graph.tsv and embeddings.swte.
void save_codebook_assets(const std::string& dir, const CodebookAssets& assets);
CodebookAssets load_codebook_assets(const std::string& dir);

}  // namespace sweettok
