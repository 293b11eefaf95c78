#include "sweettok/mlc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "sweettok/errors.hpp"

namespace sweettok {
namespace {

std::string slurp(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + " file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const std::string& path, const std::string& text, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(std::string("cannot write ") + what + " file " + path);
  out << text;
  if (!out) throw IoError(std::string("short write to ") + path);
}

std::size_t parse_count(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    if (!s.empty() && s.front() == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ValidationError(context + ": '" + s + "' is not a non-negative integer");
  }
}

constexpr char kEmbeddingMagic[4] = {'S', 'W', 'T', 'E'};

}  // namespace

std::string to_string(TokenKind kind) { return kind == TokenKind::kSpatial ? "spatial" : "temporal"; }

std::size_t Vocabulary::spatial_size() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const VocabEntry& e) { return is_spatial(e.pos); }));
}

std::size_t Vocabulary::count(Pos pos) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [pos](const VocabEntry& e) { return e.pos == pos; }));
}

std::optional<std::size_t> Vocabulary::find(const std::string& word, Pos pos) const {
  // Entries are sorted by (pos, word).
  const auto it = std::lower_bound(entries.begin(), entries.end(), std::make_pair(pos, word),
                                   [](const VocabEntry& e, const std::pair<Pos, std::string>& key) {
                                     return std::tie(e.pos, e.word) < std::tie(key.first, key.second);
                                   });
  if (it == entries.end() || it->pos != pos || it->word != word) return std::nullopt;
  return static_cast<std::size_t>(it - entries.begin());
}

Vocabulary build_vocabulary(const CaptionCorpus& corpus, std::size_t min_freq) {
  if (corpus.records.empty()) throw ValidationError("build_vocabulary: empty caption corpus");
  std::map<std::pair<Pos, std::string>, std::size_t> counts;
  for (const auto& rec : corpus.records) {
    for (const auto& w : rec.words) {
      if (w.pos != Pos::kOther) ++counts[{w.pos, w.word}];
    }
  }
  Vocabulary vocab;
  for (const auto& [key, freq] : counts) {
    if (freq >= min_freq) vocab.entries.push_back({key.second, key.first, freq});
  }
  if (vocab.entries.empty()) {
    throw ValidationError("build_vocabulary: no word reaches min_freq = " + std::to_string(min_freq));
  }
  return vocab;
}

std::string format_vocabulary(const Vocabulary& vocab) {
  std::ostringstream out;
  for (const auto& e : vocab.entries) out << e.word << '\t' << to_string(e.pos) << '\t' << e.frequency << '\n';
  return out.str();
}

Vocabulary parse_vocabulary(const std::string& text) {
  Vocabulary vocab;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    const std::string where = "vocabulary line " + std::to_string(line_no);
    if (fields.size() != 3) throw ValidationError(where + ": expected word<TAB>pos<TAB>frequency");
    const Pos pos = parse_pos(fields[1]);
    if (pos == Pos::kOther) throw ValidationError(where + ": POS 'other' is not a codebook class");
    vocab.entries.push_back({fields[0], pos, parse_count(fields[2], where)});
  }
  for (std::size_t i = 1; i < vocab.entries.size(); ++i) {
    const auto& a = vocab.entries[i - 1];
    const auto& b = vocab.entries[i];
    if (!(std::tie(a.pos, a.word) < std::tie(b.pos, b.word))) {
      throw ValidationError("vocabulary: entries are not sorted by (pos, word) or contain duplicates");
    }
  }
  return vocab;
}

Vocabulary read_vocabulary(const std::string& path) { return parse_vocabulary(slurp(path, "vocabulary")); }

void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  dump(path, format_vocabulary(vocab), "vocabulary");
}

bool CooccurrenceGraph::has_edge(std::size_t u, std::size_t v) const {
  const auto key = std::minmax(u, v);
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(key.first, key.second));
}

kernels::Csr CooccurrenceGraph::normalized_adjacency() const {
  std::vector<std::vector<std::size_t>> neighbours(nodes);
  for (const auto& [u, v] : edges) {
    neighbours[u].push_back(v);
    if (u != v) neighbours[v].push_back(u);
  }
  std::vector<double> inv_sqrt_degree(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    std::sort(neighbours[i].begin(), neighbours[i].end());
    inv_sqrt_degree[i] = neighbours[i].empty() ? 0.0 : 1.0 / std::sqrt(static_cast<double>(neighbours[i].size()));
  }
  kernels::Csr m;
  m.n_rows = m.n_cols = nodes;
  m.row_ptr.push_back(0);
  for (std::size_t i = 0; i < nodes; ++i) {
    for (std::size_t j : neighbours[i]) {
      m.col.push_back(j);
      m.val.push_back(inv_sqrt_degree[i] * inv_sqrt_degree[j]);
    }
    m.row_ptr.push_back(m.col.size());
  }
  return m;
}

CooccurrenceGraph build_graph(const CaptionCorpus& corpus, const Vocabulary& vocab, std::size_t window) {
  if (window == 0) throw ValidationError("build_graph: window must be >= 1");
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < vocab.size(); ++i) edges.emplace(i, i);
  for (const auto& rec : corpus.records) {
    std::vector<std::pair<std::size_t, std::size_t>> present;  // (position, vocab index)
    for (std::size_t p = 0; p < rec.words.size(); ++p) {
      if (const auto idx = vocab.find(rec.words[p].word, rec.words[p].pos)) present.emplace_back(p, *idx);
    }
    for (std::size_t a = 0; a < present.size(); ++a) {
      for (std::size_t b = a + 1; b < present.size() && present[b].first - present[a].first < window; ++b) {
        edges.insert(std::minmax(present[a].second, present[b].second));
      }
    }
  }
  CooccurrenceGraph g;
  g.nodes = vocab.size();
  g.window = window;
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

std::string format_graph(const CooccurrenceGraph& graph) {
  std::ostringstream out;
  out << "nodes\t" << graph.nodes << "\twindow\t" << graph.window << '\n';
  for (const auto& [u, v] : graph.edges) out << u << '\t' << v << '\n';
  return out.str();
}

CooccurrenceGraph parse_graph(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CooccurrenceGraph g;
  if (!std::getline(in, line)) throw ValidationError("graph file: missing header");
  {
    std::istringstream hs(line);
    std::string k1, n, k2, w;
    if (!(hs >> k1 >> n >> k2 >> w) || k1 != "nodes" || k2 != "window") {
      throw ValidationError("graph file: malformed header");
    }
    g.nodes = parse_count(n, "graph header");
    g.window = parse_count(w, "graph header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!(ls >> a >> b)) throw ValidationError("graph file line " + std::to_string(line_no) + ": expected u v");
    const auto u = parse_count(a, "graph edge");
    const auto v = parse_count(b, "graph edge");
    if (u > v || v >= g.nodes) {
      throw ValidationError("graph file line " + std::to_string(line_no) + ": edge out of range or unordered");
    }
    g.edges.emplace_back(u, v);
  }
  if (!std::is_sorted(g.edges.begin(), g.edges.end())) throw ValidationError("graph file: edges not sorted");
  return g;
}

CooccurrenceGraph read_graph(const std::string& path) { return parse_graph(slurp(path, "graph")); }

void write_graph(const std::string& path, const CooccurrenceGraph& graph) {
  dump(path, format_graph(graph), "graph");
}

std::pair<std::size_t, std::size_t> Codebook::span(TokenKind kind) const {
  return kind == TokenKind::kSpatial ? std::make_pair(spatial_begin, spatial_end)
                                     : std::make_pair(temporal_begin, temporal_end);
}

Codebook make_codebook(const Vocabulary& vocab, Tensor raw_embeddings) {
  if (raw_embeddings.rows() != vocab.size()) {
    throw ValidationError("codebook: " + std::to_string(raw_embeddings.rows()) + " embedding rows for " +
                          std::to_string(vocab.size()) + " vocabulary entries");
  }
  Codebook cb;
  cb.raw_embeddings = std::move(raw_embeddings);
  cb.spatial_begin = 0;
  cb.spatial_end = vocab.spatial_size();
  cb.temporal_begin = cb.spatial_end;
  cb.temporal_end = vocab.size();
  return cb;
}

Tensor pseudo_embeddings(const Vocabulary& vocab, std::size_t dim) {
  Tensor out(vocab.size(), dim);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const std::string key = vocab.entries[i].word + "/" + to_string(vocab.entries[i].pos);
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : key) h = (h ^ c) * 1099511628211ull;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      out(i, d) = normal(rng);
      norm += out(i, d) * out(i, d);
    }
    norm = std::sqrt(norm);
    // float32-valued so an SWTE round trip is exact.
    for (std::size_t d = 0; d < dim; ++d) out(i, d) = static_cast<float>(out(i, d) / norm);
  }
  return out;
}

void write_embeddings(const std::string& path, const Tensor& embeddings) {
  std::string bytes(kEmbeddingMagic, 4);
  auto put_u32 = [&bytes](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>(v >> (8 * i)));
  };
  put_u32(static_cast<std::uint32_t>(embeddings.rows()));
  put_u32(static_cast<std::uint32_t>(embeddings.cols()));
  for (double v : embeddings.values()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bits);
  }
  dump(path, bytes, "embedding");
}

Tensor read_embeddings(const std::string& path) {
  const std::string bytes = slurp(path, "embedding");
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kEmbeddingMagic, 4) != 0) {
    throw ValidationError("embedding file: bad magic or truncated header");
  }
  auto get_u32 = [&bytes](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
  };
  const std::size_t count = get_u32(4);
  const std::size_t dim = get_u32(8);
  if (bytes.size() != 12 + count * dim * 4) throw ValidationError("embedding file: payload size mismatch");
  Tensor out(count, dim);
  for (std::size_t i = 0; i < count * dim; ++i) {
    const std::uint32_t bits = get_u32(12 + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = f;
  }
  return out;
}

GcnProjector::GcnProjector(nn::ParamStore& store, const std::string& name, std::size_t text_dim,
                           std::size_t hidden, std::size_t latent_dim)
    : layer1(store, name + ".layer1", text_dim, hidden),
      layer2(store, name + ".layer2", hidden, hidden),
      output(store, name + ".out", hidden, latent_dim) {}

ag::Var project_codebook(const Codebook& codebook, const std::shared_ptr<const kernels::Csr>& adjacency,
                         const GcnProjector& projector) {
  if (adjacency->n_rows != codebook.size() || codebook.text_dim() != projector.layer1.weight.rows()) {
    throw ValidationError("project_codebook: dimension mismatch");
  }
  const ag::Var raw = ag::constant(codebook.raw_embeddings);
  const ag::Var h1 = ag::relu(ag::add_row(ag::spmm(adjacency, ag::matmul(raw, projector.layer1.weight)),
                                          projector.layer1.bias));
  const ag::Var h2 =
      ag::relu(ag::add_row(ag::spmm(adjacency, ag::matmul(h1, projector.layer2.weight)), projector.layer2.bias));
  return projector.output(h2);
}

std::vector<std::size_t> QuantizedTokens::local_indices() const {
  std::vector<std::size_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = indices[i] - span_begin;
  return out;
}

std::vector<std::size_t> nearest_indices(const Tensor& z, const Tensor& codes, std::size_t begin, std::size_t end) {
  if (begin >= end || end > codes.rows()) throw ValidationError("quantize: empty or invalid codebook span");
  if (z.cols() != codes.cols()) throw ValidationError("quantize: latent width does not match the codebook");
  Tensor approx;
  kernels::parallel::squared_distances(z, codes, begin, end, approx);
  const std::size_t span = end - begin;
  const std::size_t width = codes.cols();
  double max_code_norm = 0.0;
  for (std::size_t j = begin; j < end; ++j) {
    double acc = 0.0;
    for (std::size_t d = 0; d < width; ++d) acc += codes(j, d) * codes(j, d);
    max_code_norm = std::max(max_code_norm, acc);
  }
  std::vector<std::size_t> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double z_norm = 0.0;
    for (std::size_t d = 0; d < width; ++d) z_norm += z(i, d) * z(i, d);
    const double* row = approx.data() + i * span;
    const double best_approx = *std::min_element(row, row + span);
    // Bound on the cancellation error of the expanded form.
    const double slack = 1e-9 * (z_norm + max_code_norm + 1.0);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = begin;
    for (std::size_t j = 0; j < span; ++j) {
      if (row[j] > best_approx + slack) continue;
      double exact = 0.0;
      for (std::size_t d = 0; d < width; ++d) {
        const double diff = z(i, d) - codes(begin + j, d);
        exact += diff * diff;
      }
      if (exact < best) {
        best = exact;
        best_j = begin + j;
      }
    }
    out[i] = best_j;
  }
  return out;
}

QuantizedTokens quantize_span(const ag::Var& z, const ag::Var& projected, std::size_t begin, std::size_t end,
                              TokenKind kind) {
  QuantizedTokens q;
  q.kind = kind;
  q.span_begin = begin;
  q.indices = nearest_indices(z.value(), projected.value(), begin, end);
  q.embeddings = ag::gather_rows(projected, q.indices);
  q.straight_through = ag::straight_through(z, q.embeddings);
  return q;
}

QuantizedTokens quantize(const ag::Var& z, const ag::Var& projected, const Codebook& codebook, TokenKind kind) {
  const auto [begin, end] = codebook.span(kind);
  if (begin >= end) throw ValidationError("quantize: the " + to_string(kind) + " sub-book is empty");
  if (projected.rows() != codebook.size()) throw ValidationError("quantize: projected codebook size mismatch");
  return quantize_span(z, projected, begin, end, kind);
}

QuantizedTokens lookup_tokens(const std::vector<std::size_t>& local_indices, const ag::Var& projected,
                              const Codebook& codebook, TokenKind kind) {
  const auto [begin, end] = codebook.span(kind);
  QuantizedTokens q;
  q.kind = kind;
  q.span_begin = begin;
  for (std::size_t local : local_indices) {
    if (begin + local >= end) {
      throw ValidationError("token index " + std::to_string(local) + " out of range for the " + to_string(kind) +
                            " sub-book of size " + std::to_string(end - begin));
    }
    q.indices.push_back(begin + local);
  }
  q.embeddings = ag::gather_rows(projected, q.indices);
  q.straight_through = q.embeddings;
  return q;
}

VqLoss vq_loss(const ag::Var& z_s, const ag::Var& zhat_s, const ag::Var& z_t, const ag::Var& zhat_t, double beta) {
  if (!z_s.value().same_shape(zhat_s.value()) || !z_t.value().same_shape(zhat_t.value())) {
    throw ValidationError("vq_loss: continuous and quantized token shapes differ");
  }
  VqLoss loss;
  loss.codebook_spatial = ag::mean_row_sq_dist(ag::stop_gradient(z_s), zhat_s);
  loss.commit_spatial = ag::mean_row_sq_dist(z_s, ag::stop_gradient(zhat_s));
  loss.codebook_temporal = ag::mean_row_sq_dist(ag::stop_gradient(z_t), zhat_t);
  loss.commit_temporal = ag::mean_row_sq_dist(z_t, ag::stop_gradient(zhat_t));
  loss.total = ag::sum_scalars(
      {loss.codebook_spatial, loss.commit_spatial, loss.codebook_temporal, loss.commit_temporal},
      {1.0, beta, 1.0, beta});
  return loss;
}

ag::Var vq_loss_single(const ag::Var& z, const ag::Var& zhat, double beta) {
  if (!z.value().same_shape(zhat.value())) throw ValidationError("vq_loss: token shapes differ");
  return ag::sum_scalars({ag::mean_row_sq_dist(ag::stop_gradient(z), zhat),
                          ag::mean_row_sq_dist(z, ag::stop_gradient(zhat))},
                         {1.0, beta});
}

std::vector<std::string> indices_to_words(const std::vector<std::size_t>& local_indices, TokenKind kind,
                                          const Vocabulary& vocab) {
  const std::size_t begin = kind == TokenKind::kSpatial ? 0 : vocab.spatial_size();
  const std::size_t end = kind == TokenKind::kSpatial ? vocab.spatial_size() : vocab.size();
  std::vector<std::string> words;
  words.reserve(local_indices.size());
  for (std::size_t local : local_indices) {
    if (begin + local >= end) {
      throw ValidationError("indices_to_words: index " + std::to_string(local) + " out of range for the " +
                            to_string(kind) + " sub-book");
    }
    words.push_back(vocab.entries[begin + local].word);
  }
  return words;
}

std::vector<std::string> indices_to_words(const QuantizedTokens& tokens, const Vocabulary& vocab) {
  return indices_to_words(tokens.local_indices(), tokens.kind, vocab);
}

}  // namespace sweettok

namespace sweettok {

CodebookAssets make_codebook_assets(Vocabulary vocab, CooccurrenceGraph graph, Tensor embeddings) {
  if (graph.nodes != vocab.size()) {
    throw ValidationError("codebook: graph has " + std::to_string(graph.nodes) + " nodes for " +
                          std::to_string(vocab.size()) + " vocabulary entries");
  }
  CodebookAssets assets;
  assets.codebook = make_codebook(vocab, std::move(embeddings));
  assets.adjacency = std::make_shared<const kernels::Csr>(graph.normalized_adjacency());
  assets.vocab = std::move(vocab);
  assets.graph = std::move(graph);
  return assets;
}

CodebookAssets build_codebook_assets(const CaptionCorpus& corpus, std::size_t min_freq, std::size_t window,
                                     const std::string& embeddings, std::size_t text_dim) {
  Vocabulary vocab = build_vocabulary(corpus, min_freq);
  CooccurrenceGraph graph = build_graph(corpus, vocab, window);
  Tensor raw = embeddings == "pseudo" ? pseudo_embeddings(vocab, text_dim) : read_embeddings(embeddings);
  return make_codebook_assets(std::move(vocab), std::move(graph), std::move(raw));
}

void save_codebook_assets(const std::string& dir, const CodebookAssets& assets) {
  write_vocabulary(dir + "/vocab.tsv", assets.vocab);
  write_graph(dir + "/graph.tsv", assets.graph);
  write_embeddings(dir + "/embeddings.swte", assets.codebook.raw_embeddings);
}

CodebookAssets load_codebook_assets(const std::string& dir) {
  return make_codebook_assets(read_vocabulary(dir + "/vocab.tsv"), read_graph(dir + "/graph.tsv"),
                              read_embeddings(dir + "/embeddings.swte"));
}

}  // namespace sweettok
