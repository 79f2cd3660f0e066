#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/core.hpp"
#include "t2vshield/digest.hpp"
#include "t2vshield/parallel.hpp"

namespace t2vshield {

enum class ExampleLabel { Positive, Negative };

inline const char* to_string(ExampleLabel l) { return l == ExampleLabel::Positive ? "positive" : "negative"; }

inline ExampleLabel example_label_from_string(std::string_view s) {
  if (s == "positive") return ExampleLabel::Positive;
  if (s == "negative") return ExampleLabel::Negative;
  throw ValidationError("example label must be 'positive' or 'negative', got '" + std::string(s) + "'");
}

/// An embedded positive (safe) or negative (unsafe) video-text sample.
struct ExampleNode {
  std::string id;
  ExampleLabel label = ExampleLabel::Positive;
  std::string text;
  EmbeddingVector z_text;
  EmbeddingVector z_image;
  int frame_count_used = 4;

  bool operator==(const ExampleNode&) const = default;
};

/// Element-wise mean of the frame embeddings.
inline EmbeddingVector mean_pool(std::span<const EmbeddingVector> frames) {
  if (frames.empty()) throw EmbeddingError("cannot pool an empty frame list");
  auto dim = frames.front().dim();
  std::vector<double> acc(dim, 0.0);
  for (const auto& f : frames) {
    if (f.dim() != dim) {
      throw EmbeddingError("frame embedding dim " + std::to_string(f.dim()) + " != " + std::to_string(dim));
    }
    for (std::size_t i = 0; i < dim; ++i) acc[i] += f[i];
  }
  for (auto& v : acc) v /= static_cast<double>(frames.size());
  return EmbeddingVector(std::move(acc));
}

struct SampleEmbedding {
  EmbeddingVector z_text;
  EmbeddingVector z_image;
};

inline SampleEmbedding embed_sample(std::string_view text, std::span<const EmbeddingVector> frame_embeddings,
                                    TextEmbedder& embedder) {
  auto z_image = mean_pool(frame_embeddings);
  return {embedder.embed_text(text), std::move(z_image)};
}

/// alpha * cos(text) + (1 - alpha) * cos(image).
inline double pairwise_sim(const ExampleNode& a, const ExampleNode& b, double alpha) {
  return alpha * cosine(a.z_text, b.z_text) + (1.0 - alpha) * cosine(a.z_image, b.z_image);
}

struct GraphEdge {
  std::string a;
  std::string b;
  double sim = 0.0;

  bool operator==(const GraphEdge&) const = default;
};

struct GraphParams {
  double alpha = 0.7;
  double tau_pos = 0.7;
  double tau_neg = 0.3;

  bool operator==(const GraphParams&) const = default;
};

/// Thresholded similarity graph over the example pool. Same-label pairs are
/// joined when sim > tau_pos, cross-label pairs when sim > tau_neg. Edges are
/// undirected, stored once with `a` preceding `b` in node order.
class RetrievalGraph {
 public:
  RetrievalGraph(std::vector<ExampleNode> nodes, std::vector<GraphEdge> intra, std::vector<GraphEdge> inter,
                 GraphParams params)
      : nodes_(std::move(nodes)), intra_(std::move(intra)), inter_(std::move(inter)), params_(params) {
    index_nodes();
    check_and_index_edges();
  }

  const std::vector<ExampleNode>& nodes() const noexcept { return nodes_; }
  const std::vector<GraphEdge>& intra_edges() const noexcept { return intra_; }
  const std::vector<GraphEdge>& inter_edges() const noexcept { return inter_; }
  const GraphParams& params() const noexcept { return params_; }

  std::size_t index_of(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ArgumentError("unknown node id '" + id + "'");
    return it->second;
  }
  const ExampleNode& node(const std::string& id) const { return nodes_[index_of(id)]; }

  /// (neighbor index, stored sim) pairs over intra-class edges.
  const std::vector<std::pair<std::size_t, double>>& intra_neighbors(std::size_t i) const { return intra_adj_[i]; }
  const std::vector<std::pair<std::size_t, double>>& inter_neighbors(std::size_t i) const { return inter_adj_[i]; }

  std::size_t text_dim() const { return nodes_.empty() ? 0 : nodes_.front().z_text.dim(); }
  std::size_t image_dim() const { return nodes_.empty() ? 0 : nodes_.front().z_image.dim(); }

  bool operator==(const RetrievalGraph& o) const {
    return nodes_ == o.nodes_ && intra_ == o.intra_ && inter_ == o.inter_ && params_ == o.params_;
  }

 private:
  void index_nodes() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!by_id_.emplace(nodes_[i].id, i).second) throw GraphBuildError("duplicate node id '" + nodes_[i].id + "'");
    }
    intra_adj_.assign(nodes_.size(), {});
    inter_adj_.assign(nodes_.size(), {});
  }

  void check_and_index_edges() {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    auto check = [&](const GraphEdge& e, bool intra) {
      auto ia = by_id_.find(e.a), ib = by_id_.find(e.b);
      if (ia == by_id_.end() || ib == by_id_.end()) throw GraphBuildError("edge references unknown node");
      auto i = ia->second, j = ib->second;
      if (i == j) throw GraphBuildError("self-edge on '" + e.a + "'");
      if (i > j) throw GraphBuildError("edge (" + e.a + "," + e.b + ") not in canonical order");
      if (!seen.emplace(i, j).second) throw GraphBuildError("duplicate edge (" + e.a + "," + e.b + ")");
      bool same = nodes_[i].label == nodes_[j].label;
      if (same != intra) throw GraphBuildError("edge (" + e.a + "," + e.b + ") in the wrong edge set");
      double tau = intra ? params_.tau_pos : params_.tau_neg;
      if (!(e.sim > tau)) throw GraphBuildError("edge (" + e.a + "," + e.b + ") below its threshold");
      auto& adj = intra ? intra_adj_ : inter_adj_;
      adj[i].emplace_back(j, e.sim);
      adj[j].emplace_back(i, e.sim);
    };
    for (const auto& e : intra_) check(e, true);
    for (const auto& e : inter_) check(e, false);
  }

  std::vector<ExampleNode> nodes_;
  std::vector<GraphEdge> intra_;
  std::vector<GraphEdge> inter_;
  GraphParams params_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::vector<std::pair<std::size_t, double>>> intra_adj_;
  std::vector<std::vector<std::pair<std::size_t, double>>> inter_adj_;
};

/// Scores every pair of the pool and keeps the edges that clear their
/// threshold (strictly). Rows are scored in parallel; the result does not
/// depend on the thread count.
inline RetrievalGraph build_graph(std::vector<ExampleNode> pool, const PipelineConfig& config, std::size_t workers = 0) {
  if (pool.size() < 2) throw ArgumentError("graph needs at least 2 nodes, got " + std::to_string(pool.size()));
  auto text_dim = pool.front().z_text.dim(), image_dim = pool.front().z_image.dim();
  std::vector<std::string> bad;
  for (const auto& n : pool) {
    if (n.z_text.dim() != text_dim || n.z_image.dim() != image_dim) bad.push_back(n.id);
  }
  if (!bad.empty()) {
    std::string ids;
    for (const auto& id : bad) ids += (ids.empty() ? "" : ", ") + id;
    throw GraphBuildError("embedding dimension mismatch for nodes: " + ids);
  }
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

  struct RowEdges {
    std::vector<GraphEdge> intra, inter;
  };
  std::vector<RowEdges> rows(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      double s = pairwise_sim(pool[i], pool[j], config.alpha);
      if (pool[i].label == pool[j].label) {
        if (s > config.tau_pos) rows[i].intra.push_back({pool[i].id, pool[j].id, s});
      } else if (s > config.tau_neg) {
        rows[i].inter.push_back({pool[i].id, pool[j].id, s});
      }
    }
  });
  std::vector<GraphEdge> intra, inter;
  for (auto& r : rows) {
    intra.insert(intra.end(), r.intra.begin(), r.intra.end());
    inter.insert(inter.end(), r.inter.begin(), r.inter.end());
  }
  return RetrievalGraph(std::move(pool), std::move(intra), std::move(inter),
                        GraphParams{config.alpha, config.tau_pos, config.tau_neg});
}

struct ScoredNode {
  std::size_t index;
  double score;
};

/// cos(query, z_text_j) + lambda * mean stored sim over j's intra-class
/// neighbors (0 for an isolated node), for every negative node, ranked by
/// score descending then id ascending.
inline std::vector<ScoredNode> score_negatives(const EmbeddingVector& query, const RetrievalGraph& graph, double lambda) {
  std::vector<ScoredNode> scored;
  const auto& nodes = graph.nodes();
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    if (nodes[j].label != ExampleLabel::Negative) continue;
    double connectivity = 0.0;
    const auto& nbrs = graph.intra_neighbors(j);
    if (!nbrs.empty()) {
      for (const auto& [k, sim] : nbrs) connectivity += sim;
      connectivity /= static_cast<double>(nbrs.size());
    }
    scored.push_back({j, cosine(query, nodes[j].z_text) + lambda * connectivity});
  }
  std::sort(scored.begin(), scored.end(), [&](const ScoredNode& x, const ScoredNode& y) {
    if (x.score != y.score) return x.score > y.score;
    return nodes[x.index].id < nodes[y.index].id;
  });
  return scored;
}

/// Top-k negatives for a text query. An empty graph-side result is reported
/// through `warnings` rather than thrown.
inline std::vector<ExampleNode> retrieve_negatives(const EmbeddingVector& query, const RetrievalGraph& graph,
                                                   std::int64_t k, double lambda,
                                                   std::vector<std::string>* warnings = nullptr) {
  if (k <= 0) throw ArgumentError("k must be positive, got " + std::to_string(k));
  if (graph.text_dim() != 0 && query.dim() != graph.text_dim()) {
    throw EmbeddingError("query dim " + std::to_string(query.dim()) + " != graph text dim " +
                         std::to_string(graph.text_dim()));
  }
  auto scored = score_negatives(query, graph, lambda);
  if (scored.empty() && warnings) warnings->push_back("retrieval graph has no negative examples");
  std::vector<ExampleNode> out;
  for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(k); ++i) {
    out.push_back(graph.nodes()[scored[i].index]);
  }
  return out;
}

/// For each negative, the positive at the far end of its strongest inter-class
/// edge (ties: lower node id). Duplicates keep their first occurrence.
inline std::vector<ExampleNode> paired_positives(const std::vector<ExampleNode>& negatives, const RetrievalGraph& graph,
                                                 std::vector<std::string>* warnings = nullptr) {
  std::vector<ExampleNode> out;
  std::set<std::size_t> taken;
  for (const auto& neg : negatives) {
    auto j = graph.index_of(neg.id);
    std::optional<std::pair<std::size_t, double>> best;
    for (const auto& [k, sim] : graph.inter_neighbors(j)) {
      if (!best || sim > best->second || (sim == best->second && graph.nodes()[k].id < graph.nodes()[best->first].id)) {
        best = std::make_pair(k, sim);
      }
    }
    if (!best) {
      if (warnings) warnings->push_back("negative '" + neg.id + "' has no inter-class edge");
      continue;
    }
    if (taken.insert(best->first).second) out.push_back(graph.nodes()[best->first]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kGraphFormatVersion = 1;

namespace rag_detail {

inline json node_to_json(const ExampleNode& n) {
  return json{{"id", n.id},
              {"label", to_string(n.label)},
              {"text", n.text},
              {"z_text", n.z_text.values()},
              {"z_image", n.z_image.values()},
              {"frame_count_used", n.frame_count_used}};
}

inline json edges_to_json(const std::vector<GraphEdge>& edges) {
  json arr = json::array();
  for (const auto& e : edges) arr.push_back(json::array({e.a, e.b, e.sim}));
  return arr;
}

inline std::vector<GraphEdge> edges_from_json(const json& arr) {
  std::vector<GraphEdge> edges;
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 3) throw GraphLoadError("edge entries must be [a, b, sim]");
    edges.push_back({e[0].get<std::string>(), e[1].get<std::string>(), e[2].get<double>()});
  }
  return edges;
}

inline json graph_body(const RetrievalGraph& g) {
  json nodes = json::array();
  for (const auto& n : g.nodes()) nodes.push_back(node_to_json(n));
  return json{{"version", kGraphFormatVersion},
              {"params", {{"alpha", g.params().alpha}, {"tau_pos", g.params().tau_pos}, {"tau_neg", g.params().tau_neg}}},
              {"dims", {{"text", g.text_dim()}, {"image", g.image_dim()}}},
              {"nodes", nodes},
              {"intra_edges", edges_to_json(g.intra_edges())},
              {"inter_edges", edges_to_json(g.inter_edges())}};
}

}  // namespace rag_detail

/// JSON document; the checksum is the SHA-256 of the compact dump of every
/// other field. Doubles are written in shortest round-trip form.
inline std::string serialize_graph(const RetrievalGraph& g) {
  auto body = rag_detail::graph_body(g);
  auto checksum = sha256_hex(body.dump());
  body["checksum"] = checksum;
  return body.dump(1) + "\n";
}

inline RetrievalGraph parse_graph(std::string_view text) {
  if (trim(text).empty()) throw GraphLoadError("graph file is empty");
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorruptionError(std::string("graph file is truncated or corrupt: ") + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("version")) throw GraphLoadError("graph file has no version");
    if (doc.at("version").get<int>() != kGraphFormatVersion) {
      throw GraphLoadError("unsupported graph version " + doc.at("version").dump());
    }
    if (!doc.contains("checksum")) throw CorruptionError("graph file has no checksum");
    auto stored = doc.at("checksum").get<std::string>();
    doc.erase("checksum");
    if (sha256_hex(doc.dump()) != stored) throw CorruptionError("graph checksum mismatch");

    std::vector<ExampleNode> nodes;
    for (const auto& n : doc.at("nodes")) {
      nodes.push_back({n.at("id").get<std::string>(), example_label_from_string(n.at("label").get<std::string>()),
                       n.at("text").get<std::string>(), EmbeddingVector(n.at("z_text").get<std::vector<double>>()),
                       EmbeddingVector(n.at("z_image").get<std::vector<double>>()),
                       n.value("frame_count_used", 4)});
    }
    const auto& p = doc.at("params");
    GraphParams params{p.at("alpha").get<double>(), p.at("tau_pos").get<double>(), p.at("tau_neg").get<double>()};
    RetrievalGraph g(std::move(nodes), rag_detail::edges_from_json(doc.at("intra_edges")),
                     rag_detail::edges_from_json(doc.at("inter_edges")), params);
    const auto& dims = doc.at("dims");
    if (dims.at("text").get<std::size_t>() != g.text_dim() || dims.at("image").get<std::size_t>() != g.image_dim()) {
      throw GraphLoadError("declared dims do not match node embeddings");
    }
    return g;
  } catch (const json::exception& e) {
    throw GraphLoadError(std::string("malformed graph document: ") + e.what());
  } catch (const GraphBuildError& e) {
    throw GraphLoadError(std::string("invalid graph structure: ") + e.what());
  }
}

inline void save_graph(const RetrievalGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write graph file " + path.string());
  out << serialize_graph(g);
}

inline RetrievalGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GraphLoadError("cannot open graph file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_graph(ss.str());
}

}  // namespace t2vshield
