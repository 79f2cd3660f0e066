#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <tuple>

#include "support.hpp"

using namespace t2vshield;
using namespace t2vshield::testing;

namespace {

double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return static_cast<double>(dot / std::sqrt(na * nb));
}

using EdgeKey = std::tuple<std::string, std::string>;

std::set<EdgeKey> keys(const std::vector<GraphEdge>& edges) {
  std::set<EdgeKey> out;
  for (const auto& e : edges) out.emplace(std::min(e.a, e.b), std::max(e.a, e.b));
  return out;
}

// Edge sets from the threshold rule, with a margin so that rounding
// differences between implementations cannot flip a comparison.
struct OracleEdges {
  std::set<EdgeKey> intra, inter, ambiguous;
};

OracleEdges oracle_edges(const std::vector<ExampleNode>& pool, double alpha, double tp, double tn) {
  OracleEdges o;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      double s = alpha * oracle_cos(pool[i].z_text.values(), pool[j].z_text.values()) +
                 (1 - alpha) * oracle_cos(pool[i].z_image.values(), pool[j].z_image.values());
      bool same = pool[i].label == pool[j].label;
      double tau = same ? tp : tn;
      EdgeKey k{std::min(pool[i].id, pool[j].id), std::max(pool[i].id, pool[j].id)};
      if (std::abs(s - tau) < 1e-12) o.ambiguous.insert(k);
      else if (s > tau) (same ? o.intra : o.inter).insert(k);
    }
  }
  return o;
}

EmbeddingVector unit_angle(double c) { return vec({c, std::sqrt(1 - c * c)}); }

}  // namespace

TEST(EmbedSample, MeanOfFrames) {
  MockTextEmbedder emb;
  std::vector<EmbeddingVector> two{vec({1, 0}), vec({0, 1})};
  EXPECT_EQ(embed_sample("x", two, emb).z_image, vec({0.5, 0.5}));
  std::vector<EmbeddingVector> one{vec({0.2, 0.8})};
  EXPECT_EQ(embed_sample("x", one, emb).z_image, vec({0.2, 0.8}));
  EXPECT_EQ(embed_sample("x", one, emb).z_text, emb.embed_text("x"));
  std::vector<EmbeddingVector> none;
  EXPECT_THROW(embed_sample("x", none, emb), EmbeddingError);
  std::vector<EmbeddingVector> mixed{vec({1, 0}), vec({1, 0, 0})};
  EXPECT_THROW(embed_sample("x", mixed, emb), EmbeddingError);
}

TEST(EmbedSample, MatchesMeanOracle) {
  std::mt19937_64 rng(4);
  MockTextEmbedder emb;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EmbeddingVector> frames;
    for (int f = 0; f < 4; ++f) frames.push_back(random_vec(rng, 9));
    auto z = embed_sample("x", frames, emb).z_image;
    for (std::size_t d = 0; d < 9; ++d) {
      double m = (frames[0][d] + frames[1][d] + frames[2][d] + frames[3][d]) / 4.0;
      EXPECT_NEAR(z[d], m, 1e-12);
    }
  }
}

TEST(PairwiseSim, Examples) {
  auto a = node("a", ExampleLabel::Positive, vec({1, 2}), vec({3, 4}));
  EXPECT_NEAR(pairwise_sim(a, a, 0.7), 1.0, 1e-15);
  auto t1 = node("a", ExampleLabel::Positive, vec({1, 0}), vec({1, 1}));
  auto t2 = node("b", ExampleLabel::Positive, vec({0, 1}), vec({1, 1}));
  EXPECT_NEAR(pairwise_sim(t1, t2, 0.7), 0.3, 1e-15);
  auto x = node("a", ExampleLabel::Positive, vec({1, 0}), vec({1, 1}));
  auto y = node("b", ExampleLabel::Positive, vec({1, 1}), vec({1, 0}));
  EXPECT_NEAR(pairwise_sim(x, y, 0.7), 0.7 / std::sqrt(2.0) + 0.3 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(pairwise_sim(x, y, 0.7), 0.7071, 1e-4);
}

TEST(PairwiseSim, SymmetricAndBounded) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> alpha(0.01, 0.99);
  for (int trial = 0; trial < 500; ++trial) {
    auto a = node("a", ExampleLabel::Positive, random_vec(rng, 5), random_vec(rng, 3));
    auto b = node("b", ExampleLabel::Negative, random_vec(rng, 5), random_vec(rng, 3));
    double al = alpha(rng);
    EXPECT_DOUBLE_EQ(pairwise_sim(a, b, al), pairwise_sim(b, a, al));
    EXPECT_LE(std::abs(pairwise_sim(a, b, al)), 1.0 + 1e-12);
  }
}

TEST(BuildGraph, ThresholdExamples) {
  PipelineConfig c;
  // text cos 1, image cos 1/3: 0.7 + 0.3/3 = 0.8
  auto p1 = node("p1", ExampleLabel::Positive, vec({1, 0}), vec({1, 0}));
  auto p2 = node("p2", ExampleLabel::Positive, vec({2, 0}), unit_angle(1.0 / 3.0));
  auto g = build_graph({p1, p2}, c, 1);
  ASSERT_EQ(g.intra_edges().size(), 1u);
  EXPECT_NEAR(g.intra_edges()[0].sim, 0.8, 1e-12);

  // text cos 1, image cos 0: exactly 0.7, which does not clear the strict rule
  auto p3 = node("p3", ExampleLabel::Positive, vec({1, 0}), vec({0, 1}));
  EXPECT_EQ(pairwise_sim(p1, p3, 0.7), 0.7);
  EXPECT_TRUE(build_graph({p1, p3}, c, 1).intra_edges().empty());

  // cross-label pair at 0.31 (text cos 0.3, image cos 1/3)
  auto n1 = node("n1", ExampleLabel::Negative, unit_angle(0.3), unit_angle(1.0 / 3.0));
  EXPECT_NEAR(pairwise_sim(p1, n1, 0.7), 0.31, 1e-12);
  auto g2 = build_graph({p1, n1}, c, 1);
  EXPECT_EQ(g2.inter_edges().size(), 1u);
  EXPECT_TRUE(g2.intra_edges().empty());

  // cross-label pair at exactly 0.3 has no edge
  auto n2 = node("n2", ExampleLabel::Negative, vec({0, 1}), vec({1, 0}));
  EXPECT_NEAR(pairwise_sim(p1, n2, 0.7), 0.3, 1e-15);
  c.tau_neg = pairwise_sim(p1, n2, 0.7);
  EXPECT_TRUE(build_graph({p1, n2}, c, 1).inter_edges().empty());
}

TEST(BuildGraph, ErrorsListOffendingIds) {
  PipelineConfig c;
  auto a = node("a", ExampleLabel::Positive, vec({1, 0}), vec({1, 0}));
  auto b = node("b", ExampleLabel::Positive, vec({1, 0, 0}), vec({1, 0}));
  try {
    build_graph({a, b}, c, 1);
    FAIL();
  } catch (const GraphBuildError& e) {
    EXPECT_NE(std::string(e.what()).find("nodes: b"), std::string::npos);
  }
  EXPECT_THROW(build_graph({a}, c, 1), ArgumentError);
  EXPECT_THROW(build_graph({a, a}, c, 1), GraphBuildError);
}

TEST(BuildGraph, MatchesBruteForceOracle) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> size(2, 20);
  PipelineConfig c;
  for (int trial = 0; trial < 100; ++trial) {
    auto pool = random_pool(rng, size(rng));
    auto o = oracle_edges(pool, c.alpha, c.tau_pos, c.tau_neg);
    auto g = build_graph(pool, c, 1 + trial % 4);
    auto intra = keys(g.intra_edges()), inter = keys(g.inter_edges());
    for (const auto& k : o.ambiguous) {
      intra.erase(k);
      inter.erase(k);
    }
    EXPECT_EQ(intra, o.intra) << "trial " << trial;
    EXPECT_EQ(inter, o.inter) << "trial " << trial;
    for (const auto& e : g.intra_edges()) EXPECT_GT(e.sim, c.tau_pos);
    for (const auto& e : g.inter_edges()) EXPECT_GT(e.sim, c.tau_neg);
  }
}

TEST(BuildGraph, IndependentOfWorkerCount) {
  std::mt19937_64 rng(7);
  auto pool = random_pool(rng, 20);
  auto g1 = build_graph(pool, PipelineConfig{}, 1);
  for (std::size_t w : {2u, 3u, 8u}) EXPECT_EQ(build_graph(pool, PipelineConfig{}, w), g1);
}

TEST(BuildGraph, RaisingThresholdsNeverAddsEdges) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    auto pool = random_pool(rng, 15);
    PipelineConfig lo, hi;
    lo.tau_pos = 0.5;
    lo.tau_neg = 0.2;
    hi.tau_pos = 0.8;
    hi.tau_neg = 0.4;
    auto gl = build_graph(pool, lo, 1), gh = build_graph(pool, hi, 1);
    auto li = keys(gl.intra_edges()), le = keys(gl.inter_edges());
    for (const auto& k : keys(gh.intra_edges())) EXPECT_TRUE(li.count(k));
    for (const auto& k : keys(gh.inter_edges())) EXPECT_TRUE(le.count(k));
  }
}

TEST(BuildGraph, ScaleInvariant) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    auto pool = random_pool(rng, 12);
    auto scaled = pool;
    for (auto& n : scaled) {
      std::vector<double> t(n.z_text.values()), i(n.z_image.values());
      double s = scale(rng);
      for (auto& x : t) x *= s;
      for (auto& x : i) x *= s;
      n.z_text = EmbeddingVector(t);
      n.z_image = EmbeddingVector(i);
    }
    auto a = build_graph(pool, PipelineConfig{}, 1), b = build_graph(scaled, PipelineConfig{}, 1);
    auto o = oracle_edges(pool, 0.7, 0.7, 0.3);
    if (!o.ambiguous.empty()) continue;
    EXPECT_EQ(keys(a.intra_edges()), keys(b.intra_edges()));
    EXPECT_EQ(keys(a.inter_edges()), keys(b.inter_edges()));
  }
}

TEST(RetrieveNegatives, SingleNegativeAlwaysReturned) {
  auto p = node("p", ExampleLabel::Positive, vec({1, 0}), vec({1, 0}));
  auto n = node("n", ExampleLabel::Negative, vec({-1, 0}), vec({0, 1}));
  auto g = build_graph({p, n}, PipelineConfig{}, 1);
  auto got = retrieve_negatives(vec({1, 0}), g, 3, 0.2);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].id, "n");
}

TEST(RetrieveNegatives, NeighborRichNodeWins) {
  // A and B have equal text cosine to the query; A has an intra neighbor C at 0.9.
  double c67 = 6.0 / 7.0;
  auto A = node("A", ExampleLabel::Negative, vec({1, 0}), vec({1, 0}));
  auto B = node("B", ExampleLabel::Negative, vec({1, 0}), vec({0, 1}));
  auto C = node("C", ExampleLabel::Negative, unit_angle(c67), vec({1, 0}));
  auto g = build_graph({B, C, A}, PipelineConfig{}, 1);
  ASSERT_EQ(g.intra_edges().size(), 1u);
  EXPECT_NEAR(g.intra_edges()[0].sim, 0.9, 1e-12);

  auto q = vec({1, 0});
  auto scored = score_negatives(q, g, 0.2);
  std::map<std::string, double> by_id;
  for (const auto& s : scored) by_id[g.nodes()[s.index].id] = s.score;
  EXPECT_NEAR(by_id["A"] - by_id["B"], 0.18, 1e-12);
  auto top = retrieve_negatives(q, g, 3, 0.2);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].id, "A");
  EXPECT_EQ(top[2].id, "B");
}

TEST(RetrieveNegatives, Errors) {
  auto p = node("p", ExampleLabel::Positive, vec({1, 0}), vec({1, 0}));
  auto p2 = node("q", ExampleLabel::Positive, vec({1, 0}), vec({1, 0}));
  auto g = build_graph({p, p2}, PipelineConfig{}, 1);
  EXPECT_THROW(retrieve_negatives(vec({1, 0}), g, 0, 0.2), ArgumentError);
  EXPECT_THROW(retrieve_negatives(vec({1, 0, 0}), g, 1, 0.2), EmbeddingError);
  std::vector<std::string> warnings;
  EXPECT_TRUE(retrieve_negatives(vec({1, 0}), g, 2, 0.2, &warnings).empty());
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(RetrieveNegatives, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> kdist(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    auto pool = random_pool(rng, 16);
    auto g = build_graph(pool, PipelineConfig{}, 1);
    auto q = random_vec(rng, 6);
    int k = kdist(rng);
    for (double lambda : {0.0, 0.2}) {
      // Exhaustive scoring from the raw edge list.
      std::vector<std::pair<double, std::string>> all;
      for (const auto& n : g.nodes()) {
        if (n.label != ExampleLabel::Negative) continue;
        double sum = 0;
        int deg = 0;
        for (const auto& e : g.intra_edges()) {
          if (e.a == n.id || e.b == n.id) {
            sum += e.sim;
            ++deg;
          }
        }
        all.emplace_back(oracle_cos(q.values(), n.z_text.values()) + lambda * (deg ? sum / deg : 0.0), n.id);
      }
      std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
        if (std::abs(x.first - y.first) > 1e-12) return x.first > y.first;
        return x.second < y.second;
      });
      auto got = retrieve_negatives(q, g, k, lambda);
      ASSERT_EQ(got.size(), std::min<std::size_t>(k, all.size()));
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].id, all[i].second) << trial;
    }
  }
}

TEST(RetrieveNegatives, ZeroLambdaIsCosineRanking) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = build_graph(random_pool(rng, 14), PipelineConfig{}, 1);
    auto q = random_vec(rng, 6);
    auto got = retrieve_negatives(q, g, 100, 0.0);
    for (std::size_t i = 1; i < got.size(); ++i) {
      EXPECT_GE(cosine(q, got[i - 1].z_text), cosine(q, got[i].z_text));
    }
  }
}

TEST(RetrieveNegatives, ConnectivityOnlyHelps) {
  // Raising lambda never lowers a node's score relative to lambda = 0.
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = build_graph(random_pool(rng, 14), PipelineConfig{}, 1);
    auto q = random_vec(rng, 6);
    auto s0 = score_negatives(q, g, 0.0), s1 = score_negatives(q, g, 0.5);
    std::map<std::size_t, double> a, b;
    for (const auto& s : s0) a[s.index] = s.score;
    for (const auto& s : s1) b[s.index] = s.score;
    for (const auto& [i, v] : a) EXPECT_GE(b[i], v);
  }
}

TEST(PairedPositives, ArgmaxSkipAndDedup) {
  PipelineConfig c;
  c.tau_pos = 0.999;  // no intra edges in this toy graph
  // n1's partners: pa at 0.35 and pb at 0.5
  auto n1 = node("n1", ExampleLabel::Negative, vec({1, 0}), vec({1, 0}));
  auto pa = node("pa", ExampleLabel::Positive, unit_angle(0.35), unit_angle(0.35));
  auto pb = node("pb", ExampleLabel::Positive, unit_angle(0.5), unit_angle(0.5));
  auto iso = node("iso", ExampleLabel::Negative, vec({-1, 0}), vec({-1, 0}));
  auto g = build_graph({n1, pa, pb, iso}, c, 1);
  std::vector<std::string> warnings;
  auto got = paired_positives({g.node("n1")}, g, &warnings);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].id, "pb");
  EXPECT_TRUE(warnings.empty());

  got = paired_positives({g.node("iso")}, g, &warnings);
  EXPECT_TRUE(got.empty());
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(PairedPositives, SharedBestPartnerAppearsOnce) {
  PipelineConfig c;
  c.tau_pos = 0.999;
  auto n1 = node("n1", ExampleLabel::Negative, vec({1, 0}), vec({1, 0}));
  auto n2 = node("n2", ExampleLabel::Negative, unit_angle(0.9), unit_angle(0.9));
  auto p1 = node("p1", ExampleLabel::Positive, unit_angle(0.95), unit_angle(0.95));
  auto p2 = node("p2", ExampleLabel::Positive, unit_angle(0.4), unit_angle(0.4));
  auto g = build_graph({n1, n2, p1, p2}, c, 1);
  // Enumeration: best inter partner of every negative.
  std::map<std::string, std::pair<double, std::string>> best;
  for (const auto& e : g.inter_edges()) {
    const auto& neg = g.node(e.a).label == ExampleLabel::Negative ? e.a : e.b;
    const auto& pos = neg == e.a ? e.b : e.a;
    auto& b = best[neg];
    if (e.sim > b.first) b = {e.sim, pos};
  }
  ASSERT_EQ(best["n1"].second, "p1");
  ASSERT_EQ(best["n2"].second, "p1");
  auto got = paired_positives({g.node("n1"), g.node("n2")}, g);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].id, "p1");
}

TEST(GraphPersistence, RoundTrip) {
  std::mt19937_64 rng(2);
  TempDir dir;
  for (int trial = 0; trial < 10; ++trial) {
    auto g = build_graph(random_pool(rng, 12), PipelineConfig{}, 1);
    save_graph(g, dir / "g.json");
    EXPECT_EQ(load_graph(dir / "g.json"), g);
  }
}

TEST(GraphPersistence, TruncatedEmptyAndTampered) {
  std::mt19937_64 rng(3);
  TempDir dir;
  auto g = build_graph(random_pool(rng, 8), PipelineConfig{}, 1);
  auto text = serialize_graph(g);

  std::ofstream(dir / "t.json") << text.substr(0, text.size() / 2);
  EXPECT_THROW(load_graph(dir / "t.json"), CorruptionError);

  std::ofstream(dir / "e.json") << "";
  EXPECT_THROW(load_graph(dir / "e.json"), GraphLoadError);
  EXPECT_THROW(load_graph(dir / "missing.json"), GraphLoadError);

  auto doc = json::parse(text);
  doc["nodes"][0]["text"] = "tampered";
  std::ofstream(dir / "x.json") << doc.dump();
  EXPECT_THROW(load_graph(dir / "x.json"), CorruptionError);

  doc = json::parse(text);
  doc["version"] = 99;
  std::ofstream(dir / "v.json") << doc.dump();
  try {
    load_graph(dir / "v.json");
    FAIL();
  } catch (const CorruptionError&) {
    FAIL() << "version mismatch should not look like corruption";
  } catch (const GraphLoadError&) {
  }
}
