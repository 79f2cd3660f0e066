#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <algorithm>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "t2vshield/t2vshield.hpp"

namespace t2vshield::testing {

inline std::filesystem::path fixtures_dir() { return T2VSHIELD_FIXTURES_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t2vs") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline EmbeddingVector vec(std::initializer_list<double> xs) { return EmbeddingVector(std::vector<double>(xs)); }

inline EmbeddingVector random_vec(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  for (auto& x : v) x = nd(rng);
  return EmbeddingVector(std::move(v));
}

inline ExampleNode node(std::string id, ExampleLabel label, EmbeddingVector t, EmbeddingVector i) {
  return ExampleNode{std::move(id), label, "text of node", std::move(t), std::move(i), 4};
}

/// Random pool of `n` nodes. Embeddings are drawn near a few shared anchors
/// so that pools contain edges of both kinds.
inline std::vector<ExampleNode> random_pool(std::mt19937_64& rng, std::size_t n, std::size_t dt = 6, std::size_t di = 5) {
  std::uniform_int_distribution<int> anchor(0, 2);
  std::uniform_real_distribution<double> noise(0.05, 1.2);
  std::bernoulli_distribution neg(0.5);
  std::vector<EmbeddingVector> at, ai;
  for (int k = 0; k < 3; ++k) {
    at.push_back(random_vec(rng, dt));
    ai.push_back(random_vec(rng, di));
  }
  std::vector<ExampleNode> pool;
  for (std::size_t i = 0; i < n; ++i) {
    auto mix = [&](const EmbeddingVector& a, std::size_t d) {
      auto r = random_vec(rng, d);
      double s = noise(rng);
      std::vector<double> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = a[j] + s * r[j];
      return EmbeddingVector(std::move(v));
    };
    char id[32];
    std::snprintf(id, sizeof id, "n%03zu", i);
    pool.push_back(node(id, neg(rng) ? ExampleLabel::Negative : ExampleLabel::Positive, mix(at[anchor(rng)], dt),
                        mix(ai[anchor(rng)], di)));
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool;
}

/// Rewriter answering from a callback and counting calls.
class FnRewriter : public Rewriter {
 public:
  explicit FnRewriter(std::function<std::string(std::string_view)> fn) : fn_(std::move(fn)) {}
  std::string complete(std::string_view prompt) override {
    ++calls;
    prompts.emplace_back(prompt);
    return fn_(prompt);
  }
  std::atomic<int> calls{0};
  std::vector<std::string> prompts;

 private:
  std::function<std::string(std::string_view)> fn_;
};

class FixedToxicity : public ToxicityScorer {
 public:
  explicit FixedToxicity(double h) : h_(h) {}
  double score(std::string_view) override { return h_; }

 private:
  double h_;
};

class FixedRisk : public RiskTextClassifier {
 public:
  explicit FixedRisk(RiskScores s) : s_(std::move(s)) {}
  RiskScores classify(std::string_view) override { return s_; }

 private:
  RiskScores s_;
};

class FixedJudge : public Judge {
 public:
  explicit FixedJudge(double rho) : rho_(rho) {}
  double unsafe_score(std::span<const Image> frames) override {
    last_frames = frames.size();
    return rho_;
  }
  std::size_t last_frames = 0;

 private:
  double rho_;
};

/// NSFW classifier flagging a fixed set of frame colors' red channel values.
class RedChannelNsfw : public NsfwClassifier {
 public:
  explicit RedChannelNsfw(std::set<int> unsafe_reds) : reds_(std::move(unsafe_reds)) {}
  NsfwResult classify(const Image& img) override {
    auto ppm = decode_ppm(img);
    if (ppm && reds_.count(ppm->pixels.front().r)) return {true, 0.97};
    return {false, 0.9};
  }

 private:
  std::set<int> reds_;
};

/// A T-frame video whose frame t has red channel t mod 256 (so frames are
/// distinguishable), with optional marker frames.
inline VideoArtifact numbered_video(std::size_t T, double fps = 8.0, const std::set<std::size_t>& markers = {}) {
  std::vector<Image> frames;
  for (std::size_t t = 1; t <= T; ++t) {
    frames.push_back(markers.count(t) ? make_solid_ppm(kMarkerColor)
                                      : make_solid_ppm(Rgb{static_cast<std::uint8_t>(t % 200), 30, 60}));
  }
  return VideoArtifact("video-" + std::to_string(T), fps, std::move(frames));
}

inline AdapterRegistry mock_registry(const MockSettings& s = {}) { return MockSuite(s).registry(); }

}  // namespace t2vshield::testing
