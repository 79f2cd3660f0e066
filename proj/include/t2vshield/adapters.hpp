#pragma once

#include <array>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "t2vshield/core.hpp"
#include "t2vshield/media.hpp"

namespace t2vshield {

// Every external model sits behind one of these interfaces. Implementations
// must be safe to call concurrently and report failures as AdapterError.

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual EmbeddingVector embed_text(std::string_view text) = 0;
  virtual std::size_t dim() const = 0;
};

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual EmbeddingVector embed_image(const Image& image) = 0;
  virtual std::size_t dim() const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(std::span<const Image> frames) = 0;
};

struct NsfwResult {
  bool unsafe = false;
  double score = 0.0;  // confidence of the reported label

  bool operator==(const NsfwResult&) const = default;
};

class NsfwClassifier {
 public:
  virtual ~NsfwClassifier() = default;
  virtual NsfwResult classify(const Image& image) = 0;
};

class ToxicityScorer {
 public:
  virtual ~ToxicityScorer() = default;
  /// Probability in [0,1] that the text is toxic.
  virtual double score(std::string_view text) = 0;
};

/// Category confidences (including "safe") and an ambiguity score for a caption.
struct RiskScores {
  std::map<std::string, double> p;
  double ambiguity = 0.0;

  bool operator==(const RiskScores&) const = default;
};

class RiskTextClassifier {
 public:
  virtual ~RiskTextClassifier() = default;
  virtual RiskScores classify(std::string_view text) = 0;
};

/// A text-in, text-out language model driven by the rewriting templates.
class Rewriter {
 public:
  virtual ~Rewriter() = default;
  virtual std::string complete(std::string_view prompt) = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// Unsafe score in [0,1] for the given frames.
  virtual double unsafe_score(std::span<const Image> frames) = 0;
};

class VideoGenerator {
 public:
  virtual ~VideoGenerator() = default;
  virtual VideoArtifact generate(std::string_view prompt) = 0;
};

/// One resolved endpoint per pipeline stage.
struct AdapterRegistry {
  std::shared_ptr<TextEmbedder> text_embedder;
  std::shared_ptr<ImageEmbedder> image_embedder;
  std::shared_ptr<Captioner> captioner;
  std::shared_ptr<NsfwClassifier> nsfw_classifier;
  std::shared_ptr<ToxicityScorer> toxicity_scorer;
  std::shared_ptr<RiskTextClassifier> risk_text_classifier;
  std::shared_ptr<Rewriter> rewriter;
  std::shared_ptr<Judge> judge;
  std::shared_ptr<VideoGenerator> video_generator;

  /// Throws ConfigError naming the first unresolved adapter.
  void require_all() const {
    auto need = [](const auto& ptr, const char* name) {
      if (!ptr) throw ConfigError(name, "adapter is not configured");
    };
    need(text_embedder, "text_embedder");
    need(image_embedder, "image_embedder");
    need(captioner, "captioner");
    need(nsfw_classifier, "nsfw_classifier");
    need(toxicity_scorer, "toxicity_scorer");
    need(risk_text_classifier, "risk_text_classifier");
    need(rewriter, "rewriter");
    need(judge, "judge");
    need(video_generator, "video_generator");
  }
};

/// Adapter names as used in env vars, wire endpoints and error messages.
inline constexpr std::array<const char*, 9> kAdapterNames{
    "text_embedder", "image_embedder", "captioner", "nsfw_classifier", "toxicity_scorer",
    "risk_text_classifier", "rewriter", "judge", "video_generator"};

}  // namespace t2vshield
