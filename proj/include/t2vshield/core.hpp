#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "t2vshield/error.hpp"

namespace t2vshield {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// String helpers shared by several stages.

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Prompt

enum class Origin { Benchmark, User, Rewritten };

inline const char* to_string(Origin o) {
  switch (o) {
    case Origin::Benchmark: return "benchmark";
    case Origin::User: return "user";
    case Origin::Rewritten: return "rewritten";
  }
  return "user";
}

inline Origin origin_from_string(std::string_view s) {
  if (s == "benchmark") return Origin::Benchmark;
  if (s == "user") return Origin::User;
  if (s == "rewritten") return Origin::Rewritten;
  throw ValidationError("unknown prompt origin: " + std::string(s));
}

/// An input text to the generator. The text is never blank.
class Prompt {
 public:
  Prompt(std::string id, std::string text, std::optional<std::string> category = std::nullopt,
         Origin origin = Origin::User)
      : id_(std::move(id)), text_(std::move(text)), category_(std::move(category)), origin_(origin) {
    if (trim(text_).empty()) throw ValidationError("prompt '" + id_ + "' has empty text");
  }

  const std::string& id() const noexcept { return id_; }
  const std::string& text() const noexcept { return text_; }
  const std::optional<std::string>& category() const noexcept { return category_; }
  Origin origin() const noexcept { return origin_; }

  /// Same id and category, new text, origin=rewritten.
  Prompt rewritten(std::string text) const { return Prompt(id_, std::move(text), category_, Origin::Rewritten); }

  bool operator==(const Prompt&) const = default;

 private:
  std::string id_;
  std::string text_;
  std::optional<std::string> category_;
  Origin origin_;
};

inline json to_json(const Prompt& p) {
  json j{{"id", p.id()}, {"text", p.text()}, {"origin", to_string(p.origin())}};
  j["category"] = p.category() ? json(*p.category()) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Risk taxonomy

/// The 14 benchmark risk categories used when no taxonomy is configured.
inline std::vector<std::string> default_taxonomy() {
  return {"pornography",           "borderline_pornography", "violence",
          "gore",                  "disturbing_content",     "public_figures",
          "discrimination",        "political_sensitivity",  "copyright_infringement",
          "illegal_activities",    "misinformation",         "sequential_action_risk",
          "dynamic_variation_risk", "coherent_contextual_risk"};
}

/// Closed set of category names. "safe" is reserved for the non-risk class.
class RiskTaxonomy {
 public:
  RiskTaxonomy() : RiskTaxonomy(default_taxonomy()) {}
  explicit RiskTaxonomy(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ValidationError("risk taxonomy is empty");
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw ValidationError("risk taxonomy contains an empty name");
      if (n == "safe") throw ValidationError("'safe' is reserved and cannot be a risk category");
      if (!seen.insert(n).second) throw ValidationError("duplicate risk category: " + n);
    }
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  bool contains(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
  }

  bool operator==(const RiskTaxonomy&) const = default;

 private:
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Embeddings

/// Fixed-length vector of finite reals. The zero vector is allowed; cosine
/// treats it as orthogonal to everything.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw EmbeddingError("embedding must have positive dimension");
    for (double v : values_) {
      if (!std::isfinite(v)) throw NumericError("embedding contains a non-finite entry");
    }
  }

  std::size_t dim() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool is_zero() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Cosine similarity. Zero vectors yield 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw NumericError("cosine dimension mismatch: " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NumericError("cosine of non-finite vector");
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.span(), b.span()); }

// ---------------------------------------------------------------------------
// Verdicts

enum class SafetyLabel { Safe = 0, PotentialUnsafe = 1, Unsafe = 2 };

inline SafetyLabel fuse(SafetyLabel a, SafetyLabel b) { return std::max(a, b); }

inline const char* to_string(SafetyLabel l) {
  switch (l) {
    case SafetyLabel::Safe: return "safe";
    case SafetyLabel::PotentialUnsafe: return "potential_unsafe";
    case SafetyLabel::Unsafe: return "unsafe";
  }
  return "unsafe";
}

inline SafetyLabel label_from_string(std::string_view s) {
  if (s == "safe") return SafetyLabel::Safe;
  if (s == "potential_unsafe") return SafetyLabel::PotentialUnsafe;
  if (s == "unsafe") return SafetyLabel::Unsafe;
  throw ValidationError("unknown safety label: " + std::string(s));
}

/// Both unsafe and potentially unsafe content count as malicious.
inline bool is_malicious(SafetyLabel l) { return l >= SafetyLabel::PotentialUnsafe; }

enum class Stage { InputGate, RewriteVerify, OutputDetect, Judge };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::InputGate: return "input_gate";
    case Stage::RewriteVerify: return "rewrite_verify";
    case Stage::OutputDetect: return "output_detect";
    case Stage::Judge: return "judge";
  }
  return "input_gate";
}

/// A pipeline stage failed; carries which stage so callers can fail closed.
class StageError : public Error {
 public:
  StageError(Stage stage, std::string step, const std::string& detail)
      : Error(std::string(to_string(stage)) + "/" + step + ": " + detail), stage_(stage), step_(std::move(step)) {}
  Stage stage() const noexcept { return stage_; }
  const std::string& step() const noexcept { return step_; }

 private:
  Stage stage_;
  std::string step_;
};

inline Stage stage_from_string(std::string_view s) {
  if (s == "input_gate") return Stage::InputGate;
  if (s == "rewrite_verify") return Stage::RewriteVerify;
  if (s == "output_detect") return Stage::OutputDetect;
  if (s == "judge") return Stage::Judge;
  throw ValidationError("unknown stage: " + std::string(s));
}

struct Evidence {
  std::string detector;
  double score = 0.0;
  std::string detail;

  bool operator==(const Evidence&) const = default;
};

/// A three-way label with the evidence that produced it. Non-safe verdicts
/// always carry at least one evidence item; every score lies in [0,1].
class SafetyVerdict {
 public:
  SafetyVerdict(SafetyLabel label, Stage stage, std::vector<Evidence> evidence = {})
      : label_(label), stage_(stage), evidence_(std::move(evidence)) {
    if (label_ != SafetyLabel::Safe && evidence_.empty()) {
      throw ValidationError(std::string("verdict '") + to_string(label_) + "' requires evidence");
    }
    for (const auto& e : evidence_) {
      if (!(e.score >= 0.0 && e.score <= 1.0)) {
        throw ValidationError("evidence score out of [0,1] from " + e.detector);
      }
    }
  }

  static SafetyVerdict safe(Stage stage) { return SafetyVerdict(SafetyLabel::Safe, stage); }

  SafetyLabel label() const noexcept { return label_; }
  Stage stage() const noexcept { return stage_; }
  const std::vector<Evidence>& evidence() const noexcept { return evidence_; }

  bool operator==(const SafetyVerdict&) const = default;

 private:
  SafetyLabel label_;
  Stage stage_;
  std::vector<Evidence> evidence_;
};

inline json to_json(const Evidence& e) {
  return json{{"detector", e.detector}, {"score", e.score}, {"detail", e.detail}};
}

inline json to_json(const SafetyVerdict& v) {
  json ev = json::array();
  for (const auto& e : v.evidence()) ev.push_back(to_json(e));
  return json{{"label", to_string(v.label())}, {"stage", to_string(v.stage())}, {"evidence", ev}};
}

inline SafetyVerdict verdict_from_json(const json& j) {
  std::vector<Evidence> ev;
  for (const auto& e : j.at("evidence")) {
    ev.push_back({e.at("detector").get<std::string>(), e.at("score").get<double>(),
                  e.value("detail", std::string{})});
  }
  return SafetyVerdict(label_from_string(j.at("label").get<std::string>()),
                       stage_from_string(j.at("stage").get<std::string>()), std::move(ev));
}

}  // namespace t2vshield
