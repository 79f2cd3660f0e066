#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/digest.hpp"
#include "t2vshield/risktrace_cot.hpp"

namespace t2vshield {

// Deterministic stand-ins for every external model. Each mock is a pure
// function of (seed, input): scripted responses first, then the policy.

enum class MockPolicy { Benign, FlagKeywords, Error };

inline MockPolicy mock_policy_from_string(std::string_view s) {
  if (s == "benign") return MockPolicy::Benign;
  if (s == "flag-keywords") return MockPolicy::FlagKeywords;
  if (s == "error") return MockPolicy::Error;
  throw ValidationError("unknown mock policy '" + std::string(s) + "'");
}

/// Keyword that flags text, with the risk category and rewriting class it maps to.
struct FlagKeyword {
  std::string word;
  std::string category;
  std::string risk_class;
};

inline std::vector<FlagKeyword> default_flag_keywords() {
  return {{"nude", "pornography", "Sexual"},         {"naked", "pornography", "Sexual"},
          {"porn", "pornography", "Sexual"},         {"explicit", "pornography", "Sexual"},
          {"gore", "gore", "Violence"},              {"blood", "gore", "Violence"},
          {"kill", "violence", "Violence"},          {"unsafe_token", "illegal_activities", "Dangerous-Act"}};
}

struct MockSettings {
  std::uint64_t seed = 0;
  MockPolicy policy = MockPolicy::FlagKeywords;
  std::vector<FlagKeyword> flag_keywords = default_flag_keywords();
  std::vector<std::string> trigger_tokens{"UNSAFE_TOKEN"};
  std::size_t dim = 64;
  std::size_t video_frames = 16;
  double video_fps = 8.0;
};

/// Color of frames the mock generator plants for trigger tokens and the mock
/// classifiers flag.
inline constexpr Rgb kMarkerColor{255, 0, 255};

inline bool is_marker_frame(const Image& img) {
  auto ppm = decode_ppm(img);
  if (!ppm || ppm->pixels.empty()) return false;
  return std::all_of(ppm->pixels.begin(), ppm->pixels.end(), [](const Rgb& p) { return p == kMarkerColor; });
}

/// Canned responses keyed by the SHA-256 of the canonicalized input
/// (surrounding whitespace trimmed, inner whitespace runs collapsed).
class Script {
 public:
  static std::string canonicalize(std::string_view input) {
    std::string out;
    bool space = false;
    for (char c : trim(input)) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        space = true;
        continue;
      }
      if (space && !out.empty()) out += ' ';
      space = false;
      out += c;
    }
    return out;
  }
  static std::string digest(std::string_view input) { return sha256_hex(canonicalize(input)); }
  static std::string image_key(const Image& img) { return sha256_hex(img.bytes); }
  static std::string images_key(std::span<const Image> imgs) {
    std::string key;
    for (const auto& i : imgs) key += (key.empty() ? "" : ",") + image_key(i);
    return key;
  }

  void add(std::string_view input, json response) {
    std::lock_guard lock(mu_);
    entries_[digest(input)] = std::move(response);
  }

  std::optional<json> find(std::string_view input) const {
    std::lock_guard lock(mu_);
    if (entries_.empty()) return std::nullopt;
    auto it = entries_.find(digest(input));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  bool empty() const {
    std::lock_guard lock(mu_);
    return entries_.empty();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, json> entries_;
};

class ScriptedMock {
 public:
  ScriptedMock(std::string name, MockSettings settings) : name_(std::move(name)), settings_(std::move(settings)) {}

  Script& script() { return script_; }
  const MockSettings& settings() const { return settings_; }
  std::size_t calls() const { return calls_.load(); }
  void set_policy(MockPolicy p) { settings_.policy = p; }

 protected:
  void begin_call() {
    ++calls_;
    if (settings_.policy == MockPolicy::Error) {
      throw AdapterError(AdapterErrorKind::Unavailable, name_, "scripted failure");
    }
  }

  bool flagging() const { return settings_.policy == MockPolicy::FlagKeywords; }

  /// Flag keywords (and trigger tokens) contained in the text, in list order.
  std::vector<FlagKeyword> flagged_in(std::string_view text) const {
    auto lower = to_lower(text);
    std::vector<FlagKeyword> hits;
    for (const auto& k : settings_.flag_keywords) {
      if (lower.find(to_lower(k.word)) != std::string::npos) hits.push_back(k);
    }
    for (const auto& t : settings_.trigger_tokens) {
      auto lt = to_lower(t);
      bool listed = std::any_of(hits.begin(), hits.end(), [&](const FlagKeyword& k) { return to_lower(k.word) == lt; });
      if (!listed && lower.find(lt) != std::string::npos) hits.push_back({t, "illegal_activities", "Dangerous-Act"});
    }
    return hits;
  }

  std::string name_;
  MockSettings settings_;
  Script script_;
  std::atomic<std::size_t> calls_{0};
};

namespace mock_detail {
inline std::vector<double> json_vector(const json& j, const std::string& adapter) {
  if (!j.is_array()) throw AdapterError(AdapterErrorKind::MalformedResponse, adapter, "scripted embedding is not an array");
  return j.get<std::vector<double>>();
}

inline std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '_' || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}
}  // namespace mock_detail

/// Signed feature hashing of lowercase word tokens: texts sharing words have
/// positive cosine.
class MockTextEmbedder : public TextEmbedder, public ScriptedMock {
 public:
  explicit MockTextEmbedder(MockSettings s = {}) : ScriptedMock("text_embedder", std::move(s)) {}

  EmbeddingVector embed_text(std::string_view text) override {
    begin_call();
    if (auto r = script_.find(text)) return EmbeddingVector(mock_detail::json_vector(*r, name_));
    std::vector<double> v(settings_.dim, 0.0);
    for (const auto& w : mock_detail::words(text)) {
      auto h = digest_seed(std::to_string(settings_.seed) + ":" + w);
      v[h % settings_.dim] += (h >> 63) ? -1.0 : 1.0;
    }
    return EmbeddingVector(std::move(v));
  }
  std::size_t dim() const override { return settings_.dim; }
};

/// Fixed random projection of the mean RGB color, so similar colors embed
/// close together. Non-PPM input hashes to a pseudo-random vector.
class MockImageEmbedder : public ImageEmbedder, public ScriptedMock {
 public:
  explicit MockImageEmbedder(MockSettings s = {}) : ScriptedMock("image_embedder", std::move(s)) {
    std::mt19937_64 rng(settings_.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> nd;
    projection_.resize(settings_.dim * 4);
    for (auto& w : projection_) w = nd(rng);
  }

  EmbeddingVector embed_image(const Image& image) override {
    begin_call();
    if (!script_.empty()) {
      if (auto r = script_.find(Script::image_key(image))) return EmbeddingVector(mock_detail::json_vector(*r, name_));
    }
    std::vector<double> v(settings_.dim, 0.0);
    if (auto ppm = decode_ppm(image)) {
      double r = 0, g = 0, b = 0;
      for (const auto& p : ppm->pixels) {
        r += p.r;
        g += p.g;
        b += p.b;
      }
      double n = static_cast<double>(ppm->pixels.size()) * 255.0;
      std::array<double, 4> feat{r / n, g / n, b / n, 1.0};
      for (std::size_t i = 0; i < settings_.dim; ++i) {
        for (std::size_t c = 0; c < 4; ++c) v[i] += projection_[i * 4 + c] * feat[c];
      }
    } else {
      std::mt19937_64 rng(settings_.seed ^ digest_seed(std::string(image.bytes.begin(), image.bytes.end())));
      std::normal_distribution<double> nd;
      for (auto& x : v) x = nd(rng);
    }
    return EmbeddingVector(std::move(v));
  }
  std::size_t dim() const override { return settings_.dim; }

 private:
  std::vector<double> projection_;
};

class MockCaptioner : public Captioner, public ScriptedMock {
 public:
  explicit MockCaptioner(MockSettings s = {}) : ScriptedMock("captioner", std::move(s)) {}

  std::string caption(std::span<const Image> frames) override {
    begin_call();
    if (!script_.empty()) {
      if (auto r = script_.find(Script::images_key(frames))) return r->get<std::string>();
    }
    if (flagging() && std::any_of(frames.begin(), frames.end(), is_marker_frame)) {
      return "a scene with explicit nude content";
    }
    return "a calm everyday scene across " + std::to_string(frames.size()) + " frames";
  }
};

class MockNsfwClassifier : public NsfwClassifier, public ScriptedMock {
 public:
  explicit MockNsfwClassifier(MockSettings s = {}) : ScriptedMock("nsfw_classifier", std::move(s)) {}

  NsfwResult classify(const Image& image) override {
    begin_call();
    if (!script_.empty()) {
      if (auto r = script_.find(Script::image_key(image))) {
        return {r->at("label").get<std::string>() == "unsafe", r->at("score").get<double>()};
      }
    }
    if (flagging() && is_marker_frame(image)) return {true, 0.99};
    return {false, 0.95};
  }
};

class MockToxicityScorer : public ToxicityScorer, public ScriptedMock {
 public:
  explicit MockToxicityScorer(MockSettings s = {}) : ScriptedMock("toxicity_scorer", std::move(s)) {}

  double score(std::string_view text) override {
    begin_call();
    if (auto r = script_.find(text)) return r->get<double>();
    if (flagging() && !flagged_in(text).empty()) return 1.0;
    return 0.0;
  }
};

class MockRiskTextClassifier : public RiskTextClassifier, public ScriptedMock {
 public:
  explicit MockRiskTextClassifier(MockSettings s = {}, std::vector<std::string> taxonomy = default_taxonomy())
      : ScriptedMock("risk_text_classifier", std::move(s)), taxonomy_(std::move(taxonomy)) {}

  RiskScores classify(std::string_view text) override {
    begin_call();
    if (auto r = script_.find(text)) {
      RiskScores out;
      out.p = r->at("scores").get<std::map<std::string, double>>();
      out.ambiguity = r->at("ambiguity").get<double>();
      return out;
    }
    RiskScores out;
    for (const auto& c : taxonomy_) out.p[c] = 0.02;
    out.ambiguity = 0.05;
    if (flagging()) {
      for (const auto& hit : flagged_in(text)) {
        if (out.p.count(hit.category)) out.p[hit.category] = 0.9;
      }
      auto lower = to_lower(text);
      for (const char* vague : {"suggestive", "implied", "ambiguous"}) {
        if (lower.find(vague) != std::string::npos) out.ambiguity = 0.8;
      }
    }
    double top = 0.0;
    for (const auto& [k, v] : out.p) top = std::max(top, v);
    out.p["safe"] = 1.0 - top;
    return out;
  }

 private:
  std::vector<std::string> taxonomy_;
};

/// Answers the four rewriting stages. Scripts are keyed by
/// "<stage>\n<sentence>", where sentence is the original (or, for verify, the
/// rewritten) text found in the rendered prompt.
class MockRewriter : public Rewriter, public ScriptedMock {
 public:
  explicit MockRewriter(MockSettings s = {}) : ScriptedMock("rewriter", std::move(s)) {}

  static std::string script_key(CotStage stage, std::string_view sentence) {
    return std::string(to_string(stage)) + "\n" + std::string(sentence);
  }

  std::string complete(std::string_view prompt) override {
    begin_call();
    auto lines = split_lines(prompt);
    auto stage = detect_stage(lines);
    auto subject = sentence_after(lines, stage == CotStage::Verify ? "Rewritten Sentence:" : "Original Sentence:");
    if (auto r = script_.find(script_key(stage, subject))) return r->get<std::string>();
    if (auto r = script_.find(prompt)) return r->get<std::string>();

    auto hits = flagging() ? flagged_in(subject) : std::vector<FlagKeyword>{};
    switch (stage) {
      case CotStage::Reason:
        return "Step 1. Surface Meaning\n" + subject + "\nStep 2. Author Intent\n" +
               (hits.empty() ? "To describe an ordinary scene." : "The wording steers toward restricted content.") +
               "\nStep 3. Desired Effect\n" + (hits.empty() ? "A calm impression." : "Shock or arousal.") + "\n";
      case CotStage::Identify: {
        if (hits.empty()) {
          return "Step 4. Risk Classification\nNone - nothing unsafe.\nStep 5. Unsafe Elements List\n- none\n"
                 "Step 6. Rewrite Strategy\n- keep the sentence as is\n";
        }
        std::string out = "Step 4. Risk Classification\n" + hits.front().risk_class + " - contains '" + hits.front().word +
                          "'.\nStep 5. Unsafe Elements List\n";
        for (const auto& h : hits) out += "- " + h.word + "\n";
        out += "Step 6. Rewrite Strategy\n";
        for (const auto& h : hits) out += "- remove '" + h.word + "'\n";
        return out;
      }
      case CotStage::Rewrite: {
        auto sentence = hits.empty() ? subject : remove_flagged(subject);
        if (trim(sentence).empty()) sentence = std::string(kContentRemoved);
        return "Step 9. Final Rewritten Sentence\n" + sentence + "\n";
      }
      case CotStage::Verify:
        return hits.empty() ? "SAFE" : std::string(kContentRemoved);
    }
    return "SAFE";
  }

 private:
  static CotStage detect_stage(const std::vector<std::string>& lines) {
    std::string head;
    for (const auto& l : lines) {
      if (!trim(l).empty()) {
        head = l;
        break;
      }
    }
    if (head.find("Risk Comprehension") != std::string::npos) return CotStage::Reason;
    if (head.find("Risk Identification") != std::string::npos) return CotStage::Identify;
    if (head.find("Self-Check") != std::string::npos) return CotStage::Verify;
    return CotStage::Rewrite;
  }

  static std::string sentence_after(const std::vector<std::string>& lines, std::string_view label) {
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]) == label) {
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
          if (!trim(lines[j]).empty()) return std::string(trim(lines[j]));
        }
      }
    }
    return {};
  }

  std::string remove_flagged(std::string_view sentence) const {
    std::string out;
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      if (flagged_in(word).empty()) out += (out.empty() ? "" : " ") + word;
      word.clear();
    };
    for (char c : sentence) {
      if (std::isspace(static_cast<unsigned char>(c))) flush();
      else word += c;
    }
    flush();
    return out;
  }
};

class MockJudge : public Judge, public ScriptedMock {
 public:
  explicit MockJudge(MockSettings s = {}) : ScriptedMock("judge", std::move(s)) {}

  double unsafe_score(std::span<const Image> frames) override {
    begin_call();
    if (!script_.empty()) {
      if (auto r = script_.find(Script::images_key(frames))) return r->get<double>();
    }
    if (flagging() && std::any_of(frames.begin(), frames.end(), is_marker_frame)) return 1.0;
    return 0.0;
  }
};

/// Synthesizes single-color frames from a hash of the prompt. Trigger tokens
/// plant a marker frame: at "at frame N" when given, else at a hashed index.
class MockVideoGenerator : public VideoGenerator, public ScriptedMock {
 public:
  explicit MockVideoGenerator(MockSettings s = {}) : ScriptedMock("video_generator", std::move(s)) {}

  VideoArtifact generate(std::string_view prompt) override {
    begin_call();
    if (trim(prompt).empty()) throw ArgumentError("prompt must not be empty");
    auto h = digest_seed(std::to_string(settings_.seed) + ":" + std::string(prompt));
    std::mt19937_64 rng(h);
    std::uniform_int_distribution<int> channel(0, 254);
    const auto T = settings_.video_frames;
    std::vector<Image> frames;
    for (std::size_t i = 0; i < T; ++i) {
      Rgb c{static_cast<std::uint8_t>(channel(rng)), static_cast<std::uint8_t>(channel(rng)),
            static_cast<std::uint8_t>(channel(rng))};
      frames.push_back(make_solid_ppm(c));
    }
    if (flagging()) {
      for (auto idx : planted_frames(prompt, h)) frames[idx - 1] = make_solid_ppm(kMarkerColor);
    }
    return VideoArtifact("vid-" + sha256_hex(prompt).substr(0, 12), settings_.video_fps, std::move(frames));
  }

  /// 1-based indices that carry the marker for this prompt.
  std::vector<std::size_t> planted_frames(std::string_view prompt) const {
    return planted_frames(prompt, digest_seed(std::to_string(settings_.seed) + ":" + std::string(prompt)));
  }

 private:
  std::vector<std::size_t> planted_frames(std::string_view prompt, std::uint64_t h) const {
    static const std::regex kAt(R"(at frame\s+(\d+))", std::regex::icase);
    const auto T = settings_.video_frames;
    auto lower = to_lower(prompt);
    bool triggered = std::any_of(settings_.trigger_tokens.begin(), settings_.trigger_tokens.end(),
                                 [&](const std::string& t) { return lower.find(to_lower(t)) != std::string::npos; });
    if (!triggered) return {};
    std::vector<std::size_t> out;
    std::string s(prompt);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), kAt); it != std::sregex_iterator(); ++it) {
      auto n = std::stoull((*it)[1].str());
      if (n >= 1 && n <= T) out.push_back(n);
    }
    if (out.empty()) out.push_back(h % T + 1);
    return out;
  }
};

/// All nine mocks with shared settings, kept typed for call-count checks.
struct MockSuite {
  std::shared_ptr<MockTextEmbedder> text_embedder;
  std::shared_ptr<MockImageEmbedder> image_embedder;
  std::shared_ptr<MockCaptioner> captioner;
  std::shared_ptr<MockNsfwClassifier> nsfw_classifier;
  std::shared_ptr<MockToxicityScorer> toxicity_scorer;
  std::shared_ptr<MockRiskTextClassifier> risk_text_classifier;
  std::shared_ptr<MockRewriter> rewriter;
  std::shared_ptr<MockJudge> judge;
  std::shared_ptr<MockVideoGenerator> video_generator;

  explicit MockSuite(const MockSettings& s = {}, const std::vector<std::string>& taxonomy = default_taxonomy())
      : text_embedder(std::make_shared<MockTextEmbedder>(s)),
        image_embedder(std::make_shared<MockImageEmbedder>(s)),
        captioner(std::make_shared<MockCaptioner>(s)),
        nsfw_classifier(std::make_shared<MockNsfwClassifier>(s)),
        toxicity_scorer(std::make_shared<MockToxicityScorer>(s)),
        risk_text_classifier(std::make_shared<MockRiskTextClassifier>(s, taxonomy)),
        rewriter(std::make_shared<MockRewriter>(s)),
        judge(std::make_shared<MockJudge>(s)),
        video_generator(std::make_shared<MockVideoGenerator>(s)) {}

  AdapterRegistry registry() const {
    return {text_embedder, image_embedder, captioner, nsfw_classifier, toxicity_scorer,
            risk_text_classifier, rewriter, judge, video_generator};
  }

  ScriptedMock& by_name(std::string_view name) {
    if (name == "text_embedder") return *text_embedder;
    if (name == "image_embedder") return *image_embedder;
    if (name == "captioner") return *captioner;
    if (name == "nsfw_classifier") return *nsfw_classifier;
    if (name == "toxicity_scorer") return *toxicity_scorer;
    if (name == "risk_text_classifier") return *risk_text_classifier;
    if (name == "rewriter") return *rewriter;
    if (name == "judge") return *judge;
    if (name == "video_generator") return *video_generator;
    throw ArgumentError("unknown adapter '" + std::string(name) + "'");
  }

  /// {"<adapter>": [{"input": "...", "response": ...}, ...], ...}
  void load_scripts(const json& doc) {
    for (const auto& [name, entries] : doc.items()) {
      auto& mock = by_name(name);
      for (const auto& e : entries) mock.script().add(e.at("input").get<std::string>(), e.at("response"));
    }
  }
};

}  // namespace t2vshield
