#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/core.hpp"

namespace t2vshield {

/// Sensitive keyword set. Stored lowercase; never empty.
class SensitiveLexicon {
 public:
  explicit SensitiveLexicon(const std::vector<std::string>& keywords) {
    for (const auto& k : keywords) {
      auto t = trim(k);
      if (t.empty()) throw ValidationError("lexicon keyword must not be empty");
      keywords_.insert(to_lower(t));
    }
    if (keywords_.empty()) throw ValidationError("lexicon must contain at least one keyword");
  }

  const std::set<std::string>& keywords() const noexcept { return keywords_; }

 private:
  std::set<std::string> keywords_;
};

/// One keyword per line; blank lines and '#' comments are ignored.
inline SensitiveLexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read lexicon " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    words.emplace_back(t);
  }
  return SensitiveLexicon(words);
}

enum class MatchMode { Substring, WordBoundary };

namespace input_detail {
inline bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || u >= 0x80;
}

inline bool occurs(const std::string& haystack, const std::string& needle, MatchMode mode) {
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
    if (mode == MatchMode::Substring) return true;
    bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    auto end = pos + needle.size();
    bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}
}  // namespace input_detail

/// Every lexicon keyword contained in the lowercased prompt text, in lexicon
/// order. Substring mode flags "denuded" for "nude", as the raw rule does.
inline std::vector<std::string> detect_keywords(const Prompt& prompt, const SensitiveLexicon& lexicon,
                                                MatchMode mode = MatchMode::Substring) {
  auto text = to_lower(prompt.text());
  std::vector<std::string> hits;
  for (const auto& k : lexicon.keywords()) {
    if (input_detail::occurs(text, k, mode)) hits.push_back(k);
  }
  return hits;
}

/// Blocks when H(x) >= tau_H.
inline SafetyVerdict toxicity_gate(const Prompt& prompt, ToxicityScorer& scorer, double tau_H) {
  double h;
  try {
    h = scorer.score(prompt.text());
  } catch (const AdapterError& e) {
    throw StageError(Stage::InputGate, "toxicity", e.what());
  }
  if (!(h >= 0.0 && h <= 1.0)) {
    throw StageError(Stage::InputGate, "toxicity", "score outside [0,1]: " + std::to_string(h));
  }
  if (h >= tau_H) {
    return SafetyVerdict(SafetyLabel::Unsafe, Stage::InputGate,
                         {{"toxicity", h, "H(x)=" + json(h).dump() + " >= tau_H=" + json(tau_H).dump()}});
  }
  return SafetyVerdict(SafetyLabel::Safe, Stage::InputGate, {{"toxicity", h, "below threshold"}});
}

class SegmentationPolicy {
 public:
  explicit SegmentationPolicy(char separator = '-') : separator_(separator) {
    if (separator != '-' && separator != '.' && separator != '*') {
      throw ValidationError(std::string("segmentation separator must be one of - . *, got '") + separator + "'");
    }
  }
  explicit SegmentationPolicy(const std::string& separator)
      : SegmentationPolicy(separator.size() == 1 ? separator[0] : '\0') {}

  char separator() const noexcept { return separator_; }

 private:
  char separator_;
};

namespace input_detail {
// Byte length of the UTF-8 sequence starting with lead byte c.
inline std::size_t utf8_len(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

inline std::string join_codepoints(std::string_view word, char sep) {
  std::string out;
  for (std::size_t i = 0; i < word.size();) {
    auto n = std::min(utf8_len(static_cast<unsigned char>(word[i])), word.size() - i);
    if (!out.empty()) out += sep;
    out.append(word.substr(i, n));
    i += n;
  }
  return out;
}
}  // namespace input_detail

/// Rewrites every lexicon occurrence as its separator-joined characters
/// ("nude" -> "n-u-d-e"). The original casing is kept; all other bytes are
/// copied unchanged. At each position the longest matching keyword wins.
inline Prompt segment_sensitive(const Prompt& prompt, const SensitiveLexicon& lexicon, const SegmentationPolicy& policy) {
  const auto& text = prompt.text();
  auto lower = to_lower(text);
  std::string out;
  out.reserve(text.size() * 2);
  for (std::size_t i = 0; i < text.size();) {
    std::size_t best = 0;
    for (const auto& k : lexicon.keywords()) {
      if (k.size() > best && lower.compare(i, k.size(), k) == 0) best = k.size();
    }
    if (best > 0) {
      out += input_detail::join_codepoints(std::string_view(text).substr(i, best), policy.separator());
      i += best;
    } else {
      out += text[i++];
    }
  }
  return prompt.rewritten(std::move(out));
}

}  // namespace t2vshield
