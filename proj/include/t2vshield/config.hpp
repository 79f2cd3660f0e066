#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t2vshield/core.hpp"

namespace t2vshield {

/// Window length for one slicing scale; nullopt is the whole video.
using WindowScale = std::optional<std::size_t>;

enum class AsrMode { Multiscope, Judge };

/// Every tunable of the pipeline. Defaults are the published operating point;
/// a config file only needs the keys it overrides.
struct PipelineConfig {
  double tau_H = 0.5;
  double tau_pos = 0.7;
  double tau_neg = 0.3;
  double alpha = 0.7;
  double lambda = 0.2;
  std::int64_t k_neg = 3;
  double semantic_risk_threshold = 0.7;
  double ambiguity_threshold = 0.7;
  double judge_threshold = 0.6;
  std::int64_t frame_sample_n = 10;
  std::vector<WindowScale> scales{std::nullopt, 15, 5};
  double stride_fraction = 0.5;

  std::int64_t rewrite_attempts = 1;
  std::vector<std::string> affirmative_tokens{"SAFE", "YES", "PASS"};
  bool rag_enabled = true;
  bool pregate_keyword = false;
  bool pregate_toxicity = false;
  std::string segmentation_separator = "-";
  bool judge_fallback = true;
  AsrMode asr_mode = AsrMode::Multiscope;
  std::int64_t workers = 1;
  std::int64_t max_inflight = 4;
  std::int64_t frames_per_node = 4;
  std::vector<std::string> taxonomy = default_taxonomy();
  std::int64_t adapter_timeout_ms = 30000;
  std::int64_t adapter_retries = 2;

  bool operator==(const PipelineConfig&) const = default;

  RiskTaxonomy risk_taxonomy() const { return RiskTaxonomy(taxonomy); }
};

namespace config_detail {

class ValueParser {
 public:
  ValueParser(std::string_view text, const std::string& key) : s_(text), key_(key) {}

  json parse_document_value() {
    json v = parse_value();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters after value");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(key_, what); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  json parse_value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    char c = s_[pos_];
    if (c == '[') return parse_array();
    if (c == '"') return parse_string();
    return parse_scalar();
  }

  json parse_array() {
    ++pos_;
    json arr = json::array();
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return arr;
    }
    while (true) {
      arr.push_back(parse_value());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  json parse_string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
        char e = s_[pos_ + 1];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        pos_ += 2;
        continue;
      }
      out += s_[pos_++];
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  json parse_scalar() {
    auto start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != ' ' && s_[pos_] != '\t') ++pos_;
    std::string tok(s_.substr(start, pos_ - start));
    if (tok.empty()) fail("empty value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    bool numeric = tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
    if (numeric) {
      try {
        std::size_t used = 0;
        if (tok.find_first_of(".eE") == std::string::npos) {
          long long v = std::stoll(tok, &used);
          if (used == tok.size()) return v;
        } else {
          double v = std::stod(tok, &used);
          if (used == tok.size()) return v;
        }
      } catch (const std::exception&) {
      }
      fail("malformed number '" + tok + "'");
    }
    // Bare words are accepted as strings (e.g. scales = [full, 15, 5]).
    return tok;
  }

  std::string_view s_;
  const std::string& key_;
  std::size_t pos_ = 0;
};

inline std::string strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

inline double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

inline std::int64_t as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  return v.get<std::int64_t>();
}

inline bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

inline std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

inline std::vector<std::string> as_string_list(const std::string& key, const json& v) {
  if (!v.is_array()) throw ConfigError(key, "expected a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(as_string(key, e));
  return out;
}

inline std::vector<WindowScale> as_scales(const std::string& key, const json& v) {
  if (!v.is_array()) throw ConfigError(key, "expected a list such as [full, 15, 5]");
  std::vector<WindowScale> out;
  for (const auto& e : v) {
    if (e.is_string() && e.get<std::string>() == "full") {
      out.push_back(std::nullopt);
    } else if (e.is_number_integer() && e.get<std::int64_t>() > 0) {
      out.push_back(static_cast<std::size_t>(e.get<std::int64_t>()));
    } else {
      throw ConfigError(key, "scale entries must be 'full' or positive integers");
    }
  }
  return out;
}

inline void in_unit(const char* key, double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(std::string("config key '") + key + "' must lie in [0,1], got " + std::to_string(v));
  }
}

inline void positive(const char* key, std::int64_t v) {
  if (v < 1) throw ValidationError(std::string("config key '") + key + "' must be >= 1");
}

}  // namespace config_detail

/// Throws ValidationError naming the first out-of-range field.
inline void validate(const PipelineConfig& c) {
  using namespace config_detail;
  in_unit("tau_H", c.tau_H);
  in_unit("tau_pos", c.tau_pos);
  in_unit("tau_neg", c.tau_neg);
  in_unit("semantic_risk_threshold", c.semantic_risk_threshold);
  in_unit("ambiguity_threshold", c.ambiguity_threshold);
  in_unit("judge_threshold", c.judge_threshold);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ValidationError("config key 'alpha' must lie in (0,1)");
  if (!(c.lambda >= 0.0 && std::isfinite(c.lambda))) throw ValidationError("config key 'lambda' must be >= 0");
  positive("k_neg", c.k_neg);
  positive("frame_sample_n", c.frame_sample_n);
  positive("rewrite_attempts", c.rewrite_attempts);
  positive("workers", c.workers);
  positive("max_inflight", c.max_inflight);
  positive("frames_per_node", c.frames_per_node);
  positive("adapter_timeout_ms", c.adapter_timeout_ms);
  if (c.adapter_retries < 0) throw ValidationError("config key 'adapter_retries' must be >= 0");
  if (!(c.stride_fraction > 0.0 && c.stride_fraction <= 1.0)) {
    throw ValidationError("config key 'stride_fraction' must lie in (0,1]");
  }
  if (c.scales.empty()) throw ValidationError("config key 'scales' must not be empty");
  std::optional<std::size_t> prev;
  for (std::size_t i = 0; i < c.scales.size(); ++i) {
    const auto& s = c.scales[i];
    if (!s) {
      if (i != 0) throw ValidationError("config key 'scales': 'full' may only appear first");
      continue;
    }
    if (prev && *s >= *prev) throw ValidationError("config key 'scales' must be strictly decreasing");
    prev = *s;
  }
  if (c.affirmative_tokens.empty()) throw ValidationError("config key 'affirmative_tokens' must not be empty");
  const auto& sep = c.segmentation_separator;
  if (sep != "-" && sep != "." && sep != "*") {
    throw ValidationError("config key 'segmentation_separator' must be one of - . *");
  }
  RiskTaxonomy check(c.taxonomy);
  (void)check;
}

/// Parses the flat `key = value` document. Absent keys keep their defaults.
inline PipelineConfig parse_config(std::string_view text) {
  using namespace config_detail;
  PipelineConfig c;
  std::set<std::string> seen;
  for (const auto& raw : split_lines(text)) {
    std::string line = strip_comment(raw);
    auto body = trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(trim(body)), "expected 'key = value'");
    }
    std::string key(trim(body.substr(0, eq)));
    if (key.empty()) throw ConfigError("", "missing key before '='");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    json v = ValueParser(trim(body.substr(eq + 1)), key).parse_document_value();

    if (key == "tau_H") c.tau_H = as_real(key, v);
    else if (key == "tau_pos") c.tau_pos = as_real(key, v);
    else if (key == "tau_neg") c.tau_neg = as_real(key, v);
    else if (key == "alpha") c.alpha = as_real(key, v);
    else if (key == "lambda") c.lambda = as_real(key, v);
    else if (key == "k_neg") c.k_neg = as_int(key, v);
    else if (key == "semantic_risk_threshold") c.semantic_risk_threshold = as_real(key, v);
    else if (key == "ambiguity_threshold") c.ambiguity_threshold = as_real(key, v);
    else if (key == "judge_threshold") c.judge_threshold = as_real(key, v);
    else if (key == "frame_sample_n") c.frame_sample_n = as_int(key, v);
    else if (key == "scales") c.scales = as_scales(key, v);
    else if (key == "stride_fraction") c.stride_fraction = as_real(key, v);
    else if (key == "rewrite_attempts") c.rewrite_attempts = as_int(key, v);
    else if (key == "affirmative_tokens") c.affirmative_tokens = as_string_list(key, v);
    else if (key == "rag_enabled") c.rag_enabled = as_bool(key, v);
    else if (key == "pregate_keyword") c.pregate_keyword = as_bool(key, v);
    else if (key == "pregate_toxicity") c.pregate_toxicity = as_bool(key, v);
    else if (key == "segmentation_separator") c.segmentation_separator = as_string(key, v);
    else if (key == "judge_fallback") c.judge_fallback = as_bool(key, v);
    else if (key == "asr_mode") {
      auto m = as_string(key, v);
      if (m == "multiscope") c.asr_mode = AsrMode::Multiscope;
      else if (m == "judge") c.asr_mode = AsrMode::Judge;
      else throw ConfigError(key, "expected 'multiscope' or 'judge'");
    } else if (key == "workers") c.workers = as_int(key, v);
    else if (key == "max_inflight") c.max_inflight = as_int(key, v);
    else if (key == "frames_per_node") c.frames_per_node = as_int(key, v);
    else if (key == "taxonomy") c.taxonomy = as_string_list(key, v);
    else if (key == "adapter_timeout_ms") c.adapter_timeout_ms = as_int(key, v);
    else if (key == "adapter_retries") c.adapter_retries = as_int(key, v);
    else throw ConfigError(key, "unknown key");
  }
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Emits every field; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const PipelineConfig& c) {
  auto num = [](double v) { return json(v).dump(); };
  auto strings = [](const std::vector<std::string>& xs) {
    json arr = xs;
    std::string s = "[";
    for (std::size_t i = 0; i < arr.size(); ++i) s += (i ? ", " : "") + arr[i].dump();
    return s + "]";
  };
  std::string scales = "[";
  for (std::size_t i = 0; i < c.scales.size(); ++i) {
    scales += i ? ", " : "";
    scales += c.scales[i] ? std::to_string(*c.scales[i]) : "\"full\"";
  }
  scales += "]";

  std::ostringstream out;
  out << "tau_H = " << num(c.tau_H) << "\n"
      << "tau_pos = " << num(c.tau_pos) << "\n"
      << "tau_neg = " << num(c.tau_neg) << "\n"
      << "alpha = " << num(c.alpha) << "\n"
      << "lambda = " << num(c.lambda) << "\n"
      << "k_neg = " << c.k_neg << "\n"
      << "semantic_risk_threshold = " << num(c.semantic_risk_threshold) << "\n"
      << "ambiguity_threshold = " << num(c.ambiguity_threshold) << "\n"
      << "judge_threshold = " << num(c.judge_threshold) << "\n"
      << "frame_sample_n = " << c.frame_sample_n << "\n"
      << "scales = " << scales << "\n"
      << "stride_fraction = " << num(c.stride_fraction) << "\n"
      << "rewrite_attempts = " << c.rewrite_attempts << "\n"
      << "affirmative_tokens = " << strings(c.affirmative_tokens) << "\n"
      << "rag_enabled = " << (c.rag_enabled ? "true" : "false") << "\n"
      << "pregate_keyword = " << (c.pregate_keyword ? "true" : "false") << "\n"
      << "pregate_toxicity = " << (c.pregate_toxicity ? "true" : "false") << "\n"
      << "segmentation_separator = " << json(c.segmentation_separator).dump() << "\n"
      << "judge_fallback = " << (c.judge_fallback ? "true" : "false") << "\n"
      << "asr_mode = " << (c.asr_mode == AsrMode::Judge ? "\"judge\"" : "\"multiscope\"") << "\n"
      << "workers = " << c.workers << "\n"
      << "max_inflight = " << c.max_inflight << "\n"
      << "frames_per_node = " << c.frames_per_node << "\n"
      << "taxonomy = " << strings(c.taxonomy) << "\n"
      << "adapter_timeout_ms = " << c.adapter_timeout_ms << "\n"
      << "adapter_retries = " << c.adapter_retries << "\n";
  return out.str();
}

}  // namespace t2vshield
