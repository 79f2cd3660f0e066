#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/digest.hpp"

namespace t2vshield::wire {

// JSON bodies of the /v1/* adapter protocol. Requests and responses are
// encoded and decoded here so the client and the in-process server agree by
// construction. Decoders throw FormatError on any schema violation.

class FormatError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::string_view kEmbedText = "/v1/embed_text";
inline constexpr std::string_view kEmbedImage = "/v1/embed_image";
inline constexpr std::string_view kCaption = "/v1/caption";
inline constexpr std::string_view kNsfw = "/v1/nsfw";
inline constexpr std::string_view kToxicity = "/v1/toxicity";
inline constexpr std::string_view kRiskText = "/v1/risk_text";
inline constexpr std::string_view kRewrite = "/v1/rewrite";
inline constexpr std::string_view kJudge = "/v1/judge";
inline constexpr std::string_view kGenerate = "/v1/generate";
inline constexpr std::string_view kInfo = "/v1/info";

inline json parse_body(std::string_view body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("body is not a JSON object");
  return j;
}

inline const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw FormatError(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string string_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw FormatError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline double number_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw FormatError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline double unit_field(const json& j, const char* name) {
  double v = number_field(j, name);
  if (!(v >= 0.0 && v <= 1.0)) throw FormatError(std::string("field '") + name + "' must lie in [0,1]");
  return v;
}

inline std::string encode_image(const Image& img) { return base64_encode(img.bytes); }

inline Image decode_image(const json& v) {
  if (!v.is_string()) throw FormatError("image must be a base64 string");
  try {
    return Image{base64_decode(v.get<std::string>())};
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
}

inline json encode_images(std::span<const Image> imgs) {
  json arr = json::array();
  for (const auto& i : imgs) arr.push_back(encode_image(i));
  return arr;
}

inline std::vector<Image> decode_images(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_array() || v.empty()) throw FormatError(std::string("field '") + name + "' must be a non-empty array");
  std::vector<Image> out;
  for (const auto& e : v) out.push_back(decode_image(e));
  return out;
}

// ---- embed_text / embed_image: {"text"} | {"image"} -> {"embedding": [..]}

inline json embed_text_request(std::string_view text) { return {{"text", text}}; }
inline json embed_image_request(const Image& img) { return {{"image", encode_image(img)}}; }
inline json embedding_response(const EmbeddingVector& v) { return {{"embedding", v.values()}}; }

/// expected_dim 0 skips the dimension check.
inline EmbeddingVector decode_embedding(const json& j, std::size_t expected_dim) {
  const auto& v = field(j, "embedding");
  if (!v.is_array() || v.empty()) throw FormatError("field 'embedding' must be a non-empty array");
  std::vector<double> xs;
  xs.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw FormatError("embedding entries must be numbers");
    xs.push_back(x.get<double>());
  }
  if (expected_dim != 0 && xs.size() != expected_dim) {
    throw FormatError("embedding has dim " + std::to_string(xs.size()) + ", expected " + std::to_string(expected_dim));
  }
  try {
    return EmbeddingVector(std::move(xs));
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
}

// ---- caption: {"images": [b64..]} -> {"caption"}

inline json caption_request(std::span<const Image> imgs) { return {{"images", encode_images(imgs)}}; }
inline json caption_response(const std::string& c) { return {{"caption", c}}; }
inline std::string decode_caption(const json& j) { return string_field(j, "caption"); }

// ---- nsfw: {"image"} -> {"label": "safe"|"unsafe", "score"}

inline json nsfw_request(const Image& img) { return {{"image", encode_image(img)}}; }
inline json nsfw_response(const NsfwResult& r) { return {{"label", r.unsafe ? "unsafe" : "safe"}, {"score", r.score}}; }
inline NsfwResult decode_nsfw(const json& j) {
  auto label = string_field(j, "label");
  if (label != "safe" && label != "unsafe") throw FormatError("field 'label' must be \"safe\" or \"unsafe\"");
  return {label == "unsafe", unit_field(j, "score")};
}

// ---- toxicity: {"text"} -> {"score"}

inline json toxicity_request(std::string_view text) { return {{"text", text}}; }
inline json score_response(double s) { return {{"score", s}}; }
inline double decode_score(const json& j) { return unit_field(j, "score"); }

// ---- risk_text: {"text"} -> {"scores": {category: p}, "ambiguity"}

inline json risk_text_request(std::string_view text) { return {{"text", text}}; }
inline json risk_text_response(const RiskScores& r) { return {{"scores", r.p}, {"ambiguity", r.ambiguity}}; }
inline RiskScores decode_risk_text(const json& j) {
  const auto& s = field(j, "scores");
  if (!s.is_object()) throw FormatError("field 'scores' must be an object");
  RiskScores out;
  for (const auto& [k, v] : s.items()) {
    if (!v.is_number()) throw FormatError("score for '" + k + "' must be a number");
    double p = v.get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw FormatError("score for '" + k + "' must lie in [0,1]");
    out.p[k] = p;
  }
  out.ambiguity = unit_field(j, "ambiguity");
  return out;
}

// ---- rewrite: {"prompt"} -> {"text"}

inline json rewrite_request(std::string_view prompt) { return {{"prompt", prompt}}; }
inline json rewrite_response(const std::string& text) { return {{"text", text}}; }
inline std::string decode_rewrite(const json& j) { return string_field(j, "text"); }

// ---- judge: {"images": [b64..]} -> {"score"}

inline json judge_request(std::span<const Image> imgs) { return {{"images", encode_images(imgs)}}; }

// ---- generate: {"prompt"} -> {"video_id", "fps", "frames": [b64..]}

inline json generate_request(std::string_view prompt) { return {{"prompt", prompt}}; }
inline json generate_response(const VideoArtifact& v) {
  return {{"video_id", v.id()}, {"fps", v.fps()}, {"frames", encode_images(v.frames())}};
}
inline VideoArtifact decode_video(const json& j) {
  auto frames = decode_images(j, "frames");
  double fps = number_field(j, "fps");
  if (!(fps > 0.0)) throw FormatError("field 'fps' must be positive");
  return VideoArtifact(string_field(j, "video_id"), fps, std::move(frames));
}

// ---- info: GET -> {"dims": {"text", "image"}, "models": {adapter: model}}

struct ServiceInfo {
  std::size_t text_dim = 0;
  std::size_t image_dim = 0;
  std::map<std::string, std::string> models;

  bool operator==(const ServiceInfo&) const = default;
};

inline json info_response(const ServiceInfo& info) {
  return {{"dims", {{"text", info.text_dim}, {"image", info.image_dim}}}, {"models", info.models}};
}

inline ServiceInfo decode_info(const json& j) {
  const auto& dims = field(j, "dims");
  if (!dims.is_object()) throw FormatError("field 'dims' must be an object");
  ServiceInfo info;
  for (auto [key, slot] : {std::pair{"text", &info.text_dim}, std::pair{"image", &info.image_dim}}) {
    if (!dims.contains(key)) continue;
    const auto& d = dims.at(key);
    if (!d.is_number_unsigned()) throw FormatError(std::string("dims.") + key + " must be a non-negative integer");
    *slot = d.get<std::size_t>();
  }
  if (j.contains("models")) {
    const auto& m = j.at("models");
    if (!m.is_object()) throw FormatError("field 'models' must be an object");
    for (const auto& [k, v] : m.items()) {
      if (!v.is_string()) throw FormatError("model name for '" + k + "' must be a string");
      info.models[k] = v.get<std::string>();
    }
  }
  return info;
}

/// Error bodies: {"error": message, "kind": "timeout"|"transport"|"malformed_response"|"unavailable"}
inline json error_body(std::string_view message, std::string_view kind = "transport") {
  return {{"error", message}, {"kind", kind}};
}

}  // namespace t2vshield::wire
