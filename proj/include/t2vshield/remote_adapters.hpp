#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include <httplib.h>

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/wire.hpp"

namespace t2vshield {

/// Where a remote adapter lives. The bearer token is looked up at call time
/// from the environment variable named by token_env, never stored.
struct RemoteEndpoint {
  std::string base_url;
  std::chrono::milliseconds timeout{30000};
  std::string token_env;
  int retries = 2;
  std::chrono::milliseconds backoff{100};
};

inline std::string env_suffix(std::string_view adapter) { return to_upper(adapter); }
inline std::string url_env_var(std::string_view adapter) { return "T2VSHIELD_ADAPTER_URL_" + env_suffix(adapter); }
inline std::string token_env_var(std::string_view adapter) { return "T2VSHIELD_TOKEN_" + env_suffix(adapter); }

/// JSON-over-HTTP transport for one adapter. Safe for concurrent use: every
/// call opens its own connection.
class RemoteClient {
 public:
  RemoteClient(std::string adapter, RemoteEndpoint endpoint) : adapter_(std::move(adapter)), ep_(std::move(endpoint)) {
    if (ep_.base_url.empty()) throw ConfigError(url_env_var(adapter_), "base URL is empty");
    if (ep_.timeout.count() <= 0) throw ConfigError("adapter_timeout_ms", "timeout must be positive");
    if (ep_.retries < 0) throw ConfigError("adapter_retries", "retries must be non-negative");
  }

  const std::string& adapter() const noexcept { return adapter_; }
  const RemoteEndpoint& endpoint() const noexcept { return ep_; }

  /// Non-idempotent requests are sent exactly once.
  json post(std::string_view path, const json& body, bool idempotent = true) const {
    return with_retries(idempotent, [&](httplib::Client& cli, const httplib::Headers& h) {
      return cli.Post(std::string(path), h, body.dump(), "application/json");
    });
  }

  json get(std::string_view path) const {
    return with_retries(true, [&](httplib::Client& cli, const httplib::Headers& h) { return cli.Get(std::string(path), h); });
  }

  /// Decodes with `fn`, reporting schema violations as malformed responses.
  template <typename Fn>
  auto decode(const json& j, Fn&& fn) const {
    try {
      return fn(j);
    } catch (const wire::FormatError& e) {
      throw AdapterError(AdapterErrorKind::MalformedResponse, adapter_, e.what());
    } catch (const json::exception& e) {
      throw AdapterError(AdapterErrorKind::MalformedResponse, adapter_, e.what());
    }
  }

 private:
  struct Failure {
    AdapterErrorKind kind;
    std::string detail;
    bool retryable;
  };

  template <typename Send>
  json with_retries(bool idempotent, Send&& send) const {
    int attempts = idempotent ? ep_.retries + 1 : 1;
    Failure last{AdapterErrorKind::Transport, "no attempt made", false};
    for (int attempt = 0; attempt < attempts; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(ep_.backoff * (1 << (attempt - 1)));
      auto outcome = once(send);
      if (auto* ok = std::get_if<json>(&outcome)) return std::move(*ok);
      last = std::get<Failure>(outcome);
      if (!last.retryable) break;
    }
    throw AdapterError(last.kind, adapter_, last.detail);
  }

  template <typename Send>
  std::variant<json, Failure> once(Send&& send) const {
    httplib::Client cli(ep_.base_url);
    cli.set_connection_timeout(ep_.timeout);
    cli.set_read_timeout(ep_.timeout);
    cli.set_write_timeout(ep_.timeout);
    httplib::Headers headers;
    if (!ep_.token_env.empty()) {
      if (const char* tok = std::getenv(ep_.token_env.c_str()); tok && *tok) {
        headers.emplace("Authorization", std::string("Bearer ") + tok);
      }
    }
    auto started = std::chrono::steady_clock::now();
    auto res = send(cli, headers);
    if (!res) {
      auto err = res.error();
      auto elapsed = std::chrono::steady_clock::now() - started;
      bool timed_out = err == httplib::Error::ConnectionTimeout ||
                       (err == httplib::Error::Read && elapsed >= ep_.timeout);
      return Failure{timed_out ? AdapterErrorKind::Timeout : AdapterErrorKind::Transport, httplib::to_string(err), true};
    }
    if (res->status == 503) return Failure{AdapterErrorKind::Unavailable, "HTTP 503: " + error_text(res->body), true};
    if (res->status >= 500) {
      return Failure{AdapterErrorKind::Transport, "HTTP " + std::to_string(res->status) + ": " + error_text(res->body), true};
    }
    if (res->status != 200) {
      return Failure{AdapterErrorKind::Transport, "HTTP " + std::to_string(res->status) + ": " + error_text(res->body), false};
    }
    try {
      return wire::parse_body(res->body);
    } catch (const wire::FormatError& e) {
      return Failure{AdapterErrorKind::MalformedResponse, e.what(), false};
    }
  }

  static std::string error_text(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_object() && j.contains("error") && j["error"].is_string()) return j["error"].get<std::string>();
    return body.substr(0, 200);
  }

  std::string adapter_;
  RemoteEndpoint ep_;
};

/// Queries GET /v1/info.
inline wire::ServiceInfo fetch_info(const RemoteClient& client) {
  return client.decode(client.get(wire::kInfo), wire::decode_info);
}

class RemoteTextEmbedder : public TextEmbedder {
 public:
  /// dim 0 negotiates the dimension through /v1/info.
  explicit RemoteTextEmbedder(RemoteClient client, std::size_t dim = 0) : client_(std::move(client)), dim_(dim) {
    if (dim_ == 0) dim_ = fetch_info(client_).text_dim;
    if (dim_ == 0) throw ConfigError("text_embedder", "service did not advertise a text embedding dim");
  }
  EmbeddingVector embed_text(std::string_view text) override {
    return client_.decode(client_.post(wire::kEmbedText, wire::embed_text_request(text)),
                          [&](const json& j) { return wire::decode_embedding(j, dim_); });
  }
  std::size_t dim() const override { return dim_; }

 private:
  RemoteClient client_;
  std::size_t dim_;
};

class RemoteImageEmbedder : public ImageEmbedder {
 public:
  explicit RemoteImageEmbedder(RemoteClient client, std::size_t dim = 0) : client_(std::move(client)), dim_(dim) {
    if (dim_ == 0) dim_ = fetch_info(client_).image_dim;
    if (dim_ == 0) throw ConfigError("image_embedder", "service did not advertise an image embedding dim");
  }
  EmbeddingVector embed_image(const Image& image) override {
    return client_.decode(client_.post(wire::kEmbedImage, wire::embed_image_request(image)),
                          [&](const json& j) { return wire::decode_embedding(j, dim_); });
  }
  std::size_t dim() const override { return dim_; }

 private:
  RemoteClient client_;
  std::size_t dim_;
};

class RemoteCaptioner : public Captioner {
 public:
  explicit RemoteCaptioner(RemoteClient client) : client_(std::move(client)) {}
  std::string caption(std::span<const Image> frames) override {
    return client_.decode(client_.post(wire::kCaption, wire::caption_request(frames)), wire::decode_caption);
  }

 private:
  RemoteClient client_;
};

class RemoteNsfwClassifier : public NsfwClassifier {
 public:
  explicit RemoteNsfwClassifier(RemoteClient client) : client_(std::move(client)) {}
  NsfwResult classify(const Image& image) override {
    return client_.decode(client_.post(wire::kNsfw, wire::nsfw_request(image)), wire::decode_nsfw);
  }

 private:
  RemoteClient client_;
};

class RemoteToxicityScorer : public ToxicityScorer {
 public:
  explicit RemoteToxicityScorer(RemoteClient client) : client_(std::move(client)) {}
  double score(std::string_view text) override {
    return client_.decode(client_.post(wire::kToxicity, wire::toxicity_request(text)), wire::decode_score);
  }

 private:
  RemoteClient client_;
};

class RemoteRiskTextClassifier : public RiskTextClassifier {
 public:
  explicit RemoteRiskTextClassifier(RemoteClient client) : client_(std::move(client)) {}
  RiskScores classify(std::string_view text) override {
    return client_.decode(client_.post(wire::kRiskText, wire::risk_text_request(text)), wire::decode_risk_text);
  }

 private:
  RemoteClient client_;
};

class RemoteRewriter : public Rewriter {
 public:
  explicit RemoteRewriter(RemoteClient client) : client_(std::move(client)) {}
  std::string complete(std::string_view prompt) override {
    return client_.decode(client_.post(wire::kRewrite, wire::rewrite_request(prompt)), wire::decode_rewrite);
  }

 private:
  RemoteClient client_;
};

class RemoteJudge : public Judge {
 public:
  explicit RemoteJudge(RemoteClient client) : client_(std::move(client)) {}
  double unsafe_score(std::span<const Image> frames) override {
    return client_.decode(client_.post(wire::kJudge, wire::judge_request(frames)), wire::decode_score);
  }

 private:
  RemoteClient client_;
};

class RemoteVideoGenerator : public VideoGenerator {
 public:
  explicit RemoteVideoGenerator(RemoteClient client) : client_(std::move(client)) {}
  VideoArtifact generate(std::string_view prompt) override {
    return client_.decode(client_.post(wire::kGenerate, wire::generate_request(prompt), false), wire::decode_video);
  }

 private:
  RemoteClient client_;
};

/// Endpoint for `adapter` from T2VSHIELD_ADAPTER_URL_<NAME>, or nullopt when unset.
inline std::optional<RemoteEndpoint> endpoint_from_env(std::string_view adapter, const PipelineConfig& config) {
  const char* url = std::getenv(url_env_var(adapter).c_str());
  if (!url || !*url) return std::nullopt;
  RemoteEndpoint ep;
  ep.base_url = url;
  ep.timeout = std::chrono::milliseconds(config.adapter_timeout_ms);
  ep.retries = static_cast<int>(config.adapter_retries);
  ep.token_env = token_env_var(adapter);
  return ep;
}

/// Replaces every adapter that has a URL in the environment with a remote
/// client. Embedding dims are negotiated here, so a bad service fails at
/// startup rather than mid-run.
inline void apply_remote_endpoints(AdapterRegistry& reg, const PipelineConfig& config) {
  auto client = [&](const char* name) -> std::optional<RemoteClient> {
    if (auto ep = endpoint_from_env(name, config)) return RemoteClient(name, *ep);
    return std::nullopt;
  };
  try {
    if (auto c = client("text_embedder")) reg.text_embedder = std::make_shared<RemoteTextEmbedder>(*c);
    if (auto c = client("image_embedder")) reg.image_embedder = std::make_shared<RemoteImageEmbedder>(*c);
    if (auto c = client("captioner")) reg.captioner = std::make_shared<RemoteCaptioner>(*c);
    if (auto c = client("nsfw_classifier")) reg.nsfw_classifier = std::make_shared<RemoteNsfwClassifier>(*c);
    if (auto c = client("toxicity_scorer")) reg.toxicity_scorer = std::make_shared<RemoteToxicityScorer>(*c);
    if (auto c = client("risk_text_classifier")) reg.risk_text_classifier = std::make_shared<RemoteRiskTextClassifier>(*c);
    if (auto c = client("rewriter")) reg.rewriter = std::make_shared<RemoteRewriter>(*c);
    if (auto c = client("judge")) reg.judge = std::make_shared<RemoteJudge>(*c);
    if (auto c = client("video_generator")) reg.video_generator = std::make_shared<RemoteVideoGenerator>(*c);
  } catch (const AdapterError& e) {
    throw ConfigError(e.adapter(), std::string("capability negotiation failed: ") + e.what());
  }
}

}  // namespace t2vshield
