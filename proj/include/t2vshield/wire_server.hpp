#pragma once

#include <functional>
#include <string>
#include <thread>

#include <httplib.h>

#include "t2vshield/adapters.hpp"
#include "t2vshield/wire.hpp"

namespace t2vshield {

/// Serves an AdapterRegistry over the /v1/* protocol. Used to exercise the
/// remote client in-process and to expose local adapters to other tools.
class AdapterServer {
 public:
  AdapterServer(AdapterRegistry registry, wire::ServiceInfo info) : reg_(std::move(registry)), info_(std::move(info)) {
    mount();
  }
  ~AdapterServer() { stop(); }
  AdapterServer(const AdapterServer&) = delete;
  AdapterServer& operator=(const AdapterServer&) = delete;

  /// Binds an ephemeral port on 127.0.0.1 and serves on a background thread.
  int start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error("adapter server could not bind a port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  httplib::Server& raw() { return server_; }

 private:
  using Handler = std::function<json(const json&)>;

  void route(std::string_view path, Handler h) {
    server_.Post(std::string(path), [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(h(wire::parse_body(req.body)).dump(), "application/json");
      } catch (const wire::FormatError& e) {
        res.status = 400;
        res.set_content(wire::error_body(e.what(), "malformed_request").dump(), "application/json");
      } catch (const AdapterError& e) {
        res.status = e.kind() == AdapterErrorKind::Unavailable ? 503 : 500;
        res.set_content(wire::error_body(e.what(), to_string(e.kind())).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(wire::error_body(e.what()).dump(), "application/json");
      }
    });
  }

  template <typename T>
  static T& need(const std::shared_ptr<T>& p, const char* name) {
    if (!p) throw AdapterError(AdapterErrorKind::Unavailable, name, "not served");
    return *p;
  }

  void mount() {
    using namespace wire;
    route(kEmbedText, [this](const json& j) {
      return embedding_response(need(reg_.text_embedder, "text_embedder").embed_text(string_field(j, "text")));
    });
    route(kEmbedImage, [this](const json& j) {
      return embedding_response(need(reg_.image_embedder, "image_embedder").embed_image(decode_image(field(j, "image"))));
    });
    route(kCaption, [this](const json& j) {
      return caption_response(need(reg_.captioner, "captioner").caption(decode_images(j, "images")));
    });
    route(kNsfw, [this](const json& j) {
      return nsfw_response(need(reg_.nsfw_classifier, "nsfw_classifier").classify(decode_image(field(j, "image"))));
    });
    route(kToxicity, [this](const json& j) {
      return score_response(need(reg_.toxicity_scorer, "toxicity_scorer").score(string_field(j, "text")));
    });
    route(kRiskText, [this](const json& j) {
      return risk_text_response(need(reg_.risk_text_classifier, "risk_text_classifier").classify(string_field(j, "text")));
    });
    route(kRewrite, [this](const json& j) {
      return rewrite_response(need(reg_.rewriter, "rewriter").complete(string_field(j, "prompt")));
    });
    route(kJudge, [this](const json& j) {
      return score_response(need(reg_.judge, "judge").unsafe_score(decode_images(j, "images")));
    });
    route(kGenerate, [this](const json& j) {
      return generate_response(need(reg_.video_generator, "video_generator").generate(string_field(j, "prompt")));
    });
    server_.Get(std::string(kInfo), [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(info_response(info_).dump(), "application/json");
    });
  }

  AdapterRegistry reg_;
  wire::ServiceInfo info_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace t2vshield
