#pragma once

#include <stdexcept>
#include <string>

namespace t2vshield {

// Root of every error raised by the library. Callers that only need to know
// "something failed" catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class EmbeddingError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  explicit TemplateError(std::string slot)
      : Error("template slot missing: " + slot), slot_(std::move(slot)) {}
  const std::string& slot() const noexcept { return slot_; }

 private:
  std::string slot_;
};

class RewriteError : public Error {
 public:
  using Error::Error;
};

class GraphBuildError : public Error {
 public:
  using Error::Error;
};

class GraphLoadError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public GraphLoadError {
 public:
  using GraphLoadError::GraphLoadError;
};

class DetectorError : public Error {
 public:
  using Error::Error;
};

enum class AdapterErrorKind { Timeout, Transport, MalformedResponse, Unavailable };

inline const char* to_string(AdapterErrorKind kind) {
  switch (kind) {
    case AdapterErrorKind::Timeout: return "timeout";
    case AdapterErrorKind::Transport: return "transport";
    case AdapterErrorKind::MalformedResponse: return "malformed_response";
    case AdapterErrorKind::Unavailable: return "unavailable";
  }
  return "unknown";
}

class AdapterError : public Error {
 public:
  AdapterError(AdapterErrorKind kind, std::string adapter, const std::string& detail)
      : Error(adapter + " adapter " + to_string(kind) + ": " + detail),
        kind_(kind),
        adapter_(std::move(adapter)) {}

  AdapterErrorKind kind() const noexcept { return kind_; }
  const std::string& adapter() const noexcept { return adapter_; }

 private:
  AdapterErrorKind kind_;
  std::string adapter_;
};

}  // namespace t2vshield
