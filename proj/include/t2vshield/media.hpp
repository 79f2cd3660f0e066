#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <span>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "t2vshield/core.hpp"

namespace t2vshield {

/// An encoded image (PPM, PNG, JPEG, ...). The library never decodes images
/// itself except for the PPM helpers used by the scripted mocks.
struct Image {
  std::vector<std::uint8_t> bytes;

  bool operator==(const Image&) const = default;
};

/// A generated video: frames v_1..v_T, addressed 1-based.
class VideoArtifact {
 public:
  VideoArtifact(std::string id, double fps, std::vector<Image> frames)
      : id_(std::move(id)), fps_(fps), frames_(std::move(frames)) {
    if (frames_.empty()) throw ArgumentError("video '" + id_ + "' has no frames");
    if (!(fps_ > 0.0)) throw ArgumentError("video '" + id_ + "' must have fps > 0");
  }

  const std::string& id() const noexcept { return id_; }
  double fps() const noexcept { return fps_; }
  std::size_t frame_count() const noexcept { return frames_.size(); }
  const std::vector<Image>& frames() const noexcept { return frames_; }

  const Image& frame(std::size_t index) const {
    if (index < 1 || index > frames_.size()) {
      throw ArgumentError("frame index " + std::to_string(index) + " outside 1.." + std::to_string(frames_.size()));
    }
    return frames_[index - 1];
  }

  bool operator==(const VideoArtifact&) const = default;

 private:
  std::string id_;
  double fps_;
  std::vector<Image> frames_;
};

// ---------------------------------------------------------------------------
// PPM (P6) helpers

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline Image make_solid_ppm(Rgb color, int width = 4, int height = 4) {
  std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  Image img;
  img.bytes.assign(header.begin(), header.end());
  for (int i = 0; i < width * height; ++i) {
    img.bytes.push_back(color.r);
    img.bytes.push_back(color.g);
    img.bytes.push_back(color.b);
  }
  return img;
}

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;
};

/// Parses a binary P6 image with maxval 255; nullopt for anything else.
inline std::optional<PpmImage> decode_ppm(const Image& img) {
  const auto& b = img.bytes;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::optional<int> {
    skip_ws();
    int v = 0;
    std::size_t start = pos;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > 1 << 20) return std::nullopt;
      ++pos;
    }
    if (pos == start) return std::nullopt;
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') return std::nullopt;
  pos = 2;
  auto w = read_int(), h = read_int(), maxval = read_int();
  if (!w || !h || !maxval || *maxval != 255 || *w <= 0 || *h <= 0) return std::nullopt;
  if (pos >= b.size() || !std::isspace(b[pos])) return std::nullopt;
  ++pos;
  std::size_t n = static_cast<std::size_t>(*w) * static_cast<std::size_t>(*h);
  if (b.size() - pos < 3 * n) return std::nullopt;
  PpmImage out{*w, *h, {}};
  out.pixels.reserve(n);
  for (std::size_t i = 0; i < n; ++i, pos += 3) out.pixels.push_back({b[pos], b[pos + 1], b[pos + 2]});
  return out;
}

// ---------------------------------------------------------------------------
// Video input and output

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArgumentError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Decodes a container file (mp4, ...) into frames.
using FrameExtractor = std::function<VideoArtifact(const std::filesystem::path&)>;

/// Extractors keyed by lowercase file extension (".mp4").
class FrameExtractorRegistry {
 public:
  static FrameExtractorRegistry& instance() {
    static FrameExtractorRegistry registry;
    return registry;
  }

  void register_extractor(std::string extension, FrameExtractor fn) {
    std::lock_guard lock(mu_);
    extractors_[to_lower(extension)] = std::move(fn);
  }

  std::optional<FrameExtractor> find(const std::string& extension) const {
    std::lock_guard lock(mu_);
    auto it = extractors_.find(to_lower(extension));
    if (it == extractors_.end()) return std::nullopt;
    return it->second;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, FrameExtractor> extractors_;
};

namespace media_detail {
inline std::optional<unsigned long long> frame_number(const std::filesystem::path& p) {
  auto stem = p.stem().string();
  auto end = stem.find_last_of("0123456789");
  if (end == std::string::npos) return std::nullopt;
  auto start = stem.find_last_not_of("0123456789", end);
  start = start == std::string::npos ? 0 : start + 1;
  return std::stoull(stem.substr(start, end - start + 1));
}
}  // namespace media_detail

/// Loads a directory of numbered image files, ordered by the trailing number
/// in each file name. Non-image metadata files (*.json) are skipped.
inline VideoArtifact load_video_dir(const std::filesystem::path& dir, double fps, std::string id = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ArgumentError("not a directory: " + dir.string());
  std::vector<std::pair<unsigned long long, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() == ".json") continue;
    auto n = media_detail::frame_number(entry.path());
    if (!n) continue;
    files.emplace_back(*n, entry.path());
  }
  std::sort(files.begin(), files.end());
  for (std::size_t i = 1; i < files.size(); ++i) {
    if (files[i].first == files[i - 1].first) {
      throw ArgumentError("duplicate frame number " + std::to_string(files[i].first) + " in " + dir.string());
    }
  }
  std::vector<Image> frames;
  for (const auto& [n, path] : files) frames.push_back({read_file_bytes(path)});
  if (id.empty()) id = dir.filename().string();
  if (id.empty()) id = dir.parent_path().filename().string();
  return VideoArtifact(id, fps, std::move(frames));
}

/// Directory input, or a container file routed through a registered extractor.
inline VideoArtifact load_video(const std::filesystem::path& path, double fps) {
  if (std::filesystem::is_directory(path)) return load_video_dir(path, fps);
  auto ext = path.extension().string();
  auto fn = FrameExtractorRegistry::instance().find(ext);
  if (!fn) throw ArgumentError("no frame extractor registered for '" + ext + "' files");
  return (*fn)(path);
}

/// Writes frame_0001.<ext> ... plus video.json {id, fps, frame_count}.
inline void save_video_dir(const VideoArtifact& video, const std::filesystem::path& dir, const std::string& ext = "ppm") {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 1; i <= video.frame_count(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.%s", i, ext.c_str());
    write_file_bytes(dir / name, video.frame(i).bytes);
  }
  json meta{{"id", video.id()}, {"fps", video.fps()}, {"frame_count", video.frame_count()}};
  std::ofstream(dir / "video.json") << meta.dump() << "\n";
}

}  // namespace t2vshield
