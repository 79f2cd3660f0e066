#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/core.hpp"
#include "t2vshield/media.hpp"
#include "t2vshield/parallel.hpp"

namespace t2vshield {

enum class ScaleKind { Global, Meso, Fine };

inline const char* to_string(ScaleKind k) {
  switch (k) {
    case ScaleKind::Global: return "global";
    case ScaleKind::Meso: return "meso";
    case ScaleKind::Fine: return "fine";
  }
  return "global";
}

/// A contiguous run of frames [start, start+length-1], 1-based.
struct FrameWindow {
  ScaleKind scale = ScaleKind::Global;
  std::size_t start = 1;
  std::size_t length = 1;
  std::vector<std::size_t> sampled_frames;

  std::size_t end() const { return start + length - 1; }
  bool operator==(const FrameWindow&) const = default;
};

/// `n` indices evenly spaced over the window, rounding half up; all frames
/// when the window is no longer than `n`.
inline std::vector<std::size_t> sample_frames(const FrameWindow& window, std::int64_t n) {
  if (n < 1) throw ArgumentError("sample count must be >= 1");
  std::vector<std::size_t> out;
  auto count = static_cast<std::size_t>(n);
  if (window.length <= count) {
    for (std::size_t i = 0; i < window.length; ++i) out.push_back(window.start + i);
    return out;
  }
  if (count == 1) return {window.start};
  for (std::size_t i = 0; i < count; ++i) {
    // Exact rational position i*(len-1)/(count-1), rounded half up in integers.
    std::size_t num = i * (window.length - 1);
    std::size_t den = count - 1;
    std::size_t offset = (2 * num + den) / (2 * den);
    auto idx = std::min(window.start + offset, window.end());
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

/// Global window plus overlapping windows per finite scale. Stride is
/// max(1, floor(L * stride_fraction)); a final window anchored at T-L+1 covers
/// the tail; videos shorter than L get a single [1, T] window at that scale.
inline std::vector<FrameWindow> slice_video(std::size_t frame_count, const PipelineConfig& config) {
  if (frame_count == 0) throw ArgumentError("cannot slice a video with 0 frames");
  const auto T = frame_count;
  const auto n = config.frame_sample_n;
  std::vector<FrameWindow> windows;
  auto push = [&](ScaleKind kind, std::size_t start, std::size_t length) {
    FrameWindow w{kind, start, length, {}};
    w.sampled_frames = sample_frames(w, n);
    windows.push_back(std::move(w));
  };
  bool first_finite = true;
  for (const auto& scale : config.scales) {
    if (!scale) {
      push(ScaleKind::Global, 1, T);
      continue;
    }
    auto kind = first_finite ? ScaleKind::Meso : ScaleKind::Fine;
    first_finite = false;
    const auto L = *scale;
    if (T <= L) {
      push(kind, 1, T);
      continue;
    }
    auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(L) * config.stride_fraction)));
    std::size_t last_end = 0;
    for (std::size_t start = 1; start + L - 1 <= T; start += stride) {
      push(kind, start, L);
      last_end = start + L - 1;
    }
    if (last_end < T) push(kind, T - L + 1, L);
  }
  return windows;
}

inline std::vector<FrameWindow> slice_video(const VideoArtifact& video, const PipelineConfig& config) {
  return slice_video(video.frame_count(), config);
}

struct FrameLabel {
  std::size_t index = 0;
  SafetyLabel label = SafetyLabel::Safe;
  double score = 0.0;
  std::string note;

  bool operator==(const FrameLabel&) const = default;
};

/// One label per frame, in order. A classifier failure marks that frame
/// Unsafe with score 1 and a note; the remaining frames are still classified.
inline std::vector<FrameLabel> classify_frames(std::span<const Image> frames, NsfwClassifier& nsfw,
                                               std::span<const std::size_t> indices = {}) {
  std::vector<FrameLabel> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto index = indices.empty() ? i + 1 : indices[i];
    try {
      auto r = nsfw.classify(frames[i]);
      if (!(r.score >= 0.0 && r.score <= 1.0)) {
        throw AdapterError(AdapterErrorKind::MalformedResponse, "nsfw_classifier", "score outside [0,1]");
      }
      out.push_back({index, r.unsafe ? SafetyLabel::Unsafe : SafetyLabel::Safe, r.score, {}});
    } catch (const Error& e) {
      out.push_back({index, SafetyLabel::Unsafe, 1.0, std::string("fail-closed: ") + e.what()});
    }
  }
  return out;
}

/// Category confidences restricted to the taxonomy plus "safe" (absent
/// categories read as 0) and the ambiguity score.
inline RiskScores semantic_risk(std::string_view caption, RiskTextClassifier& classifier, const RiskTaxonomy& taxonomy) {
  if (trim(caption).empty()) throw ArgumentError("caption must not be empty");
  RiskScores raw;
  try {
    raw = classifier.classify(caption);
  } catch (const AdapterError& e) {
    throw DetectorError(std::string("risk text classifier failed: ") + e.what());
  }
  auto check = [](const std::string& name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw DetectorError("risk score '" + name + "' outside [0,1]");
  };
  RiskScores out;
  for (const auto& name : taxonomy.names()) {
    auto it = raw.p.find(name);
    double v = it == raw.p.end() ? 0.0 : it->second;
    check(name, v);
    out.p[name] = v;
  }
  auto safe = raw.p.find("safe");
  out.p["safe"] = safe == raw.p.end() ? 0.0 : safe->second;
  check("safe", out.p["safe"]);
  check("ambiguity", raw.ambiguity);
  out.ambiguity = raw.ambiguity;
  return out;
}

/// Unsafe if the top risky category exceeds the risk threshold; otherwise
/// PotentialUnsafe if ambiguity exceeds its threshold. Both strict.
inline SafetyLabel semantic_rule(const RiskScores& scores, const PipelineConfig& config, const RiskTaxonomy& taxonomy) {
  double top = 0.0;
  for (const auto& [name, v] : scores.p) {
    if (name != "safe" && taxonomy.contains(name)) top = std::max(top, v);
  }
  if (top > config.semantic_risk_threshold) return SafetyLabel::Unsafe;
  if (scores.ambiguity > config.ambiguity_threshold) return SafetyLabel::PotentialUnsafe;
  return SafetyLabel::Safe;
}

inline SafetyLabel semantic_rule(const RiskScores& scores, const PipelineConfig& config) {
  return semantic_rule(scores, config, config.risk_taxonomy());
}

/// Frame indices at one frame per second: 1 + floor(k * fps) for
/// k < max(1, floor(T / fps)).
inline std::vector<std::size_t> one_fps_indices(std::size_t frame_count, double fps) {
  auto seconds = static_cast<std::size_t>(std::floor(static_cast<double>(frame_count) / fps));
  seconds = std::max<std::size_t>(1, seconds);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < seconds; ++k) {
    auto idx = 1 + static_cast<std::size_t>(std::floor(static_cast<double>(k) * fps));
    if (idx > frame_count) break;
    if (out.empty() || out.back() != idx) out.push_back(idx);
  }
  return out;
}

struct JudgeResult {
  SafetyLabel label = SafetyLabel::Safe;
  double rho = 0.0;
  std::vector<std::size_t> frames_sent;
};

/// Unsafe iff the judge's score rho >= judge_threshold.
inline JudgeResult judge_video(const VideoArtifact& video, Judge& judge, const PipelineConfig& config) {
  auto indices = one_fps_indices(video.frame_count(), video.fps());
  std::vector<Image> frames;
  for (auto i : indices) frames.push_back(video.frame(i));
  double rho;
  try {
    rho = judge.unsafe_score(frames);
  } catch (const AdapterError& e) {
    throw StageError(Stage::Judge, "judge", e.what());
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw StageError(Stage::Judge, "judge", "score outside [0,1]");
  return {rho >= config.judge_threshold ? SafetyLabel::Unsafe : SafetyLabel::Safe, rho, std::move(indices)};
}

struct WindowVerdict {
  FrameWindow window;
  std::vector<FrameLabel> frame_labels;
  std::string caption;
  std::optional<RiskScores> semantic;
  SafetyLabel semantic_label = SafetyLabel::Safe;
  SafetyLabel label = SafetyLabel::Safe;
  std::vector<std::string> failures;
};

struct DetectionReport {
  std::string video_id;
  SafetyVerdict verdict = SafetyVerdict::safe(Stage::OutputDetect);
  std::vector<WindowVerdict> windows;
  bool outage = false;
};

namespace detect_detail {

inline std::string window_name(const FrameWindow& w) {
  return std::string(to_string(w.scale)) + "[" + std::to_string(w.start) + ".." + std::to_string(w.end()) + "]";
}

inline WindowVerdict inspect_window(const VideoArtifact& video, const FrameWindow& window, const AdapterRegistry& adapters,
                                    const PipelineConfig& config, const RiskTaxonomy& taxonomy) {
  WindowVerdict wv;
  wv.window = window;
  std::vector<Image> frames;
  for (auto i : window.sampled_frames) frames.push_back(video.frame(i));
  wv.frame_labels = classify_frames(frames, *adapters.nsfw_classifier, window.sampled_frames);
  for (const auto& f : wv.frame_labels) {
    if (!f.note.empty()) wv.failures.push_back("frame " + std::to_string(f.index) + ": " + f.note);
  }
  try {
    try {
      wv.caption = adapters.captioner->caption(frames);
    } catch (const AdapterError& e) {
      throw DetectorError(std::string("captioner failed: ") + e.what());
    }
    if (trim(wv.caption).empty()) throw DetectorError("captioner returned an empty caption");
    wv.semantic = semantic_risk(wv.caption, *adapters.risk_text_classifier, taxonomy);
    wv.semantic_label = semantic_rule(*wv.semantic, config, taxonomy);
  } catch (const Error& e) {
    wv.semantic_label = SafetyLabel::Unsafe;
    wv.failures.push_back(std::string("semantic fail-closed: ") + e.what());
  }
  wv.label = wv.semantic_label;
  for (const auto& f : wv.frame_labels) wv.label = fuse(wv.label, f.label);
  return wv;
}

}  // namespace detect_detail

/// Multi-timescale screening. Each window is judged by its sampled frames and
/// by the caption of those frames; the video takes the worst window label.
/// Adapter failures make the affected window Unsafe.
inline DetectionReport detect_detailed(const VideoArtifact& video, const AdapterRegistry& adapters,
                                       const PipelineConfig& config) {
  if (!adapters.nsfw_classifier || !adapters.captioner || !adapters.risk_text_classifier) {
    throw ConfigError("detector", "nsfw_classifier, captioner and risk_text_classifier are required");
  }
  auto taxonomy = config.risk_taxonomy();
  auto windows = slice_video(video, config);
  DetectionReport report;
  report.video_id = video.id();
  report.windows.resize(windows.size());
  parallel_for(windows.size(), static_cast<std::size_t>(config.max_inflight), [&](std::size_t i) {
    report.windows[i] = detect_detail::inspect_window(video, windows[i], adapters, config, taxonomy);
  });

  SafetyLabel label = SafetyLabel::Safe;
  std::vector<Evidence> evidence;
  bool every_call_failed = true;
  for (const auto& wv : report.windows) {
    label = fuse(label, wv.label);
    bool frames_failed =
        std::all_of(wv.frame_labels.begin(), wv.frame_labels.end(), [](const FrameLabel& f) { return !f.note.empty(); });
    every_call_failed = every_call_failed && frames_failed && !wv.semantic;
    if (wv.label == SafetyLabel::Safe) continue;
    double score = 0.0;
    std::string detail;
    for (const auto& f : wv.frame_labels) {
      if (f.label == SafetyLabel::Unsafe) {
        score = std::max(score, f.score);
        detail += (detail.empty() ? "" : "; ") + std::string("frame ") + std::to_string(f.index) + " unsafe";
      }
    }
    if (wv.semantic_label != SafetyLabel::Safe) {
      double top = 0.0;
      if (wv.semantic) {
        for (const auto& [k, v] : wv.semantic->p) {
          if (k != "safe") top = std::max(top, v);
        }
        top = std::max(top, wv.semantic_label == SafetyLabel::PotentialUnsafe ? wv.semantic->ambiguity : top);
      } else {
        top = 1.0;
      }
      score = std::max(score, top);
      detail += (detail.empty() ? "" : "; ") + std::string("semantic ") + to_string(wv.semantic_label);
    }
    for (const auto& f : wv.failures) detail += "; " + f;
    evidence.push_back({"window:" + detect_detail::window_name(wv.window), score, detail});
  }
  if (every_call_failed) {
    report.outage = true;
    label = SafetyLabel::Unsafe;
    evidence.insert(evidence.begin(), {"outage", 1.0, "every detector adapter call failed"});
  }
  report.verdict = SafetyVerdict(label, Stage::OutputDetect, std::move(evidence));
  return report;
}

inline SafetyVerdict detect(const VideoArtifact& video, const AdapterRegistry& adapters, const PipelineConfig& config) {
  return detect_detailed(video, adapters, config).verdict;
}

inline json to_json(const FrameWindow& w) {
  return json{{"scale", to_string(w.scale)}, {"start", w.start}, {"length", w.length}, {"sampled_frames", w.sampled_frames}};
}

/// {video_id, label, windows[], evidence[]}
inline json to_json(const DetectionReport& r) {
  json windows = json::array();
  for (const auto& wv : r.windows) {
    json frames = json::array();
    for (const auto& f : wv.frame_labels) {
      json fj{{"index", f.index}, {"label", to_string(f.label)}, {"score", f.score}};
      if (!f.note.empty()) fj["note"] = f.note;
      frames.push_back(fj);
    }
    json wj = to_json(wv.window);
    wj["frames"] = frames;
    wj["caption"] = wv.caption;
    if (wv.semantic) wj["semantic"] = {{"p", wv.semantic->p}, {"ambiguity", wv.semantic->ambiguity}};
    wj["semantic_label"] = to_string(wv.semantic_label);
    wj["label"] = to_string(wv.label);
    if (!wv.failures.empty()) wj["failures"] = wv.failures;
    windows.push_back(wj);
  }
  auto v = to_json(r.verdict);
  return json{{"video_id", r.video_id},
              {"label", v["label"]},
              {"stage", v["stage"]},
              {"windows", windows},
              {"evidence", v["evidence"]},
              {"outage", r.outage}};
}

// ---------------------------------------------------------------------------
// Standalone output-side baselines (single scale).

/// Classifies N evenly sampled frames of the whole video; any unsafe frame
/// makes the video unsafe.
inline SafetyVerdict visual_classification(const VideoArtifact& video, NsfwClassifier& nsfw, const PipelineConfig& config) {
  FrameWindow whole{ScaleKind::Global, 1, video.frame_count(), {}};
  auto idx = sample_frames(whole, config.frame_sample_n);
  std::vector<Image> frames;
  for (auto i : idx) frames.push_back(video.frame(i));
  auto labels = classify_frames(frames, nsfw, idx);
  std::vector<Evidence> ev;
  for (const auto& f : labels) {
    if (f.label == SafetyLabel::Unsafe) {
      ev.push_back({"nsfw", f.score, "frame " + std::to_string(f.index) + (f.note.empty() ? "" : " " + f.note)});
    }
  }
  auto label = ev.empty() ? SafetyLabel::Safe : SafetyLabel::Unsafe;
  return SafetyVerdict(label, Stage::OutputDetect, std::move(ev));
}

/// Captions N evenly sampled frames of the whole video and applies the
/// semantic rule. Adapter failures yield Unsafe.
inline SafetyVerdict semantic_detection(const VideoArtifact& video, const AdapterRegistry& adapters,
                                        const PipelineConfig& config) {
  FrameWindow whole{ScaleKind::Global, 1, video.frame_count(), {}};
  std::vector<Image> frames;
  for (auto i : sample_frames(whole, config.frame_sample_n)) frames.push_back(video.frame(i));
  auto taxonomy = config.risk_taxonomy();
  try {
    std::string caption;
    try {
      caption = adapters.captioner->caption(frames);
    } catch (const AdapterError& e) {
      throw DetectorError(std::string("captioner failed: ") + e.what());
    }
    auto scores = semantic_risk(caption, *adapters.risk_text_classifier, taxonomy);
    auto label = semantic_rule(scores, config, taxonomy);
    if (label == SafetyLabel::Safe) return SafetyVerdict::safe(Stage::OutputDetect);
    double top = label == SafetyLabel::PotentialUnsafe ? scores.ambiguity : 0.0;
    for (const auto& [k, v] : scores.p) {
      if (k != "safe" && label == SafetyLabel::Unsafe) top = std::max(top, v);
    }
    return SafetyVerdict(label, Stage::OutputDetect, {{"semantic", top, caption}});
  } catch (const Error& e) {
    return SafetyVerdict(SafetyLabel::Unsafe, Stage::OutputDetect, {{"semantic", 1.0, std::string("fail-closed: ") + e.what()}});
  }
}

}  // namespace t2vshield
