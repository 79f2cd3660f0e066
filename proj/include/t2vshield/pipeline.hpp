#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/eval_metrics.hpp"
#include "t2vshield/input_defense.hpp"
#include "t2vshield/multiscope_detect.hpp"
#include "t2vshield/parallel.hpp"
#include "t2vshield/posneg_rag.hpp"
#include "t2vshield/risktrace_cot.hpp"

namespace t2vshield {

class RunAbortedError : public Error {
 public:
  using Error::Error;
};

using StageTimings = std::map<std::string, double>;

struct PipelineOutcome {
  std::string prompt_id;
  Decision decision = Decision::RejectedAtInput;
  std::optional<RewriteTrace> trace;
  SafetyVerdict verdict = SafetyVerdict::safe(Stage::InputGate);
  std::optional<VideoArtifact> video;
  std::optional<DetectionReport> detection;
  std::optional<std::string> failed_stage;
  std::optional<std::string> failure;
  std::vector<std::string> warnings;
  StageTimings timings_ms;
  double total_ms = 0.0;

  bool accepted() const { return decision == Decision::Accepted; }
  /// The video that may reach the user: only an accepted outcome releases one.
  const VideoArtifact* released_video() const { return accepted() && video ? &*video : nullptr; }
};

/// Optional extras for run_defense.
struct DefenseContext {
  const RetrievalGraph* graph = nullptr;
  const SensitiveLexicon* lexicon = nullptr;
  TemplateSet templates{};
};

namespace pipeline_detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

inline SafetyVerdict failure_verdict(Stage stage, const std::string& step, const std::string& what) {
  return SafetyVerdict(SafetyLabel::Unsafe, stage, {{"failure:" + step, 1.0, what}});
}

inline std::vector<std::string> texts(const std::vector<ExampleNode>& nodes) {
  std::vector<std::string> out;
  for (const auto& n : nodes) out.push_back(n.text);
  return out;
}

}  // namespace pipeline_detail

/// Negatives nearest the prompt's text embedding and their paired positives.
inline RetrievedExamples retrieve_examples(const Prompt& prompt, TextEmbedder& embedder, const RetrievalGraph& graph,
                                           const PipelineConfig& config, std::vector<std::string>* warnings = nullptr) {
  EmbeddingVector q;
  try {
    q = embedder.embed_text(prompt.text());
  } catch (const AdapterError& e) {
    throw StageError(Stage::RewriteVerify, "retrieve", e.what());
  }
  auto negatives = retrieve_negatives(q, graph, config.k_neg, config.lambda, warnings);
  auto positives = paired_positives(negatives, graph, warnings);
  return {pipeline_detail::texts(positives), pipeline_detail::texts(negatives)};
}

/// Optional pre-gate, rewrite-and-verify, generation, then multi-scope
/// detection. Every failure rejects; only a Safe detection is accepted.
inline PipelineOutcome run_defense(const Prompt& prompt, const AdapterRegistry& reg, const PipelineConfig& config,
                                   const DefenseContext& ctx = {}) {
  using namespace pipeline_detail;
  reg.require_all();
  const auto started = Clock::now();
  PipelineOutcome out;
  out.prompt_id = prompt.id();
  auto finish = [&](Decision d, SafetyVerdict v) {
    out.decision = d;
    out.verdict = std::move(v);
    out.total_ms = ms_since(started);
    return out;
  };
  auto fail = [&](Decision d, Stage stage, const std::string& step, const std::string& what) {
    out.failed_stage = step;
    out.failure = what;
    return finish(d, failure_verdict(stage, step, what));
  };

  if (config.pregate_keyword || config.pregate_toxicity) {
    auto t0 = Clock::now();
    if (config.pregate_keyword) {
      if (!ctx.lexicon) return fail(Decision::RejectedAtInput, Stage::InputGate, "keyword", "no lexicon configured");
      auto hits = detect_keywords(prompt, *ctx.lexicon);
      if (!hits.empty()) {
        std::vector<Evidence> ev;
        for (const auto& h : hits) ev.push_back({"keyword", 1.0, h});
        out.timings_ms["input_gate"] = ms_since(t0);
        return finish(Decision::RejectedAtInput, SafetyVerdict(SafetyLabel::Unsafe, Stage::InputGate, std::move(ev)));
      }
    }
    if (config.pregate_toxicity) {
      try {
        auto v = toxicity_gate(prompt, *reg.toxicity_scorer, config.tau_H);
        if (v.label() != SafetyLabel::Safe) {
          out.timings_ms["input_gate"] = ms_since(t0);
          return finish(Decision::RejectedAtInput, v);
        }
      } catch (const Error& e) {
        out.timings_ms["input_gate"] = ms_since(t0);
        return fail(Decision::RejectedAtInput, Stage::InputGate, "toxicity", e.what());
      }
    }
    out.timings_ms["input_gate"] = ms_since(t0);
  }

  auto t_cot = Clock::now();
  double retrieve_ms = 0.0;
  ExampleRetriever retriever;
  if (config.rag_enabled && ctx.graph) {
    retriever = [&](const Prompt& p) {
      auto t0 = Clock::now();
      auto r = retrieve_examples(p, *reg.text_embedder, *ctx.graph, config, &out.warnings);
      retrieve_ms += ms_since(t0);
      return r;
    };
  }
  out.trace = run_risktrace(prompt, *reg.rewriter, retriever, config, ctx.templates);
  out.timings_ms["retrieve"] = retrieve_ms;
  out.timings_ms["rewrite_verify"] = std::max(0.0, ms_since(t_cot) - retrieve_ms);
  const auto& trace = *out.trace;
  if (trace.error) {
    return fail(Decision::RejectedAtVerify, Stage::RewriteVerify, trace.error->step, trace.error->message);
  }
  if (!trace.verified()) {
    const auto& vr = *trace.verification;
    std::string why = vr.removed_sentinel ? "rewrite removed all content" : "self-check did not affirm the rewrite";
    return finish(Decision::RejectedAtVerify,
                  SafetyVerdict(SafetyLabel::Unsafe, Stage::RewriteVerify, {{"verify", 1.0, why + ": " + vr.response}}));
  }

  auto t_gen = Clock::now();
  try {
    out.video = reg.video_generator->generate(trace.rewritten->text());
  } catch (const Error& e) {
    out.timings_ms["generate"] = ms_since(t_gen);
    return fail(Decision::RejectedAtOutput, Stage::OutputDetect, "generate", e.what());
  }
  out.timings_ms["generate"] = ms_since(t_gen);

  auto t_det = Clock::now();
  try {
    out.detection = detect_detailed(*out.video, reg, config);
  } catch (const Error& e) {
    out.timings_ms["detect"] = ms_since(t_det);
    return fail(Decision::RejectedAtOutput, Stage::OutputDetect, "detect", e.what());
  }
  out.timings_ms["detect"] = ms_since(t_det);
  if (out.detection->outage) {
    out.failed_stage = "detect";
    out.failure = "every detector call failed";
  }
  const auto& verdict = out.detection->verdict;
  return finish(verdict.label() == SafetyLabel::Safe ? Decision::Accepted : Decision::RejectedAtOutput, verdict);
}

inline json to_json(const PipelineOutcome& o, const std::optional<std::string>& video_ref = std::nullopt) {
  json j{{"prompt_id", o.prompt_id}, {"decision", to_string(o.decision)}, {"verdict", to_json(o.verdict)}};
  if (o.trace) j["trace"] = to_json(*o.trace);
  if (o.detection) j["detection"] = to_json(*o.detection);
  if (video_ref) j["video_ref"] = *video_ref;
  if (o.failed_stage) j["failed_stage"] = *o.failed_stage;
  if (o.failure) j["failure"] = *o.failure;
  if (!o.warnings.empty()) j["warnings"] = o.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Datasets and example pools

inline std::vector<Prompt> parse_dataset(std::istream& in) {
  std::vector<Prompt> out;
  std::map<std::string, int> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    auto where = "dataset line " + std::to_string(lineno);
    if (j.is_discarded() || !j.is_object()) throw ValidationError(where + ": not a JSON object");
    if (!j.contains("id") || !j["id"].is_string() || trim(j["id"].get<std::string>()).empty()) {
      throw ValidationError(where + ": missing or empty 'id'");
    }
    if (!j.contains("text") || !j["text"].is_string()) throw ValidationError(where + ": missing 'text'");
    std::optional<std::string> category;
    if (j.contains("category") && j["category"].is_string()) category = j["category"].get<std::string>();
    auto id = j["id"].get<std::string>();
    ++seen[id];
    try {
      out.emplace_back(id, j["text"].get<std::string>(), category, Origin::Benchmark);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  std::vector<std::string> dups;
  for (const auto& [id, n] : seen) {
    if (n > 1) dups.push_back(id);
  }
  if (!dups.empty()) {
    std::string list;
    for (const auto& d : dups) list += (list.empty() ? "" : ", ") + d;
    throw ValidationError("duplicate prompt ids: " + list);
  }
  if (out.empty()) throw ArgumentError("dataset is empty");
  return out;
}

inline std::vector<Prompt> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open dataset " + path.string());
  return parse_dataset(in);
}

/// Pool file: JSONL {id, label: positive|negative, text, frames: [paths]}
/// with paths relative to the pool file. Each node's image embedding is the
/// mean over frames_per_node evenly spaced frames.
inline std::vector<ExampleNode> load_pool(const std::filesystem::path& path, const AdapterRegistry& reg,
                                          const PipelineConfig& config) {
  if (!reg.text_embedder || !reg.image_embedder) throw ConfigError("embedder", "text and image embedders are required");
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open pool " + path.string());
  auto base = path.parent_path();
  std::vector<ExampleNode> pool;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    auto where = "pool line " + std::to_string(lineno) + ": ";
    if (j.is_discarded() || !j.is_object()) throw ValidationError(where + "not a JSON object");
    for (const char* k : {"id", "label", "text"}) {
      if (!j.contains(k) || !j[k].is_string()) throw ValidationError(where + "missing '" + k + "'");
    }
    if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty()) {
      throw ValidationError(where + "'frames' must be a non-empty array");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& f : j["frames"]) files.push_back(base / f.get<std::string>());
    FrameWindow all{ScaleKind::Global, 1, files.size(), {}};
    std::vector<EmbeddingVector> frame_emb;
    for (auto idx : sample_frames(all, config.frames_per_node)) {
      frame_emb.push_back(reg.image_embedder->embed_image(Image{read_file_bytes(files[idx - 1])}));
    }
    auto text = j["text"].get<std::string>();
    auto emb = embed_sample(text, frame_emb, *reg.text_embedder);
    pool.push_back(ExampleNode{j["id"].get<std::string>(), example_label_from_string(j["label"].get<std::string>()), text,
                               std::move(emb.z_text), std::move(emb.z_image), static_cast<int>(frame_emb.size())});
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Benchmark runs

enum class DefenseMode { Off, Keyword, Toxicity, Segmentation, VisualClassify, SemanticDetect, Judge, T2VShield };

inline const char* to_string(DefenseMode m) {
  switch (m) {
    case DefenseMode::Off: return "off";
    case DefenseMode::Keyword: return "keyword";
    case DefenseMode::Toxicity: return "toxicity";
    case DefenseMode::Segmentation: return "segmentation";
    case DefenseMode::VisualClassify: return "visual-classify";
    case DefenseMode::SemanticDetect: return "semantic-detect";
    case DefenseMode::Judge: return "judge";
    case DefenseMode::T2VShield: return "t2vshield";
  }
  return "off";
}

inline DefenseMode defense_from_string(std::string_view s) {
  for (auto m : {DefenseMode::Off, DefenseMode::Keyword, DefenseMode::Toxicity, DefenseMode::Segmentation,
                 DefenseMode::VisualClassify, DefenseMode::SemanticDetect, DefenseMode::Judge, DefenseMode::T2VShield}) {
    if (s == to_string(m)) return m;
  }
  throw ArgumentError("unknown defense '" + std::string(s) + "'");
}

struct BenchmarkResult {
  RunReport report;
  std::vector<PipelineOutcome> outcomes;
};

namespace pipeline_detail {

/// Whether a released video counts as a successful attack.
struct HarmScore {
  bool harmful = false;
  SafetyLabel label = SafetyLabel::Safe;
  std::optional<double> judge_score;
};

inline HarmScore score_release(const VideoArtifact& video, const AdapterRegistry& reg, const PipelineConfig& config) {
  HarmScore s;
  std::optional<JudgeResult> jr;
  try {
    jr = judge_video(video, *reg.judge, config);
    s.judge_score = jr->rho;
  } catch (const Error&) {
    if (config.asr_mode == AsrMode::Judge && !config.judge_fallback) throw;
  }
  if (config.asr_mode == AsrMode::Judge && jr) {
    s.label = jr->label;
  } else {
    s.label = detect(video, reg, config).label();
  }
  s.harmful = is_malicious(s.label);
  return s;
}

inline std::optional<double> try_similarity(const Prompt& p, const VideoArtifact& v, const AdapterRegistry& reg,
                                            std::vector<EmbeddingVector>& frames) {
  try {
    auto q = reg.text_embedder->embed_text(p.text());
    for (const auto& f : v.frames()) frames.push_back(reg.image_embedder->embed_image(f));
    if (q.dim() != frames.front().dim()) return std::nullopt;
    return prompt_video_similarity(q, frames);
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// Runs one baseline: optional input gate, generation from the (possibly
/// transformed) prompt, optional output check.
inline PipelineOutcome run_baseline(const Prompt& prompt, DefenseMode mode, const AdapterRegistry& reg,
                                    const PipelineConfig& config, const DefenseContext& ctx) {
  const auto started = Clock::now();
  PipelineOutcome out;
  out.prompt_id = prompt.id();
  auto done = [&](Decision d, SafetyVerdict v) {
    out.decision = d;
    out.verdict = std::move(v);
    out.total_ms = ms_since(started);
    return out;
  };
  auto fail = [&](Decision d, Stage stage, const std::string& step, const std::string& what) {
    out.failed_stage = step;
    out.failure = what;
    return done(d, failure_verdict(stage, step, what));
  };

  Prompt to_generate = prompt;
  auto t0 = Clock::now();
  switch (mode) {
    case DefenseMode::Keyword: {
      if (!ctx.lexicon) return fail(Decision::RejectedAtInput, Stage::InputGate, "keyword", "no lexicon configured");
      auto hits = detect_keywords(prompt, *ctx.lexicon);
      out.timings_ms["input_gate"] = ms_since(t0);
      if (!hits.empty()) {
        std::vector<Evidence> ev;
        for (const auto& h : hits) ev.push_back({"keyword", 1.0, h});
        return done(Decision::RejectedAtInput, SafetyVerdict(SafetyLabel::Unsafe, Stage::InputGate, std::move(ev)));
      }
      break;
    }
    case DefenseMode::Toxicity:
      try {
        auto v = toxicity_gate(prompt, *reg.toxicity_scorer, config.tau_H);
        out.timings_ms["input_gate"] = ms_since(t0);
        if (v.label() != SafetyLabel::Safe) return done(Decision::RejectedAtInput, v);
      } catch (const Error& e) {
        return fail(Decision::RejectedAtInput, Stage::InputGate, "toxicity", e.what());
      }
      break;
    case DefenseMode::Segmentation:
      if (!ctx.lexicon) return fail(Decision::RejectedAtInput, Stage::InputGate, "segmentation", "no lexicon configured");
      to_generate = segment_sensitive(prompt, *ctx.lexicon, SegmentationPolicy(config.segmentation_separator));
      out.timings_ms["input_gate"] = ms_since(t0);
      break;
    default:
      break;
  }

  auto t_gen = Clock::now();
  try {
    out.video = reg.video_generator->generate(to_generate.text());
  } catch (const Error& e) {
    return fail(Decision::RejectedAtOutput, Stage::OutputDetect, "generate", e.what());
  }
  out.timings_ms["generate"] = ms_since(t_gen);

  auto t_det = Clock::now();
  std::optional<SafetyVerdict> check;
  try {
    switch (mode) {
      case DefenseMode::VisualClassify: check = visual_classification(*out.video, *reg.nsfw_classifier, config); break;
      case DefenseMode::SemanticDetect: check = semantic_detection(*out.video, reg, config); break;
      case DefenseMode::Judge: {
        auto jr = judge_video(*out.video, *reg.judge, config);
        check = jr.label == SafetyLabel::Safe
                    ? SafetyVerdict(SafetyLabel::Safe, Stage::Judge, {{"judge", jr.rho, "below threshold"}})
                    : SafetyVerdict(SafetyLabel::Unsafe, Stage::Judge, {{"judge", jr.rho, "rho >= threshold"}});
        break;
      }
      default: break;
    }
  } catch (const Error& e) {
    Stage st = mode == DefenseMode::Judge ? Stage::Judge : Stage::OutputDetect;
    return fail(Decision::RejectedAtOutput, st, "detect", e.what());
  }
  if (check) {
    out.timings_ms["detect"] = ms_since(t_det);
    if (check->label() != SafetyLabel::Safe) return done(Decision::RejectedAtOutput, *check);
    return done(Decision::Accepted, *check);
  }
  return done(Decision::Accepted, SafetyVerdict::safe(mode == DefenseMode::Off ? Stage::OutputDetect : Stage::InputGate));
}

}  // namespace pipeline_detail

/// Processes every prompt under one defense and scores what it releases.
/// Per-prompt failures are recorded; the run aborts once more than half of
/// the dataset has hit adapter failures.
inline BenchmarkResult run_benchmark(const std::vector<Prompt>& dataset, const AdapterRegistry& reg,
                                     const PipelineConfig& config, DefenseMode mode, const DefenseContext& ctx = {},
                                     const std::map<std::string, json>& human_scores = {}) {
  using namespace pipeline_detail;
  if (dataset.empty()) throw ArgumentError("dataset is empty");
  reg.require_all();
  std::set<std::string> ids;
  for (const auto& p : dataset) {
    if (!ids.insert(p.id()).second) throw ValidationError("duplicate prompt ids: " + p.id());
  }
  if (mode == DefenseMode::T2VShield && config.rag_enabled && !ctx.graph) {
    throw ConfigError("rag_enabled", "retrieval is enabled but no graph was loaded");
  }

  const std::size_t n = dataset.size();
  BenchmarkResult result;
  result.outcomes.resize(n);
  std::vector<PromptRecord> records(n);
  std::atomic<std::size_t> failures{0};
  std::atomic<bool> aborted{false};

  parallel_for(n, static_cast<std::size_t>(config.workers), [&](std::size_t i) {
    if (aborted) return;
    const auto& prompt = dataset[i];
    PipelineOutcome out = mode == DefenseMode::T2VShield ? run_defense(prompt, reg, config, ctx)
                                                         : run_baseline(prompt, mode, reg, config, ctx);
    PromptRecord rec;
    rec.prompt_id = prompt.id();
    rec.category = prompt.category().value_or("uncategorized");
    rec.decision = out.decision;
    rec.label = out.verdict.label();
    if (out.failure) rec.failure = *out.failed_stage + ": " + *out.failure;
    if (auto* video = out.released_video()) {
      auto t0 = Clock::now();
      try {
        auto harm = score_release(*video, reg, config);
        rec.harmful = harm.harmful;
        rec.judge_score = harm.judge_score;
        if (mode == DefenseMode::Off) rec.label = harm.label;
      } catch (const Error& e) {
        rec.harmful = true;
        rec.failure = std::string("score: ") + e.what();
      }
      std::vector<EmbeddingVector> frames;
      rec.similarity = try_similarity(prompt, *video, reg, frames);
      if (frames.size() >= 2 && frames.size() == video->frame_count()) rec.temporal_consistency = temporal_consistency(frames);
      out.timings_ms["score"] = ms_since(t0);
      out.total_ms += out.timings_ms["score"];
    }
    if (auto it = human_scores.find(prompt.id()); it != human_scores.end()) rec.human_scores = it->second;
    if (rec.failure && ++failures * 2 > n) aborted = true;
    records[i] = std::move(rec);
    result.outcomes[i] = std::move(out);
  });
  if (aborted) {
    throw RunAbortedError("aborted: " + std::to_string(failures.load()) + " of " + std::to_string(n) +
                          " prompts hit adapter failures");
  }
  result.report.defense = to_string(mode);
  result.report.records = std::move(records);
  result.report.aggregates = aggregate(result.report.records);
  return result;
}

inline std::string video_ref(const std::string& prompt_id) { return "accepted/" + prompt_id; }

/// outcomes.jsonl, report.json, report.csv, timings.json and accepted/<id>/
/// for each released video. Everything except timings.json is a pure
/// function of the run's inputs.
inline void write_benchmark(const BenchmarkResult& r, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::remove_all(dir / "accepted");
  fs::create_directories(dir / "accepted");
  std::ofstream outcomes(dir / "outcomes.jsonl", std::ios::binary);
  json timings = json::object();
  for (const auto& o : r.outcomes) {
    std::optional<std::string> ref;
    if (auto* v = o.released_video()) {
      ref = video_ref(o.prompt_id);
      save_video_dir(*v, dir / *ref);
    }
    outcomes << to_json(o, ref).dump() << '\n';
    timings[o.prompt_id] = {{"stages_ms", o.timings_ms}, {"total_ms", o.total_ms}};
  }
  std::ofstream(dir / "report.json", std::ios::binary) << to_json(r.report).dump(2) << '\n';
  std::ofstream(dir / "report.csv", std::ios::binary) << to_csv(r.report);
  std::ofstream(dir / "timings.json", std::ios::binary) << timings.dump(2) << '\n';
}

}  // namespace t2vshield
