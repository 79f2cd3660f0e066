#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/core.hpp"

namespace t2vshield {

/// Emitted by the rewriter when no safe rewrite exists.
inline constexpr std::string_view kContentRemoved = "[CONTENT REMOVED]";

enum class CotStage { Reason, Identify, Rewrite, Verify };

inline const char* to_string(CotStage s) {
  switch (s) {
    case CotStage::Reason: return "reason";
    case CotStage::Identify: return "identify";
    case CotStage::Rewrite: return "rewrite";
    case CotStage::Verify: return "verify";
  }
  return "reason";
}

/// Closed label set of the risk-classification step.
inline const std::array<std::string, 8>& risk_classes() {
  static const std::array<std::string, 8> kClasses{"Violence", "Self-harm", "Hate",           "Sexual",
                                                   "Illicit",  "Dangerous-Act", "Transformation", "None"};
  return kClasses;
}

struct ReasoningChain {
  std::string surface_meaning;
  std::string author_intent;
  std::string desired_effect;
  std::string raw;
  std::vector<std::string> warnings;

  bool operator==(const ReasoningChain&) const = default;
};

struct RiskFindings {
  std::string classification = "None";
  std::vector<std::string> elements;
  std::vector<std::string> strategies;
  std::string raw;
  std::vector<std::string> warnings;

  bool operator==(const RiskFindings&) const = default;
};

struct RetrievedExamples {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;

  bool operator==(const RetrievedExamples&) const = default;
};

struct VerifyResult {
  bool verified = false;
  bool removed_sentinel = false;
  std::string response;

  bool operator==(const VerifyResult&) const = default;
};

struct TraceFailure {
  std::string step;
  std::string message;

  bool operator==(const TraceFailure&) const = default;
};

/// Everything the four rewriting stages produced for one prompt. Fields fill
/// in stage order; `error` records the stage that stopped the run.
struct RewriteTrace {
  Prompt original;
  std::optional<ReasoningChain> chain;
  std::optional<RiskFindings> findings;
  std::optional<RetrievedExamples> retrieved;
  std::optional<std::string> rewrite_response;
  std::optional<Prompt> rewritten;
  std::optional<VerifyResult> verification;
  std::optional<TraceFailure> error;
  int attempts = 0;

  explicit RewriteTrace(Prompt p) : original(std::move(p)) {}

  bool verified() const { return verification && verification->verified; }
  bool removed_sentinel() const { return verification && verification->removed_sentinel; }

  /// No later-stage field without every earlier one, verified implies no
  /// sentinel, and a rewritten prompt is marked as such.
  bool well_ordered() const {
    bool ok = true;
    if (findings) ok &= chain.has_value();
    if (retrieved) ok &= findings.has_value();
    if (rewritten) ok &= retrieved.has_value() && rewrite_response.has_value();
    if (verification) ok &= rewritten.has_value();
    if (verified()) ok &= !removed_sentinel();
    if (rewritten) ok &= rewritten->origin() == Origin::Rewritten;
    return ok;
  }

  bool operator==(const RewriteTrace&) const = default;
};

inline json to_json(const RewriteTrace& t) {
  json j;
  j["prompt_id"] = t.original.id();
  j["original"] = to_json(t.original);
  j["attempts"] = t.attempts;
  if (t.chain) {
    j["reason"] = {{"surface_meaning", t.chain->surface_meaning},
                   {"author_intent", t.chain->author_intent},
                   {"desired_effect", t.chain->desired_effect},
                   {"response", t.chain->raw},
                   {"warnings", t.chain->warnings}};
  }
  if (t.findings) {
    j["identify"] = {{"classification", t.findings->classification},
                     {"elements", t.findings->elements},
                     {"strategies", t.findings->strategies},
                     {"response", t.findings->raw},
                     {"warnings", t.findings->warnings}};
  }
  if (t.retrieved) j["retrieval"] = {{"positives", t.retrieved->positives}, {"negatives", t.retrieved->negatives}};
  if (t.rewritten) j["rewrite"] = {{"response", *t.rewrite_response}, {"rewritten", t.rewritten->text()}};
  if (t.verification) {
    j["verify"] = {{"response", t.verification->response},
                   {"verified", t.verification->verified},
                   {"removed_sentinel", t.verification->removed_sentinel}};
  }
  j["verified"] = t.verified();
  j["removed_sentinel"] = t.removed_sentinel();
  j["error"] = t.error ? json{{"step", t.error->step}, {"message", t.error->message}} : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Templates

namespace cot_detail {

inline constexpr std::string_view kReasonTemplate = R"(SAFETY-FIRST Risk Comprehension

Original Sentence:
{{original}}

Step-by-Step Reasoning:

Step 1. Surface Meaning
Briefly state what literally happens.

Step 2. Author Intent
Why might the author have written this sentence?

Step 3. Desired Effect
What feeling or dramatic impact is the author aiming for?

Answer Steps 1-3 only, each under its heading.
)";

inline constexpr std::string_view kIdentifyTemplate = R"(SAFETY-FIRST Risk Identification

Original Sentence:
{{original}}

Reasoning Chain:
{{reasoning}}

Step 4. Risk Classification
Choose one label and explain in <=1 sentence:
Violence, Self-harm, Hate, Sexual, Illicit, Dangerous-Act, Transformation, None.

Step 5. Unsafe Elements List
List the exact words / phrases that create risk.

Step 6. Rewrite Strategy
Specify how you will remove, replace, or abstract unsafe elements.

Answer Steps 4-6 only, each under its heading.
)";

inline constexpr std::string_view kRewriteTemplate = R"(SAFETY-FIRST Rewriting Prompt Template

Original Sentence:
{{original}}

Step-by-Step Reasoning:

Step 1. Surface Meaning
Briefly state what literally happens.

Step 2. Author Intent
Why might the author have written this sentence?

Step 3. Desired Effect
What feeling or dramatic impact is the author aiming for?

Step 4. Risk Classification
Choose one label and explain in <=1 sentence:
Violence, Self-harm, Hate, Sexual, Illicit, Dangerous-Act, Transformation, None.

Step 5. Unsafe Elements List
List the exact words / phrases that create risk.
{{elements}}

Step 6. Rewrite Strategy
Specify how you will remove, replace, or abstract unsafe elements.
{{strategies}}

Step 7. Study Examples

Positive (Safe) Examples:
{{pos_examples}}

Negative (Unsafe) Examples:
{{neg_examples}}

Step 8. Self-Check
Ensure no explicit violence, no instructions, no hate, no sexual detail, no encouragement of wrongdoing.
If any risk remains, output: [CONTENT REMOVED]

Step 9. Final Rewritten Sentence
Only one safe sentence. Put NOTHING after this line.
)";

inline constexpr std::string_view kVerifyTemplate = R"(SAFETY-FIRST Self-Check

Rewritten Sentence:
{{rewritten}}

Step 8. Self-Check
Ensure no explicit violence, no instructions, no hate, no sexual detail, no encouragement of wrongdoing.
If any risk remains, output: [CONTENT REMOVED]
Otherwise answer SAFE.
)";

}  // namespace cot_detail

/// One template per stage. A template file holds `[[reason]]`, `[[identify]]`,
/// `[[rewrite]]` and `[[verify]]` section markers on their own lines; missing
/// sections keep the shipped defaults.
struct TemplateSet {
  std::string reason{cot_detail::kReasonTemplate};
  std::string identify{cot_detail::kIdentifyTemplate};
  std::string rewrite{cot_detail::kRewriteTemplate};
  std::string verify{cot_detail::kVerifyTemplate};

  const std::string& for_stage(CotStage s) const {
    switch (s) {
      case CotStage::Reason: return reason;
      case CotStage::Identify: return identify;
      case CotStage::Rewrite: return rewrite;
      case CotStage::Verify: return verify;
    }
    return reason;
  }

  static TemplateSet parse(std::string_view text) {
    TemplateSet set;
    std::string* current = nullptr;
    std::string buffer;
    auto flush = [&] {
      if (current) *current = buffer;
      buffer.clear();
    };
    auto lines = split_lines(text);
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    for (const auto& line : lines) {
      auto t = trim(line);
      if (t.size() > 4 && t.starts_with("[[") && t.ends_with("]]")) {
        flush();
        auto name = t.substr(2, t.size() - 4);
        if (name == "reason") current = &set.reason;
        else if (name == "identify") current = &set.identify;
        else if (name == "rewrite") current = &set.rewrite;
        else if (name == "verify") current = &set.verify;
        else throw ValidationError("unknown template section [[" + std::string(name) + "]]");
        continue;
      }
      if (!current) {
        if (!t.empty()) throw ValidationError("template text before the first [[section]] marker");
        continue;
      }
      buffer += line;
      buffer += '\n';
    }
    flush();
    return set;
  }

  static TemplateSet load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot read template file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool operator==(const TemplateSet&) const = default;
};

namespace cot_detail {

inline std::string bullet_list(const std::vector<std::string>& items) {
  if (items.empty()) return "- (none)";
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '\n';
    out += "- " + items[i];
  }
  return out;
}

inline std::optional<std::string> slot_value(const std::string& slot, const RewriteTrace& ctx) {
  if (slot == "original") return ctx.original.text();
  if (slot == "reasoning") return ctx.chain ? std::optional(ctx.chain->raw) : std::nullopt;
  if (slot == "elements") return ctx.findings ? std::optional(bullet_list(ctx.findings->elements)) : std::nullopt;
  if (slot == "strategies") return ctx.findings ? std::optional(bullet_list(ctx.findings->strategies)) : std::nullopt;
  if (slot == "classification") return ctx.findings ? std::optional(ctx.findings->classification) : std::nullopt;
  if (slot == "pos_examples") return ctx.retrieved ? std::optional(bullet_list(ctx.retrieved->positives)) : std::nullopt;
  if (slot == "neg_examples") return ctx.retrieved ? std::optional(bullet_list(ctx.retrieved->negatives)) : std::nullopt;
  if (slot == "rewritten") return ctx.rewritten ? std::optional(ctx.rewritten->text()) : std::nullopt;
  throw TemplateError(slot);
}

}  // namespace cot_detail

/// Fills the stage template from the in-progress trace. Pure: the same trace
/// always renders to the same bytes. Throws TemplateError naming the first
/// slot the trace cannot supply yet.
inline std::string render_stage_prompt(CotStage stage, const RewriteTrace& ctx,
                                       const TemplateSet& templates = TemplateSet{}) {
  const auto& tpl = templates.for_stage(stage);
  // The rewrite stage needs findings and the retrieved examples even when a
  // custom template does not reference them.
  if (stage == CotStage::Rewrite) {
    if (!ctx.findings) throw TemplateError("elements");
    if (!ctx.retrieved) throw TemplateError("pos_examples");
  }
  if (stage == CotStage::Verify && !ctx.rewritten) throw TemplateError("rewritten");
  std::string out;
  out.reserve(tpl.size() + 256);
  std::size_t pos = 0;
  while (true) {
    auto open = tpl.find("{{", pos);
    if (open == std::string::npos) break;
    auto close = tpl.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(tpl, pos, open - pos);
    std::string slot(trim(std::string_view(tpl).substr(open + 2, close - open - 2)));
    auto value = cot_detail::slot_value(slot, ctx);
    if (!value) throw TemplateError(slot);
    out += *value;
    pos = close + 2;
  }
  out.append(tpl, pos);
  return out;
}

// ---------------------------------------------------------------------------
// Response parsing

namespace cot_detail {

struct StepHeading {
  int step;
  const char* name;
};

inline constexpr std::array<StepHeading, 7> kHeadings{{{1, "surface meaning"},
                                                       {2, "author intent"},
                                                       {3, "desired effect"},
                                                       {4, "risk classification"},
                                                       {5, "unsafe elements list"},
                                                       {6, "rewrite strategy"},
                                                       {9, "final rewritten sentence"}}};

inline std::string strip_decoration(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '*' || s.front() == '#' || s.front() == '>' || s.front() == '_')) {
    s.remove_prefix(1);
    s = trim(s);
  }
  return std::string(s);
}

inline std::string strip_separators(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == ':' || s.front() == '*' || s.front() == '-' || s.front() == '.' ||
                        s.front() == ')' || s.front() == '_')) {
    s.remove_prefix(1);
    s = trim(s);
  }
  return std::string(s);
}

/// Splits a labeled response into step number -> content lines.
inline std::map<int, std::vector<std::string>> parse_steps(std::string_view response) {
  static const std::regex kStep(R"(^step\s*([1-9])\b\s*(.*)$)", std::regex::icase);
  std::map<int, std::vector<std::string>> steps;
  int current = 0;
  for (const auto& raw_line : split_lines(response)) {
    auto line = strip_decoration(raw_line);
    if (line.empty()) continue;
    std::smatch m;
    int heading = 0;
    std::string rest;
    if (std::regex_match(line, m, kStep)) {
      heading = m[1].str()[0] - '0';
      rest = strip_separators(m[2].str());
      for (const auto& h : kHeadings) {
        if (h.step == heading && to_lower(rest).starts_with(h.name)) {
          rest = strip_separators(std::string_view(rest).substr(std::string_view(h.name).size()));
          break;
        }
      }
    } else {
      auto lower = to_lower(line);
      for (const auto& h : kHeadings) {
        std::string_view name(h.name);
        if (lower.starts_with(name)) {
          auto after = std::string_view(line).substr(name.size());
          auto t = trim(after);
          if (t.empty() || t.front() == ':' || t.front() == '*') {
            heading = h.step;
            rest = strip_separators(after);
          }
          break;
        }
      }
    }
    if (heading) {
      current = heading;
      steps[current];
      if (!rest.empty()) steps[current].push_back(rest);
    } else if (current) {
      steps[current].push_back(line);
    }
  }
  return steps;
}

inline std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    if (!out.empty()) out += ' ';
    out += l;
  }
  return out;
}

inline std::vector<std::string> list_items(const std::vector<std::string>& lines) {
  std::vector<std::string> items;
  for (const auto& l : lines) {
    auto item = strip_separators(l);
    if (item.size() >= 2 && (item.front() == '"' || item.front() == '\'') && item.back() == item.front()) {
      item = item.substr(1, item.size() - 2);
    }
    auto lower = to_lower(item);
    if (item.empty() || lower == "none" || lower == "(none)" || lower == "n/a") continue;
    items.push_back(item);
  }
  return items;
}

inline std::string call_rewriter(Rewriter& rewriter, CotStage stage, const std::string& prompt) {
  try {
    return rewriter.complete(prompt);
  } catch (const AdapterError& e) {
    throw StageError(Stage::RewriteVerify, to_string(stage), e.what());
  }
}

}  // namespace cot_detail

/// Extracts the three comprehension fields from a labeled response. Free prose
/// keeps `raw` and leaves the fields empty with a warning.
inline ReasoningChain parse_reasoning(std::string response) {
  using namespace cot_detail;
  ReasoningChain chain;
  auto steps = parse_steps(response);
  chain.raw = std::move(response);
  static constexpr std::array<const char*, 3> kNames{"surface_meaning", "author_intent", "desired_effect"};
  std::array<std::string*, 3> fields{&chain.surface_meaning, &chain.author_intent, &chain.desired_effect};
  int found = 0;
  for (int i = 0; i < 3; ++i) {
    auto it = steps.find(i + 1);
    if (it != steps.end() && !it->second.empty()) {
      *fields[i] = join(it->second);
      ++found;
    }
  }
  if (found == 0) {
    chain.warnings.push_back("reasoning response has no labeled steps; kept raw text only");
  } else {
    for (int i = 0; i < 3; ++i) {
      if (fields[i]->empty()) chain.warnings.push_back(std::string("missing field ") + kNames[i]);
    }
  }
  return chain;
}

/// Maps the identification response onto the closed label set. Unknown
/// labels become "None" with a warning.
inline RiskFindings parse_findings(std::string response) {
  using namespace cot_detail;
  RiskFindings f;
  auto steps = parse_steps(response);
  f.raw = std::move(response);
  auto it = steps.find(4);
  if (it == steps.end() || it->second.empty()) {
    f.warnings.push_back("no risk classification found; using None");
  } else {
    const auto& first = it->second.front();
    std::size_t end = 0;
    while (end < first.size() && (std::isalpha(static_cast<unsigned char>(first[end])) || first[end] == '-')) ++end;
    auto token = to_lower(first.substr(0, end));
    bool matched = false;
    for (const auto& c : risk_classes()) {
      if (to_lower(c) == token) {
        f.classification = c;
        matched = true;
        break;
      }
    }
    if (!matched) f.warnings.push_back("unlisted risk label '" + first.substr(0, end) + "'; using None");
  }
  if (auto e = steps.find(5); e != steps.end()) f.elements = list_items(e->second);
  if (auto s = steps.find(6); s != steps.end()) f.strategies = list_items(s->second);
  return f;
}

/// The last non-empty line of a rewrite response.
inline std::string extract_final_sentence(std::string_view response) {
  auto lines = split_lines(response);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    auto t = trim(*it);
    if (!t.empty()) return std::string(t);
  }
  return {};
}

inline ReasoningChain run_reason(const Prompt& prompt, Rewriter& rewriter, const TemplateSet& templates = {}) {
  RewriteTrace ctx(prompt);
  auto response = cot_detail::call_rewriter(rewriter, CotStage::Reason, render_stage_prompt(CotStage::Reason, ctx, templates));
  if (trim(response).empty()) throw StageError(Stage::RewriteVerify, "reason", "empty response");
  return parse_reasoning(std::move(response));
}

inline RiskFindings run_identify(const Prompt& prompt, const ReasoningChain& chain, Rewriter& rewriter,
                                 const TemplateSet& templates = {}) {
  if (trim(chain.raw).empty()) throw ArgumentError("reasoning chain has no raw response");
  RewriteTrace ctx(prompt);
  ctx.chain = chain;
  auto response =
      cot_detail::call_rewriter(rewriter, CotStage::Identify, render_stage_prompt(CotStage::Identify, ctx, templates));
  if (trim(response).empty()) throw StageError(Stage::RewriteVerify, "identify", "empty response");
  return parse_findings(std::move(response));
}

struct RewriteResult {
  Prompt rewritten;
  std::string response;
};

inline RewriteResult run_rewrite(const Prompt& prompt, const RiskFindings& findings,
                                 const std::vector<std::string>& positives, const std::vector<std::string>& negatives,
                                 Rewriter& rewriter, const TemplateSet& templates = {}) {
  RewriteTrace ctx(prompt);
  ctx.findings = findings;
  ctx.retrieved = RetrievedExamples{positives, negatives};
  auto response =
      cot_detail::call_rewriter(rewriter, CotStage::Rewrite, render_stage_prompt(CotStage::Rewrite, ctx, templates));
  auto sentence = extract_final_sentence(response);
  if (sentence.empty()) throw RewriteError("rewriter returned an empty response");
  return {prompt.rewritten(std::move(sentence)), std::move(response)};
}

/// Self-check. A sentinel anywhere (in the candidate or the answer) fails;
/// otherwise the answer's first token must be an affirmative word.
inline VerifyResult run_verify(const Prompt& rewritten, Rewriter& rewriter,
                               const std::vector<std::string>& affirmative = {"SAFE", "YES", "PASS"},
                               const TemplateSet& templates = {}) {
  if (rewritten.text().find(kContentRemoved) != std::string::npos) {
    return {false, true, rewritten.text()};
  }
  RewriteTrace ctx(rewritten);
  ctx.rewritten = rewritten;
  auto response =
      cot_detail::call_rewriter(rewriter, CotStage::Verify, render_stage_prompt(CotStage::Verify, ctx, templates));
  if (response.find(kContentRemoved) != std::string::npos) return {false, true, response};
  auto t = cot_detail::strip_decoration(response);
  std::size_t end = 0;
  while (end < t.size() && std::isalpha(static_cast<unsigned char>(t[end]))) ++end;
  auto token = to_upper(t.substr(0, end));
  for (const auto& a : affirmative) {
    if (!token.empty() && to_upper(a) == token) return {true, false, response};
  }
  return {false, false, response};
}

/// Supplies (positives, negatives) example texts for a prompt.
using ExampleRetriever = std::function<RetrievedExamples(const Prompt&)>;

/// reason -> identify -> retrieve -> rewrite -> verify. Never throws for a
/// stage failure: the trace records the failing step and stays unverified.
inline RewriteTrace run_risktrace(const Prompt& prompt, Rewriter& rewriter, const ExampleRetriever& retrieve,
                                  const PipelineConfig& config, const TemplateSet& templates = {}) {
  RewriteTrace trace(prompt);
  std::string step = "reason";
  try {
    trace.chain = run_reason(prompt, rewriter, templates);
    step = "identify";
    trace.findings = run_identify(prompt, *trace.chain, rewriter, templates);
    step = "retrieve";
    trace.retrieved = retrieve ? retrieve(prompt) : RetrievedExamples{};
    for (std::int64_t attempt = 0; attempt < config.rewrite_attempts; ++attempt) {
      trace.attempts = static_cast<int>(attempt + 1);
      step = "rewrite";
      auto result = run_rewrite(prompt, *trace.findings, trace.retrieved->positives, trace.retrieved->negatives,
                                rewriter, templates);
      trace.rewrite_response = std::move(result.response);
      trace.rewritten = std::move(result.rewritten);
      trace.verification.reset();
      step = "verify";
      trace.verification = run_verify(*trace.rewritten, rewriter, config.affirmative_tokens, templates);
      if (trace.verification->verified) break;
    }
  } catch (const StageError& e) {
    trace.error = TraceFailure{e.step(), e.what()};
  } catch (const Error& e) {
    trace.error = TraceFailure{step, e.what()};
  }
  return trace;
}

}  // namespace t2vshield
