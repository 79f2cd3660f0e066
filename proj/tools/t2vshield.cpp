#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "t2vshield/t2vshield.hpp"

namespace fs = std::filesystem;
using namespace t2vshield;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;
constexpr int kExitRejected = 3;

struct CommonOptions {
  std::string config_path;
  std::string templates_path;
  std::string mock_scripts;
  std::string mock_policy = "flag-keywords";
  std::uint64_t mock_seed = 0;
  std::string graph_path;
  std::string lexicon_path;
};

void add_common(CLI::App* sub, CommonOptions& o, bool graph, bool lexicon) {
  sub->add_option("--config", o.config_path, "Pipeline config file");
  sub->add_option("--templates", o.templates_path, "Rewriting template file");
  sub->add_option("--mock-scripts", o.mock_scripts, "Scripted mock responses (JSON)");
  sub->add_option("--mock-policy", o.mock_policy, "Mock fallback policy: benign, flag-keywords or error");
  sub->add_option("--mock-seed", o.mock_seed, "Mock seed");
  if (graph) sub->add_option("--graph", o.graph_path, "Retrieval graph file");
  if (lexicon) sub->add_option("--lexicon", o.lexicon_path, "Sensitive-word lexicon");
}

struct Runtime {
  PipelineConfig config;
  std::shared_ptr<MockSuite> mocks;
  AdapterRegistry registry;
  std::optional<RetrievalGraph> graph;
  std::optional<SensitiveLexicon> lexicon;
  DefenseContext ctx;
};

std::unique_ptr<Runtime> make_runtime(const CommonOptions& o, bool uses_graph = false) {
  auto rt = std::make_unique<Runtime>();
  if (!o.config_path.empty()) rt->config = load_config(o.config_path);
  MockSettings ms;
  ms.seed = o.mock_seed;
  ms.policy = mock_policy_from_string(o.mock_policy);
  rt->mocks = std::make_shared<MockSuite>(ms, rt->config.taxonomy);
  if (!o.mock_scripts.empty()) {
    std::ifstream in(o.mock_scripts);
    auto doc = json::parse(in, nullptr, false);
    if (!in || doc.is_discarded() || !doc.is_object()) throw ConfigError("mock_scripts", "cannot read " + o.mock_scripts);
    rt->mocks->load_scripts(doc);
  }
  rt->registry = rt->mocks->registry();
  apply_remote_endpoints(rt->registry, rt->config);
  if (!o.templates_path.empty()) rt->ctx.templates = TemplateSet::load(o.templates_path);
  if (!o.graph_path.empty()) {
    rt->graph = load_graph(o.graph_path);
    rt->ctx.graph = &*rt->graph;
  } else if (uses_graph && rt->config.rag_enabled) {
    std::cerr << "warning: no --graph given, example retrieval is disabled\n";
    rt->config.rag_enabled = false;
  }
  if (!o.lexicon_path.empty()) {
    rt->lexicon = load_lexicon(o.lexicon_path);
    rt->ctx.lexicon = &*rt->lexicon;
  }
  return rt;
}

std::string read_prompt_text(const std::string& text, const std::string& file) {
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ArgumentError("cannot open prompt file " + file);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"t2vshield: prompt rewriting and multi-scope video screening for text-to-video models"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* build = app.add_subcommand("build-graph", "Embed an example pool and build the retrieval graph");
  std::string pool_path, graph_out;
  build->add_option("--pool", pool_path, "Pool file (JSONL)")->required();
  build->add_option("--out", graph_out, "Graph output path")->required();
  add_common(build, common, false, false);

  auto* rewrite = app.add_subcommand("rewrite", "Rewrite one prompt and print the trace");
  std::string prompt_text, prompt_file, prompt_id = "prompt";
  rewrite->add_option("--prompt", prompt_text, "Prompt text");
  rewrite->add_option("--prompt-file", prompt_file, "Read the prompt from a file");
  rewrite->add_option("--id", prompt_id, "Prompt id");
  add_common(rewrite, common, true, false);

  auto* detect_cmd = app.add_subcommand("detect", "Screen a video and print the verdict");
  std::string video_path;
  double fps = 8.0;
  detect_cmd->add_option("--video", video_path, "Frame directory or video file")->required();
  detect_cmd->add_option("--fps", fps, "Frame rate of a frame directory");
  add_common(detect_cmd, common, false, false);

  auto* run = app.add_subcommand("run", "Defend, generate and screen one prompt");
  std::string run_out;
  run->add_option("--prompt", prompt_text, "Prompt text");
  run->add_option("--prompt-file", prompt_file, "Read the prompt from a file");
  run->add_option("--id", prompt_id, "Prompt id");
  run->add_option("--out", run_out, "Directory receiving accepted/<id>/");
  add_common(run, common, true, true);

  auto* bench = app.add_subcommand("bench", "Run a dataset under one defense and write reports");
  std::string dataset_path, bench_out, defense_name = "t2vshield", human_path;
  bench->add_option("--dataset", dataset_path, "Dataset (JSONL of {id, text, category})")->required();
  bench->add_option("--defense", defense_name,
                    "off, keyword, toxicity, segmentation, visual-classify, semantic-detect, judge or t2vshield");
  bench->add_option("--out", bench_out, "Report directory")->required();
  bench->add_option("--human-scores", human_path, "Human evaluation scores (JSONL keyed by id)");
  add_common(bench, common, true, true);

  auto* metrics = app.add_subcommand("metrics", "Compute metrics from verdict, embedding or feature files");
  std::string verdicts_path, features_a, features_b, embeddings_path;
  metrics->add_option("--verdicts", verdicts_path, "JSONL of verdicts or outcomes, for ASR");
  metrics->add_option("--features-a", features_a, "Feature matrix A, for the Frechet distance");
  metrics->add_option("--features-b", features_b, "Feature matrix B");
  metrics->add_option("--embeddings", embeddings_path, "JSON {prompt: [..], frames: [[..], ..]}");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  auto needs_prompt = [&](CLI::App* sub) {
    if (prompt_text.empty() == prompt_file.empty()) {
      std::cerr << "exactly one of --prompt or --prompt-file is required\n\n" << sub->help();
      return false;
    }
    return true;
  };

  try {
    if (*build) {
      auto rt = make_runtime(common);
      auto pool = load_pool(pool_path, rt->registry, rt->config);
      auto graph = build_graph(std::move(pool), rt->config, static_cast<std::size_t>(rt->config.workers));
      save_graph(graph, graph_out);
      std::cout << json{{"nodes", graph.nodes().size()},
                        {"intra_edges", graph.intra_edges().size()},
                        {"inter_edges", graph.inter_edges().size()},
                        {"out", graph_out}}
                       .dump()
                << "\n";
      return kExitOk;
    }
    if (*rewrite) {
      if (!needs_prompt(rewrite)) return kExitUsage;
      auto rt = make_runtime(common, true);
      Prompt prompt(prompt_id, read_prompt_text(prompt_text, prompt_file));
      ExampleRetriever retriever;
      std::vector<std::string> warnings;
      if (rt->config.rag_enabled && rt->ctx.graph) {
        retriever = [&](const Prompt& p) {
          return retrieve_examples(p, *rt->registry.text_embedder, *rt->ctx.graph, rt->config, &warnings);
        };
      }
      auto trace = run_risktrace(prompt, *rt->registry.rewriter, retriever, rt->config, rt->ctx.templates);
      auto j = to_json(trace);
      if (!warnings.empty()) j["warnings"] = warnings;
      std::cout << j.dump(2) << "\n";
      return kExitOk;
    }
    if (*detect_cmd) {
      auto rt = make_runtime(common);
      auto video = load_video(video_path, fps);
      std::cout << to_json(detect_detailed(video, rt->registry, rt->config)).dump(2) << "\n";
      return kExitOk;
    }
    if (*run) {
      if (!needs_prompt(run)) return kExitUsage;
      auto rt = make_runtime(common, true);
      Prompt prompt(prompt_id, read_prompt_text(prompt_text, prompt_file));
      auto outcome = run_defense(prompt, rt->registry, rt->config, rt->ctx);
      std::optional<std::string> ref;
      if (auto* v = outcome.released_video(); v && !run_out.empty()) {
        ref = video_ref(prompt.id());
        save_video_dir(*v, fs::path(run_out) / *ref);
      }
      std::cout << to_json(outcome, ref).dump(2) << "\n";
      return outcome.accepted() ? kExitOk : kExitRejected;
    }
    if (*bench) {
      auto rt = make_runtime(common, true);
      auto mode = defense_from_string(defense_name);
      auto dataset = load_dataset(dataset_path);
      std::map<std::string, json> human;
      if (!human_path.empty()) human = load_human_scores(human_path);
      auto result = run_benchmark(dataset, rt->registry, rt->config, mode, rt->ctx, human);
      write_benchmark(result, bench_out);
      std::cout << to_json(result.report.aggregates).dump(2) << "\n";
      return kExitOk;
    }
    if (*metrics) {
      json out = json::object();
      if (!verdicts_path.empty()) {
        std::ifstream in(verdicts_path);
        if (!in) throw ArgumentError("cannot open " + verdicts_path);
        std::vector<SafetyVerdict> verdicts;
        std::string line;
        while (std::getline(in, line)) {
          if (trim(line).empty()) continue;
          auto j = json::parse(line, nullptr, false);
          if (j.is_discarded() || !j.is_object()) throw ValidationError("verdict line is not a JSON object");
          verdicts.push_back(verdict_from_json(j.contains("verdict") ? j["verdict"] : j));
        }
        out["asr"] = asr(verdicts);
        out["verdicts"] = verdicts.size();
      }
      if (!features_a.empty() || !features_b.empty()) {
        if (features_a.empty() || features_b.empty()) throw ArgumentError("--features-a and --features-b go together");
        out["frechet_distance"] = frechet_distance(load_feature_matrix(features_a), load_feature_matrix(features_b));
      }
      if (!embeddings_path.empty()) {
        std::ifstream in(embeddings_path);
        auto j = json::parse(in, nullptr, false);
        if (!in || j.is_discarded() || !j.is_object()) throw ValidationError("cannot parse " + embeddings_path);
        std::vector<EmbeddingVector> frames;
        for (const auto& f : j.at("frames")) frames.emplace_back(f.get<std::vector<double>>());
        if (j.contains("prompt")) {
          out["similarity"] = prompt_video_similarity(EmbeddingVector(j["prompt"].get<std::vector<double>>()), frames);
        }
        if (frames.size() >= 2) out["temporal_consistency"] = temporal_consistency(frames);
      }
      if (out.empty()) {
        std::cerr << "metrics: nothing to compute\n\n" << metrics->help();
        return kExitUsage;
      }
      std::cout << out.dump(2) << "\n";
      return kExitOk;
    }
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
