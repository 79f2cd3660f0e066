#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "support.hpp"

using namespace t2vshield;
using namespace t2vshield::testing;

TEST(Prompt, RejectsBlankText) {
  EXPECT_THROW(Prompt("p", "   \t\n"), ValidationError);
  EXPECT_THROW(Prompt("p", ""), ValidationError);
  Prompt p("p1", "a cat", std::string("gore"), Origin::Benchmark);
  EXPECT_EQ(p.text(), "a cat");
  EXPECT_EQ(p.category(), "gore");
}

TEST(Prompt, RewrittenKeepsIdentity) {
  Prompt p("p1", "orig", std::string("gore"), Origin::Benchmark);
  auto r = p.rewritten("new");
  EXPECT_EQ(r.id(), "p1");
  EXPECT_EQ(r.category(), "gore");
  EXPECT_EQ(r.origin(), Origin::Rewritten);
  EXPECT_EQ(r.text(), "new");
}

TEST(RiskTaxonomy, DefaultHasFourteenUniqueCategories) {
  RiskTaxonomy t;
  EXPECT_EQ(t.names().size(), 14u);
  EXPECT_FALSE(t.contains("safe"));
  EXPECT_THROW(RiskTaxonomy({"a", "a"}), ValidationError);
  EXPECT_THROW(RiskTaxonomy({"safe"}), ValidationError);
  EXPECT_THROW(RiskTaxonomy(std::vector<std::string>{}), ValidationError);
}

TEST(EmbeddingVector, RejectsNonFiniteAndEmpty) {
  EXPECT_THROW(EmbeddingVector(std::vector<double>{}), EmbeddingError);
  EXPECT_THROW(vec({1.0, std::nan("")}), NumericError);
  EXPECT_THROW(vec({std::numeric_limits<double>::infinity()}), NumericError);
  EXPECT_TRUE(vec({0.0, 0.0}).is_zero());
}

TEST(Cosine, ZeroVectorIsNeutral) {
  EXPECT_EQ(cosine(vec({0, 0}), vec({1, 2})), 0.0);
  EXPECT_EQ(cosine(vec({0, 0}), vec({0, 0})), 0.0);
}

TEST(Cosine, DimMismatchThrows) { EXPECT_THROW(cosine(vec({1, 0}), vec({1, 0, 0})), NumericError); }

TEST(Cosine, ScaleInvariantProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_vec(rng, 7), b = random_vec(rng, 7);
    double s = scale(rng);
    std::vector<double> as(a.values());
    for (auto& x : as) x *= s;
    EXPECT_NEAR(cosine(EmbeddingVector(as), b), cosine(a, b), 1e-12);
    EXPECT_NEAR(cosine(a, b), cosine(b, a), 1e-15);
  }
}

TEST(SafetyLabel, FusionIsMax) {
  for (auto x : {SafetyLabel::Safe, SafetyLabel::PotentialUnsafe, SafetyLabel::Unsafe}) {
    EXPECT_EQ(fuse(SafetyLabel::Safe, x), x);
    EXPECT_EQ(fuse(x, SafetyLabel::Unsafe), SafetyLabel::Unsafe);
    EXPECT_EQ(label_from_string(to_string(x)), x);
  }
  EXPECT_FALSE(is_malicious(SafetyLabel::Safe));
  EXPECT_TRUE(is_malicious(SafetyLabel::PotentialUnsafe));
  EXPECT_TRUE(is_malicious(SafetyLabel::Unsafe));
}

TEST(SafetyVerdict, NonSafeNeedsEvidence) {
  EXPECT_THROW(SafetyVerdict(SafetyLabel::Unsafe, Stage::Judge), ValidationError);
  EXPECT_THROW(SafetyVerdict(SafetyLabel::Safe, Stage::Judge, {{"x", 1.5, ""}}), ValidationError);
  SafetyVerdict v(SafetyLabel::PotentialUnsafe, Stage::OutputDetect, {{"semantic", 0.8, "vague"}});
  EXPECT_EQ(verdict_from_json(to_json(v)), v);
}

TEST(Config, EmptyFileGivesDefaults) {
  auto c = parse_config("");
  EXPECT_EQ(c.alpha, 0.7);
  EXPECT_EQ(c.lambda, 0.2);
  EXPECT_EQ(c.tau_pos, 0.7);
  EXPECT_EQ(c.tau_neg, 0.3);
  EXPECT_EQ(c.tau_H, 0.5);
  EXPECT_EQ(c.judge_threshold, 0.6);
  EXPECT_EQ(c.semantic_risk_threshold, 0.7);
  EXPECT_EQ(c.ambiguity_threshold, 0.7);
  EXPECT_EQ(c.frame_sample_n, 10);
  EXPECT_EQ(c.k_neg, 3);
  EXPECT_EQ(c.stride_fraction, 0.5);
  std::vector<WindowScale> scales{std::nullopt, 15, 5};
  EXPECT_EQ(c.scales, scales);
  EXPECT_EQ(c, PipelineConfig{});
}

TEST(Config, ReadsJudgeThreshold) {
  EXPECT_EQ(parse_config("judge_threshold = 0.6\n").judge_threshold, 0.6);
  EXPECT_EQ(parse_config("judge_threshold = 0.25  # lower\n").judge_threshold, 0.25);
}

TEST(Config, OutOfRangeIsValidationError) {
  EXPECT_THROW(parse_config("alpha = 1.5"), ValidationError);
  EXPECT_THROW(parse_config("tau_H = -0.1"), ValidationError);
  EXPECT_THROW(parse_config("scales = [5, 15]"), ValidationError);
  EXPECT_THROW(parse_config("scales = [15, \"full\"]"), ValidationError);
  EXPECT_THROW(parse_config("stride_fraction = 0"), ValidationError);
  EXPECT_THROW(parse_config("k_neg = 0"), ValidationError);
}

TEST(Config, ParseErrorsNameTheKey) {
  try {
    parse_config("tau_pos = 0.7\nbogus_key = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "bogus_key");
  }
  try {
    parse_config("lambda = [1, \n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "lambda");
  }
  try {
    parse_config("alpha = 0.5\nalpha = 0.6\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "alpha");
  }
  try {
    parse_config("k_neg = 2.5");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "k_neg");
  }
}

TEST(Config, LoadFromFile) {
  TempDir dir;
  std::ofstream(dir / "c.toml") << "alpha = 0.5\nscales = [\"full\", 20, 10, 4]\n";
  auto c = load_config(dir / "c.toml");
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.scales.size(), 4u);
  EXPECT_THROW(load_config(dir / "missing.toml"), ConfigError);
}

TEST(Config, RoundTripProperty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> open(0.001, 0.999);
  std::uniform_int_distribution<int> small(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    PipelineConfig c;
    c.tau_H = unit(rng);
    c.tau_pos = unit(rng);
    c.tau_neg = unit(rng);
    c.alpha = open(rng);
    c.lambda = unit(rng) * 3;
    c.k_neg = small(rng);
    c.semantic_risk_threshold = unit(rng);
    c.ambiguity_threshold = unit(rng);
    c.judge_threshold = unit(rng);
    c.frame_sample_n = small(rng);
    c.stride_fraction = open(rng);
    c.scales = {std::nullopt, static_cast<std::size_t>(10 + small(rng)), static_cast<std::size_t>(small(rng))};
    if (trial % 3 == 0) c.scales.erase(c.scales.begin());
    c.rag_enabled = trial % 2 == 0;
    c.asr_mode = trial % 2 ? AsrMode::Judge : AsrMode::Multiscope;
    c.taxonomy = {"gore", "weird \"quoted\" name", "x"};
    c.segmentation_separator = trial % 2 ? "*" : ".";
    EXPECT_EQ(parse_config(serialize_config(c)), c) << serialize_config(c);
  }
}

TEST(Digest, KnownSha256AndBase64) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  std::vector<std::uint8_t> bytes{'h', 'e', 'l', 'l', 'o'};
  EXPECT_EQ(base64_encode(bytes), "aGVsbG8=");
  EXPECT_EQ(base64_decode("aGVsbG8="), bytes);
  EXPECT_TRUE(base64_decode("").empty());
  EXPECT_THROW(base64_decode("abc"), ValidationError);
}

TEST(Digest, Base64RoundTripProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> byte(0, 255), len(0, 70);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::uint8_t> b(len(rng));
    for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
}

TEST(Media, PpmRoundTripAndVideoDir) {
  auto img = make_solid_ppm(Rgb{1, 2, 3}, 3, 2);
  auto ppm = decode_ppm(img);
  ASSERT_TRUE(ppm);
  EXPECT_EQ(ppm->width, 3);
  EXPECT_EQ(ppm->pixels.size(), 6u);
  EXPECT_FALSE(decode_ppm(Image{{'x', 'y'}}));

  TempDir dir;
  auto v = numbered_video(12, 4.0);
  save_video_dir(v, dir / "v");
  auto back = load_video(dir / "v", 4.0);
  EXPECT_EQ(back.frames(), v.frames());
  EXPECT_THROW(v.frame(0), ArgumentError);
  EXPECT_THROW(v.frame(13), ArgumentError);
  EXPECT_THROW(VideoArtifact("x", 8.0, {}), ArgumentError);
}

TEST(Media, FrameDirOrdersNumerically) {
  TempDir dir;
  for (int i : {10, 2, 1}) {
    write_file_bytes(dir / ("f" + std::to_string(i) + ".ppm"), make_solid_ppm(Rgb{static_cast<std::uint8_t>(i), 0, 0}).bytes);
  }
  auto v = load_video_dir(dir.path(), 8.0);
  ASSERT_EQ(v.frame_count(), 3u);
  EXPECT_EQ(decode_ppm(v.frame(1))->pixels[0].r, 1);
  EXPECT_EQ(decode_ppm(v.frame(3))->pixels[0].r, 10);
}
