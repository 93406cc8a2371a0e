#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/config.hpp"
#include "turnwise/errors.hpp"

using namespace turnwise;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_of(const json& doc) {
  try {
    parse_config(doc, "/base");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MinimalDocumentGetsDefaults) {
  const RunConfig c = parse_config(json{{"manifest", "bench.json"}}, "/base");
  EXPECT_EQ(c.manifest, fs::path("/base/bench.json"));
  EXPECT_EQ(c.fps, 0.5);
  EXPECT_EQ(c.delta_far, 5);
  EXPECT_EQ(c.p_early, 0.1);
  EXPECT_EQ(c.tokens_per_frame, 768);
  EXPECT_EQ(c.backend.tokens_per_frame, 768);
  EXPECT_EQ(c.backend.kind, BackendConfig::Kind::Scripted);
  EXPECT_EQ(c.judge.kind, JudgeSettings::Kind::ReferenceMatch);
  EXPECT_EQ(c.judge.config.far_scale, FarScale::Doubled);
  EXPECT_EQ(c.cache_dir, fs::path("/base/cache"));
  EXPECT_EQ(c.report_format, ReportFormat::Json);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(error_of({{"manifest", "m"}, {"fps", 0}}).find("fps must be positive"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"ffps", 1}}).find("ffps"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"tokens_per_frame", 512}}).find("tokens_per_frame"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"p_early", 2}}).find("p_early"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"judge", {{"kind", "http"}, {"modle", "x"}}}}).find("judge.modle"),
            std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"judge", {{"kind", "http"}}}}).find("judge"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"fps", "fast"}}).find("fps"), std::string::npos);
  EXPECT_NE(error_of({{"manifest", "m"}, {"report_format", "xml"}}), "");
}

TEST(Config, ApiKeyInterpolation) {
  ::setenv("TURNWISE_TEST_KEY", "sk-from-env", 1);
  ::unsetenv("TURNWISE_TEST_MISSING");
  const json base = {{"manifest", "m"},
                     {"judge", {{"kind", "http"}, {"url", "http://j"}, {"model", "judge"}, {"api_key", "${TURNWISE_TEST_KEY}"}}}};
  const RunConfig c = parse_config(base, "/base");
  EXPECT_EQ(c.judge.config.endpoint.api_key, "sk-from-env");
  EXPECT_EQ(to_json(c).dump().find("sk-from-env"), std::string::npos);

  json missing = base;
  missing["judge"]["api_key"] = "${TURNWISE_TEST_MISSING}";
  EXPECT_NE(error_of(missing).find("TURNWISE_TEST_MISSING"), std::string::npos);

  // Other fields are taken literally.
  json literal = base;
  literal["model_name"] = "${TURNWISE_TEST_KEY}";
  EXPECT_EQ(parse_config(literal, "/base").model_name, "${TURNWISE_TEST_KEY}");
}

TEST(Config, LoadResolvesAgainstConfigDirectory) {
  testsupport::TempDir dir;
  fs::create_directories(dir.path / "cfg");
  std::ofstream(dir.path / "cfg" / "program.json") << R"({"default": "hi"})";
  std::ofstream(dir.path / "cfg" / "run.json")
      << R"({"manifest": "../bench.json", "output_dir": "/abs/out", "backend": {"program": "program.json"}})";
  const RunConfig c = load_config(dir.path / "cfg" / "run.json");
  EXPECT_EQ(fs::weakly_canonical(c.manifest), fs::weakly_canonical(dir.path / "bench.json"));
  EXPECT_EQ(c.output_dir, fs::path("/abs/out"));
  EXPECT_EQ(c.backend.program.at("default"), "hi");
  EXPECT_THROW(load_config(dir.path / "missing.json"), ConfigError);
  std::ofstream(dir.path / "broken.json") << "{not json";
  EXPECT_THROW(load_config(dir.path / "broken.json"), ConfigError);
}

TEST(Config, SynthSection) {
  const RunConfig c = parse_config(
      json{{"synth",
            {{"videos", "v.json"},
             {"iterations", 3},
             {"max_records", 10},
             {"generator", {{"kind", "http"}, {"endpoints", {{{"url", "http://g"}, {"model", "g0"}}}}}}}}},
      "/base");
  EXPECT_EQ(c.synth.videos, fs::path("/base/v.json"));
  EXPECT_EQ(c.synth.iterations, 3);
  EXPECT_EQ(c.synth.max_records, std::optional<std::size_t>(10));
  ASSERT_EQ(c.synth.generator.endpoints.size(), 1u);
  EXPECT_EQ(c.synth.generator.endpoints[0].model, "g0");
  EXPECT_NE(error_of({{"synth", {{"iterations", 0}}}}).find("iterations"), std::string::npos);
}
