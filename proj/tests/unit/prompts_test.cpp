#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/judge.hpp"
#include "turnwise/prompts.hpp"

using namespace turnwise;
namespace fs = std::filesystem;

namespace {

const fs::path kTests = TURNWISE_TESTS_DIR;
const fs::path kSource = TURNWISE_SOURCE_DIR;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << p;
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

constexpr JudgeTemplate kJudgeTemplates[] = {JudgeTemplate::C1Accuracy,    JudgeTemplate::C2Repetition,
                                             JudgeTemplate::C3CrrIntention, JudgeTemplate::C4SsrRecIntention,
                                             JudgeTemplate::C5FarCrr,       JudgeTemplate::C6FarSsr,
                                             JudgeTemplate::C7FarRec};

}  // namespace

TEST(RenderTemplate, SubstitutesSlotsAndKeepsOtherBraces) {
  EXPECT_EQ(render_template("a {x} b {y_1}", {{"x", "1"}, {"y_1", "2"}}), "a 1 b 2");
  EXPECT_EQ(render_template(R"({ "correct": true } {Upper} { x } {})", {}), R"({ "correct": true } {Upper} { x } {})");
  EXPECT_EQ(render_template("{x}", {{"x", "{y}"}}), "{y}");  // values are not re-scanned
  EXPECT_EQ(render_template("{x}", {{"x", "a"}, {"unused", "b"}}), "a");
}

TEST(RenderTemplate, MissingSlotNamesIt) {
  try {
    render_template("Q: {question}", {});
    FAIL();
  } catch (const TemplateError& e) {
    EXPECT_NE(std::string(e.what()).find("question"), std::string::npos);
  }
}

TEST(RenderTemplate, SlotNames) {
  EXPECT_EQ(template_slots("{a} {b_2} {a} {Bad} {9x}"), (std::set<std::string>{"a", "b_2"}));
}

// Property: rendering with every slot bound to its own name in angle
// brackets leaves no slot behind and keeps the literal text in order.
TEST(RenderTemplate, EveryBuiltinTemplateRendersProperty) {
  const auto& lib = PromptLibrary::builtin();
  for (const auto& [name, text] : lib.all()) {
    Slots slots;
    for (const auto& s : template_slots(text)) slots[s] = "<" + s + ">";
    const std::string out = lib.render(name, slots);
    EXPECT_TRUE(template_slots(out).empty()) << name;
  }
}

TEST(PromptLibrary, EmbeddedCopiesMatchDataFiles) {
  const auto& lib = PromptLibrary::builtin();
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(kSource / "data" / "prompts")) {
    if (entry.path().extension() != ".txt") continue;
    ++files;
    const std::string name = entry.path().stem().string();
    ASSERT_TRUE(lib.contains(name)) << name;
    EXPECT_EQ(lib.raw(name), read_file(entry.path())) << name;
  }
  EXPECT_EQ(files, lib.all().size());
}

TEST(PromptLibrary, FromDirectoryOverrides) {
  testsupport::TempDir dir;
  std::ofstream(dir.path / "c1_accuracy.txt") << "custom {model_answer}";
  const auto lib = PromptLibrary::from_directory(dir.path);
  EXPECT_EQ(lib.render(JudgeTemplate::C1Accuracy, {{"model_answer", "x"}}), "custom x");
  EXPECT_THROW(lib.raw("c2_repetition"), TemplateError);
}

TEST(PromptLibrary, Sections) {
  const auto sec = PromptLibrary::builtin().sections("category_ta");
  for (const char* key : {"skill", "question_instruction", "annotation_target", "response_rule"}) {
    ASSERT_TRUE(sec.contains(key)) << key;
    EXPECT_FALSE(sec.at(key).empty()) << key;
  }
}

TEST(JudgeTemplateGolden, TemplatesByteMatch) {
  for (JudgeTemplate id : kJudgeTemplates) {
    const std::string name(template_name(id));
    EXPECT_EQ(PromptLibrary::builtin().raw(name), read_file(kTests / "golden" / "prompts" / (name + ".txt"))) << name;
  }
}

// Slots built from fixture timelines render to the checked-in prompts.
TEST(JudgeTemplateGolden, RenderedPromptsByteMatch) {
  using testsupport::make_timeline;
  const auto& lib = PromptLibrary::builtin();
  auto golden = [&](JudgeTemplate id) {
    return read_file(kTests / "golden" / "rendered" / (std::string(template_name(id)) + ".txt"));
  };

  auto ocr = make_timeline(Subtask::OCR, 4, {3});
  ocr.queries = {{3, "What does the sign say?"}};
  ocr.ground_truth.references[3].answer = "Exit";
  ocr.ground_truth.options = {"Exit", "Enter", "Stop"};
  EXPECT_EQ(lib.render(JudgeTemplate::C1Accuracy, accuracy_slots(ocr, 3, Action::respond("It says Exit.", 3), 3)),
            golden(JudgeTemplate::C1Accuracy));

  auto epm = make_timeline(Subtask::EPM, 6, {5});
  epm.queries = {{2, "Where are the keys?"}};
  epm.ground_truth.references[5].answer = "on the shelf";
  Trajectory tr;
  tr.sample_id = "s";
  tr.turns = {Action::silent(), Action::silent(), Action::respond("On the table.", 3), Action::silent(),
              Action::respond("On the shelf.", 3), Action::respond("On the shelf.", 3)};
  EXPECT_EQ(lib.render(JudgeTemplate::C2Repetition, repetition_slots(epm, tr)), golden(JudgeTemplate::C2Repetition));

  auto crr = make_timeline(Subtask::CRR, 10, {7});
  crr.queries = {{1, "Tell me when the lock is opened."}};
  crr.ground_truth.references[7].answer = "the key is turned";
  const Action opened = Action::respond("The lock just opened.", 4);
  EXPECT_EQ(lib.render(intention_template(Subtask::CRR), intention_slots(crr, opened, 6)),
            golden(JudgeTemplate::C3CrrIntention));
  EXPECT_EQ(lib.render(consistency_template(Subtask::CRR), consistency_slots(crr, 7, opened, 6)),
            golden(JudgeTemplate::C5FarCrr));

  auto ssr = make_timeline(Subtask::SSR, 10, {4});
  ssr.ground_truth.references[4].expected_stage = "whisking";
  const Action whisk = Action::respond("They are whisking the eggs.", 5);
  EXPECT_EQ(lib.render(intention_template(Subtask::SSR), intention_slots(ssr, whisk, 4)),
            golden(JudgeTemplate::C4SsrRecIntention));
  EXPECT_EQ(lib.render(consistency_template(Subtask::SSR), consistency_slots(ssr, 4, whisk, 4)),
            golden(JudgeTemplate::C6FarSsr));

  auto rec = make_timeline(Subtask::REC, 10, {8});
  rec.ground_truth.activity = "squats";
  rec.ground_truth.references[8].expected_count = 5;
  EXPECT_EQ(lib.render(consistency_template(Subtask::REC),
                       consistency_slots(rec, 8, Action::respond("That's 5 squats.", 3), 8)),
            golden(JudgeTemplate::C7FarRec));
}
