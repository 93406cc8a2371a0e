#include <gtest/gtest.h>

#include "support.hpp"
#include "turnwise/errors.hpp"
#include "turnwise/report.hpp"

using namespace turnwise;

TEST(Aggregate, MeansOverPresentSubtasks) {
  const std::vector<LabeledScore> scores = {
      {"OCR", 1.0}, {"OCR", 0.5}, {"ACR", 0.0}, {"EPM", 0.25}, {"CRR", 0.1}, {"CRR", 0.3},
  };
  TokenStats tokens;
  tokens.completion_tokens = 40;
  tokens.turns = 20;
  const BenchmarkReport r = aggregate(scores, tokens, "m");
  EXPECT_DOUBLE_EQ(r.subtask_mean.at(Subtask::OCR), 75.0);
  EXPECT_DOUBLE_EQ(r.subtask_mean.at(Subtask::ACR), 0.0);
  EXPECT_DOUBLE_EQ(r.subtask_mean.at(Subtask::EPM), 25.0);
  EXPECT_DOUBLE_EQ(r.subtask_mean.at(Subtask::CRR), 20.0);
  EXPECT_EQ(r.subtask_count.at(Subtask::OCR), 2u);
  EXPECT_FALSE(r.subtask_mean.contains(Subtask::REC));
  EXPECT_DOUBLE_EQ(r.mode_mean.at(TaskMode::RealTimePerception), 37.5);
  EXPECT_DOUBLE_EQ(r.mode_mean.at(TaskMode::BackwardTracing), 25.0);
  EXPECT_DOUBLE_EQ(r.mode_mean.at(TaskMode::ForwardActive), 20.0);
  EXPECT_DOUBLE_EQ(r.overall, (75.0 + 0.0 + 25.0 + 20.0) / 4.0);
  EXPECT_DOUBLE_EQ(r.avg_tokens_per_turn, 2.0);
  ASSERT_TRUE(r.eta);
  EXPECT_DOUBLE_EQ(*r.eta, r.overall / 2.0);
}

TEST(Aggregate, RejectsUnknownLabelsAndEmptyInput) {
  EXPECT_THROW(aggregate({}, {}), InvalidInput);
  EXPECT_THROW(aggregate({{"XYZ", 1.0}}, {}), InvalidInput);
}

TEST(Aggregate, NoTokensMeansNoEta) {
  const BenchmarkReport r = aggregate({{"OCR", 1.0}}, {});
  EXPECT_FALSE(r.eta);
  EXPECT_TRUE(to_json(r).at("per_token_score").is_null());
}

TEST(TokenStats, AveragesOverAllTurns) {
  TokenStats t;
  t.add(testsupport::make_traj("ab.."));  // 1 token per response, 0 for silent
  EXPECT_DOUBLE_EQ(t.avg_per_turn(), 0.5);
}

TEST(FormatTable, ColumnLayout) {
  BenchmarkReport r = aggregate({{"OCR", 0.5}, {"HLD", 1.0}, {"SSR", 0.25}}, {}, "tiny");
  const std::string table = format_table({r});
  std::istringstream in(table);
  std::string header, rule, row;
  std::getline(in, header);
  std::getline(in, rule);
  std::getline(in, row);
  EXPECT_EQ(header,
            "Model |   OCR   ACR   ATR   STU   FPD   OJR  Avg. |   EPM   ASI   HLD  Avg. |   REC   SSR   CRR  Avg. |   All");
  EXPECT_EQ(row,
            "tiny  |  50.0     -     -     -     -     -  50.0 |     -     - 100.0 100.0 |     -  25.0     -  25.0 |  58.3");
  EXPECT_EQ(header.size(), rule.size());
  EXPECT_EQ(header.size(), row.size());
}

TEST(ReportJson, SampleDecomposition) {
  SampleScore s;
  s.quality = 0.5;
  s.rate = AnswerRate{1, 4};
  s.multiplier = 1.0;
  s.final_score = 0.5;
  s.matches.push_back({3, std::nullopt, 0.0});
  const auto j = to_json(s);
  EXPECT_EQ(j.at("r_ans"), 0.25);
  EXPECT_TRUE(j.at("matches")[0].at("matched_turn").is_null());
  EXPECT_EQ(j.at("final"), 0.5);
}
