#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "probeforge/errors.hpp"
#include "probeforge/eval.hpp"
#include "test_helpers.hpp"

namespace pf = probeforge;

namespace {

pf::RankedPrediction pred(std::string id, std::vector<std::string> cands) {
  pf::RankedPrediction p{std::move(id), {}, "contrastive"};
  double s = 0.0;
  for (auto& c : cands) p.candidates.emplace_back(std::move(c), s -= 1.0);
  return p;
}

pf::ProbeQuery q(std::string id, std::string rel, std::vector<std::string> answers) {
  return {std::move(id), std::move(rel), "h", "h [MASK] .", std::move(answers), false};
}

const std::vector<std::size_t> kKs{1, 10};

}  // namespace

TEST(HitAtK, NormalizedExactMatch) {
  const auto p = pred("a", {"Zinc", "  Magnesium   Deficiency.", "iron"});
  const std::vector<std::string> gold{"magnesium deficiency"};
  EXPECT_EQ(pf::hit_at_k(p, gold, 1), 0);
  EXPECT_EQ(pf::hit_at_k(p, gold, 2), 1);
  const std::vector<std::string> partial{"magnesium"};
  EXPECT_EQ(pf::hit_at_k(p, partial, 10), 0);
  EXPECT_EQ(pf::hit_at_k(pred("b", {}), gold, 10), 0);
}

TEST(HitAtK, MonotoneInK) {
  std::mt19937 rng(13);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f", "g", "h"};
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::string> cands, gold;
    for (int i = 0; i < 6; ++i) cands.push_back(words[rng() % words.size()]);
    gold.push_back(words[rng() % words.size()]);
    const auto p = pred("x", cands);
    for (std::size_t k = 1; k < 8; ++k) EXPECT_LE(pf::hit_at_k(p, gold, k), pf::hit_at_k(p, gold, k + 1));
  }
}

TEST(Aggregate, UnbalancedTwoRelationExample) {
  std::vector<pf::QueryHits> hits{{"r1/0", "r1", {1, 1}}, {"r1/1", "r1", {1, 1}},
                                  {"r1/2", "r1", {1, 1}}, {"r2/0", "r2", {0, 0}}};
  const auto report = pf::aggregate(hits, kKs);
  EXPECT_NEAR(report.macro[0], 0.5, 1e-12);
  EXPECT_NEAR(report.micro[0], 0.75, 1e-12);
  ASSERT_NE(report.relation("r1"), nullptr);
  EXPECT_EQ(report.relation("r1")->count, 3u);
  EXPECT_DOUBLE_EQ(*report.relation("r2")->acc[1], 0.0);
}

TEST(Aggregate, ExpectedRelationWithoutQueriesIsExcluded) {
  std::vector<pf::QueryHits> hits{{"r1/0", "r1", {1, 0}}, {"r1/1", "r1", {0, 1}}};
  const std::vector<std::string> expected{"r1", "r9"};
  const auto report = pf::aggregate(hits, kKs, expected);
  EXPECT_EQ(report.metadata.excluded_relations, (std::vector<std::string>{"r9"}));
  EXPECT_NEAR(report.macro[0], 0.5, 1e-12);
  const auto j = pf::report_json(report);
  EXPECT_NE(j.find("\"excluded_relations\""), std::string::npos);
  EXPECT_NE(j.find("\"population\""), std::string::npos);
}

TEST(ScorePredictions, MissingAndDuplicateAreValidationErrors) {
  std::vector<pf::ProbeQuery> qs{q("r/0", "r", {"x"}), q("r/1", "r", {"y"})};
  std::vector<pf::RankedPrediction> only_first{pred("r/0", {"x"})};
  try {
    pf::score_predictions(only_first, qs, kKs);
    FAIL();
  } catch (const pf::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("r/1"), std::string::npos);
  }
  std::vector<pf::RankedPrediction> dup{pred("r/0", {"x"}), pred("r/0", {"x"}), pred("r/1", {})};
  EXPECT_THROW(pf::score_predictions(dup, qs, kKs), pf::ValidationError);
  std::vector<pf::RankedPrediction> extra{pred("r/0", {"x"}), pred("r/1", {"z", "y"}), pred("other", {})};
  const auto hits = pf::score_predictions(extra, qs, kKs);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[1].hits, (std::vector<int>{0, 1}));
}

TEST(Report, CsvColumnsFollowKs) {
  std::vector<pf::QueryHits> hits{{"r1/0", "r1", {1, 1}}, {"r2/0", "r2", {0, 1}}};
  std::ostringstream out;
  pf::write_report_csv(pf::aggregate(hits, kKs), out);
  EXPECT_EQ(out.str(), "relation_id,count,acc1,acc10\nr1,1,1.000000,1.000000\nr2,1,0.000000,1.000000\n");
}

TEST(LengthBins, KeyedByShortestAnswer) {
  std::vector<pf::ProbeQuery> qs{q("a", "r", {"abcd", "ab"}), q("b", "r", {"abcdefgh"}),
                                 q("c", "r", {"abcdefghijklmnop"}), q("d", "r", {"abcdef"})};
  const std::vector<int> hits{1, 0, 1, 1};
  const std::vector<std::size_t> edges{5, 10};
  const auto bins = pf::bin_by_answer_length(qs, hits, edges);
  ASSERT_EQ(bins.size(), 3u);
  EXPECT_EQ(bins[0].count, 1u);
  EXPECT_EQ(bins[1].count, 2u);
  EXPECT_DOUBLE_EQ(*bins[1].acc, 0.5);
  EXPECT_FALSE(bins[2].upper.has_value());
  EXPECT_EQ(bins[2].count, 1u);
  const std::vector<std::size_t> bad{5, 5};
  EXPECT_THROW(pf::bin_by_answer_length(qs, hits, bad), pf::PreconditionError);

  std::ostringstream out;
  pf::write_length_bins_csv(pf::bin_by_answer_length(qs, hits, std::vector<std::size_t>{1, 2}), out);
  EXPECT_NE(out.str().find("1,2,0,null"), std::string::npos) << out.str();
}

TEST(Stability, PopulationStdAndStepCurves) {
  auto make = [](int hits_r1) {
    std::vector<pf::QueryHits> h;
    for (int i = 0; i < 5; ++i) h.push_back({"r1/" + std::to_string(i), "r1", {i < hits_r1, 1}});
    h.push_back({"r2/0", "r2", {0, 0}});
    return pf::aggregate(h, kKs);
  };
  const std::vector<pf::EvalReport> reports{make(1), make(3)};
  const auto s = pf::stability_summary(reports);
  EXPECT_NEAR(s.per_relation.at("r1")[0].mean, 0.4, 1e-12);
  EXPECT_NEAR(s.per_relation.at("r1")[0].std, 0.2, 1e-12);
  EXPECT_NEAR(s.macro[0].mean, 0.2, 1e-12);
  EXPECT_NEAR(s.macro[0].std, 0.1, 1e-12);
  EXPECT_THROW(pf::stability_summary(std::vector<pf::EvalReport>{make(1)}), pf::ValidationError);

  std::map<std::int64_t, std::vector<pf::EvalReport>> by_step{{50, reports}, {100, {make(5), make(5)}}};
  const auto rows = pf::step_curves(by_step);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[2].relation_id, "__macro__");
  EXPECT_EQ(rows[5].step, 100);
  EXPECT_NEAR(rows[5].acc1_mean, 0.5, 1e-12);
  EXPECT_NEAR(rows[5].acc1_std, 0.0, 1e-12);
}

TEST(Annotations, CsvWithHeaderAndQuotes) {
  std::istringstream in("query_id,candidate,score\nq1,\"zinc, chelated\",5\nq1,iron,2\n\n");
  const auto a = pf::read_annotations(in);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].candidate, "zinc, chelated");
  EXPECT_EQ(a[1].score, 2);
  std::istringstream bad("q1,iron,7\n");
  EXPECT_THROW(pf::read_annotations(bad), pf::ValidationError);
  std::istringstream short_row("q1,iron\n");
  EXPECT_THROW(pf::read_annotations(short_row), pf::ValidationError);
}

TEST(ExpertRescore, ConfusionMatchesStudyCounts) {
  const auto study = testing_support::build_expert_study();
  const auto r = pf::expert_rescore(study.predictions, study.annotations, study.queries);
  const testing_support::ExpertCounts counts;
  for (int score = 5; score >= 1; --score)
    for (bool hit : {true, false}) {
      const auto row = static_cast<std::size_t>(5 - score);
      const std::size_t col = hit ? 0 : 1;
      EXPECT_EQ(r.confusion.cell(0, score, hit), counts.top1[row][col]) << score << hit;
      EXPECT_EQ(r.confusion.cell(1, score, hit), counts.top10[row][col]) << score << hit;
    }
  EXPECT_EQ(r.confusion.row_sum(5), 38u);
  EXPECT_EQ(r.confusion.row_sum(4), 14u);
  EXPECT_EQ(r.confusion.row_sum(3), 59u);
  EXPECT_EQ(r.confusion.row_sum(2), 54u);
  EXPECT_EQ(r.confusion.row_sum(1), 0u);
  EXPECT_EQ(r.confusion.block_total(0), 15u);
  EXPECT_EQ(r.confusion.block_total(1), 150u);

  EXPECT_EQ(r.gold_candidate[1].hits, 16u);
  EXPECT_EQ(r.gold_candidate[1].total, 150u);
  // Score-5 candidates inside the top-10 block: 13 gold + 20 non-gold.
  EXPECT_EQ(r.annotated_candidate[1].hits, 33u);
  EXPECT_EQ(r.annotated_candidate[1].total, 150u);
  EXPECT_EQ(r.gold_candidate[0].hits, 5u);
  EXPECT_EQ(r.annotated_candidate[0].hits, 5u);
  EXPECT_EQ(r.gold_query[0].total, 15u);

  std::ostringstream csv;
  pf::write_confusion_csv(r.confusion, csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "score,top1_yes,top1_no,top10_yes,top10_no,sum");
  EXPECT_NE(csv.str().find("\n5,4,1,13,20,38\n"), std::string::npos) << csv.str();
}

TEST(ExpertRescore, QueryLevelMatchesAggregateMicro) {
  const auto study = testing_support::build_expert_study();
  const auto r = pf::expert_rescore(study.predictions, study.annotations, study.queries);
  const auto report = pf::aggregate(pf::score_predictions(study.predictions, study.queries, kKs), kKs);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(r.gold_query[i].value(), report.micro[i], 1e-12);
}

TEST(ExpertRescore, ListsEveryUnannotatedCandidate) {
  auto study = testing_support::build_expert_study();
  study.annotations.erase(study.annotations.begin() + 3);
  study.annotations.push_back(study.annotations.front());
  try {
    pf::expert_rescore(study.predictions, study.annotations, study.queries);
    FAIL();
  } catch (const pf::ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("candidate 0-3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("candidate 0-0"), std::string::npos) << msg;
  }
}

TEST(Csv, SplitHandlesQuotes) {
  EXPECT_EQ(pf::split_csv_line("a,\"b,c\",\"d\"\"e\","), (std::vector<std::string>{"a", "b,c", "d\"e", ""}));
  EXPECT_EQ(pf::format_metric(0.1), "0.100000");
}
