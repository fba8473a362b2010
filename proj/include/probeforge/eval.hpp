#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probeforge/curator.hpp"
#include "probeforge/probers.hpp"

namespace probeforge {

/// 1 iff a normalized gold answer equals one of the top-k normalized
/// candidates (lowercase, whitespace collapsed, outer punctuation stripped).
int hit_at_k(const RankedPrediction& prediction, std::span<const std::string> answers,
             std::size_t k);

/// Hits of one query, aligned with the k list used to produce them.
struct QueryHits {
  std::string query_id;
  std::string relation_id;
  std::vector<int> hits;
};

std::vector<QueryHits> score_predictions(std::span<const RankedPrediction> predictions,
                                         std::span<const ProbeQuery> queries,
                                         std::span<const std::size_t> ks);

struct RelationAccuracy {
  std::string relation_id;
  std::size_t count = 0;
  std::vector<std::optional<double>> acc;  // per k; empty optional when count == 0
};

struct ReportMetadata {
  std::optional<std::uint64_t> seed;
  std::optional<int> layer_limit;
  std::optional<std::int64_t> checkpoint_step;
  std::vector<std::string> excluded_relations;  // listed but without queries
};

struct EvalReport {
  std::string model;
  std::string strategy;
  std::string split;
  std::vector<std::size_t> ks;
  std::vector<RelationAccuracy> per_relation;  // first-appearance order
  std::vector<double> macro;                   // per k
  std::vector<double> micro;                   // per k
  ReportMetadata metadata;

  [[nodiscard]] const RelationAccuracy* relation(std::string_view id) const;
};

/// Per-relation acc = hits / count; macro = unweighted mean over relations
/// with queries; micro = total hits / total queries. Relations named in
/// `expected_relations` but absent from `hits` are excluded from macro and
/// listed in metadata.excluded_relations.
EvalReport aggregate(std::span<const QueryHits> hits, std::span<const std::size_t> ks,
                     std::span<const std::string> expected_relations = {});

struct LengthBin {
  std::size_t lower = 0;
  std::optional<std::size_t> upper;  // open end for the last bin
  std::size_t count = 0;
  std::optional<double> acc;
};

/// Bins [0, e_0), [e_0, e_1), ..., [e_last, inf) keyed by the character
/// length of each query's shortest gold answer.
std::vector<LengthBin> bin_by_answer_length(std::span<const ProbeQuery> queries,
                                            std::span<const int> hits,
                                            std::span<const std::size_t> bin_edges);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct StabilitySummary {
  std::vector<std::size_t> ks;
  std::map<std::string, std::vector<MeanStd>> per_relation;  // relation -> per k
  std::vector<MeanStd> macro;
};

/// Requires at least two reports over identical relation sets and k lists.
StabilitySummary stability_summary(std::span<const EvalReport> reports);

struct StepCurveRow {
  std::int64_t step = 0;
  std::string relation_id;  // "__macro__" for the macro average row
  double acc1_mean = 0.0;
  double acc1_std = 0.0;
};

/// Step -> reports from different sentence samples at that checkpoint step.
std::vector<StepCurveRow> step_curves(const std::map<std::int64_t, std::vector<EvalReport>>& by_step);

struct ExpertAnnotation {
  std::string query_id;
  std::string candidate;
  int score = 0;  // 1..5
};

std::vector<ExpertAnnotation> read_annotations(std::istream& in);
std::vector<ExpertAnnotation> load_annotations(const std::filesystem::path& path);

/// Counts of annotation score (rows 5..1) against gold membership, one block
/// per k.
struct ConfusionTable {
  std::vector<std::size_t> ks;
  /// cells[k index][5 - score] = {gold hit, gold miss}
  std::vector<std::array<std::array<std::size_t, 2>, 5>> cells;

  [[nodiscard]] std::size_t cell(std::size_t k_index, int score, bool gold_hit) const {
    return cells[k_index][static_cast<std::size_t>(5 - score)][gold_hit ? 0 : 1];
  }
  /// Sum of a score row across every block (the table's "Sum" column).
  [[nodiscard]] std::size_t row_sum(int score) const;
  [[nodiscard]] std::size_t block_total(std::size_t k_index) const;
};

struct Ratio {
  std::size_t hits = 0;
  std::size_t total = 0;
  [[nodiscard]] double value() const {
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
  }
};

struct ExpertRescore {
  std::vector<std::size_t> ks;
  /// Over all annotated top-k candidates (hits / (queries x k)).
  std::vector<Ratio> gold_candidate;
  std::vector<Ratio> annotated_candidate;
  /// Over queries: at least one qualifying candidate in the top k.
  std::vector<Ratio> gold_query;
  std::vector<Ratio> annotated_query;
  ConfusionTable confusion;
};

/// A candidate is an annotated hit when its score >= perfect_threshold.
/// Throws ValidationError listing every (query_id, candidate) among the top-k
/// without exactly one annotation.
ExpertRescore expert_rescore(std::span<const RankedPrediction> predictions,
                             std::span<const ExpertAnnotation> annotations,
                             std::span<const ProbeQuery> queries,
                             std::span<const std::size_t> ks = std::array<std::size_t, 2>{1, 10},
                             int perfect_threshold = 5);

// Writers ----------------------------------------------------------------

std::string report_json(const EvalReport& report);
/// relation_id,count,acc1,acc10 (columns follow report.ks).
void write_report_csv(const EvalReport& report, std::ostream& out);
void write_length_bins_csv(std::span<const LengthBin> bins, std::ostream& out);
void write_confusion_csv(const ConfusionTable& table, std::ostream& out);
void write_step_curves_csv(std::span<const StepCurveRow> rows, std::ostream& out);

/// Shortest fixed-format rendering used in every CSV ("%.6f").
std::string format_metric(double value);

/// Minimal RFC 4180 field splitter (quotes, doubled quotes, embedded commas).
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace probeforge
