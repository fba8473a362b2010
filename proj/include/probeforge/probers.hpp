#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probeforge/curator.hpp"
#include "probeforge/encoders.hpp"

namespace probeforge {

/// Frozen, unit-normalized entity vectors for retrieval.
struct EntityIndex {
  std::vector<std::string> entity_names;
  Matrix vectors;  // |entities| x d, unit rows
  std::string encoder_identity;
  int layer_limit = 0;
};

/// Throws ConfigError for an empty list and ValidationError listing any
/// names that collide after normalization.
EntityIndex build_entity_index(const Encoder& encoder, std::vector<std::string> entity_names,
                               int layer_limit);

std::vector<std::string> load_entities(const std::filesystem::path& path);

struct RankedPrediction {
  std::string query_id;
  std::vector<ScoredText> candidates;  // descending score, unique strings
  std::string strategy;

  bool operator==(const RankedPrediction&) const = default;
};

/// Indices of the k largest scores, ordered by descending score with ties
/// going to the lower index.
template <typename Derived>
std::vector<Eigen::Index> top_k_indices(const Eigen::DenseBase<Derived>& scores, std::size_t k) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const auto keep = std::min(k, idx.size());
  auto before = [&scores](Eigen::Index a, Eigen::Index b) {
    const auto sa = scores(a), sb = scores(b);
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(keep), idx.end(), before);
  idx.resize(keep);
  return idx;
}

/// Rows scaled to unit L2 norm.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> unit_rows(
    const Eigen::MatrixBase<Derived>& m) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out = m;
  out.rowwise().normalize();
  return out;
}

enum class CandidateScope { full, relation };

struct ContrastiveOptions {
  std::size_t k = 10;
  int layer_limit = 0;  // 0: use the index's layer limit
  /// With CandidateScope::relation, only entities listed for the query's
  /// relation are ranked.
  CandidateScope scope = CandidateScope::full;
  std::map<std::string, std::vector<std::size_t>> relation_candidates;
};

/// Relation id -> indices of index entities that are gold answers somewhere
/// in that relation.
std::map<std::string, std::vector<std::size_t>> relation_candidate_sets(
    const EntityIndex& index, std::span<const ProbeQuery> queries);

std::vector<RankedPrediction> contrastive_probe(const Encoder& encoder, const EntityIndex& index,
                                                std::span<const ProbeQuery> queries,
                                                const ContrastiveOptions& options = {});

enum class FillStrategy { independent, order, confidence };

FillStrategy parse_fill_strategy(std::string_view name);
std::string_view to_string(FillStrategy strategy);

struct MaskPredictOptions {
  std::size_t num_masks = 5;
  FillStrategy strategy = FillStrategy::independent;
  std::optional<FillStrategy> refine;
  std::size_t max_refine_iters = 10;
  std::string placeholder = "[MASK]";
};

struct MaskPredictResult {
  std::string answer;               // detokenized span
  std::vector<std::string> tokens;  // filled span, one per mask
  double log_prob = 0.0;            // sum over slots of log p(token | all other slots)
  std::size_t refine_sweeps = 0;
  bool converged = true;
};

/// Expands the single placeholder into num_masks mask tokens and fills them.
///   independent: argmax of every position from one pass
///   order:       left to right, re-scoring after each fill
///   confidence:  repeatedly fill the most confident position
/// Refinement re-masks one position at a time and re-predicts it given the
/// rest, sweeping until nothing changes or max_refine_iters sweeps ran.
/// Order and confidence refinement apply each change immediately (left to
/// right, or most-confident first); independent refinement applies a sweep's
/// changes together.
MaskPredictResult mask_predict(const MaskedLM& mlm, std::string_view query,
                               const MaskPredictOptions& options = {});

struct MaskAverageResult {
  RankedPrediction prediction;
  /// Candidates containing a token outside the vocabulary. They score -inf
  /// and are left out of the ranking.
  std::vector<std::string> out_of_vocab;
};

/// Scores each candidate of m tokens by the mean log-probability of its
/// tokens at m expanded masks (one pass per length).
MaskAverageResult mask_average_rank(const MaskedLM& mlm, std::string_view query,
                                    std::span<const std::string> candidates, std::size_t k,
                                    std::string_view placeholder = "[MASK]");

RankedPrediction generate_probe(const Generator& generator, std::string_view query_id,
                                std::string_view query, std::size_t k);

void write_predictions(std::span<const RankedPrediction> predictions, std::ostream& out);
std::vector<RankedPrediction> read_predictions(std::istream& in);
void save_predictions(std::span<const RankedPrediction> predictions,
                      const std::filesystem::path& path);
std::vector<RankedPrediction> load_predictions(const std::filesystem::path& path);

}  // namespace probeforge
