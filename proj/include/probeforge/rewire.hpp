#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probeforge/encoders.hpp"
#include "probeforge/errors.hpp"

namespace probeforge {

struct RewireConfig {
  std::size_t num_sentences = 10000;
  double mask_ratio = 0.5;
  double temperature = 0.03;
  double learning_rate = 2e-5;
  std::size_t steps = 500;
  std::size_t batch_size = 96;
  std::size_t checkpoint_every = 50;
  std::size_t probe_checkpoint_step = 150;
  std::uint64_t seed = 0;
  std::size_t max_query_tokens = 50;
  std::size_t max_answer_tokens = 25;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const RewireConfig&) const = default;
};

/// Flat JSON object. Keys absent from `json_text` keep the values of `base`;
/// unknown keys are rejected.
RewireConfig parse_rewire_config(std::string_view json_text, const RewireConfig& base = {});
RewireConfig load_rewire_config(const std::filesystem::path& path, const RewireConfig& base = {});
std::string rewire_config_json(const RewireConfig& config);

struct MaskedPair {
  std::string query;
  std::string answer;

  bool operator==(const MaskedPair&) const = default;
};

/// Masks the last max(1, floor(w * mask_ratio)) words, where w is the word
/// count without a trailing period. The period keeps its original spacing
/// ("infections." -> "[MASK].", "infections ." -> "[MASK] ."). Returns
/// nullopt when fewer than two content words remain, signalling the caller
/// to drop the sentence.
std::optional<MaskedPair> tail_mask(std::string_view sentence, double mask_ratio,
                                    std::string_view placeholder = "[MASK]");

/// Uniform reservoir sample of `n` lines whose word count lies in
/// [min_words, max_words], returned in corpus order.
std::vector<std::string> sample_sentences(std::istream& corpus, std::size_t n,
                                          std::uint64_t seed, std::size_t min_words = 5,
                                          std::size_t max_words = 64);

template <typename Scalar>
struct InfoNceResult {
  Scalar loss_sum{};
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> query_grad;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> answer_grad;
};

namespace detail {

template <typename Derived>
auto normalized_rows(const Eigen::MatrixBase<Derived>& m, const char* what) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = m.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms(i) > Scalar(0)) || !std::isfinite(static_cast<double>(norms(i))))
      throw NumericalError(std::string(what) + " row " + std::to_string(i) +
                           " has zero or non-finite norm");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> u = m;
  u.array().colwise() /= norms.array();
  return std::make_pair(u, norms);
}

}  // namespace detail

/// In-batch InfoNCE with queries as anchors. For anchor i the denominator runs
/// over all 2N batch vectors except q_i itself, so it includes the positive
/// a_i, the other answers and the other queries. Returns the sum over anchors
/// and, when `with_grad` is set, the gradient with respect to both inputs.
template <typename DerivedQ, typename DerivedA>
InfoNceResult<typename DerivedQ::Scalar> infonce(const Eigen::MatrixBase<DerivedQ>& queries,
                                                 const Eigen::MatrixBase<DerivedA>& answers,
                                                 typename DerivedQ::Scalar temperature,
                                                 bool with_grad = true) {
  using Scalar = typename DerivedQ::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (queries.rows() != answers.rows() || queries.cols() != answers.cols())
    throw PreconditionError("query and answer matrices must have the same shape");
  if (queries.rows() == 0) throw PreconditionError("InfoNCE needs at least one pair");
  if (!(temperature > Scalar(0))) throw PreconditionError("temperature must be positive");

  const Eigen::Index n = queries.rows();
  const auto [uq, nq] = detail::normalized_rows(queries, "query");
  const auto [ua, na] = detail::normalized_rows(answers, "answer");

  Mat all(2 * n, uq.cols());
  all << uq, ua;
  Mat sim = (uq * all.transpose()) / temperature;  // n x 2n

  InfoNceResult<Scalar> out;
  Mat weights = Mat::Zero(n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < 2 * n; ++j)
      if (j != i) mx = std::max(mx, sim(i, j));
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < 2 * n; ++j)
      if (j != i) acc += std::exp(sim(i, j) - mx);
    const Scalar lse = mx + std::log(acc);
    out.loss_sum += lse - sim(i, n + i);
    if (with_grad) {
      for (Eigen::Index j = 0; j < 2 * n; ++j)
        if (j != i) weights(i, j) = std::exp(sim(i, j) - lse);
      weights(i, n + i) -= Scalar(1);
    }
  }
  if (!with_grad) return out;

  // d loss / d unit vectors: sim = uq * all^T / t, and all contains uq.
  const Mat back = weights.transpose() * uq / temperature;  // 2n x d
  Mat grad_uq = weights * all / temperature + back.topRows(n);
  Mat grad_ua = back.bottomRows(n);

  auto through_norm = [](const Mat& u, const auto& norms, const Mat& gu) {
    Mat g = gu;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
      g.row(i) = (gu.row(i) - u.row(i) * u.row(i).dot(gu.row(i))) / norms(i);
    return g;
  };
  out.query_grad = through_norm(uq, nq, grad_uq);
  out.answer_grad = through_norm(ua, na, grad_ua);
  return out;
}

template <typename DerivedQ, typename DerivedA>
typename DerivedQ::Scalar infonce_loss(const Eigen::MatrixBase<DerivedQ>& queries,
                                       const Eigen::MatrixBase<DerivedA>& answers,
                                       typename DerivedQ::Scalar temperature) {
  return infonce(queries, answers, temperature, false).loss_sum;
}

struct LossRecord {
  std::size_t step = 0;  // 1-based step that produced this loss
  double loss_sum = 0.0;
  double loss_mean = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct RewireOptions {
  /// When set, checkpoints go to <dir>/step-<NNNNNN>/.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// 0 means the encoder's max_layers().
  int layer_limit = 0;
  std::string mask_placeholder = "[MASK]";
};

struct RewireResult {
  std::vector<LossRecord> trace;
  std::vector<std::filesystem::path> checkpoints;
};

/// Keeps at most `max_tokens` whitespace tokens.
std::string truncate_words(std::string_view text, std::size_t max_tokens);

/// Trains from encoder.step() up to config.steps with seeded per-epoch
/// shuffles, so a run resumed from a checkpoint replays the same batches as an
/// uninterrupted one. The final partial batch of each epoch is dropped.
RewireResult rewire_train(TrainableEncoder& encoder, std::span<const MaskedPair> pairs,
                          const RewireConfig& config, const RewireOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& root, std::size_t step);

void write_loss_trace(std::span<const LossRecord> trace, std::ostream& out);

}  // namespace probeforge
