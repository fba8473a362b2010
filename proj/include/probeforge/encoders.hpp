#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace probeforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One vector per text. Implementations must be pure functions of
/// (weights, text, layer_limit); concurrent encode calls are allowed, but no
/// encode may overlap a training step on the same object.
class Encoder {
 public:
  virtual ~Encoder() = default;

  /// Model id plus checkpoint step, e.g. "reference:dim=64,seed=7,layers=12@150".
  [[nodiscard]] virtual std::string identity() const = 0;
  [[nodiscard]] virtual Eigen::Index embedding_dim() const = 0;
  [[nodiscard]] virtual int max_layers() const = 0;

  /// |texts| x embedding_dim. Throws ConfigError if layer_limit is outside
  /// [1, max_layers].
  [[nodiscard]] Matrix encode(std::span<const std::string> texts, int layer_limit) const;
  [[nodiscard]] Matrix encode(std::span<const std::string> texts) const {
    return encode(texts, max_layers());
  }

 protected:
  virtual Matrix encode_rows(std::span<const std::string> texts, int layer_limit) const = 0;
};

/// Sidecar written next to a weights blob.
struct CheckpointInfo {
  std::string identity;
  Eigen::Index embedding_dim = 0;
  int max_layers = 0;
  std::int64_t step = 0;
  std::string model_id;
  std::string optimizer;
  std::string summary_vector;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

class TrainableEncoder : public Encoder {
 public:
  [[nodiscard]] virtual std::string model_id() const = 0;
  [[nodiscard]] std::string identity() const override {
    return model_id() + "@" + std::to_string(step_);
  }
  [[nodiscard]] std::int64_t step() const { return step_; }

  /// Back-propagates dLoss/dOutput (rows aligned with `texts`, as produced by
  /// encode(texts, layer_limit)) and applies one optimizer update. Advances
  /// the step counter.
  virtual void apply_gradient(std::span<const std::string> texts, const Matrix& output_grad,
                              double learning_rate, int layer_limit) = 0;

  [[nodiscard]] virtual std::string optimizer_name() const { return "sgd"; }

  /// Writes weights.bin and encoder.json into `dir` (created if needed).
  virtual void save_checkpoint(const std::filesystem::path& dir) const = 0;
  virtual void load_checkpoint(const std::filesystem::path& dir) = 0;

  [[nodiscard]] virtual std::unique_ptr<TrainableEncoder> clone() const = 0;

 protected:
  std::int64_t step_ = 0;
};

struct ReferenceEncoderConfig {
  Eigen::Index dim = 128;
  std::uint64_t seed = 0;
  int layers = 12;
  Eigen::Index buckets = 2048;
};

/// Hashed character-trigram counts projected through a trainable linear map,
/// followed by `layers` residual tanh blocks h <- h + tanh(A h). The summary
/// vector is the output of the last block allowed by layer_limit.
class ReferenceEncoder final : public TrainableEncoder {
 public:
  explicit ReferenceEncoder(const ReferenceEncoderConfig& config);

  [[nodiscard]] std::string model_id() const override;
  [[nodiscard]] Eigen::Index embedding_dim() const override { return config_.dim; }
  [[nodiscard]] int max_layers() const override { return config_.layers; }
  [[nodiscard]] const ReferenceEncoderConfig& config() const { return config_; }

  void apply_gradient(std::span<const std::string> texts, const Matrix& output_grad,
                      double learning_rate, int layer_limit) override;

  void save_checkpoint(const std::filesystem::path& dir) const override;
  void load_checkpoint(const std::filesystem::path& dir) override;
  [[nodiscard]] std::unique_ptr<TrainableEncoder> clone() const override;

  /// Called with the 1-based block index whenever that block's weights are read.
  void set_layer_observer(std::function<void(int)> observer) { observer_ = std::move(observer); }

  /// All trainable weights, projection first then blocks, column-major.
  [[nodiscard]] Vector flat_weights() const;
  void set_flat_weights(const Vector& weights);

  /// Sparse trigram features, one unit-norm column per text.
  [[nodiscard]] Eigen::SparseMatrix<double> features(std::span<const std::string> texts) const;

 protected:
  Matrix encode_rows(std::span<const std::string> texts, int layer_limit) const override;

 private:
  /// Column-wise activations h_0..h_limit, each dim x n.
  std::vector<Matrix> forward(const Eigen::SparseMatrix<double>& feats, int layer_limit) const;

  ReferenceEncoderConfig config_;
  Matrix projection_;           // dim x buckets
  std::vector<Matrix> blocks_;  // layers x (dim x dim)
  std::function<void(int)> observer_;
};

std::unique_ptr<ReferenceEncoder> reference_encoder(Eigen::Index dim, std::uint64_t seed,
                                                    int layers = 12);

/// Parses "reference:dim=128,seed=7[,layers=12,buckets=2048]". Any other
/// spec names an external adapter, which this build does not ship.
std::unique_ptr<TrainableEncoder> make_encoder(std::string_view spec);

// ---------------------------------------------------------------------------
// Masked-token prediction

class MaskedLM {
 public:
  virtual ~MaskedLM() = default;

  [[nodiscard]] virtual std::string identity() const = 0;
  [[nodiscard]] virtual const std::vector<std::string>& vocab() const = 0;
  [[nodiscard]] virtual std::string mask_token() const = 0;

  /// Dataset placeholder "[MASK]" is rewritten to mask_token() before this.
  [[nodiscard]] virtual std::vector<std::string> tokenize(std::string_view text) const;
  [[nodiscard]] virtual std::string detokenize(std::span<const std::string> tokens) const;

  /// One log-probability row over vocab() per entry of `mask_positions`, for
  /// a token sequence in which those positions hold mask_token().
  [[nodiscard]] virtual Matrix score_masks(std::span<const std::string> tokens,
                                           std::span<const std::size_t> mask_positions) const = 0;

  [[nodiscard]] std::optional<std::size_t> token_id(std::string_view token) const;
};

struct MaskScores {
  std::vector<std::string> tokens;
  std::vector<std::size_t> positions;  // token indices of masks, ascending
  Matrix log_probs;                    // positions.size() x vocab
};

/// Tokenizes `query` (placeholder mapped to the native mask token) and scores
/// every remaining mask. Throws PreconditionError if no mask is present.
MaskScores mask_logprobs(const MaskedLM& mlm, std::string_view query,
                         std::string_view placeholder = "[MASK]");

/// Table-driven MLM: per-position logits, optionally conditioned on the token
/// already filled at another position. Positions may be negative to count
/// from the end of the sequence (-1 is the last token).
struct TableRow {
  std::map<std::string, double> logits;
  double other = 0.0;  // logit of every token not listed
};

class TableMLM final : public MaskedLM {
 public:
  using Row = TableRow;
  struct Condition {
    long position = 0;
    std::string token;
    Row row;
  };
  struct Entry {
    long position = 0;
    Row row;
    std::vector<Condition> given;  // first match wins
  };

  TableMLM(std::string identity, std::vector<std::string> vocab, std::string mask_token,
           std::vector<Entry> entries, Row fallback = {});

  static TableMLM load(const std::filesystem::path& path);

  [[nodiscard]] std::string identity() const override { return identity_; }
  [[nodiscard]] const std::vector<std::string>& vocab() const override { return vocab_; }
  [[nodiscard]] std::string mask_token() const override { return mask_token_; }
  [[nodiscard]] Matrix score_masks(std::span<const std::string> tokens,
                                   std::span<const std::size_t> mask_positions) const override;

 private:
  [[nodiscard]] Vector log_softmax_row(const Row& row) const;

  std::string identity_;
  std::vector<std::string> vocab_;
  std::string mask_token_;
  std::vector<Entry> entries_;
  Row fallback_;
};

// ---------------------------------------------------------------------------
// Generation

using ScoredText = std::pair<std::string, double>;

class Generator {
 public:
  virtual ~Generator() = default;
  [[nodiscard]] virtual std::string identity() const = 0;
  /// Candidates ranked by model score, best first.
  [[nodiscard]] virtual std::vector<ScoredText> generate(std::string_view query) const = 0;
};

/// Returns canned candidate lists keyed by exact query text.
class TableGenerator final : public Generator {
 public:
  TableGenerator(std::string identity, std::map<std::string, std::vector<ScoredText>> table,
                 std::vector<ScoredText> fallback = {});
  static TableGenerator load(const std::filesystem::path& path);

  [[nodiscard]] std::string identity() const override { return identity_; }
  [[nodiscard]] std::vector<ScoredText> generate(std::string_view query) const override;

 private:
  std::string identity_;
  std::map<std::string, std::vector<ScoredText>, std::less<>> table_;
  std::vector<ScoredText> fallback_;
};

}  // namespace probeforge
