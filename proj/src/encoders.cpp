#include "probeforge/encoders.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "probeforge/errors.hpp"
#include "probeforge/random.hpp"
#include "probeforge/text.hpp"

namespace probeforge {

using nlohmann::json;
using nlohmann::ordered_json;

Matrix Encoder::encode(std::span<const std::string> texts, int layer_limit) const {
  if (layer_limit < 1 || layer_limit > max_layers())
    throw ConfigError("layer_limit " + std::to_string(layer_limit) + " outside [1, " +
                      std::to_string(max_layers()) + "]");
  if (texts.empty()) return Matrix(0, embedding_dim());
  return encode_rows(texts, layer_limit);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const auto path = dir / "encoder.json";
  std::ifstream in(path);
  if (!in) throw InputError("missing checkpoint sidecar " + path.string());
  try {
    const auto j = json::parse(in);
    CheckpointInfo info;
    info.identity = j.at("identity").get<std::string>();
    info.embedding_dim = j.at("embedding_dim").get<Eigen::Index>();
    info.max_layers = j.at("max_layers").get<int>();
    info.step = j.at("step").get<std::int64_t>();
    info.model_id = j.value("model_id", "");
    info.optimizer = j.value("optimizer", "");
    info.summary_vector = j.value("summary_vector", "");
    return info;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint sidecar " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// ReferenceEncoder

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr char kWeightsMagic[8] = {'P', 'F', 'R', 'E', 'F', 'W', '0', '1'};

}  // namespace

ReferenceEncoder::ReferenceEncoder(const ReferenceEncoderConfig& config) : config_(config) {
  if (config_.dim < 8) throw PreconditionError("reference encoder needs dim >= 8");
  if (config_.layers < 1) throw PreconditionError("reference encoder needs layers >= 1");
  if (config_.buckets < 16) throw PreconditionError("reference encoder needs buckets >= 16");

  auto rng = make_rng(config_.seed, "reference-encoder/projection");
  std::normal_distribution<double> normal(0.0, 1.0);
  projection_.resize(config_.dim, config_.buckets);
  for (Eigen::Index c = 0; c < projection_.cols(); ++c)
    for (Eigen::Index r = 0; r < projection_.rows(); ++r) projection_(r, c) = normal(rng);

  const double block_scale = 0.5 / std::sqrt(static_cast<double>(config_.dim));
  blocks_.reserve(static_cast<std::size_t>(config_.layers));
  for (int l = 0; l < config_.layers; ++l) {
    auto brng = make_rng(config_.seed, "reference-encoder/block" + std::to_string(l));
    Matrix a(config_.dim, config_.dim);
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = block_scale * normal(brng);
    blocks_.push_back(std::move(a));
  }
}

std::string ReferenceEncoder::model_id() const {
  return "reference:dim=" + std::to_string(config_.dim) + ",seed=" +
         std::to_string(config_.seed) + ",layers=" + std::to_string(config_.layers) +
         ",buckets=" + std::to_string(config_.buckets);
}

Eigen::SparseMatrix<double> ReferenceEncoder::features(
    std::span<const std::string> texts) const {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t col = 0; col < texts.size(); ++col) {
    const std::string padded = " " + normalize_answer(texts[col]) + " ";
    std::map<Eigen::Index, double> counts;
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
      counts[static_cast<Eigen::Index>(fnv1a(std::string_view(padded).substr(i, 3)) %
                                       static_cast<std::uint64_t>(config_.buckets))] += 1.0;
    double norm = 0.0;
    for (const auto& [_, v] : counts) norm += v * v;
    norm = std::sqrt(norm);
    for (const auto& [row, v] : counts)
      trips.emplace_back(row, static_cast<Eigen::Index>(col), v / norm);
  }
  Eigen::SparseMatrix<double> f(config_.buckets, static_cast<Eigen::Index>(texts.size()));
  f.setFromTriplets(trips.begin(), trips.end());
  return f;
}

std::vector<Matrix> ReferenceEncoder::forward(const Eigen::SparseMatrix<double>& feats,
                                              int layer_limit) const {
  std::vector<Matrix> h;
  h.reserve(static_cast<std::size_t>(layer_limit) + 1);
  h.emplace_back(projection_ * feats);
  for (int l = 1; l <= layer_limit; ++l) {
    if (observer_) observer_(l);
    const auto& a = blocks_[static_cast<std::size_t>(l - 1)];
    Matrix next = h.back() + (a * h.back()).array().tanh().matrix();
    h.push_back(std::move(next));
  }
  return h;
}

Matrix ReferenceEncoder::encode_rows(std::span<const std::string> texts, int layer_limit) const {
  auto h = forward(features(texts), layer_limit);
  return h.back().transpose();
}

void ReferenceEncoder::apply_gradient(std::span<const std::string> texts,
                                      const Matrix& output_grad, double learning_rate,
                                      int layer_limit) {
  if (layer_limit < 1 || layer_limit > max_layers())
    throw ConfigError("layer_limit out of range for training");
  if (output_grad.rows() != static_cast<Eigen::Index>(texts.size()) ||
      output_grad.cols() != config_.dim)
    throw PreconditionError("output gradient shape does not match the batch");

  const auto feats = features(texts);
  const auto h = forward(feats, layer_limit);

  Matrix grad_h = output_grad.transpose();
  std::vector<Matrix> block_grads(static_cast<std::size_t>(layer_limit));
  for (int l = layer_limit; l >= 1; --l) {
    const auto& a = blocks_[static_cast<std::size_t>(l - 1)];
    const Matrix& prev = h[static_cast<std::size_t>(l - 1)];
    const Matrix act = (a * prev).array().tanh().matrix();
    const Matrix pre_grad = (grad_h.array() * (1.0 - act.array().square())).matrix();
    block_grads[static_cast<std::size_t>(l - 1)] = pre_grad * prev.transpose();
    grad_h += a.transpose() * pre_grad;
  }
  const Matrix proj_grad = grad_h * feats.transpose();

  projection_ -= learning_rate * proj_grad;
  for (int l = 0; l < layer_limit; ++l)
    blocks_[static_cast<std::size_t>(l)] -= learning_rate * block_grads[static_cast<std::size_t>(l)];
  ++step_;
}

void ReferenceEncoder::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + (dir / "weights.bin").string());
    out.write(kWeightsMagic, sizeof kWeightsMagic);
    const std::int64_t header[4] = {config_.dim, config_.buckets, config_.layers, step_};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(projection_.data()),
              static_cast<std::streamsize>(projection_.size() * sizeof(double)));
    for (const auto& a : blocks_)
      out.write(reinterpret_cast<const char*>(a.data()),
                static_cast<std::streamsize>(a.size() * sizeof(double)));
  }
  ordered_json side;
  side["identity"] = identity();
  side["embedding_dim"] = config_.dim;
  side["max_layers"] = config_.layers;
  side["step"] = step_;
  side["model_id"] = model_id();
  side["optimizer"] = optimizer_name();
  side["summary_vector"] = "raw output of the last retained residual block, no normalization";
  std::ofstream out(dir / "encoder.json", std::ios::binary | std::ios::trunc);
  out << side.dump(2) << '\n';
}

void ReferenceEncoder::load_checkpoint(const std::filesystem::path& dir) {
  const auto info = read_checkpoint_info(dir);
  if (!info.model_id.empty() && info.model_id != model_id())
    throw ConfigError("checkpoint " + dir.string() + " was written by '" + info.model_id +
                      "', not '" + model_id() + "'");
  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw InputError("cannot read " + (dir / "weights.bin").string());
  char magic[sizeof kWeightsMagic];
  std::int64_t header[4];
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kWeightsMagic)) ||
      header[0] != config_.dim || header[1] != config_.buckets || header[2] != config_.layers)
    throw ValidationError("weights blob in " + dir.string() + " does not match " + model_id());
  Matrix proj(config_.dim, config_.buckets);
  in.read(reinterpret_cast<char*>(proj.data()),
          static_cast<std::streamsize>(proj.size() * sizeof(double)));
  std::vector<Matrix> blocks(blocks_.size(), Matrix(config_.dim, config_.dim));
  for (auto& a : blocks)
    in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
  if (!in) throw ValidationError("truncated weights blob in " + dir.string());
  projection_ = std::move(proj);
  blocks_ = std::move(blocks);
  step_ = header[3];
}

Vector ReferenceEncoder::flat_weights() const {
  Vector w(projection_.size() + static_cast<Eigen::Index>(blocks_.size()) * config_.dim * config_.dim);
  Eigen::Index at = 0;
  w.segment(at, projection_.size()) = projection_.reshaped();
  at += projection_.size();
  for (const auto& a : blocks_) {
    w.segment(at, a.size()) = a.reshaped();
    at += a.size();
  }
  return w;
}

void ReferenceEncoder::set_flat_weights(const Vector& weights) {
  if (weights.size() != flat_weights().size())
    throw PreconditionError("flat weight vector has the wrong length");
  Eigen::Index at = 0;
  projection_.reshaped() = weights.segment(at, projection_.size());
  at += projection_.size();
  for (auto& a : blocks_) {
    a.reshaped() = weights.segment(at, a.size());
    at += a.size();
  }
}

std::unique_ptr<TrainableEncoder> ReferenceEncoder::clone() const {
  auto copy = std::make_unique<ReferenceEncoder>(*this);
  copy->observer_ = nullptr;
  return copy;
}

std::unique_ptr<ReferenceEncoder> reference_encoder(Eigen::Index dim, std::uint64_t seed,
                                                    int layers) {
  ReferenceEncoderConfig cfg;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.layers = layers;
  return std::make_unique<ReferenceEncoder>(cfg);
}

std::unique_ptr<TrainableEncoder> make_encoder(std::string_view spec) {
  constexpr std::string_view prefix = "reference:";
  if (!spec.starts_with(prefix) && spec != "reference")
    throw ConfigError("no adapter available for encoder '" + std::string(spec) +
                      "'; this build ships the reference encoder only");
  ReferenceEncoderConfig cfg;
  std::string_view rest = spec.size() > prefix.size() ? spec.substr(prefix.size()) : "";
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? "" : rest.substr(comma + 1);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("malformed encoder option '" + std::string(item) + "'");
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    try {
      if (key == "dim") cfg.dim = std::stol(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "layers") cfg.layers = std::stoi(value);
      else if (key == "buckets") cfg.buckets = std::stol(value);
      else throw ConfigError("unknown reference encoder option '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for encoder option '" + key + "': " + value);
    }
  }
  try {
    return std::make_unique<ReferenceEncoder>(cfg);
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------------------
// MaskedLM

std::vector<std::string> MaskedLM::tokenize(std::string_view text) const {
  return split_whitespace(text);
}

std::string MaskedLM::detokenize(std::span<const std::string> tokens) const {
  return join(std::vector<std::string>(tokens.begin(), tokens.end()), " ");
}

std::optional<std::size_t> MaskedLM::token_id(std::string_view token) const {
  const auto& v = vocab();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == token) return i;
  return std::nullopt;
}

MaskScores mask_logprobs(const MaskedLM& mlm, std::string_view query,
                         std::string_view placeholder) {
  std::string text(query);
  const std::string native = mlm.mask_token();
  if (placeholder != native) {
    for (auto pos = text.find(placeholder); pos != std::string::npos;
         pos = text.find(placeholder, pos + native.size()))
      text.replace(pos, placeholder.size(), native);
  }
  MaskScores out;
  out.tokens = mlm.tokenize(text);
  for (std::size_t i = 0; i < out.tokens.size(); ++i)
    if (out.tokens[i] == native) out.positions.push_back(i);
  if (out.positions.empty())
    throw PreconditionError("query has no mask token: " + std::string(query));
  out.log_probs = mlm.score_masks(out.tokens, out.positions);
  return out;
}

TableMLM::TableMLM(std::string identity, std::vector<std::string> vocab, std::string mask_token,
                   std::vector<Entry> entries, Row fallback)
    : identity_(std::move(identity)),
      vocab_(std::move(vocab)),
      mask_token_(std::move(mask_token)),
      entries_(std::move(entries)),
      fallback_(std::move(fallback)) {
  if (vocab_.empty()) throw ValidationError("stub MLM needs a non-empty vocabulary");
}

namespace {

TableMLM::Row parse_row(const json& j) {
  TableMLM::Row row;
  if (j.contains("logits"))
    for (const auto& [tok, v] : j.at("logits").items()) row.logits[tok] = v.get<double>();
  row.other = j.value("other", 0.0);
  return row;
}

}  // namespace

TableMLM TableMLM::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read stub MLM table " + path.string());
  try {
    const auto j = json::parse(in);
    std::vector<Entry> entries;
    for (const auto& e : j.value("positions", json::array())) {
      Entry entry;
      entry.position = e.at("position").get<long>();
      entry.row = parse_row(e);
      for (const auto& g : e.value("given", json::array()))
        entry.given.push_back({g.at("position").get<long>(), g.at("token").get<std::string>(),
                               parse_row(g)});
      entries.push_back(std::move(entry));
    }
    return TableMLM(j.value("identity", path.stem().string()),
                    j.at("vocab").get<std::vector<std::string>>(),
                    j.value("mask_token", "[MASK]"), std::move(entries),
                    j.contains("fallback") ? parse_row(j.at("fallback")) : Row{});
  } catch (const json::exception& e) {
    throw ValidationError("stub MLM table " + path.string() + ": " + e.what());
  }
}

Vector TableMLM::log_softmax_row(const Row& row) const {
  Vector logits(static_cast<Eigen::Index>(vocab_.size()));
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    auto it = row.logits.find(vocab_[i]);
    logits(static_cast<Eigen::Index>(i)) = it == row.logits.end() ? row.other : it->second;
  }
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

Matrix TableMLM::score_masks(std::span<const std::string> tokens,
                             std::span<const std::size_t> mask_positions) const {
  const auto n = static_cast<long>(tokens.size());
  auto resolve = [n](long p) { return p < 0 ? n + p : p; };
  Matrix out(static_cast<Eigen::Index>(mask_positions.size()),
             static_cast<Eigen::Index>(vocab_.size()));
  for (std::size_t m = 0; m < mask_positions.size(); ++m) {
    const auto pos = static_cast<long>(mask_positions[m]);
    const Row* row = &fallback_;
    for (const auto& e : entries_) {
      if (resolve(e.position) != pos) continue;
      row = &e.row;
      for (const auto& c : e.given) {
        const long cp = resolve(c.position);
        if (cp >= 0 && cp < n && tokens[static_cast<std::size_t>(cp)] == c.token) {
          row = &c.row;
          break;
        }
      }
      break;
    }
    out.row(static_cast<Eigen::Index>(m)) = log_softmax_row(*row).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// TableGenerator

TableGenerator::TableGenerator(std::string identity,
                               std::map<std::string, std::vector<ScoredText>> table,
                               std::vector<ScoredText> fallback)
    : identity_(std::move(identity)), fallback_(std::move(fallback)) {
  for (auto& [k, v] : table) table_.emplace(k, std::move(v));
}

TableGenerator TableGenerator::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read generator table " + path.string());
  auto to_list = [](const json& arr) {
    std::vector<ScoredText> out;
    for (const auto& item : arr)
      out.emplace_back(item.at(0).get<std::string>(), item.at(1).get<double>());
    return out;
  };
  try {
    const auto j = json::parse(in);
    std::map<std::string, std::vector<ScoredText>> table;
    const json queries = j.value("queries", json::object());
    for (const auto& [q, arr] : queries.items()) table[q] = to_list(arr);
    return TableGenerator(j.value("identity", path.stem().string()), std::move(table),
                          to_list(j.value("fallback", json::array())));
  } catch (const json::exception& e) {
    throw ValidationError("generator table " + path.string() + ": " + e.what());
  }
}

std::vector<ScoredText> TableGenerator::generate(std::string_view query) const {
  auto it = table_.find(query);
  return it == table_.end() ? fallback_ : it->second;
}

}  // namespace probeforge
