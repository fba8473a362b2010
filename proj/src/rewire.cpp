#include "probeforge/rewire.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "probeforge/random.hpp"
#include "probeforge/text.hpp"

namespace probeforge {

using nlohmann::json;
using nlohmann::ordered_json;

void RewireConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (steps > 0 && steps < checkpoint_every)
    throw ConfigError("steps must be >= checkpoint_every");
  if (max_query_tokens < 1 || max_answer_tokens < 1)
    throw ConfigError("token limits must be >= 1");
}

RewireConfig parse_rewire_config(std::string_view json_text, const RewireConfig& base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("rewire config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("rewire config must be a flat JSON object");
  RewireConfig c = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_sentences") c.num_sentences = value.get<std::size_t>();
      else if (key == "mask_ratio") c.mask_ratio = value.get<double>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
      else if (key == "probe_checkpoint_step") c.probe_checkpoint_step = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "max_query_tokens") c.max_query_tokens = value.get<std::size_t>();
      else if (key == "max_answer_tokens") c.max_answer_tokens = value.get<std::size_t>();
      else throw ConfigError("unknown rewire config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("rewire config key '" + key + "': " + e.what());
    }
  }
  return c;
}

RewireConfig load_rewire_config(const std::filesystem::path& path, const RewireConfig& base) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read rewire config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rewire_config(ss.str(), base);
}

std::string rewire_config_json(const RewireConfig& c) {
  ordered_json j;
  j["num_sentences"] = c.num_sentences;
  j["mask_ratio"] = c.mask_ratio;
  j["temperature"] = c.temperature;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["checkpoint_every"] = c.checkpoint_every;
  j["probe_checkpoint_step"] = c.probe_checkpoint_step;
  j["seed"] = c.seed;
  j["max_query_tokens"] = c.max_query_tokens;
  j["max_answer_tokens"] = c.max_answer_tokens;
  return j.dump(2);
}

std::optional<MaskedPair> tail_mask(std::string_view sentence, double mask_ratio,
                                    std::string_view placeholder) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw PreconditionError("mask_ratio must lie in (0, 1)");
  auto words = split_whitespace(sentence);
  std::string period;  // "" | "." attached | " ." separate
  if (!words.empty() && words.back() == ".") {
    period = " .";
    words.pop_back();
  } else if (!words.empty() && words.back().size() > 1 && words.back().back() == '.') {
    period = ".";
    words.back().pop_back();
  }
  const std::size_t w = words.size();
  if (w < 2) return std::nullopt;
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(w) * mask_ratio)));
  const std::size_t keep = w - std::min(m, w - 1);

  MaskedPair pair;
  std::vector<std::string> prefix(words.begin(), words.begin() + static_cast<long>(keep));
  std::vector<std::string> tail(words.begin() + static_cast<long>(keep), words.end());
  pair.query = join(prefix, " ") + " " + std::string(placeholder) + period;
  pair.answer = join(tail, " ");
  return pair;
}

std::vector<std::string> sample_sentences(std::istream& corpus, std::size_t n,
                                          std::uint64_t seed, std::size_t min_words,
                                          std::size_t max_words) {
  auto rng = make_rng(seed, "sample-sentences");
  std::vector<std::pair<std::size_t, std::string>> reservoir;
  reservoir.reserve(n);
  std::size_t eligible = 0;
  std::string line;
  while (std::getline(corpus, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto count = split_whitespace(line).size();
    if (count < min_words || count > max_words) continue;
    if (reservoir.size() < n) {
      reservoir.emplace_back(eligible, trim(line));
    } else if (n > 0) {
      const auto j = uniform_index(rng, eligible + 1);
      if (j < n) reservoir[j] = {eligible, trim(line)};
    }
    ++eligible;
  }
  if (eligible < n)
    throw InsufficientCorpusError("corpus has " + std::to_string(eligible) +
                                  " eligible sentences (" + std::to_string(min_words) + "-" +
                                  std::to_string(max_words) + " words), " +
                                  std::to_string(n) + " requested");
  std::sort(reservoir.begin(), reservoir.end());
  std::vector<std::string> out;
  out.reserve(reservoir.size());
  for (auto& [_, s] : reservoir) out.push_back(std::move(s));
  return out;
}

std::string truncate_words(std::string_view text, std::size_t max_tokens) {
  auto words = split_whitespace(text);
  if (words.size() > max_tokens) words.resize(max_tokens);
  return join(words, " ");
}

std::filesystem::path checkpoint_path(const std::filesystem::path& root, std::size_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step-%06zu", step);
  return root / name;
}

namespace {

std::uint64_t batch_fingerprint(std::span<const std::size_t> indices) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto i : indices) {
    h ^= static_cast<std::uint64_t>(i);
    h *= 1099511628211ULL;
  }
  return h;
}

void write_checkpoint(const TrainableEncoder& encoder, const RewireConfig& config,
                      const std::filesystem::path& dir) {
  encoder.save_checkpoint(dir);
  std::ofstream out(dir / "rewire_config.json", std::ios::binary | std::ios::trunc);
  out << rewire_config_json(config) << '\n';
}

}  // namespace

RewireResult rewire_train(TrainableEncoder& encoder, std::span<const MaskedPair> pairs,
                          const RewireConfig& config, const RewireOptions& options) {
  config.validate();
  RewireResult result;
  const auto start = static_cast<std::size_t>(std::max<std::int64_t>(0, encoder.step()));
  if (config.steps <= start) return result;
  if (pairs.size() < config.batch_size)
    throw PreconditionError("rewiring needs at least batch_size (" +
                            std::to_string(config.batch_size) + ") pairs, got " +
                            std::to_string(pairs.size()));
  const int layer_limit = options.layer_limit > 0 ? options.layer_limit : encoder.max_layers();

  std::vector<std::string> queries, answers;
  queries.reserve(pairs.size());
  answers.reserve(pairs.size());
  for (const auto& p : pairs) {
    queries.push_back(truncate_words(p.query, config.max_query_tokens));
    answers.push_back(truncate_words(p.answer, config.max_answer_tokens));
  }

  const std::size_t per_epoch = pairs.size() / config.batch_size;
  std::vector<std::size_t> order(pairs.size());
  std::size_t current_epoch = static_cast<std::size_t>(-1);
  const auto n = static_cast<Eigen::Index>(config.batch_size);

  std::vector<std::string> texts(2 * config.batch_size);
  for (std::size_t s = start; s < config.steps; ++s) {
    const std::size_t epoch = s / per_epoch;
    if (epoch != current_epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = make_rng(config.seed, "rewire/epoch" + std::to_string(epoch));
      seeded_shuffle(order.begin(), order.end(), rng);
      current_epoch = epoch;
    }
    const std::span<const std::size_t> batch(order.data() + (s % per_epoch) * config.batch_size,
                                             config.batch_size);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      texts[i] = queries[batch[i]];
      texts[batch.size() + i] = answers[batch[i]];
    }
    const Matrix z = encoder.encode(texts, layer_limit);
    InfoNceResult<double> loss;
    try {
      loss = infonce(z.topRows(n), z.bottomRows(n), config.temperature);
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(s + 1) + ", batch " +
                           std::to_string(batch_fingerprint(batch)) + ": " + e.what());
    }
    if (!std::isfinite(loss.loss_sum))
      throw NumericalError("non-finite loss at step " + std::to_string(s + 1) +
                           ", batch fingerprint " + std::to_string(batch_fingerprint(batch)));

    Matrix grad(2 * n, z.cols());
    grad << loss.query_grad, loss.answer_grad;
    encoder.apply_gradient(texts, grad, config.learning_rate, layer_limit);

    result.trace.push_back(
        {s + 1, loss.loss_sum, loss.loss_sum / static_cast<double>(config.batch_size)});
    if (options.checkpoint_dir && (s + 1) % config.checkpoint_every == 0) {
      auto dir = checkpoint_path(*options.checkpoint_dir, s + 1);
      write_checkpoint(encoder, config, dir);
      result.checkpoints.push_back(std::move(dir));
    }
  }
  return result;
}

void write_loss_trace(std::span<const LossRecord> trace, std::ostream& out) {
  out << "step,loss_sum,loss_mean\n";
  char buf[96];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g\n", r.step, r.loss_sum, r.loss_mean);
    out << buf;
  }
}

}  // namespace probeforge
