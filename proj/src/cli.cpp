#include "probeforge/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "probeforge/curator.hpp"
#include "probeforge/encoders.hpp"
#include "probeforge/errors.hpp"
#include "probeforge/eval.hpp"
#include "probeforge/probers.hpp"
#include "probeforge/rewire.hpp"
#include "probeforge/text.hpp"

#ifndef PROBEFORGE_DEFAULT_DATA_DIR
#define PROBEFORGE_DEFAULT_DATA_DIR "data"
#endif

namespace probeforge {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

/// Bad or missing flags detected after parsing; reported with usage text.
class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Small file helpers

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(std::string("cannot read ") + what + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
  if (!out) throw InputError("failed writing " + path.string());
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path))
    throw InputError(std::string(what) + " not found: " + path.string());
}

void prepare_out(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw InputError("output path exists and is not a directory: " + dir.string());
  fs::create_directories(dir);
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  std::erase_if(out, [](const std::string& s) { return s.empty(); });
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else if constexpr (std::is_signed_v<T>) {
      value = static_cast<T>(std::stoll(text, &used));
    } else {
      if (!text.empty() && text.front() == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw UsageError("invalid " + what + " value '" + text + "'");
  }
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (const auto& item : split_list(text)) {
    const auto k = parse_number<std::size_t>(item, "--k");
    if (k == 0) throw UsageError("--k values must be >= 1");
    ks.push_back(k);
  }
  if (ks.empty()) throw UsageError("--k needs at least one value");
  return ks;
}

// ---------------------------------------------------------------------------
// Manifest

struct Manifest {
  std::string command;
  ojson config = ojson::object();
  ojson inputs = ojson::object();
  std::vector<std::string> outputs;
  std::optional<std::uint64_t> seed;
  std::string started_at = utc_timestamp();
  Clock::time_point start = Clock::now();

  void write(const fs::path& dir) const {
    ojson j;
    j["command"] = command;
    j["version"] = PROBEFORGE_VERSION;
    j["started_at"] = started_at;
    j["duration_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
    j["seed"] = seed ? ojson(*seed) : ojson(nullptr);
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
  }
};

std::optional<ojson> read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::is_regular_file(path)) return std::nullopt;
  try {
    return ojson::parse(read_file(path, "manifest"));
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Flat JSON config overlay: values from --config fill every option the user
// did not pass on the command line.

class ConfigOverlay {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, T& target, const std::string& help) {
    auto* opt = app->add_option(flag, target, help);
    std::string key = flag.substr(2);
    std::replace(key.begin(), key.end(), '-', '_');
    bindings_.push_back({key, opt,
                         [&target](const json& v) {
                           if constexpr (std::is_same_v<T, fs::path>)
                             target = v.get<std::string>();
                           else if constexpr (std::is_same_v<T, std::string>)
                             target = v.is_array() ? join_array(v) : v.get<std::string>();
                           else
                             target = v.get<T>();
                         },
                         [&target]() -> ojson {
                           if constexpr (std::is_same_v<T, fs::path>)
                             return target.string();
                           else
                             return target;
                         }});
    return opt;
  }

  void apply(const fs::path& path) {
    json j;
    try {
      j = json::parse(read_file(path, "config"));
    } catch (const json::exception& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + path.string() + " must be a flat JSON object");
    for (const auto& [key, value] : j.items()) {
      auto it = std::find_if(bindings_.begin(), bindings_.end(),
                             [&](const Binding& b) { return b.key == key; });
      if (it == bindings_.end() || key == "config")
        throw ConfigError("config " + path.string() + ": unknown key '" + key + "'");
      if (it->option->count() > 0) continue;
      try {
        it->set(value);
      } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": bad value for '" + key + "': " + e.what());
      }
      from_config_.insert(key);
    }
  }

  void require(std::initializer_list<std::string> keys) const {
    for (const auto& key : keys) {
      const auto& b = binding(key);
      if (b.option->count() == 0 && !from_config_.contains(key))
        throw UsageError(b.option->get_name() + " is required");
    }
  }

  [[nodiscard]] bool given(const std::string& key) const {
    return binding(key).option->count() > 0 || from_config_.contains(key);
  }

  [[nodiscard]] ojson resolved() const {
    ojson out = ojson::object();
    for (const auto& b : bindings_)
      if (b.key != "config") out[b.key] = b.get();
    return out;
  }

 private:
  struct Binding {
    std::string key;
    CLI::Option* option;
    std::function<void(const json&)> set;
    std::function<ojson()> get;
  };

  static std::string join_array(const json& v) {
    std::string out;
    for (const auto& item : v) {
      if (!out.empty()) out += ",";
      out += item.is_string() ? item.get<std::string>() : item.dump();
    }
    return out;
  }

  const Binding& binding(const std::string& key) const {
    for (const auto& b : bindings_)
      if (b.key == key) return b;
    throw std::logic_error("unbound config key " + key);
  }

  std::vector<Binding> bindings_;
  std::set<std::string> from_config_;
};

// ---------------------------------------------------------------------------
// Shared pipeline pieces

std::vector<ProbeQuery> select_split(const std::vector<ProbeQuery>& queries,
                                     const std::string& split) {
  if (split == "full") return queries;
  if (split != "hard") throw UsageError("--split must be 'full' or 'hard', got '" + split + "'");
  std::vector<ProbeQuery> out;
  for (const auto& q : queries)
    if (q.hard) out.push_back(q);
  return out;
}

std::vector<std::string> relation_order(const std::vector<ProbeQuery>& queries) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& q : queries)
    if (seen.insert(q.relation_id).second) out.push_back(q.relation_id);
  return out;
}

int resolve_layer(int requested, const Encoder& encoder) {
  if (requested == 0) return encoder.max_layers();
  if (requested < 1 || requested > encoder.max_layers())
    throw ConfigError("layer limit " + std::to_string(requested) + " outside [1, " +
                      std::to_string(encoder.max_layers()) + "]");
  return requested;
}

std::unique_ptr<TrainableEncoder> load_encoder(const std::string& spec, const fs::path& checkpoint) {
  if (checkpoint.empty()) {
    if (spec.empty()) throw UsageError("--encoder or --checkpoint is required");
    return make_encoder(spec);
  }
  const auto info = read_checkpoint_info(checkpoint);
  auto encoder = make_encoder(spec.empty() ? info.model_id : spec);
  encoder->load_checkpoint(checkpoint);
  return encoder;
}

std::optional<std::uint64_t> checkpoint_seed(const fs::path& checkpoint) {
  if (checkpoint.empty()) return std::nullopt;
  const auto path = checkpoint / "rewire_config.json";
  if (!fs::is_regular_file(path)) return std::nullopt;
  return load_rewire_config(path).seed;
}

/// Sampled and tail-masked training pairs. With PROBEFORGE_CACHE set, pairs
/// are cached there keyed by corpus content and sampling parameters.
std::vector<MaskedPair> build_pairs(const std::string& corpus, const RewireConfig& config) {
  std::optional<fs::path> cache_file;
  if (const char* cache = std::getenv("PROBEFORGE_CACHE"); cache && *cache) {
    std::ostringstream key;
    key << config.num_sentences << '|' << config.seed << '|' << config.mask_ratio;
    char name[64];
    std::snprintf(name, sizeof name, "pairs-%016llx.jsonl",
                  static_cast<unsigned long long>(fnv1a(key.str(), fnv1a(corpus))));
    cache_file = fs::path(cache) / name;
    if (fs::is_regular_file(*cache_file)) {
      std::vector<MaskedPair> pairs;
      std::istringstream in(read_file(*cache_file, "cached pairs"));
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        pairs.push_back({j.at("query").get<std::string>(), j.at("answer").get<std::string>()});
      }
      return pairs;
    }
  }

  std::istringstream in(corpus);
  const auto sentences = sample_sentences(in, config.num_sentences, config.seed);
  std::vector<MaskedPair> pairs;
  for (const auto& s : sentences)
    if (auto p = tail_mask(s, config.mask_ratio)) pairs.push_back(std::move(*p));

  if (cache_file) {
    fs::create_directories(cache_file->parent_path());
    std::ostringstream out;
    for (const auto& p : pairs) out << ojson{{"query", p.query}, {"answer", p.answer}}.dump() << "\n";
    auto tmp = *cache_file;
    tmp += ".tmp" + std::to_string(fnv1a(out.str()) ^ static_cast<std::uint64_t>(
                                                           Clock::now().time_since_epoch().count()));
    write_file(tmp, out.str());
    fs::rename(tmp, *cache_file);
  }
  return pairs;
}

std::string pairs_jsonl(const std::vector<MaskedPair>& pairs) {
  std::ostringstream out;
  for (const auto& p : pairs) out << ojson{{"query", p.query}, {"answer", p.answer}}.dump() << "\n";
  return out.str();
}

/// Runs the k-list-aware evaluation used by both `eval` and `sweep`.
EvalReport evaluate(const std::vector<RankedPrediction>& predictions,
                    const std::vector<ProbeQuery>& dataset, const std::string& split,
                    const std::vector<std::size_t>& ks) {
  const auto queries = select_split(dataset, split);
  if (queries.empty()) throw EmptyDatasetError("split '" + split + "' has no queries");
  const auto hits = score_predictions(predictions, queries, ks);
  const auto expected = relation_order(dataset);
  auto report = aggregate(hits, ks, expected);
  report.split = split;
  return report;
}

struct RewireOverrides {
  std::map<std::string, CLI::Option*> options;
  std::size_t num_sentences = 0, steps = 0, batch_size = 0, checkpoint_every = 0,
              probe_checkpoint_step = 0;
  double mask_ratio = 0, temperature = 0, learning_rate = 0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    options["num_sentences"] = app->add_option("--num-sentences", num_sentences, "Sentences sampled for rewiring");
    options["mask_ratio"] = app->add_option("--mask-ratio", mask_ratio, "Fraction of words masked at the sentence tail");
    options["temperature"] = app->add_option("--temperature", temperature, "InfoNCE temperature");
    options["learning_rate"] = app->add_option("--learning-rate", learning_rate, "SGD learning rate");
    options["steps"] = app->add_option("--steps", steps, "Training steps");
    options["batch_size"] = app->add_option("--batch-size", batch_size, "Pairs per batch");
    options["checkpoint_every"] = app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval in steps");
    options["probe_checkpoint_step"] = app->add_option("--probe-checkpoint-step", probe_checkpoint_step, "Checkpoint used for probing");
    options["seed"] = app->add_option("--seed", seed, "Sampling and shuffling seed");
  }

  RewireConfig resolve(const fs::path& config_path) const {
    RewireConfig c = config_path.empty() ? RewireConfig{} : load_rewire_config(config_path);
    auto given = [this](const char* key) { return options.at(key)->count() > 0; };
    if (given("num_sentences")) c.num_sentences = num_sentences;
    if (given("mask_ratio")) c.mask_ratio = mask_ratio;
    if (given("temperature")) c.temperature = temperature;
    if (given("learning_rate")) c.learning_rate = learning_rate;
    if (given("steps")) c.steps = steps;
    if (given("batch_size")) c.batch_size = batch_size;
    if (given("checkpoint_every")) c.checkpoint_every = checkpoint_every;
    if (given("probe_checkpoint_step")) c.probe_checkpoint_step = probe_checkpoint_step;
    if (given("seed")) c.seed = seed;
    c.validate();
    return c;
  }
};

ojson rewire_config_object(const RewireConfig& c) {
  return ojson::parse(rewire_config_json(c));
}

// ---------------------------------------------------------------------------
// curate

struct CurateArgs {
  fs::path triples, templates, out, config;
  std::size_t max_answers = 10;
  std::size_t per_relation = 1000;
  std::uint64_t seed = 0;
  double match_threshold = 0.1;
  double rouge_threshold = 0.1;
};

void cmd_curate(const CurateArgs& a, const ojson& resolved) {
  Manifest manifest;
  manifest.command = "curate";
  manifest.config = resolved;
  manifest.seed = a.seed;

  const auto loaded = load_triples(a.triples);
  if (loaded.malformed > 0)
    std::cerr << "warning: skipped " << loaded.malformed << " malformed line(s) in "
              << a.triples.string() << " (first at line " << loaded.malformed_lines.front()
              << ")\n";
  const auto registry = a.templates.empty() ? default_templates() : load_templates(a.templates);
  GroupOptions options;
  options.max_answers = a.max_answers;
  options.per_relation_cap = a.per_relation;
  options.seed = a.seed;
  if (a.max_answers < 1) throw ConfigError("--max-answers must be >= 1");
  if (a.per_relation < 1) throw ConfigError("--per-relation must be >= 1");
  const auto queries =
      split_hard(group_queries(loaded.triples, registry, options), {a.match_threshold, a.rouge_threshold});
  if (queries.empty()) throw EmptyDatasetError("no triple matched a template; nothing to curate");

  std::vector<ProbeQuery> hard;
  for (const auto& q : queries)
    if (q.hard) hard.push_back(q);

  std::ostringstream full_out, hard_out, stats;
  write_dataset(queries, full_out);
  write_dataset(hard, hard_out);
  stats << "relation_id,full,hard\n";
  for (const auto& c : relation_counts(queries)) stats << c.relation_id << ',' << c.full << ',' << c.hard << '\n';

  prepare_out(a.out);
  write_file(a.out / "full.jsonl", full_out.str());
  write_file(a.out / "hard.jsonl", hard_out.str());
  write_file(a.out / "stats.csv", stats.str());
  manifest.inputs["triples"] = a.triples.string();
  manifest.inputs["templates"] = a.templates.empty() ? "<built-in>" : a.templates.string();
  manifest.inputs["triples_malformed"] = loaded.malformed;
  manifest.outputs = {"full.jsonl", "hard.jsonl", "stats.csv"};
  manifest.write(a.out);
  std::cout << "curated " << queries.size() << " queries (" << hard.size() << " hard) over "
            << relation_counts(queries).size() << " relations -> " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// rewire

struct RewireArgs {
  std::string encoder;
  fs::path corpus, config, out, resume;
  int layer_limit = 0;
};

void cmd_rewire(const RewireArgs& a, const RewireConfig& config) {
  Manifest manifest;
  manifest.command = "rewire";
  manifest.seed = config.seed;

  auto encoder = load_encoder(a.encoder, a.resume);
  const int layer = resolve_layer(a.layer_limit, *encoder);
  const auto corpus = read_file(a.corpus, "corpus");
  const auto pairs = build_pairs(corpus, config);
  if (config.steps > static_cast<std::size_t>(encoder->step()) && pairs.size() < config.batch_size)
    throw PreconditionError("only " + std::to_string(pairs.size()) + " masked pairs for batch size " +
                            std::to_string(config.batch_size));

  prepare_out(a.out);
  const auto ckpt_root = a.out / "checkpoints";
  auto result = rewire_train(*encoder, pairs, config, {ckpt_root, layer, "[MASK]"});
  const auto final_dir = checkpoint_path(ckpt_root, static_cast<std::size_t>(encoder->step()));
  if (!fs::exists(final_dir / "encoder.json")) {
    encoder->save_checkpoint(final_dir);
    write_file(final_dir / "rewire_config.json", rewire_config_json(config) + "\n");
    result.checkpoints.push_back(final_dir);
  }

  std::ostringstream trace;
  write_loss_trace(result.trace, trace);
  write_file(a.out / "loss_trace.csv", trace.str());
  write_file(a.out / "pairs.jsonl", pairs_jsonl(pairs));
  write_file(a.out / "rewire_config.json", rewire_config_json(config) + "\n");

  manifest.config = rewire_config_object(config);
  manifest.config["encoder"] = encoder->model_id();
  manifest.config["layer_limit"] = layer;
  manifest.inputs["corpus"] = a.corpus.string();
  if (!a.resume.empty()) manifest.inputs["resume"] = a.resume.string();
  manifest.inputs["config"] = a.config.empty() ? "<defaults>" : a.config.string();
  manifest.outputs = {"loss_trace.csv", "pairs.jsonl", "rewire_config.json"};
  for (const auto& c : result.checkpoints) manifest.outputs.push_back(fs::relative(c, a.out).string());
  manifest.write(a.out);

  std::cout << "rewired " << encoder->identity() << " on " << pairs.size() << " pairs";
  if (!result.trace.empty())
    std::cout << ", loss " << format_metric(result.trace.front().loss_mean) << " -> "
              << format_metric(result.trace.back().loss_mean);
  std::cout << " -> " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// probe

struct ProbeArgs {
  std::string encoder;
  fs::path checkpoint, dataset, entities, out, mlm, generator, config;
  std::string strategy = "contrastive";
  std::string split = "full";
  std::string candidate_scope = "full";
  std::size_t k = 10;
  int layer_limit = 0;
  std::size_t num_masks = 5;
  std::string fill_strategy = "independent";
  std::string refine = "none";
  std::size_t max_refine_iters = 10;
};

struct ProbeOutcome {
  std::vector<RankedPrediction> predictions;
  ojson details = ojson::object();
};

ProbeOutcome run_contrastive(TrainableEncoder& encoder, int layer,
                             const std::vector<std::string>& entities,
                             const std::vector<ProbeQuery>& queries, std::size_t k,
                             const std::string& scope) {
  ContrastiveOptions options;
  options.k = k;
  options.layer_limit = layer;
  const auto index = build_entity_index(encoder, entities, layer);
  if (scope == "relation") {
    options.scope = CandidateScope::relation;
    options.relation_candidates = relation_candidate_sets(index, queries);
  } else if (scope != "full") {
    throw UsageError("--candidate-scope must be 'full' or 'relation'");
  }
  ProbeOutcome out;
  out.predictions = contrastive_probe(encoder, index, queries, options);
  out.details["model"] = encoder.identity();
  out.details["checkpoint_step"] = encoder.step();
  out.details["layer_limit"] = layer;
  out.details["entities"] = entities.size();
  out.details["candidate_scope"] = scope;
  return out;
}

void cmd_probe(const ProbeArgs& a, const ojson& resolved) {
  Manifest manifest;
  manifest.command = "probe";
  const auto dataset = load_dataset(a.dataset);
  const auto queries = select_split(dataset, a.split);
  if (queries.empty()) throw EmptyDatasetError("split '" + a.split + "' has no queries");
  if (a.k < 1) throw UsageError("--k must be >= 1");

  ProbeOutcome outcome;
  if (a.strategy == "contrastive") {
    if (a.entities.empty()) throw UsageError("--entities is required for the contrastive strategy");
    auto encoder = load_encoder(a.encoder, a.checkpoint);
    const int layer = resolve_layer(a.layer_limit, *encoder);
    outcome = run_contrastive(*encoder, layer, load_entities(a.entities), queries, a.k, a.candidate_scope);
    manifest.seed = checkpoint_seed(a.checkpoint);
  } else if (a.strategy == "mask-predict") {
    if (a.mlm.empty()) throw UsageError("--mlm is required for the mask-predict strategy");
    const auto mlm = TableMLM::load(a.mlm);
    MaskPredictOptions options;
    options.num_masks = a.num_masks;
    options.strategy = parse_fill_strategy(a.fill_strategy);
    if (a.refine != "none") options.refine = parse_fill_strategy(a.refine);
    options.max_refine_iters = a.max_refine_iters;
    if (a.num_masks < 1) throw UsageError("--num-masks must be >= 1");
    std::size_t unconverged = 0;
    for (const auto& q : queries) {
      MaskPredictResult r;
      try {
        r = mask_predict(mlm, q.query_text, options);
      } catch (const Error& e) {
        throw PreconditionError("query " + q.query_id + ": " + e.what());
      }
      if (!r.converged) ++unconverged;
      outcome.predictions.push_back({q.query_id, {{r.answer, r.log_prob}}, "mask-predict"});
    }
    outcome.details["model"] = mlm.identity();
    outcome.details["unconverged_refinements"] = unconverged;
  } else if (a.strategy == "mask-average") {
    if (a.mlm.empty() || a.entities.empty())
      throw UsageError("--mlm and --entities are required for the mask-average strategy");
    const auto mlm = TableMLM::load(a.mlm);
    const auto entities = load_entities(a.entities);
    std::set<std::string> oov;
    for (const auto& q : queries) {
      auto r = mask_average_rank(mlm, q.query_text, entities, a.k);
      r.prediction.query_id = q.query_id;
      oov.insert(r.out_of_vocab.begin(), r.out_of_vocab.end());
      outcome.predictions.push_back(std::move(r.prediction));
    }
    if (!oov.empty())
      std::cerr << "warning: " << oov.size() << " candidate(s) contain out-of-vocabulary tokens and were not ranked\n";
    outcome.details["model"] = mlm.identity();
    outcome.details["out_of_vocab"] = std::vector<std::string>(oov.begin(), oov.end());
  } else if (a.strategy == "generate") {
    if (a.generator.empty()) throw UsageError("--generator is required for the generate strategy");
    const auto generator = TableGenerator::load(a.generator);
    for (const auto& q : queries)
      outcome.predictions.push_back(generate_probe(generator, q.query_id, q.query_text, a.k));
    outcome.details["model"] = generator.identity();
  } else {
    throw UsageError("unknown --strategy '" + a.strategy + "'");
  }

  std::ostringstream out;
  write_predictions(outcome.predictions, out);
  prepare_out(a.out);
  write_file(a.out / "predictions.jsonl", out.str());
  manifest.config = resolved;
  for (const auto& [key, value] : outcome.details.items()) manifest.config[key] = value;
  manifest.inputs["dataset"] = a.dataset.string();
  if (!a.entities.empty()) manifest.inputs["entities"] = a.entities.string();
  if (!a.checkpoint.empty()) manifest.inputs["checkpoint"] = a.checkpoint.string();
  manifest.outputs = {"predictions.jsonl"};
  manifest.write(a.out);
  std::cout << "probed " << queries.size() << " queries with " << a.strategy << " -> "
            << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  fs::path predictions, dataset, out, annotations, config;
  std::string split = "full";
  std::string k = "1,10";
  std::string length_bins;
  int perfect_threshold = 5;
};

void fill_metadata(EvalReport& report, const fs::path& predictions_dir,
                   const std::vector<RankedPrediction>& predictions) {
  report.strategy = predictions.empty() ? "unknown" : predictions.front().strategy;
  report.model = "unknown";
  const auto manifest = read_manifest(predictions_dir);
  if (!manifest) return;
  const auto& cfg = (*manifest).value("config", ojson::object());
  if (cfg.contains("model") && cfg["model"].is_string()) report.model = cfg["model"].get<std::string>();
  if (cfg.contains("strategy") && cfg["strategy"].is_string())
    report.strategy = cfg["strategy"].get<std::string>();
  if (cfg.contains("layer_limit") && cfg["layer_limit"].is_number_integer())
    report.metadata.layer_limit = cfg["layer_limit"].get<int>();
  if (cfg.contains("checkpoint_step") && cfg["checkpoint_step"].is_number_integer())
    report.metadata.checkpoint_step = cfg["checkpoint_step"].get<std::int64_t>();
  if (manifest->contains("seed") && (*manifest)["seed"].is_number_unsigned())
    report.metadata.seed = (*manifest)["seed"].get<std::uint64_t>();
}

std::string expert_json(const ExpertRescore& r) {
  auto ratios = [&](const std::vector<Ratio>& v) {
    ojson out = ojson::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i)
      out["acc@" + std::to_string(r.ks[i])] = {{"hits", v[i].hits}, {"total", v[i].total},
                                               {"value", v[i].value()}};
    return out;
  };
  ojson j;
  j["ks"] = r.ks;
  j["gold_candidate"] = ratios(r.gold_candidate);
  j["annotated_candidate"] = ratios(r.annotated_candidate);
  j["gold_query"] = ratios(r.gold_query);
  j["annotated_query"] = ratios(r.annotated_query);
  return j.dump(2) + "\n";
}

void cmd_eval(const EvalArgs& a, const ojson& resolved) {
  Manifest manifest;
  manifest.command = "eval";
  manifest.config = resolved;
  const auto ks = parse_ks(a.k);
  std::vector<std::size_t> edges;
  for (const auto& e : split_list(a.length_bins)) edges.push_back(parse_number<std::size_t>(e, "--length-bins"));

  const auto predictions = load_predictions(a.predictions);
  const auto dataset = load_dataset(a.dataset);
  auto report = evaluate(predictions, dataset, a.split, ks);
  fill_metadata(report, a.predictions.parent_path(), predictions);
  manifest.seed = report.metadata.seed;

  std::map<std::string, std::string> files;
  files["report.json"] = report_json(report) + "\n";
  std::ostringstream csv;
  write_report_csv(report, csv);
  files["report.csv"] = csv.str();

  const auto queries = select_split(dataset, a.split);
  if (!edges.empty()) {
    const auto hits = score_predictions(predictions, queries, ks);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      std::vector<int> column;
      for (const auto& h : hits) column.push_back(h.hits[ki]);
      std::ostringstream bins;
      write_length_bins_csv(bin_by_answer_length(queries, column, edges), bins);
      files["length_bins_acc" + std::to_string(ks[ki]) + ".csv"] = bins.str();
    }
  }
  if (!a.annotations.empty()) {
    const auto annotations = load_annotations(a.annotations);
    const auto rescore = expert_rescore(predictions, annotations, queries, ks, a.perfect_threshold);
    std::ostringstream conf;
    write_confusion_csv(rescore.confusion, conf);
    files["confusion.csv"] = conf.str();
    files["expert.json"] = expert_json(rescore);
    manifest.inputs["annotations"] = a.annotations.string();
  }

  prepare_out(a.out);
  for (const auto& [name, content] : files) {
    write_file(a.out / name, content);
    manifest.outputs.push_back(name);
  }
  manifest.inputs["predictions"] = a.predictions.string();
  manifest.inputs["dataset"] = a.dataset.string();
  manifest.write(a.out);

  std::cout << "split " << a.split;
  for (std::size_t i = 0; i < ks.size(); ++i)
    std::cout << "  acc@" << ks[i] << " macro " << format_metric(report.macro[i]) << " micro "
              << format_metric(report.micro[i]);
  std::cout << " -> " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string axis, values, encoder, seeds;
  fs::path corpus, config, checkpoint, dataset, entities, out;
  std::string split = "full";
  std::string k = "1,10";
  std::string candidate_scope = "full";
  int layer_limit = 0;
  std::size_t jobs = 1;
};

constexpr int kDefaultLayers[] = {3, 5, 7, 9, 11, 12};

/// Runs job(i) for i in [0, n) on up to `workers` threads; results keep index order.
template <typename R>
std::vector<R> run_jobs(std::size_t n, std::size_t workers, const std::function<R(std::size_t)>& job) {
  std::vector<R> out(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = job(i);
    return out;
  }
  for (std::size_t begin = 0; begin < n; begin += workers) {
    std::vector<std::future<R>> running;
    for (std::size_t i = begin; i < std::min(n, begin + workers); ++i)
      running.push_back(std::async(std::launch::async, job, i));
    for (std::size_t i = 0; i < running.size(); ++i) out[begin + i] = running[i].get();
  }
  return out;
}

struct SweepContext {
  const SweepArgs& args;
  RewireConfig config;
  std::string corpus;  // empty: no rewiring
  std::vector<ProbeQuery> dataset;
  std::vector<ProbeQuery> queries;
  std::vector<std::string> entities;
  std::vector<std::size_t> ks;
};

EvalReport probe_and_eval(const SweepContext& ctx, TrainableEncoder& encoder, int layer) {
  auto outcome = run_contrastive(encoder, layer, ctx.entities, ctx.queries, ctx.ks.back(),
                                 ctx.args.candidate_scope);
  auto report = evaluate(outcome.predictions, ctx.dataset, ctx.args.split, ctx.ks);
  report.model = encoder.identity();
  report.strategy = "contrastive";
  report.metadata.layer_limit = layer;
  report.metadata.checkpoint_step = encoder.step();
  report.metadata.seed = ctx.config.seed;
  return report;
}

EvalReport train_probe_eval(const SweepContext& ctx, RewireConfig config, int layer_request) {
  auto encoder = load_encoder(ctx.args.encoder, ctx.args.checkpoint);
  const int layer = resolve_layer(layer_request, *encoder);
  if (!ctx.corpus.empty()) {
    const auto pairs = build_pairs(ctx.corpus, config);
    rewire_train(*encoder, pairs, config, {std::nullopt, layer, "[MASK]"});
  }
  auto report = probe_and_eval(ctx, *encoder, layer);
  report.metadata.seed = config.seed;
  return report;
}

std::string sweep_row_metrics(const EvalReport& r) {
  std::string out;
  for (double v : r.macro) out += "," + format_metric(v);
  for (double v : r.micro) out += "," + format_metric(v);
  return out;
}

std::string metric_header(const std::vector<std::size_t>& ks) {
  std::string out;
  for (auto k : ks) out += ",macro_acc" + std::to_string(k);
  for (auto k : ks) out += ",micro_acc" + std::to_string(k);
  return out;
}

void append_per_relation(std::ostringstream& out, const std::string& value, const EvalReport& r) {
  for (const auto& rel : r.per_relation) {
    out << value << ',' << rel.relation_id << ',' << rel.count;
    for (const auto& acc : rel.acc) out << ',' << (acc ? format_metric(*acc) : "");
    out << '\n';
  }
}

void cmd_sweep(const SweepArgs& a, const RewireConfig& config, const ojson& resolved) {
  Manifest manifest;
  manifest.command = "sweep";
  manifest.seed = config.seed;

  static const std::map<std::string, std::string> columns{
      {"layer", "layer_limit"}, {"mask-ratio", "mask_ratio"}, {"checkpoint-step", "step"}, {"seed", "seed"}};
  if (!columns.contains(a.axis))
    throw UsageError("--axis must be one of layer, mask-ratio, checkpoint-step, seed");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  if (a.axis != "layer" && a.corpus.empty())
    throw UsageError("--corpus is required for the " + a.axis + " axis");
  if (a.entities.empty()) throw UsageError("--entities is required");

  SweepContext ctx{a, config, {}, load_dataset(a.dataset), {}, load_entities(a.entities), parse_ks(a.k)};
  ctx.queries = select_split(ctx.dataset, a.split);
  if (ctx.queries.empty()) throw EmptyDatasetError("split '" + a.split + "' has no queries");
  if (!a.corpus.empty()) ctx.corpus = read_file(a.corpus, "corpus");
  const auto probe_encoder = load_encoder(a.encoder, a.checkpoint);  // validates spec and checkpoint early

  std::vector<std::string> values = split_list(a.values);
  const std::string column = columns.at(a.axis);
  std::vector<EvalReport> reports;
  std::map<std::string, std::string> files;
  std::ostringstream per_relation;
  per_relation << column << ",relation_id,count";
  for (auto k : ctx.ks) per_relation << ",acc" << k;
  per_relation << '\n';

  if (a.axis == "layer") {
    const int max = probe_encoder->max_layers();
    std::vector<int> layers;
    if (values.empty()) {
      for (int l : kDefaultLayers)
        if (l <= max) layers.push_back(l);
      if (layers.empty() || layers.back() != max) layers.push_back(max);
    } else {
      for (const auto& v : values) layers.push_back(resolve_layer(parse_number<int>(v, "--values"), *probe_encoder));
    }
    values.clear();
    for (int l : layers) values.push_back(std::to_string(l));
    prepare_out(a.out);
    reports = run_jobs<EvalReport>(layers.size(), a.jobs, [&](std::size_t i) {
      return train_probe_eval(ctx, config, layers[i]);
    });
  } else if (a.axis == "mask-ratio" || a.axis == "seed") {
    if (values.empty()) throw UsageError("--values is required for the " + a.axis + " axis");
    std::vector<RewireConfig> configs;
    for (const auto& v : values) {
      RewireConfig c = config;
      if (a.axis == "seed") c.seed = parse_number<std::uint64_t>(v, "--values");
      else c.mask_ratio = parse_number<double>(v, "--values");
      c.validate();
      configs.push_back(c);
    }
    prepare_out(a.out);
    reports = run_jobs<EvalReport>(configs.size(), a.jobs, [&](std::size_t i) {
      return train_probe_eval(ctx, configs[i], a.layer_limit);
    });
    if (a.axis == "seed" && reports.size() >= 2) {
      const auto summary = stability_summary(reports);
      std::ostringstream s;
      s << "relation_id";
      for (auto k : ctx.ks) s << ",acc" << k << "_mean,acc" << k << "_std";
      s << '\n';
      auto row = [&](const std::string& name, const std::vector<MeanStd>& v) {
        s << name;
        for (const auto& m : v) s << ',' << format_metric(m.mean) << ',' << format_metric(m.std);
        s << '\n';
      };
      for (const auto& rel : relation_order(ctx.queries))
        if (summary.per_relation.contains(rel)) row(rel, summary.per_relation.at(rel));
      row("__macro__", summary.macro);
      files["stability.csv"] = s.str();
    }
  } else {  // checkpoint-step
    std::vector<std::size_t> steps;
    if (values.empty()) {
      for (std::size_t s = config.checkpoint_every; s <= config.steps; s += config.checkpoint_every) steps.push_back(s);
    } else {
      for (const auto& v : values) steps.push_back(parse_number<std::size_t>(v, "--values"));
    }
    for (auto s : steps)
      if (s == 0 || s > config.steps || s % config.checkpoint_every != 0)
        throw ConfigError("checkpoint step " + std::to_string(s) + " is not a saved step (every " +
                          std::to_string(config.checkpoint_every) + " up to " + std::to_string(config.steps) + ")");
    std::vector<std::uint64_t> seeds;
    for (const auto& v : split_list(a.seeds)) seeds.push_back(parse_number<std::uint64_t>(v, "--seeds"));
    if (seeds.empty()) seeds.push_back(config.seed);
    const int layer = resolve_layer(a.layer_limit, *probe_encoder);

    prepare_out(a.out);
    // One training run per seed, then one probe per (seed, step).
    run_jobs<int>(seeds.size(), a.jobs, [&](std::size_t i) {
      RewireConfig c = config;
      c.seed = seeds[i];
      auto encoder = load_encoder(a.encoder, a.checkpoint);
      const auto root = a.out / "checkpoints" / ("seed-" + std::to_string(seeds[i]));
      rewire_train(*encoder, build_pairs(ctx.corpus, c), c, {root, layer, "[MASK]"});
      return 0;
    });
    const std::size_t n = seeds.size() * steps.size();
    auto grid = run_jobs<EvalReport>(n, a.jobs, [&](std::size_t i) {
      const auto seed = seeds[i / steps.size()];
      const auto step = steps[i % steps.size()];
      auto encoder = load_encoder(a.encoder, checkpoint_path(a.out / "checkpoints" / ("seed-" + std::to_string(seed)), step));
      auto report = probe_and_eval(ctx, *encoder, layer);
      report.metadata.seed = seed;
      return report;
    });
    std::map<std::int64_t, std::vector<EvalReport>> by_step;
    for (std::size_t i = 0; i < n; ++i) by_step[static_cast<std::int64_t>(steps[i % steps.size()])].push_back(grid[i]);
    values.clear();
    for (auto s : steps) {
      values.push_back(std::to_string(s));
      // Row metrics average the per-seed reports at this step.
      EvalReport mean = by_step.at(static_cast<std::int64_t>(s)).front();
      const auto& group = by_step.at(static_cast<std::int64_t>(s));
      for (std::size_t ki = 0; ki < ctx.ks.size(); ++ki) {
        double ma = 0, mi = 0;
        for (const auto& r : group) {
          ma += r.macro[ki];
          mi += r.micro[ki];
        }
        mean.macro[ki] = ma / static_cast<double>(group.size());
        mean.micro[ki] = mi / static_cast<double>(group.size());
      }
      reports.push_back(mean);
    }
    for (std::size_t i = 0; i < n; ++i)
      append_per_relation(per_relation, std::to_string(steps[i % steps.size()]) + "/seed=" +
                                            std::to_string(seeds[i / steps.size()]), grid[i]);
    if (seeds.size() >= 2) {
      std::ostringstream curves;
      write_step_curves_csv(step_curves(by_step), curves);
      files["step_curves.csv"] = curves.str();
    }
    manifest.outputs.push_back("checkpoints");
  }

  std::ostringstream sweep;
  sweep << column << metric_header(ctx.ks) << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    sweep << values[i] << sweep_row_metrics(reports[i]) << '\n';
    if (a.axis != "checkpoint-step") append_per_relation(per_relation, values[i], reports[i]);
  }
  files["sweep.csv"] = sweep.str();
  files["per_relation.csv"] = per_relation.str();

  for (const auto& [name, content] : files) {
    write_file(a.out / name, content);
    manifest.outputs.push_back(name);
  }
  manifest.config = resolved;
  manifest.config["rewire"] = rewire_config_object(config);
  manifest.config["values"] = values;
  manifest.inputs["dataset"] = a.dataset.string();
  manifest.inputs["entities"] = a.entities.string();
  if (!a.corpus.empty()) manifest.inputs["corpus"] = a.corpus.string();
  manifest.write(a.out);
  std::cout << "swept " << a.axis << " over " << values.size() << " value(s) -> " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------
// demo

struct DemoArgs {
  fs::path out;
  fs::path data = PROBEFORGE_DEFAULT_DATA_DIR;
  std::string encoder = "reference:dim=64,seed=7";
  std::uint64_t seed = 7;
};

void cmd_demo(const DemoArgs& a) {
  Manifest manifest;
  manifest.command = "demo";
  manifest.seed = a.seed;
  const auto fixtures = a.data / "fixtures";
  for (const char* name : {"triples.tsv", "corpus.txt", "entities.txt", "rewire_config.json"})
    require_file(fixtures / name, "fixture");
  require_file(a.data / "templates.json", "templates");

  CurateArgs curate{fixtures / "triples.tsv", a.data / "templates.json", a.out / "curate", {}, 10, 1000, a.seed, 0.1, 0.1};
  cmd_curate(curate, {{"seed", a.seed}});

  RewireConfig config = load_rewire_config(fixtures / "rewire_config.json");
  config.seed = a.seed;
  config.validate();
  cmd_rewire({a.encoder, fixtures / "corpus.txt", fixtures / "rewire_config.json", a.out / "rewire", {}, 0}, config);

  const auto probe_step = std::min(config.probe_checkpoint_step, config.steps);
  ProbeArgs probe;
  probe.checkpoint = checkpoint_path(a.out / "rewire" / "checkpoints", probe_step);
  if (!fs::exists(probe.checkpoint))
    probe.checkpoint = checkpoint_path(a.out / "rewire" / "checkpoints", config.steps);
  probe.dataset = a.out / "curate" / "full.jsonl";
  probe.entities = fixtures / "entities.txt";
  probe.out = a.out / "probe";
  cmd_probe(probe, {{"strategy", "contrastive"}, {"k", 10}});

  for (const std::string split : {"full", "hard"}) {
    EvalArgs eval;
    eval.predictions = probe.out / "predictions.jsonl";
    eval.dataset = probe.dataset;
    eval.out = a.out / ("eval-" + split);
    eval.split = split;
    cmd_eval(eval, {{"split", split}, {"k", "1,10"}});
  }

  manifest.config = {{"encoder", a.encoder}, {"data", a.data.string()}};
  manifest.outputs = {"curate", "rewire", "probe", "eval-full", "eval-hard"};
  manifest.write(a.out);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Cloze-style knowledge probing toolkit", "probeforge"};
  app.set_version_flag("--version", std::string(PROBEFORGE_VERSION));
  app.require_subcommand(1);

  // curate
  CurateArgs curate;
  ConfigOverlay curate_cfg;
  auto* c = app.add_subcommand("curate", "Build probing queries from knowledge triples");
  curate_cfg.add(c, "--triples", curate.triples, "Tab-separated triples file");
  curate_cfg.add(c, "--templates", curate.templates, "Template JSON (default: built-in set)");
  curate_cfg.add(c, "--out", curate.out, "Output directory");
  curate_cfg.add(c, "--max-answers", curate.max_answers, "Drop groups with more answers");
  curate_cfg.add(c, "--per-relation", curate.per_relation, "Queries sampled per relation");
  curate_cfg.add(c, "--seed", curate.seed, "Sampling seed");
  curate_cfg.add(c, "--match-threshold", curate.match_threshold, "Hard-set avg-match threshold");
  curate_cfg.add(c, "--rouge-threshold", curate.rouge_threshold, "Hard-set ROUGE-L threshold");
  curate_cfg.add(c, "--config", curate.config, "Flat JSON config; flags take precedence");

  // rewire
  RewireArgs rewire;
  RewireOverrides rewire_over;
  auto* r = app.add_subcommand("rewire", "Contrastively rewire an encoder on raw sentences");
  auto* r_enc = r->add_option("--encoder", rewire.encoder, "Encoder spec, e.g. reference:dim=128,seed=7");
  auto* r_corpus = r->add_option("--corpus", rewire.corpus, "One sentence per line");
  r->add_option("--config", rewire.config, "Flat JSON rewiring config; flags take precedence");
  auto* r_out = r->add_option("--out", rewire.out, "Output directory");
  r->add_option("--resume", rewire.resume, "Continue from a checkpoint directory");
  r->add_option("--layer-limit", rewire.layer_limit, "Train on the output of this block (0: all)");
  rewire_over.add(r);

  // probe
  ProbeArgs probe;
  ConfigOverlay probe_cfg;
  auto* p = app.add_subcommand("probe", "Rank answers for every query");
  probe_cfg.add(p, "--encoder", probe.encoder, "Encoder spec (default: from the checkpoint)");
  probe_cfg.add(p, "--checkpoint", probe.checkpoint, "Rewired checkpoint directory");
  probe_cfg.add(p, "--dataset", probe.dataset, "Curated JSONL dataset");
  probe_cfg.add(p, "--entities", probe.entities, "Entity vocabulary, one name per line");
  probe_cfg.add(p, "--strategy", probe.strategy, "contrastive | mask-predict | mask-average | generate")
      ->check(CLI::IsMember({"contrastive", "mask-predict", "mask-average", "generate"}));
  probe_cfg.add(p, "--split", probe.split, "full | hard")->check(CLI::IsMember({"full", "hard"}));
  probe_cfg.add(p, "--candidate-scope", probe.candidate_scope, "full | relation")
      ->check(CLI::IsMember({"full", "relation"}));
  probe_cfg.add(p, "--k", probe.k, "Candidates kept per query");
  probe_cfg.add(p, "--layer-limit", probe.layer_limit, "Encoder blocks used (0: all)");
  probe_cfg.add(p, "--mlm", probe.mlm, "Table MLM JSON for mask-predict and mask-average");
  probe_cfg.add(p, "--generator", probe.generator, "Table generator JSON for generate");
  probe_cfg.add(p, "--num-masks", probe.num_masks, "Mask tokens for mask-predict");
  probe_cfg.add(p, "--fill-strategy", probe.fill_strategy, "independent | order | confidence")
      ->check(CLI::IsMember({"independent", "order", "confidence"}));
  probe_cfg.add(p, "--refine", probe.refine, "none | independent | order | confidence")
      ->check(CLI::IsMember({"none", "independent", "order", "confidence"}));
  probe_cfg.add(p, "--max-refine-iters", probe.max_refine_iters, "Refinement sweep limit");
  probe_cfg.add(p, "--out", probe.out, "Output directory");
  probe_cfg.add(p, "--config", probe.config, "Flat JSON config; flags take precedence");

  // eval
  EvalArgs eval;
  ConfigOverlay eval_cfg;
  auto* e = app.add_subcommand("eval", "Score predictions against a dataset");
  eval_cfg.add(e, "--predictions", eval.predictions, "Predictions JSONL");
  eval_cfg.add(e, "--dataset", eval.dataset, "Curated JSONL dataset");
  eval_cfg.add(e, "--split", eval.split, "full | hard")->check(CLI::IsMember({"full", "hard"}));
  eval_cfg.add(e, "--k", eval.k, "Comma-separated k list");
  eval_cfg.add(e, "--out", eval.out, "Output directory");
  eval_cfg.add(e, "--annotations", eval.annotations, "Expert scores CSV (query_id,candidate,score)");
  eval_cfg.add(e, "--length-bins", eval.length_bins, "Comma-separated answer-length bin edges");
  eval_cfg.add(e, "--perfect-threshold", eval.perfect_threshold, "Annotation score counted as a hit");
  eval_cfg.add(e, "--config", eval.config, "Flat JSON config; flags take precedence");

  // sweep
  SweepArgs sweep;
  RewireOverrides sweep_over;
  ConfigOverlay sweep_cfg;
  auto* s = app.add_subcommand("sweep", "Repeat rewire, probe and eval over one axis");
  sweep_cfg.add(s, "--axis", sweep.axis, "layer | mask-ratio | checkpoint-step | seed")
      ->check(CLI::IsMember({"layer", "mask-ratio", "checkpoint-step", "seed"}));
  sweep_cfg.add(s, "--values", sweep.values, "Comma-separated axis values");
  sweep_cfg.add(s, "--seeds", sweep.seeds, "Sentence-sample seeds for the checkpoint-step axis");
  sweep_cfg.add(s, "--encoder", sweep.encoder, "Encoder spec");
  sweep_cfg.add(s, "--checkpoint", sweep.checkpoint, "Start from this checkpoint");
  sweep_cfg.add(s, "--corpus", sweep.corpus, "Rewiring corpus (omit to probe without training)");
  sweep_cfg.add(s, "--dataset", sweep.dataset, "Curated JSONL dataset");
  sweep_cfg.add(s, "--entities", sweep.entities, "Entity vocabulary");
  sweep_cfg.add(s, "--split", sweep.split, "full | hard")->check(CLI::IsMember({"full", "hard"}));
  sweep_cfg.add(s, "--k", sweep.k, "Comma-separated k list");
  sweep_cfg.add(s, "--candidate-scope", sweep.candidate_scope, "full | relation")
      ->check(CLI::IsMember({"full", "relation"}));
  sweep_cfg.add(s, "--layer-limit", sweep.layer_limit, "Layer for non-layer axes (0: all)");
  sweep_cfg.add(s, "--jobs", sweep.jobs, "Parallel sub-jobs");
  sweep_cfg.add(s, "--out", sweep.out, "Output directory");
  s->add_option("--config", sweep.config, "Flat JSON rewiring config; flags take precedence");
  sweep_over.add(s);

  // demo
  DemoArgs demo;
  auto* d = app.add_subcommand("demo", "Run the whole pipeline on the bundled fixtures");
  d->add_option("--out", demo.out, "Output directory")->required();
  d->add_option("--data", demo.data, "Directory holding templates.json and fixtures/");
  d->add_option("--encoder", demo.encoder, "Encoder spec");
  d->add_option("--seed", demo.seed, "Seed for every stage");

  auto usage = [&](const std::string& message) {
    std::cerr << "error: " << message << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.back()->help());
    return kExitUsage;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    return usage(ex.what());
  }

  try {
    if (c->parsed()) {
      if (!curate.config.empty()) curate_cfg.apply(curate.config);
      curate_cfg.require({"triples", "out"});
      cmd_curate(curate, curate_cfg.resolved());
    } else if (r->parsed()) {
      if (r_corpus->count() == 0) throw UsageError("--corpus is required");
      if (r_out->count() == 0) throw UsageError("--out is required");
      if (r_enc->count() == 0 && rewire.resume.empty()) throw UsageError("--encoder is required");
      cmd_rewire(rewire, rewire_over.resolve(rewire.config));
    } else if (p->parsed()) {
      if (!probe.config.empty()) probe_cfg.apply(probe.config);
      probe_cfg.require({"dataset", "out"});
      cmd_probe(probe, probe_cfg.resolved());
    } else if (e->parsed()) {
      if (!eval.config.empty()) eval_cfg.apply(eval.config);
      eval_cfg.require({"predictions", "dataset", "out"});
      cmd_eval(eval, eval_cfg.resolved());
    } else if (s->parsed()) {
      sweep_cfg.require({"axis", "dataset", "entities", "out"});
      if (!sweep_cfg.given("encoder") && !sweep_cfg.given("checkpoint"))
        throw UsageError("--encoder or --checkpoint is required");
      cmd_sweep(sweep, sweep_over.resolve(sweep.config), sweep_cfg.resolved());
    } else if (d->parsed()) {
      cmd_demo(demo);
    }
  } catch (const UsageError& ex) {
    return usage(ex.what());
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace probeforge
