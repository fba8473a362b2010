#include "probeforge/probers.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_map>

#include "probeforge/errors.hpp"
#include "probeforge/text.hpp"

namespace probeforge {

using nlohmann::json;

EntityIndex build_entity_index(const Encoder& encoder, std::vector<std::string> entity_names,
                               int layer_limit) {
  if (entity_names.empty()) throw ConfigError("entity index needs at least one entity");
  std::map<std::string, std::vector<std::string>> by_norm;
  for (const auto& name : entity_names) by_norm[normalize_answer(name)].push_back(name);
  std::vector<std::string> dups;
  for (const auto& [norm, names] : by_norm)
    if (names.size() > 1) dups.push_back("'" + join(names, "' = '") + "'");
  if (!dups.empty())
    throw ValidationError("duplicate entity names after normalization: " + join(dups, ", "));

  EntityIndex index;
  index.vectors = unit_rows(encoder.encode(entity_names, layer_limit));
  for (Eigen::Index r = 0; r < index.vectors.rows(); ++r)
    if (!index.vectors.row(r).allFinite())
      throw NumericalError("entity '" + entity_names[static_cast<std::size_t>(r)] +
                           "' encodes to a zero or non-finite vector");
  index.entity_names = std::move(entity_names);
  index.encoder_identity = encoder.identity();
  index.layer_limit = layer_limit;
  return index;
}

std::vector<std::string> load_entities(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read entity vocabulary " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto name = trim(line);
    if (!name.empty()) out.push_back(std::move(name));
  }
  return out;
}

std::map<std::string, std::vector<std::size_t>> relation_candidate_sets(
    const EntityIndex& index, std::span<const ProbeQuery> queries) {
  std::unordered_map<std::string, std::size_t> lookup;
  for (std::size_t i = 0; i < index.entity_names.size(); ++i)
    lookup.emplace(normalize_answer(index.entity_names[i]), i);
  std::map<std::string, std::set<std::size_t>> sets;
  for (const auto& q : queries) {
    auto& s = sets[q.relation_id];
    for (const auto& a : q.answers)
      if (auto it = lookup.find(normalize_answer(a)); it != lookup.end()) s.insert(it->second);
  }
  std::map<std::string, std::vector<std::size_t>> out;
  for (auto& [rel, s] : sets) out[rel] = {s.begin(), s.end()};
  return out;
}

std::vector<RankedPrediction> contrastive_probe(const Encoder& encoder, const EntityIndex& index,
                                                std::span<const ProbeQuery> queries,
                                                const ContrastiveOptions& options) {
  if (index.encoder_identity != encoder.identity())
    throw ConfigError("entity index was built by '" + index.encoder_identity +
                      "' but the probing encoder is '" + encoder.identity() + "'");
  if (queries.empty()) return {};
  const int layer_limit = options.layer_limit > 0 ? options.layer_limit : index.layer_limit;

  std::vector<std::string> texts;
  texts.reserve(queries.size());
  for (const auto& q : queries) texts.push_back(q.query_text);
  const Matrix qv = unit_rows(encoder.encode(texts, layer_limit));

  std::vector<RankedPrediction> out;
  out.reserve(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    RankedPrediction p{queries[qi].query_id, {}, "contrastive"};
    // One matrix-vector product per query: every entity row is accumulated in
    // the same order, so identical unit rows tie exactly.
    const Vector col = index.vectors * qv.row(static_cast<Eigen::Index>(qi)).transpose();
    if (options.scope == CandidateScope::relation) {
      auto it = options.relation_candidates.find(queries[qi].relation_id);
      if (it != options.relation_candidates.end() && !it->second.empty()) {
        Vector sub(static_cast<Eigen::Index>(it->second.size()));
        for (std::size_t j = 0; j < it->second.size(); ++j)
          sub(static_cast<Eigen::Index>(j)) = col(static_cast<Eigen::Index>(it->second[j]));
        for (auto j : top_k_indices(sub, options.k)) {
          const auto e = it->second[static_cast<std::size_t>(j)];
          p.candidates.emplace_back(index.entity_names[e], sub(j));
        }
      }
    } else {
      for (auto e : top_k_indices(col, options.k))
        p.candidates.emplace_back(index.entity_names[static_cast<std::size_t>(e)], col(e));
    }
    out.push_back(std::move(p));
  }
  return out;
}

FillStrategy parse_fill_strategy(std::string_view name) {
  if (name == "independent") return FillStrategy::independent;
  if (name == "order") return FillStrategy::order;
  if (name == "confidence") return FillStrategy::confidence;
  throw ConfigError("unknown fill strategy '" + std::string(name) + "'");
}

std::string_view to_string(FillStrategy strategy) {
  switch (strategy) {
    case FillStrategy::independent: return "independent";
    case FillStrategy::order: return "order";
    case FillStrategy::confidence: return "confidence";
  }
  return "?";
}

namespace {

struct Best {
  Eigen::Index token = 0;
  double log_prob = -std::numeric_limits<double>::infinity();
};

Best row_argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  Best b;
  for (Eigen::Index i = 0; i < row.size(); ++i)
    if (row(i) > b.log_prob) b = {i, row(i)};
  return b;
}

std::string expand_placeholder(std::string_view query, std::string_view placeholder,
                               std::string_view native, std::size_t count) {
  const auto n = count_occurrences(query, placeholder);
  if (n == 0) throw PreconditionError("query has no mask placeholder: " + std::string(query));
  if (n > 1)
    throw PreconditionError("query must contain the mask placeholder once: " + std::string(query));
  std::vector<std::string> masks(count, std::string(native));
  std::string out(query);
  out.replace(out.find(placeholder), placeholder.size(), join(masks, " "));
  return out;
}

class Filler {
 public:
  Filler(const MaskedLM& mlm, std::vector<std::string> tokens, std::vector<std::size_t> slots)
      : mlm_(mlm), tokens_(std::move(tokens)), slots_(std::move(slots)) {}

  Matrix score(std::span<const std::size_t> slot_ids) const {
    std::vector<std::size_t> positions;
    positions.reserve(slot_ids.size());
    for (auto s : slot_ids) positions.push_back(slots_[s]);
    return mlm_.score_masks(tokens_, positions);
  }
  void fill(std::size_t slot, Eigen::Index token) {
    tokens_[slots_[slot]] = mlm_.vocab()[static_cast<std::size_t>(token)];
  }
  void set(std::size_t slot, std::string token) { tokens_[slots_[slot]] = std::move(token); }
  const std::string& token(std::size_t slot) const { return tokens_[slots_[slot]]; }
  std::size_t size() const { return slots_.size(); }

  /// Best token for `slot` with that slot masked and every other slot as is.
  /// The slot's current token is left in place.
  Best repredict(std::size_t slot) {
    auto keep = token(slot);
    set(slot, mlm_.mask_token());
    const std::size_t ids[] = {slot};
    const Best b = row_argmax(score(ids).row(0));
    set(slot, std::move(keep));
    return b;
  }

  /// Log-probability of the current token at `slot` given all other slots.
  double token_log_prob(std::size_t slot) {
    const auto id = mlm_.token_id(token(slot));
    auto keep = token(slot);
    set(slot, mlm_.mask_token());
    const std::size_t ids[] = {slot};
    const Matrix lp = score(ids);
    set(slot, std::move(keep));
    return id ? lp(0, static_cast<Eigen::Index>(*id)) : -std::numeric_limits<double>::infinity();
  }

  std::vector<std::string> span() const {
    std::vector<std::string> out;
    for (std::size_t s = 0; s < slots_.size(); ++s) out.push_back(token(s));
    return out;
  }

 private:
  const MaskedLM& mlm_;
  std::vector<std::string> tokens_;
  std::vector<std::size_t> slots_;
};

void initial_fill(Filler& f, FillStrategy strategy) {
  std::vector<std::size_t> open(f.size());
  std::iota(open.begin(), open.end(), std::size_t{0});
  if (strategy == FillStrategy::independent) {
    const Matrix lp = f.score(open);
    for (std::size_t s = 0; s < open.size(); ++s)
      f.fill(s, row_argmax(lp.row(static_cast<Eigen::Index>(s))).token);
    return;
  }
  while (!open.empty()) {
    const Matrix lp = f.score(open);
    std::size_t pick = 0;
    Best best = row_argmax(lp.row(0));
    if (strategy == FillStrategy::confidence) {
      for (std::size_t i = 1; i < open.size(); ++i) {
        const Best b = row_argmax(lp.row(static_cast<Eigen::Index>(i)));
        if (b.log_prob > best.log_prob) {
          best = b;
          pick = i;
        }
      }
    }
    f.fill(open[pick], best.token);
    open.erase(open.begin() + static_cast<long>(pick));
  }
}

/// One refinement sweep; returns whether any token changed.
bool refine_sweep(Filler& f, FillStrategy strategy) {
  const std::size_t n = f.size();
  bool changed = false;
  if (strategy == FillStrategy::independent) {
    std::vector<Best> picks(n);
    for (std::size_t s = 0; s < n; ++s) picks[s] = f.repredict(s);
    for (std::size_t s = 0; s < n; ++s) {
      const auto before = f.token(s);
      f.fill(s, picks[s].token);
      changed = changed || f.token(s) != before;
    }
    return changed;
  }
  std::vector<std::size_t> visit(n);
  std::iota(visit.begin(), visit.end(), std::size_t{0});
  if (strategy == FillStrategy::confidence) {
    std::vector<double> conf(n);
    for (std::size_t s = 0; s < n; ++s) conf[s] = f.repredict(s).log_prob;
    std::stable_sort(visit.begin(), visit.end(),
                     [&conf](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  }
  for (auto s : visit) {
    const auto before = f.token(s);
    f.fill(s, f.repredict(s).token);
    changed = changed || f.token(s) != before;
  }
  return changed;
}

}  // namespace

MaskPredictResult mask_predict(const MaskedLM& mlm, std::string_view query,
                               const MaskPredictOptions& options) {
  if (options.num_masks < 1) throw PreconditionError("num_masks must be >= 1");
  const auto native = mlm.mask_token();
  const auto text = expand_placeholder(query, options.placeholder, native, options.num_masks);
  auto tokens = mlm.tokenize(text);
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == native) slots.push_back(i);
  if (slots.size() != options.num_masks)
    throw PreconditionError("query already contains native mask tokens: " + std::string(query));

  Filler f(mlm, std::move(tokens), std::move(slots));
  initial_fill(f, options.strategy);

  MaskPredictResult result;
  if (options.refine) {
    result.converged = false;
    while (result.refine_sweeps < options.max_refine_iters) {
      ++result.refine_sweeps;
      if (!refine_sweep(f, *options.refine)) {
        result.converged = true;
        break;
      }
    }
  }
  result.tokens = f.span();
  result.answer = mlm.detokenize(result.tokens);
  for (std::size_t s = 0; s < f.size(); ++s) result.log_prob += f.token_log_prob(s);
  return result;
}

MaskAverageResult mask_average_rank(const MaskedLM& mlm, std::string_view query,
                                    std::span<const std::string> candidates, std::size_t k,
                                    std::string_view placeholder) {
  if (candidates.empty()) throw PreconditionError("mask average needs candidates");
  const auto native = mlm.mask_token();
  std::map<std::size_t, Matrix> pass_by_length;  // one forward pass per span length

  MaskAverageResult result;
  std::vector<std::string> kept;
  std::vector<double> scores;
  std::set<std::string> seen;
  for (const auto& cand : candidates) {
    if (!seen.insert(cand).second) continue;
    const auto toks = mlm.tokenize(cand);
    std::vector<std::size_t> ids;
    bool oov = toks.empty();
    for (const auto& t : toks) {
      auto id = mlm.token_id(t);
      if (!id) {
        oov = true;
        break;
      }
      ids.push_back(*id);
    }
    if (oov) {
      result.out_of_vocab.push_back(cand);
      continue;
    }
    const std::size_t m = ids.size();
    auto it = pass_by_length.find(m);
    if (it == pass_by_length.end()) {
      auto scored = mask_logprobs(mlm, expand_placeholder(query, placeholder, native, m), native);
      it = pass_by_length.emplace(m, std::move(scored.log_probs)).first;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      total += it->second(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ids[i]));
    kept.push_back(cand);
    scores.push_back(total / static_cast<double>(m));
  }

  result.prediction.strategy = "mask-average";
  const Eigen::Map<const Vector> sv(scores.data(), static_cast<Eigen::Index>(scores.size()));
  for (auto i : top_k_indices(sv, k))
    result.prediction.candidates.emplace_back(kept[static_cast<std::size_t>(i)], sv(i));
  return result;
}

RankedPrediction generate_probe(const Generator& generator, std::string_view query_id,
                                std::string_view query, std::size_t k) {
  std::vector<ScoredText> raw;
  try {
    raw = generator.generate(query);
  } catch (const std::exception& e) {
    throw Error("generator failed on query '" + std::string(query_id) + "': " + e.what());
  }
  // Dedupe on the trimmed string, keeping the best score.
  std::vector<ScoredText> uniq;
  std::unordered_map<std::string, std::size_t> at;
  for (auto& [text, score] : raw) {
    auto t = trim(text);
    if (t.empty()) continue;
    auto [it, fresh] = at.try_emplace(t, uniq.size());
    if (fresh) uniq.emplace_back(std::move(t), score);
    else uniq[it->second].second = std::max(uniq[it->second].second, score);
  }
  std::stable_sort(uniq.begin(), uniq.end(),
                   [](const ScoredText& a, const ScoredText& b) { return a.second > b.second; });
  if (uniq.size() > k) uniq.resize(k);
  return {std::string(query_id), std::move(uniq), "generate"};
}

void write_predictions(std::span<const RankedPrediction> predictions, std::ostream& out) {
  for (const auto& p : predictions) {
    nlohmann::ordered_json j;
    j["query_id"] = p.query_id;
    j["strategy"] = p.strategy;
    auto cands = nlohmann::ordered_json::array();
    for (const auto& [text, score] : p.candidates) cands.push_back({text, score});
    j["candidates"] = std::move(cands);
    out << j.dump() << '\n';
  }
}

std::vector<RankedPrediction> read_predictions(std::istream& in) {
  std::vector<RankedPrediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      RankedPrediction p;
      p.query_id = j.at("query_id").get<std::string>();
      p.strategy = j.at("strategy").get<std::string>();
      for (const auto& c : j.at("candidates"))
        p.candidates.emplace_back(c.at(0).get<std::string>(), c.at(1).get<double>());
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ValidationError("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_predictions(std::span<const RankedPrediction> predictions,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_predictions(predictions, out);
}

std::vector<RankedPrediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read predictions " + path.string());
  return read_predictions(in);
}

}  // namespace probeforge
