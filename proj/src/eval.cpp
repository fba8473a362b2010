#include "probeforge/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "probeforge/errors.hpp"
#include "probeforge/text.hpp"

namespace probeforge {

using nlohmann::ordered_json;

int hit_at_k(const RankedPrediction& prediction, std::span<const std::string> answers,
             std::size_t k) {
  if (k < 1) throw PreconditionError("k must be >= 1");
  std::unordered_set<std::string> gold;
  for (const auto& a : answers) gold.insert(normalize_for_match(a));
  const auto n = std::min(k, prediction.candidates.size());
  for (std::size_t i = 0; i < n; ++i)
    if (gold.contains(normalize_for_match(prediction.candidates[i].first))) return 1;
  return 0;
}

std::vector<QueryHits> score_predictions(std::span<const RankedPrediction> predictions,
                                         std::span<const ProbeQuery> queries,
                                         std::span<const std::size_t> ks) {
  std::unordered_map<std::string, const RankedPrediction*> by_id;
  for (const auto& p : predictions)
    if (!by_id.emplace(p.query_id, &p).second)
      throw ValidationError("duplicate prediction for query '" + p.query_id + "'");
  std::vector<QueryHits> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    auto it = by_id.find(q.query_id);
    if (it == by_id.end()) throw ValidationError("no prediction for query '" + q.query_id + "'");
    QueryHits h{q.query_id, q.relation_id, {}};
    for (auto k : ks) h.hits.push_back(hit_at_k(*it->second, q.answers, k));
    out.push_back(std::move(h));
  }
  return out;
}

const RelationAccuracy* EvalReport::relation(std::string_view id) const {
  for (const auto& r : per_relation)
    if (r.relation_id == id) return &r;
  return nullptr;
}

EvalReport aggregate(std::span<const QueryHits> hits, std::span<const std::size_t> ks,
                     std::span<const std::string> expected_relations) {
  EvalReport report;
  report.ks.assign(ks.begin(), ks.end());
  const std::size_t nk = ks.size();

  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> sums;
  auto slot = [&](const std::string& rel) {
    auto [it, fresh] = index.try_emplace(rel, report.per_relation.size());
    if (fresh) {
      report.per_relation.push_back({rel, 0, {}});
      sums.emplace_back(nk, 0);
    }
    return it->second;
  };
  for (const auto& rel : expected_relations) slot(rel);
  for (const auto& h : hits) {
    if (h.hits.size() != nk) throw PreconditionError("hit vector does not match the k list");
    const auto i = slot(h.relation_id);
    ++report.per_relation[i].count;
    for (std::size_t k = 0; k < nk; ++k) sums[i][k] += static_cast<std::size_t>(h.hits[k] != 0);
  }

  report.macro.assign(nk, 0.0);
  report.micro.assign(nk, 0.0);
  std::vector<std::size_t> total_hits(nk, 0);
  std::size_t total = 0, used = 0;
  for (std::size_t i = 0; i < report.per_relation.size(); ++i) {
    auto& r = report.per_relation[i];
    if (r.count == 0) {
      r.acc.assign(nk, std::nullopt);
      report.metadata.excluded_relations.push_back(r.relation_id);
      continue;
    }
    ++used;
    total += r.count;
    for (std::size_t k = 0; k < nk; ++k) {
      const double acc = static_cast<double>(sums[i][k]) / static_cast<double>(r.count);
      r.acc.emplace_back(acc);
      report.macro[k] += acc;
      total_hits[k] += sums[i][k];
    }
  }
  for (std::size_t k = 0; k < nk; ++k) {
    if (used) report.macro[k] /= static_cast<double>(used);
    if (total) report.micro[k] = static_cast<double>(total_hits[k]) / static_cast<double>(total);
  }
  return report;
}

std::vector<LengthBin> bin_by_answer_length(std::span<const ProbeQuery> queries,
                                            std::span<const int> hits,
                                            std::span<const std::size_t> bin_edges) {
  if (queries.size() != hits.size()) throw PreconditionError("one hit per query is required");
  for (std::size_t i = 1; i < bin_edges.size(); ++i)
    if (bin_edges[i] <= bin_edges[i - 1])
      throw PreconditionError("bin edges must be strictly increasing");

  std::vector<LengthBin> bins(bin_edges.size() + 1);
  std::vector<std::size_t> bin_hits(bins.size(), 0);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lower = b == 0 ? 0 : bin_edges[b - 1];
    if (b < bin_edges.size()) bins[b].upper = bin_edges[b];
  }
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (const auto& a : queries[i].answers) shortest = std::min(shortest, a.size());
    const auto b = static_cast<std::size_t>(
        std::upper_bound(bin_edges.begin(), bin_edges.end(), shortest) - bin_edges.begin());
    ++bins[b].count;
    bin_hits[b] += static_cast<std::size_t>(hits[i] != 0);
  }
  for (std::size_t b = 0; b < bins.size(); ++b)
    if (bins[b].count)
      bins[b].acc = static_cast<double>(bin_hits[b]) / static_cast<double>(bins[b].count);
  return bins;
}

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(var / static_cast<double>(xs.size()));
  return m;
}

std::set<std::string> scored_relations(const EvalReport& r) {
  std::set<std::string> out;
  for (const auto& rel : r.per_relation)
    if (rel.count) out.insert(rel.relation_id);
  return out;
}

}  // namespace

StabilitySummary stability_summary(std::span<const EvalReport> reports) {
  if (reports.size() < 2)
    throw ValidationError("stability summary needs at least two reports, got " +
                          std::to_string(reports.size()));
  const auto rels = scored_relations(reports[0]);
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (scored_relations(reports[i]) != rels)
      throw ValidationError("report " + std::to_string(i) + " covers a different relation set");
    if (reports[i].ks != reports[0].ks)
      throw ValidationError("report " + std::to_string(i) + " uses a different k list");
  }
  StabilitySummary s;
  s.ks = reports[0].ks;
  for (const auto& rel : rels) {
    auto& row = s.per_relation[rel];
    for (std::size_t k = 0; k < s.ks.size(); ++k) {
      std::vector<double> xs;
      for (const auto& r : reports) xs.push_back(r.relation(rel)->acc[k].value_or(0.0));
      row.push_back(mean_std(xs));
    }
  }
  for (std::size_t k = 0; k < s.ks.size(); ++k) {
    std::vector<double> xs;
    for (const auto& r : reports) xs.push_back(r.macro[k]);
    s.macro.push_back(mean_std(xs));
  }
  return s;
}

std::vector<StepCurveRow> step_curves(
    const std::map<std::int64_t, std::vector<EvalReport>>& by_step) {
  std::vector<StepCurveRow> rows;
  for (const auto& [step, reports] : by_step) {
    const auto s = stability_summary(reports);
    const auto k1 = static_cast<std::size_t>(
        std::find(s.ks.begin(), s.ks.end(), std::size_t{1}) - s.ks.begin());
    if (k1 == s.ks.size()) throw ValidationError("step curves need acc@1 in the reports");
    for (const auto& [rel, vals] : s.per_relation)
      rows.push_back({step, rel, vals[k1].mean, vals[k1].std});
    rows.push_back({step, "__macro__", s.macro[k1].mean, s.macro[k1].std});
  }
  return rows;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::vector<ExpertAnnotation> read_annotations(std::istream& in) {
  std::vector<ExpertAnnotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (lineno == 1 && !f.empty() && trim(f[0]) == "query_id") continue;
    const auto where = "annotations line " + std::to_string(lineno) + ": ";
    if (f.size() != 3) throw ValidationError(where + "expected query_id,candidate,score");
    int score = 0;
    try {
      std::size_t used = 0;
      score = std::stoi(trim(f[2]), &used);
      if (used != trim(f[2]).size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ValidationError(where + "score '" + f[2] + "' is not an integer");
    }
    if (score < 1 || score > 5) throw ValidationError(where + "score must be in 1..5");
    out.push_back({trim(f[0]), f[1], score});
  }
  return out;
}

std::vector<ExpertAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read annotations " + path.string());
  return read_annotations(in);
}

std::size_t ConfusionTable::row_sum(int score) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < ks.size(); ++k) s += cell(k, score, true) + cell(k, score, false);
  return s;
}

std::size_t ConfusionTable::block_total(std::size_t k_index) const {
  std::size_t s = 0;
  for (const auto& row : cells[k_index]) s += row[0] + row[1];
  return s;
}

ExpertRescore expert_rescore(std::span<const RankedPrediction> predictions,
                             std::span<const ExpertAnnotation> annotations,
                             std::span<const ProbeQuery> queries,
                             std::span<const std::size_t> ks, int perfect_threshold) {
  std::unordered_map<std::string, const ProbeQuery*> gold_by_id;
  for (const auto& q : queries) gold_by_id.emplace(q.query_id, &q);

  std::map<std::pair<std::string, std::string>, std::vector<int>> scores;
  for (const auto& a : annotations) {
    if (a.score < 1 || a.score > 5)
      throw ValidationError("annotation score out of range for (" + a.query_id + ", " +
                            a.candidate + ")");
    scores[{a.query_id, a.candidate}].push_back(a.score);
  }

  const std::size_t kmax = ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  std::vector<std::string> missing;
  for (const auto& p : predictions) {
    if (!gold_by_id.contains(p.query_id))
      throw ValidationError("annotated query '" + p.query_id + "' is not in the dataset");
    const auto n = std::min(kmax, p.candidates.size());
    for (std::size_t i = 0; i < n; ++i) {
      auto it = scores.find({p.query_id, p.candidates[i].first});
      if (it == scores.end() || it->second.size() != 1)
        missing.push_back("(" + p.query_id + ", " + p.candidates[i].first + ")");
    }
  }
  if (!missing.empty())
    throw ValidationError("top-k candidates without exactly one annotation: " +
                          join(missing, ", "));

  ExpertRescore r;
  r.ks.assign(ks.begin(), ks.end());
  r.confusion.ks = r.ks;
  r.confusion.cells.assign(ks.size(), {});
  r.gold_candidate.assign(ks.size(), {});
  r.annotated_candidate.assign(ks.size(), {});
  r.gold_query.assign(ks.size(), {});
  r.annotated_query.assign(ks.size(), {});

  for (const auto& p : predictions) {
    std::unordered_set<std::string> gold;
    for (const auto& a : gold_by_id.at(p.query_id)->answers) gold.insert(normalize_for_match(a));
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      const auto n = std::min(ks[ki], p.candidates.size());
      bool any_gold = false, any_annotated = false;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& cand = p.candidates[i].first;
        const int score = scores.at({p.query_id, cand}).front();
        const bool is_gold = gold.contains(normalize_for_match(cand));
        const bool is_annotated = score >= perfect_threshold;
        ++r.confusion.cells[ki][static_cast<std::size_t>(5 - score)][is_gold ? 0 : 1];
        r.gold_candidate[ki].hits += is_gold;
        r.annotated_candidate[ki].hits += is_annotated;
        ++r.gold_candidate[ki].total;
        ++r.annotated_candidate[ki].total;
        any_gold = any_gold || is_gold;
        any_annotated = any_annotated || is_annotated;
      }
      r.gold_query[ki].hits += any_gold;
      r.annotated_query[ki].hits += any_annotated;
      ++r.gold_query[ki].total;
      ++r.annotated_query[ki].total;
    }
  }
  return r;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

namespace {

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string k_label(std::size_t k) { return "acc@" + std::to_string(k); }

}  // namespace

std::string report_json(const EvalReport& report) {
  ordered_json j;
  j["model"] = report.model;
  j["strategy"] = report.strategy;
  j["split"] = report.split;
  j["k"] = report.ks;
  ordered_json per = ordered_json::object();
  for (const auto& r : report.per_relation) {
    ordered_json row;
    row["count"] = r.count;
    for (std::size_t k = 0; k < report.ks.size(); ++k) row[k_label(report.ks[k])] = opt_json(r.acc[k]);
    per[r.relation_id] = std::move(row);
  }
  j["per_relation"] = std::move(per);
  ordered_json macro, micro;
  for (std::size_t k = 0; k < report.ks.size(); ++k) {
    macro[k_label(report.ks[k])] = report.macro[k];
    micro[k_label(report.ks[k])] = report.micro[k];
  }
  j["macro"] = std::move(macro);
  j["micro"] = std::move(micro);
  ordered_json meta;
  const auto& m = report.metadata;
  meta["seed"] = m.seed ? ordered_json(*m.seed) : ordered_json(nullptr);
  meta["layer_limit"] = m.layer_limit ? ordered_json(*m.layer_limit) : ordered_json(nullptr);
  meta["checkpoint_step"] =
      m.checkpoint_step ? ordered_json(*m.checkpoint_step) : ordered_json(nullptr);
  meta["excluded_relations"] = m.excluded_relations;
  meta["std_convention"] = "population";
  j["metadata"] = std::move(meta);
  return j.dump(2);
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "relation_id,count";
  for (auto k : report.ks) out << ",acc" << k;
  out << '\n';
  for (const auto& r : report.per_relation) {
    out << r.relation_id << ',' << r.count;
    for (const auto& a : r.acc) out << ',' << (a ? format_metric(*a) : "");
    out << '\n';
  }
}

void write_length_bins_csv(std::span<const LengthBin> bins, std::ostream& out) {
  out << "lower,upper,count,acc\n";
  for (const auto& b : bins)
    out << b.lower << ',' << (b.upper ? std::to_string(*b.upper) : "") << ',' << b.count << ','
        << (b.acc ? format_metric(*b.acc) : "null") << '\n';
}

void write_confusion_csv(const ConfusionTable& table, std::ostream& out) {
  out << "score";
  for (auto k : table.ks) out << ",top" << k << "_yes,top" << k << "_no";
  out << ",sum\n";
  for (int score = 5; score >= 1; --score) {
    out << score;
    for (std::size_t k = 0; k < table.ks.size(); ++k)
      out << ',' << table.cell(k, score, true) << ',' << table.cell(k, score, false);
    out << ',' << table.row_sum(score) << '\n';
  }
  out << "sum";
  std::size_t all = 0;
  for (std::size_t k = 0; k < table.ks.size(); ++k) {
    out << ',' << table.block_total(k) << ',';
    all += table.block_total(k);
  }
  out << ',' << all << '\n';
}

void write_step_curves_csv(std::span<const StepCurveRow> rows, std::ostream& out) {
  out << "step,relation_id,acc1_mean,acc1_std\n";
  for (const auto& r : rows)
    out << r.step << ',' << r.relation_id << ',' << format_metric(r.acc1_mean) << ','
        << format_metric(r.acc1_std) << '\n';
}

}  // namespace probeforge
