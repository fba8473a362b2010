#include "probeforge/curator.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_map>

#include "probeforge/errors.hpp"
#include "probeforge/random.hpp"
#include "probeforge/text.hpp"

namespace probeforge {

using nlohmann::json;
using nlohmann::ordered_json;

void validate_template(const PromptTemplate& tmpl) {
  if (tmpl.relation_id.empty()) throw ValidationError("template has an empty relation_id");
  if (count_occurrences(tmpl.pattern, "[X]") != 1 || count_occurrences(tmpl.pattern, "[Y]") != 1)
    throw ValidationError("template '" + tmpl.relation_id +
                          "' must contain [X] and [Y] exactly once: " + tmpl.pattern);
}

TemplateRegistry::TemplateRegistry(std::vector<PromptTemplate> templates) {
  for (auto& t : templates) add(std::move(t));
}

void TemplateRegistry::add(PromptTemplate tmpl) {
  validate_template(tmpl);
  if (by_id_.contains(tmpl.relation_id))
    throw ValidationError("duplicate template for relation '" + tmpl.relation_id + "'");
  by_id_.emplace(tmpl.relation_id, templates_.size());
  templates_.push_back(std::move(tmpl));
}

const PromptTemplate* TemplateRegistry::find(std::string_view relation_id) const {
  auto it = by_id_.find(relation_id);
  return it == by_id_.end() ? nullptr : &templates_[it->second];
}

TemplateRegistry default_templates() {
  return TemplateRegistry({
      {"disease_may_have_associated_disease",
       "The disease [X] might have the associated disease [Y] .",
       "disease may have associated disease"},
      {"gene_product_plays_role_in_biological_process",
       "The gene product [X] plays role in biological process [Y] .",
       "gene product plays role in biological process"},
      {"gene_product_encoded_by_gene", "The gene product [X] is encoded by gene [Y] .",
       "gene product encoded by gene"},
      {"gene_product_has_associated_anatomy",
       "The gene product [X] has the associated anatomy [Y] .",
       "gene product has associated anatomy"},
      {"gene_associated_with_disease", "The gene [X] is associatied with disease [Y] .",
       "gene associated with disease"},
      {"disease_has_abnormal_cell", "[X] has the abnormal cell [Y] .",
       "disease has abnormal cell"},
      {"occurs_after", "[X] occurs after [Y] .", "occurs after"},
      {"gene_product_has_biochemical_function", "[X] has biochemical function [Y] .",
       "gene product has biochemical function"},
      {"disease_may_have_molecular_abnormality",
       "The disease [X] may have molecular abnormality [Y] .",
       "disease may have molecular abnormality"},
      {"disease_has_associated_anatomic_site",
       "The disease [X] can stem from the associated anatomic site [Y] .",
       "disease has associated anatomic site"},
      {"associated_morphology_of", "[X] is associated morphology of [Y] .",
       "associated morphology of"},
      {"disease_has_normal_tissue_origin", "The disease [X] stems from the normal tissue [Y] .",
       "disease has normal tissue origin"},
      {"gene_encodes_gene_product", "The gene [X] encodes gene product [Y] .",
       "gene encodes gene product"},
      {"has_physiologic_effect", "[X] has physiologic effect of [Y] .",
       "has physiologic effect"},
      {"may_treat", "[X] might treat [Y] .", "may treat"},
      {"disease_mapped_to_gene", "The disease [X] is mapped to gene [Y] .",
       "disease mapped to gene"},
      {"may_prevent", "[X] may be able to prevent [Y] .", "may prevent"},
      {"disease_may_have_finding", "[X] may have [Y] .", "disease may have finding"},
      {"disease_has_normal_cell_origin", "The disease [X] stems from the normal cell [Y] .",
       "disease has normal cell origin"},
  });
}

TemplateRegistry load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read template registry " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("template registry " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ValidationError("template registry must be a JSON array");
  TemplateRegistry registry;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    try {
      registry.add({item.at("relation_id").get<std::string>(),
                    item.at("pattern").get<std::string>(),
                    item.value("display_name", item.at("relation_id").get<std::string>())});
    } catch (const json::exception& e) {
      throw ValidationError("template registry entry " + std::to_string(i) + ": " + e.what());
    }
  }
  return registry;
}

void save_templates(const TemplateRegistry& registry, const std::filesystem::path& path) {
  ordered_json doc = ordered_json::array();
  for (const auto& t : registry.templates())
    doc.push_back({{"relation_id", t.relation_id},
                   {"pattern", t.pattern},
                   {"display_name", t.display_name}});
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

TripleLoadResult load_triples(std::istream& in) {
  TripleLoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      auto tab = line.find('\t', start);
      fields.push_back(trim(std::string_view(line).substr(start, tab - start)));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      ++result.malformed;
      result.malformed_lines.push_back(lineno);
      continue;
    }
    KnowledgeTriple t{fields[0], fields[1], fields[2], {}, {}};
    if (fields.size() > 3) t.head_id = fields[3];
    if (fields.size() > 4) t.tail_id = fields[4];
    result.triples.push_back(std::move(t));
  }
  if (in.bad()) throw InputError("read error in triple dump");
  if (result.triples.empty())
    throw EmptyDatasetError("triple dump contains no valid triples (" +
                            std::to_string(result.malformed) + " malformed lines)");
  return result;
}

TripleLoadResult load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read triple dump " + path.string());
  return load_triples(in);
}

std::string instantiate_prompt(const PromptTemplate& tmpl, std::string_view head_name,
                               std::string_view mask_placeholder) {
  validate_template(tmpl);
  // Positions come from the untouched pattern, so a "[Y]" inside the head
  // name can never be mistaken for the template's slot.
  const std::string_view pattern = tmpl.pattern;
  const auto x = pattern.find("[X]");
  const auto y = pattern.find("[Y]");
  std::string out;
  out.reserve(pattern.size() + head_name.size() + mask_placeholder.size());
  if (x < y) {
    out.append(pattern.substr(0, x)).append(head_name);
    out.append(pattern.substr(x + 3, y - x - 3)).append(mask_placeholder);
    out.append(pattern.substr(y + 3));
  } else {
    out.append(pattern.substr(0, y)).append(mask_placeholder);
    out.append(pattern.substr(y + 3, x - y - 3)).append(head_name);
    out.append(pattern.substr(x + 3));
  }
  return out;
}

std::vector<ProbeQuery> group_queries(std::span<const KnowledgeTriple> triples,
                                      const TemplateRegistry& registry,
                                      const GroupOptions& options) {
  if (options.max_answers < 1) throw PreconditionError("max_answers must be >= 1");
  for (const auto& t : triples)
    if (!registry.find(t.relation_id))
      throw ConfigError("no prompt template for relation '" + t.relation_id + "'");

  struct Group {
    std::string head;
    std::vector<std::string> answers;
    std::set<std::string> seen;
  };
  struct Relation {
    std::string id;
    std::vector<Group> groups;
    std::unordered_map<std::string, std::size_t> by_head;
  };
  std::vector<Relation> relations;
  std::unordered_map<std::string, std::size_t> rel_index;

  for (const auto& t : triples) {
    auto [rit, rnew] = rel_index.try_emplace(t.relation_id, relations.size());
    if (rnew) relations.push_back({t.relation_id, {}, {}});
    auto& rel = relations[rit->second];
    auto [git, gnew] = rel.by_head.try_emplace(t.head_name, rel.groups.size());
    if (gnew) rel.groups.push_back({t.head_name, {}, {}});
    auto& g = rel.groups[git->second];
    if (g.seen.insert(normalize_answer(t.tail_name)).second) g.answers.push_back(t.tail_name);
  }

  std::vector<ProbeQuery> out;
  for (const auto& rel : relations) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < rel.groups.size(); ++i)
      if (rel.groups[i].answers.size() <= options.max_answers) kept.push_back(i);

    if (kept.size() > options.per_relation_cap) {
      // One stream per relation so relations can be processed independently.
      auto rng = make_rng(options.seed, rel.id);
      seeded_shuffle(kept.begin(), kept.end(), rng);
      kept.resize(options.per_relation_cap);
      std::sort(kept.begin(), kept.end());
    }

    const auto& tmpl = *registry.find(rel.id);
    for (std::size_t n = 0; n < kept.size(); ++n) {
      const auto& g = rel.groups[kept[n]];
      out.push_back({rel.id + "/" + std::to_string(n), rel.id, g.head,
                     instantiate_prompt(tmpl, g.head, options.mask_placeholder), g.answers,
                     false});
    }
  }
  return out;
}

namespace {

bool contains_contiguous(std::span<const std::string> haystack,
                         std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

double avg_match(std::string_view query_text, std::span<const std::string> answers) {
  if (answers.empty()) throw PreconditionError("avg_match requires at least one answer");
  const auto q = metric_tokens(query_text);
  std::size_t matched = 0;
  for (const auto& a : answers)
    if (contains_contiguous(q, metric_tokens(a))) ++matched;
  return static_cast<double>(matched) / static_cast<double>(answers.size());
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference) {
  if (hypothesis.empty() || reference.empty())
    throw PreconditionError("rouge_l requires non-empty token sequences");
  const auto lcs = static_cast<double>(lcs_length(hypothesis, reference));
  const double p = lcs / static_cast<double>(hypothesis.size());
  const double r = lcs / static_cast<double>(reference.size());
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double rouge_l(std::string_view hypothesis, std::string_view reference) {
  return rouge_l(metric_tokens(hypothesis), metric_tokens(reference));
}

HardnessScores hardness_scores(const ProbeQuery& query) {
  HardnessScores s;
  s.avg_match = avg_match(query.query_text, query.answers);
  const auto q = metric_tokens(query.query_text);
  for (const auto& a : query.answers) {
    const auto at = metric_tokens(a);
    if (q.empty() || at.empty()) continue;
    s.max_rouge_l = std::max(s.max_rouge_l, rouge_l(q, at));
  }
  return s;
}

std::vector<ProbeQuery> split_hard(std::span<const ProbeQuery> queries,
                                   const HardnessThresholds& thresholds) {
  if (thresholds.match < 0.0 || thresholds.match > 1.0 || thresholds.rouge < 0.0 ||
      thresholds.rouge > 1.0)
    throw PreconditionError("hardness thresholds must lie in [0, 1]");
  std::vector<ProbeQuery> out(queries.begin(), queries.end());
  for (auto& q : out) {
    const auto s = hardness_scores(q);
    q.hard = s.avg_match <= thresholds.match && s.max_rouge_l <= thresholds.rouge;
  }
  return out;
}

void write_dataset(std::span<const ProbeQuery> queries, std::ostream& out) {
  for (const auto& q : queries) {
    ordered_json j;
    j["query_id"] = q.query_id;
    j["relation_id"] = q.relation_id;
    j["head_name"] = q.head_name;
    j["query_text"] = q.query_text;
    j["answers"] = q.answers;
    j["hard"] = q.hard;
    out << j.dump() << '\n';
  }
}

std::vector<ProbeQuery> read_dataset(std::istream& in) {
  std::vector<ProbeQuery> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto where = "dataset line " + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where + "invalid JSON (" + e.what() + ")");
    }
    ProbeQuery q;
    try {
      q.query_id = j.at("query_id").get<std::string>();
      q.relation_id = j.at("relation_id").get<std::string>();
      q.head_name = j.at("head_name").get<std::string>();
      q.query_text = j.at("query_text").get<std::string>();
      q.answers = j.at("answers").get<std::vector<std::string>>();
      q.hard = j.at("hard").get<bool>();
    } catch (const json::exception& e) {
      throw ValidationError(where + e.what());
    }
    if (q.answers.empty() || q.answers.size() > 10)
      throw ValidationError(where + "answers must hold 1-10 entries");
    out.push_back(std::move(q));
  }
  return out;
}

void save_dataset(std::span<const ProbeQuery> queries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_dataset(queries, out);
}

std::vector<ProbeQuery> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read dataset " + path.string());
  return read_dataset(in);
}

std::vector<RelationCounts> relation_counts(std::span<const ProbeQuery> queries) {
  std::vector<RelationCounts> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& q : queries) {
    auto [it, fresh] = index.try_emplace(q.relation_id, out.size());
    if (fresh) out.push_back({q.relation_id, 0, 0});
    auto& c = out[it->second];
    ++c.full;
    if (q.hard) ++c.hard;
  }
  return out;
}

}  // namespace probeforge
