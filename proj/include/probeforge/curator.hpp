#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace probeforge {

inline constexpr std::string_view kDefaultMaskPlaceholder = "[MASK]";

struct KnowledgeTriple {
  std::string head_name;
  std::string relation_id;
  std::string tail_name;
  std::string head_id;
  std::string tail_id;

  bool operator==(const KnowledgeTriple&) const = default;
};

struct PromptTemplate {
  std::string relation_id;
  std::string pattern;  // one "[X]" and one "[Y]"
  std::string display_name;

  bool operator==(const PromptTemplate&) const = default;
};

/// Throws ValidationError unless the pattern holds exactly one [X] and one [Y].
void validate_template(const PromptTemplate& tmpl);

/// Relation id -> template. Insertion order is preserved for reporting.
class TemplateRegistry {
 public:
  TemplateRegistry() = default;
  explicit TemplateRegistry(std::vector<PromptTemplate> templates);

  void add(PromptTemplate tmpl);
  [[nodiscard]] const PromptTemplate* find(std::string_view relation_id) const;
  [[nodiscard]] const std::vector<PromptTemplate>& templates() const { return templates_; }
  [[nodiscard]] std::size_t size() const { return templates_.size(); }

 private:
  std::vector<PromptTemplate> templates_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

/// The 19 manual prompts shipped with the toolkit.
TemplateRegistry default_templates();
TemplateRegistry load_templates(const std::filesystem::path& path);
void save_templates(const TemplateRegistry& registry, const std::filesystem::path& path);

struct ProbeQuery {
  std::string query_id;
  std::string relation_id;
  std::string head_name;
  std::string query_text;
  std::vector<std::string> answers;
  bool hard = false;

  bool operator==(const ProbeQuery&) const = default;
};

struct TripleLoadResult {
  std::vector<KnowledgeTriple> triples;
  std::size_t malformed = 0;
  std::vector<std::size_t> malformed_lines;  // 1-based
};

/// Reads head<TAB>relation<TAB>tail[<TAB>head_id<TAB>tail_id] lines. Lines
/// starting with '#' and blank lines are skipped. Malformed lines are counted.
TripleLoadResult load_triples(std::istream& in);
TripleLoadResult load_triples(const std::filesystem::path& path);

/// Substitutes [X] first, then the template's own [Y]. A head name that
/// itself contains "[Y]" is copied verbatim.
std::string instantiate_prompt(const PromptTemplate& tmpl, std::string_view head_name,
                               std::string_view mask_placeholder = kDefaultMaskPlaceholder);

struct GroupOptions {
  std::size_t max_answers = 10;
  std::size_t per_relation_cap = 1000;
  std::uint64_t seed = 0;
  std::string mask_placeholder{kDefaultMaskPlaceholder};
};

/// Merges triples sharing (head, relation), drops groups above max_answers,
/// then samples up to per_relation_cap groups per relation.
std::vector<ProbeQuery> group_queries(std::span<const KnowledgeTriple> triples,
                                      const TemplateRegistry& registry,
                                      const GroupOptions& options);

double avg_match(std::string_view query_text, std::span<const std::string> answers);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Token-level ROUGE-L F-measure with equal precision/recall weight.
double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference);
double rouge_l(std::string_view hypothesis, std::string_view reference);

struct HardnessThresholds {
  double match = 0.1;
  double rouge = 0.1;
};

struct HardnessScores {
  double avg_match = 0.0;
  double max_rouge_l = 0.0;
};

HardnessScores hardness_scores(const ProbeQuery& query);

/// Returns a copy of `queries` with the hard flag recomputed.
std::vector<ProbeQuery> split_hard(std::span<const ProbeQuery> queries,
                                   const HardnessThresholds& thresholds = {});

/// JSONL, one query per line.
void write_dataset(std::span<const ProbeQuery> queries, std::ostream& out);
std::vector<ProbeQuery> read_dataset(std::istream& in);
void save_dataset(std::span<const ProbeQuery> queries, const std::filesystem::path& path);
std::vector<ProbeQuery> load_dataset(const std::filesystem::path& path);

struct RelationCounts {
  std::string relation_id;
  std::size_t full = 0;
  std::size_t hard = 0;
};

/// Per-relation full/hard counts in first-appearance order.
std::vector<RelationCounts> relation_counts(std::span<const ProbeQuery> queries);

}  // namespace probeforge
