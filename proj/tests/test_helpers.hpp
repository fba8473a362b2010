// Test doubles and fixture builders shared by unit tests and the acceptance
// runner.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "probeforge/encoders.hpp"
#include "probeforge/errors.hpp"
#include "probeforge/eval.hpp"

namespace testing_support {

namespace pf = probeforge;

/// Encoder returning preset vectors for known texts.
class FixedEncoder final : public pf::Encoder {
 public:
  FixedEncoder(std::map<std::string, std::vector<double>> table, Eigen::Index dim,
               std::string id = "fixed")
      : table_(std::move(table)), dim_(dim), id_(std::move(id)) {}

  [[nodiscard]] std::string identity() const override { return id_; }
  [[nodiscard]] Eigen::Index embedding_dim() const override { return dim_; }
  [[nodiscard]] int max_layers() const override { return 1; }

 protected:
  pf::Matrix encode_rows(std::span<const std::string> texts, int) const override {
    pf::Matrix out(static_cast<Eigen::Index>(texts.size()), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto it = table_.find(texts[i]);
      if (it == table_.end()) throw pf::InputError("no vector for '" + texts[i] + "'");
      for (Eigen::Index d = 0; d < dim_; ++d)
        out(static_cast<Eigen::Index>(i), d) = it->second[static_cast<std::size_t>(d)];
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
  Eigen::Index dim_;
  std::string id_;
};

/// Score (5..1) x gold membership counts of the 15-query expert study: the
/// rank-1 candidates, and all 150 top-10 candidates (rank 1 included).
struct ExpertCounts {
  std::array<std::array<std::size_t, 2>, 5> top1{{{4, 1}, {1, 2}, {0, 5}, {0, 2}, {0, 0}}};
  std::array<std::array<std::size_t, 2>, 5> top10{{{13, 20}, {3, 8}, {0, 54}, {0, 52}, {0, 0}}};
};

struct ExpertStudy {
  std::vector<pf::ProbeQuery> queries;
  std::vector<pf::RankedPrediction> predictions;
  std::vector<pf::ExpertAnnotation> annotations;
};

/// Lays the counts out as 15 queries with 10 ranked candidates each. Rank-1
/// cells come from `top1`; ranks 2..10 take the remainder of `top10`.
inline ExpertStudy build_expert_study(const ExpertCounts& counts = {}) {
  struct Cell {
    int score;
    bool gold;
  };
  std::vector<Cell> first, rest;
  for (int row = 0; row < 5; ++row)
    for (int hit = 0; hit < 2; ++hit) {
      const auto r = static_cast<std::size_t>(row), h = static_cast<std::size_t>(hit);
      first.insert(first.end(), counts.top1[r][h], Cell{5 - row, hit == 0});
      rest.insert(rest.end(), counts.top10[r][h] - counts.top1[r][h], Cell{5 - row, hit == 0});
    }
  if (first.size() != 15 || rest.size() != 135)
    throw pf::ValidationError("expert counts do not describe 15 queries x 10 candidates");

  ExpertStudy study;
  std::size_t next = 0;
  for (std::size_t q = 0; q < 15; ++q) {
    const std::string id = "expert/" + std::to_string(q);
    pf::ProbeQuery query{id, q % 2 ? "may_treat" : "may_prevent", "head" + std::to_string(q),
                         "head" + std::to_string(q) + " may treat [MASK] .", {}, true};
    pf::RankedPrediction pred{id, {}, "contrastive"};
    for (std::size_t rank = 0; rank < 10; ++rank) {
      const Cell cell = rank == 0 ? first[q] : rest[next++];
      const std::string cand = "candidate " + std::to_string(q) + "-" + std::to_string(rank);
      pred.candidates.emplace_back(cand, -static_cast<double>(rank));
      if (cell.gold) query.answers.push_back(cand);
      study.annotations.push_back({id, cand, cell.score});
    }
    if (query.answers.empty()) query.answers.push_back("unlisted gold " + std::to_string(q));
    study.queries.push_back(std::move(query));
    study.predictions.push_back(std::move(pred));
  }
  return study;
}

}  // namespace testing_support
