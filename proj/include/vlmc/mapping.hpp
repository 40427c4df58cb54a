#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmc/backends.hpp"

namespace vlmc {

// Per-choice scores from one source (a completion or one expert's answer).
// Cosine scores, not probabilities: they need not sum to one.
struct ScoreDistribution {
  std::vector<std::string> choice_texts;
  std::vector<double> scores;
  std::string source;

  bool operator==(const ScoreDistribution&) const = default;
};

struct ChoicePick {
  std::size_t index = 0;
  std::string text;
  double score = 0.0;

  bool operator==(const ChoicePick&) const = default;
};

void to_json(nlohmann::json& j, const ChoicePick& p);
void from_json(const nlohmann::json& j, ChoicePick& p);

// dot(u, v) / (|u| |v|). Throws UsageError on dimension mismatch and
// DegenerateInput when either vector is zero.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

// Argmax with ties to the lowest index.
ChoicePick argmax(const ScoreDistribution& dist);

struct MappedAnswer {
  ScoreDistribution distribution;
  ChoicePick pick;
  bool degenerate = false;  // completion normalized to empty
};

// Scores a free-text completion against the choices by embedding cosine and
// picks the best. The completion and all choices go to the embedder in one
// batch. A completion equal to a choice after normalization picks that
// choice outright. An empty completion yields pick 0 with score -1.
MappedAnswer map_to_choice(const CompletionText& completion, const std::vector<std::string>& choices,
                           Embedder& embedder);

// Elementwise mean of aligned distributions.
ScoreDistribution ensemble_average(const std::vector<ScoreDistribution>& dists);

// Plurality winner. Ties go to the tied choice picked by the expert that
// appears earliest in fallback_order (picks[i] belongs to expert i).
ChoicePick majority_vote(const std::vector<ChoicePick>& picks, const std::vector<std::size_t>& fallback_order);

}  // namespace vlmc
