#include "vlmc/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "vlmc/kernels.hpp"

namespace vlmc {

void to_json(nlohmann::json& j, const ChoicePick& p) {
  j = nlohmann::json{{"index", p.index}, {"text", p.text}, {"score", p.score}};
}

void from_json(const nlohmann::json& j, ChoicePick& p) {
  p.index = j.at("index").get<std::size_t>();
  p.text = j.at("text").get<std::string>();
  p.score = j.at("score").get<double>();
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dim() != v.dim()) {
    throw UsageError("cosine: dimension mismatch " + std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
  }
  const double nu = kernels::norm(u.values);
  const double nv = kernels::norm(v.values);
  if (nu == 0.0 || nv == 0.0) throw DegenerateInput("cosine of a zero vector");
  return std::clamp(kernels::dot(u.values, v.values) / (nu * nv), -1.0, 1.0);
}

ChoicePick argmax(const ScoreDistribution& dist) {
  if (dist.scores.empty()) throw UsageError("argmax of an empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.scores.size(); ++i) {
    if (dist.scores[i] > dist.scores[best]) best = i;
  }
  return ChoicePick{best, dist.choice_texts[best], dist.scores[best]};
}

MappedAnswer map_to_choice(const CompletionText& completion, const std::vector<std::string>& choices,
                           Embedder& embedder) {
  if (choices.empty()) throw UsageError("map_to_choice needs at least one choice");
  MappedAnswer out;
  out.distribution.choice_texts = choices;
  out.distribution.source = completion.backend;

  const auto normalized = normalize_text(completion.value);
  if (normalized.empty()) {
    out.degenerate = true;
    out.distribution.scores.assign(choices.size(), -1.0);
    out.pick = ChoicePick{0, choices[0], -1.0};
    return out;
  }

  std::vector<std::string> batch;
  batch.reserve(choices.size() + 1);
  batch.push_back(normalized.value());
  for (const auto& c : choices) batch.push_back(normalize_text(c).value());
  const auto vectors = embedder.embed(batch);
  if (vectors.size() != batch.size()) throw ProtocolError("malformed_response", "embedder returned wrong batch size");

  out.distribution.scores.resize(choices.size());
  for (std::size_t i = 0; i < choices.size(); ++i) {
    try {
      out.distribution.scores[i] = cosine(vectors[0], vectors[i + 1]);
    } catch (const DegenerateInput&) {
      out.distribution.scores[i] = -1.0;
    }
  }
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (batch[i + 1] == normalized.value()) {
      out.pick = ChoicePick{i, choices[i], out.distribution.scores[i]};
      return out;
    }
  }
  out.pick = argmax(out.distribution);
  return out;
}

ScoreDistribution ensemble_average(const std::vector<ScoreDistribution>& dists) {
  if (dists.empty()) throw UsageError("ensemble_average needs at least one distribution");
  ScoreDistribution out;
  out.choice_texts = dists.front().choice_texts;
  out.source = "ensemble-avg";
  out.scores.assign(out.choice_texts.size(), 0.0);
  for (const auto& d : dists) {
    if (d.choice_texts != out.choice_texts || d.scores.size() != out.scores.size()) {
      throw UsageError("ensemble_average: distribution from " + d.source + " is not aligned");
    }
    for (std::size_t i = 0; i < d.scores.size(); ++i) out.scores[i] += d.scores[i];
  }
  const auto n = static_cast<double>(dists.size());
  for (double& s : out.scores) s /= n;
  return out;
}

ChoicePick majority_vote(const std::vector<ChoicePick>& picks, const std::vector<std::size_t>& fallback_order) {
  if (picks.empty()) throw UsageError("majority_vote needs at least one pick");
  std::map<std::size_t, std::size_t> votes;
  for (const auto& p : picks) ++votes[p.index];
  std::size_t top = 0;
  for (const auto& [index, count] : votes) top = std::max(top, count);

  auto order = fallback_order;
  if (order.empty()) {
    for (std::size_t i = 0; i < picks.size(); ++i) order.push_back(i);
  }
  for (std::size_t expert : order) {
    if (expert < picks.size() && votes[picks[expert].index] == top) return picks[expert];
  }
  // Order did not cover a winner; fall back to the first tied pick.
  for (const auto& p : picks) {
    if (votes[p.index] == top) return p;
  }
  return picks.front();
}

}  // namespace vlmc
