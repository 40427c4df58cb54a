#include "vlmc/core.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <map>
#include <mutex>

namespace vlmc {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::VQA_MC: return "VQA_MC";
    case TaskFamily::VQA_DA: return "VQA_DA";
    case TaskFamily::ENTAILMENT: return "ENTAILMENT";
    case TaskFamily::SPATIAL: return "SPATIAL";
  }
  return "VQA_MC";
}

TaskFamily parse_task_family(std::string_view text) {
  if (text == "VQA_MC") return TaskFamily::VQA_MC;
  if (text == "VQA_DA") return TaskFamily::VQA_DA;
  if (text == "ENTAILMENT") return TaskFamily::ENTAILMENT;
  if (text == "SPATIAL") return TaskFamily::SPATIAL;
  throw UsageError("unknown task family: " + std::string(text));
}

const std::vector<std::string>& fixed_choices(TaskFamily family) {
  static const std::vector<std::string> entailment{"yes", "no", "maybe"};
  static const std::vector<std::string> spatial{"yes", "no"};
  static const std::vector<std::string> none;
  switch (family) {
    case TaskFamily::ENTAILMENT: return entailment;
    case TaskFamily::SPATIAL: return spatial;
    default: return none;
  }
}

bool is_choice_family(TaskFamily family) { return family != TaskFamily::VQA_DA; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "val";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw UsageError("unknown split: " + std::string(text));
}

std::string_view to_string(ImageRef::Kind kind) {
  switch (kind) {
    case ImageRef::Kind::path: return "path";
    case ImageRef::Kind::url: return "url";
    case ImageRef::Kind::opaque_id: return "opaque_id";
  }
  return "opaque_id";
}

ImageRef::Kind parse_image_kind(std::string_view text) {
  if (text == "path") return ImageRef::Kind::path;
  if (text == "url") return ImageRef::Kind::url;
  if (text == "opaque_id") return ImageRef::Kind::opaque_id;
  throw UsageError("unknown image kind: " + std::string(text));
}

std::string gold_text(const InstanceRecord& record) {
  if (record.gold_choice && *record.gold_choice < record.choices.size()) {
    return record.choices[*record.gold_choice];
  }
  if (record.gold_direct_answers.empty()) return {};
  // Count votes keyed by exact text; iterate in first-occurrence order so
  // ties resolve to the earliest answer.
  std::map<std::string, std::size_t> votes;
  for (const auto& a : record.gold_direct_answers) ++votes[a];
  const std::string* best = &record.gold_direct_answers.front();
  std::size_t best_votes = 0;
  for (const auto& a : record.gold_direct_answers) {
    if (votes[a] > best_votes) {
      best_votes = votes[a];
      best = &a;
    }
  }
  return *best;
}

NormalizedText normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ascii_lower(c));
  }
  while (!out.empty() && out.back() == '.') {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return NormalizedText(std::move(out));
}

bool is_degenerate(const ExpertOutput& output) {
  return normalize_text(output.caption).empty() || normalize_text(output.plausible_answer).empty();
}

void to_json(nlohmann::json& j, const ImageRef& image) {
  j = nlohmann::json{{"kind", to_string(image.kind)}, {"value", image.value}};
}

void from_json(const nlohmann::json& j, ImageRef& image) {
  image.kind = parse_image_kind(j.at("kind").get<std::string>());
  image.value = j.at("value").get<std::string>();
}

void to_json(nlohmann::json& j, const InstanceRecord& r) {
  j = nlohmann::json{{"id", r.id},
                     {"image", r.image},
                     {"family", to_string(r.family)},
                     {"question", r.question},
                     {"choices", r.choices},
                     {"gold_choice", nullptr},
                     {"gold_direct_answers", r.gold_direct_answers},
                     {"split", to_string(r.split)}};
  if (r.gold_choice) j["gold_choice"] = *r.gold_choice;
}

void from_json(const nlohmann::json& j, InstanceRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.image = j.at("image").get<ImageRef>();
  r.family = parse_task_family(j.at("family").get<std::string>());
  r.question = j.at("question").get<std::string>();
  r.choices = j.value("choices", std::vector<std::string>{});
  r.gold_choice.reset();
  if (auto it = j.find("gold_choice"); it != j.end() && !it->is_null()) {
    const auto idx = it->get<long long>();
    if (idx < 0) throw UsageError("negative gold_choice for " + r.id);
    r.gold_choice = static_cast<std::size_t>(idx);
  }
  r.gold_direct_answers = j.value("gold_direct_answers", std::vector<std::string>{});
  r.split = parse_split(j.value("split", std::string("val")));
}

void to_json(nlohmann::json& j, const ExpertOutput& o) {
  j = nlohmann::json{{"expert", o.expert_name}, {"caption", o.caption}, {"answer", o.plausible_answer}};
}

void from_json(const nlohmann::json& j, ExpertOutput& o) {
  o.expert_name = j.at("expert").get<std::string>();
  o.caption = j.at("caption").get<std::string>();
  o.plausible_answer = j.at("answer").get<std::string>();
}

LogLevel log_threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("VLMC_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return LogLevel::error;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

void log(LogLevel level, std::string_view message) {
  if (level > log_threshold()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "vlmc[" << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace vlmc
