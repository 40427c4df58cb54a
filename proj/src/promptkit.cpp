#include "vlmc/promptkit.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "vlmc/hashing.hpp"

namespace vlmc {

PromptTemplate PromptTemplate::for_family(TaskFamily family, std::vector<std::string> expert_names) {
  PromptTemplate tpl;
  tpl.family = family;
  tpl.expert_names = std::move(expert_names);
  tpl.include_choices = is_choice_family(family);
  return tpl;
}

PromptText PromptText::from(std::string value) {
  PromptText p;
  p.fingerprint = sha256_hex(value);
  p.value = std::move(value);
  return p;
}

std::string_view to_string(Phase phase) { return phase == Phase::tune ? "tune" : "eval"; }

std::string_view to_string(PerturbationSpec::Mode mode) {
  using M = PerturbationSpec::Mode;
  switch (mode) {
    case M::none: return "none";
    case M::swap_caption_labels: return "swap_caption_labels";
    case M::swap_answer_labels: return "swap_answer_labels";
    case M::drop_captions: return "drop_captions";
    case M::drop_answers: return "drop_answers";
    case M::single_expert: return "single_expert";
  }
  return "none";
}

PerturbationSpec::Mode parse_perturbation_mode(std::string_view text) {
  using M = PerturbationSpec::Mode;
  for (M m : {M::none, M::swap_caption_labels, M::swap_answer_labels, M::drop_captions, M::drop_answers,
              M::single_expert}) {
    if (to_string(m) == text) return m;
  }
  throw UsageError("unknown perturbation mode: " + std::string(text));
}

void to_json(nlohmann::json& j, const PerturbationSpec& spec) {
  nlohmann::json phases = nlohmann::json::array();
  if (spec.at_tune) phases.push_back("tune");
  if (spec.at_eval) phases.push_back("eval");
  j = nlohmann::json{{"mode", to_string(spec.mode)},
                     {"probability", spec.probability},
                     {"seed", spec.seed},
                     {"expert", spec.expert},
                     {"phases", phases}};
}

void from_json(const nlohmann::json& j, PerturbationSpec& spec) {
  spec = PerturbationSpec{};
  spec.mode = parse_perturbation_mode(j.value("mode", std::string("none")));
  spec.probability = j.value("probability", 0.0);
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.expert = j.value("expert", std::string{});
  if (auto it = j.find("phases"); it != j.end()) {
    spec.at_tune = spec.at_eval = false;
    for (const auto& p : *it) {
      const auto name = p.get<std::string>();
      if (name == "tune") spec.at_tune = true;
      else if (name == "eval") spec.at_eval = true;
      else throw UsageError("unknown perturbation phase: " + name);
    }
  }
  if (!(spec.probability >= 0.0 && spec.probability <= 1.0)) {
    throw UsageError("perturbation probability must lie in [0, 1]");
  }
  if (spec.mode == PerturbationSpec::Mode::single_expert && spec.expert.empty()) {
    throw UsageError("single_expert perturbation needs an expert name");
  }
}

std::string transform_question(TaskFamily family, std::string_view raw) {
  if (raw.empty()) throw UsageError("question must be non-empty");
  if (family == TaskFamily::ENTAILMENT || family == TaskFamily::SPATIAL) {
    return " does the image describe \"" + std::string(raw) + "\" ?";
  }
  return std::string(raw);
}

namespace {

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) out += (i + 1 == names.size()) ? " and " : ", ";
    out += names[i];
  }
  return out;
}

std::string count_word(std::size_t n) {
  static constexpr std::array<const char*, 11> kWords{"zero", "one", "two",   "three", "four", "five",
                                                      "six",  "seven", "eight", "nine",  "ten"};
  return n < kWords.size() ? kWords[n] : std::to_string(n);
}

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

std::string render_body(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                        std::string_view query, const std::vector<std::string>& choices) {
  std::string s = instruction_sentence(tpl.expert_names);
  s += "\n\n";
  if (tpl.include_captions) {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      s += tpl.expert_names[i] + "'s description: " + outputs[i].caption + "\n";
    }
    s += "\n";
  }
  s += "Q: ";
  s += ltrim(query);
  s += "\n\n";
  if (tpl.include_answers) {
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      s += tpl.expert_names[i] + "'s answer: " + outputs[i].plausible_answer + "\n";
    }
    s += "\n";
  }
  if (tpl.include_choices) {
    s += "Choices: " + render_choices(choices) + "\n\n";
  }
  s += "A:";
  return s;
}

void check_alignment(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                     const std::vector<std::string>& choices) {
  if (!tpl.include_captions && !tpl.include_answers) {
    throw UsageError("template must include captions or answers");
  }
  if (outputs.size() != tpl.expert_names.size()) {
    throw UsageError("expected " + std::to_string(tpl.expert_names.size()) + " expert outputs, got " +
                     std::to_string(outputs.size()));
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].expert_name != tpl.expert_names[i]) {
      throw UsageError("expert output " + std::to_string(i) + " is from " + outputs[i].expert_name +
                       ", template expects " + tpl.expert_names[i]);
    }
  }
  if (tpl.include_choices && choices.empty()) throw UsageError("template includes choices but none given");
}

}  // namespace

std::string instruction_sentence(const std::vector<std::string>& names) {
  if (names.empty()) throw UsageError("panel must name at least one expert");
  const std::string joined = join_names(names);
  std::string s = "Answer the following multiple-choice question by " + joined +
                  "'s description and their answers to the visual question. ";
  if (names.size() == 1) {
    s += joined + " is a vision-language model to provide clues.";
  } else {
    s += joined + " are " + count_word(names.size()) + " different vision-language models to provide clues.";
  }
  return s;
}

std::string render_choices(const std::vector<std::string>& choices) {
  std::string s = "[";
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i > 0) s += ", ";
    s += choices[i];
  }
  s += "]";
  return s;
}

PromptText build_prompt(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                        std::string_view query, const std::vector<std::string>& choices,
                        const std::vector<Exemplar>& exemplars) {
  check_alignment(tpl, outputs, choices);
  std::string prompt;
  for (const auto& ex : exemplars) {
    const auto& ex_choices = ex.record.choices.empty() ? fixed_choices(ex.record.family) : ex.record.choices;
    check_alignment(tpl, ex.outputs, ex_choices);
    prompt += render_body(tpl, ex.outputs, transform_question(ex.record.family, ex.record.question), ex_choices);
    prompt += " " + ex.gold_text + "\n\n";
  }
  prompt += render_body(tpl, outputs, query, choices);
  return PromptText::from(std::move(prompt));
}

PromptText build_prompt(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                        std::string_view query, const std::vector<std::string>& choices,
                        const std::vector<Exemplar>& exemplars, const PerturbationSpec& perturb,
                        std::string_view instance_id, Phase phase) {
  std::vector<Exemplar> perturbed_exemplars = exemplars;
  for (auto& ex : perturbed_exemplars) {
    ex.outputs = apply_perturbation(ex.outputs, perturb, ex.record.id, phase);
  }
  return build_prompt(effective_template(tpl, perturb, phase),
                      apply_perturbation(outputs, perturb, instance_id, phase), query, choices,
                      perturbed_exemplars);
}

std::vector<InstanceRecord> sample_exemplars(const std::vector<InstanceRecord>& train, std::size_t k,
                                             std::uint64_t seed, std::string_view exclude_id) {
  if (k == 0) return {};
  std::vector<const InstanceRecord*> pool;
  pool.reserve(train.size());
  for (const auto& r : train) {
    if (r.id != exclude_id) pool.push_back(&r);
  }
  if (k > pool.size()) {
    throw UsageError("cannot sample " + std::to_string(k) + " exemplars from " + std::to_string(pool.size()) +
                     " training records");
  }
  // Partial Fisher-Yates: position i receives a uniform draw from [i, n).
  std::mt19937_64 rng(seed);
  std::vector<InstanceRecord> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(*pool[i]);
  }
  return out;
}

bool swap_coin(const PerturbationSpec& spec, std::string_view instance_id, Phase phase) {
  if (spec.probability <= 0.0) return false;
  if (spec.probability >= 1.0) return true;
  std::string key(instance_id);
  key += '\x1f';
  key += to_string(phase);
  return unit_interval(derive_seed(spec.seed, key)) < spec.probability;
}

std::vector<ExpertOutput> apply_perturbation(const std::vector<ExpertOutput>& outputs,
                                             const PerturbationSpec& spec, std::string_view instance_id,
                                             Phase phase) {
  using M = PerturbationSpec::Mode;
  if (spec.mode == M::none || !spec.applies_to(phase)) return outputs;
  std::vector<ExpertOutput> out = outputs;
  switch (spec.mode) {
    case M::swap_caption_labels:
    case M::swap_answer_labels:
      if (out.size() != 2) {
        throw UsageError("label swaps need a panel of exactly 2 experts, got " + std::to_string(out.size()));
      }
      if (swap_coin(spec, instance_id, phase)) {
        if (spec.mode == M::swap_caption_labels) std::swap(out[0].caption, out[1].caption);
        else std::swap(out[0].plausible_answer, out[1].plausible_answer);
      }
      break;
    case M::drop_captions:
      for (auto& o : out) o.caption.clear();
      break;
    case M::drop_answers:
      for (auto& o : out) o.plausible_answer.clear();
      break;
    case M::single_expert: {
      auto it = std::find_if(out.begin(), out.end(), [&](const ExpertOutput& o) { return o.expert_name == spec.expert; });
      if (it == out.end()) throw UsageError("single_expert: " + spec.expert + " is not in the panel");
      out = {*it};
      break;
    }
    case M::none:
      break;
  }
  return out;
}

PromptTemplate effective_template(const PromptTemplate& tpl, const PerturbationSpec& spec, Phase phase) {
  using M = PerturbationSpec::Mode;
  PromptTemplate out = tpl;
  if (!spec.applies_to(phase)) return out;
  if (spec.mode == M::drop_captions) out.include_captions = false;
  if (spec.mode == M::drop_answers) out.include_answers = false;
  if (spec.mode == M::single_expert) out.expert_names = {spec.expert};
  return out;
}

}  // namespace vlmc
