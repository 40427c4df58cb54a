#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vlmc/core.hpp"

namespace vlmc {

// Layout flags plus the ordered expert panel. Rendering rules live in
// build_prompt.
struct PromptTemplate {
  TaskFamily family = TaskFamily::VQA_MC;
  std::vector<std::string> expert_names;
  bool include_captions = true;
  bool include_answers = true;
  bool include_choices = true;

  // Default layout for a family: choices shown for every choice family.
  static PromptTemplate for_family(TaskFamily family, std::vector<std::string> expert_names);
};

struct PromptText {
  std::string value;
  std::string fingerprint;  // sha256 hex of value

  static PromptText from(std::string value);
};

struct Exemplar {
  InstanceRecord record;
  std::vector<ExpertOutput> outputs;
  std::string gold_text;
};

enum class Phase { tune, eval };

std::string_view to_string(Phase phase);

struct PerturbationSpec {
  enum class Mode { none, swap_caption_labels, swap_answer_labels, drop_captions, drop_answers, single_expert };

  Mode mode = Mode::none;
  double probability = 0.0;  // swap modes only
  std::uint64_t seed = 0;
  std::string expert;  // single_expert only
  bool at_tune = true;
  bool at_eval = true;

  bool applies_to(Phase phase) const { return phase == Phase::tune ? at_tune : at_eval; }
  bool operator==(const PerturbationSpec&) const = default;
};

std::string_view to_string(PerturbationSpec::Mode mode);
PerturbationSpec::Mode parse_perturbation_mode(std::string_view text);

void to_json(nlohmann::json& j, const PerturbationSpec& spec);
void from_json(const nlohmann::json& j, PerturbationSpec& spec);

// Question as sent to the experts: unchanged for the VQA families, wrapped
// in ` does the image describe "<premise>" ?` for ENTAILMENT and SPATIAL.
std::string transform_question(TaskFamily family, std::string_view raw);

// Instruction sentence naming the panel, e.g. for {OFA, BLIP}:
// "Answer the following multiple-choice question by OFA and BLIP's ...".
std::string instruction_sentence(const std::vector<std::string>& expert_names);

// Renders "[a, b, c]".
std::string render_choices(const std::vector<std::string>& choices);

// Assembles the coordinator prompt. Exemplar blocks come first, each the full
// body followed by " <gold>" after "A:" and one blank line; the query block
// ends with "A:" and no trailing whitespace.
PromptText build_prompt(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                        std::string_view query, const std::vector<std::string>& choices,
                        const std::vector<Exemplar>& exemplars);

// Same, after applying the perturbation for the phase to the query outputs
// (keyed by instance_id) and to each exemplar (keyed by its record id).
PromptText build_prompt(const PromptTemplate& tpl, const std::vector<ExpertOutput>& outputs,
                        std::string_view query, const std::vector<std::string>& choices,
                        const std::vector<Exemplar>& exemplars, const PerturbationSpec& perturb,
                        std::string_view instance_id, Phase phase);

// Uniform sample without replacement of k train records other than
// exclude_id, in draw order. Deterministic for a seed on every platform.
std::vector<InstanceRecord> sample_exemplars(const std::vector<InstanceRecord>& train, std::size_t k,
                                             std::uint64_t seed, std::string_view exclude_id);

// Per-instance coin for probabilistic swaps, derived from (seed, id, phase).
bool swap_coin(const PerturbationSpec& spec, std::string_view instance_id, Phase phase);

// Applies the spec for the phase. Returns the outputs unchanged when the
// spec does not apply to the phase.
std::vector<ExpertOutput> apply_perturbation(const std::vector<ExpertOutput>& outputs,
                                             const PerturbationSpec& spec, std::string_view instance_id,
                                             Phase phase);

// Template actually rendered under a perturbation: drop modes hide the
// dropped section, single_expert narrows the panel.
PromptTemplate effective_template(const PromptTemplate& tpl, const PerturbationSpec& spec, Phase phase);

}  // namespace vlmc
