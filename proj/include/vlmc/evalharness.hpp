#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmc/backends.hpp"
#include "vlmc/core.hpp"
#include "vlmc/datasets.hpp"
#include "vlmc/mapping.hpp"
#include "vlmc/promptkit.hpp"

namespace vlmc {

// What a run computes. String grammar: "single.name=<expert>",
// "ensemble_avg", "ensemble_vote", "cola_zero" / "cola_zero.k=<k>",
// "export_tuning".
struct RunMode {
  enum class Kind { single, ensemble_avg, ensemble_vote, cola_zero, export_tuning };
  Kind kind = Kind::cola_zero;
  std::string expert;
  std::size_t k = 0;

  static RunMode parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const RunMode&) const = default;
};

struct TemplateFlags {
  bool include_captions = true;
  bool include_answers = true;
  std::optional<bool> include_choices;  // default: on for choice families

  bool operator==(const TemplateFlags&) const = default;
};

struct RunConfig {
  DatasetManifest dataset;
  Split eval_split = Split::val;
  std::vector<BackendHandle> panel;
  std::optional<BackendHandle> coordinator;
  BackendHandle embedder{"fallback", std::string(kBuiltinFallbackUrl), Role::embedder, 30000, 0};
  RunMode mode;
  PerturbationSpec perturb;
  TemplateFlags template_flags;
  std::uint64_t seed = 0;
  int fanout_width = 8;
  std::filesystem::path cache_dir;  // empty: $VLMC_CACHE_DIR, else .vlmc-cache
  int max_new_tokens = 30;

  PromptTemplate prompt_template() const;
  std::vector<std::string> panel_names() const;
  std::filesystem::path resolved_cache_dir() const;
  // Throws UsageError naming the offending field.
  void validate() const;
  // sha256 of the canonical JSON form without the execution-only fields
  // cache_dir and fanout_width.
  std::string fingerprint() const;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json config_to_json(const RunConfig& cfg);
// Relative dataset paths resolve against base_dir.
RunConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Applies "dotted.key=value" overrides. Values parse as JSON when possible,
// otherwise as strings. Unknown keys throw UsageError.
nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& overrides);

struct InstanceRow {
  std::string id;
  std::string prompt_fingerprint;
  std::vector<ExpertOutput> expert_outputs;  // after eval-phase perturbation
  std::optional<std::string> completion;
  std::optional<ChoicePick> pick;
  std::optional<std::size_t> gold_choice;
  std::string gold_text;
  std::optional<bool> mc_correct;
  std::optional<double> da_score;
  bool degenerate = false;
  bool skipped = false;
  std::vector<std::string> errors;

  bool operator==(const InstanceRow&) const = default;
};

struct Metrics {
  std::optional<double> mc_accuracy;
  std::optional<double> da_accuracy;
  std::size_t n_evaluated = 0;
  std::size_t n_skipped = 0;
  std::size_t n_degenerate = 0;

  bool operator==(const Metrics&) const = default;
};

struct RunReport {
  std::string config_fingerprint;
  nlohmann::json config;
  std::string mode;
  std::vector<std::string> panel;
  std::size_t k = 0;
  TaskFamily family = TaskFamily::VQA_MC;
  std::string prompt_set_fingerprint;  // digest over per-instance prompt fingerprints
  std::vector<InstanceRow> per_instance;
  Metrics metrics;
  double wall_seconds = 0.0;  // kept out of report.json

  bool operator==(const RunReport&) const = default;
};

// Live connections for one run.
struct Backends {
  std::vector<std::shared_ptr<BackendClient>> experts;  // panel order
  std::shared_ptr<BackendClient> coordinator;
  std::shared_ptr<Embedder> embedder;

  static Backends connect(const RunConfig& cfg);
  // Transport attempts across all clients (health checks excluded).
  std::size_t transport_calls() const;
};

RunReport run_pipeline(const RunConfig& cfg);
RunReport run_pipeline(const RunConfig& cfg, Backends& backends);

// Fraction of rows whose pick matches gold_choice. Throws UsageError on an
// empty set or a row lacking a pick or gold.
double mc_accuracy(const std::vector<InstanceRow>& rows);

// Soft VQA score min(matches / 3, 1); matching compares normalized text with
// a leading article ("a ", "an ", "the ") removed.
double da_accuracy(std::string_view completion, const std::vector<std::string>& gold_direct_answers);

// Deterministic fold over rows in dataset order.
Metrics compute_metrics(const std::vector<InstanceRow>& rows);

struct SkippedItem {
  std::string id;
  std::string error;
};

struct TuningExport {
  std::string content;            // full JSONL, "#meta" line first
  std::string pairs_fingerprint;  // sha256 over the pair lines only
  std::size_t n_pairs = 0;
  std::vector<SkippedItem> skipped;
};

// Emits one {id, input, target} pair per train record with the tune-phase
// perturbation applied and no exemplars. Requires mode export_tuning.
TuningExport export_tuning_set(const RunConfig& cfg);
TuningExport export_tuning_set(const RunConfig& cfg, Backends& backends);
void write_tuning_export(const std::filesystem::path& path, const TuningExport& exported);

enum class ReportFormat { json, markdown_table };

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);
std::string render_markdown(const RunReport& report);

// Writes under out_dir/<config fingerprint>/: report.json plus timing.json,
// or report.md. Returns the written report path.
std::filesystem::path emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& out_dir);
RunReport load_report(const std::filesystem::path& run_dir);

// The seven perturbation configurations plus the unperturbed baseline.
struct AblationCase {
  std::string label;  // "#1".."#7", "baseline"
  std::string description;
  RunConfig config;
};

struct AblationRow {
  AblationCase ablation;
  RunReport report;
  std::string tune_pairs_fingerprint;  // empty when the dataset has no train split
};

std::vector<AblationCase> ablation_cases(const RunConfig& base);
std::vector<AblationRow> run_ablation(const RunConfig& base);
std::string render_ablation_markdown(const std::vector<AblationRow>& rows);

}  // namespace vlmc
