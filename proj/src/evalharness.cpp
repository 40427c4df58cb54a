#include "vlmc/evalharness.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "vlmc/hashing.hpp"
#include "vlmc/parallel.hpp"

namespace vlmc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunMode

RunMode RunMode::parse(std::string_view text) {
  RunMode m;
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == '.') {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  parts.push_back(current);

  const std::string& kind = parts.front();
  if (kind == "single") m.kind = Kind::single;
  else if (kind == "ensemble_avg") m.kind = Kind::ensemble_avg;
  else if (kind == "ensemble_vote") m.kind = Kind::ensemble_vote;
  else if (kind == "cola_zero") m.kind = Kind::cola_zero;
  else if (kind == "export_tuning") m.kind = Kind::export_tuning;
  else throw UsageError("unknown mode '" + std::string(text) + "'");

  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw UsageError("mode parameter '" + parts[i] + "' lacks '='");
    const auto key = parts[i].substr(0, eq);
    const auto value = parts[i].substr(eq + 1);
    if (key == "name" && m.kind == Kind::single) {
      m.expert = value;
    } else if (key == "k" && m.kind == Kind::cola_zero) {
      try {
        std::size_t used = 0;
        const long long k = std::stoll(value, &used);
        if (used != value.size() || k < 0) throw std::invalid_argument("k");
        m.k = static_cast<std::size_t>(k);
      } catch (const std::logic_error&) {
        throw UsageError("mode parameter k must be a non-negative integer, got '" + value + "'");
      }
    } else {
      throw UsageError("mode " + kind + " does not take parameter '" + key + "'");
    }
  }
  if (m.kind == Kind::single && m.expert.empty()) throw UsageError("mode single needs .name=<expert>");
  return m;
}

std::string RunMode::to_string() const {
  switch (kind) {
    case Kind::single: return "single.name=" + expert;
    case Kind::ensemble_avg: return "ensemble_avg";
    case Kind::ensemble_vote: return "ensemble_vote";
    case Kind::cola_zero: return k == 0 ? "cola_zero" : "cola_zero.k=" + std::to_string(k);
    case Kind::export_tuning: return "export_tuning";
  }
  return "cola_zero";
}

// ---------------------------------------------------------------------------
// RunConfig

PromptTemplate RunConfig::prompt_template() const {
  auto tpl = PromptTemplate::for_family(dataset.family, panel_names());
  tpl.include_captions = template_flags.include_captions;
  tpl.include_answers = template_flags.include_answers;
  if (template_flags.include_choices) tpl.include_choices = *template_flags.include_choices;
  return tpl;
}

std::vector<std::string> RunConfig::panel_names() const {
  std::vector<std::string> names;
  for (const auto& h : panel) names.push_back(h.name);
  return names;
}

std::filesystem::path RunConfig::resolved_cache_dir() const {
  if (!cache_dir.empty()) return cache_dir;
  if (const char* env = std::getenv("VLMC_CACHE_DIR"); env && *env) return env;
  return ".vlmc-cache";
}

void RunConfig::validate() const {
  if (panel.empty()) throw UsageError("config field 'panel' must list at least one expert");
  std::vector<std::string> names;
  for (const auto& h : panel) {
    if (std::find(names.begin(), names.end(), h.name) != names.end()) {
      throw UsageError("config field 'panel': duplicate expert name '" + h.name + "'");
    }
    names.push_back(h.name);
  }
  if (coordinator && std::find(names.begin(), names.end(), coordinator->name) != names.end()) {
    throw UsageError("config field 'coordinator': name '" + coordinator->name + "' collides with an expert");
  }
  if (fanout_width < 1) throw UsageError("config field 'fanout_width' must be >= 1");
  if (max_new_tokens < 1) throw UsageError("config field 'max_new_tokens' must be >= 1");
  if (!template_flags.include_captions && !template_flags.include_answers) {
    throw UsageError("config field 'template': include_captions and include_answers cannot both be false");
  }
  const bool needs_coordinator = mode.kind == RunMode::Kind::cola_zero;
  if (needs_coordinator && !coordinator) {
    throw UsageError("config field 'coordinator' is required for mode " + mode.to_string());
  }
  if (mode.kind == RunMode::Kind::single &&
      std::find(names.begin(), names.end(), mode.expert) == names.end()) {
    throw UsageError("config field 'mode': expert '" + mode.expert + "' is not in the panel");
  }
  if ((mode.kind == RunMode::Kind::ensemble_avg || mode.kind == RunMode::Kind::ensemble_vote) &&
      !is_choice_family(dataset.family)) {
    throw UsageError("config field 'mode': " + mode.to_string() + " needs a choice family, dataset is " +
                     std::string(to_string(dataset.family)));
  }
  if (mode.kind == RunMode::Kind::cola_zero && mode.k > 0 && !dataset.paths.count(Split::train)) {
    throw UsageError("config field 'dataset.paths.train' is required for k-shot exemplars");
  }
  if (mode.kind == RunMode::Kind::export_tuning && !dataset.paths.count(Split::train)) {
    throw UsageError("config field 'dataset.paths.train' is required for export_tuning");
  }
  using PM = PerturbationSpec::Mode;
  if ((perturb.mode == PM::swap_caption_labels || perturb.mode == PM::swap_answer_labels) && panel.size() != 2) {
    throw UsageError("config field 'perturb.mode': label swaps need a panel of exactly 2 experts");
  }
  if (perturb.mode == PM::single_expert &&
      std::find(names.begin(), names.end(), perturb.expert) == names.end()) {
    throw UsageError("config field 'perturb.expert': '" + perturb.expert + "' is not in the panel");
  }
  if (perturb.mode == PM::single_expert && mode.kind == RunMode::Kind::single && perturb.expert != mode.expert &&
      perturb.at_eval) {
    throw UsageError("config field 'perturb.expert' removes the expert selected by 'mode'");
  }
}

// cache_dir and fanout_width change how a run executes, never what it computes.
std::string RunConfig::fingerprint() const {
  auto doc = config_to_json(*this);
  doc.erase("cache_dir");
  doc.erase("fanout_width");
  return sha256_hex(doc.dump());
}

json config_to_json(const RunConfig& cfg) {
  json panel = json::array();
  for (const auto& h : cfg.panel) panel.push_back(h);
  json tpl{{"include_captions", cfg.template_flags.include_captions},
           {"include_answers", cfg.template_flags.include_answers},
           {"include_choices", nullptr}};
  if (cfg.template_flags.include_choices) tpl["include_choices"] = *cfg.template_flags.include_choices;
  json doc{{"dataset", cfg.dataset},
           {"eval_split", to_string(cfg.eval_split)},
           {"panel", panel},
           {"coordinator", nullptr},
           {"embedder", cfg.embedder},
           {"mode", cfg.mode.to_string()},
           {"perturb", cfg.perturb},
           {"template", tpl},
           {"seed", cfg.seed},
           {"fanout_width", cfg.fanout_width},
           {"cache_dir", cfg.cache_dir.string()},
           {"max_new_tokens", cfg.max_new_tokens}};
  if (cfg.coordinator) doc["coordinator"] = *cfg.coordinator;
  return doc;
}

RunConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  try {
    cfg.dataset = manifest_from_json(doc.at("dataset"), base_dir);
    cfg.eval_split = parse_split(doc.value("eval_split", std::string("val")));
    for (const auto& h : doc.at("panel")) cfg.panel.push_back(backend_from_json(h, Role::expert));
    if (auto it = doc.find("coordinator"); it != doc.end() && !it->is_null()) {
      cfg.coordinator = backend_from_json(*it, Role::coordinator);
    }
    if (auto it = doc.find("embedder"); it != doc.end() && !it->is_null()) {
      cfg.embedder = backend_from_json(*it, Role::embedder);
    }
    cfg.mode = RunMode::parse(doc.value("mode", std::string("cola_zero")));
    if (auto it = doc.find("perturb"); it != doc.end() && !it->is_null()) cfg.perturb = it->get<PerturbationSpec>();
    if (auto it = doc.find("template"); it != doc.end() && !it->is_null()) {
      cfg.template_flags.include_captions = it->value("include_captions", true);
      cfg.template_flags.include_answers = it->value("include_answers", true);
      if (auto c = it->find("include_choices"); c != it->end() && !c->is_null()) {
        cfg.template_flags.include_choices = c->get<bool>();
      }
    }
    cfg.seed = doc.value("seed", std::uint64_t{0});
    cfg.fanout_width = doc.value("fanout_width", 8);
    cfg.cache_dir = doc.value("cache_dir", std::string{});
    if (!cfg.cache_dir.empty() && cfg.cache_dir.is_relative() && !base_dir.empty()) {
      cfg.cache_dir = (base_dir / cfg.cache_dir).lexically_normal();
    }
    cfg.max_new_tokens = doc.value("max_new_tokens", 30);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

json apply_overrides(json doc, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + ov + "' is not KEY=VALUE");
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);

    json* node = &doc;
    std::string segment;
    std::istringstream path(key);
    std::vector<std::string> segments;
    while (std::getline(path, segment, '.')) segments.push_back(segment);
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (node->is_object()) {
        if (!node->contains(s)) throw UsageError("override key '" + key + "' does not name a config field");
        node = &(*node)[s];
      } else if (node->is_array()) {
        std::size_t idx = 0;
        try {
          idx = std::stoul(s);
        } catch (const std::logic_error&) {
          throw UsageError("override key '" + key + "': '" + s + "' is not an array index");
        }
        if (idx >= node->size()) throw UsageError("override key '" + key + "': index out of range");
        node = &(*node)[idx];
      } else {
        throw UsageError("override key '" + key + "' descends into a scalar");
      }
    }
    auto value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    *node = std::move(value);
  }
  return doc;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  auto raw = json::parse(in, nullptr, false);
  if (raw.is_discarded()) throw UsageError("config " + path.string() + " is not valid JSON");
  const auto base = path.parent_path();
  // Normalize first so every field exists for dotted overrides. Paths stay
  // unresolved until the final parse.
  auto doc = config_to_json(config_from_json(raw));
  auto cfg = config_from_json(apply_overrides(std::move(doc), overrides), base);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Backends

Backends Backends::connect(const RunConfig& cfg) {
  Backends b;
  auto cache = std::make_shared<ResponseCache>(cfg.resolved_cache_dir());
  for (const auto& h : cfg.panel) b.experts.push_back(BackendClient::connect(h, cache));
  if (cfg.coordinator) b.coordinator = BackendClient::connect(*cfg.coordinator, cache);
  b.embedder = make_embedder(cfg.embedder, cache);
  return b;
}

std::size_t Backends::transport_calls() const {
  std::size_t n = 0;
  for (const auto& e : experts) n += e->transport_calls();
  if (coordinator) n += coordinator->transport_calls();
  if (auto* remote = dynamic_cast<BackendClient*>(embedder.get())) n += remote->transport_calls();
  return n;
}

// ---------------------------------------------------------------------------
// Metrics

double mc_accuracy(const std::vector<InstanceRow>& rows) {
  if (rows.empty()) throw UsageError("mc_accuracy of zero rows");
  std::size_t correct = 0;
  for (const auto& r : rows) {
    if (!r.gold_choice) throw UsageError("mc_accuracy: row " + r.id + " has no gold choice");
    if (!r.pick) throw UsageError("mc_accuracy: row " + r.id + " has no pick");
    correct += (r.pick->index == *r.gold_choice);
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

namespace {

std::string answer_key(std::string_view text) {
  std::string s = normalize_text(text).value();
  for (std::string_view article : {"a ", "an ", "the "}) {
    if (s.rfind(article, 0) == 0) {
      s.erase(0, article.size());
      break;
    }
  }
  return s;
}

}  // namespace

double da_accuracy(std::string_view completion, const std::vector<std::string>& gold_direct_answers) {
  if (gold_direct_answers.empty()) throw UsageError("da_accuracy needs gold direct answers");
  const auto key = answer_key(completion);
  std::size_t matches = 0;
  for (const auto& g : gold_direct_answers) matches += (answer_key(g) == key);
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

Metrics compute_metrics(const std::vector<InstanceRow>& rows) {
  Metrics m;
  std::vector<InstanceRow> mc_rows;
  double da_sum = 0.0;
  std::size_t da_n = 0;
  for (const auto& r : rows) {
    if (r.skipped) {
      ++m.n_skipped;
      continue;
    }
    ++m.n_evaluated;
    if (r.degenerate) ++m.n_degenerate;
    if (r.pick && r.gold_choice) mc_rows.push_back(r);
    if (r.da_score) {
      da_sum += *r.da_score;
      ++da_n;
    }
  }
  if (!mc_rows.empty()) m.mc_accuracy = mc_accuracy(mc_rows);
  if (da_n > 0) m.da_accuracy = da_sum / static_cast<double>(da_n);
  return m;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct ExpertSlot {
  std::optional<ExpertOutput> output;
  std::string error;
};

// Outputs for records x experts, fetched with bounded fan-out. A failing
// health check aborts; other failures are recorded per slot.
std::vector<std::vector<ExpertSlot>> fetch_expert_outputs(const std::vector<const InstanceRecord*>& records,
                                                          Backends& backends, int width) {
  const std::size_t n_experts = backends.experts.size();
  std::vector<std::vector<ExpertSlot>> table(records.size(), std::vector<ExpertSlot>(n_experts));
  parallel_for(records.size() * n_experts, width, [&](std::size_t task) {
    const auto r = task / n_experts;
    const auto e = task % n_experts;
    auto& client = *backends.experts[e];
    auto& slot = table[r][e];
    const auto& rec = *records[r];
    try {
      ExpertOutput out;
      out.expert_name = client.name();
      out.caption = client.caption(rec.image);
      out.plausible_answer = client.plausible_answer(rec.image, transform_question(rec.family, rec.question));
      slot.output = std::move(out);
    } catch (const BackendUnavailable&) {
      throw;
    } catch (const Error& e) {
      slot.error = client.name() + " on " + rec.id + ": " + e.what();
    }
  });
  return table;
}

const std::vector<std::string>& choices_of(const InstanceRecord& r) {
  return r.choices.empty() ? fixed_choices(r.family) : r.choices;
}

std::string join_fingerprints(const std::vector<InstanceRow>& rows) {
  std::string all;
  for (const auto& r : rows) {
    all += r.prompt_fingerprint;
    all += '\n';
  }
  return sha256_hex(all);
}

void score_row(InstanceRow& row, const InstanceRecord& rec, const std::string& answer_text) {
  if (row.pick && rec.gold_choice) row.mc_correct = row.pick->index == *rec.gold_choice;
  if (!rec.gold_direct_answers.empty()) row.da_score = da_accuracy(answer_text, rec.gold_direct_answers);
}

}  // namespace

RunReport run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  auto backends = Backends::connect(cfg);
  return run_pipeline(cfg, backends);
}

RunReport run_pipeline(const RunConfig& cfg, Backends& backends) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  if (cfg.mode.kind == RunMode::Kind::export_tuning) {
    throw UsageError("mode export_tuning produces a tuning file; use export_tuning_set");
  }
  if (cfg.mode.kind == RunMode::Kind::cola_zero && !backends.coordinator) {
    throw UsageError("config field 'coordinator' is required for mode " + cfg.mode.to_string());
  }
  const auto data = ingest(cfg.dataset);
  if (!cfg.dataset.paths.count(cfg.eval_split)) {
    throw UsageError("config field 'eval_split': dataset has no " + std::string(to_string(cfg.eval_split)) + " split");
  }
  const auto& eval = data.split(cfg.eval_split);
  const auto& train = data.split(Split::train);
  const std::size_t k = cfg.mode.kind == RunMode::Kind::cola_zero ? cfg.mode.k : 0;
  if (k > 0 && k > train.size()) {
    throw UsageError("mode " + cfg.mode.to_string() + " needs more training records than the " +
                     std::to_string(train.size()) + " available");
  }

  // Exemplar plan per instance; seeds derive from (seed, instance id) so
  // the plan is independent of scheduling.
  std::unordered_map<std::string, std::size_t> train_index;
  for (std::size_t i = 0; i < train.size(); ++i) train_index.emplace(train[i].id, i);
  std::vector<std::vector<std::size_t>> plan(eval.size());
  std::vector<std::string> plan_error(eval.size());
  for (std::size_t i = 0; i < eval.size() && k > 0; ++i) {
    try {
      for (const auto& r : sample_exemplars(train, k, derive_seed(cfg.seed, eval[i].id), eval[i].id)) {
        plan[i].push_back(train_index.at(r.id));
      }
    } catch (const UsageError& e) {
      plan_error[i] = e.what();
    }
  }

  // Stage 1: expert captions and answers for eval records and any exemplar.
  std::vector<const InstanceRecord*> fetch;
  for (const auto& r : eval) fetch.push_back(&r);
  std::vector<std::optional<std::size_t>> train_slot(train.size());
  for (const auto& p : plan) {
    for (auto t : p) {
      if (!train_slot[t]) {
        train_slot[t] = fetch.size();
        fetch.push_back(&train[t]);
      }
    }
  }
  const auto table = fetch_expert_outputs(fetch, backends, cfg.fanout_width);

  auto gather = [&](std::size_t slot, std::vector<ExpertOutput>& outputs, std::vector<std::string>& errors) {
    for (const auto& s : table[slot]) {
      if (s.output) outputs.push_back(*s.output);
      else errors.push_back(s.error);
    }
  };

  // Stage 2: per-instance coordination and scoring.
  const auto tpl = cfg.prompt_template();
  std::vector<InstanceRow> rows(eval.size());
  parallel_for(eval.size(), cfg.fanout_width, [&](std::size_t i) {
    const auto& rec = eval[i];
    auto& row = rows[i];
    row.id = rec.id;
    row.gold_choice = rec.gold_choice;
    row.gold_text = gold_text(rec);

    std::vector<ExpertOutput> raw;
    gather(i, raw, row.errors);
    if (!plan_error[i].empty()) row.errors.push_back(plan_error[i]);
    std::vector<Exemplar> exemplars;
    for (auto t : plan[i]) {
      Exemplar ex{train[t], {}, gold_text(train[t])};
      gather(*train_slot[t], ex.outputs, row.errors);
      exemplars.push_back(std::move(ex));
    }
    const bool choice_family = is_choice_family(rec.family);
    if (choice_family && !rec.gold_choice) row.errors.push_back("record has no gold choice");
    if (!choice_family && rec.gold_direct_answers.empty()) row.errors.push_back("record has no gold answers");
    if (!row.errors.empty()) {
      row.skipped = true;
      return;
    }

    try {
      row.degenerate = std::any_of(raw.begin(), raw.end(), [](const ExpertOutput& o) { return is_degenerate(o); });
      const auto outputs = apply_perturbation(raw, cfg.perturb, rec.id, Phase::eval);
      row.expert_outputs = outputs;
      const auto& choices = choices_of(rec);
      auto& embedder = *backends.embedder;

      switch (cfg.mode.kind) {
        case RunMode::Kind::single: {
          auto it = std::find_if(outputs.begin(), outputs.end(),
                                 [&](const ExpertOutput& o) { return o.expert_name == cfg.mode.expert; });
          if (it == outputs.end()) throw UsageError("expert " + cfg.mode.expert + " removed by perturbation");
          if (choice_family) {
            const auto mapped = map_to_choice(CompletionText{it->plausible_answer, it->expert_name}, choices, embedder);
            row.pick = mapped.pick;
          }
          score_row(row, rec, it->plausible_answer);
          break;
        }
        case RunMode::Kind::ensemble_avg:
        case RunMode::Kind::ensemble_vote: {
          std::vector<ScoreDistribution> dists;
          std::vector<ChoicePick> picks;
          std::vector<std::size_t> order;
          for (const auto& o : outputs) {
            auto mapped = map_to_choice(CompletionText{o.plausible_answer, o.expert_name}, choices, embedder);
            dists.push_back(std::move(mapped.distribution));
            picks.push_back(mapped.pick);
            order.push_back(order.size());
          }
          row.pick = cfg.mode.kind == RunMode::Kind::ensemble_avg ? argmax(ensemble_average(dists))
                                                                  : majority_vote(picks, order);
          score_row(row, rec, row.pick->text);
          break;
        }
        case RunMode::Kind::cola_zero: {
          const auto prompt = build_prompt(tpl, raw, transform_question(rec.family, rec.question), choices,
                                           exemplars, cfg.perturb, rec.id, Phase::eval);
          row.prompt_fingerprint = prompt.fingerprint;
          const auto completion = backends.coordinator->complete(prompt.value, cfg.max_new_tokens);
          row.completion = completion.value;
          if (normalize_text(completion.value).empty()) row.degenerate = true;
          if (choice_family) row.pick = map_to_choice(completion, choices, embedder).pick;
          score_row(row, rec, completion.value);
          break;
        }
        case RunMode::Kind::export_tuning:
          break;
      }
    } catch (const BackendUnavailable&) {
      throw;
    } catch (const Error& e) {
      row.errors.push_back(e.what());
      row.skipped = true;
      row.pick.reset();
      row.mc_correct.reset();
      row.da_score.reset();
    }
  });

  RunReport report;
  report.config = config_to_json(cfg);
  report.config_fingerprint = cfg.fingerprint();
  report.mode = cfg.mode.to_string();
  report.panel = cfg.panel_names();
  report.k = k;
  report.family = cfg.dataset.family;
  report.per_instance = std::move(rows);
  report.prompt_set_fingerprint = join_fingerprints(report.per_instance);
  report.metrics = compute_metrics(report.per_instance);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Tuning export

TuningExport export_tuning_set(const RunConfig& cfg) {
  cfg.validate();
  auto backends = Backends::connect(cfg);
  return export_tuning_set(cfg, backends);
}

TuningExport export_tuning_set(const RunConfig& cfg, Backends& backends) {
  cfg.validate();
  if (cfg.mode.kind != RunMode::Kind::export_tuning) {
    throw UsageError("config field 'mode' must be export_tuning to export tuning pairs");
  }
  const auto data = ingest(cfg.dataset);
  const auto& train = data.split(Split::train);
  std::vector<const InstanceRecord*> fetch;
  for (const auto& r : train) fetch.push_back(&r);
  const auto table = fetch_expert_outputs(fetch, backends, cfg.fanout_width);

  const auto tpl = cfg.prompt_template();
  TuningExport out;
  std::string pairs;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& rec = train[i];
    std::vector<ExpertOutput> outputs;
    std::string error;
    for (const auto& s : table[i]) {
      if (s.output) outputs.push_back(*s.output);
      else error += (error.empty() ? "" : "; ") + s.error;
    }
    const auto target = gold_text(rec);
    if (error.empty() && target.empty()) error = "record has no gold answer";
    if (error.empty()) {
      try {
        const auto prompt = build_prompt(tpl, outputs, transform_question(rec.family, rec.question), choices_of(rec),
                                         {}, cfg.perturb, rec.id, Phase::tune);
        pairs += json{{"id", rec.id}, {"input", prompt.value}, {"target", target}}.dump() + "\n";
        ++out.n_pairs;
        continue;
      } catch (const Error& e) {
        error = e.what();
      }
    }
    out.skipped.push_back({rec.id, error});
  }

  json skipped = json::array();
  for (const auto& s : out.skipped) skipped.push_back({{"id", s.id}, {"error", s.error}});
  const json meta{{"#meta",
                   {{"format", "vlmc-tuning-pairs/1"},
                    {"config_fingerprint", cfg.fingerprint()},
                    {"n_pairs", out.n_pairs},
                    {"skipped", skipped},
                    {"recipe",
                     {{"optimizer", "adafactor"},
                      {"learning_rate", 1e-4},
                      {"batch_size", 16},
                      {"epochs", 1},
                      {"objective", "next-token cross-entropy on target with teacher forcing"},
                      {"decoding", "greedy"}}}}}};
  out.pairs_fingerprint = sha256_hex(pairs);
  out.content = meta.dump() + "\n" + pairs;
  return out;
}

void write_tuning_export(const std::filesystem::path& path, const TuningExport& exported) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << exported.content;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json row_to_json(const InstanceRow& r) {
  json j{{"id", r.id},
         {"prompt_fingerprint", r.prompt_fingerprint},
         {"expert_outputs", r.expert_outputs},
         {"completion", nullptr},
         {"pick", nullptr},
         {"gold_choice", nullptr},
         {"gold_text", r.gold_text},
         {"mc_correct", nullptr},
         {"da_score", nullptr},
         {"degenerate", r.degenerate},
         {"skipped", r.skipped},
         {"errors", r.errors}};
  if (r.completion) j["completion"] = *r.completion;
  if (r.pick) j["pick"] = *r.pick;
  if (r.gold_choice) j["gold_choice"] = *r.gold_choice;
  if (r.mc_correct) j["mc_correct"] = *r.mc_correct;
  if (r.da_score) j["da_score"] = *r.da_score;
  return j;
}

InstanceRow row_from_json(const json& j) {
  InstanceRow r;
  r.id = j.at("id").get<std::string>();
  r.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
  r.expert_outputs = j.at("expert_outputs").get<std::vector<ExpertOutput>>();
  if (!j.at("completion").is_null()) r.completion = j["completion"].get<std::string>();
  if (!j.at("pick").is_null()) r.pick = j["pick"].get<ChoicePick>();
  if (!j.at("gold_choice").is_null()) r.gold_choice = j["gold_choice"].get<std::size_t>();
  r.gold_text = j.at("gold_text").get<std::string>();
  if (!j.at("mc_correct").is_null()) r.mc_correct = j["mc_correct"].get<bool>();
  if (!j.at("da_score").is_null()) r.da_score = j["da_score"].get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.skipped = j.at("skipped").get<bool>();
  r.errors = j.at("errors").get<std::vector<std::string>>();
  return r;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string percent(double fraction) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << fraction * 100.0;
  return os.str();
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) s += sep;
    s += items[i];
  }
  return s;
}

std::string accuracy_cell(const Metrics& m) {
  if (m.mc_accuracy) return percent(*m.mc_accuracy);
  if (m.da_accuracy) return percent(*m.da_accuracy);
  return "n/a";
}

}  // namespace

json report_to_json(const RunReport& report) {
  json rows = json::array();
  for (const auto& r : report.per_instance) rows.push_back(row_to_json(r));
  return json{{"config_fingerprint", report.config_fingerprint},
              {"config", report.config},
              {"mode", report.mode},
              {"panel", report.panel},
              {"k", report.k},
              {"family", to_string(report.family)},
              {"prompt_set_fingerprint", report.prompt_set_fingerprint},
              {"per_instance", rows},
              {"metrics",
               {{"mc_accuracy", optional_json(report.metrics.mc_accuracy)},
                {"da_accuracy", optional_json(report.metrics.da_accuracy)},
                {"n_evaluated", report.metrics.n_evaluated},
                {"n_skipped", report.metrics.n_skipped},
                {"n_degenerate", report.metrics.n_degenerate}}}};
}

RunReport report_from_json(const json& doc) {
  RunReport r;
  r.config_fingerprint = doc.at("config_fingerprint").get<std::string>();
  r.config = doc.at("config");
  r.mode = doc.at("mode").get<std::string>();
  r.panel = doc.at("panel").get<std::vector<std::string>>();
  r.k = doc.at("k").get<std::size_t>();
  r.family = parse_task_family(doc.at("family").get<std::string>());
  r.prompt_set_fingerprint = doc.at("prompt_set_fingerprint").get<std::string>();
  for (const auto& row : doc.at("per_instance")) r.per_instance.push_back(row_from_json(row));
  const auto& m = doc.at("metrics");
  if (!m.at("mc_accuracy").is_null()) r.metrics.mc_accuracy = m["mc_accuracy"].get<double>();
  if (!m.at("da_accuracy").is_null()) r.metrics.da_accuracy = m["da_accuracy"].get<double>();
  r.metrics.n_evaluated = m.at("n_evaluated").get<std::size_t>();
  r.metrics.n_skipped = m.at("n_skipped").get<std::size_t>();
  r.metrics.n_degenerate = m.at("n_degenerate").get<std::size_t>();
  return r;
}

std::string render_markdown(const RunReport& report) {
  const auto& m = report.metrics;
  std::string cell = accuracy_cell(m);
  if (m.n_degenerate > 0) cell += "[^degenerate]";
  std::string s = "| Mode | Panel | k | Accuracy |\n|---|---|---|---|\n";
  s += "| " + report.mode + " | " + join(report.panel, ", ") + " | " + std::to_string(report.k) + " | " + cell + " |\n";
  s += "\nEvaluated " + std::to_string(m.n_evaluated) + ", skipped " + std::to_string(m.n_skipped) + ".\n";
  if (m.n_degenerate > 0) {
    s += "\n[^degenerate]: " + std::to_string(m.n_degenerate) + " of " + std::to_string(m.n_evaluated) +
         " evaluated rows had an empty completion, caption or answer.\n";
  }
  return s;
}

std::filesystem::path emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& out_dir) {
  const auto dir = out_dir / report.config_fingerprint;
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };
  if (format == ReportFormat::markdown_table) {
    write(dir / "report.md", render_markdown(report));
    return dir / "report.md";
  }
  write(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write(dir / "timing.json", json{{"wall_seconds", report.wall_seconds}}.dump() + "\n");
  return dir / "report.json";
}

RunReport load_report(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "report.json");
  if (!in) throw Error("cannot read " + (run_dir / "report.json").string());
  auto report = report_from_json(json::parse(in));
  std::ifstream timing(run_dir / "timing.json");
  if (timing) report.wall_seconds = json::parse(timing).value("wall_seconds", 0.0);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation matrix

std::vector<AblationCase> ablation_cases(const RunConfig& base) {
  base.validate();
  if (base.panel.size() != 2) throw UsageError("ablate needs a panel of exactly 2 experts");
  if (base.mode.kind != RunMode::Kind::cola_zero) throw UsageError("ablate needs mode cola_zero");
  using PM = PerturbationSpec::Mode;
  const auto& first = base.panel[0].name;
  const auto& second = base.panel[1].name;
  const std::uint64_t seed = base.perturb.seed;

  auto make = [&](std::string label, std::string description, PerturbationSpec spec) {
    RunConfig cfg = base;
    cfg.perturb = std::move(spec);
    cfg.validate();
    return AblationCase{std::move(label), std::move(description), std::move(cfg)};
  };
  auto spec = [&](PM mode, double p, std::string expert, bool tune, bool eval) {
    PerturbationSpec s;
    s.mode = mode;
    s.probability = p;
    s.seed = seed;
    s.expert = std::move(expert);
    s.at_tune = tune;
    s.at_eval = eval;
    return s;
  };
  return {
      make("#1", "single expert " + first, spec(PM::single_expert, 0.0, first, true, true)),
      make("#2", "single expert " + second, spec(PM::single_expert, 0.0, second, true, true)),
      make("#3", "answers only (no captions)", spec(PM::drop_captions, 0.0, {}, true, true)),
      make("#4", "captions only (no answers)", spec(PM::drop_answers, 0.0, {}, true, true)),
      make("#5", "caption labels swapped p=0.5, tune+eval", spec(PM::swap_caption_labels, 0.5, {}, true, true)),
      make("#6", "answer labels swapped p=0.5, tune+eval", spec(PM::swap_answer_labels, 0.5, {}, true, true)),
      make("#7", "answer labels swapped at eval only", spec(PM::swap_answer_labels, 1.0, {}, false, true)),
      make("baseline", "unperturbed", PerturbationSpec{}),
  };
}

std::vector<AblationRow> run_ablation(const RunConfig& base) {
  const auto cases = ablation_cases(base);
  auto backends = Backends::connect(base);
  std::vector<AblationRow> rows;
  for (const auto& c : cases) {
    AblationRow row{c, run_pipeline(c.config, backends), {}};
    if (c.config.dataset.paths.count(Split::train)) {
      RunConfig tune = c.config;
      tune.mode = RunMode{RunMode::Kind::export_tuning, {}, 0};
      row.tune_pairs_fingerprint = export_tuning_set(tune, backends).pairs_fingerprint;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string s = "| # | Configuration | Tune pairs | Eval prompts | Accuracy |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto tune = r.tune_pairs_fingerprint.empty() ? std::string("n/a") : r.tune_pairs_fingerprint.substr(0, 12);
    s += "| " + r.ablation.label + " | " + r.ablation.description + " | " + tune + " | " +
         r.report.prompt_set_fingerprint.substr(0, 12) + " | " + accuracy_cell(r.report.metrics) + " |\n";
  }
  return s;
}

}  // namespace vlmc
