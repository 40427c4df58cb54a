// vlmc: command-line front end for the evaluation harness.
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vlmc/evalharness.hpp"
#include "vlmc/mock_server.hpp"

namespace {

using namespace vlmc;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitTransport = 3;
constexpr int kExitData = 4;

constexpr const char* kConfigHelp = R"(config schema (JSON):
  dataset        {name, family: VQA_MC|VQA_DA|ENTAILMENT|SPATIAL,
                  paths: {train?, val?, test?}, image_root?}
  eval_split     "val" (default) | "train" | "test"
  panel          [{name, base_url, timeout_ms?, max_retries?}, ...]
  coordinator    {name, base_url, ...}   required for cola_zero
  embedder       {name, base_url}        default builtin:fallback
  mode           single.name=<expert> | ensemble_avg | ensemble_vote |
                 cola_zero[.k=<n>] | export_tuning
  perturb        {mode, probability, seed, expert, phases: [tune, eval]}
  template       {include_captions, include_answers, include_choices}
  seed, fanout_width, cache_dir, max_new_tokens
overrides: --set dotted.key=value (value parsed as JSON, else string)
)";

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "Run config JSON")->required();
  cmd->add_option("--set", args.overrides, "KEY=VALUE override (repeatable)");
}

ReportFormat parse_format(const std::string& text) {
  return text == "markdown" ? ReportFormat::markdown_table : ReportFormat::json;
}

void print_violations(const std::vector<Violation>& violations) {
  for (const auto& v : violations) {
    std::cerr << "  row " << v.row << " id=" << (v.id.empty() ? "<none>" : v.id) << ": " << v.message << '\n';
  }
}

int cmd_run(const ConfigArgs& args, const std::string& out_dir, const std::string& format) {
  const auto cfg = load_config(args.path, args.overrides);
  const auto report = run_pipeline(cfg);
  const auto written = emit_report(report, parse_format(format), out_dir);
  std::cout << render_markdown(report);
  std::cout << "report: " << written.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const ConfigArgs& args, const std::string& out_dir, const std::string& format) {
  const auto cfg = load_config(args.path, args.overrides);
  const auto rows = run_ablation(cfg);
  const auto table = render_ablation_markdown(rows);
  for (const auto& r : rows) emit_report(r.report, parse_format(format), out_dir);
  const auto dir = std::filesystem::path(out_dir) / ("ablation-" + cfg.fingerprint());
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ablation.md", std::ios::trunc) << table;
  std::cout << table << "table: " << (dir / "ablation.md").string() << '\n';
  return kExitOk;
}

int cmd_export(const ConfigArgs& args, const std::string& out_path) {
  auto overrides = args.overrides;
  overrides.insert(overrides.begin(), "mode=export_tuning");
  const auto cfg = load_config(args.path, overrides);
  const auto exported = export_tuning_set(cfg);
  write_tuning_export(out_path, exported);
  std::cout << "wrote " << exported.n_pairs << " pairs to " << out_path << " (" << exported.skipped.size()
            << " skipped)\n";
  for (const auto& s : exported.skipped) std::cerr << "  skipped " << s.id << ": " << s.error << '\n';
  return kExitOk;
}

MockServer* g_server = nullptr;

int cmd_serve(const std::string& fixtures, int port, const std::string& mode, const std::string& sidecar) {
  std::optional<CoordinatorMode> m;
  if (!mode.empty()) m = CoordinatorMode::parse(mode);
  std::optional<std::filesystem::path> side;
  if (!sidecar.empty()) side = sidecar;
  auto server = serve_mock(fixtures, port, m, side);
  g_server = server.get();
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::cout << "serving " << fixtures << " at " << server->base_url() << std::endl;
  server->wait();
  return kExitOk;
}

int cmd_validate(const ConfigArgs& args, const std::string& canonical_dir) {
  auto raw_cfg = load_config(args.path, args.overrides);
  const auto data = ingest(raw_cfg.dataset, IngestOptions{false});
  for (const auto& [split, records] : data.splits) {
    std::cout << to_string(split) << ": " << records.size() << " records\n";
    if (!canonical_dir.empty()) {
      write_canonical_jsonl(std::filesystem::path(canonical_dir) / (std::string(to_string(split)) + ".jsonl"),
                            records);
    }
  }
  if (!data.rejected.empty()) {
    std::cerr << data.rejected.size() << " invalid record(s):\n";
    print_violations(data.rejected);
    return kExitData;
  }
  std::cout << "ok\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& format) {
  const auto report = load_report(run_dir);
  if (parse_format(format) == ReportFormat::markdown_table) std::cout << render_markdown(report);
  else std::cout << report_to_json(report).dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coordinate vision-language experts through a language model and score the result"};
  app.require_subcommand(1);

  ConfigArgs cfg_args;
  std::string out_dir = "runs";
  std::string format = "json";
  auto formats = CLI::IsMember({"json", "markdown"});

  auto* run = app.add_subcommand("run", "Evaluate one configuration");
  add_config_options(run, cfg_args);
  run->add_option("--out", out_dir, "Report root directory");
  run->add_option("--format", format, "Report format")->check(formats);

  auto* ablate = app.add_subcommand("ablate", "Run the perturbation ablation matrix");
  add_config_options(ablate, cfg_args);
  ablate->add_option("--out", out_dir, "Report root directory");
  ablate->add_option("--format", format, "Per-row report format")->check(formats);

  std::string export_path = "tuning.jsonl";
  auto* exp = app.add_subcommand("export-tuning", "Write prompt/target pairs for coordinator tuning");
  add_config_options(exp, cfg_args);
  exp->add_option("--out", export_path, "Output JSONL file");

  std::string fixtures;
  int port = 8080;
  std::string mock_mode;
  std::string sidecar;
  auto* serve = app.add_subcommand("serve-mock", "Serve fixture responses over the backend protocol");
  serve->add_option("--fixtures", fixtures, "Fixture directory")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--mode", mock_mode, "fixtures | oracle | echo-expert:NAME | fixed:TEXT");
  serve->add_option("--sidecar", sidecar, "Canonical JSONL with gold labels for oracle mode");

  std::string canonical_dir;
  auto* validate = app.add_subcommand("validate-data", "Ingest and check the configured dataset");
  add_config_options(validate, cfg_args);
  validate->add_option("--canonical", canonical_dir, "Also write canonical JSONL per split here");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Render a stored run report");
  report->add_option("run_dir", run_dir, "Directory holding report.json")->required();
  report->add_option("--format", format, "Output format")->check(formats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(cfg_args, out_dir, format);
    if (*ablate) return cmd_ablate(cfg_args, out_dir, format);
    if (*exp) return cmd_export(cfg_args, export_path);
    if (*serve) return cmd_serve(fixtures, port, mock_mode, sidecar);
    if (*validate) return cmd_validate(cfg_args, canonical_dir);
    if (*report) return cmd_report(run_dir, format);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << kConfigHelp;
    return kExitUsage;
  } catch (const BackendUnavailable& e) {
    std::cerr << "backend unavailable: " << e.what() << '\n';
    return kExitTransport;
  } catch (const TransportError& e) {
    std::cerr << "transport failure: " << e.what() << '\n';
    return kExitTransport;
  } catch (const ValidationError& e) {
    std::cerr << "invalid data: " << e.what() << '\n';
    for (const auto& id : e.ids()) std::cerr << "  " << id << '\n';
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "invalid data: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
