#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "vlmc/evalharness.hpp"
#include "vlmc/mock_server.hpp"

namespace vlmc::testing {

inline std::filesystem::path fixtures() { return VLMC_FIXTURES; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("vlmc-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Mock server over the checked-in fixtures.
inline std::unique_ptr<MockServer> start_mock(const std::string& mode = "oracle") {
  return serve_mock(fixtures() / "mock", 0, CoordinatorMode::parse(mode));
}

inline DatasetManifest aokvqa_manifest() {
  DatasetManifest m;
  m.name = "aokvqa";
  m.family = TaskFamily::VQA_MC;
  m.paths[Split::train] = fixtures() / "data/aokvqa/train.json";
  m.paths[Split::val] = fixtures() / "data/aokvqa/val.json";
  return m;
}

inline DatasetManifest entailment_manifest() {
  DatasetManifest m;
  m.name = "custom";
  m.family = TaskFamily::ENTAILMENT;
  m.paths[Split::val] = fixtures() / "data/entailment/val.jsonl";
  return m;
}

inline DatasetManifest okvqa_manifest() {
  DatasetManifest m;
  m.name = "okvqa";
  m.family = TaskFamily::VQA_DA;
  m.paths[Split::train] = fixtures() / "data/okvqa/train.json";
  m.paths[Split::val] = fixtures() / "data/okvqa/val.json";
  return m;
}

// OFA + BLIP panel and an oracle coordinator on the given server.
inline RunConfig mock_config(const MockServer& server, const DatasetManifest& data,
                             const std::filesystem::path& cache_dir) {
  RunConfig cfg;
  cfg.dataset = data;
  cfg.panel = {{"OFA", server.url_for("OFA"), Role::expert, 5000, 2},
               {"BLIP", server.url_for("BLIP"), Role::expert, 5000, 2}};
  cfg.coordinator = BackendHandle{"coordinator", server.url_for("coordinator"), Role::coordinator, 5000, 2};
  cfg.mode = RunMode::parse("cola_zero");
  cfg.cache_dir = cache_dir;
  return cfg;
}

inline ExpertOutput out(std::string name, std::string caption, std::string answer) {
  return ExpertOutput{std::move(name), std::move(caption), std::move(answer)};
}

// Inputs for one checked-in golden prompt.
struct GoldenCase {
  PromptTemplate tpl;
  std::vector<ExpertOutput> outputs;
  std::string query;
  std::vector<std::string> choices;
  std::vector<Exemplar> exemplars;
};

inline std::vector<ExpertOutput> outputs_from(const nlohmann::json& rows) {
  std::vector<ExpertOutput> v;
  for (const auto& r : rows) v.push_back(out(r[0], r[1], r[2]));
  return v;
}

inline GoldenCase load_golden(const std::string& family) {
  std::ifstream in(fixtures() / "golden" / (family + ".json"));
  const auto doc = nlohmann::json::parse(in);
  GoldenCase g;
  const auto fam = parse_task_family(doc.at("family").get<std::string>());
  g.outputs = outputs_from(doc.at("outputs"));
  std::vector<std::string> names;
  for (const auto& o : g.outputs) names.push_back(o.expert_name);
  g.tpl = PromptTemplate::for_family(fam, names);
  g.query = transform_question(fam, doc.at("question").get<std::string>());
  g.choices = doc.at("choices").get<std::vector<std::string>>();
  int n = 0;
  for (const auto& ex : doc.at("exemplars")) {
    InstanceRecord r;
    r.id = "ex" + std::to_string(n++);
    r.family = fam;
    r.question = ex.at("question").get<std::string>();
    r.choices = ex.at("choices").get<std::vector<std::string>>();
    r.split = Split::train;
    g.exemplars.push_back({r, outputs_from(ex.at("outputs")), ex.at("gold").get<std::string>()});
  }
  return g;
}

}  // namespace vlmc::testing
