#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmc/core.hpp"

namespace vlmc {

// Where a benchmark lives on disk and which upstream adapter reads it.
// name: aokvqa | okvqa | vqav2 | esnlive | vsr | gqa | clevr | custom.
// Files whose first non-blank line is a canonical record are read as
// canonical JSONL regardless of name.
struct DatasetManifest {
  std::string name = "custom";
  TaskFamily family = TaskFamily::VQA_MC;
  std::map<Split, std::filesystem::path> paths;
  std::optional<std::string> image_root;

  bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
// Relative split paths resolve against base_dir.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct Violation {
  std::string id;
  std::size_t row = 0;  // 0-based position in the checked list
  std::string message;

  bool operator==(const Violation&) const = default;
};

// Checks every InstanceRecord invariant plus duplicate ids. An empty result
// means the set is clean.
std::vector<Violation> validate(const std::vector<InstanceRecord>& records);

struct IngestOptions {
  // Strict ingestion throws ValidationError on any violation; lenient
  // ingestion drops offending rows and lists them in rejected.
  bool strict = true;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::map<Split, std::vector<InstanceRecord>> splits;
  std::vector<Violation> rejected;

  const std::vector<InstanceRecord>& split(Split s) const;
};

LoadedDataset ingest(const DatasetManifest& manifest, const IngestOptions& options = {});

// Canonical interchange format: one InstanceRecord JSON object per line.
std::vector<InstanceRecord> read_canonical_jsonl(const std::filesystem::path& path);
std::string to_canonical_jsonl(const std::vector<InstanceRecord>& records);
void write_canonical_jsonl(const std::filesystem::path& path, const std::vector<InstanceRecord>& records);

}  // namespace vlmc
