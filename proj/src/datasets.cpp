#include "vlmc/datasets.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace vlmc {

using nlohmann::json;

void to_json(json& j, const DatasetManifest& m) {
  json paths = json::object();
  for (const auto& [split, path] : m.paths) paths[std::string(to_string(split))] = path.string();
  j = json{{"name", m.name}, {"family", to_string(m.family)}, {"paths", paths}, {"image_root", nullptr}};
  if (m.image_root) j["image_root"] = *m.image_root;
}

DatasetManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> kNames{"aokvqa", "okvqa", "vqav2", "esnlive", "vsr", "gqa", "clevr", "custom"};
  DatasetManifest m;
  m.name = j.value("name", std::string("custom"));
  if (!kNames.count(m.name)) throw UsageError("unknown dataset name: " + m.name);
  m.family = parse_task_family(j.at("family").get<std::string>());
  for (const auto& [split, path] : j.at("paths").items()) {
    std::filesystem::path p = path.get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    m.paths[parse_split(split)] = p.lexically_normal();
  }
  if (auto it = j.find("image_root"); it != j.end() && !it->is_null()) m.image_root = it->get<std::string>();
  return m;
}

std::vector<Violation> validate(const std::vector<InstanceRecord>& records) {
  std::vector<Violation> out;
  std::unordered_map<std::string, std::size_t> first_row;
  for (std::size_t row = 0; row < records.size(); ++row) {
    const auto& r = records[row];
    auto add = [&](std::string msg) { out.push_back({r.id, row, std::move(msg)}); };

    if (r.id.empty()) add("empty id");
    if (auto [it, inserted] = first_row.emplace(r.id, row); !inserted) {
      add("duplicate id '" + r.id + "' at rows " + std::to_string(it->second) + " and " + std::to_string(row));
    }
    if (r.image.value.empty()) add("empty image reference");
    if (r.question.empty()) add("empty question");
    if (r.gold_choice && *r.gold_choice >= r.choices.size()) {
      add("gold_choice " + std::to_string(*r.gold_choice) + " out of range for " + std::to_string(r.choices.size()) +
          " choices");
    }
    switch (r.family) {
      case TaskFamily::VQA_MC: {
        if (!r.gold_choice) add("VQA_MC record without gold_choice");
        if (r.choices.size() < 2) add("VQA_MC record needs at least 2 choices");
        std::set<std::string> seen;
        for (const auto& c : r.choices) {
          if (!seen.insert(normalize_text(c).value()).second) {
            add("duplicate choice after normalization: '" + c + "'");
            break;
          }
        }
        break;
      }
      case TaskFamily::VQA_DA:
        if (r.gold_direct_answers.empty()) add("VQA_DA record without gold direct answers");
        break;
      case TaskFamily::ENTAILMENT:
      case TaskFamily::SPATIAL:
        if (r.choices != fixed_choices(r.family)) {
          add(std::string(to_string(r.family)) + " choices must be " + [&] {
            std::string s;
            for (const auto& c : fixed_choices(r.family)) s += (s.empty() ? "" : ",") + c;
            return s;
          }());
        }
        break;
    }
  }
  return out;
}

const std::vector<InstanceRecord>& LoadedDataset::split(Split s) const {
  static const std::vector<InstanceRecord> empty;
  auto it = splits.find(s);
  return it == splits.end() ? empty : it->second;
}

namespace {

struct RawRow {
  json value;
  std::size_t line = 0;  // 1-based line (JSONL) or element index + 1
  std::string key;       // object key for keyed upstream files (GQA)
};

std::vector<RawRow> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open split file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<RawRow> rows;
  // Whole-file JSON documents: arrays, CLEVR-style {"questions": [...]}, and
  // GQA-style objects keyed by question id.
  auto whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded()) {
    if (whole.is_array()) {
      for (std::size_t i = 0; i < whole.size(); ++i) rows.push_back({whole[i], i + 1, {}});
      return rows;
    }
    if (whole.is_object() && whole.contains("questions") && whole["questions"].is_array()) {
      const auto& qs = whole["questions"];
      for (std::size_t i = 0; i < qs.size(); ++i) rows.push_back({qs[i], i + 1, {}});
      return rows;
    }
    const bool keyed = whole.is_object() && !whole.empty() && !whole.contains("question") &&
                       std::all_of(whole.begin(), whole.end(), [](const json& v) { return v.is_object(); });
    if (keyed) {
      std::size_t i = 0;
      for (auto& [k, v] : whole.items()) rows.push_back({v, ++i, k});
      return rows;
    }
  }
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) throw ParseError(path.string(), line_no, "not a JSON object");
    rows.push_back({std::move(row), line_no, {}});
  }
  return rows;
}

bool looks_canonical(const json& row) {
  return row.is_object() && row.contains("id") && row.contains("family") && row.contains("image") &&
         row["image"].is_object();
}

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return v.dump();
}

ImageRef image_for(const DatasetManifest& m, const std::string& file) {
  if (!m.image_root) return ImageRef{ImageRef::Kind::opaque_id, file};
  std::string root = *m.image_root;
  if (!root.empty() && root.back() != '/') root += '/';
  const bool remote = root.rfind("http://", 0) == 0 || root.rfind("https://", 0) == 0;
  return ImageRef{remote ? ImageRef::Kind::url : ImageRef::Kind::path, root + file};
}

std::string coco_file(const json& image_id) {
  if (image_id.is_number_integer()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%012lld.jpg", image_id.get<long long>());
    return buf;
  }
  return id_string(image_id);
}

std::vector<std::string> vqa_answers(const json& answers) {
  std::vector<std::string> out;
  for (const auto& a : answers) {
    if (a.is_string()) out.push_back(a.get<std::string>());
    else if (a.is_object() && a.contains("answer")) out.push_back(a["answer"].get<std::string>());
  }
  return out;
}

// Upstream field mappings. Fields the pipeline never consumes (rationales,
// explanations, scene graphs) are dropped.
InstanceRecord adapt(const DatasetManifest& m, Split split, const RawRow& raw, const std::string& file) {
  const json& row = raw.value;
  InstanceRecord r;
  r.split = split;
  r.family = m.family;
  try {
    if (looks_canonical(row)) {
      r = row.get<InstanceRecord>();
      r.split = split;
      return r;
    }
    const std::string fallback_id = std::string(to_string(split)) + "-" + std::to_string(raw.line);
    if (m.name == "aokvqa") {
      r.family = TaskFamily::VQA_MC;
      r.id = id_string(row.at("question_id"));
      r.image = image_for(m, coco_file(row.at("image_id")));
      r.question = row.at("question").get<std::string>();
      r.choices = row.at("choices").get<std::vector<std::string>>();
      if (row.contains("correct_choice_idx") && !row["correct_choice_idx"].is_null()) {
        r.gold_choice = row["correct_choice_idx"].get<std::size_t>();
      }
      r.gold_direct_answers = row.value("direct_answers", std::vector<std::string>{});
    } else if (m.name == "okvqa" || m.name == "vqav2") {
      r.family = TaskFamily::VQA_DA;
      r.id = id_string(row.at("question_id"));
      r.image = image_for(m, coco_file(row.at("image_id")));
      r.question = row.at("question").get<std::string>();
      r.gold_direct_answers = vqa_answers(row.value("answers", json::array()));
    } else if (m.name == "esnlive") {
      r.family = TaskFamily::ENTAILMENT;
      r.id = row.contains("pairID") ? id_string(row["pairID"]) : fallback_id;
      const json& img = row.contains("Flickr30kID") ? row["Flickr30kID"] : row.at("Flikr30kID");
      std::string file = id_string(img);
      if (file.find('.') == std::string::npos) file += ".jpg";
      r.image = image_for(m, file);
      r.question = row.at("hypothesis").get<std::string>();
      r.choices = fixed_choices(TaskFamily::ENTAILMENT);
      const auto label = row.at("gold_label").get<std::string>();
      if (label == "entailment") r.gold_choice = 0;
      else if (label == "contradiction") r.gold_choice = 1;
      else if (label == "neutral") r.gold_choice = 2;
      else throw UsageError("unknown gold_label '" + label + "'");
    } else if (m.name == "vsr") {
      r.family = TaskFamily::SPATIAL;
      r.id = row.contains("id") ? id_string(row["id"]) : fallback_id;
      r.image = image_for(m, row.at("image").get<std::string>());
      r.question = row.at("caption").get<std::string>();
      r.choices = fixed_choices(TaskFamily::SPATIAL);
      const auto label = row.at("label");
      const bool yes = label.is_boolean() ? label.get<bool>() : label.get<int>() == 1;
      r.gold_choice = yes ? 0 : 1;
    } else if (m.name == "gqa") {
      r.family = TaskFamily::VQA_DA;
      r.id = !raw.key.empty() ? raw.key : id_string(row.value("questionId", json(fallback_id)));
      r.image = image_for(m, id_string(row.at("imageId")) + ".jpg");
      r.question = row.at("question").get<std::string>();
      r.gold_direct_answers = {row.at("answer").get<std::string>()};
    } else if (m.name == "clevr") {
      r.family = TaskFamily::VQA_DA;
      r.id = row.contains("question_index") ? std::string(to_string(split)) + "-" + id_string(row["question_index"])
                                            : fallback_id;
      r.image = image_for(m, row.at("image_filename").get<std::string>());
      r.question = row.at("question").get<std::string>();
      r.gold_direct_answers = {row.at("answer").get<std::string>()};
    } else {
      throw UsageError("row is not a canonical record");
    }
  } catch (const json::exception& e) {
    throw ParseError(file, raw.line, e.what());
  } catch (const UsageError& e) {
    throw ParseError(file, raw.line, e.what());
  }
  return r;
}

// Entailment and spatial records always carry the fixed choice list; a gold
// given against another ordering is re-pointed by normalized text.
void force_fixed_choices(InstanceRecord& r) {
  const auto& fixed = fixed_choices(r.family);
  if (fixed.empty() || r.choices == fixed) return;
  std::optional<std::size_t> gold;
  if (r.gold_choice && *r.gold_choice < r.choices.size()) {
    const auto g = normalize_text(r.choices[*r.gold_choice]);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
      if (normalize_text(fixed[i]) == g) gold = i;
    }
    if (!gold) return;  // left for validate() to report
  } else if (r.gold_choice) {
    return;
  }
  r.choices = fixed;
  r.gold_choice = gold;
}

}  // namespace

LoadedDataset ingest(const DatasetManifest& manifest, const IngestOptions& options) {
  LoadedDataset out;
  out.manifest = manifest;
  std::vector<std::string> offending;
  for (const auto& [split, path] : manifest.paths) {
    if (!std::filesystem::exists(path)) {
      throw UsageError("split file for " + std::string(to_string(split)) + " does not exist: " + path.string());
    }
    std::vector<InstanceRecord> records;
    for (const auto& raw : read_rows(path)) {
      auto r = adapt(manifest, split, raw, path.string());
      if (r.family != manifest.family) {
        throw UsageError(path.string() + ": record " + r.id + " has family " + std::string(to_string(r.family)) +
                         ", manifest declares " + std::string(to_string(manifest.family)));
      }
      force_fixed_choices(r);
      records.push_back(std::move(r));
    }
    const auto violations = validate(records);
    if (!violations.empty()) {
      std::set<std::size_t> bad_rows;
      for (const auto& v : violations) {
        bad_rows.insert(v.row);
        offending.push_back(v.id);
        out.rejected.push_back(v);
      }
      if (!options.strict) {
        std::vector<InstanceRecord> kept;
        for (std::size_t i = 0; i < records.size(); ++i) {
          if (!bad_rows.count(i)) kept.push_back(std::move(records[i]));
        }
        records = std::move(kept);
      }
    }
    out.splits[split] = std::move(records);
  }
  if (options.strict && !out.rejected.empty()) {
    std::string msg = "dataset " + manifest.name + " has " + std::to_string(out.rejected.size()) + " violation(s):";
    for (const auto& v : out.rejected) msg += "\n  " + v.id + ": " + v.message;
    throw ValidationError(msg, offending);
  }
  return out;
}

std::vector<InstanceRecord> read_canonical_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open");
  std::vector<InstanceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) throw ParseError(path.string(), line_no, "not a JSON object");
    try {
      out.push_back(row.get<InstanceRecord>());
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const UsageError& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

std::string to_canonical_jsonl(const std::vector<InstanceRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json(r).dump();
    out += '\n';
  }
  return out;
}

void write_canonical_jsonl(const std::filesystem::path& path, const std::vector<InstanceRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << to_canonical_jsonl(records);
}

}  // namespace vlmc
