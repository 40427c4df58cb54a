#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vlmc {

// Error taxonomy shared across modules. Callers catch by family:
// UsageError/ValidationError abort before any network traffic, transport and
// protocol errors are per-instance and end up in run traces.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), file_(std::move(file)), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::vector<std::string> ids)
      : Error(what), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

enum class TaskFamily { VQA_MC, VQA_DA, ENTAILMENT, SPATIAL };

std::string_view to_string(TaskFamily family);
TaskFamily parse_task_family(std::string_view text);

// Fixed choice sets implied by the family; empty for the VQA families.
const std::vector<std::string>& fixed_choices(TaskFamily family);

// True for families scored by picking one of a choice set.
bool is_choice_family(TaskFamily family);

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ImageRef {
  enum class Kind { path, url, opaque_id };
  Kind kind = Kind::opaque_id;
  std::string value;

  bool operator==(const ImageRef&) const = default;
};

std::string_view to_string(ImageRef::Kind kind);
ImageRef::Kind parse_image_kind(std::string_view text);

struct InstanceRecord {
  std::string id;
  ImageRef image;
  TaskFamily family = TaskFamily::VQA_MC;
  std::string question;
  std::vector<std::string> choices;
  std::optional<std::size_t> gold_choice;
  std::vector<std::string> gold_direct_answers;
  Split split = Split::val;

  bool operator==(const InstanceRecord&) const = default;
};

// Gold answer as text: the gold choice for choice families, otherwise the
// most frequent gold direct answer (ties go to the first occurrence).
// Empty when the record carries no gold.
std::string gold_text(const InstanceRecord& record);

struct ExpertOutput {
  std::string expert_name;
  std::string caption;
  std::string plausible_answer;

  bool operator==(const ExpertOutput&) const = default;
};

// Lowercased, whitespace-collapsed, trimmed text without terminal period.
class NormalizedText {
 public:
  NormalizedText() = default;
  const std::string& value() const { return value_; }
  bool empty() const { return value_.empty(); }
  bool operator==(const NormalizedText&) const = default;

 private:
  explicit NormalizedText(std::string v) : value_(std::move(v)) {}
  friend NormalizedText normalize_text(std::string_view raw);
  std::string value_;
};

NormalizedText normalize_text(std::string_view raw);

// An expert output is degenerate when caption or answer normalize to empty.
bool is_degenerate(const ExpertOutput& output);

void to_json(nlohmann::json& j, const ImageRef& image);
void from_json(const nlohmann::json& j, ImageRef& image);
void to_json(nlohmann::json& j, const InstanceRecord& record);
void from_json(const nlohmann::json& j, InstanceRecord& record);
void to_json(nlohmann::json& j, const ExpertOutput& output);
void from_json(const nlohmann::json& j, ExpertOutput& output);

// Stderr logging. VLMC_LOG picks the threshold (error, warn, info, debug);
// default warn.
enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
LogLevel log_threshold();
void log(LogLevel level, std::string_view message);

}  // namespace vlmc
