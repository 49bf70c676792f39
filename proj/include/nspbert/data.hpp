#pragma once

// Labeled examples and their JSONL files.

#include "nspbert/prompting.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nspbert {

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Example {
  std::string id;
  std::string text_a;
  std::optional<std::string> text_b;
  std::optional<std::string> mention;
  /// Per-example label -> description overrides for two-stage tasks.
  std::vector<std::pair<std::string, std::string>> candidates;
  std::string gold;
};

/// Reads one example per line:
///   {"id"?, "text_a" | "text", "text_b"?, "mention"?, "candidates"?: {label: description}, "label"}
/// A missing id becomes the 1-based line number. Lines are validated against
/// the task: the label must be known, pair tasks need text_b, two-stage tasks
/// need a mention, and ids must be unique.
std::vector<Example> load_jsonl(const std::string& path, const TaskConfig& task);
void write_jsonl(const std::vector<Example>& examples, const std::string& path);

/// Same checks as load_jsonl on in-memory data; `where` prefixes messages.
void validate_example(const Example& ex, const TaskConfig& task, const std::string& where);

}  // namespace nspbert
