#pragma once

// Prompt templates, verbalizers and the task configuration file.

#include "nspbert/tokenizer.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nspbert {

/// Raised for malformed templates, verbalizers and task configs.
class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PromptPosition { prefix, suffix };
enum class PairOrder { original, reversed };

/// Ordered label -> phrase map. Label order is significant: it fixes candidate
/// indices and the group order used by samples-contrast.
class Verbalizer {
 public:
  Verbalizer() = default;
  explicit Verbalizer(std::vector<std::pair<std::string, std::string>> entries);

  size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::vector<std::string> labels() const;

  const std::string& phrase(const std::string& label) const;
  /// Position of `label`, or throws PromptError.
  size_t index_of(const std::string& label) const;
  bool contains(const std::string& label) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

struct PromptTemplate {
  std::string pattern;
  PromptPosition position = PromptPosition::suffix;

  /// {label} exactly once, {text} never.
  void validate() const;
  std::string fill(const std::string& phrase) const;
  /// Pattern text before and after the {label} slot.
  std::pair<std::string, std::string> split() const;
};

struct TwoStagePrompt {
  std::string stage1;  // holds {mention}
  std::string stage2;  // holds {description}

  void validate() const;
};

struct RenderedPair {
  std::string a;
  std::string b;

  bool operator==(const RenderedPair&) const = default;
};

RenderedPair render_single(const std::string& x, const PromptTemplate& t, const Verbalizer& v,
                           const std::string& label);
RenderedPair render_pair(const std::string& x1, const std::string& x2, PairOrder order);
RenderedPair render_two_stage(const std::string& x, const std::string& mention, const std::string& description,
                              const TwoStagePrompt& p);

/// One [CLS] ... [SEP] sequence holding x and the filled pattern, with the
/// label's tokens replaced by [MASK]. mask_targets keep the label's ids.
/// Only x is truncated to fit max_len.
EncodedPair render_pet(const Tokenizer& tok, const std::string& x, const PromptTemplate& t, const Verbalizer& v,
                       const std::string& label, size_t max_len);

enum class TaskType { single, pair, two_stage };
enum class MappingStrategy { candidates_contrast, samples_contrast, thresholds };
enum class SortOrder { ascending, descending };

struct MappingConfig {
  MappingStrategy strategy = MappingStrategy::candidates_contrast;
  SortOrder order = SortOrder::ascending;
  int batch_size = 0;  // 0: the whole dataset is one batch
};

struct TaskConfig {
  TaskType task_type = TaskType::single;
  PromptTemplate prompt;
  Verbalizer verbalizer;
  MappingConfig mapping;
  std::optional<TwoStagePrompt> two_stage;
  PairOrder pair_order = PairOrder::original;
  size_t max_len = 64;

  std::vector<std::string> labels() const { return verbalizer.labels(); }
  void validate() const;
};

TaskConfig task_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json task_config_to_json(const TaskConfig& cfg);
TaskConfig load_task_config(const std::string& path);
void save_task_config(const TaskConfig& cfg, const std::string& path);

std::string to_string(TaskType t);
std::string to_string(MappingStrategy s);
std::string to_string(SortOrder o);

}  // namespace nspbert
