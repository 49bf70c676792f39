#include "nspbert/prompting.hpp"

#include <fstream>
#include <set>

namespace nspbert {
namespace {

constexpr std::string_view kLabelSlot = "{label}";
constexpr std::string_view kTextSlot = "{text}";
constexpr std::string_view kMentionSlot = "{mention}";
constexpr std::string_view kDescriptionSlot = "{description}";

size_t count_of(const std::string& s, std::string_view needle) {
  size_t n = 0;
  for (size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

std::string replace_all(std::string s, std::string_view needle, const std::string& with) {
  for (size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + with.size())) {
    s.replace(pos, needle.size(), with);
  }
  return s;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

template <typename Enum>
Enum parse_enum(const std::string& field, const std::string& value,
                std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw PromptError("task config: " + field + " '" + value + "' is not one of " + names);
}

}  // namespace

Verbalizer::Verbalizer(std::vector<std::pair<std::string, std::string>> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw PromptError("verbalizer: no labels");
  std::set<std::string> labels, phrases;
  for (const auto& [label, phrase] : entries_) {
    if (label.empty()) throw PromptError("verbalizer: empty label name");
    if (blank(phrase)) throw PromptError("verbalizer: label '" + label + "' has an empty verbalization");
    if (!labels.insert(label).second) throw PromptError("verbalizer: duplicate label '" + label + "'");
    if (!phrases.insert(phrase).second) {
      throw PromptError("verbalizer: phrase '" + phrase + "' used by two labels");
    }
  }
}

std::vector<std::string> Verbalizer::labels() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

size_t Verbalizer::index_of(const std::string& label) const {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == label) return i;
  }
  throw PromptError("verbalizer: unknown label '" + label + "'");
}

bool Verbalizer::contains(const std::string& label) const {
  for (const auto& e : entries_) {
    if (e.first == label) return true;
  }
  return false;
}

const std::string& Verbalizer::phrase(const std::string& label) const { return entries_[index_of(label)].second; }

void PromptTemplate::validate() const {
  const size_t n = count_of(pattern, kLabelSlot);
  if (n != 1) throw PromptError("template '" + pattern + "' must contain {label} exactly once, found " +
                                std::to_string(n));
  if (count_of(pattern, kTextSlot) != 0) throw PromptError("template '" + pattern + "' may not contain {text}");
}

std::string PromptTemplate::fill(const std::string& phrase) const {
  validate();
  return replace_all(pattern, kLabelSlot, phrase);
}

std::pair<std::string, std::string> PromptTemplate::split() const {
  validate();
  const size_t pos = pattern.find(kLabelSlot);
  return {pattern.substr(0, pos), pattern.substr(pos + kLabelSlot.size())};
}

void TwoStagePrompt::validate() const {
  if (count_of(stage1, kMentionSlot) == 0) throw PromptError("two-stage prompt: stage1 needs {mention}");
  if (count_of(stage2, kDescriptionSlot) == 0) throw PromptError("two-stage prompt: stage2 needs {description}");
}

RenderedPair render_single(const std::string& x, const PromptTemplate& t, const Verbalizer& v,
                           const std::string& label) {
  std::string prompt = t.fill(v.phrase(label));
  if (t.position == PromptPosition::suffix) return {x, std::move(prompt)};
  return {std::move(prompt), x};
}

RenderedPair render_pair(const std::string& x1, const std::string& x2, PairOrder order) {
  if (order == PairOrder::original) return {x1, x2};
  return {x2, x1};
}

RenderedPair render_two_stage(const std::string& x, const std::string& mention, const std::string& description,
                              const TwoStagePrompt& p) {
  if (blank(mention)) throw PromptError("render_two_stage: empty mention");
  p.validate();
  return {x + ", " + replace_all(p.stage1, kMentionSlot, mention),
          replace_all(p.stage2, kDescriptionSlot, description)};
}

EncodedPair render_pet(const Tokenizer& tok, const std::string& x, const PromptTemplate& t, const Verbalizer& v,
                       const std::string& label, size_t max_len) {
  const auto [before, after] = t.split();
  const auto label_ids = tok.encode(v.phrase(label));
  if (label_ids.empty()) throw PromptError("render_pet: label '" + label + "' encodes to no tokens");
  const auto before_ids = tok.encode(before);
  const auto after_ids = tok.encode(after);
  auto text_ids = tok.encode(x);

  const size_t prompt_len = before_ids.size() + label_ids.size() + after_ids.size();
  if (max_len < prompt_len + 3) {
    throw EncodingError("render_pet: prompt of " + std::to_string(prompt_len) + " tokens does not fit max_len " +
                        std::to_string(max_len));
  }
  const size_t budget = max_len - 2 - prompt_len;
  if (text_ids.size() > budget) text_ids.resize(budget);

  EncodedPair out;
  out.ids.push_back(Vocab::kClsId);
  auto append = [&](const std::vector<TokenId>& ids) { out.ids.insert(out.ids.end(), ids.begin(), ids.end()); };
  size_t span_start = 0;
  if (t.position == PromptPosition::prefix) {
    append(before_ids);
    span_start = out.ids.size();
    append(label_ids);
    append(after_ids);
    append(text_ids);
  } else {
    append(text_ids);
    append(before_ids);
    span_start = out.ids.size();
    append(label_ids);
    append(after_ids);
  }
  out.ids.push_back(Vocab::kSepId);
  out.segments.assign(out.ids.size(), 0);
  out.attention.assign(out.ids.size(), 1);
  return insert_masks(out, span_start, label_ids.size());
}

void TaskConfig::validate() const {
  if (verbalizer.size() < 2) throw PromptError("task config: at least two labels are required");
  if (max_len < 8) throw PromptError("task config: max_len must be >= 8");
  if (mapping.batch_size < 0) throw PromptError("task config: mapping.batch_size must be >= 0");
  switch (task_type) {
    case TaskType::single:
      prompt.validate();
      break;
    case TaskType::two_stage:
      if (!two_stage) throw PromptError("task config: two_stage task needs a two_stage block");
      two_stage->validate();
      break;
    case TaskType::pair:
      if (mapping.strategy == MappingStrategy::candidates_contrast) {
        throw PromptError("task config: pair tasks score one probability per sample; use samples_contrast or "
                          "thresholds");
      }
      break;
  }
}

std::string to_string(TaskType t) {
  switch (t) {
    case TaskType::single: return "single";
    case TaskType::pair: return "pair";
    case TaskType::two_stage: return "two_stage";
  }
  return "?";
}

std::string to_string(MappingStrategy s) {
  switch (s) {
    case MappingStrategy::candidates_contrast: return "candidates_contrast";
    case MappingStrategy::samples_contrast: return "samples_contrast";
    case MappingStrategy::thresholds: return "thresholds";
  }
  return "?";
}

std::string to_string(SortOrder o) { return o == SortOrder::ascending ? "ascending" : "descending"; }

TaskConfig task_config_from_json(const nlohmann::ordered_json& j) {
  try {
    TaskConfig cfg;
    cfg.task_type = parse_enum<TaskType>("task_type", j.at("task_type").get<std::string>(),
                                         {{"single", TaskType::single},
                                          {"pair", TaskType::pair},
                                          {"two_stage", TaskType::two_stage}});
    if (j.contains("template")) {
      const auto& t = j.at("template");
      cfg.prompt.pattern = t.at("pattern").get<std::string>();
      cfg.prompt.position = parse_enum<PromptPosition>("template.position", t.value("position", "suffix"),
                                                       {{"prefix", PromptPosition::prefix},
                                                        {"suffix", PromptPosition::suffix}});
    } else if (cfg.task_type == TaskType::single) {
      throw PromptError("task config: single-sentence task needs a template");
    }
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [label, phrase] : j.at("verbalizer").items()) entries.emplace_back(label, phrase.get<std::string>());
    cfg.verbalizer = Verbalizer(std::move(entries));
    if (j.contains("mapping")) {
      const auto& m = j.at("mapping");
      cfg.mapping.strategy = parse_enum<MappingStrategy>(
          "mapping.strategy", m.value("strategy", "candidates_contrast"),
          {{"candidates_contrast", MappingStrategy::candidates_contrast},
           {"samples_contrast", MappingStrategy::samples_contrast},
           {"thresholds", MappingStrategy::thresholds}});
      cfg.mapping.order = parse_enum<SortOrder>("mapping.order", m.value("order", "ascending"),
                                                {{"ascending", SortOrder::ascending},
                                                 {"descending", SortOrder::descending}});
      cfg.mapping.batch_size = m.value("batch_size", 0);
    }
    if (j.contains("two_stage")) {
      cfg.two_stage = TwoStagePrompt{j.at("two_stage").at("stage1").get<std::string>(),
                                     j.at("two_stage").at("stage2").get<std::string>()};
    }
    cfg.pair_order = parse_enum<PairOrder>("pair_order", j.value("pair_order", "original"),
                                           {{"original", PairOrder::original}, {"reversed", PairOrder::reversed}});
    cfg.max_len = j.value("max_len", size_t{64});
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw PromptError(std::string("task config: ") + e.what());
  }
}

nlohmann::ordered_json task_config_to_json(const TaskConfig& cfg) {
  nlohmann::ordered_json j;
  j["task_type"] = to_string(cfg.task_type);
  j["template"] = {{"pattern", cfg.prompt.pattern},
                   {"position", cfg.prompt.position == PromptPosition::prefix ? "prefix" : "suffix"}};
  nlohmann::ordered_json v = nlohmann::ordered_json::object();
  for (const auto& [label, phrase] : cfg.verbalizer.entries()) v[label] = phrase;
  j["verbalizer"] = v;
  j["mapping"] = {{"strategy", to_string(cfg.mapping.strategy)},
                  {"order", to_string(cfg.mapping.order)},
                  {"batch_size", cfg.mapping.batch_size}};
  if (cfg.two_stage) j["two_stage"] = {{"stage1", cfg.two_stage->stage1}, {"stage2", cfg.two_stage->stage2}};
  j["pair_order"] = cfg.pair_order == PairOrder::original ? "original" : "reversed";
  j["max_len"] = cfg.max_len;
  return j;
}

TaskConfig load_task_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PromptError("cannot open task config: " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw PromptError("task config " + path + ": " + e.what());
  }
  return task_config_from_json(j);
}

void save_task_config(const TaskConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task config: " + path);
  out << task_config_to_json(cfg).dump(2) << '\n';
}

}  // namespace nspbert
