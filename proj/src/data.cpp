#include "nspbert/data.hpp"

#include <fstream>
#include <unordered_set>

namespace nspbert {

void validate_example(const Example& ex, const TaskConfig& task, const std::string& where) {
  if (ex.text_a.empty()) throw DataError(where + ": empty text_a");
  if (!task.verbalizer.contains(ex.gold)) throw DataError(where + ": unknown label '" + ex.gold + "'");
  if (task.task_type == TaskType::pair && !ex.text_b) throw DataError(where + ": pair task example needs text_b");
  if (task.task_type == TaskType::two_stage && (!ex.mention || ex.mention->empty())) {
    throw DataError(where + ": two-stage example needs a mention");
  }
  for (const auto& [label, description] : ex.candidates) {
    if (!task.verbalizer.contains(label)) throw DataError(where + ": candidate for unknown label '" + label + "'");
    (void)description;
  }
}

std::vector<Example> load_jsonl(const std::string& path, const TaskConfig& task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  std::vector<Example> out;
  std::unordered_set<std::string> ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + " line " + std::to_string(line_no);
    Example ex;
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      if (!j.is_object()) throw DataError(where + ": expected a JSON object");
      if (j.contains("id")) {
        ex.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      } else {
        ex.id = std::to_string(line_no);
      }
      ex.text_a = j.contains("text_a") ? j.at("text_a").get<std::string>() : j.at("text").get<std::string>();
      if (j.contains("text_b")) ex.text_b = j.at("text_b").get<std::string>();
      if (j.contains("mention")) ex.mention = j.at("mention").get<std::string>();
      if (j.contains("candidates")) {
        for (const auto& [label, d] : j.at("candidates").items()) ex.candidates.emplace_back(label, d.get<std::string>());
      }
      ex.gold = j.at("label").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    validate_example(ex, task, where);
    if (!ids.insert(ex.id).second) throw DataError(where + ": duplicate id '" + ex.id + "'");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["text_a"] = ex.text_a;
    if (ex.text_b) j["text_b"] = *ex.text_b;
    if (ex.mention) j["mention"] = *ex.mention;
    if (!ex.candidates.empty()) {
      nlohmann::ordered_json c = nlohmann::ordered_json::object();
      for (const auto& [label, d] : ex.candidates) c[label] = d;
      j["candidates"] = c;
    }
    j["label"] = ex.gold;
    out << j.dump() << '\n';
  }
}

}  // namespace nspbert
