#include "nspbert/harness.hpp"

#include "nspbert/checkpoint.hpp"
#include "nspbert/pretrain.hpp"
#include "nspbert/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace nspbert {
namespace {

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string method_name(ExperimentMethod m) {
  switch (m) {
    case ExperimentMethod::nsp_tune: return "nsp_tune";
    case ExperimentMethod::fine_tune: return "fine_tune";
    case ExperimentMethod::zero_shot: return "zero_shot";
  }
  return "?";
}

}  // namespace

const std::vector<uint64_t>& default_seeds() {
  static const std::vector<uint64_t> seeds = {13, 21, 42, 87, 100};
  return seeds;
}

uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t KShotSplit::fingerprint() const {
  std::string ids;
  for (const auto& e : train) ids += e.id + '\n';
  ids += "--\n";
  for (const auto& e : dev) ids += e.id + '\n';
  return fnv1a(ids);
}

KShotSplit kshot_split(const std::vector<Example>& pool, const std::vector<std::string>& labels, int k, uint64_t seed,
                       std::vector<Example> test) {
  if (k < 1) throw DataError("kshot_split: K must be >= 1");
  const auto per_class_dev = static_cast<size_t>(10 * k);
  const auto per_class = static_cast<size_t>(k);
  std::map<std::string, std::vector<size_t>> by_label;
  for (size_t i = 0; i < pool.size(); ++i) by_label[pool[i].gold].push_back(i);

  KShotSplit split;
  split.seed = seed;
  split.test = std::move(test);
  std::mt19937_64 rng(seed);
  for (const auto& label : labels) {
    auto idx = by_label[label];
    if (idx.size() < per_class + per_class_dev) {
      throw DataError("kshot_split: label '" + label + "' has " + std::to_string(idx.size()) + " examples, needs " +
                      std::to_string(per_class + per_class_dev));
    }
    // Partial Fisher-Yates: only the first 11K positions are needed.
    for (size_t i = 0; i < per_class + per_class_dev; ++i) {
      std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    for (size_t i = 0; i < per_class; ++i) split.train.push_back(pool[idx[i]]);
    for (size_t i = per_class; i < per_class + per_class_dev; ++i) split.dev.push_back(pool[idx[i]]);
  }
  return split;
}

std::vector<Document> heldout_documents(const SyntheticCorpusConfig& pretrain_cfg, int documents, uint64_t seed) {
  SyntheticCorpusConfig cfg = pretrain_cfg;
  cfg.documents = documents;
  cfg.seed = pretrain_cfg.seed ^ (0x9e3779b97f4a7c15ull * (seed + 1));
  return generate_corpus(cfg, pretrain_cfg.documents);
}

SyntheticTask make_synthetic_task(const std::vector<Document>& docs, const SyntheticCorpusConfig& cfg,
                                  SyntheticTaskKind kind, uint64_t seed) {
  if (docs.size() < 6) throw DataError("make_synthetic_task: need at least 6 documents");
  SyntheticTask out;
  for (const auto& d : docs) out.document_ids.push_back(d.id);
  const size_t pool_docs = docs.size() * 2 / 3;
  std::mt19937_64 rng(seed);

  if (kind == SyntheticTaskKind::topic) {
    const Lexicon lex = make_lexicon(cfg);
    std::vector<std::pair<std::string, std::string>> verbalizer;
    for (size_t t = 0; t < lex.topic_words.size(); ++t) {
      verbalizer.emplace_back("topic" + std::to_string(t), lex.topic_words[t].front());
    }
    out.task.task_type = TaskType::single;
    out.task.prompt = {"this is about {label} .", PromptPosition::suffix};
    out.task.verbalizer = Verbalizer(std::move(verbalizer));
    out.task.mapping.strategy = MappingStrategy::candidates_contrast;
    for (size_t i = 0; i < docs.size(); ++i) {
      for (size_t s = 0; s < docs[i].sentences.size(); ++s) {
        Example ex;
        ex.id = "d" + std::to_string(docs[i].id) + "s" + std::to_string(s);
        ex.text_a = docs[i].sentences[s];
        ex.gold = "topic" + std::to_string(docs[i].topic);
        (i < pool_docs ? out.pool : out.test).push_back(std::move(ex));
      }
    }
    out.task.validate();
    return out;
  }

  out.task.task_type = TaskType::pair;
  out.task.verbalizer = Verbalizer({{"NotEntail", "no"}, {"Entail", "yes"}});
  out.task.mapping = {MappingStrategy::samples_contrast, SortOrder::ascending, 64};
  auto build = [&](size_t first, size_t last, std::vector<Example>& dest) {
    std::vector<std::pair<size_t, size_t>> anchors;
    for (size_t i = first; i < last; ++i) {
      for (size_t s = 0; s + 1 < docs[i].sentences.size(); ++s) anchors.emplace_back(i, s);
    }
    std::vector<bool> entail(anchors.size(), false);
    std::fill(entail.begin(), entail.begin() + static_cast<long>(anchors.size() / 2), true);
    std::shuffle(entail.begin(), entail.end(), rng);
    std::uniform_int_distribution<size_t> other(first, last - 2);
    for (size_t a = 0; a < anchors.size(); ++a) {
      const auto [i, s] = anchors[a];
      Example ex;
      ex.id = "p" + std::to_string(docs[i].id) + "s" + std::to_string(s);
      ex.text_a = docs[i].sentences[s];
      if (entail[a]) {
        ex.text_b = docs[i].sentences[s + 1];
        ex.gold = "Entail";
      } else {
        size_t j = other(rng);
        if (j >= i) ++j;
        std::uniform_int_distribution<size_t> sent(0, docs[j].sentences.size() - 1);
        ex.text_b = docs[j].sentences[sent(rng)];
        ex.gold = "NotEntail";
      }
      dest.push_back(std::move(ex));
    }
  };
  build(0, pool_docs, out.pool);
  build(pool_docs, docs.size(), out.test);
  out.task.validate();
  return out;
}

EvalMode parse_eval_mode(const std::string& name) {
  for (auto m : {EvalMode::zero_shot_nsp, EvalMode::zero_shot_pet, EvalMode::samples_contrast, EvalMode::thresholds,
                 EvalMode::tuned}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown evaluation mode '" + name + "'");
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::zero_shot_nsp: return "zero_shot_nsp";
    case EvalMode::zero_shot_pet: return "zero_shot_pet";
    case EvalMode::samples_contrast: return "samples_contrast";
    case EvalMode::thresholds: return "thresholds";
    case EvalMode::tuned: return "tuned";
  }
  return "?";
}

double accuracy(const std::vector<size_t>& predictions, const std::vector<Example>& examples, const TaskConfig& task) {
  if (predictions.size() != examples.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(examples.size()) + " examples");
  }
  if (examples.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    correct += predictions[i] == task.verbalizer.index_of(examples[i].gold) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<size_t> predict_zero_shot(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                                      const TaskConfig& task, EvalMode mode) {
  task.validate();
  std::vector<size_t> out;
  if (mode == EvalMode::zero_shot_nsp) {
    const auto scored = score_examples(model, tok, test, task);
    const size_t match = matching_label(task);
    for (const auto& s : scored) {
      if (task.task_type == TaskType::pair) {
        out.push_back(s.q[0] > 0.5 ? match : (match == 0 ? 1 : 0));
      } else {
        out.push_back(predict_candidates_contrast(s));
      }
    }
    return out;
  }
  if (mode == EvalMode::zero_shot_pet) {
    if (task.task_type != TaskType::single) throw std::invalid_argument("zero_shot_pet needs a single-sentence task");
    for (const auto& ex : test) out.push_back(predict_candidates_contrast(pet_score(model, tok, ex.text_a, task)));
    return out;
  }
  throw std::invalid_argument("mode " + to_string(mode) + " is not a zero-shot mode");
}

double evaluate_zero_shot(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                          const TaskConfig& task, EvalMode mode) {
  return accuracy(predict_zero_shot(model, tok, test, task, mode), test, task);
}

std::vector<size_t> predict_with_dev(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                                     const std::vector<Example>& dev, const TaskConfig& task, EvalMode mode) {
  task.validate();
  if (mode != EvalMode::samples_contrast && mode != EvalMode::thresholds) {
    throw std::invalid_argument("mode " + to_string(mode) + " does not read a dev set");
  }
  if (task.task_type != TaskType::pair) {
    throw std::invalid_argument("mode " + to_string(mode) + " maps one probability per sample; needs a pair task");
  }
  if (dev.empty()) throw std::invalid_argument("mode " + to_string(mode) + " needs a non-empty dev set");
  const auto labels = task.labels();
  const auto scored = score_examples(model, tok, test, task);
  if (mode == EvalMode::samples_contrast) {
    std::vector<std::string> gold;
    for (const auto& ex : dev) gold.push_back(ex.gold);
    return samples_contrast(scored, task.mapping.order, LabelDistribution::from_gold(labels, gold),
                            task.mapping.batch_size);
  }
  const Thresholds t = thresholds_from_dev(score_examples(model, tok, dev, task), labels);
  std::vector<size_t> out;
  for (const auto& s : scored) out.push_back(task.verbalizer.index_of(t.apply(s.q[0])));
  return out;
}

double evaluate_with_dev(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                         const std::vector<Example>& dev, const TaskConfig& task, EvalMode mode) {
  return accuracy(predict_with_dev(model, tok, test, dev, task, mode), test, task);
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  return {{"method", method_name(method)},
          {"variant", to_string(tuning.variant)},
          {"epochs", tuning.epochs},
          {"lr", tuning.lr},
          {"batch", tuning.batch},
          {"k", k},
          {"seeds", seeds}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::ordered_json& j) {
  ExperimentConfig c;
  try {
    const std::string m = j.value("method", "nsp_tune");
    if (m == "nsp_tune") {
      c.method = ExperimentMethod::nsp_tune;
    } else if (m == "fine_tune") {
      c.method = ExperimentMethod::fine_tune;
    } else if (m == "zero_shot") {
      c.method = ExperimentMethod::zero_shot;
    } else {
      throw std::invalid_argument("experiment config: unknown method '" + m + "'");
    }
    c.tuning.variant = parse_variant(j.value("variant", "coupled_bce"));
    c.tuning.epochs = j.value("epochs", c.tuning.epochs);
    c.tuning.lr = j.value("lr", c.tuning.lr);
    c.tuning.batch = j.value("batch", c.tuning.batch);
    c.k = j.value("k", c.k);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  c.tuning.validate();
  if (c.k < 1) throw std::invalid_argument("experiment config: k must be >= 1");
  if (c.seeds.empty()) throw std::invalid_argument("experiment config: no seeds");
  return c;
}

nlohmann::ordered_json ExperimentReport::to_json() const {
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  for (const auto& s : seeds) {
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& e : s.epochs) curve.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_acc", e.dev_acc}});
    per_seed.push_back({{"seed", s.seed},
                        {"split_fingerprint", hex(s.split_fingerprint)},
                        {"best_epoch", s.best_epoch},
                        {"dev_acc", s.dev_acc},
                        {"test_acc", s.test_acc},
                        {"epochs", curve}});
  }
  std::vector<double> acc;
  for (const auto& s : seeds) acc.push_back(s.test_acc);
  return {{"method", method},
          {"variant", variant},
          {"test_accuracies", acc},
          {"mean", test.mean},
          {"std", test.std},
          {"config_fingerprint", hex(config_fingerprint)},
          {"checkpoint_fingerprint", hex(checkpoint_fingerprint)},
          {"seeds", per_seed}};
}

std::vector<ResultRow> ExperimentReport::rows() const {
  std::vector<ResultRow> out;
  const std::string name = method == "nsp_tune" ? variant : method;
  for (const auto& s : seeds) out.push_back({name, s.seed, s.best_epoch, s.dev_acc, s.test_acc});
  return out;
}

ExperimentReport run_experiment(const Model& model, const Tokenizer& tok, const std::vector<Example>& pool,
                                const std::vector<Example>& test, const TaskConfig& task,
                                const ExperimentConfig& config) {
  task.validate();
  config.tuning.validate();
  ExperimentReport report;
  report.method = method_name(config.method);
  report.variant = to_string(config.tuning.variant);
  report.config_fingerprint = fnv1a(task_config_to_json(task).dump() + config.to_json().dump());
  report.checkpoint_fingerprint = parameter_fingerprint(model);

  std::vector<size_t> zero_shot_test;
  if (config.method == ExperimentMethod::zero_shot) {
    zero_shot_test = predict_zero_shot(model, tok, test, task, EvalMode::zero_shot_nsp);
  }
  std::vector<double> acc;
  for (uint64_t seed : config.seeds) {
    try {
      const KShotSplit split = kshot_split(pool, task.labels(), config.k, seed);
      SeedOutcome o;
      o.seed = seed;
      o.split_fingerprint = split.fingerprint();
      if (config.method == ExperimentMethod::zero_shot) {
        o.dev_acc = evaluate_zero_shot(model, tok, split.dev, task, EvalMode::zero_shot_nsp);
        o.test_acc = accuracy(zero_shot_test, test, task);
        o.epochs.push_back({0, 0.0, o.dev_acc});
      } else {
        TuningConfig cfg = config.tuning;
        cfg.seed = seed;
        TuningResult r = config.method == ExperimentMethod::nsp_tune
                             ? nsp_tune(model, tok, split.train, split.dev, task, cfg)
                             : fine_tune_baseline(model, tok, split.train, split.dev, task, cfg);
        o.best_epoch = r.best_epoch;
        o.dev_acc = r.epochs[static_cast<size_t>(r.best_epoch)].dev_acc;
        o.test_acc = r.best.accuracy(tok, test, task);
        o.epochs = std::move(r.epochs);
      }
      acc.push_back(o.test_acc);
      report.seeds.push_back(std::move(o));
    } catch (const DivergenceError& e) {
      throw DivergenceError("seed " + std::to_string(seed) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("seed " + std::to_string(seed) + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error("seed " + std::to_string(seed) + ": " + e.what());
    }
  }
  report.test = mean_std(acc);
  return report;
}

}  // namespace nspbert
