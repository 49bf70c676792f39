#pragma once

// K-shot protocol, synthetic downstream tasks, evaluation modes and
// multi-seed experiments.

#include "nspbert/corpus.hpp"
#include "nspbert/data.hpp"
#include "nspbert/model.hpp"
#include "nspbert/tuning.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nspbert {

/// The fixed five-seed suite.
const std::vector<uint64_t>& default_seeds();

struct KShotSplit {
  std::vector<Example> train;  // K per class
  std::vector<Example> dev;    // 10K per class
  std::vector<Example> test;   // passed through untouched
  uint64_t seed = 0;

  /// Hash of the train and dev ids in order.
  uint64_t fingerprint() const;
};

/// Samples K train and 10K dev examples per label (in `labels` order) without
/// replacement from `pool`. Throws DataError when a class has fewer than 11K.
KShotSplit kshot_split(const std::vector<Example>& pool, const std::vector<std::string>& labels, int k, uint64_t seed,
                       std::vector<Example> test = {});

enum class SyntheticTaskKind { topic, pair };

/// Documents from the pre-training distribution that pre-training never saw:
/// a different seed, and ids starting after the pre-training ids.
std::vector<Document> heldout_documents(const SyntheticCorpusConfig& pretrain_cfg, int documents, uint64_t seed);

struct SyntheticTask {
  TaskConfig task;
  std::vector<Example> pool;  // source of train/dev splits
  std::vector<Example> test;
  std::vector<int> document_ids;
};

/// Topic task: one example per sentence, label "topicN", verbalized by the
/// topic's first core word, suffix template "this is about {label} .".
/// Pair task: (sentence, next sentence) labelled Entail or (sentence, sentence
/// of another document) labelled NotEntail, exactly half each, mapped by
/// samples-contrast. The first two thirds of `docs` feed the pool, the rest
/// the test set; pair partners never cross that boundary.
SyntheticTask make_synthetic_task(const std::vector<Document>& docs, const SyntheticCorpusConfig& cfg,
                                  SyntheticTaskKind kind, uint64_t seed);

enum class EvalMode { zero_shot_nsp, zero_shot_pet, samples_contrast, thresholds, tuned };

EvalMode parse_eval_mode(const std::string& name);
std::string to_string(EvalMode m);

/// Fraction of predictions (indices into the task's labels) equal to gold.
double accuracy(const std::vector<size_t>& predictions, const std::vector<Example>& examples, const TaskConfig& task);

/// Label-free modes. zero_shot_nsp uses candidates-contrast, or for pair tasks
/// IsNext > 0.5 -> matching label; zero_shot_pet needs a single-sentence task.
std::vector<size_t> predict_zero_shot(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                                      const TaskConfig& task, EvalMode mode);
double evaluate_zero_shot(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                          const TaskConfig& task, EvalMode mode);

/// Modes that read the dev set: samples_contrast takes the dev gold
/// distribution, thresholds fits cut points on dev probabilities.
std::vector<size_t> predict_with_dev(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                                     const std::vector<Example>& dev, const TaskConfig& task, EvalMode mode);
double evaluate_with_dev(const Model& model, const Tokenizer& tok, const std::vector<Example>& test,
                         const std::vector<Example>& dev, const TaskConfig& task, EvalMode mode);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};
MeanStd mean_std(const std::vector<double>& values);

enum class ExperimentMethod { nsp_tune, fine_tune, zero_shot };

struct ExperimentConfig {
  ExperimentMethod method = ExperimentMethod::nsp_tune;
  TuningConfig tuning;
  int k = 16;
  std::vector<uint64_t> seeds = default_seeds();

  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::ordered_json& j);
};

struct SeedOutcome {
  uint64_t seed = 0;
  uint64_t split_fingerprint = 0;
  int best_epoch = 0;
  double dev_acc = 0.0;
  double test_acc = 0.0;
  std::vector<EpochRecord> epochs;
};

struct ExperimentReport {
  std::string method;
  std::string variant;
  std::vector<SeedOutcome> seeds;
  MeanStd test;
  uint64_t config_fingerprint = 0;
  uint64_t checkpoint_fingerprint = 0;

  nlohmann::ordered_json to_json() const;
  std::vector<ResultRow> rows() const;
};

uint64_t fnv1a(const std::string& bytes);

/// Runs config.seeds x (split, tune, evaluate on test). A failing seed aborts
/// with the seed named in the error.
ExperimentReport run_experiment(const Model& model, const Tokenizer& tok, const std::vector<Example>& pool,
                                const std::vector<Example>& test, const TaskConfig& task,
                                const ExperimentConfig& config);

}  // namespace nspbert
