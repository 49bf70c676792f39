#pragma once

// Few-shot tuning: NSP-tuning with coupled instances, its ablation variants,
// and the plain [CLS] classifier baseline.

#include "nspbert/data.hpp"
#include "nspbert/model.hpp"
#include "nspbert/optim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nspbert {

enum class TuningVariant { coupled_bce, decoupled_bce, coupled_softmax, reinit_sigmoid_head, linear_head_softmax };

std::string to_string(TuningVariant v);
TuningVariant parse_variant(const std::string& name);
const std::vector<TuningVariant>& all_variants();

struct TuningConfig {
  int epochs = 10;
  double lr = 2e-5;
  /// Parent samples per batch; every instance of a parent shares its batch in
  /// the coupled variants.
  int batch = 8;
  TuningVariant variant = TuningVariant::coupled_bce;
  uint64_t seed = 1;

  void validate() const;
};

struct NspTuningInstance {
  EncodedPair pair;
  float target = 0.0f;  // 1 for the gold verbalization
  size_t parent = 0;
  size_t label = 0;
};

/// One instance per label (in label order) for candidate tasks; a single
/// instance for pair tasks, positive when the gold label is the task's
/// matching label.
std::vector<NspTuningInstance> build_instances(const Tokenizer& tok, const Example& ex, size_t parent,
                                               const TaskConfig& task);

/// For a pair task, the label that a high IsNext probability stands for: the
/// last declared label under ascending order, the first under descending.
size_t matching_label(const TaskConfig& task);

/// Groups of instance indices forming each training batch of one epoch.
std::vector<std::vector<size_t>> make_batches(const std::vector<NspTuningInstance>& instances, size_t parents,
                                              const TuningConfig& cfg, std::mt19937_64& rng);

/// Loss of the pre-trained NSP head over a batch of templated sequences that
/// is parent-major with `labels` instances per parent. coupled_softmax takes a
/// cross-entropy across each parent's IsNext logits; every other variant uses
/// binary cross-entropy on the IsNext probability.
template <typename Scalar>
Tensor<Scalar> nsp_head_loss(const EncoderModel<Scalar>& model, const std::vector<const EncodedPair*>& pairs,
                             const std::vector<Scalar>& targets, TuningVariant variant, size_t labels) {
  const auto enc = model.encode(pairs);
  Tensor<Scalar> logits = model.nsp_logits(enc.hidden, enc.offsets);
  if (variant == TuningVariant::coupled_softmax) {
    const auto rows = static_cast<Index>(pairs.size());
    std::vector<int32_t> gold;
    for (size_t i = 0; i < pairs.size(); i += labels) {
      for (size_t l = 0; l < labels; ++l) {
        if (targets[i + l] > Scalar(0.5)) gold.push_back(static_cast<int32_t>(l));
      }
    }
    Tensor<Scalar> isnext =
        reshape(slice_cols(logits, kIsNext, 1), rows / static_cast<Index>(labels), static_cast<Index>(labels));
    return cross_entropy(isnext, gold);
  }
  return binary_cross_entropy(slice_cols(softmax_rows(logits), kIsNext, 1), std::span<const Scalar>(targets));
}

/// A tuned encoder plus whatever head its variant scores with.
class TunedClassifier {
 public:
  enum class Head { nsp, sigmoid, label_linear, cls_linear };

  TunedClassifier(Model model, Head head, size_t labels, uint64_t seed);

  /// Per-label scores of each example (IsNext or sigmoid probability, or
  /// softmax over label logits). Argmax gives the prediction.
  std::vector<std::vector<double>> scores(const Tokenizer& tok, const std::vector<Example>& examples,
                                          const TaskConfig& task) const;
  std::vector<size_t> predict(const Tokenizer& tok, const std::vector<Example>& examples,
                              const TaskConfig& task) const;
  double accuracy(const Tokenizer& tok, const std::vector<Example>& examples, const TaskConfig& task) const;

  /// Mean training loss of one batch, as a differentiable scalar.
  Tensorf batch_loss(const std::vector<const NspTuningInstance*>& batch, TuningVariant variant,
                     size_t labels) const;
  /// Cross-entropy of the [CLS] classifier on plain single-sentence input.
  Tensorf cls_loss(const std::vector<const EncodedPair*>& inputs, const std::vector<int32_t>& gold) const;

  std::vector<Tensorf> parameters() const;
  TunedClassifier clone() const;

  const Model& model() const { return model_; }
  Head head() const { return head_; }

 private:
  Model model_;
  Head head_;
  LinearParams<float> pooler_;  // sigmoid head only
  LinearParams<float> out_;     // sigmoid (1 x H) or label-linear (|Y| x H)
};

struct EpochRecord {
  int epoch = 0;  // 0 is the untrained starting point
  double train_loss = 0.0;
  double dev_acc = 0.0;
};

struct TuningResult {
  TunedClassifier best;
  int best_epoch = 0;
  std::vector<EpochRecord> epochs;
};

/// Trains every encoder parameter plus the variant's head on `train`,
/// evaluating dev accuracy after each epoch. The returned classifier is the
/// best dev epoch among 1..epochs (earliest on ties); with zero epochs it is
/// the untouched starting point. coupled_bce, decoupled_bce and
/// coupled_softmax keep the pre-trained NSP head.
TuningResult nsp_tune(const Model& model, const Tokenizer& tok, const std::vector<Example>& train,
                      const std::vector<Example>& dev, const TaskConfig& task, const TuningConfig& cfg);

/// A fresh |Y|-way linear head on h_[CLS] of the bare input, softmax
/// cross-entropy, no templates. Same epoch/selection protocol as nsp_tune.
TuningResult fine_tune_baseline(const Model& model, const Tokenizer& tok, const std::vector<Example>& train,
                                const std::vector<Example>& dev, const TaskConfig& task, const TuningConfig& cfg);

struct ResultRow {
  std::string variant;
  uint64_t seed = 0;
  int epoch = 0;
  double dev_acc = 0.0;
  double test_acc = 0.0;
};

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);
std::vector<ResultRow> read_results_csv(const std::string& path);

}  // namespace nspbert
