#pragma once

// Answer mapping: candidates-contrast, samples-contrast, dev thresholds, and
// the masked-LM (PET-style) scoring baseline.

#include "nspbert/data.hpp"
#include "nspbert/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nspbert {

/// IsNext probabilities of one sample: one per candidate, or a single pair
/// probability.
struct ScoredSample {
  int64_t id = 0;
  std::vector<double> q;
  std::optional<std::string> gold;
};

/// Labels in declared order with proportions summing to one.
struct LabelDistribution {
  std::vector<std::string> labels;
  std::vector<double> proportions;

  void validate() const;
  /// Index of the largest proportion; ties go to the earlier label.
  size_t majority() const;
  /// Proportions of `gold` over `labels` (labels absent from gold get 0).
  static LabelDistribution from_gold(const std::vector<std::string>& labels, const std::vector<std::string>& gold);
};

/// Largest-remainder apportionment of `seats` by `proportions`. Fractional
/// seats go to the largest remainders, ties to the lower index.
std::vector<int> apportion(int seats, const std::vector<double>& proportions);

/// Candidate pairs for one example, in label order.
std::vector<RenderedPair> render_candidates(const Example& ex, const TaskConfig& task);

/// One IsNext probability per candidate, from a single batched forward pass.
/// Candidates are scored independently and are not normalized jointly.
ScoredSample score_candidates(const Model& model, const Tokenizer& tok, const Example& ex, const TaskConfig& task);
/// The single IsNext probability of a sentence-pair example.
ScoredSample score_pair(const Model& model, const Tokenizer& tok, const Example& ex, const TaskConfig& task);
/// score_pair for pair tasks, score_candidates otherwise. Sample ids are the
/// positions in `examples`.
std::vector<ScoredSample> score_examples(const Model& model, const Tokenizer& tok, const std::vector<Example>& examples,
                                         const TaskConfig& task);

/// Argmax of q; ties go to the lowest index.
size_t predict_candidates_contrast(const ScoredSample& s);
size_t predict_candidates_contrast(const std::vector<double>& q);

/// Batch-wise sort-and-cut mapping. Returns, per input sample, an index into
/// d.labels. Within each batch samples are ranked by q[0] in `order` (equal q
/// by ascending id) and consecutive groups receive d's labels in declared
/// order with largest-remainder sizes. batch_size 0 means one batch. When
/// batch_size is smaller than the label count every sample gets d's majority
/// label.
std::vector<size_t> samples_contrast(const std::vector<ScoredSample>& samples, SortOrder order,
                                     const LabelDistribution& d, int batch_size);

/// Interval boundaries on q for the labels sorted by their mean dev q.
struct Thresholds {
  std::vector<std::string> labels;  // ascending mean q
  std::vector<double> cuts;         // labels.size() - 1 increasing boundaries

  /// Label whose interval holds q; q equal to a cut falls below it.
  const std::string& apply(double q) const;
};

/// Cut k is the midpoint of the order statistics on either side of the
/// cumulative count of the first k labels. Labels with no dev samples are
/// dropped; equal means keep the order of `labels`.
Thresholds thresholds_from_dev(const std::vector<ScoredSample>& dev, const std::vector<std::string>& labels);
const std::string& apply_thresholds(const Thresholds& t, double q);

/// Product of the label tokens' probabilities at their mask positions, one
/// entry per label.
std::vector<double> pet_products(const Model& model, const Tokenizer& tok, const std::string& x,
                                 const TaskConfig& task);
/// Softmax over labels of pet_products.
std::vector<double> pet_softmax(const std::vector<double>& products);
std::vector<double> pet_score(const Model& model, const Tokenizer& tok, const std::string& x, const TaskConfig& task);

/// Equal-width bins over [0, 1]; q = 1 lands in the last bin.
std::vector<size_t> probability_histogram(const std::vector<double>& q, int bins);
/// Bins every probability of every sample and writes "bin_lo,bin_hi,count".
std::vector<size_t> emit_probability_histogram(const std::vector<ScoredSample>& samples, int bins,
                                               const std::string& path);

void write_scored_jsonl(const std::vector<ScoredSample>& samples, const std::string& path);
std::vector<ScoredSample> read_scored_jsonl(const std::string& path);

}  // namespace nspbert
