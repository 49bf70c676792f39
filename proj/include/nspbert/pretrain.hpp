#pragma once

// Joint MLM + NSP pre-training on topic-free document text.

#include "nspbert/corpus.hpp"
#include "nspbert/model.hpp"
#include "nspbert/optim.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace nspbert {

/// Raised when a loss becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  int steps = 2000;
  int batch = 64;
  double lr = 1e-3;
  /// Linear warmup over this many steps; the rate then stays constant unless
  /// `linear_decay` is set, in which case it falls linearly to zero.
  int warmup = 100;
  bool linear_decay = false;
  int max_len = 64;
  double mask_rate = 0.15;
  uint64_t seed = 1;
};

struct PretrainTrace {
  std::vector<double> total;
  std::vector<double> mlm;
  std::vector<double> nsp;
};

/// Learning rate at a 0-based step.
double scheduled_lr(const PretrainConfig& cfg, int step);

/// One step's loss on a prepared batch: mean MLM cross-entropy over masked
/// positions plus mean NSP cross-entropy. Returns (total, mlm, nsp) tensors.
struct PretrainLoss {
  Tensorf total;
  double mlm = 0.0;
  double nsp = 0.0;
};

PretrainLoss pretrain_loss(const Model& model, const std::vector<EncodedPair>& batch,
                           const std::vector<MaskedTokens>& masks, const std::vector<bool>& is_next);

/// Builds one batch of masked NSP pairs.
void make_pretrain_batch(const Tokenizer& tok, const std::vector<NspPairExample>& pairs, const PretrainConfig& cfg,
                         std::mt19937_64& rng, std::vector<EncodedPair>& batch, std::vector<MaskedTokens>& masks,
                         std::vector<bool>& is_next);

using StepCallback = std::function<void(int step, double total, double mlm, double nsp)>;

PretrainTrace pretrain(Model& model, const Tokenizer& tok, const std::vector<DocumentText>& docs,
                       const PretrainConfig& cfg, const StepCallback& on_step = {});

/// Fraction of pairs where (q(IsNext) > 0.5) matches the true label.
double nsp_accuracy(const Model& model, const Tokenizer& tok, const std::vector<NspPairExample>& pairs,
                    size_t max_len);

/// exp of the mean MLM cross-entropy over a fixed masking of `pairs`.
double mlm_perplexity(const Model& model, const Tokenizer& tok, const std::vector<NspPairExample>& pairs,
                      size_t max_len, uint64_t seed);

}  // namespace nspbert
