#pragma once

// Small shared builders: a toy tokenizer, random tasks and the double
// precision NSP-tuning loss used for gradient checks.

#include "gradcheck.hpp"
#include "nspbert/harness.hpp"
#include "nspbert/scoring.hpp"
#include "nspbert/tuning.hpp"

#include <random>
#include <string>
#include <vector>

namespace nspbert::testing {

inline const std::vector<std::string>& toy_words() {
  static const std::vector<std::string> words = {"the", "a", "it", "was", "this", "is", "about", "movie", "great",
                                                 "bad", "food", "sports", "news", "tech", "good", "terrible", "game",
                                                 "team", "market", "phone", "and", "very", ".", ","};
  return words;
}

inline Tokenizer toy_tokenizer() { return Tokenizer(Vocab(toy_words())); }

inline std::string random_sentence(std::mt19937_64& rng, size_t min_words, size_t max_words) {
  const auto& w = toy_words();
  std::uniform_int_distribution<size_t> len(min_words, max_words), pick(0, w.size() - 1);
  std::string s;
  const size_t n = len(rng);
  for (size_t i = 0; i < n; ++i) s += (i ? " " : "") + w[pick(rng)];
  return s;
}

/// A single-sentence task with `labels` distinct verbalizations of one or two
/// toy words each.
inline TaskConfig random_single_task(std::mt19937_64& rng, size_t labels, size_t max_phrase_words = 2) {
  TaskConfig t;
  t.prompt = {"it was {label} .", std::bernoulli_distribution(0.5)(rng) ? PromptPosition::suffix
                                                                        : PromptPosition::prefix};
  std::vector<std::pair<std::string, std::string>> entries;
  std::vector<std::string> used;
  while (entries.size() < labels) {
    const std::string phrase = random_sentence(rng, 1, max_phrase_words);
    if (std::find(used.begin(), used.end(), phrase) != used.end()) continue;
    used.push_back(phrase);
    entries.emplace_back("label" + std::to_string(entries.size()), phrase);
  }
  t.verbalizer = Verbalizer(entries);
  t.max_len = 48;
  return t;
}

inline EncoderModel<double> random_micro_double(const Tokenizer& tok, uint64_t seed) {
  return EncoderModel<double>(EncoderConfig::preset("micro", static_cast<int>(tok.vocab().size())), seed);
}

/// Random NSP-tuning batch on the double micro encoder: 1 to 3 parents of a
/// 2 to 4 label task, under one of the three variants that keep the NSP head.
/// Only parameters the loss reaches are offered to the checker.
inline OpCase nsp_tuning_case(std::mt19937_64& rng, const Tokenizer& tok) {
  const size_t labels = std::uniform_int_distribution<size_t>(2, 4)(rng);
  const TaskConfig task = random_single_task(rng, labels);
  const size_t parents = std::uniform_int_distribution<size_t>(1, 3)(rng);
  static const TuningVariant kVariants[] = {TuningVariant::coupled_bce, TuningVariant::decoupled_bce,
                                            TuningVariant::coupled_softmax};
  const TuningVariant variant = kVariants[std::uniform_int_distribution<int>(0, 2)(rng)];

  auto pairs = std::make_shared<std::vector<EncodedPair>>();
  std::vector<double> targets;
  const auto label_names = task.labels();
  for (size_t p = 0; p < parents; ++p) {
    Example ex;
    ex.id = std::to_string(p);
    ex.text_a = random_sentence(rng, 2, 8);
    ex.gold = label_names[std::uniform_int_distribution<size_t>(0, labels - 1)(rng)];
    for (auto& inst : build_instances(tok, ex, p, task)) {
      pairs->push_back(inst.pair);
      targets.push_back(inst.target);
    }
  }
  const auto model = random_micro_double(tok, rng());
  std::vector<Tensord> params;
  for (auto& nt : model.named_parameters()) {
    if (nt.name.rfind("mlm.", 0) != 0) params.push_back(nt.tensor);
  }
  auto loss = [model, pairs, targets, variant, labels] {
    std::vector<const EncodedPair*> ptrs;
    for (const auto& e : *pairs) ptrs.push_back(&e);
    return nsp_head_loss(model, ptrs, targets, variant, labels);
  };
  return {loss, params};
}

}  // namespace nspbert::testing
