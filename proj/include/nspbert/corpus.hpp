#pragma once

// Synthetic topic corpus, NSP pair sampling, and MLM masking.

#include "nspbert/tokenizer.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace nspbert {

/// Documents draw content words either from their topic's lexicon or from a
/// shared lexicon (Zipf-weighted, like function words). A topic lexicon holds
/// `core_words` used by every document of the topic, followed by `subtopics`
/// equal groups of the remaining words; each document is confined to one
/// subtopic group, so adjacent sentences agree on more than the topic.
struct SyntheticCorpusConfig {
  int topics = 4;
  int words_per_topic = 40;
  int shared_words = 120;
  int documents = 400;
  int sentences_per_document = 8;
  int min_sentence_len = 5;
  int max_sentence_len = 12;
  /// Probability that a content token comes from the topic lexicon.
  double concentration = 0.5;
  int core_words = 8;
  int subtopics = 4;
  /// Probability that a topic token is a core word rather than a subtopic word.
  double core_rate = 0.3;
  uint64_t seed = 1;

  void validate() const;
};

/// Topic and shared word lists. Depends only on the lexicon sizes, so corpora
/// generated with different seeds share one vocabulary.
struct Lexicon {
  std::vector<std::vector<std::string>> topic_words;
  std::vector<std::string> shared_words;
};

Lexicon make_lexicon(const SyntheticCorpusConfig& cfg);

struct Document {
  int id = 0;
  /// Used to build downstream tasks; never read by pre-training.
  int topic = 0;
  std::vector<std::string> sentences;
};

/// Sentences of one document with the topic tag stripped.
using DocumentText = std::vector<std::string>;

/// Generates cfg.documents documents with ids first_id, first_id + 1, ...
/// Document d has topic d % topics; its subtopic is drawn uniformly.
std::vector<Document> generate_corpus(const SyntheticCorpusConfig& cfg, int first_id = 0);

std::vector<DocumentText> strip_topics(const std::vector<Document>& docs);

/// Every sentence of every document, for vocabulary building.
std::vector<std::string> all_sentences(const std::vector<DocumentText>& docs);

void write_corpus_jsonl(const std::vector<Document>& docs, const std::string& path);
std::vector<Document> read_corpus_jsonl(const std::string& path);

struct NspPairExample {
  std::string a;
  std::string b;
  bool is_next = false;
  // Source coordinates, kept for verification.
  int doc_a = 0, sentence_a = 0, doc_b = 0, sentence_b = 0;
};

/// Half the time B is the sentence after A; otherwise B is a uniformly drawn
/// sentence from a uniformly drawn other document.
std::vector<NspPairExample> sample_nsp_pairs(const std::vector<DocumentText>& docs, size_t n, uint64_t seed);
std::vector<NspPairExample> sample_nsp_pairs(const std::vector<DocumentText>& docs, size_t n, std::mt19937_64& rng);

struct MaskedTokens {
  std::vector<TokenId> ids;
  std::vector<int32_t> positions;
  std::vector<TokenId> targets;
};

/// Selects each non-special position with probability `rate`; a selected token
/// becomes [MASK] 80% of the time, a random non-special token 10%, and stays
/// unchanged 10%. Targets are the original ids.
MaskedTokens mask_tokens(const std::vector<TokenId>& ids, double rate, size_t vocab_size, std::mt19937_64& rng);
MaskedTokens mask_tokens(const std::vector<TokenId>& ids, double rate, size_t vocab_size, uint64_t seed);

}  // namespace nspbert
