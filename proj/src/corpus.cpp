#include "nspbert/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace nspbert {
namespace {

// Function words keep English-looking prompts inside the vocabulary.
const std::vector<std::string> kFunctionWords = {
    "the", "a",    "is",   "it",   "was",  "this", "that", "about", "of",   "and",
    "to",  "in",   "on",   "with", "for",  "news", "story", "here", "there", "we"};

std::string syllable_word(uint32_t code, int syllables) {
  static const char* consonants = "bdfgklmnprstvzhjcwyx";
  static const char* vowels = "aeiou";
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    const uint32_t syl = code % 100;
    code /= 100;
    w.push_back(consonants[syl / 5]);
    w.push_back(vowels[syl % 5]);
  }
  return w;
}

}  // namespace

void SyntheticCorpusConfig::validate() const {
  if (topics < 1) throw std::invalid_argument("corpus config: topics must be >= 1");
  if (documents < 1) throw std::invalid_argument("corpus config: documents must be >= 1");
  if (sentences_per_document < 1) throw std::invalid_argument("corpus config: sentences_per_document must be >= 1");
  if (words_per_topic < 1 || shared_words < 1) throw std::invalid_argument("corpus config: empty lexicon");
  if (min_sentence_len < 1 || max_sentence_len < min_sentence_len) {
    throw std::invalid_argument("corpus config: invalid sentence length range");
  }
  if (concentration < 0.0 || concentration > 1.0) throw std::invalid_argument("corpus config: concentration in [0,1]");
  if (core_words < 0 || subtopics < 1 || (words_per_topic - core_words) < subtopics) {
    throw std::invalid_argument("corpus config: need at least one word per subtopic after the core words");
  }
  if (core_words == 0 && core_rate > 0.0) throw std::invalid_argument("corpus config: core_rate needs core words");
  if (core_rate < 0.0 || core_rate > 1.0) throw std::invalid_argument("corpus config: core_rate in [0,1]");
}

Lexicon make_lexicon(const SyntheticCorpusConfig& cfg) {
  Lexicon lex;
  std::unordered_set<std::string> used(kFunctionWords.begin(), kFunctionWords.end());
  // Full-period LCG over the three-syllable code space.
  constexpr uint32_t kSpace = 1000000;
  uint32_t code = 12345;
  auto next_word = [&] {
    for (;;) {
      code = static_cast<uint32_t>((static_cast<uint64_t>(code) * 21u + 104729u) % kSpace);
      std::string w = syllable_word(code, 3);
      if (used.insert(w).second) return w;
    }
  };
  for (int i = 0; i < cfg.shared_words; ++i) {
    if (static_cast<size_t>(i) < kFunctionWords.size()) {
      lex.shared_words.push_back(kFunctionWords[static_cast<size_t>(i)]);
    } else {
      lex.shared_words.push_back(next_word());
    }
  }
  lex.topic_words.resize(static_cast<size_t>(cfg.topics));
  for (auto& words : lex.topic_words) {
    for (int i = 0; i < cfg.words_per_topic; ++i) words.push_back(next_word());
  }
  return lex;
}

std::vector<Document> generate_corpus(const SyntheticCorpusConfig& cfg, int first_id) {
  cfg.validate();
  const Lexicon lex = make_lexicon(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> shared_zipf(lex.shared_words.size());
  for (size_t r = 0; r < shared_zipf.size(); ++r) shared_zipf[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<size_t> shared_dist(shared_zipf.begin(), shared_zipf.end());

  const size_t core = static_cast<size_t>(cfg.core_words);
  const size_t group = (static_cast<size_t>(cfg.words_per_topic) - core) / static_cast<size_t>(cfg.subtopics);
  std::vector<Document> docs;
  docs.reserve(static_cast<size_t>(cfg.documents));
  std::uniform_int_distribution<int> len_dist(cfg.min_sentence_len, cfg.max_sentence_len);
  std::uniform_int_distribution<int> subtopic_dist(0, cfg.subtopics - 1);
  std::bernoulli_distribution from_topic(cfg.concentration);
  std::bernoulli_distribution from_core(cfg.core_rate);
  for (int d = 0; d < cfg.documents; ++d) {
    Document doc;
    doc.id = first_id + d;
    doc.topic = d % cfg.topics;
    const auto& topic_words = lex.topic_words[static_cast<size_t>(doc.topic)];
    const size_t first = core + group * static_cast<size_t>(subtopic_dist(rng));
    std::uniform_int_distribution<size_t> core_pick(0, core == 0 ? 0 : core - 1);
    std::uniform_int_distribution<size_t> group_pick(first, first + group - 1);

    for (int s = 0; s < cfg.sentences_per_document; ++s) {
      const int len = len_dist(rng);
      std::vector<const std::string*> words;
      for (int t = 0; t < len; ++t) {
        if (from_topic(rng)) {
          words.push_back(&topic_words[from_core(rng) ? core_pick(rng) : group_pick(rng)]);
        } else {
          words.push_back(&lex.shared_words[shared_dist(rng)]);
        }
      }
      std::string sentence;
      for (const auto* w : words) {
        sentence += *w;
        sentence += ' ';
      }
      sentence += '.';
      doc.sentences.push_back(std::move(sentence));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<DocumentText> strip_topics(const std::vector<Document>& docs) {
  std::vector<DocumentText> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.sentences);
  return out;
}

std::vector<std::string> all_sentences(const std::vector<DocumentText>& docs) {
  std::vector<std::string> out;
  for (const auto& d : docs) out.insert(out.end(), d.begin(), d.end());
  return out;
}

void write_corpus_jsonl(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus: " + path);
  for (const auto& d : docs) {
    nlohmann::json j = {{"topic", d.topic}, {"sentences", d.sentences}};
    out << j.dump() << '\n';
  }
}

std::vector<Document> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<Document> docs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Document d;
      d.id = static_cast<int>(docs.size());
      d.topic = j.at("topic").get<int>();
      d.sentences = j.at("sentences").get<std::vector<std::string>>();
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("corpus " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return docs;
}

std::vector<NspPairExample> sample_nsp_pairs(const std::vector<DocumentText>& docs, size_t n, std::mt19937_64& rng) {
  if (docs.size() < 2) throw std::invalid_argument("sample_nsp_pairs: need at least two documents");
  for (size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].size() < 2) {
      throw std::invalid_argument("sample_nsp_pairs: document " + std::to_string(d) + " has fewer than 2 sentences");
    }
  }
  std::uniform_int_distribution<size_t> doc_dist(0, docs.size() - 1);
  std::uniform_int_distribution<size_t> other_dist(0, docs.size() - 2);
  std::bernoulli_distribution coin(0.5);
  std::vector<NspPairExample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    NspPairExample ex;
    const size_t da = doc_dist(rng);
    const size_t sa = std::uniform_int_distribution<size_t>(0, docs[da].size() - 2)(rng);
    ex.doc_a = static_cast<int>(da);
    ex.sentence_a = static_cast<int>(sa);
    ex.a = docs[da][sa];
    ex.is_next = coin(rng);
    if (ex.is_next) {
      ex.doc_b = ex.doc_a;
      ex.sentence_b = static_cast<int>(sa + 1);
    } else {
      size_t db = other_dist(rng);
      if (db >= da) ++db;
      ex.doc_b = static_cast<int>(db);
      ex.sentence_b = static_cast<int>(std::uniform_int_distribution<size_t>(0, docs[db].size() - 1)(rng));
    }
    ex.b = docs[static_cast<size_t>(ex.doc_b)][static_cast<size_t>(ex.sentence_b)];
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<NspPairExample> sample_nsp_pairs(const std::vector<DocumentText>& docs, size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_nsp_pairs(docs, n, rng);
}

MaskedTokens mask_tokens(const std::vector<TokenId>& ids, double rate, size_t vocab_size, std::mt19937_64& rng) {
  MaskedTokens out;
  out.ids = ids;
  if (rate <= 0.0) return out;
  std::bernoulli_distribution select(rate);
  std::uniform_real_distribution<double> action(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_token(Vocab::kNumSpecial, static_cast<TokenId>(vocab_size) - 1);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (Vocab::is_special(ids[i])) continue;
    if (!select(rng)) continue;
    out.positions.push_back(static_cast<int32_t>(i));
    out.targets.push_back(ids[i]);
    const double u = action(rng);
    if (u < 0.8) {
      out.ids[i] = Vocab::kMaskId;
    } else if (u < 0.9) {
      out.ids[i] = random_token(rng);
    }
  }
  return out;
}

MaskedTokens mask_tokens(const std::vector<TokenId>& ids, double rate, size_t vocab_size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mask_tokens(ids, rate, vocab_size, rng);
}

}  // namespace nspbert
