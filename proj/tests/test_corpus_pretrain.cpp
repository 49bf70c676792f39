#include "nspbert/pretrain.hpp"

#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>

using namespace nspbert;

TEST_CASE("corpus generation is deterministic and labelled") {
  SyntheticCorpusConfig cfg;
  cfg.documents = 40;
  const auto a = generate_corpus(cfg);
  const auto b = generate_corpus(cfg);
  REQUIRE(a.size() == 40);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sentences == b[i].sentences);
    CHECK(a[i].topic == static_cast<int>(i) % cfg.topics);
    CHECK(a[i].sentences.size() == static_cast<size_t>(cfg.sentences_per_document));
  }
  cfg.seed = 2;
  CHECK(generate_corpus(cfg)[0].sentences != a[0].sentences);
}

TEST_CASE("concentration boundaries") {
  SyntheticCorpusConfig cfg;
  cfg.documents = 20;
  const Lexicon lex = make_lexicon(cfg);
  std::set<std::string> shared(lex.shared_words.begin(), lex.shared_words.end());
  std::vector<std::set<std::string>> topic;
  for (const auto& w : lex.topic_words) topic.emplace_back(w.begin(), w.end());
  std::set<std::string> any_topic;
  for (const auto& t : topic) any_topic.insert(t.begin(), t.end());

  cfg.concentration = 1.0;
  for (const auto& d : generate_corpus(cfg)) {
    for (const auto& s : d.sentences) {
      for (const auto& w : pre_tokenize(s)) {
        if (w != ".") CHECK(topic[static_cast<size_t>(d.topic)].count(w) == 1);
      }
    }
  }
  cfg.concentration = 0.0;
  for (const auto& d : generate_corpus(cfg)) {
    for (const auto& s : d.sentences) {
      for (const auto& w : pre_tokenize(s)) CHECK(any_topic.count(w) == 0);
    }
  }
  cfg.concentration = 1.5;
  CHECK_THROWS_AS(generate_corpus(cfg), std::invalid_argument);
}

TEST_CASE("corpus JSONL round trip") {
  SyntheticCorpusConfig cfg;
  cfg.documents = 5;
  const auto docs = generate_corpus(cfg);
  const auto path = (std::filesystem::temp_directory_path() / "nspbert_corpus.jsonl").string();
  write_corpus_jsonl(docs, path);
  const auto back = read_corpus_jsonl(path);
  REQUIRE(back.size() == docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    CHECK(back[i].topic == docs[i].topic);
    CHECK(back[i].sentences == docs[i].sentences);
  }
  std::filesystem::remove(path);
}

TEST_CASE("NSP pair sampling") {
  SyntheticCorpusConfig cfg;
  cfg.documents = 50;
  const auto docs = strip_topics(generate_corpus(cfg));
  const auto pairs = sample_nsp_pairs(docs, 1000, 7);
  const auto positives = std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.is_next; });
  CHECK(positives >= 450);
  CHECK(positives <= 550);
  for (const auto& p : pairs) {
    if (p.is_next) {
      CHECK(p.doc_b == p.doc_a);
      CHECK(p.sentence_b == p.sentence_a + 1);
    } else {
      CHECK(p.doc_b != p.doc_a);
    }
    CHECK(p.a == docs[static_cast<size_t>(p.doc_a)][static_cast<size_t>(p.sentence_a)]);
    CHECK(p.b == docs[static_cast<size_t>(p.doc_b)][static_cast<size_t>(p.sentence_b)]);
  }
  const auto again = sample_nsp_pairs(docs, 1000, 7);
  for (size_t i = 0; i < pairs.size(); ++i) CHECK(again[i].b == pairs[i].b);
}

TEST_CASE("MLM masking") {
  std::vector<TokenId> ids = {Vocab::kClsId};
  for (TokenId t = 10; t < 410; ++t) ids.push_back(t);
  ids.push_back(Vocab::kSepId);

  const auto none = mask_tokens(ids, 0.0, 500, uint64_t{1});
  CHECK(none.ids == ids);
  CHECK(none.positions.empty());

  const auto m = mask_tokens(ids, 0.15, 500, uint64_t{3});
  CHECK(m.positions.size() == m.targets.size());
  CHECK(m.positions.size() > 30);
  CHECK(m.positions.size() < 95);
  size_t masked = 0;
  for (size_t k = 0; k < m.positions.size(); ++k) {
    const auto pos = static_cast<size_t>(m.positions[k]);
    CHECK_FALSE(Vocab::is_special(ids[pos]));
    CHECK(m.targets[k] == ids[pos]);
    masked += m.ids[pos] == Vocab::kMaskId ? 1 : 0;
  }
  CHECK(masked > m.positions.size() / 2);
  CHECK(m.ids.front() == Vocab::kClsId);
  CHECK(m.ids.back() == Vocab::kSepId);
}

TEST_CASE("learning-rate schedule") {
  PretrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup = 10;
  cfg.steps = 110;
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(cfg, 9) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(cfg, 100) == doctest::Approx(1e-3));
  cfg.linear_decay = true;
  CHECK(scheduled_lr(cfg, 60) == doctest::Approx(5e-4));
}

TEST_CASE("short pre-training run lowers the loss") {
  SyntheticCorpusConfig cc;
  cc.documents = 80;
  const auto text = strip_topics(generate_corpus(cc));
  const Tokenizer tok(Vocab::build(all_sentences(text), 10000));
  Model model(EncoderConfig::preset("micro", static_cast<int>(tok.vocab().size())), 5);
  PretrainConfig pc;
  pc.steps = 120;
  pc.batch = 16;
  pc.warmup = 10;
  pc.max_len = 32;
  int calls = 0;
  const auto trace = pretrain(model, tok, text, pc, [&](int, double, double, double) { ++calls; });
  CHECK(calls == 120);
  REQUIRE(trace.total.size() == 120);
  const double first = std::accumulate(trace.total.begin(), trace.total.begin() + 20, 0.0) / 20;
  const double last = std::accumulate(trace.total.end() - 20, trace.total.end(), 0.0) / 20;
  CHECK(last < first);
  for (size_t i = 0; i < trace.total.size(); ++i) {
    CHECK(trace.total[i] == doctest::Approx(trace.mlm[i] + trace.nsp[i]));
  }
  CHECK(model.step() == 120);
}
