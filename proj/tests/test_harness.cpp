#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace nspbert;
using namespace nspbert::testing;

namespace {

std::string write_file(const std::string& name, const std::string& body) {
  const auto path = (std::filesystem::temp_directory_path() / ("nspbert_" + name)).string();
  std::ofstream(path) << body;
  return path;
}

TaskConfig binary_task() {
  TaskConfig t;
  t.prompt = {"it was {label} .", PromptPosition::suffix};
  t.verbalizer = Verbalizer({{"pos", "good"}, {"neg", "bad"}});
  return t;
}

TaskConfig pair_task() {
  TaskConfig t;
  t.task_type = TaskType::pair;
  t.verbalizer = Verbalizer({{"NotEntail", "no"}, {"Entail", "yes"}});
  t.mapping.strategy = MappingStrategy::samples_contrast;
  return t;
}

std::vector<Example> labelled_pool(const std::vector<std::string>& labels, size_t per_label) {
  std::vector<Example> pool;
  for (size_t i = 0; i < per_label; ++i) {
    for (const auto& l : labels) {
      pool.push_back({l + std::to_string(i), "text " + std::to_string(i), std::nullopt, std::nullopt, {}, l});
    }
  }
  return pool;
}

void check_split(const KShotSplit& s, const std::vector<std::string>& labels, int k) {
  std::map<std::string, int> train, dev;
  std::set<std::string> ids;
  for (const auto& e : s.train) {
    ++train[e.gold];
    CHECK(ids.insert(e.id).second);
  }
  for (const auto& e : s.dev) {
    ++dev[e.gold];
    CHECK(ids.insert(e.id).second);
  }
  for (const auto& l : labels) {
    CHECK(train[l] == k);
    CHECK(dev[l] == 10 * k);
  }
}

}  // namespace

TEST_CASE("load_jsonl") {
  const TaskConfig task = binary_task();
  const auto ok = write_file("ok.jsonl",
                             "{\"id\": \"a\", \"text_a\": \"good film\", \"label\": \"pos\"}\n"
                             "\n"
                             "{\"text\": \"bad film\", \"label\": \"neg\"}\n"
                             "{\"id\": 7, \"text_a\": \"fine\", \"label\": \"pos\"}\n");
  const auto ex = load_jsonl(ok, task);
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].id == "a");
  CHECK(ex[1].id == "3");  // line number when the id is absent
  CHECK(ex[1].text_a == "bad film");
  CHECK(ex[2].id == "7");

  auto expect_error = [&](const std::string& body, const TaskConfig& t, const std::string& fragment) {
    const auto path = write_file("bad.jsonl", body);
    try {
      load_jsonl(path, t);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  expect_error("{\"text_a\": \"x\", \"label\": \"pos\"}\n{not json\n", task, "line 2");
  expect_error("{\"text_a\": \"x\", \"label\": \"meh\"}\n", task, "unknown label");
  expect_error("{\"id\": 1, \"text_a\": \"x\", \"label\": \"pos\"}\n{\"id\": 1, \"text_a\": \"y\", \"label\": \"neg\"}\n",
               task, "duplicate id");
  expect_error("{\"text_a\": \"x\", \"label\": \"Entail\"}\n", pair_task(), "text_b");
  CHECK_THROWS_AS(load_jsonl("/nonexistent/file.jsonl", task), DataError);

  // write_jsonl and load_jsonl agree.
  const auto again = write_file("again.jsonl", "");
  write_jsonl(ex, again);
  const auto back = load_jsonl(again, task);
  REQUIRE(back.size() == ex.size());
  for (size_t i = 0; i < ex.size(); ++i) {
    CHECK(back[i].id == ex[i].id);
    CHECK(back[i].text_a == ex[i].text_a);
    CHECK(back[i].gold == ex[i].gold);
  }
}

TEST_CASE("K-shot splits") {
  const std::vector<std::string> labels = {"pos", "neg"};
  const auto pool = labelled_pool(labels, 200);
  const auto s = kshot_split(pool, labels, 16, 13);
  CHECK(s.train.size() == 32);
  CHECK(s.dev.size() == 320);
  check_split(s, labels, 16);

  const auto again = kshot_split(pool, labels, 16, 13);
  CHECK(again.fingerprint() == s.fingerprint());
  std::set<uint64_t> prints;
  for (uint64_t seed : default_seeds()) prints.insert(kshot_split(pool, labels, 16, seed).fingerprint());
  CHECK(prints.size() == default_seeds().size());

  const auto test = labelled_pool(labels, 3);
  CHECK(kshot_split(pool, labels, 16, 13, test).test.size() == test.size());
  CHECK_THROWS_AS(kshot_split(labelled_pool(labels, 175), labels, 16, 1), DataError);
  CHECK(kshot_split(labelled_pool(labels, 176), labels, 16, 1).dev.size() == 320);
}

TEST_CASE("K-shot split properties over random pools") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n_labels = std::uniform_int_distribution<size_t>(2, 4)(rng);
    std::vector<std::string> labels;
    for (size_t l = 0; l < n_labels; ++l) labels.push_back("c" + std::to_string(l));
    const int k = std::uniform_int_distribution<int>(1, 8)(rng);
    std::vector<Example> pool;
    for (const auto& l : labels) {
      const size_t n = static_cast<size_t>(11 * k) + std::uniform_int_distribution<size_t>(0, 30)(rng);
      for (size_t i = 0; i < n; ++i) pool.push_back({l + "_" + std::to_string(i), "t", std::nullopt, std::nullopt, {}, l});
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    check_split(kshot_split(pool, labels, k, rng()), labels, k);
  }
}

TEST_CASE("synthetic tasks") {
  SyntheticCorpusConfig cc;
  const auto docs = heldout_documents(cc, 60, 1);
  CHECK(docs.front().id == cc.documents);
  const auto training_ids = generate_corpus(cc);
  CHECK(docs.front().sentences != training_ids.front().sentences);

  const auto topic = make_synthetic_task(docs, cc, SyntheticTaskKind::topic, 1);
  CHECK(topic.task.labels().size() == 4);
  std::map<std::string, int> counts;
  for (const auto& e : topic.test) ++counts[e.gold];
  int majority = 0;
  for (const auto& [l, c] : counts) majority = std::max(majority, c);
  CHECK(static_cast<double>(majority) / static_cast<double>(topic.test.size()) == doctest::Approx(0.25).epsilon(0.05));
  CHECK(topic.pool.size() == 40 * 8);
  CHECK(topic.test.size() == 20 * 8);
  const Lexicon lex = make_lexicon(cc);
  CHECK(topic.task.verbalizer.phrase("topic2") == lex.topic_words[2].front());

  const auto pair = make_synthetic_task(docs, cc, SyntheticTaskKind::pair, 1);
  int entail = 0;
  for (const auto& e : pair.pool) entail += e.gold == "Entail" ? 1 : 0;
  CHECK(entail * 2 == static_cast<int>(pair.pool.size()));
  std::set<std::string> pool_text;
  for (const auto& e : pair.pool) pool_text.insert(e.text_a);
  for (const auto& e : pair.test) CHECK(pool_text.count(*e.text_b) == 0);
}

TEST_CASE("accuracy and mean/std") {
  const TaskConfig task = binary_task();
  const auto examples = labelled_pool({"pos", "pos", "neg"}, 1);
  CHECK(accuracy({0, 0, 1}, examples, task) == 1.0);
  CHECK(accuracy({0, 0, 0}, examples, task) == doctest::Approx(2.0 / 3.0));
  const MeanStd m = mean_std({0.5, 0.7, 0.9});
  CHECK(m.mean == doctest::Approx(0.7));
  CHECK(m.std == doctest::Approx(std::sqrt(0.08 / 3.0)));
  for (auto mode : {EvalMode::zero_shot_nsp, EvalMode::zero_shot_pet, EvalMode::samples_contrast,
                    EvalMode::thresholds, EvalMode::tuned}) {
    CHECK(parse_eval_mode(to_string(mode)) == mode);
  }
}

TEST_CASE("evaluation modes on a random model") {
  const Tokenizer tok = toy_tokenizer();
  const Model model(EncoderConfig::preset("micro", static_cast<int>(tok.vocab().size())), 8);
  std::mt19937_64 rng(12);
  std::vector<Example> pairs;
  for (int i = 0; i < 40; ++i) {
    pairs.push_back({"p" + std::to_string(i), random_sentence(rng, 2, 6), random_sentence(rng, 2, 6), std::nullopt, {},
                     i % 2 ? "Entail" : "NotEntail"});
  }
  const TaskConfig task = pair_task();
  for (auto mode : {EvalMode::samples_contrast, EvalMode::thresholds}) {
    const auto preds = predict_with_dev(model, tok, pairs, pairs, task, mode);
    CHECK(preds.size() == pairs.size());
  }
  // samples_contrast over a balanced dev distribution yields balanced output.
  TaskConfig whole = task;
  whole.mapping.batch_size = 0;
  const auto preds = predict_with_dev(model, tok, pairs, pairs, whole, EvalMode::samples_contrast);
  CHECK(std::count(preds.begin(), preds.end(), size_t{1}) == 20);
  CHECK_THROWS_AS(predict_zero_shot(model, tok, pairs, task, EvalMode::zero_shot_pet), std::invalid_argument);
}

TEST_CASE("experiments are deterministic") {
  const Tokenizer tok = toy_tokenizer();
  const Model model(EncoderConfig::preset("micro", static_cast<int>(tok.vocab().size())), 8);
  std::mt19937_64 rng(14);
  TaskConfig task = binary_task();
  std::vector<Example> pool;
  for (int i = 0; i < 30; ++i) {
    for (const auto& [label, word] : task.verbalizer.entries()) {
      pool.push_back({label + std::to_string(i), random_sentence(rng, 2, 4) + " " + word, std::nullopt, std::nullopt,
                      {}, label});
    }
  }
  const std::vector<Example> test(pool.begin(), pool.begin() + 10);
  ExperimentConfig cfg;
  cfg.k = 2;
  cfg.tuning.epochs = 1;
  cfg.seeds = {13, 21};
  const auto a = run_experiment(model, tok, pool, test, task, cfg);
  const auto b = run_experiment(model, tok, pool, test, task, cfg);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.seeds.size() == 2);
  CHECK(a.rows().size() == 2);
  CHECK(a.seeds[0].split_fingerprint != a.seeds[1].split_fingerprint);

  const auto j = cfg.to_json();
  CHECK(ExperimentConfig::from_json(j).to_json() == j);

  cfg.k = 100;
  CHECK_THROWS_AS(run_experiment(model, tok, pool, test, task, cfg), std::invalid_argument);
}
