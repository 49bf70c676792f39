#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>

using namespace nspbert;
using namespace nspbert::testing;

TEST_CASE("single-sentence rendering") {
  const PromptTemplate suffix{"It was {label}.", PromptPosition::suffix};
  const Verbalizer v({{"pos", "great"}, {"neg", "terrible"}});
  CHECK(render_single("great movie", suffix, v, "pos") == RenderedPair{"great movie", "It was great."});
  const PromptTemplate prefix{"It was {label}.", PromptPosition::prefix};
  CHECK(render_single("great movie", prefix, v, "neg") == RenderedPair{"It was terrible.", "great movie"});

  const Verbalizer topics({{"biz", "Business & Finance"}, {"sci", "Science"}});
  const PromptTemplate about{"this is about {label}", PromptPosition::suffix};
  CHECK(render_single("x", about, topics, "biz").b == "this is about Business & Finance");
  CHECK_THROWS_AS(render_single("x", about, topics, "sports"), PromptError);
}

TEST_CASE("renderings of different labels differ only in the verbalized span") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const TaskConfig task = random_single_task(rng, 3);
    const std::string x = random_sentence(rng, 1, 6);
    const auto labels = task.labels();
    const auto base = render_single(x, task.prompt, task.verbalizer, labels[0]);
    CHECK(base == render_single(x, task.prompt, task.verbalizer, labels[0]));
    const auto [before, after] = task.prompt.split();
    for (const auto& l : labels) {
      const auto r = render_single(x, task.prompt, task.verbalizer, l);
      const std::string& prompt = task.prompt.position == PromptPosition::suffix ? r.b : r.a;
      const std::string& text = task.prompt.position == PromptPosition::suffix ? r.a : r.b;
      CHECK(text == x);
      CHECK(prompt == before + task.verbalizer.phrase(l) + after);
    }
  }
}

TEST_CASE("pair and two-stage rendering") {
  CHECK(render_pair("x1", "x2", PairOrder::original) == RenderedPair{"x1", "x2"});
  CHECK(render_pair("x1", "x2", PairOrder::reversed) == RenderedPair{"x2", "x1"});

  const TwoStagePrompt p{"the {mention} here", "{description}"};
  const auto r = render_two_stage("He lifted the cup", "cup", "a drinking vessel", p);
  CHECK(r.a == "He lifted the cup, the cup here");
  CHECK(r.b == "a drinking vessel");
  CHECK(render_two_stage("He lifted the cup", "cup", "a sports trophy", p).a == r.a);
  CHECK_THROWS_AS(render_two_stage("He lifted the cup", "", "x", p), PromptError);

  // An empty description leaves sentence B empty, which encoding rejects.
  const auto empty = render_two_stage("He lifted the cup", "cup", "", p);
  CHECK(empty.b.empty());
  CHECK_THROWS_AS(toy_tokenizer().encode_pair(empty.a, empty.b, 32), EncodingError);
}

TEST_CASE("PET rendering places one mask per verbalizer token") {
  const Tokenizer tok = toy_tokenizer();
  const PromptTemplate t{"it was {label} .", PromptPosition::suffix};
  const Verbalizer v({{"pos", "good"}, {"neg", "very bad"}});
  const auto one = render_pet(tok, "the movie", t, v, "pos", 32);
  CHECK(one.mask_positions.size() == 1);
  CHECK(one.mask_targets == std::vector<TokenId>{tok.vocab().id("good")});
  CHECK(one.ids.front() == Vocab::kClsId);
  CHECK(one.ids.back() == Vocab::kSepId);
  CHECK(std::count(one.segments.begin(), one.segments.end(), 1) == 0);

  const auto two = render_pet(tok, "the movie", t, v, "neg", 32);
  REQUIRE(two.mask_positions.size() == 2);
  CHECK(two.mask_positions[1] == two.mask_positions[0] + 1);
  CHECK(two.mask_targets == std::vector<TokenId>{tok.vocab().id("very"), tok.vocab().id("bad")});
  // [CLS] the movie it was [MASK] [MASK] . [SEP]
  CHECK(two.mask_positions[0] == 5);

  const auto cut = render_pet(tok, "the movie was very very very good and bad", t, v, "neg", 10);
  CHECK(cut.ids.size() == 10);
  CHECK(cut.mask_targets == two.mask_targets);
  CHECK_THROWS_AS(render_pet(tok, "x", t, v, "neg", 6), EncodingError);
}

TEST_CASE("verbalizer and template validation") {
  CHECK_THROWS_AS(Verbalizer(std::vector<std::pair<std::string, std::string>>{}), PromptError);
  CHECK_THROWS_AS(Verbalizer({{"a", "x"}, {"a", "y"}}), PromptError);
  CHECK_THROWS_AS(Verbalizer({{"a", "x"}, {"b", "x"}}), PromptError);
  CHECK_THROWS_AS(Verbalizer({{"a", " "}, {"b", "x"}}), PromptError);
  CHECK_THROWS_AS((PromptTemplate{"no slot", PromptPosition::suffix}.validate()), PromptError);
  CHECK_THROWS_AS((PromptTemplate{"{label} {label}", PromptPosition::suffix}.validate()), PromptError);
  CHECK_THROWS_AS((PromptTemplate{"{text} {label}", PromptPosition::suffix}.validate()), PromptError);
  CHECK_THROWS_AS((TwoStagePrompt{"no mention", "{description}"}.validate()), PromptError);
}

TEST_CASE("task config JSON") {
  const auto j = nlohmann::ordered_json::parse(R"({
    "task_type": "pair",
    "verbalizer": {"NotEntail": "no", "Entail": "yes"},
    "mapping": {"strategy": "samples_contrast", "order": "descending", "batch_size": 32}
  })");
  const TaskConfig t = task_config_from_json(j);
  CHECK(t.task_type == TaskType::pair);
  CHECK(t.labels() == std::vector<std::string>{"NotEntail", "Entail"});
  CHECK(t.mapping.order == SortOrder::descending);
  CHECK(t.mapping.batch_size == 32);

  const auto path = (std::filesystem::temp_directory_path() / "nspbert_task.json").string();
  save_task_config(t, path);
  const TaskConfig back = load_task_config(path);
  CHECK(task_config_to_json(back) == task_config_to_json(t));
  std::filesystem::remove(path);

  auto bad = j;
  bad["mapping"]["strategy"] = "candidates_contrast";
  CHECK_THROWS_AS(task_config_from_json(bad), PromptError);
  bad = j;
  bad["task_type"] = "triple";
  CHECK_THROWS_AS(task_config_from_json(bad), PromptError);
  bad = j;
  bad["verbalizer"] = {{"only", "one"}};
  CHECK_THROWS_AS(task_config_from_json(bad), PromptError);
  bad = j;
  bad["task_type"] = "two_stage";
  CHECK_THROWS_AS(task_config_from_json(bad), PromptError);
  bad = j;
  bad["task_type"] = "single";
  CHECK_THROWS_AS(task_config_from_json(bad), PromptError);
  CHECK_THROWS_AS(load_task_config("/nonexistent/task.json"), PromptError);
}
