#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace nspbert;
using namespace nspbert::testing;

namespace {

std::vector<ScoredSample> samples_from(const std::vector<double>& q) {
  std::vector<ScoredSample> out;
  for (size_t i = 0; i < q.size(); ++i) out.push_back({static_cast<int64_t>(i), {q[i]}, std::nullopt});
  return out;
}

LabelDistribution binary_even() { return {{"NotEntail", "Entail"}, {0.5, 0.5}}; }

}  // namespace

TEST_CASE("candidates contrast") {
  CHECK(predict_candidates_contrast(std::vector<double>{0.9, 0.2, 0.4}) == 0);
  CHECK(predict_candidates_contrast(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(predict_candidates_contrast(std::vector<double>{0.1, 0.7, 0.7}) == 1);
  CHECK_THROWS_AS(predict_candidates_contrast(std::vector<double>{}), std::invalid_argument);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(4), t(4);
    for (auto& v : q) v = u(rng);
    for (size_t i = 0; i < 4; ++i) t[i] = std::exp(3.0 * q[i]) - 7.0;
    CHECK(predict_candidates_contrast(q) == predict_candidates_contrast(t));
  }
}

TEST_CASE("samples contrast examples") {
  const auto s = samples_from({0.95, 0.10, 0.80, 0.20});
  // NotEntail is the lowest-match label, so ascending order gives it the lowest q.
  CHECK(samples_contrast(s, SortOrder::ascending, binary_even(), 4) == std::vector<size_t>{1, 0, 1, 0});
  CHECK(samples_contrast(s, SortOrder::descending, binary_even(), 4) == std::vector<size_t>{0, 1, 0, 1});
  CHECK(samples_contrast(s, SortOrder::ascending, binary_even(), 0) == std::vector<size_t>{1, 0, 1, 0});

  // One sample per batch cannot be contrasted: every output is the majority label.
  const auto constant = samples_contrast(s, SortOrder::ascending, binary_even(), 1);
  CHECK(constant == std::vector<size_t>(4, 0));
  const LabelDistribution skewed{{"NotEntail", "Entail"}, {0.25, 0.75}};
  CHECK(samples_contrast(s, SortOrder::ascending, skewed, 1) == std::vector<size_t>(4, 1));

  // Ties in q fall back to ascending id.
  const auto tied = samples_from({0.5, 0.5, 0.5, 0.5});
  CHECK(samples_contrast(tied, SortOrder::ascending, binary_even(), 4) == std::vector<size_t>{0, 0, 1, 1});

  CHECK_THROWS_AS(samples_contrast(s, SortOrder::ascending, LabelDistribution{{"a", "b"}, {0.5, 0.6}}, 4),
                  std::invalid_argument);
}

TEST_CASE("samples contrast with the whole set reproduces the global sort-and-cut") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t labels = std::uniform_int_distribution<size_t>(2, 4)(rng);
    const size_t n = labels * std::uniform_int_distribution<size_t>(2, 10)(rng);
    LabelDistribution d;
    for (size_t l = 0; l < labels; ++l) {
      d.labels.push_back("L" + std::to_string(l));
      d.proportions.push_back(1.0 / static_cast<double>(labels));
    }
    std::vector<double> q(n);
    for (auto& v : q) v = u(rng);
    const auto out = samples_contrast(samples_from(q), SortOrder::ascending, d, static_cast<int>(n));
    // Exact proportions: each label gets n / labels samples, ordered by q.
    std::vector<size_t> count(labels, 0);
    for (size_t i = 0; i < n; ++i) {
      ++count[out[i]];
      for (size_t j = 0; j < n; ++j) {
        if (q[i] < q[j]) CHECK(out[i] <= out[j]);
      }
    }
    for (auto c : count) CHECK(c == n / labels);
  }
}

TEST_CASE("samples contrast agrees with the brute-force oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t labels = std::uniform_int_distribution<size_t>(2, 4)(rng);
    const size_t n = std::uniform_int_distribution<size_t>(1, 64)(rng);
    const auto d = random_distribution(rng, labels);
    std::vector<double> q(n);
    const bool coarse = std::bernoulli_distribution(0.3)(rng);
    for (auto& v : q) {
      v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (coarse) v = std::round(v * 4.0) / 4.0;
    }
    const auto s = samples_from(q);
    const auto order = std::bernoulli_distribution(0.5)(rng) ? SortOrder::ascending : SortOrder::descending;
    const int bs = std::uniform_int_distribution<int>(1, static_cast<int>(n))(rng);
    CHECK(samples_contrast(s, order, d, bs) == brute_samples_contrast(s, order, d, bs));
  }
}

TEST_CASE("apportion") {
  CHECK(apportion(4, {0.5, 0.5}) == std::vector<int>{2, 2});
  CHECK(apportion(3, {0.5, 0.5}) == std::vector<int>{2, 1});
  CHECK(apportion(10, {0.25, 0.25, 0.5}) == std::vector<int>{3, 2, 5});
  CHECK(apportion(0, {0.3, 0.7}) == std::vector<int>{0, 0});
}

TEST_CASE("thresholds") {
  std::vector<ScoredSample> dev = {{0, {0.1}, "N"}, {1, {0.2}, "N"}, {2, {0.8}, "E"}, {3, {0.9}, "E"}};
  const Thresholds t = thresholds_from_dev(dev, {"N", "E"});
  REQUIRE(t.cuts.size() == 1);
  CHECK(t.cuts[0] == doctest::Approx(0.5));
  CHECK(apply_thresholds(t, 0.3) == "N");
  CHECK(apply_thresholds(t, 0.7) == "E");

  // Label order in the task does not matter: classes are ordered by mean q.
  const Thresholds r = thresholds_from_dev(dev, {"E", "N"});
  CHECK(r.labels == std::vector<std::string>{"N", "E"});

  std::vector<ScoredSample> single = {{0, {0.1}, "N"}, {1, {0.2}, "N"}};
  CHECK_THROWS_AS(thresholds_from_dev(single, {"N", "E"}), std::invalid_argument);
}

TEST_CASE("thresholds match the midpoint oracle and reproduce the dev distribution") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t labels = trial % 2 == 0 ? 2 : 3;
    std::vector<std::string> names;
    for (size_t l = 0; l < labels; ++l) names.push_back("L" + std::to_string(l));
    const size_t n = std::uniform_int_distribution<size_t>(labels, 40)(rng);
    std::vector<ScoredSample> dev;
    for (size_t i = 0; i < n; ++i) {
      const size_t l = i < labels ? i : std::uniform_int_distribution<size_t>(0, labels - 1)(rng);
      const double centre = (static_cast<double>(l) + 0.5) / static_cast<double>(labels);
      const double q = std::clamp(centre + std::normal_distribution<double>(0.0, 0.15)(rng), 0.0, 1.0);
      dev.push_back({static_cast<int64_t>(i), {q}, names[l]});
    }
    const Thresholds t = thresholds_from_dev(dev, names);
    const auto expected = brute_threshold_cuts(dev, names);
    REQUIRE(t.cuts.size() == expected.size());
    for (size_t k = 0; k < expected.size(); ++k) CHECK(t.cuts[k] == expected[k]);

    std::map<std::string, int> gold, predicted;
    bool tie = false;
    for (const auto& s : dev) {
      ++gold[*s.gold];
      ++predicted[t.apply(s.q[0])];
      for (double c : t.cuts) tie = tie || s.q[0] == c;
    }
    if (!tie) CHECK(gold == predicted);
  }
}

TEST_CASE("histogram") {
  CHECK(probability_histogram({1.0, 1.0, 1.0}, 4) == std::vector<size_t>{0, 0, 0, 3});
  CHECK(probability_histogram({0.0, 0.26, 0.5, 0.99}, 4) == std::vector<size_t>{1, 1, 1, 1});
  std::vector<double> uniform;
  for (int i = 0; i < 1000; ++i) uniform.push_back((i + 0.5) / 1000.0);
  for (auto c : probability_histogram(uniform, 10)) CHECK(c == 100);
  CHECK_THROWS_AS(probability_histogram({0.5}, 1), std::invalid_argument);
  CHECK_THROWS_AS(probability_histogram({1.5}, 4), std::invalid_argument);

  const auto path = (std::filesystem::temp_directory_path() / "nspbert_hist.csv").string();
  emit_probability_histogram(samples_from({0.1, 0.9}), 2, path);
  std::ifstream in(path);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "bin_lo,bin_hi,count");
  CHECK(row0 == "0,0.5,1");
  CHECK(row1 == "0.5,1,1");
  std::filesystem::remove(path);
}

TEST_CASE("scored JSONL round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "nspbert_scored.jsonl").string();
  std::vector<ScoredSample> s = {{3, {0.25, 0.5}, "a"}, {7, {0.125}, std::nullopt}};
  write_scored_jsonl(s, path);
  const auto back = read_scored_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == 3);
  CHECK(back[0].q == s[0].q);
  CHECK(back[0].gold == s[0].gold);
  CHECK_FALSE(back[1].gold.has_value());
  std::filesystem::remove(path);
}

TEST_CASE("model-based scoring") {
  const Tokenizer tok = toy_tokenizer();
  const Model model(EncoderConfig::preset("micro", static_cast<int>(tok.vocab().size())), 12);
  TaskConfig task;
  task.prompt = {"it was {label} .", PromptPosition::suffix};
  task.verbalizer = Verbalizer({{"a", "good"}, {"b", "bad"}, {"c", "very good"}});
  Example ex{"0", "the movie", std::nullopt, std::nullopt, {}, "a"};
  const auto s = score_candidates(model, tok, ex, task);
  REQUIRE(s.q.size() == 3);
  for (double q : s.q) {
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
  }
  CHECK(s.q[0] == doctest::Approx(model.nsp_prob_isnext(tok.encode_pair("the movie", "it was good .", 64))));

  // Same rendered candidate, same probability.
  TaskConfig two = task;
  two.task_type = TaskType::two_stage;
  two.two_stage = TwoStagePrompt{"the {mention} here", "{description}"};
  Example mention{"1", "the movie", std::nullopt, "movie", {{"a", "a game"}, {"b", "a game"}, {"c", "food"}}, "a"};
  const auto m = score_candidates(model, tok, mention, two);
  CHECK(m.q[0] == m.q[1]);

  const auto pet = pet_score(model, tok, "the movie", task);
  const auto products = pet_products(model, tok, "the movie", task);
  double total = 0.0;
  for (double p : pet) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  // The two-token label's product is below each of its factors.
  const auto enc = render_pet(tok, "the movie", task.prompt, task.verbalizer, "c", task.max_len);
  const double f0 = model.mlm_token_prob(enc, enc.mask_positions[0], enc.mask_targets[0]);
  const double f1 = model.mlm_token_prob(enc, enc.mask_positions[1], enc.mask_targets[1]);
  CHECK(products[2] == doctest::Approx(f0 * f1));
  CHECK(products[2] <= f0);
  CHECK(products[2] <= f1);
}

TEST_CASE("PET softmax over label products") {
  const auto p = pet_softmax({0.3, 0.4});
  CHECK(p[0] == doctest::Approx(0.4750).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.5250).epsilon(1e-4));
  const auto u = pet_softmax({0.2, 0.2, 0.2});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(pet_softmax({}), std::invalid_argument);
}
