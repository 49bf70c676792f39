// Command-line front end. Exit codes: 0 success, 2 validation error,
// 3 training divergence, 1 anything else.

#include "nspbert/checkpoint.hpp"
#include "nspbert/harness.hpp"
#include "nspbert/pretrain.hpp"
#include "nspbert/scoring.hpp"
#include "nspbert/tuning.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

using namespace nspbert;
using nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string checkpoint;
  std::string out;
};

ordered_json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
}

void write_json(const ordered_json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

SyntheticCorpusConfig corpus_config(const ordered_json& j) {
  SyntheticCorpusConfig c;
  c.topics = j.value("topics", c.topics);
  c.words_per_topic = j.value("words_per_topic", c.words_per_topic);
  c.shared_words = j.value("shared_words", c.shared_words);
  c.documents = j.value("documents", c.documents);
  c.sentences_per_document = j.value("sentences_per_document", c.sentences_per_document);
  c.min_sentence_len = j.value("min_sentence_len", c.min_sentence_len);
  c.max_sentence_len = j.value("max_sentence_len", c.max_sentence_len);
  c.concentration = j.value("concentration", c.concentration);
  c.core_words = j.value("core_words", c.core_words);
  c.subtopics = j.value("subtopics", c.subtopics);
  c.core_rate = j.value("core_rate", c.core_rate);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

PretrainConfig pretrain_config(const ordered_json& j) {
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.warmup = j.value("warmup", c.warmup);
  c.linear_decay = j.value("linear_decay", c.linear_decay);
  c.max_len = j.value("max_len", c.max_len);
  c.mask_rate = j.value("mask_rate", c.mask_rate);
  c.seed = j.value("seed", c.seed);
  if (c.steps < 0 || c.batch < 1 || !(c.lr > 0.0) || c.max_len < 8 || c.mask_rate <= 0.0 || c.mask_rate >= 1.0) {
    throw std::invalid_argument("pretrain config: steps >= 0, batch >= 1, lr > 0, max_len >= 8, mask_rate in (0,1)");
  }
  return c;
}

std::string require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw std::invalid_argument("missing required " + flag);
  return value;
}

std::string vocab_path(const std::string& checkpoint) { return checkpoint + ".vocab"; }

struct Loaded {
  Model model;
  Tokenizer tok;
};

Loaded load_model(const Globals& g) {
  const std::string ck = require(g.checkpoint, "--checkpoint");
  Model m = load_checkpoint(ck);
  Vocab v = Vocab::load(vocab_path(ck));
  if (static_cast<int>(v.size()) != m.config().vocab_size) {
    throw std::invalid_argument("vocab " + vocab_path(ck) + " has " + std::to_string(v.size()) +
                                " tokens, checkpoint expects " + std::to_string(m.config().vocab_size));
  }
  return {std::move(m), Tokenizer(std::move(v))};
}

int cmd_gen_corpus(const Globals& g, const std::string& task_dir, int heldout) {
  SyntheticCorpusConfig cfg = g.config.empty() ? SyntheticCorpusConfig{} : corpus_config(read_json(g.config));
  if (g.seed) cfg.seed = *g.seed;
  const auto docs = generate_corpus(cfg);
  write_corpus_jsonl(docs, require(g.out, "--out"));
  std::cout << "wrote " << docs.size() << " documents to " << g.out << '\n';
  if (!task_dir.empty()) {
    std::filesystem::create_directories(task_dir);
    const auto held = heldout_documents(cfg, heldout, cfg.seed);
    for (auto [kind, name] : {std::pair{SyntheticTaskKind::topic, "topic"}, std::pair{SyntheticTaskKind::pair, "pair"}}) {
      const auto task = make_synthetic_task(held, cfg, kind, cfg.seed);
      const std::string base = task_dir + "/" + name;
      save_task_config(task.task, base + "_task.json");
      write_jsonl(task.pool, base + "_pool.jsonl");
      write_jsonl(task.test, base + "_test.jsonl");
      std::cout << "wrote " << name << " task: " << task.pool.size() << " pool, " << task.test.size() << " test\n";
    }
  }
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& corpus_path, const std::string& preset) {
  const ordered_json j = g.config.empty() ? ordered_json::object() : read_json(g.config);
  PretrainConfig pc = pretrain_config(j.value("pretrain", ordered_json::object()));
  if (g.seed) pc.seed = *g.seed;
  std::vector<Document> docs = corpus_path.empty() ? generate_corpus(corpus_config(j.value("corpus", ordered_json::object())))
                                                   : read_corpus_jsonl(corpus_path);
  const auto text = strip_topics(docs);
  Tokenizer tok(Vocab::build(all_sentences(text), j.value("vocab_size", size_t{30000}), 1));
  Model model(EncoderConfig::preset(j.value("preset", preset), static_cast<int>(tok.vocab().size())), pc.seed);
  const std::string ck = require(g.checkpoint, "--checkpoint");

  std::ofstream trace;
  if (!g.out.empty()) {
    trace.open(g.out);
    if (!trace) throw std::runtime_error("cannot write " + g.out);
    trace << "step,total,mlm,nsp\n";
  }
  pretrain(model, tok, text, pc, [&](int step, double total, double mlm, double nsp) {
    if (trace.is_open()) trace << step << ',' << total << ',' << mlm << ',' << nsp << '\n';
    if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " loss " << total << '\n';
  });
  save_checkpoint(model, ck);
  tok.vocab().save(vocab_path(ck));
  std::cout << "saved " << ck << " (" << tok.vocab().size() << " tokens, " << pc.steps << " steps)\n";
  return 0;
}

int cmd_eval_zeroshot(const Globals& g, const std::string& data, const std::string& dev_path, std::string mode_name) {
  auto [model, tok] = load_model(g);
  const TaskConfig task = load_task_config(require(g.config, "--config"));
  const auto test = load_jsonl(require(data, "--data"), task);
  if (mode_name.empty()) {
    mode_name = task.mapping.strategy == MappingStrategy::candidates_contrast ? "zero_shot_nsp"
                                                                              : to_string(task.mapping.strategy);
  }
  const EvalMode mode = parse_eval_mode(mode_name);
  double acc = 0.0;
  if (mode == EvalMode::samples_contrast || mode == EvalMode::thresholds) {
    acc = evaluate_with_dev(model, tok, test, load_jsonl(require(dev_path, "--dev"), task), task, mode);
  } else {
    acc = evaluate_zero_shot(model, tok, test, task, mode);
  }
  if (!g.out.empty()) write_scored_jsonl(score_examples(model, tok, test, task), g.out);
  std::cout << ordered_json{{"mode", to_string(mode)}, {"examples", test.size()}, {"accuracy", acc}}.dump() << '\n';
  return 0;
}

int cmd_map_samples(const Globals& g, const std::string& data, const std::string& dev_path) {
  const TaskConfig task = load_task_config(require(g.config, "--config"));
  const auto samples = read_scored_jsonl(require(data, "--data"));
  const auto dev = read_scored_jsonl(require(dev_path, "--dev"));
  const auto labels = task.labels();
  std::vector<std::string> assigned;
  if (task.mapping.strategy == MappingStrategy::thresholds) {
    const Thresholds t = thresholds_from_dev(dev, labels);
    for (const auto& s : samples) assigned.push_back(t.apply(s.q.at(0)));
  } else {
    std::vector<std::string> gold;
    for (const auto& s : dev) {
      if (!s.gold) throw DataError("map-samples: dev sample " + std::to_string(s.id) + " has no gold label");
      gold.push_back(*s.gold);
    }
    const auto d = LabelDistribution::from_gold(labels, gold);
    for (size_t l : samples_contrast(samples, task.mapping.order, d, task.mapping.batch_size)) assigned.push_back(labels[l]);
  }
  size_t with_gold = 0, correct = 0;
  std::ostringstream lines;
  for (size_t i = 0; i < samples.size(); ++i) {
    lines << ordered_json{{"id", samples[i].id}, {"label", assigned[i]}}.dump() << '\n';
    if (samples[i].gold) {
      ++with_gold;
      correct += *samples[i].gold == assigned[i] ? 1 : 0;
    }
  }
  if (g.out.empty()) {
    std::cout << lines.str();
  } else {
    std::ofstream(g.out) << lines.str();
  }
  if (with_gold > 0) {
    std::cerr << "accuracy " << static_cast<double>(correct) / static_cast<double>(with_gold) << " over " << with_gold
              << " labelled samples\n";
  }
  return 0;
}

struct TuneOptions {
  std::string data, test, experiment, variant, report, save;
  int epochs = -1, k = -1, batch = -1;
  double lr = -1.0;
};

ExperimentConfig experiment_config(const Globals& g, const TuneOptions& o, ExperimentMethod method) {
  ExperimentConfig c = o.experiment.empty() ? ExperimentConfig{} : ExperimentConfig::from_json(read_json(o.experiment));
  c.method = method;
  if (!o.variant.empty()) c.tuning.variant = parse_variant(o.variant);
  if (o.epochs >= 0) c.tuning.epochs = o.epochs;
  if (o.k > 0) c.k = o.k;
  if (o.batch > 0) c.tuning.batch = o.batch;
  if (o.lr > 0.0) c.tuning.lr = o.lr;
  if (g.seed) c.seeds = {*g.seed};
  c.tuning.validate();
  return c;
}

void print_report(const ExperimentReport& r) {
  std::cout << (r.method == "nsp_tune" ? r.variant : r.method) << ": test accuracy " << r.test.mean << " +/- "
            << r.test.std << " over " << r.seeds.size() << " seeds\n";
}

int cmd_tune(const Globals& g, const TuneOptions& o, ExperimentMethod method) {
  auto [model, tok] = load_model(g);
  const TaskConfig task = load_task_config(require(g.config, "--config"));
  const auto pool = load_jsonl(require(o.data, "--data"), task);
  const auto test = load_jsonl(require(o.test, "--test"), task);
  const ExperimentConfig cfg = experiment_config(g, o, method);
  const ExperimentReport report = run_experiment(model, tok, pool, test, task, cfg);
  print_report(report);
  if (!g.out.empty()) write_results_csv(report.rows(), g.out);
  if (!o.report.empty()) write_json(report.to_json(), o.report);
  if (!o.save.empty()) {
    if (method != ExperimentMethod::nsp_tune || cfg.tuning.variant == TuningVariant::reinit_sigmoid_head ||
        cfg.tuning.variant == TuningVariant::linear_head_softmax || cfg.seeds.size() != 1) {
      throw std::invalid_argument("--save needs one seed and a variant that keeps the NSP head");
    }
    TuningConfig tc = cfg.tuning;
    tc.seed = cfg.seeds.front();
    const KShotSplit split = kshot_split(pool, task.labels(), cfg.k, tc.seed);
    const TuningResult r = nsp_tune(model, tok, split.train, split.dev, task, tc);
    save_checkpoint(r.best.model(), o.save);
    tok.vocab().save(vocab_path(o.save));
  }
  return 0;
}

int cmd_ablate(const Globals& g, const TuneOptions& o) {
  auto [model, tok] = load_model(g);
  const TaskConfig task = load_task_config(require(g.config, "--config"));
  const auto pool = load_jsonl(require(o.data, "--data"), task);
  const auto test = load_jsonl(require(o.test, "--test"), task);
  std::vector<ResultRow> rows;
  ordered_json reports = ordered_json::array();
  for (TuningVariant v : all_variants()) {
    ExperimentConfig cfg = experiment_config(g, o, ExperimentMethod::nsp_tune);
    cfg.tuning.variant = v;
    const ExperimentReport r = run_experiment(model, tok, pool, test, task, cfg);
    print_report(r);
    const auto part = r.rows();
    rows.insert(rows.end(), part.begin(), part.end());
    reports.push_back(r.to_json());
  }
  if (!g.out.empty()) write_results_csv(rows, g.out);
  if (!o.report.empty()) write_json(reports, o.report);
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("report: pass one or more results CSV files with --data");
  std::map<std::string, std::vector<ResultRow>> by_variant;
  std::vector<std::string> order;
  for (const auto& path : inputs) {
    for (auto& r : read_results_csv(path)) {
      if (!by_variant.count(r.variant)) order.push_back(r.variant);
      by_variant[r.variant].push_back(r);
    }
  }
  std::ostringstream csv;
  csv << "variant,n,mean_test_acc,std_test_acc,mean_dev_acc\n";
  ordered_json j = ordered_json::object();
  for (const auto& v : order) {
    std::vector<double> test, dev;
    for (const auto& r : by_variant[v]) {
      test.push_back(r.test_acc);
      dev.push_back(r.dev_acc);
    }
    const MeanStd t = mean_std(test);
    const MeanStd d = mean_std(dev);
    csv << v << ',' << test.size() << ',' << t.mean << ',' << t.std << ',' << d.mean << '\n';
    j[v] = {{"n", test.size()}, {"mean_test_acc", t.mean}, {"std_test_acc", t.std}, {"mean_dev_acc", d.mean}};
  }
  std::cout << csv.str();
  if (!g.out.empty()) write_json(j, g.out);
  return 0;
}

int cmd_histogram(const Globals& g, const std::string& scores, const std::string& data, int bins) {
  std::vector<ScoredSample> samples;
  if (!scores.empty()) {
    samples = read_scored_jsonl(scores);
  } else {
    auto [model, tok] = load_model(g);
    const TaskConfig task = load_task_config(require(g.config, "--config"));
    samples = score_examples(model, tok, load_jsonl(require(data, "--data"), task), task);
  }
  const auto counts = emit_probability_histogram(samples, bins, require(g.out, "--out"));
  size_t total = 0;
  for (auto c : counts) total += c;
  std::cout << "binned " << total << " probabilities into " << bins << " bins\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NSP-based prompt learning at desk scale"};
  app.require_subcommand(1);
  Globals g;
  uint64_t seed = 0;
  app.add_option("--config", g.config, "Configuration JSON (meaning depends on the subcommand)");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed override");
  app.add_option("--checkpoint", g.checkpoint, "Model checkpoint path");
  app.add_option("--out", g.out, "Output path");
  app.fallthrough();

  std::string task_dir;
  int heldout = 300;
  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic topic corpus");
  gen->add_option("--task-dir", task_dir, "Also write the synthetic downstream tasks here");
  gen->add_option("--heldout-documents", heldout, "Documents behind the downstream tasks");

  std::string corpus, preset = "micro";
  auto* pre = app.add_subcommand("pretrain", "Joint MLM + NSP pre-training");
  pre->add_option("--corpus", corpus, "Corpus JSONL (default: generate from the config's corpus block)");
  pre->add_option("--preset", preset, "Model size preset");

  std::string data, dev, mode;
  auto* zs = app.add_subcommand("eval-zeroshot", "Zero-shot evaluation of a task");
  zs->add_option("--data", data, "Test examples JSONL");
  zs->add_option("--dev", dev, "Dev examples JSONL (samples_contrast and thresholds modes)");
  zs->add_option("--mode", mode, "zero_shot_nsp, zero_shot_pet, samples_contrast or thresholds");

  auto* map = app.add_subcommand("map-samples", "Map scored samples to labels");
  map->add_option("--data", data, "Scored-sample JSONL");
  map->add_option("--dev", dev, "Scored dev samples with gold labels");

  TuneOptions tune;
  auto add_tune_options = [&](CLI::App* sub) {
    sub->add_option("--data", tune.data, "Pool of labelled examples for K-shot sampling");
    sub->add_option("--test", tune.test, "Test examples");
    sub->add_option("--experiment", tune.experiment, "Experiment JSON (epochs, lr, batch, k, seeds, variant)");
    sub->add_option("--epochs", tune.epochs);
    sub->add_option("--lr", tune.lr);
    sub->add_option("--batch", tune.batch);
    sub->add_option("--k", tune.k);
    sub->add_option("--report", tune.report, "Write the full JSON report here");
  };
  auto* nsp = app.add_subcommand("nsp-tune", "Few-shot NSP-tuning over the seed suite");
  add_tune_options(nsp);
  nsp->add_option("--variant", tune.variant, "Tuning variant (default coupled_bce)");
  nsp->add_option("--save", tune.save, "Save the tuned checkpoint (single seed only)");
  auto* ft = app.add_subcommand("fine-tune", "Few-shot [CLS] classifier baseline");
  add_tune_options(ft);
  auto* abl = app.add_subcommand("ablate", "Run every tuning variant on identical splits");
  add_tune_options(abl);

  std::vector<std::string> results;
  auto* rep = app.add_subcommand("report", "Summarize results CSV files");
  rep->add_option("--data", results, "Results CSV files")->expected(1, -1);

  std::string scores;
  int bins = 10;
  auto* hist = app.add_subcommand("histogram", "Histogram of IsNext probabilities");
  hist->add_option("--scores", scores, "Scored-sample JSONL");
  hist->add_option("--data", data, "Examples to score with --checkpoint and --config");
  hist->add_option("--bins", bins);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_gen_corpus(g, task_dir, heldout);
    if (*pre) return cmd_pretrain(g, corpus, preset);
    if (*zs) return cmd_eval_zeroshot(g, data, dev, mode);
    if (*map) return cmd_map_samples(g, data, dev);
    if (*nsp) return cmd_tune(g, tune, ExperimentMethod::nsp_tune);
    if (*ft) return cmd_tune(g, tune, ExperimentMethod::fine_tune);
    if (*abl) return cmd_ablate(g, tune);
    if (*rep) return cmd_report(g, results);
    if (*hist) return cmd_histogram(g, scores, data, bins);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
