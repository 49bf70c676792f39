#include "nspbert/tuning.hpp"

#include "nspbert/pretrain.hpp"
#include "nspbert/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace nspbert {
namespace {

constexpr size_t kEvalChunk = 64;  // sequences per inference forward pass

bool coupled(TuningVariant v) { return v != TuningVariant::decoupled_bce; }

TunedClassifier::Head head_for(TuningVariant v) {
  switch (v) {
    case TuningVariant::reinit_sigmoid_head: return TunedClassifier::Head::sigmoid;
    case TuningVariant::linear_head_softmax: return TunedClassifier::Head::label_linear;
    default: return TunedClassifier::Head::nsp;
  }
}

/// Input of the plain classifier: the example without any template.
EncodedPair bare_input(const Tokenizer& tok, const Example& ex, const TaskConfig& task) {
  if (task.task_type == TaskType::pair && ex.text_b) return tok.encode_pair(ex.text_a, *ex.text_b, task.max_len).trimmed();
  return tok.encode_single(ex.text_a, task.max_len).trimmed();
}

void check_finite(double loss, int epoch, size_t step) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("tuning: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(step));
  }
}

/// Runs the epoch loop shared by NSP-tuning and the baseline. `epoch_loss`
/// trains one epoch in place and returns its mean loss.
template <typename EpochFn>
TuningResult run_epochs(TunedClassifier start, const Tokenizer& tok, const std::vector<Example>& dev,
                        const TaskConfig& task, const TuningConfig& cfg, EpochFn&& epoch_loss) {
  TuningResult result{start.clone(), 0, {}};
  result.epochs.push_back({0, 0.0, start.accuracy(tok, dev, task)});
  TunedClassifier current = std::move(start);
  auto params = current.parameters();
  AdamState<float> state;
  AdamConfig adam;
  adam.lr = cfg.lr;
  double best_dev = -1.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss = epoch_loss(current, params, state, adam, epoch);
    const double dev_acc = current.accuracy(tok, dev, task);
    result.epochs.push_back({epoch, loss, dev_acc});
    if (dev_acc > best_dev) {
      best_dev = dev_acc;
      result.best = current.clone();
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace

std::string to_string(TuningVariant v) {
  switch (v) {
    case TuningVariant::coupled_bce: return "coupled_bce";
    case TuningVariant::decoupled_bce: return "decoupled_bce";
    case TuningVariant::coupled_softmax: return "coupled_softmax";
    case TuningVariant::reinit_sigmoid_head: return "reinit_sigmoid_head";
    case TuningVariant::linear_head_softmax: return "linear_head_softmax";
  }
  return "?";
}

const std::vector<TuningVariant>& all_variants() {
  static const std::vector<TuningVariant> v = {TuningVariant::coupled_bce, TuningVariant::decoupled_bce,
                                               TuningVariant::coupled_softmax, TuningVariant::reinit_sigmoid_head,
                                               TuningVariant::linear_head_softmax};
  return v;
}

TuningVariant parse_variant(const std::string& name) {
  for (auto v : all_variants()) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown tuning variant '" + name + "'");
}

void TuningConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("tuning config: epochs must be >= 0");
  if (batch < 1) throw std::invalid_argument("tuning config: batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("tuning config: learning rate must be > 0");
}

size_t matching_label(const TaskConfig& task) {
  return task.mapping.order == SortOrder::ascending ? task.verbalizer.size() - 1 : 0;
}

std::vector<NspTuningInstance> build_instances(const Tokenizer& tok, const Example& ex, size_t parent,
                                               const TaskConfig& task) {
  const size_t gold = task.verbalizer.index_of(ex.gold);
  std::vector<NspTuningInstance> out;
  if (task.task_type == TaskType::pair) {
    if (!ex.text_b) throw DataError("build_instances: pair example '" + ex.id + "' has no text_b");
    const auto r = render_pair(ex.text_a, *ex.text_b, task.pair_order);
    const size_t match = matching_label(task);
    out.push_back({tok.encode_pair(r.a, r.b, task.max_len).trimmed(), gold == match ? 1.0f : 0.0f, parent, match});
    return out;
  }
  const auto rendered = render_candidates(ex, task);
  for (size_t l = 0; l < rendered.size(); ++l) {
    out.push_back({tok.encode_pair(rendered[l].a, rendered[l].b, task.max_len).trimmed(), l == gold ? 1.0f : 0.0f,
                   parent, l});
  }
  return out;
}

std::vector<std::vector<size_t>> make_batches(const std::vector<NspTuningInstance>& instances, size_t parents,
                                              const TuningConfig& cfg, std::mt19937_64& rng) {
  std::vector<std::vector<size_t>> out;
  if (instances.empty()) return out;
  const size_t per_parent = instances.size() / parents;
  if (!coupled(cfg.variant)) {
    std::vector<size_t> order(instances.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const size_t bs = static_cast<size_t>(cfg.batch) * per_parent;
    for (size_t s = 0; s < order.size(); s += bs) {
      out.emplace_back(order.begin() + static_cast<long>(s), order.begin() + static_cast<long>(std::min(order.size(), s + bs)));
    }
    return out;
  }
  std::vector<std::vector<size_t>> by_parent(parents);
  for (size_t i = 0; i < instances.size(); ++i) by_parent[instances[i].parent].push_back(i);
  std::vector<size_t> order(parents);
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  for (size_t s = 0; s < parents; s += static_cast<size_t>(cfg.batch)) {
    std::vector<size_t> batch;
    for (size_t k = s; k < std::min(parents, s + static_cast<size_t>(cfg.batch)); ++k) {
      batch.insert(batch.end(), by_parent[order[k]].begin(), by_parent[order[k]].end());
    }
    out.push_back(std::move(batch));
  }
  return out;
}

TunedClassifier::TunedClassifier(Model model, Head head, size_t labels, uint64_t seed)
    : model_(std::move(model)), head_(head) {
  std::mt19937_64 rng(seed);
  const int h = model_.config().hidden;
  if (head_ == Head::sigmoid) {
    pooler_ = make_linear<float>(h, h, rng);
    out_ = make_linear<float>(1, h, rng);
  } else if (head_ == Head::label_linear || head_ == Head::cls_linear) {
    out_ = make_linear<float>(static_cast<int>(labels), h, rng);
  }
}

std::vector<Tensorf> TunedClassifier::parameters() const {
  auto out = model_.parameters();
  if (head_ == Head::sigmoid) {
    for (const auto& t : {pooler_.weight, pooler_.bias}) out.push_back(t);
  }
  if (head_ != Head::nsp) {
    for (const auto& t : {out_.weight, out_.bias}) out.push_back(t);
  }
  return out;
}

TunedClassifier TunedClassifier::clone() const {
  TunedClassifier c = *this;
  c.model_ = model_.clone();
  auto copy = [](const LinearParams<float>& p) -> LinearParams<float> {
    if (p.weight.size() == 0) return p;
    return {Tensorf::parameter(p.weight.value()), Tensorf::parameter(p.bias.value())};
  };
  c.pooler_ = copy(pooler_);
  c.out_ = copy(out_);
  return c;
}

Tensorf TunedClassifier::batch_loss(const std::vector<const NspTuningInstance*>& batch, TuningVariant variant,
                                    size_t labels) const {
  std::vector<const EncodedPair*> pairs;
  std::vector<float> targets;
  std::vector<int32_t> label_of;
  for (const auto* inst : batch) {
    pairs.push_back(&inst->pair);
    targets.push_back(inst->target);
    label_of.push_back(static_cast<int32_t>(inst->label));
  }
  if (head_ == Head::nsp) return nsp_head_loss(model_, pairs, targets, variant, labels);
  if (head_ == Head::cls_linear) throw std::logic_error("batch_loss: the [CLS] baseline trains through cls_loss");
  const auto enc = model_.encode(pairs);
  // Gold label per parent for the softmax losses; instances are parent-major.
  auto parent_gold = [&] {
    std::vector<int32_t> gold;
    for (size_t i = 0; i < batch.size(); i += labels) {
      for (size_t l = 0; l < labels; ++l) {
        if (batch[i + l]->target > 0.5f) gold.push_back(static_cast<int32_t>(l));
      }
    }
    return gold;
  };
  const auto rows = static_cast<Index>(batch.size());
  switch (head_) {
    case Head::sigmoid: {
      Tensorf h = select_rows(enc.hidden, enc.offsets);
      Tensorf p = sigmoid(linear(tanh_op(linear(h, pooler_)), out_));
      return binary_cross_entropy(p, std::span<const float>(targets));
    }
    case Head::label_linear: {
      Tensorf logits = linear(select_rows(enc.hidden, enc.offsets), out_);
      Tensorf own = reshape(pick(logits, label_of), rows / static_cast<Index>(labels), static_cast<Index>(labels));
      return cross_entropy(own, parent_gold());
    }
    case Head::nsp:
    case Head::cls_linear:
      break;
  }
  throw std::logic_error("batch_loss: unreachable head");
}

Tensorf TunedClassifier::cls_loss(const std::vector<const EncodedPair*>& inputs, const std::vector<int32_t>& gold) const {
  const auto enc = model_.encode(inputs);
  return cross_entropy(linear(select_rows(enc.hidden, enc.offsets), out_), gold);
}

std::vector<std::vector<double>> TunedClassifier::scores(const Tokenizer& tok, const std::vector<Example>& examples,
                                                         const TaskConfig& task) const {
  NoGradGuard guard;
  const size_t labels = task.verbalizer.size();
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());

  if (head_ == Head::cls_linear) {
    for (size_t s = 0; s < examples.size(); s += kEvalChunk) {
      std::vector<EncodedPair> enc;
      for (size_t i = s; i < std::min(examples.size(), s + kEvalChunk); ++i) enc.push_back(bare_input(tok, examples[i], task));
      std::vector<const EncodedPair*> ptrs;
      for (const auto& e : enc) ptrs.push_back(&e);
      const auto h = model_.encode(ptrs);
      const Matrix<float> p = softmax_rows_value(linear(select_rows(h.hidden, h.offsets), out_).value());
      for (Index r = 0; r < p.rows(); ++r) {
        out.emplace_back(p.row(r).data(), p.row(r).data() + p.cols());
      }
    }
    return out;
  }

  const bool pair = task.task_type == TaskType::pair;
  const size_t per_example = pair ? 1 : labels;
  const size_t chunk = std::max<size_t>(1, kEvalChunk / per_example);
  for (size_t s = 0; s < examples.size(); s += chunk) {
    std::vector<NspTuningInstance> inst;
    for (size_t i = s; i < std::min(examples.size(), s + chunk); ++i) {
      Example ex = examples[i];
      ex.gold = task.verbalizer.labels().front();  // gold is irrelevant for scoring
      auto built = build_instances(tok, ex, i, task);
      inst.insert(inst.end(), std::make_move_iterator(built.begin()), std::make_move_iterator(built.end()));
    }
    std::vector<const EncodedPair*> ptrs;
    std::vector<int32_t> label_of;
    for (const auto& x : inst) {
      ptrs.push_back(&x.pair);
      label_of.push_back(static_cast<int32_t>(x.label));
    }
    const auto enc = model_.encode(ptrs);
    std::vector<double> q(inst.size());
    switch (head_) {
      case Head::nsp: {
        const Matrix<float> p = softmax_rows_value(model_.nsp_logits(enc.hidden, enc.offsets).value());
        for (size_t k = 0; k < q.size(); ++k) q[k] = p(static_cast<Index>(k), kIsNext);
        break;
      }
      case Head::sigmoid: {
        const Matrix<float> p = sigmoid(linear(tanh_op(linear(select_rows(enc.hidden, enc.offsets), pooler_)), out_)).value();
        for (size_t k = 0; k < q.size(); ++k) q[k] = p(static_cast<Index>(k), 0);
        break;
      }
      case Head::label_linear: {
        const Matrix<float> z = pick(linear(select_rows(enc.hidden, enc.offsets), out_), label_of).value();
        for (size_t k = 0; k < q.size(); ++k) q[k] = z(static_cast<Index>(k), 0);
        break;
      }
      case Head::cls_linear:
        break;
    }
    for (size_t e = 0; e * per_example < q.size(); ++e) {
      std::vector<double> row(labels, 0.0);
      if (pair) {
        const size_t match = matching_label(task);
        const double v = head_ == Head::label_linear ? 1.0 / (1.0 + std::exp(-q[e])) : q[e];
        for (size_t l = 0; l < labels; ++l) row[l] = l == match ? v : (1.0 - v) / static_cast<double>(labels - 1);
      } else if (head_ == Head::label_linear) {
        const double top = *std::max_element(q.begin() + static_cast<long>(e * labels),
                                             q.begin() + static_cast<long>((e + 1) * labels));
        double total = 0.0;
        for (size_t l = 0; l < labels; ++l) total += row[l] = std::exp(q[e * labels + l] - top);
        for (auto& v : row) v /= total;
      } else {
        std::copy_n(q.begin() + static_cast<long>(e * labels), labels, row.begin());
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<size_t> TunedClassifier::predict(const Tokenizer& tok, const std::vector<Example>& examples,
                                             const TaskConfig& task) const {
  std::vector<size_t> out;
  for (const auto& row : scores(tok, examples, task)) out.push_back(predict_candidates_contrast(row));
  return out;
}

double TunedClassifier::accuracy(const Tokenizer& tok, const std::vector<Example>& examples,
                                 const TaskConfig& task) const {
  if (examples.empty()) return 0.0;
  const auto pred = predict(tok, examples, task);
  size_t correct = 0;
  for (size_t i = 0; i < examples.size(); ++i) correct += pred[i] == task.verbalizer.index_of(examples[i].gold) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TuningResult nsp_tune(const Model& model, const Tokenizer& tok, const std::vector<Example>& train,
                      const std::vector<Example>& dev, const TaskConfig& task, const TuningConfig& cfg) {
  cfg.validate();
  task.validate();
  if (task.task_type == TaskType::pair &&
      (cfg.variant == TuningVariant::coupled_softmax || cfg.variant == TuningVariant::linear_head_softmax)) {
    throw std::invalid_argument("nsp_tune: variant " + to_string(cfg.variant) +
                                " contrasts candidates and needs a single-sentence or two-stage task");
  }
  std::vector<NspTuningInstance> instances;
  for (size_t p = 0; p < train.size(); ++p) {
    auto built = build_instances(tok, train[p], p, task);
    instances.insert(instances.end(), std::make_move_iterator(built.begin()), std::make_move_iterator(built.end()));
  }
  const size_t per_parent = train.empty() ? 1 : instances.size() / train.size();
  std::mt19937_64 rng(cfg.seed);
  TunedClassifier start(model.clone(), head_for(cfg.variant), task.verbalizer.size(), cfg.seed ^ 0x5eedULL);

  return run_epochs(std::move(start), tok, dev, task, cfg,
                    [&](TunedClassifier& clf, std::vector<Tensorf>& params, AdamState<float>& state,
                        const AdamConfig& adam, int epoch) {
                      double total = 0.0;
                      size_t steps = 0;
                      for (const auto& batch : make_batches(instances, train.size(), cfg, rng)) {
                        std::vector<const NspTuningInstance*> ptrs;
                        for (size_t i : batch) ptrs.push_back(&instances[i]);
                        Tensorf loss = clf.batch_loss(ptrs, cfg.variant, per_parent);
                        check_finite(loss.item(), epoch, steps);
                        zero_grads(params);
                        backward(loss);
                        adam_step(params, state, adam);
                        total += loss.item();
                        ++steps;
                      }
                      return steps ? total / static_cast<double>(steps) : 0.0;
                    });
}

TuningResult fine_tune_baseline(const Model& model, const Tokenizer& tok, const std::vector<Example>& train,
                                const std::vector<Example>& dev, const TaskConfig& task, const TuningConfig& cfg) {
  cfg.validate();
  task.validate();
  std::vector<EncodedPair> inputs;
  std::vector<int32_t> gold;
  for (const auto& ex : train) {
    inputs.push_back(bare_input(tok, ex, task));
    gold.push_back(static_cast<int32_t>(task.verbalizer.index_of(ex.gold)));
  }
  std::mt19937_64 rng(cfg.seed);
  TunedClassifier start(model.clone(), TunedClassifier::Head::cls_linear, task.verbalizer.size(),
                        cfg.seed ^ 0x5eedULL);

  return run_epochs(std::move(start), tok, dev, task, cfg,
                    [&](TunedClassifier& clf, std::vector<Tensorf>& params, AdamState<float>& state,
                        const AdamConfig& adam, int epoch) {
                      std::vector<size_t> order(inputs.size());
                      std::iota(order.begin(), order.end(), size_t{0});
                      std::shuffle(order.begin(), order.end(), rng);
                      double total = 0.0;
                      size_t steps = 0;
                      const auto bs = static_cast<size_t>(cfg.batch);
                      for (size_t s = 0; s < order.size(); s += bs) {
                        std::vector<const EncodedPair*> ptrs;
                        std::vector<int32_t> targets;
                        for (size_t k = s; k < std::min(order.size(), s + bs); ++k) {
                          ptrs.push_back(&inputs[order[k]]);
                          targets.push_back(gold[order[k]]);
                        }
                        Tensorf loss = clf.cls_loss(ptrs, targets);
                        check_finite(loss.item(), epoch, steps);
                        zero_grads(params);
                        backward(loss);
                        adam_step(params, state, adam);
                        total += loss.item();
                        ++steps;
                      }
                      return steps ? total / static_cast<double>(steps) : 0.0;
                    });
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write results: " + path);
  out << "variant,seed,epoch,dev_acc,test_acc\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.epoch << ',' << r.dev_acc << ',' << r.test_acc << '\n';
  }
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("variant,seed,epoch,dev_acc,test_acc", 0) != 0) {
    throw DataError(path + ": missing results header");
  }
  std::vector<ResultRow> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 5) throw DataError(path + " line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      out.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw DataError(path + " line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

}  // namespace nspbert
