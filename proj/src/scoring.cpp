#include "nspbert/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace nspbert {
namespace {

std::vector<EncodedPair> encode_candidates(const Tokenizer& tok, const std::vector<RenderedPair>& rendered,
                                           size_t max_len) {
  std::vector<EncodedPair> out;
  out.reserve(rendered.size());
  for (size_t i = 0; i < rendered.size(); ++i) {
    try {
      out.push_back(tok.encode_pair(rendered[i].a, rendered[i].b, max_len).trimmed());
    } catch (const EncodingError& e) {
      throw EncodingError("candidate " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void LabelDistribution::validate() const {
  if (labels.empty() || labels.size() != proportions.size()) {
    throw std::invalid_argument("label distribution: " + std::to_string(labels.size()) + " labels, " +
                                std::to_string(proportions.size()) + " proportions");
  }
  double total = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw std::invalid_argument("label distribution: negative or NaN proportion");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("label distribution: proportions sum to " + std::to_string(total));
  }
}

size_t LabelDistribution::majority() const {
  return static_cast<size_t>(std::max_element(proportions.begin(), proportions.end()) - proportions.begin());
}

LabelDistribution LabelDistribution::from_gold(const std::vector<std::string>& labels,
                                               const std::vector<std::string>& gold) {
  if (gold.empty()) throw std::invalid_argument("label distribution: no gold labels");
  LabelDistribution d{labels, std::vector<double>(labels.size(), 0.0)};
  for (const auto& g : gold) {
    auto it = std::find(labels.begin(), labels.end(), g);
    if (it == labels.end()) throw std::invalid_argument("label distribution: unknown label '" + g + "'");
    d.proportions[static_cast<size_t>(it - labels.begin())] += 1.0;
  }
  for (auto& p : d.proportions) p /= static_cast<double>(gold.size());
  return d;
}

std::vector<int> apportion(int seats, const std::vector<double>& proportions) {
  std::vector<int> out(proportions.size(), 0);
  std::vector<double> remainder(proportions.size(), 0.0);
  int given = 0;
  for (size_t i = 0; i < proportions.size(); ++i) {
    const double quota = seats * proportions[i];
    out[i] = static_cast<int>(std::floor(quota));
    remainder[i] = quota - out[i];
    given += out[i];
  }
  std::vector<size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
  for (size_t k = 0; given < seats; k = (k + 1) % order.size()) {
    ++out[order[k]];
    ++given;
  }
  return out;
}

std::vector<RenderedPair> render_candidates(const Example& ex, const TaskConfig& task) {
  std::vector<RenderedPair> out;
  switch (task.task_type) {
    case TaskType::single:
      for (const auto& label : task.verbalizer.labels()) {
        out.push_back(render_single(ex.text_a, task.prompt, task.verbalizer, label));
      }
      break;
    case TaskType::two_stage:
      for (const auto& [label, phrase] : task.verbalizer.entries()) {
        std::string description = phrase;
        for (const auto& [l, d] : ex.candidates) {
          if (l == label) description = d;
        }
        out.push_back(render_two_stage(ex.text_a, ex.mention.value_or(""), description, *task.two_stage));
      }
      break;
    case TaskType::pair:
      out.push_back(render_pair(ex.text_a, ex.text_b.value_or(""), task.pair_order));
      break;
  }
  return out;
}

ScoredSample score_candidates(const Model& model, const Tokenizer& tok, const Example& ex, const TaskConfig& task) {
  if (task.task_type == TaskType::pair) throw std::invalid_argument("score_candidates: pair task has one candidate");
  if (task.verbalizer.size() < 2) throw std::invalid_argument("score_candidates: need at least two candidates");
  const auto enc = encode_candidates(tok, render_candidates(ex, task), task.max_len);
  std::vector<const EncodedPair*> ptrs;
  for (const auto& e : enc) ptrs.push_back(&e);
  ScoredSample s;
  s.q = model.nsp_prob_isnext(ptrs);
  s.gold = ex.gold;
  return s;
}

ScoredSample score_pair(const Model& model, const Tokenizer& tok, const Example& ex, const TaskConfig& task) {
  if (!ex.text_b) throw std::invalid_argument("score_pair: example '" + ex.id + "' has no text_b");
  const auto rendered = render_pair(ex.text_a, *ex.text_b, task.pair_order);
  ScoredSample s;
  s.q = {model.nsp_prob_isnext(tok.encode_pair(rendered.a, rendered.b, task.max_len).trimmed())};
  s.gold = ex.gold;
  return s;
}

std::vector<ScoredSample> score_examples(const Model& model, const Tokenizer& tok, const std::vector<Example>& examples,
                                         const TaskConfig& task) {
  std::vector<ScoredSample> out;
  out.reserve(examples.size());
  if (task.task_type == TaskType::pair) {
    // Batch pair examples to amortize the forward pass.
    constexpr size_t kChunk = 64;
    for (size_t start = 0; start < examples.size(); start += kChunk) {
      const size_t end = std::min(examples.size(), start + kChunk);
      std::vector<EncodedPair> enc;
      for (size_t i = start; i < end; ++i) {
        if (!examples[i].text_b) throw std::invalid_argument("score_pair: example '" + examples[i].id + "' has no text_b");
        const auto r = render_pair(examples[i].text_a, *examples[i].text_b, task.pair_order);
        enc.push_back(tok.encode_pair(r.a, r.b, task.max_len).trimmed());
      }
      std::vector<const EncodedPair*> ptrs;
      for (const auto& e : enc) ptrs.push_back(&e);
      const auto q = model.nsp_prob_isnext(ptrs);
      for (size_t i = start; i < end; ++i) out.push_back({static_cast<int64_t>(i), {q[i - start]}, examples[i].gold});
    }
    return out;
  }
  for (size_t i = 0; i < examples.size(); ++i) {
    ScoredSample s = score_candidates(model, tok, examples[i], task);
    s.id = static_cast<int64_t>(i);
    out.push_back(std::move(s));
  }
  return out;
}

size_t predict_candidates_contrast(const std::vector<double>& q) {
  if (q.empty()) throw std::invalid_argument("predict_candidates_contrast: empty candidate set");
  size_t best = 0;
  for (size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return best;
}

size_t predict_candidates_contrast(const ScoredSample& s) { return predict_candidates_contrast(s.q); }

std::vector<size_t> samples_contrast(const std::vector<ScoredSample>& samples, SortOrder order,
                                     const LabelDistribution& d, int batch_size) {
  d.validate();
  if (batch_size < 0) throw std::invalid_argument("samples_contrast: negative batch size");
  for (const auto& s : samples) {
    if (s.q.empty()) throw std::invalid_argument("samples_contrast: sample " + std::to_string(s.id) + " has no q");
  }
  const size_t n = samples.size();
  const size_t bs = batch_size == 0 ? std::max<size_t>(n, 1) : static_cast<size_t>(batch_size);
  std::vector<size_t> out(n, d.majority());
  if (bs < d.labels.size()) return out;

  for (size_t start = 0; start < n; start += bs) {
    const size_t end = std::min(n, start + bs);
    std::vector<size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      const double qa = samples[a].q[0];
      const double qb = samples[b].q[0];
      if (qa != qb) return order == SortOrder::ascending ? qa < qb : qa > qb;
      return samples[a].id < samples[b].id;
    });
    const auto sizes = apportion(static_cast<int>(idx.size()), d.proportions);
    size_t k = 0;
    for (size_t label = 0; label < sizes.size(); ++label) {
      for (int c = 0; c < sizes[label]; ++c) out[idx[k++]] = label;
    }
  }
  return out;
}

const std::string& Thresholds::apply(double q) const {
  size_t k = 0;
  while (k < cuts.size() && q > cuts[k]) ++k;
  return labels[k];
}

Thresholds thresholds_from_dev(const std::vector<ScoredSample>& dev, const std::vector<std::string>& labels) {
  if (dev.empty()) throw std::invalid_argument("thresholds_from_dev: empty dev set");
  std::vector<double> sum(labels.size(), 0.0);
  std::vector<size_t> count(labels.size(), 0);
  std::vector<double> q;
  for (const auto& s : dev) {
    if (!s.gold) throw std::invalid_argument("thresholds_from_dev: sample " + std::to_string(s.id) + " has no gold");
    if (s.q.empty()) throw std::invalid_argument("thresholds_from_dev: sample " + std::to_string(s.id) + " has no q");
    auto it = std::find(labels.begin(), labels.end(), *s.gold);
    if (it == labels.end()) throw std::invalid_argument("thresholds_from_dev: unknown label '" + *s.gold + "'");
    const auto l = static_cast<size_t>(it - labels.begin());
    sum[l] += s.q[0];
    ++count[l];
    q.push_back(s.q[0]);
  }
  std::vector<size_t> present;
  for (size_t l = 0; l < labels.size(); ++l) {
    if (count[l] > 0) present.push_back(l);
  }
  if (present.size() < 2) throw std::invalid_argument("thresholds_from_dev: dev holds a single label");
  std::stable_sort(present.begin(), present.end(), [&](size_t a, size_t b) {
    return sum[a] / static_cast<double>(count[a]) < sum[b] / static_cast<double>(count[b]);
  });
  std::sort(q.begin(), q.end());
  Thresholds t;
  size_t cumulative = 0;
  for (size_t k = 0; k < present.size(); ++k) {
    t.labels.push_back(labels[present[k]]);
    if (k + 1 == present.size()) break;
    cumulative += count[present[k]];
    t.cuts.push_back(0.5 * (q[cumulative - 1] + q[cumulative]));
  }
  return t;
}

const std::string& apply_thresholds(const Thresholds& t, double q) { return t.apply(q); }

std::vector<double> pet_products(const Model& model, const Tokenizer& tok, const std::string& x,
                                 const TaskConfig& task) {
  std::vector<double> out;
  for (const auto& label : task.verbalizer.labels()) {
    const EncodedPair enc = render_pet(tok, x, task.prompt, task.verbalizer, label, task.max_len);
    const auto dist = model.mlm_distributions(enc);
    double product = 1.0;
    for (size_t k = 0; k < enc.mask_targets.size(); ++k) {
      product *= static_cast<double>(dist(static_cast<Index>(k), enc.mask_targets[k]));
    }
    out.push_back(product);
  }
  return out;
}

std::vector<double> pet_softmax(const std::vector<double>& products) {
  if (products.empty()) throw std::invalid_argument("pet_softmax: no label products");
  const double top = *std::max_element(products.begin(), products.end());
  std::vector<double> out(products.size());
  double total = 0.0;
  for (size_t i = 0; i < products.size(); ++i) total += out[i] = std::exp(products[i] - top);
  for (auto& p : out) p /= total;
  return out;
}

std::vector<double> pet_score(const Model& model, const Tokenizer& tok, const std::string& x, const TaskConfig& task) {
  return pet_softmax(pet_products(model, tok, x, task));
}

std::vector<size_t> probability_histogram(const std::vector<double>& q, int bins) {
  if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
  std::vector<size_t> counts(static_cast<size_t>(bins), 0);
  for (double v : q) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("histogram: probability " + std::to_string(v));
    const auto b = std::min(static_cast<size_t>(v * bins), counts.size() - 1);
    ++counts[b];
  }
  return counts;
}

std::vector<size_t> emit_probability_histogram(const std::vector<ScoredSample>& samples, int bins,
                                               const std::string& path) {
  std::vector<double> all;
  for (const auto& s : samples) all.insert(all.end(), s.q.begin(), s.q.end());
  const auto counts = probability_histogram(all, bins);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write histogram: " + path);
  out << "bin_lo,bin_hi,count\n";
  for (size_t b = 0; b < counts.size(); ++b) {
    out << static_cast<double>(b) / bins << ',' << static_cast<double>(b + 1) / bins << ',' << counts[b] << '\n';
  }
  return counts;
}

void write_scored_jsonl(const std::vector<ScoredSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scored samples: " + path);
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    if (s.q.size() == 1) {
      j["q"] = s.q[0];
    } else {
      j["q"] = s.q;
    }
    if (s.gold) j["gold"] = *s.gold;
    out << j.dump() << '\n';
  }
}

std::vector<ScoredSample> read_scored_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scored samples: " + path);
  std::vector<ScoredSample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ScoredSample s;
      s.id = j.at("id").get<int64_t>();
      if (j.at("q").is_array()) {
        s.q = j.at("q").get<std::vector<double>>();
      } else {
        s.q = {j.at("q").get<double>()};
      }
      for (double v : s.q) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError(path + " line " + std::to_string(line_no) + ": q outside [0, 1]");
      }
      if (j.contains("gold") && !j.at("gold").is_null()) s.gold = j.at("gold").get<std::string>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace nspbert
