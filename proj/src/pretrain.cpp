#include "nspbert/pretrain.hpp"

#include <cmath>

namespace nspbert {

double scheduled_lr(const PretrainConfig& cfg, int step) {
  if (cfg.warmup > 0 && step < cfg.warmup) return cfg.lr * static_cast<double>(step + 1) / cfg.warmup;
  if (!cfg.linear_decay) return cfg.lr;
  const int decay_steps = std::max(1, cfg.steps - cfg.warmup);
  const double frac = static_cast<double>(step - cfg.warmup) / decay_steps;
  return cfg.lr * std::max(0.0, 1.0 - frac);
}

void make_pretrain_batch(const Tokenizer& tok, const std::vector<NspPairExample>& pairs, const PretrainConfig& cfg,
                         std::mt19937_64& rng, std::vector<EncodedPair>& batch, std::vector<MaskedTokens>& masks,
                         std::vector<bool>& is_next) {
  batch.clear();
  masks.clear();
  is_next.clear();
  for (const auto& p : pairs) {
    EncodedPair enc = tok.encode_pair(p.a, p.b, static_cast<size_t>(cfg.max_len)).trimmed();
    MaskedTokens m = mask_tokens(enc.ids, cfg.mask_rate, tok.vocab().size(), rng);
    enc.ids = m.ids;
    batch.push_back(std::move(enc));
    masks.push_back(std::move(m));
    is_next.push_back(p.is_next);
  }
}

PretrainLoss pretrain_loss(const Model& model, const std::vector<EncodedPair>& batch,
                           const std::vector<MaskedTokens>& masks, const std::vector<bool>& is_next) {
  std::vector<const EncodedPair*> ptrs;
  for (const auto& p : batch) ptrs.push_back(&p);
  auto h = model.encode(ptrs);

  std::vector<int32_t> nsp_targets;
  for (bool b : is_next) nsp_targets.push_back(b ? kIsNext : kNotNext);
  Tensorf nsp_loss = cross_entropy(model.nsp_logits(h.hidden, h.offsets), nsp_targets);

  std::vector<int32_t> rows;
  std::vector<int32_t> targets;
  for (size_t i = 0; i < masks.size(); ++i) {
    for (size_t k = 0; k < masks[i].positions.size(); ++k) {
      rows.push_back(h.offsets[i] + masks[i].positions[k]);
      targets.push_back(masks[i].targets[k]);
    }
  }
  PretrainLoss out;
  out.nsp = nsp_loss.item();
  if (rows.empty()) {
    out.total = nsp_loss;
    return out;
  }
  Tensorf mlm_loss = cross_entropy(model.mlm_logits(h.hidden, rows), targets);
  out.mlm = mlm_loss.item();
  out.total = add(mlm_loss, nsp_loss);
  return out;
}

PretrainTrace pretrain(Model& model, const Tokenizer& tok, const std::vector<DocumentText>& docs,
                       const PretrainConfig& cfg, const StepCallback& on_step) {
  if (static_cast<int>(tok.vocab().size()) != model.config().vocab_size) {
    throw std::invalid_argument("pretrain: tokenizer vocab size " + std::to_string(tok.vocab().size()) +
                                " differs from model vocab size " + std::to_string(model.config().vocab_size));
  }
  std::mt19937_64 rng(cfg.seed);
  auto params = model.parameters();
  AdamState<float> state;
  PretrainTrace trace;
  std::vector<EncodedPair> batch;
  std::vector<MaskedTokens> masks;
  std::vector<bool> is_next;
  for (int step = 0; step < cfg.steps; ++step) {
    auto pairs = sample_nsp_pairs(docs, static_cast<size_t>(cfg.batch), rng);
    make_pretrain_batch(tok, pairs, cfg, rng, batch, masks, is_next);
    PretrainLoss loss = pretrain_loss(model, batch, masks, is_next);
    const double total = loss.total.item();
    if (!std::isfinite(total)) {
      throw DivergenceError("pretrain: non-finite loss at step " + std::to_string(step) + " (mlm " +
                            std::to_string(loss.mlm) + ", nsp " + std::to_string(loss.nsp) + ")");
    }
    zero_grads(params);
    backward(loss.total);
    AdamConfig adam;
    adam.lr = scheduled_lr(cfg, step);
    adam_step(params, state, adam);
    model.set_step(model.step() + 1);
    trace.total.push_back(total);
    trace.mlm.push_back(loss.mlm);
    trace.nsp.push_back(loss.nsp);
    if (on_step) on_step(step, total, loss.mlm, loss.nsp);
  }
  return trace;
}

double nsp_accuracy(const Model& model, const Tokenizer& tok, const std::vector<NspPairExample>& pairs,
                    size_t max_len) {
  if (pairs.empty()) return 0.0;
  constexpr size_t kChunk = 64;
  size_t correct = 0;
  for (size_t start = 0; start < pairs.size(); start += kChunk) {
    const size_t end = std::min(pairs.size(), start + kChunk);
    std::vector<EncodedPair> enc;
    for (size_t i = start; i < end; ++i) enc.push_back(tok.encode_pair(pairs[i].a, pairs[i].b, max_len).trimmed());
    std::vector<const EncodedPair*> ptrs;
    for (const auto& e : enc) ptrs.push_back(&e);
    const auto q = model.nsp_prob_isnext(ptrs);
    for (size_t i = start; i < end; ++i) correct += ((q[i - start] > 0.5) == pairs[i].is_next) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

double mlm_perplexity(const Model& model, const Tokenizer& tok, const std::vector<NspPairExample>& pairs,
                      size_t max_len, uint64_t seed) {
  NoGradGuard guard;
  std::mt19937_64 rng(seed);
  double nll = 0.0;
  size_t count = 0;
  for (const auto& p : pairs) {
    EncodedPair enc = tok.encode_pair(p.a, p.b, max_len).trimmed();
    MaskedTokens m = mask_tokens(enc.ids, 0.15, tok.vocab().size(), rng);
    if (m.positions.empty()) continue;
    // Score every selected position as a plain [MASK].
    for (auto pos : m.positions) enc.ids[static_cast<size_t>(pos)] = Vocab::kMaskId;
    Tensorf h = model.forward(enc);
    Tensorf loss = cross_entropy(model.mlm_logits(h, m.positions), m.targets);
    nll += loss.item() * static_cast<double>(m.positions.size());
    count += m.positions.size();
  }
  return count == 0 ? 1.0 : std::exp(nll / static_cast<double>(count));
}

}  // namespace nspbert
