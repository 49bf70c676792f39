#pragma once

// Mini BERT encoder with a masked-LM head and the pooled next-sentence head.

#include "nspbert/tensor.hpp"
#include "nspbert/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nspbert {

struct EncoderConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int vocab_size = 0;
  int max_position = 128;
  int type_vocab = 2;

  int intermediate() const { return 4 * hidden; }
  int head_dim() const { return hidden / heads; }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  /// Named size presets: micro, tiny, small, base, large.
  static EncoderConfig preset(std::string_view name, int vocab_size);

  bool operator==(const EncoderConfig&) const = default;
};

/// Index of each NSP class in the head's output.
inline constexpr int kIsNext = 0;
inline constexpr int kNotNext = 1;

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;  // out x in
  Tensor<Scalar> bias;    // 1 x out
};

template <typename Scalar>
struct NormParams {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;
};

template <typename Scalar>
struct EncoderLayerParams {
  LinearParams<Scalar> query, key, value, attn_out;
  NormParams<Scalar> attn_norm;
  LinearParams<Scalar> ff_in, ff_out;
  NormParams<Scalar> ff_norm;
};

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const LinearParams<Scalar>& p) {
  return add_row(matmul_nt(x, p.weight), p.bias);
}

/// Fills `m` from a normal(0, std) truncated at two standard deviations.
template <typename Scalar, typename Rng>
void fill_truncated_normal(Matrix<Scalar>& m, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < m.size(); ++i) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    m.data()[i] = static_cast<Scalar>(z * std);
  }
}

inline constexpr double kInitStd = 0.02;

template <typename Scalar>
LinearParams<Scalar> make_linear(int out, int in, std::mt19937_64& rng) {
  Matrix<Scalar> w(out, in);
  fill_truncated_normal(w, kInitStd, rng);
  return {Tensor<Scalar>::parameter(std::move(w)), Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, out))};
}

template <typename Scalar>
NormParams<Scalar> make_norm(int n) {
  return {Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(1, n)), Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, n))};
}

/// Stacked hidden states of a batch; sequence i occupies rows
/// [offsets[i], offsets[i] + lengths[i]).
template <typename Scalar>
struct BatchHidden {
  Tensor<Scalar> hidden;
  std::vector<int32_t> offsets;
  std::vector<int32_t> lengths;

  std::vector<int32_t> cls_rows() const { return offsets; }
};

template <typename Scalar>
class EncoderModel {
 public:
  static constexpr Scalar kLayerNormEps = Scalar(1e-12);
  static constexpr Scalar kMaskedScore = Scalar(-10000);

  EncoderModel() = default;

  EncoderModel(const EncoderConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    auto table = [&](int rows, int cols) {
      Matrix<Scalar> m(rows, cols);
      fill_truncated_normal(m, kInitStd, rng);
      return Tensor<Scalar>::parameter(std::move(m));
    };
    word_emb_ = table(cfg_.vocab_size, cfg_.hidden);
    pos_emb_ = table(cfg_.max_position, cfg_.hidden);
    type_emb_ = table(cfg_.type_vocab, cfg_.hidden);
    emb_norm_ = make_norm<Scalar>(cfg_.hidden);
    for (int l = 0; l < cfg_.layers; ++l) {
      EncoderLayerParams<Scalar> p;
      p.query = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
      p.key = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
      p.value = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
      p.attn_out = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
      p.attn_norm = make_norm<Scalar>(cfg_.hidden);
      p.ff_in = make_linear<Scalar>(cfg_.intermediate(), cfg_.hidden, rng);
      p.ff_out = make_linear<Scalar>(cfg_.hidden, cfg_.intermediate(), rng);
      p.ff_norm = make_norm<Scalar>(cfg_.hidden);
      layers_.push_back(std::move(p));
    }
    pooler_ = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
    nsp_ = make_linear<Scalar>(2, cfg_.hidden, rng);
    mlm_transform_ = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
    mlm_norm_ = make_norm<Scalar>(cfg_.hidden);
    mlm_bias_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, cfg_.vocab_size));
  }

  const EncoderConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }
  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  /// Every parameter in checkpoint order.
  std::vector<NamedTensor<Scalar>> named_parameters() const {
    std::vector<NamedTensor<Scalar>> out;
    auto add_linear = [&](const std::string& n, const LinearParams<Scalar>& p) {
      out.push_back({n + ".weight", p.weight});
      out.push_back({n + ".bias", p.bias});
    };
    auto add_norm = [&](const std::string& n, const NormParams<Scalar>& p) {
      out.push_back({n + ".gain", p.gain});
      out.push_back({n + ".bias", p.bias});
    };
    out.push_back({"embeddings.word", word_emb_});
    out.push_back({"embeddings.position", pos_emb_});
    out.push_back({"embeddings.token_type", type_emb_});
    add_norm("embeddings.norm", emb_norm_);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const std::string pre = "layer." + std::to_string(l) + ".";
      const auto& p = layers_[l];
      add_linear(pre + "attention.query", p.query);
      add_linear(pre + "attention.key", p.key);
      add_linear(pre + "attention.value", p.value);
      add_linear(pre + "attention.output", p.attn_out);
      add_norm(pre + "attention.norm", p.attn_norm);
      add_linear(pre + "ffn.in", p.ff_in);
      add_linear(pre + "ffn.out", p.ff_out);
      add_norm(pre + "ffn.norm", p.ff_norm);
    }
    add_linear("nsp.pooler", pooler_);
    add_linear("nsp.classifier", nsp_);
    add_linear("mlm.transform", mlm_transform_);
    add_norm("mlm.norm", mlm_norm_);
    out.push_back({"mlm.output_bias", mlm_bias_});
    return out;
  }

  std::vector<Tensor<Scalar>> parameters() const {
    std::vector<Tensor<Scalar>> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
  }

  /// Parameters of the pooler and the two-way classifier only.
  std::vector<Tensor<Scalar>> nsp_head_parameters() const {
    return {pooler_.weight, pooler_.bias, nsp_.weight, nsp_.bias};
  }

  /// Deep copy; the result shares no storage with this model.
  EncoderModel clone() const { return cast<Scalar>(); }

  /// Deep copy converted to another scalar type.
  template <typename Other>
  EncoderModel<Other> cast() const {
    EncoderModel<Other> out(cfg_, seed_);
    out.set_step(step_);
    auto src = named_parameters();
    auto dst = out.named_parameters();
    for (size_t i = 0; i < src.size(); ++i) {
      dst[i].tensor.mutable_value() = src[i].tensor.value().template cast<Other>();
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  /// Replaces the pooler and classifier with freshly initialized weights.
  void reinit_nsp_head(uint64_t seed) {
    std::mt19937_64 rng(seed);
    pooler_ = make_linear<Scalar>(cfg_.hidden, cfg_.hidden, rng);
    nsp_ = make_linear<Scalar>(2, cfg_.hidden, rng);
  }

  /// Hidden states for a batch of sequences, each kept at its own length.
  /// Pad positions are excluded from attention as keys.
  BatchHidden<Scalar> encode(std::span<const EncodedPair* const> batch) const {
    BatchHidden<Scalar> out;
    std::vector<int32_t> ids, positions, segments;
    int32_t offset = 0;
    for (const EncodedPair* p : batch) {
      const auto n = static_cast<int32_t>(p->ids.size());
      if (n > cfg_.max_position) {
        throw DimensionError("encoder: sequence of " + std::to_string(n) + " tokens exceeds max_position " +
                             std::to_string(cfg_.max_position));
      }
      if (n == 0) throw DimensionError("encoder: empty sequence");
      out.offsets.push_back(offset);
      out.lengths.push_back(n);
      offset += n;
      ids.insert(ids.end(), p->ids.begin(), p->ids.end());
      for (int32_t i = 0; i < n; ++i) positions.push_back(i);
      for (int32_t s : p->segments) {
        if (s < 0 || s >= cfg_.type_vocab) throw IndexError("encoder: segment id " + std::to_string(s));
      }
      segments.insert(segments.end(), p->segments.begin(), p->segments.end());
    }
    Tensor<Scalar> x = add(add(embedding_lookup(word_emb_, ids), embedding_lookup(pos_emb_, positions)),
                           embedding_lookup(type_emb_, segments));
    x = layer_norm(x, emb_norm_.gain, emb_norm_.bias, kLayerNormEps);

    const int d = cfg_.head_dim();
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
    for (const auto& layer : layers_) {
      Tensor<Scalar> q = scale(linear(x, layer.query), inv_sqrt_d);
      Tensor<Scalar> k = linear(x, layer.key);
      Tensor<Scalar> v = linear(x, layer.value);
      std::vector<Tensor<Scalar>> contexts;
      contexts.reserve(batch.size());
      for (size_t s = 0; s < batch.size(); ++s) {
        const Index o = out.offsets[s];
        const Index n = out.lengths[s];
        const auto& attention = batch[s]->attention;
        const bool padded = std::find(attention.begin(), attention.end(), uint8_t{0}) != attention.end();
        Tensor<Scalar> key_mask;
        if (padded) {
          Matrix<Scalar> m(1, n);
          for (Index j = 0; j < n; ++j) m(0, j) = attention[static_cast<size_t>(j)] ? Scalar(0) : kMaskedScore;
          key_mask = Tensor<Scalar>::constant(std::move(m));
        }
        Tensor<Scalar> qs = slice_rows(q, o, n);
        Tensor<Scalar> ks = slice_rows(k, o, n);
        Tensor<Scalar> vs = slice_rows(v, o, n);
        std::vector<Tensor<Scalar>> heads;
        heads.reserve(static_cast<size_t>(cfg_.heads));
        for (int h = 0; h < cfg_.heads; ++h) {
          Tensor<Scalar> qh = cfg_.heads == 1 ? qs : slice_cols(qs, h * d, d);
          Tensor<Scalar> kh = cfg_.heads == 1 ? ks : slice_cols(ks, h * d, d);
          Tensor<Scalar> vh = cfg_.heads == 1 ? vs : slice_cols(vs, h * d, d);
          Tensor<Scalar> scores = matmul_nt(qh, kh);
          if (padded) scores = add_row(scores, key_mask);
          heads.push_back(matmul(softmax_rows(scores), vh));
        }
        contexts.push_back(heads.size() == 1 ? heads.front() : concat_cols(heads));
      }
      Tensor<Scalar> ctx = contexts.size() == 1 ? contexts.front() : concat_rows(contexts);
      x = layer_norm(add(x, linear(ctx, layer.attn_out)), layer.attn_norm.gain, layer.attn_norm.bias, kLayerNormEps);
      Tensor<Scalar> ff = linear(gelu(linear(x, layer.ff_in)), layer.ff_out);
      x = layer_norm(add(x, ff), layer.ff_norm.gain, layer.ff_norm.bias, kLayerNormEps);
    }
    out.hidden = x;
    return out;
  }

  /// Hidden states (length x H) for one sequence.
  Tensor<Scalar> forward(const EncodedPair& pair) const {
    const EncodedPair* one[] = {&pair};
    return encode(one).hidden;
  }

  /// tanh(W h + b) for the given rows of `hidden`.
  Tensor<Scalar> pooled(const Tensor<Scalar>& hidden, std::span<const int32_t> rows) const {
    return tanh_op(linear(select_rows(hidden, rows), pooler_));
  }

  /// Two-way (IsNext, NotNext) logits for the given [CLS] rows.
  Tensor<Scalar> nsp_logits(const Tensor<Scalar>& hidden, std::span<const int32_t> cls_rows) const {
    return linear(pooled(hidden, cls_rows), nsp_);
  }

  /// Vocabulary logits at the given rows. The output projection is the
  /// word embedding table.
  Tensor<Scalar> mlm_logits(const Tensor<Scalar>& hidden, std::span<const int32_t> rows) const {
    Tensor<Scalar> t = gelu(linear(select_rows(hidden, rows), mlm_transform_));
    t = layer_norm(t, mlm_norm_.gain, mlm_norm_.bias, kLayerNormEps);
    return add_row(matmul_nt(t, word_emb_), mlm_bias_);
  }

  /// q(IsNext) for each sequence of a batch.
  std::vector<double> nsp_prob_isnext(std::span<const EncodedPair* const> batch) const {
    NoGradGuard guard;
    auto h = encode(batch);
    Matrix<Scalar> probs = softmax_rows_value(nsp_logits(h.hidden, h.offsets).value());
    std::vector<double> out(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) out[i] = probs(static_cast<Index>(i), kIsNext);
    return out;
  }

  double nsp_prob_isnext(const EncodedPair& pair) const {
    const EncodedPair* one[] = {&pair};
    return nsp_prob_isnext(one).front();
  }

  /// Both NSP probabilities (IsNext, NotNext) for one sequence.
  std::array<double, 2> nsp_probs(const EncodedPair& pair) const {
    NoGradGuard guard;
    Tensor<Scalar> h = forward(pair);
    const int32_t cls = 0;
    Matrix<Scalar> p = softmax_rows_value(nsp_logits(h, std::span<const int32_t>(&cls, 1)).value());
    return {static_cast<double>(p(0, kIsNext)), static_cast<double>(p(0, kNotNext))};
  }

  /// Softmax over the vocabulary at every recorded mask position
  /// (rows follow pair.mask_positions).
  Matrix<Scalar> mlm_distributions(const EncodedPair& pair) const {
    NoGradGuard guard;
    Tensor<Scalar> h = forward(pair);
    return softmax_rows_value(mlm_logits(h, pair.mask_positions).value());
  }

  /// Probability of `token` at a masked position.
  double mlm_token_prob(const EncodedPair& pair, int32_t position, TokenId token) const {
    auto it = std::find(pair.mask_positions.begin(), pair.mask_positions.end(), position);
    if (it == pair.mask_positions.end()) {
      throw ContractError("mlm_token_prob: position " + std::to_string(position) + " is not masked");
    }
    if (token < 0 || token >= cfg_.vocab_size) throw IndexError("mlm_token_prob: token " + std::to_string(token));
    const Matrix<Scalar> dist = mlm_distributions(pair);
    return dist(static_cast<Index>(it - pair.mask_positions.begin()), token);
  }

 private:
  EncoderConfig cfg_;
  uint64_t seed_ = 0;
  long step_ = 0;
  Tensor<Scalar> word_emb_, pos_emb_, type_emb_;
  NormParams<Scalar> emb_norm_;
  std::vector<EncoderLayerParams<Scalar>> layers_;
  LinearParams<Scalar> pooler_, nsp_;
  LinearParams<Scalar> mlm_transform_;
  NormParams<Scalar> mlm_norm_;
  Tensor<Scalar> mlm_bias_;
};

using Model = EncoderModel<float>;

}  // namespace nspbert
