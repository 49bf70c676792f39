#include "nspbert/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace nspbert {
namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {std::string(kPad), std::string(kUnk), std::string(kCls),
                                                    std::string(kSep), std::string(kMask)};
  return specials;
}

bool is_special_name(std::string_view w) {
  if (w == kEos) return true;
  for (const auto& s : special_tokens()) {
    if (w == s) return true;
  }
  return false;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  const auto& specials = special_tokens();
  const bool has_specials =
      tokens.size() >= specials.size() && std::equal(specials.begin(), specials.end(), tokens.begin());
  if (!has_specials) tokens_ = specials;
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw EncodingError("vocab: duplicate token '" + tokens_[i] + "' at id " + std::to_string(i));
    }
  }
}

Vocab Vocab::build(const std::vector<std::string>& corpus, size_t max_size, size_t min_freq) {
  if (corpus.empty()) throw EncodingError("build_vocab: empty corpus");
  std::map<std::string, size_t> counts;
  for (const auto& line : corpus) {
    for (auto& w : pre_tokenize(line)) {
      if (!is_special_name(w)) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, size_t>> ranked(counts.begin(), counts.end());
  // counts is already lexicographic, so a stable sort on frequency keeps the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> words;
  for (const auto& [w, c] : ranked) {
    if (special_tokens().size() + words.size() >= max_size) break;
    if (c >= min_freq) words.push_back(w);
  }
  return Vocab(words);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(tokens);
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

bool Vocab::contains(std::string_view token) const { return index_.find(std::string(token)) != index_.end(); }

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocab: id " + std::to_string(id) + " outside " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<std::string> pre_tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const unsigned char ch = static_cast<unsigned char>(text[i]);
    if (ch == '[') {
      const size_t close = text.find(']', i);
      if (close != std::string_view::npos) {
        const std::string_view candidate = text.substr(i, close - i + 1);
        if (is_special_name(candidate)) {
          flush();
          words.emplace_back(candidate);
          i = close;
          continue;
        }
      }
    }
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      words.emplace_back(1, static_cast<char>(ch));
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return words;
}

size_t EncodedPair::content_length() const {
  return static_cast<size_t>(std::count(attention.begin(), attention.end(), uint8_t{1}));
}

EncodedPair EncodedPair::trimmed() const {
  EncodedPair out = *this;
  const size_t n = content_length();
  out.ids.resize(n);
  out.segments.resize(n);
  out.attention.resize(n);
  return out;
}

void Tokenizer::word_pieces(const std::string& word, std::vector<TokenId>& out) const {
  if (is_special_name(word)) {
    out.push_back(word == kEos ? Vocab::kSepId : vocab_.id(word));
    return;
  }
  constexpr size_t kMaxWordChars = 100;
  if (word.size() > kMaxWordChars) {
    out.push_back(Vocab::kUnkId);
    return;
  }
  std::vector<TokenId> pieces;
  size_t start = 0;
  while (start < word.size()) {
    size_t end = word.size();
    TokenId found = -1;
    while (end > start) {
      std::string piece = word.substr(start, end - start);
      if (start > 0) piece = "##" + piece;
      if (vocab_.contains(piece)) {
        found = vocab_.id(piece);
        break;
      }
      --end;
    }
    if (found < 0) {
      out.push_back(Vocab::kUnkId);
      return;
    }
    pieces.push_back(found);
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : pre_tokenize(text)) word_pieces(w, ids);
  return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocab::kPadId) continue;
    const std::string& tok = vocab_.token(id);
    if (tok.size() > 2 && tok.compare(0, 2, "##") == 0 && !out.empty()) {
      out += tok.substr(2);
      continue;
    }
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

EncodedPair Tokenizer::encode_pair(std::string_view a, std::string_view b, size_t max_len) const {
  return encode_pair_ids(encode(a), encode(b), max_len);
}

EncodedPair Tokenizer::encode_pair_ids(std::vector<TokenId> a, const std::vector<TokenId>& b, size_t max_len) const {
  if (max_len < 8) throw EncodingError("encode_pair: max_len must be >= 8, got " + std::to_string(max_len));
  if (b.empty()) throw EncodingError("encode_pair: sentence B is empty");
  if (b.size() > max_len - 4) {
    throw EncodingError("encode_pair: sentence B has " + std::to_string(b.size()) + " tokens, budget is " +
                        std::to_string(max_len - 4));
  }
  const size_t a_budget = max_len - 3 - b.size();
  if (a.size() > a_budget) a.resize(a_budget);

  EncodedPair out;
  out.ids.reserve(max_len);
  out.ids.push_back(Vocab::kClsId);
  out.ids.insert(out.ids.end(), a.begin(), a.end());
  out.ids.push_back(Vocab::kSepId);
  const size_t first_segment = out.ids.size();
  out.ids.insert(out.ids.end(), b.begin(), b.end());
  out.ids.push_back(Vocab::kSepId);
  const size_t content = out.ids.size();
  out.ids.resize(max_len, Vocab::kPadId);
  out.segments.assign(max_len, 0);
  std::fill(out.segments.begin() + static_cast<long>(first_segment), out.segments.begin() + static_cast<long>(content),
            1);
  out.attention.assign(max_len, 0);
  std::fill(out.attention.begin(), out.attention.begin() + static_cast<long>(content), 1);
  return out;
}

EncodedPair Tokenizer::encode_single(std::string_view text, size_t max_len) const {
  if (max_len < 8) throw EncodingError("encode_single: max_len must be >= 8, got " + std::to_string(max_len));
  auto ids = encode(text);
  if (ids.size() > max_len - 2) ids.resize(max_len - 2);
  EncodedPair out;
  out.ids.push_back(Vocab::kClsId);
  out.ids.insert(out.ids.end(), ids.begin(), ids.end());
  out.ids.push_back(Vocab::kSepId);
  const size_t content = out.ids.size();
  out.ids.resize(max_len, Vocab::kPadId);
  out.segments.assign(max_len, 0);
  out.attention.assign(max_len, 0);
  std::fill(out.attention.begin(), out.attention.begin() + static_cast<long>(content), 1);
  return out;
}

EncodedPair insert_masks(const EncodedPair& pair, size_t span_start, size_t span_len) {
  if (span_len == 0) throw EncodingError("insert_masks: empty span");
  if (span_start + span_len > pair.ids.size()) {
    throw EncodingError("insert_masks: span [" + std::to_string(span_start) + ", " +
                        std::to_string(span_start + span_len) + ") outside sequence of " +
                        std::to_string(pair.ids.size()));
  }
  EncodedPair out = pair;
  for (size_t i = span_start; i < span_start + span_len; ++i) {
    if (Vocab::is_special(pair.ids[i])) {
      throw EncodingError("insert_masks: span overlaps special token at position " + std::to_string(i));
    }
    out.mask_positions.push_back(static_cast<int32_t>(i));
    out.mask_targets.push_back(pair.ids[i]);
    out.ids[i] = Vocab::kMaskId;
  }
  return out;
}

}  // namespace nspbert
