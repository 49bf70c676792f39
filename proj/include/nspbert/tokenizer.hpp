#pragma once

// WordPiece tokenization and sentence-pair encoding.

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nspbert {

using TokenId = int32_t;

/// Raised for inputs that cannot be encoded under the layout rules
/// (e.g. a prompt that does not fit).
class EncodingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
/// Written in templates; encoded as [SEP].
inline constexpr std::string_view kEos = "[EOS]";

class Vocab {
 public:
  static constexpr TokenId kPadId = 0;
  static constexpr TokenId kUnkId = 1;
  static constexpr TokenId kClsId = 2;
  static constexpr TokenId kSepId = 3;
  static constexpr TokenId kMaskId = 4;
  static constexpr TokenId kNumSpecial = 5;

  /// Vocabulary holding only the special tokens.
  Vocab();
  /// Specials are prepended when `tokens` does not already start with them.
  explicit Vocab(const std::vector<std::string>& tokens);

  /// Specials first, then words ordered by descending frequency with
  /// lexicographic tie-break, keeping those seen at least `min_freq` times.
  static Vocab build(const std::vector<std::string>& corpus, size_t max_size, size_t min_freq = 1);

  /// One token per line; the line number is the id.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// kUnkId when absent.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecial; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases, splits on whitespace, and emits each ASCII punctuation
/// character as its own word. Bracketed special-token names ([SEP], [MASK],
/// [EOS], ...) survive as single words.
std::vector<std::string> pre_tokenize(std::string_view text);

/// Model input for one sequence. Layout for pairs:
/// [CLS] A [SEP] B [SEP] [PAD]...
struct EncodedPair {
  std::vector<TokenId> ids;
  std::vector<TokenId> segments;
  std::vector<uint8_t> attention;
  std::vector<int32_t> mask_positions;
  /// Original ids at mask_positions, in the same order.
  std::vector<TokenId> mask_targets;

  size_t length() const { return ids.size(); }
  /// Count of non-pad positions.
  size_t content_length() const;
  /// Copy without trailing pads.
  EncodedPair trimmed() const;
};

class Tokenizer {
 public:
  explicit Tokenizer(Vocab vocab) : vocab_(std::move(vocab)) {}

  const Vocab& vocab() const { return vocab_; }

  /// Greedy longest-match WordPiece with "##" continuations. A word with no
  /// complete segmentation becomes a single [UNK].
  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins tokens with single spaces, gluing "##" pieces onto their prefix.
  /// Pads are skipped.
  std::string decode(const std::vector<TokenId>& ids) const;

  /// Encodes a sentence pair padded to max_len. Overlong input is cut from the
  /// end of A; B (the prompt side) is never cut and must fit in max_len - 4.
  EncodedPair encode_pair(std::string_view a, std::string_view b, size_t max_len) const;
  /// Same as encode_pair on pre-encoded ids.
  EncodedPair encode_pair_ids(std::vector<TokenId> a, const std::vector<TokenId>& b, size_t max_len) const;
  /// [CLS] text [SEP] padded to max_len; over-length text is cut from the end.
  EncodedPair encode_single(std::string_view text, size_t max_len) const;

 private:
  void word_pieces(const std::string& word, std::vector<TokenId>& out) const;

  Vocab vocab_;
};

/// Replaces ids[start, start + len) with [MASK] and records positions and the
/// original ids. The span may not touch special tokens or padding.
EncodedPair insert_masks(const EncodedPair& pair, size_t span_start, size_t span_len);

}  // namespace nspbert
