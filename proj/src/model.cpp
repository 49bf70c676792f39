#include "nspbert/model.hpp"

#include <stdexcept>

namespace nspbert {

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("encoder config: layers must be >= 1");
  if (hidden < 1 || heads < 1) throw std::invalid_argument("encoder config: hidden and heads must be >= 1");
  if (hidden % heads != 0) {
    throw std::invalid_argument("encoder config: hidden " + std::to_string(hidden) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (max_position < 16) throw std::invalid_argument("encoder config: max_position must be >= 16");
  if (vocab_size <= Vocab::kNumSpecial) throw std::invalid_argument("encoder config: vocab_size too small");
  if (type_vocab != 2) throw std::invalid_argument("encoder config: type_vocab must be 2");
}

EncoderConfig EncoderConfig::preset(std::string_view name, int vocab_size) {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  if (name == "micro") {
    c.layers = 2, c.hidden = 64, c.heads = 2;
  } else if (name == "tiny") {
    c.layers = 3, c.hidden = 384, c.heads = 6;
  } else if (name == "small") {
    c.layers = 6, c.hidden = 512, c.heads = 8;
  } else if (name == "base") {
    c.layers = 12, c.hidden = 768, c.heads = 12;
  } else if (name == "large") {
    c.layers = 24, c.hidden = 1024, c.heads = 16;
  } else {
    throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
  }
  return c;
}

}  // namespace nspbert
