#include "nspbert/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nspbert {
namespace {

using nlohmann::json;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) | (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

json config_to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},       {"hidden", c.hidden},         {"heads", c.heads},
          {"vocab_size", c.vocab_size}, {"max_position", c.max_position}, {"type_vocab", c.type_vocab}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.heads = j.at("heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_position = j.at("max_position").get<int>();
  c.type_vocab = j.at("type_vocab").get<int>();
  return c;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Model load_impl(const std::string& path, const EncoderConfig* expected) {
  const std::string bytes = read_all(path);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12) throw FormatError("checkpoint " + path + ": truncated before header");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw FormatError("checkpoint " + path + ": bad magic bytes");
  const uint32_t header_len = get_u32(raw + 8);
  if (bytes.size() < 12 + static_cast<size_t>(header_len)) {
    throw FormatError("checkpoint " + path + ": truncated header");
  }
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + ": malformed header: " + e.what());
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionError("checkpoint " + path + ": format version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    }
    EncoderConfig cfg = config_from_json(header.at("config"));
    try {
      cfg.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError("checkpoint " + path + ": " + e.what());
    }
    Model model(expected ? *expected : cfg, header.at("seed").get<uint64_t>());
    model.set_step(header.at("step").get<long>());

    const auto& table = header.at("tensors");
    auto params = model.named_parameters();
    if (table.size() != params.size()) {
      throw ShapeError("checkpoint " + path + ": holds " + std::to_string(table.size()) + " tensors, model expects " +
                       std::to_string(params.size()));
    }
    const size_t payload = 12 + header_len;
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& entry = table[i];
      const auto name = entry.at("name").get<std::string>();
      auto& t = params[i];
      if (name != t.name) throw ShapeError("checkpoint " + path + ": tensor " + std::to_string(i) + " is '" + name +
                                           "', expected '" + t.name + "'");
      const auto shape = entry.at("shape").get<std::vector<Index>>();
      if (shape.size() != 2 || shape[0] != t.tensor.rows() || shape[1] != t.tensor.cols()) {
        std::string got = "(";
        for (size_t k = 0; k < shape.size(); ++k) got += (k ? ", " : "") + std::to_string(shape[k]);
        got += ")";
        throw ShapeError("checkpoint " + path + ": tensor '" + name + "' has shape " + got + ", model expects " +
                         detail::shape_str(t.tensor.rows(), t.tensor.cols()));
      }
      const size_t offset = entry.at("offset").get<size_t>();
      const size_t count = static_cast<size_t>(t.tensor.size());
      if (payload + offset + 4 * count > bytes.size()) {
        throw FormatError("checkpoint " + path + ": truncated data for tensor '" + name + "'");
      }
      auto& m = t.tensor.mutable_value();
      for (size_t k = 0; k < count; ++k) {
        m.data()[k] = std::bit_cast<float>(get_u32(raw + payload + offset + 4 * k));
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path + ": malformed header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  json tensors = json::array();
  size_t offset = 0;
  std::string payload;
  for (const auto& [name, t] : model.named_parameters()) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", offset}});
    for (Index k = 0; k < t.size(); ++k) put_u32(payload, std::bit_cast<uint32_t>(t.value().data()[k]));
    offset += 4 * static_cast<size_t>(t.size());
  }
  json header = {{"format_version", kCheckpointVersion},
                 {"config", config_to_json(model.config())},
                 {"tensors", tensors},
                 {"step", model.step()},
                 {"seed", model.seed()}};
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_u32(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  out += payload;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

Model load_checkpoint(const std::string& path) { return load_impl(path, nullptr); }

Model load_checkpoint(const std::string& path, const EncoderConfig& expected) { return load_impl(path, &expected); }

uint64_t parameter_fingerprint(const std::vector<Tensorf>& tensors) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& t : tensors) {
    for (Index k = 0; k < t.size(); ++k) {
      uint32_t bits = std::bit_cast<uint32_t>(t.value().data()[k]);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xFFu;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

uint64_t parameter_fingerprint(const Model& model) { return parameter_fingerprint(model.parameters()); }

}  // namespace nspbert
