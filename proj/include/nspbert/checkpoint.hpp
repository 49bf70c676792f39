#pragma once

// Binary checkpoint format:
//   8 bytes   magic "NSPBERT1"
//   4 bytes   little-endian header length
//   header    UTF-8 JSON {format_version, config, tensors:[{name, shape, offset}], step, seed}
//   payload   float32 little-endian tensor data in table order

#include "nspbert/model.hpp"

#include <stdexcept>
#include <string>

namespace nspbert {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// Bad magic, malformed header, or truncated payload.
class FormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// A stored tensor does not match the shape the configuration implies.
class ShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[8] = {'N', 'S', 'P', 'B', 'E', 'R', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);

/// Loads a model built from the stored configuration.
Model load_checkpoint(const std::string& path);

/// Loads into a model of an expected configuration; shape differences raise
/// ShapeError naming the first offending tensor.
Model load_checkpoint(const std::string& path, const EncoderConfig& expected);

/// FNV-1a over the raw bytes of every parameter, in checkpoint order.
uint64_t parameter_fingerprint(const Model& model);
uint64_t parameter_fingerprint(const std::vector<Tensorf>& tensors);

}  // namespace nspbert
