#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "latact/acts.hpp"
#include "latact/transformer.hpp"
#include "latact/vocab.hpp"

namespace latact {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Unknown or unsupported format version.
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
/// Truncation, bad magic, or a manifest that does not match the payload.
struct CheckpointFormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};
/// Stored vocabulary hash does not match the stored vocabulary text.
struct CheckpointHashError : CheckpointError {
  using CheckpointError::CheckpointError;
};

/// Self-describing model container: format version, model configuration,
/// free-form metadata, the vocabulary (plus its hash), every named tensor
/// (manifest first, row-major little-endian f32 payload after), and the act
/// table snapshot.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  std::map<std::string, std::string> meta;
  Vocabulary vocab;
  std::vector<NamedTensor<float>> tensors;
  ActTable table;
};

void save_checkpoint(const std::string& path, Model<float>& model, const Vocabulary& vocab,
                     const ActTable& table, const std::map<std::string, std::string>& meta);

Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds a model from a loaded checkpoint; parameter names and shapes
/// must match the configuration exactly.
Model<float> model_from_checkpoint(const Checkpoint& ckpt, bool freeze_act_encoder = true);

}  // namespace latact
