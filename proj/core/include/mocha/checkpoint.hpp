#pragma once

#include <string>

#include "mocha/model.hpp"
#include "mocha/training.hpp"

namespace mocha::checkpoint {

inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  int version = kFormatVersion;
  training::TrainConfig config;
  ParamStore params;
  training::AdamState adam;
};

// Arrays are stored as base64 little-endian float32 with a SHA-256 digest;
// the file is written to a temporary name and renamed into place.
std::string serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::string& text);

void save(const std::string& path, const Checkpoint& ck);
Checkpoint load(const std::string& path);

void save_model(const std::string& path, const Model& model,
                const training::TrainConfig& cfg, const training::AdamState& adam = {});
// Builds a model from the stored config and parameters.
Model load_model(const std::string& path);

}  // namespace mocha::checkpoint
