#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xvt/model.hpp"

namespace xvt {

template <typename T> struct AdamState;

// Versioned checkpoint: named parameter/state blobs plus optimizer moments,
// enough to resume a run bit-exactly at an epoch boundary.
struct CheckpointBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t epochs_done = 0;
  std::uint64_t adam_step = 0;
  std::vector<CheckpointBlob> blobs;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Model state (parameters + running stats) and, when given, Adam moments
// stored as adam.m.<param> / adam.v.<param>.
Checkpoint snapshot_model(Model<float>& model, const AdamState<float>* adam,
                          std::uint32_t epochs_done);

// Restores into an already-built model; name or shape mismatches raise
// ConfigError. When `adam` is given, its moments are restored too.
void restore_model(Model<float>& model, AdamState<float>* adam, const Checkpoint& ckpt);

}  // namespace xvt
