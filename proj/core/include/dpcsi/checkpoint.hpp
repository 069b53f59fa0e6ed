// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpcsi/kv.hpp"
#include "dpcsi/nn.hpp"
#include "dpcsi/tensor.hpp"

namespace dpcsi {

// On-disk snapshot: a text config block, named f32 tensors in write order,
// and the training step counter. Read of write is lossless.
struct CheckpointData {
  KvFile config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::uint64_t step = 0;

  const Tensor<float>* find(const std::string& name) const;
  void add(const std::string& name, Tensor<float> t);
};

void save_checkpoint(const CheckpointData& ckpt, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

// Copies every store entry (parameters and buffers) into the snapshot under
// `prefix + name`.
void store_to_checkpoint(const ParamStore<float>& store,
                         const std::string& prefix, CheckpointData& ckpt);

// Fills an already-built store from the snapshot; missing names or shape
// mismatches raise io_error.
void checkpoint_to_store(const CheckpointData& ckpt, const std::string& prefix,
                         ParamStore<float>& store);

}  // namespace dpcsi
