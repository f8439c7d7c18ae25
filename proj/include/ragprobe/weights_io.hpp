#pragma once

#include <string>

#include "ragprobe/model.hpp"

namespace ragprobe {

// Tensor container format:
//   bytes 0-7   little-endian u64 N = header length
//   bytes 8..8+N JSON object: tensor name -> {"dtype":"F32","shape":[...],
//                "data_offsets":[begin,end]} (offsets into the data section)
//   remainder   contiguous raw little-endian f32 buffers
//
// load_weights verifies the container against the config schema (presence,
// shapes, finiteness) and throws DataError with a diagnostic naming the
// tensor on any violation.
WeightStore load_weights(const std::string& path, const ModelConfig& config);

// Reads the container without schema validation (tensors as stored).
WeightStore read_container(const std::string& path);

// Writes all tensors, sorted by name, data packed in that order.
// Deterministic: same store -> byte-identical file.
void save_weights(const std::string& path, const WeightStore& weights);

} // namespace ragprobe
