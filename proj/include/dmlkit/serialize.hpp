#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace dmlkit {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Single-tensor record, little-endian binary:
//   magic "DMLT", version u32, ndim u32, dims u64 x ndim, f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

// Checkpoint container: u64 manifest length, JSON manifest mapping tensor
// name -> byte offset into the record region, then the records sorted by
// name. Names must be unique.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace dmlkit
