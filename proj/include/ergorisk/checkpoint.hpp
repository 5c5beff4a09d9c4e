#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ergorisk/tensor.hpp"

namespace ergorisk {

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Binary layout, all integers little-endian u32:
//   "ERGK1"
//   repeated: name_len, name bytes, rank, dims[rank], f32 values[prod(dims)]
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);

// Throws IoError when the file cannot be read and SchemaError on a bad
// magic, truncated record or duplicate name.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

}  // namespace ergorisk
