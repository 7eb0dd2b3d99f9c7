#pragma once
// "TSLP" parameter container: magic, u32 version, u32 count, then per tensor
// u32 name length, UTF-8 name, u32 rank, u32 dims, f32 values. All integers
// and floats little-endian. Batch-norm running statistics are stored as
// "<layer>.running_mean" / "<layer>.running_var".

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "transsleep/nn.hpp"

namespace transsleep::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode(const std::vector<std::uint8_t>& bytes);

std::vector<NamedArray> collect(const nn::ModelParams& params);
// Copies every array into the matching parameter or statistic. Unknown names,
// missing names and shape mismatches throw FormatError.
void apply(const std::vector<NamedArray>& arrays, nn::ModelParams& params);

void save(const std::filesystem::path& path, const nn::ModelParams& params);
void load(const std::filesystem::path& path, nn::ModelParams& params);

}  // namespace transsleep::checkpoint
