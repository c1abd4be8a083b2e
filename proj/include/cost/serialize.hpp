#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cost/tensor.hpp"

namespace cost {

/// Binary tensor file: magic "COST", u16 version, u8 dtype (0=f32, 1=f64),
/// u8 rank, u64 dims[rank], raw values. All fields little-endian.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline constexpr std::uint16_t kTensorFormatVersion = 1;

struct TensorFile {
  DType dtype = DType::F64;
  std::vector<i64> dims;
  std::vector<double> data;  // f32 payloads are widened on read

  i64 size() const {
    i64 s = 1;
    for (i64 d : dims) s *= d;
    return s;
  }
};

void write_tensor_file(const std::filesystem::path& path, std::span<const i64> dims,
                       std::span<const double> data, DType dtype = DType::F64);
TensorFile read_tensor_file(const std::filesystem::path& path);

// convenience wrappers for the domain types
void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_tensor(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const Matrix& m, DType dtype = DType::F64);
Matrix load_matrix(const std::filesystem::path& path);
void save_kernel(const std::filesystem::path& path, const ConvKernel& k, DType dtype = DType::F64);
ConvKernel load_kernel(const std::filesystem::path& path);
void save_vector(const std::filesystem::path& path, std::span<const double> v, DType dtype = DType::F64);
std::vector<double> load_vector(const std::filesystem::path& path);

}  // namespace cost
