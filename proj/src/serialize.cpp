#include "cost/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "the COST tensor format is little-endian; big-endian hosts are unsupported");

namespace cost {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'S', 'T'};

void io_fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("tensor file " + path.string() + ": " + what);
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, std::span<const i64> dims,
                       std::span<const double> data, DType dtype) {
  i64 expect = 1;
  for (i64 d : dims) {
    check(d >= 1, "write_tensor_file: dims must be >= 1");
    expect *= d;
  }
  check(expect == static_cast<i64>(data.size()), "write_tensor_file: dims do not match data length");
  check(dims.size() <= 255, "write_tensor_file: rank too large");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) io_fail(path, "cannot open for writing");
  os.write(kMagic, 4);
  write_pod<std::uint16_t>(os, kTensorFormatVersion);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(dims.size()));
  for (i64 d : dims) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  if (dtype == DType::F64) {
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  } else {
    std::vector<float> f(data.size());
    for (size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  if (!os) io_fail(path, "write failed");
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) io_fail(path, "cannot open");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) io_fail(path, "bad magic");
  auto version = read_pod<std::uint16_t>(is);
  if (version != kTensorFormatVersion) io_fail(path, "unsupported version " + std::to_string(version));
  auto dtype = read_pod<std::uint8_t>(is);
  if (dtype > 1) io_fail(path, "unknown dtype tag " + std::to_string(dtype));
  auto rank = read_pod<std::uint8_t>(is);

  TensorFile tf;
  tf.dtype = static_cast<DType>(dtype);
  tf.dims.resize(rank);
  for (auto& d : tf.dims) {
    d = static_cast<i64>(read_pod<std::uint64_t>(is));
    if (d < 1) io_fail(path, "non-positive dimension");
  }
  if (!is) io_fail(path, "truncated header");

  const size_t count = static_cast<size_t>(tf.size());
  tf.data.resize(count);
  if (tf.dtype == DType::F64) {
    is.read(reinterpret_cast<char*>(tf.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    std::vector<float> f(count);
    is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * sizeof(float)));
    for (size_t i = 0; i < count; ++i) tf.data[i] = static_cast<double>(f[i]);
  }
  if (!is) io_fail(path, "truncated payload");
  return tf;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  const i64 dims[5] = {t.shape.n, t.shape.t, t.shape.h, t.shape.w, t.shape.c};
  write_tensor_file(path, dims, t.data, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 5) io_fail(path, "expected rank-5 tensor");
  Tensor t(Shape5{tf.dims[0], tf.dims[1], tf.dims[2], tf.dims[3], tf.dims[4]});
  t.data = std::move(tf.data);
  return t;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m, DType dtype) {
  const i64 dims[2] = {m.rows, m.cols};
  write_tensor_file(path, dims, m.data, dtype);
}

Matrix load_matrix(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 2) io_fail(path, "expected rank-2 tensor");
  Matrix m(tf.dims[0], tf.dims[1]);
  m.data = std::move(tf.data);
  return m;
}

void save_kernel(const std::filesystem::path& path, const ConvKernel& k, DType dtype) {
  const i64 dims[5] = {k.c_out, k.c_in, k.kt, k.kh, k.kw};
  write_tensor_file(path, dims, k.data, dtype);
}

ConvKernel load_kernel(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 5) io_fail(path, "expected rank-5 kernel");
  ConvKernel k(tf.dims[0], tf.dims[1], tf.dims[2], tf.dims[3], tf.dims[4]);
  k.data = std::move(tf.data);
  return k;
}

void save_vector(const std::filesystem::path& path, std::span<const double> v, DType dtype) {
  const i64 dims[1] = {static_cast<i64>(v.size())};
  write_tensor_file(path, dims, v, dtype);
}

std::vector<double> load_vector(const std::filesystem::path& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 1) io_fail(path, "expected rank-1 tensor");
  return std::move(tf.data);
}

}  // namespace cost
