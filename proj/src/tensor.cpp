#include "dlan/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace dlan {

int64_t shape_product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw DimensionError("negative extent in tensor shape");
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
    throw DimensionError("tensor data length does not match shape product");
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double value) {
  for (double& v : data_) v = value;
}

namespace {

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("truncated tensor header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void Tensor::write(std::ostream& out) const {
  put_u32(out, static_cast<uint32_t>(shape_.size()));
  for (int e : shape_) put_u32(out, static_cast<uint32_t>(e));
  for (double v : data_) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

Tensor Tensor::read(std::istream& in) {
  uint32_t rank = get_u32(in);
  if (rank > 8) throw FormatError("tensor rank out of range");
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t e = get_u32(in);
    if (e > (1u << 30)) throw FormatError("tensor extent out of range");
    shape[i] = static_cast<int>(e);
  }
  Tensor t(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw FormatError("truncated tensor data");
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<uint64_t>(b[k]) << (8 * k);
    double v;
    std::memcpy(&v, &bits, 8);
    t[i] = v;
  }
  return t;
}

}  // namespace dlan
