#ifndef DLAN_TENSOR_HPP_
#define DLAN_TENSOR_HPP_

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <vector>

#include "dlan/errors.hpp"

namespace dlan {

// Dense N-dimensional array of doubles, row-major, outermost extent first.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double value);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double& at(int i, int j, int k, int l) {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k, int l) const {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double value);

  // Binary form: rank as u32, each extent as u32, then the data as
  // little-endian 64-bit floats in row-major order.
  void write(std::ostream& out) const;
  static Tensor read(std::istream& in);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Value tensor paired with its gradient accumulator (same shape, starts zero).
struct GradPair {
  Tensor value;
  Tensor grad;

  GradPair() = default;
  explicit GradPair(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

int64_t shape_product(const std::vector<int>& shape);

}  // namespace dlan

#endif  // DLAN_TENSOR_HPP_
