#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lrnet {

/// Dense row-major tensor of doubles. The one value carrier used for
/// inputs, parameters and noise throughout the library.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor zeros_like(const Tensor& t);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major offsets for the common ranks.
  std::size_t idx(std::size_t i, std::size_t j) const { return i * shape_[1] + j; }
  std::size_t idx(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }
  double& at(std::size_t i, std::size_t j) { return data_[idx(i, j)]; }
  double at(std::size_t i, std::size_t j) const { return data_[idx(i, j)]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data_[idx(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data_[idx(i, j, k)]; }

  Tensor reshaped(std::vector<std::size_t> shape) const;

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);
  Tensor operator-() const;

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_string() const;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);

/// y = W x for W (m×n), x (n).
Tensor matvec(const Tensor& w, const Tensor& x);
/// C = A B for A (m×k), B (k×n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A^T B for A (k×m), B (k×n).
Tensor matmul_at_b(const Tensor& a, const Tensor& b);

}  // namespace lrnet
