#include "lrnet/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {
std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw ContractError("tensor extents must be positive");
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_))
    throw ContractError("tensor data length does not match shape " + shape_string());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape_); }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != data_.size())
    throw ContractError("reshape changes element count");
  return Tensor(std::move(shape), data_);
}

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!same_shape(o)) throw ContractError("shape mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  if (!same_shape(o)) throw ContractError("shape mismatch in -=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Tensor Tensor::operator-() const {
  Tensor t = *this;
  for (double& x : t.data_) x = -x;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ")";
  return os.str();
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(const Tensor& a) { return dot(a, a); }

Tensor matvec(const Tensor& w, const Tensor& x) {
  if (w.rank() != 2 || w.extent(1) != x.size())
    throw ContractError("matvec: shape mismatch " + w.shape_string() + " * " + x.shape_string());
  Tensor y({w.extent(0)});
  for (std::size_t i = 0; i < w.extent(0); ++i) {
    double s = 0;
    const double* row = w.data() + i * w.extent(1);
    for (std::size_t j = 0; j < w.extent(1); ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw ContractError("matmul: shape mismatch");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return c;
}

Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0))
    throw ContractError("matmul_at_b: shape mismatch");
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  Tensor c({m, n});
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      double* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return c;
}

}  // namespace lrnet
