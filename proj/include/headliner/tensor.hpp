#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "headliner/error.hpp"

namespace headliner {

// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix; nothing here needs more.
class Tensor {
public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != product(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor vector(std::vector<double> v) {
    std::vector<std::size_t> shape{v.size()};
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // scalar convenience accessor
  double value() const {
    if (numel() != 1) throw ContractError("value() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
  }

  std::string shape_string() const { return shape_string(shape_); }

private:
  static std::size_t product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace headliner
