#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sslada {

/// Dense row-major tensor of doubles. Networks only use rank 1 (vectors)
/// and rank 2 (batches / weight matrices).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading dimension of a rank-2 tensor (1 for vectors and scalars).
  std::size_t rows() const;
  /// Last dimension (1 for scalars).
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// Bitwise equality of shape and payload.
  bool bit_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `context` if any entry is NaN/Inf.
void require_finite(const Tensor& t, const std::string& context);

std::string shape_string(const std::vector<std::size_t>& shape);

/// out[n,m] = a[n,k] * b[k,m]
Tensor matmul(const Tensor& a, const Tensor& b);
/// out[k,m] = a[n,k]^T * b[n,m]
Tensor matmul_at_b(const Tensor& a, const Tensor& b);
/// out[n,k] = a[n,m] * b[k,m]^T
Tensor matmul_a_bt(const Tensor& a, const Tensor& b);

/// Stacks rank-2 tensors with equal column count along rows.
Tensor concat_rows(std::span<const Tensor> parts);
/// Rows [begin, end) of a rank-2 tensor.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);
/// Rows at the given indices, in order.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

/// Row-wise softmax of logits / temperature, numerically stabilized.
Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);

}  // namespace sslada
