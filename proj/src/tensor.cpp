#include "sslada/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "sslada/error.hpp"

namespace sslada {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(std::vector<std::size_t>{}, value); }

std::size_t Tensor::rows() const { return shape_.size() >= 2 ? shape_.front() : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

void require_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + context);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(n, m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_at_b");
  require_rank2(b, "matmul_at_b");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != n) {
    throw DimensionError("matmul_at_b: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(k, m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* orow = po + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_a_bt");
  require_rank2(b, "matmul_a_bt");
  const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
  if (b.cols() != m) {
    throw DimensionError("matmul_a_bt: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(n, k);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = pb + p * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += arow[j] * brow[j];
      po[i * k + p] = acc;
    }
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool have_cols = false;
  for (const Tensor& p : parts) {
    if (p.empty() && p.rank() != 2) continue;
    require_rank2(p, "concat_rows");
    if (!have_cols) {
      cols = p.cols();
      have_cols = true;
    } else if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch");
    }
    rows += p.rows();
  }
  Tensor out = Tensor::matrix(rows, cols);
  double* dst = out.data();
  for (const Tensor& p : parts) {
    if (p.empty()) continue;
    std::copy(p.data(), p.data() + p.size(), dst);
    dst += p.size();
  }
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  require_rank2(t, "slice_rows");
  if (begin > end || end > t.rows()) throw DimensionError("slice_rows: range out of bounds");
  Tensor out = Tensor::matrix(end - begin, t.cols());
  std::copy(t.data() + begin * t.cols(), t.data() + end * t.cols(), out.data());
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  require_rank2(t, "gather_rows");
  Tensor out = Tensor::matrix(indices.size(), t.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) throw DimensionError("gather_rows: index out of bounds");
    auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw NumericError("softmax temperature must be positive");
  Tensor out = logits;
  const std::size_t n = logits.rows();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    double mx = -INFINITY;
    for (double& v : r) {
      v /= temperature;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
  require_finite(out, "softmax");
  return out;
}

}  // namespace sslada
