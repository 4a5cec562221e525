#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfrobust {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatMap = Eigen::Map<MatX<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatX<S>>;
template <typename S>
using VecMap = Eigen::Map<VecX<S>>;
template <typename S>
using ConstVecMap = Eigen::Map<const VecX<S>>;

namespace detail {

template <typename... Ts>
std::string strcat(const Ts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace detail

// Numeric failure during evaluation (NaN/Inf loss, divergent training).
// `where` names the layer or head that produced the first non-finite value.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& where, const std::string& what)
      : std::runtime_error("numeric failure at " + where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

// Dense row-major n-d array, the universal value carrier. Scalar is float for
// training and double for verification-grade oracle checks.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), S(0));
  }

  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
      throw std::invalid_argument(detail::strcat(
          "Tensor: data length ", data_.size(), " does not match shape ",
          detail::shape_string(shape_)));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& raw() { return data_; }
  const std::vector<S>& raw() const { return data_; }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  S operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  S& operator()(int i, int j) { return data_[flat(i, j)]; }
  S operator()(int i, int j) const { return data_[flat(i, j)]; }
  S& operator()(int i, int j, int k) { return data_[flat(i, j, k)]; }
  S operator()(int i, int j, int k) const { return data_[flat(i, j, k)]; }
  S& operator()(int i, int j, int k, int l) { return data_[flat(i, j, k, l)]; }
  S operator()(int i, int j, int k, int l) const { return data_[flat(i, j, k, l)]; }

  // Views the buffer as a rows x cols row-major matrix; total size must agree.
  MatMap<S> as_matrix(std::int64_t rows, std::int64_t cols) {
    require_view(rows * cols);
    return MatMap<S>(data_.data(), rows, cols);
  }
  ConstMatMap<S> as_matrix(std::int64_t rows, std::int64_t cols) const {
    require_view(rows * cols);
    return ConstMatMap<S>(data_.data(), rows, cols);
  }
  VecMap<S> as_vector() { return VecMap<S>(data_.data(), size()); }
  ConstVecMap<S> as_vector() const { return ConstVecMap<S>(data_.data(), size()); }

  Tensor reshaped(std::vector<int> shape) const {
    if (checked_numel(shape) != size())
      throw std::invalid_argument(detail::strcat(
          "Tensor::reshaped: cannot view ", detail::shape_string(shape_), " as ",
          detail::shape_string(shape)));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Ingestion-boundary check: loaders and checkpoint reads reject NaN/Inf.
  void require_finite(const std::string& where) const {
    for (std::int64_t i = 0; i < size(); ++i) {
      if (!std::isfinite(static_cast<double>(data_[i])))
        throw NumericError(where, detail::strcat("non-finite entry at flat index ", i));
    }
  }

  static std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d <= 0)
        throw std::invalid_argument(detail::strcat(
            "Tensor: non-positive dimension in shape ", detail::shape_string(shape)));
      n *= d;
    }
    return n;
  }

 private:
  std::size_t flat(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t flat(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t flat(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }
  void require_view(std::int64_t n) const {
    if (n != size())
      throw std::invalid_argument(detail::strcat(
          "Tensor: matrix view of ", n, " entries over buffer of ", size()));
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

template <typename S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Contiguous slice along the leading axis.
template <typename S>
Tensor<S> take_rows(const Tensor<S>& t, int start, int count) {
  if (t.rank() < 1 || start < 0 || count <= 0 || start + count > t.dim(0))
    throw std::out_of_range(detail::strcat("take_rows: [", start, ",", start + count,
                                           ") out of ", detail::shape_string(t.shape())));
  std::vector<int> shape = t.shape();
  shape[0] = count;
  Tensor<S> out(shape);
  const std::int64_t row = t.size() / t.dim(0);
  std::copy(t.data() + start * row, t.data() + (start + count) * row, out.data());
  return out;
}

// Gather along the leading axis; indices may repeat.
template <typename S>
Tensor<S> take_rows(const Tensor<S>& t, const std::vector<int>& rows) {
  if (t.rank() < 1 || rows.empty())
    throw std::invalid_argument("take_rows: empty selection");
  std::vector<int> shape = t.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor<S> out(shape);
  const std::int64_t row = t.size() / t.dim(0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || r >= t.dim(0))
      throw std::out_of_range(detail::strcat("take_rows: index ", r, " out of ",
                                             detail::shape_string(t.shape())));
    std::copy(t.data() + r * row, t.data() + (r + 1) * row,
              out.data() + static_cast<std::int64_t>(i) * row);
  }
  return out;
}

}  // namespace selfrobust
