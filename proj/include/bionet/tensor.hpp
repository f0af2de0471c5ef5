#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bionet {

using Index = Eigen::Index;

/// Dense 4-D tensor in NCHW order. Each (n, c) plane is stored row-major,
/// so one sample viewed as a matrix is channels x (height * width).
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  Tensor(Index n, Index c, Index h, Index w) : n_(n), c_(c), h_(h), w_(w), data_(Storage::Zero(n * c * h * w)) {
    if (n < 0 || c < 0 || h < 0 || w < 0) throw std::invalid_argument("Tensor: negative dimension");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.n_, other.c_, other.h_, other.w_); }

  Index batch() const { return n_; }
  Index channels() const { return c_; }
  Index height() const { return h_; }
  Index width() const { return w_; }
  Index plane_size() const { return h_ * w_; }
  Index sample_size() const { return c_ * h_ * w_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  Scalar& operator()(Index n, Index c, Index y, Index x) { return data_[((n * c_ + c) * h_ + y) * w_ + x]; }
  Scalar operator()(Index n, Index c, Index y, Index x) const { return data_[((n * c_ + c) * h_ + y) * w_ + x]; }

  Scalar* sample_data(Index n) { return data_.data() + n * sample_size(); }
  const Scalar* sample_data(Index n) const { return data_.data() + n * sample_size(); }
  Scalar* plane_data(Index n, Index c) { return sample_data(n) + c * plane_size(); }
  const Scalar* plane_data(Index n, Index c) const { return sample_data(n) + c * plane_size(); }

  /// Sample `n` as a channels x pixels matrix.
  MatrixMap sample(Index n) { return MatrixMap(sample_data(n), c_, plane_size()); }
  ConstMatrixMap sample(Index n) const { return ConstMatrixMap(sample_data(n), c_, plane_size()); }

  /// Plane (n, c) as a height x width matrix.
  MatrixMap plane(Index n, Index c) { return MatrixMap(plane_data(n, c), h_, w_); }
  ConstMatrixMap plane(Index n, Index c) const { return ConstMatrixMap(plane_data(n, c), h_, w_); }

  /// Whole storage reinterpreted as a rows x cols matrix (used for weights).
  MatrixMap as_matrix(Index rows, Index cols) {
    check_reshape(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Index rows, Index cols) const {
    check_reshape(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  bool same_shape(const Tensor& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  std::string shape_string() const {
    return std::to_string(n_) + "x" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(n_, c_, h_, w_);
    out.values() = data_.template cast<Other>();
    return out;
  }

 private:
  void check_reshape(Index rows, Index cols) const {
    if (rows * cols != data_.size()) throw std::invalid_argument("Tensor: reshape size mismatch");
  }

  Index n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Storage data_;
};

/// Channel concatenation of two tensors with equal batch and spatial size.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.batch() != b.batch() || a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("concat_channels: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Scalar> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  for (Index n = 0; n < a.batch(); ++n) {
    out.sample(n).topRows(a.channels()) = a.sample(n);
    out.sample(n).bottomRows(b.channels()) = b.sample(n);
  }
  return out;
}

/// Inverse of concat_channels: channels [first, first + count) of `t`.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& t, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > t.channels()) throw std::out_of_range("slice_channels");
  Tensor<Scalar> out(t.batch(), count, t.height(), t.width());
  for (Index n = 0; n < t.batch(); ++n) out.sample(n) = t.sample(n).middleRows(first, count);
  return out;
}

/// Samples [first, first + count) of `t`.
template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& t, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > t.batch()) throw std::out_of_range("slice_batch");
  Tensor<Scalar> out(count, t.channels(), t.height(), t.width());
  out.values() = t.values().segment(first * t.sample_size(), count * t.sample_size());
  return out;
}

}  // namespace bionet
