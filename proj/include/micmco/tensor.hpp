#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace micmco {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Eigen::Index>;

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
Eigen::Index shape_size(const Shape& s);

/// Dense row-major array of doubles with a rank <= 2 shape.
/// Storage is shared and immutable after construction; copies are cheap handles.
class Tensor {
 public:
  Tensor() : shape_{0}, data_(std::make_shared<Eigen::ArrayXd>(0)) {}

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_array(Shape shape, Eigen::ArrayXd data);
  static Tensor row_vector(std::initializer_list<double> vals);

  const Shape& shape() const { return shape_; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(shape_.size()); }
  Eigen::Index size() const { return data_->size(); }

  /// Rank-2 extents (a rank-1 tensor is treated as a single row, a scalar as 1x1).
  Eigen::Index rows() const { return rank() == 2 ? shape_[0] : 1; }
  Eigen::Index cols() const {
    if (rank() == 2) return shape_[1];
    if (rank() == 1) return shape_[0];
    return 1;
  }

  const Eigen::ArrayXd& array() const { return *data_; }
  const double* data() const { return data_->data(); }

  Eigen::Map<const RowMat> matrix() const {
    return Eigen::Map<const RowMat>(data_->data(), rows(), cols());
  }

  double value() const {
    if (size() != 1) throw TensorError("Tensor::value: size " + std::to_string(size()) + " != 1");
    return (*data_)(0);
  }
  double at(Eigen::Index i) const { return (*data_)(i); }
  double at(Eigen::Index r, Eigen::Index c) const { return (*data_)(r * cols() + c); }

  /// Same storage, new shape; sizes must match.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_->isFinite().all(); }
  std::string shape_string() const { return shape_str(shape_); }

 private:
  Tensor(Shape shape, std::shared_ptr<Eigen::ArrayXd> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::shared_ptr<Eigen::ArrayXd> data_;
};

}  // namespace micmco
