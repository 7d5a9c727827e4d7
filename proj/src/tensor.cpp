#include "micmco/tensor.hpp"

namespace micmco {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (Eigen::Index d : s) {
    if (d < 0) throw TensorError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::scalar(double v) {
  Eigen::ArrayXd a(1);
  a(0) = v;
  return from_array({}, std::move(a));
}

Tensor Tensor::zeros(Shape shape) {
  return from_array(std::move(shape), Eigen::ArrayXd());
}

Tensor Tensor::full(Shape shape, double v) {
  Eigen::ArrayXd a = Eigen::ArrayXd::Constant(shape_size(shape), v);
  return Tensor(std::move(shape), std::make_shared<Eigen::ArrayXd>(std::move(a)));
}

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd data) {
  if (shape.size() > 2) throw TensorError("rank > 2 unsupported: " + shape_str(shape));
  Eigen::Index n = shape_size(shape);
  if (data.size() == 0 && n > 0) data = Eigen::ArrayXd::Zero(n);
  if (data.size() != n)
    throw TensorError("shape " + shape_str(shape) + " does not match data length " +
                      std::to_string(data.size()));
  return Tensor(std::move(shape), std::make_shared<Eigen::ArrayXd>(std::move(data)));
}

Tensor Tensor::row_vector(std::initializer_list<double> vals) {
  Eigen::ArrayXd a(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double v : vals) a(i++) = v;
  return from_array({static_cast<Eigen::Index>(vals.size())}, std::move(a));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.size() > 2) throw TensorError("rank > 2 unsupported: " + shape_str(shape));
  if (shape_size(shape) != size())
    throw TensorError("reshape " + shape_string() + " -> " + shape_str(shape) +
                      ": size mismatch");
  return Tensor(std::move(shape), data_);
}

}  // namespace micmco
