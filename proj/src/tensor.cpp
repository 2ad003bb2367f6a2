#include "flatness/tensor.hpp"

#include <sstream>

#include "flatness/errors.hpp"

namespace flatness {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (Index d : shape_) {
    if (d <= 0) throw ValidationError("tensor shape " + shape_string(shape_) + " has a non-positive extent");
  }
  if (shape_size(shape_) != data_.size()) {
    throw ValidationError("tensor shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " entries");
  }
  if (!all_finite()) throw ValidationError("tensor contains non-finite entries");
}

Tensor::Tensor(Shape shape, std::initializer_list<double> data)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::VectorXd>(data.begin(), static_cast<Index>(data.size()))) {}

Tensor Tensor::zeros(Shape shape) {
  const Index n = shape_size(shape);
  return unchecked(std::move(shape), Eigen::VectorXd::Zero(n));
}

Tensor Tensor::scalar(double value) {
  return unchecked({}, Eigen::VectorXd::Constant(1, value));
}

Tensor Tensor::unchecked(Shape shape, Eigen::VectorXd data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

MatrixMap Tensor::matrix() {
  if (rank() != 2) throw ValidationError("matrix view of rank-" + std::to_string(rank()) + " tensor");
  return MatrixMap(data_.data(), shape_[0], shape_[1]);
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw ValidationError("matrix view of rank-" + std::to_string(rank()) + " tensor");
  return ConstMatrixMap(data_.data(), shape_[0], shape_[1]);
}

double Tensor::item() const {
  if (size() != 1) throw ValidationError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ValidationError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return unchecked(std::move(shape), data_);
}

bool Tensor::all_finite() const { return data_.allFinite(); }

}  // namespace flatness
