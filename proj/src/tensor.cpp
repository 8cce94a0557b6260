#include "ocnet/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "ocnet/errors.hpp"

namespace ocnet {

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty() || shape_.size() > 4) {
    throw ValidationError("tensor rank must be 1..4");
  }
  std::int64_t n = 1;
  for (int d : shape_) {
    if (d <= 0) throw ValidationError("tensor dims must be positive");
    n *= d;
  }
  data_.assign(static_cast<size_t>(n), fill);
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << ")";
  return os.str();
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::add_scaled(const Tensor& other, double alpha) {
  if (!same_shape(other)) {
    throw ValidationError("add_scaled shape mismatch " + shape_str() + " vs " +
                          other.shape_str());
  }
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace ocnet
