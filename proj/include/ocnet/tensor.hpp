#ifndef OCNET_TENSOR_HPP_
#define OCNET_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace ocnet {

// Dense row-major tensor of doubles, rank 1..4. Value semantics; all model
// math runs in float64 so the finite-difference checks are meaningful.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);

  static Tensor zeros_like(const Tensor& other);

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Indexed access for the common ranks; bounds unchecked in release.
  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int b, int c, int h, int w) {
    return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(int b, int c, int h, int w) const {
    return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  void fill(double v);
  bool all_finite() const;

  // In-place axpy: this += alpha * other. Shapes must match.
  void add_scaled(const Tensor& other, double alpha);

  double max_abs() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace ocnet

#endif  // OCNET_TENSOR_HPP_
