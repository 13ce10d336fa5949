#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cpflow/errors.hpp"

namespace cpflow {

long shape_size(const std::vector<long>& shape);
std::string shape_str(const std::vector<long>& shape);

// Dense row-major f64 array of rank 0, 1 or 2. The data buffer is shared and
// treated as immutable once wrapped, so copies are cheap and detached views
// can alias their source.
class ArrayValue {
 public:
  ArrayValue() : shape_(), data_(std::make_shared<std::vector<double>>(1, 0.0)) {}
  ArrayValue(std::vector<long> shape, std::shared_ptr<const std::vector<double>> data);

  static ArrayValue zeros(std::vector<long> shape);
  static ArrayValue full(std::vector<long> shape, double v);
  static ArrayValue from(std::vector<long> shape, std::vector<double> data);
  static ArrayValue scalar(double v);

  const std::vector<long>& shape() const { return shape_; }
  long rank() const { return static_cast<long>(shape_.size()); }
  long size() const { return shape_size(shape_); }
  // Extents with rank-aware defaults: rows()/cols() of a rank-1 array are
  // 1/size so kernels can treat it as a single row.
  long rows() const { return rank() == 2 ? shape_[0] : 1; }
  long cols() const { return rank() == 0 ? 1 : shape_.back(); }

  const double* data() const { return data_->data(); }
  const std::vector<double>& vec() const { return *data_; }
  std::shared_ptr<const std::vector<double>> buffer() const { return data_; }
  double at(long i) const { return (*data_)[static_cast<size_t>(i)]; }
  double scalar_value() const;

  ArrayValue reshaped(std::vector<long> shape) const;

 private:
  std::vector<long> shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

bool same_shape(const ArrayValue& a, const ArrayValue& b);

}  // namespace cpflow
