#include "cpflow/array.hpp"

#include <sstream>

namespace cpflow {

long shape_size(const std::vector<long>& shape) {
  long n = 1;
  for (long e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<long>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

ArrayValue::ArrayValue(std::vector<long> shape,
                       std::shared_ptr<const std::vector<double>> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (!data_ || static_cast<long>(data_->size()) != shape_size(shape_)) {
    throw ContractError("ArrayValue: buffer size does not match shape " +
                        shape_str(shape_));
  }
}

ArrayValue ArrayValue::zeros(std::vector<long> shape) {
  long n = shape_size(shape);
  return ArrayValue(std::move(shape),
                    std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0));
}

ArrayValue ArrayValue::full(std::vector<long> shape, double v) {
  long n = shape_size(shape);
  return ArrayValue(std::move(shape),
                    std::make_shared<std::vector<double>>(static_cast<size_t>(n), v));
}

ArrayValue ArrayValue::from(std::vector<long> shape, std::vector<double> data) {
  return ArrayValue(std::move(shape),
                    std::make_shared<std::vector<double>>(std::move(data)));
}

ArrayValue ArrayValue::scalar(double v) { return full({}, v); }

double ArrayValue::scalar_value() const {
  if (rank() != 0) {
    throw ContractError("scalar_value: array has shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

ArrayValue ArrayValue::reshaped(std::vector<long> shape) const {
  if (shape_size(shape) != size()) {
    throw ContractError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                        " changes element count");
  }
  return ArrayValue(std::move(shape), data_);
}

bool same_shape(const ArrayValue& a, const ArrayValue& b) {
  return a.shape() == b.shape();
}

}  // namespace cpflow
