#include "tripse/shape.hpp"

#include <limits>

#include "tripse/errors.hpp"

namespace tripse {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ShapeError("shape must have rank >= 1");
  constexpr auto kMax = static_cast<std::size_t>(std::numeric_limits<std::ptrdiff_t>::max());
  std::size_t n = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape " + to_string() + " has a zero extent");
    if (n > kMax / d) throw ShapeError("shape " + to_string() + " overflows the index range");
    n *= d;
  }
  numel_ = n;
}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::string Shape::to_string() const {
  std::string out = "(";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims_[i]);
  }
  return out + ")";
}

}  // namespace tripse
