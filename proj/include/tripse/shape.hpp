#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tripse {

/// Row-major extents of a tensor. Rank is at least 1 and every extent at least 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  std::size_t numel() const { return numel_; }
  std::span<const std::size_t> dims() const { return dims_; }

  /// Row-major strides in elements.
  std::vector<std::size_t> strides() const;

  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 0;
};

}  // namespace tripse
