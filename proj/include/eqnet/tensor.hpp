#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace eqnet {

// Dense multi-dimensional array of doubles, row-major. For images the
// convention is spatial dims first, channel dim last (rank d+1).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape_, double fill = 0.0);
  Tensor(std::vector<int64_t> shape_, std::vector<double> data_);

  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  double& operator[](int64_t flat) { return data[static_cast<size_t>(flat)]; }
  double operator[](int64_t flat) const { return data[static_cast<size_t>(flat)]; }

  // Row-major strides, innermost dim has stride 1.
  std::vector<int64_t> strides() const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// ETEN1 tensor file format: magic "ETEN1", u32 LE ndim, ndim u32 LE dims,
// f64 LE row-major payload.
void write_eten1(std::ostream& os, const Tensor& t);
Tensor read_eten1(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace eqnet
