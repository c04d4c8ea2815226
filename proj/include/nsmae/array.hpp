#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsmae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array of 64-bit floats. The gradient buffer is empty
// unless a backward pass filled it in.
struct Array {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;

  Array() = default;
  Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw std::runtime_error("Array: shape " + shape_str(shape) + " does not match data size " +
                               std::to_string(data.size()));
  }

  static Array zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return Array(std::move(s), std::vector<double>(n, 0.0));
  }
  static Array full(Shape s, double v) {
    std::size_t n = shape_numel(s);
    return Array(std::move(s), std::vector<double>(n, v));
  }
  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array randn(Shape s, std::mt19937_64& rng, double stddev) {
    std::size_t n = shape_numel(s);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(n);
    for (double& x : d) x = dist(rng);
    return Array(std::move(s), std::move(d));
  }

  std::size_t numel() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

}  // namespace nsmae
