#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace macp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles with an explicit shape.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != count(shape)) throw Error("tensor: value count does not match shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  std::size_t size() const { return data.size(); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace macp
