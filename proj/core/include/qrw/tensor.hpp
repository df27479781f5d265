#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qrw/error.hpp"

namespace qrw {

// Row-major dense matrix. Vectors are 1 x n.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// Ordered bundle of named matrices. Parameters, gradients and optimizer
// moments all share one layout so they can be walked in lockstep.
template <typename T>
class TensorSet {
 public:
  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw Error("duplicate tensor name '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(name);
    tensors_.emplace_back(rows, cols);
    return names_.size() - 1;
  }

  std::size_t count() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return tensors_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown tensor '" + name + "'");
    return it->second;
  }
  Matrix<T>& at(const std::string& name) { return tensors_[index_of(name)]; }
  const Matrix<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }

  // Same names and shapes, zero-filled.
  TensorSet zeros_like() const {
    TensorSet out;
    for (std::size_t i = 0; i < count(); ++i) out.add(names_[i], tensors_[i].rows, tensors_[i].cols);
    return out;
  }

  void zero() {
    for (auto& t : tensors_) t.fill(T(0));
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool same_layout(const TensorSet& o) const {
    if (count() != o.count()) return false;
    for (std::size_t i = 0; i < count(); ++i) {
      if (names_[i] != o.names_[i] || !tensors_[i].same_shape(o.tensors_[i])) return false;
    }
    return true;
  }

  // this += scale * other
  void axpy(T scale, const TensorSet& other) {
    for (std::size_t i = 0; i < count(); ++i) {
      auto& a = tensors_[i].data;
      const auto& b = other.tensors_[i].data;
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += scale * b[j];
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace qrw
