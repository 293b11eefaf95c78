#include "sweettok/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace sweettok {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Tensor: data size does not match shape");
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace sweettok
