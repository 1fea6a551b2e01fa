#pragma once

#include "handcraft/numcore/tensor.hpp"

namespace handcraft::numcore {

/// Orthonormal DCT-II basis of a fixed length, applied along the temporal
/// (row) axis of frame-major matrices. inverse == forward transposed.
class DctBasis {
 public:
  explicit DctBasis(Index n);

  Index size() const { return n_; }
  const Matrix& forward_matrix() const { return forward_; }
  const Matrix& inverse_matrix() const { return inverse_; }

  const Tensor& forward_tensor() const { return forward_t_; }
  const Tensor& inverse_tensor() const { return inverse_t_; }

 private:
  Index n_;
  Matrix forward_;
  Matrix inverse_;
  Tensor forward_t_;
  Tensor inverse_t_;
};

// Multiply along the temporal axis: rows of x are frames.
Tensor dct(const DctBasis& basis, const Tensor& x);
Tensor idct(const DctBasis& basis, const Tensor& x);

}  // namespace handcraft::numcore
