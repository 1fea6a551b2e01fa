#include "handcraft/numcore/dct.hpp"

#include <cmath>
#include <numbers>

namespace handcraft::numcore {

DctBasis::DctBasis(Index n) : n_(n) {
  if (n <= 0) throw ShapeError("DCT basis size must be positive");
  forward_.resize(n, n);
  const Scalar pi = std::numbers::pi_v<Scalar>;
  for (Index k = 0; k < n; ++k) {
    const Scalar c = k == 0 ? std::sqrt(1.0 / static_cast<Scalar>(n))
                            : std::sqrt(2.0 / static_cast<Scalar>(n));
    for (Index t = 0; t < n; ++t)
      forward_(k, t) = c * std::cos(pi * (2.0 * t + 1.0) * k /
                                    (2.0 * static_cast<Scalar>(n)));
  }
  inverse_ = forward_.transpose();
  forward_t_ = Tensor::from_matrix(forward_);
  inverse_t_ = Tensor::from_matrix(inverse_);
}

namespace {
void check_temporal(const DctBasis& basis, const Tensor& x, const char* what) {
  if (x.rank() != 2 || x.rows() != basis.size())
    throw ShapeError(std::string(what) + ": expected " +
                     std::to_string(basis.size()) + " rows, got " +
                     shape_string(x.shape()));
}
}  // namespace

Tensor dct(const DctBasis& basis, const Tensor& x) {
  check_temporal(basis, x, "dct");
  return matmul(basis.forward_tensor(), x);
}

Tensor idct(const DctBasis& basis, const Tensor& x) {
  check_temporal(basis, x, "idct");
  return matmul(basis.inverse_tensor(), x);
}

}  // namespace handcraft::numcore
