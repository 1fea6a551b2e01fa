#include "handcraft/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace handcraft::numcore {

Scalar grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& params,
                  Scalar h) {
  for (Tensor& p : params) p.clear_grad();
  Tensor loss = f();
  if (loss.size() != 1) throw ShapeError("grad_check needs a scalar loss");
  loss.backward();

  std::vector<std::vector<Scalar>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0);
  }

  Scalar worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Scalar original = values[i];
      values[i] = original + h;
      Scalar up;
      {
        NoGradGuard no_grad;
        up = f().value_at(0);
      }
      values[i] = original - h;
      Scalar down;
      {
        NoGradGuard no_grad;
        down = f().value_at(0);
      }
      values[i] = original;
      const Scalar numeric = (up - down) / (2.0 * h);
      const Scalar a = analytic[k][i];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (Tensor& p : params) p.clear_grad();
  return worst;
}

}  // namespace handcraft::numcore
