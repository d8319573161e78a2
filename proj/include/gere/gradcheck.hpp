// Central finite-difference gradient verification.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "gere/rng.hpp"
#include "gere/tensor.hpp"

namespace gere {

// f rebuilds the scalar loss from the given leaf parameters; it is called
// once under a tape for the autodiff gradient and then repeatedly without a
// tape for the central differences (f(θ+εe) − f(θ−εe)) / 2ε. Returns the
// worst relative error over up to max_checks sampled coordinates, with
// denominator max(|g|, 1e-8). Coordinates where both the analytic and the
// numeric gradient fall below min_grad are left out of the sample; in 32-bit
// mode the difference quotient is noise beneath roughly 1e-7*|f|/eps, so
// near-zero gradients carry no signal.
template <class S>
double finite_diff_check(const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> params,
                         S eps, int max_checks = 200, uint64_t seed = 17,
                         double min_grad = 0.0) {
  if (!(eps > S(0))) throw std::invalid_argument("finite_diff_check: eps must be positive");
  for (auto& p : params) p.grad().clear();
  Tape<S> tape;
  S base;
  {
    typename Tape<S>::Scope scope(tape);
    auto loss = f();
    if (loss.numel() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar");
    base = loss.item();
    if (!std::isfinite(static_cast<double>(base)))
      throw std::runtime_error("finite_diff_check: non-finite loss");
    tape.backward(loss);
  }

  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t pi = 0; pi < params.size(); ++pi)
    for (int64_t j = 0; j < params[pi].numel(); ++j) coords.push_back({pi, j});
  if (static_cast<int>(coords.size()) > max_checks) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(max_checks);
  }

  double worst = 0.0;
  for (auto [pi, j] : coords) {
    auto& w = params[pi].values();
    const S saved = w[j];
    const S g = params[pi].grad().empty() ? S(0) : params[pi].grad()[j];
    w[j] = saved + eps;
    const S fp = f().item();
    w[j] = saved - eps;
    const S fm = f().item();
    w[j] = saved;
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw std::runtime_error("finite_diff_check: non-finite probe");
    const double num = (static_cast<double>(fp) - static_cast<double>(fm)) /
                       (2.0 * static_cast<double>(eps));
    if (std::abs(static_cast<double>(g)) < min_grad && std::abs(num) < min_grad) continue;
    const double denom = std::max(std::abs(static_cast<double>(g)), 1e-8);
    worst = std::max(worst, std::abs(num - static_cast<double>(g)) / denom);
  }
  return worst;
}

}  // namespace gere
