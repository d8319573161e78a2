// Training objectives: token cross-entropy, the threshold-based margin (TM)
// loss, L1/L2 feature imitation, temperature-scaled KL logit imitation, and
// fixed/dynamic loss combination. Templated so gradient checks can run the
// same code in double precision.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gere/distill.hpp"
#include "gere/tensor.hpp"

namespace gere {

struct WeightStrategy {
  enum class Kind { Fixed, Dynamic };
  Kind kind = Kind::Fixed;
  double w = 1.0;

  static WeightStrategy fixed(double w) {
    if (!(w > 0)) throw std::invalid_argument("weight strategy: fixed w must be > 0");
    return {Kind::Fixed, w};
  }
  static WeightStrategy dynamic() { return {Kind::Dynamic, 0.0}; }
  static WeightStrategy parse(const std::string& s);
  std::string str() const;
};

template <class S>
struct LossBundle {
  Tensor<S> total;
  S ce = S(0);
  S aux = S(0);
  S weight_used = S(0);
};

namespace detail {

template <class S>
Tensor<S> row_mask_tensor(const std::vector<S>& mask, int64_t rows) {
  if (static_cast<int64_t>(mask.size()) != rows)
    throw std::invalid_argument("loss: mask length != row count");
  return Tensor<S>::leaf({rows}, mask);
}

// expand a per-row mask to (rows x cols), no gradient
template <class S>
Tensor<S> expand_mask(const std::vector<S>& mask, int64_t rows, int64_t cols) {
  if (static_cast<int64_t>(mask.size()) != rows)
    throw std::invalid_argument("loss: mask length != row count");
  std::vector<S> v(rows * cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) v[i * cols + j] = mask[i];
  return Tensor<S>::leaf({rows, cols}, std::move(v));
}

}  // namespace detail

// Mean negative log-likelihood over unmasked rows. One target id per row of
// the 2-D logits view; masked rows may carry any target.
template <class S>
Tensor<S> ce_loss(const Tensor<S>& logits, const std::vector<int64_t>& targets,
                  const std::vector<S>& mask) {
  const int64_t rows = logits.view_rows();
  if (static_cast<int64_t>(targets.size()) != rows)
    throw std::invalid_argument("ce_loss: one target per row required");
  double denom = 0.0;
  for (S m : mask) denom += static_cast<double>(m);
  if (denom <= 0.0) throw std::invalid_argument("ce_loss: all positions masked");
  std::vector<int64_t> safe = targets;
  for (int64_t i = 0; i < rows; ++i)
    if (mask[i] == S(0)) safe[i] = 0;
  auto picked = pick_rows(log_softmax_rows(logits), safe);
  return scale(masked_mean(picked, detail::row_mask_tensor(mask, rows)), S(-1));
}

// TM loss from per-entry target activation states; the target's exact value
// never enters. Averaged over all entries of unmasked rows; gradient reaches
// the prediction only.
template <class S>
Tensor<S> tm_loss_from_states(const Tensor<S>& pred, const std::vector<ActivationState>& states,
                              const Thresholds& tau, const std::vector<S>& row_mask) {
  const int64_t rows = pred.view_rows();
  const int64_t nd = pred.view_cols();
  if (tau.dims() != nd) throw std::invalid_argument("tm_loss: threshold dimension mismatch");
  if (static_cast<int64_t>(states.size()) != rows * nd)
    throw std::invalid_argument("tm_loss: one state per entry required");

  std::vector<S> neg(rows * nd, S(0)), non(rows * nd, S(0)), pos(rows * nd, S(0));
  std::vector<S> tminus(nd), tplus(nd);
  for (int64_t k = 0; k < nd; ++k) {
    tminus[k] = static_cast<S>(tau.tau_minus[k]);
    tplus[k] = static_cast<S>(tau.tau_plus[k]);
  }
  for (int64_t i = 0; i < rows * nd; ++i) {
    switch (states[i]) {
      case ActivationState::NegativelyActivated: neg[i] = S(1); break;
      case ActivationState::NonActivated: non[i] = S(1); break;
      case ActivationState::PositivelyActivated: pos[i] = S(1); break;
    }
  }
  auto negm = Tensor<S>::leaf({rows, nd}, std::move(neg));
  auto nonm = Tensor<S>::leaf({rows, nd}, std::move(non));
  auto posm = Tensor<S>::leaf({rows, nd}, std::move(pos));
  std::vector<S> neg_tminus(nd), neg_tplus(nd);
  for (int64_t k = 0; k < nd; ++k) {
    neg_tminus[k] = -tminus[k];
    neg_tplus[k] = -tplus[k];
  }
  auto above_minus = add_row(pred, Tensor<S>::leaf({nd}, neg_tminus));  // h - tau^-
  auto above_plus = add_row(pred, Tensor<S>::leaf({nd}, neg_tplus));    // h - tau^+
  // target below band: push prediction down to tau^-
  auto br_neg = max0(above_minus);
  // target in band: penalize leaving [tau^-, tau^+] on either side
  auto br_non = add(max0(above_plus), max0(scale(above_minus, S(-1))));
  // target above band: push prediction up to tau^+
  auto br_pos = max0(scale(above_plus, S(-1)));
  auto entries = add(add(mul(negm, br_neg), mul(nonm, br_non)), mul(posm, br_pos));
  return masked_mean(entries, detail::expand_mask(row_mask, rows, nd));
}

// Value-target variant: classifies each target entry against the band first.
template <class S>
Tensor<S> tm_loss(const Tensor<S>& pred, const std::vector<S>& target, const Thresholds& tau,
                  const std::vector<S>& row_mask) {
  const int64_t rows = pred.view_rows();
  const int64_t nd = pred.view_cols();
  if (static_cast<int64_t>(target.size()) != rows * nd)
    throw std::invalid_argument("tm_loss: target shape mismatch");
  std::vector<ActivationState> states(rows * nd);
  for (int64_t i = 0; i < rows * nd; ++i) {
    const int64_t k = i % nd;
    states[i] = classify_state(static_cast<double>(target[i]), tau.tau_minus[k], tau.tau_plus[k]);
  }
  return tm_loss_from_states(pred, states, tau, row_mask);
}

template <class S>
Tensor<S> l1_feature_loss(const Tensor<S>& pred, const std::vector<S>& target,
                          const std::vector<S>& row_mask) {
  const int64_t rows = pred.view_rows();
  const int64_t nd = pred.view_cols();
  if (static_cast<int64_t>(target.size()) != rows * nd)
    throw std::invalid_argument("l1_feature_loss: target shape mismatch");
  auto d = sub(pred, Tensor<S>::leaf(pred.shape(), target));
  auto abs_d = add(max0(d), max0(scale(d, S(-1))));
  return masked_mean(abs_d, detail::expand_mask(row_mask, rows, nd));
}

template <class S>
Tensor<S> l2_feature_loss(const Tensor<S>& pred, const std::vector<S>& target,
                          const std::vector<S>& row_mask) {
  const int64_t rows = pred.view_rows();
  const int64_t nd = pred.view_cols();
  if (static_cast<int64_t>(target.size()) != rows * nd)
    throw std::invalid_argument("l2_feature_loss: target shape mismatch");
  auto d = sub(pred, Tensor<S>::leaf(pred.shape(), target));
  return masked_mean(mul(d, d), detail::expand_mask(row_mask, rows, nd));
}

// Teacher logits recomputed from archived hidden states and the frozen base
// lm_head; constants, no gradient.
template <class S>
std::vector<S> kl_targets_from_hidden(const std::vector<S>& hidden, int64_t rows,
                                      const Tensor<S>& lm_head) {
  const int64_t nd = lm_head.view_rows();
  const int64_t vocab = lm_head.view_cols();
  if (static_cast<int64_t>(hidden.size()) != rows * nd)
    throw std::invalid_argument("kl_targets: hidden shape mismatch");
  std::vector<S> out(rows * vocab);
  ConstMatMap<S> H(hidden.data(), rows, nd);
  MatMap<S> O(out.data(), rows, vocab);
  O.noalias() = H * lm_head.mat();
  return out;
}

// T^2-scaled KL(teacher ‖ student) over temperature-softened distributions,
// averaged over unmasked rows.
template <class S>
Tensor<S> kl_logit_loss(const Tensor<S>& pred_logits, const std::vector<S>& target_logits,
                        S temperature, const std::vector<S>& row_mask) {
  if (!(temperature > S(0))) throw std::invalid_argument("kl_logit_loss: T must be positive");
  const int64_t rows = pred_logits.view_rows();
  const int64_t vocab = pred_logits.view_cols();
  if (static_cast<int64_t>(target_logits.size()) != rows * vocab)
    throw std::invalid_argument("kl_logit_loss: target shape mismatch");
  double denom = 0.0;
  for (S m : row_mask) denom += static_cast<double>(m);
  if (denom <= 0.0) throw std::invalid_argument("kl_logit_loss: all rows masked");

  // teacher probabilities and entropy term, computed as constants
  std::vector<S> tp(rows * vocab);
  double teacher_term = 0.0;  // sum over unmasked rows of sum_v p log p
  for (int64_t i = 0; i < rows; ++i) {
    double mx = -1e300;
    for (int64_t v = 0; v < vocab; ++v)
      mx = std::max(mx, static_cast<double>(target_logits[i * vocab + v]) / temperature);
    double z = 0.0;
    for (int64_t v = 0; v < vocab; ++v)
      z += std::exp(static_cast<double>(target_logits[i * vocab + v]) / temperature - mx);
    for (int64_t v = 0; v < vocab; ++v) {
      const double lp = static_cast<double>(target_logits[i * vocab + v]) / temperature - mx -
                        std::log(z);
      const double p = std::exp(lp);
      tp[i * vocab + v] = static_cast<S>(p);
      if (row_mask[i] != S(0)) teacher_term += p * lp;
    }
  }
  auto ls = log_softmax_rows(scale(pred_logits, S(1) / temperature));
  auto weighted = mul(Tensor<S>::leaf(pred_logits.shape(), std::move(tp)),
                      detail::expand_mask(row_mask, rows, vocab));
  auto cross = sum(mul(weighted, ls));  // sum over unmasked rows of sum_v p log s
  auto kl_sum = add_scalar(scale(cross, S(-1)), static_cast<S>(teacher_term));
  return scale(kl_sum, temperature * temperature / static_cast<S>(denom));
}

// Weighted loss combination. Dynamic mode detaches the weight so the aux term's
// gradient direction is untouched; if aux is numerically zero the term is
// dropped for the step.
template <class S>
LossBundle<S> combine_losses(const Tensor<S>& ce, const Tensor<S>& aux,
                             const WeightStrategy& strategy) {
  LossBundle<S> out;
  out.ce = ce.item();
  out.aux = aux.item();
  if (!std::isfinite(static_cast<double>(out.ce)) ||
      !std::isfinite(static_cast<double>(out.aux)))
    throw std::invalid_argument("combine_losses: non-finite inputs");
  if (strategy.kind == WeightStrategy::Kind::Fixed) {
    out.weight_used = static_cast<S>(strategy.w);
    out.total = add(ce, scale(aux, out.weight_used));
  } else {
    if (static_cast<double>(out.aux) <= 1e-12) {
      out.weight_used = S(0);
      out.total = ce;
    } else {
      out.weight_used = out.ce / out.aux;  // detached: a plain number
      out.total = add(ce, scale(aux, out.weight_used));
    }
  }
  return out;
}

}  // namespace gere
