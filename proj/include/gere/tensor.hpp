// Minimal deterministic reverse-mode autodiff over dense row-major tensors.
// Templated on the scalar type: float for training, double for reference-mode
// gradient checks.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gere {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

template <class S>
struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool on_tape = false;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), S(0));
  }
};

// Shared handle; ops build new impls and record backward closures on the
// active tape.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<S>> p) : p_(std::move(p)) {}

  static Tensor leaf(std::vector<int64_t> shape, std::vector<S> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("tensor: shape does not match value count");
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }
  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    return leaf(std::move(shape), std::vector<S>(shape_numel(shape), S(0)), requires_grad);
  }
  static Tensor scalar(S v) { return leaf({1}, {v}); }

  bool defined() const { return static_cast<bool>(p_); }
  TensorImpl<S>* impl() const { return p_.get(); }
  const std::shared_ptr<TensorImpl<S>>& ptr() const { return p_; }

  const std::vector<int64_t>& shape() const { return p_->shape; }
  std::vector<S>& values() const { return p_->values; }
  std::vector<S>& grad() const { return p_->grad; }
  bool requires_grad() const { return p_->requires_grad; }
  int64_t numel() const { return p_->numel(); }

  // 2-D view: all leading dims collapsed into rows, last dim is columns.
  int64_t view_rows() const {
    int64_t r = 1;
    for (size_t i = 0; i + 1 < p_->shape.size(); ++i) r *= p_->shape[i];
    return r;
  }
  int64_t view_cols() const { return p_->shape.empty() ? 1 : p_->shape.back(); }

  MatMap<S> mat() const { return MatMap<S>(p_->values.data(), view_rows(), view_cols()); }
  MatMap<S> gmat() const {
    p_->ensure_grad();
    return MatMap<S>(p_->grad.data(), view_rows(), view_cols());
  }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return p_->values[0];
  }

 private:
  std::shared_ptr<TensorImpl<S>> p_;
};

// Records backward closures in forward execution order; backward replays them
// in exact reverse order, so gradients are deterministic.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;

  // RAII activation; ops record into the innermost active tape of this thread.
  struct Scope {
    explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
    ~Scope() { current_ = prev_; }

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_; }

  void record(Tensor<S> out, std::function<void()> fn) {
    out.impl()->on_tape = true;
    nodes_.push_back(std::move(fn));
  }

  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (!loss.impl()->on_tape)
      throw std::invalid_argument("backward: loss is detached from the tape");
    if (consumed_) throw std::logic_error("backward: tape already consumed; reset first");
    consumed_ = true;
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  size_t size() const { return nodes_.size(); }

 private:
  inline static thread_local Tape* current_ = nullptr;
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {

template <class S>
inline bool want_grad(std::initializer_list<Tensor<S>> ins) {
  if (Tape<S>::current() == nullptr) return false;
  for (const auto& t : ins)
    if (t.requires_grad() || t.impl()->on_tape) return true;
  return false;
}

template <class S>
inline Tensor<S> make_out(std::vector<int64_t> shape) {
  return Tensor<S>::zeros(std::move(shape));
}

template <class S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  // elementwise ops operate on the 2-D view, so (B,T,C) pairs with (B*T,C)
  if (a.view_rows() != b.view_rows() || a.view_cols() != b.view_cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- elementwise ----

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat() + b.mat();
  if (detail::want_grad<S>({a, b}))
    Tape<S>::current()->record(out, [a, b, out] {
      if (a.requires_grad() || a.impl()->on_tape) a.gmat() += out.gmat();
      if (b.requires_grad() || b.impl()->on_tape) b.gmat() += out.gmat();
    });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat() - b.mat();
  if (detail::want_grad<S>({a, b}))
    Tape<S>::current()->record(out, [a, b, out] {
      if (a.requires_grad() || a.impl()->on_tape) a.gmat() += out.gmat();
      if (b.requires_grad() || b.impl()->on_tape) b.gmat() -= out.gmat();
    });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat().cwiseProduct(b.mat());
  if (detail::want_grad<S>({a, b}))
    Tape<S>::current()->record(out, [a, b, out] {
      if (a.requires_grad() || a.impl()->on_tape)
        a.gmat() += out.gmat().cwiseProduct(b.mat());
      if (b.requires_grad() || b.impl()->on_tape)
        b.gmat() += out.gmat().cwiseProduct(a.mat());
    });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat() * c;
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out, c] { a.gmat() += out.gmat() * c; });
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat().array() + c;
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] { a.gmat() += out.gmat(); });
  return out;
}

// max(x, 0); subgradient at the kink is 0 (gradient flows only where x > 0).
template <class S>
Tensor<S> max0(const Tensor<S>& a) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat().cwiseMax(S(0));
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] {
      a.gmat() += (a.mat().array() > S(0)).template cast<S>().matrix().cwiseProduct(out.gmat());
    });
  return out;
}

template <class S>
Tensor<S> exp_(const Tensor<S>& a) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat().array().exp().matrix();
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] { a.gmat() += out.gmat().cwiseProduct(out.mat()); });
  return out;
}

template <class S>
Tensor<S> log_(const Tensor<S>& a) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = a.mat().array().log().matrix();
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] {
      a.gmat() += out.gmat().cwiseQuotient(a.mat());
    });
  return out;
}

// tanh-approximation GELU
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  const S k = S(0.7978845608028654);  // sqrt(2/pi)
  const S c3 = S(0.044715);
  auto out = detail::make_out<S>(a.shape());
  {
    auto x = a.mat().array();
    out.mat() = (S(0.5) * x * (S(1) + ((k * (x + c3 * x.cube())).tanh()))).matrix();
  }
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out, k, c3] {
      auto x = a.mat().array();
      auto u = k * (x + c3 * x.cube());
      auto t = u.tanh();
      auto du = k * (S(1) + S(3) * c3 * x.square());
      auto d = S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t.square()) * du;
      a.gmat() += out.gmat().cwiseProduct(d.matrix());
    });
  return out;
}

// Breaks the graph: same values, no gradient flow upstream.
template <class S>
Tensor<S> detach(const Tensor<S>& a) {
  return Tensor<S>::leaf(a.shape(), a.values(), false);
}

// No-grad comparison masks (1 where true).
template <class S>
Tensor<S> greater_mask(const Tensor<S>& a, S threshold) {
  auto out = detail::make_out<S>(a.shape());
  out.mat() = (a.mat().array() > threshold).template cast<S>().matrix();
  return out;
}

// ---- matmul / broadcasts ----

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false,
                 bool trans_b = false) {
  const int64_t am = trans_a ? a.view_cols() : a.view_rows();
  const int64_t ak = trans_a ? a.view_rows() : a.view_cols();
  const int64_t bk = trans_b ? b.view_cols() : b.view_rows();
  const int64_t bn = trans_b ? b.view_rows() : b.view_cols();
  if (ak != bk) throw std::invalid_argument("matmul: inner dimensions disagree");
  auto out = detail::make_out<S>({am, bn});
  auto A = a.mat();
  auto B = b.mat();
  if (!trans_a && !trans_b)
    out.mat().noalias() = A * B;
  else if (!trans_a && trans_b)
    out.mat().noalias() = A * B.transpose();
  else if (trans_a && !trans_b)
    out.mat().noalias() = A.transpose() * B;
  else
    out.mat().noalias() = A.transpose() * B.transpose();
  if (detail::want_grad<S>({a, b}))
    Tape<S>::current()->record(out, [a, b, out, trans_a, trans_b] {
      auto G = out.gmat();
      if (a.requires_grad() || a.impl()->on_tape) {
        if (!trans_a)
          a.gmat().noalias() += trans_b ? (G * b.mat()).eval() : (G * b.mat().transpose()).eval();
        else
          a.gmat().noalias() +=
              trans_b ? (b.mat().transpose() * G.transpose()).eval() : (b.mat() * G.transpose()).eval();
      }
      if (b.requires_grad() || b.impl()->on_tape) {
        if (!trans_b)
          b.gmat().noalias() += trans_a ? (a.mat() * G).eval() : (a.mat().transpose() * G).eval();
        else
          b.gmat().noalias() += trans_a ? (G.transpose() * a.mat().transpose()).eval()
                                        : (G.transpose() * a.mat()).eval();
      }
    });
  return out;
}

// matrix (R x C) + row vector (C), broadcast over rows
template <class S>
Tensor<S> add_row(const Tensor<S>& a, const Tensor<S>& row) {
  if (row.numel() != a.view_cols()) throw std::invalid_argument("add_row: width mismatch");
  auto out = detail::make_out<S>(a.shape());
  ConstMatMap<S> r(row.values().data(), 1, row.numel());
  out.mat() = a.mat().rowwise() + r.row(0);
  if (detail::want_grad<S>({a, row}))
    Tape<S>::current()->record(out, [a, row, out] {
      if (a.requires_grad() || a.impl()->on_tape) a.gmat() += out.gmat();
      if (row.requires_grad() || row.impl()->on_tape) {
        row.impl()->ensure_grad();
        MatMap<S> rg(row.grad().data(), 1, row.numel());
        rg.row(0) += out.gmat().colwise().sum();
      }
    });
  return out;
}

// ---- reductions ----

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros({1});
  // fixed left-to-right accumulation in 64-bit
  double acc = 0.0;
  for (S v : a.values()) acc += static_cast<double>(v);
  out.values()[0] = static_cast<S>(acc);
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] {
      a.gmat().array() += out.grad()[0];
    });
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  const S n = static_cast<S>(a.numel());
  auto s = sum(a);
  return scale(s, S(1) / n);
}

// sum(x * mask) / sum(mask); mask carries no gradient.
template <class S>
Tensor<S> masked_mean(const Tensor<S>& a, const Tensor<S>& mask) {
  // compared on the 2-D view so a (B,T,C) tensor accepts a (B*T,C) mask
  if (a.view_rows() != mask.view_rows() || a.view_cols() != mask.view_cols())
    throw std::invalid_argument("masked_mean: shape mismatch");
  double denom = 0.0;
  for (S v : mask.values()) denom += static_cast<double>(v);
  if (denom <= 0.0) throw std::invalid_argument("masked_mean: empty mask");
  auto m = mask.shape() == a.shape() ? mask : Tensor<S>::leaf(a.shape(), mask.values());
  return scale(sum(mul(a, m)), static_cast<S>(1.0 / denom));
}

// ---- softmax family (rowwise on the 2-D view) ----

template <class S>
Tensor<S> log_softmax_rows(const Tensor<S>& a) {
  auto out = detail::make_out<S>(a.shape());
  auto X = a.mat();
  auto Y = out.mat();
  for (int64_t i = 0; i < X.rows(); ++i) {
    S m = X.row(i).maxCoeff();
    Y.row(i) = X.row(i).array() - m;
    S lse = std::log(Y.row(i).array().exp().sum());
    Y.row(i).array() -= lse;
  }
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out] {
      auto G = out.gmat();
      auto Y = out.mat();
      for (int64_t i = 0; i < G.rows(); ++i) {
        S gs = G.row(i).sum();
        a.gmat().row(i) += G.row(i) - gs * Y.row(i).array().exp().matrix();
      }
    });
  return out;
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  auto ls = log_softmax_rows(a);
  return exp_(ls);
}

// Picks -log p[target] per row; rows with mask 0 contribute nothing.
// Returns a column of per-row values (no reduction).
template <class S>
Tensor<S> pick_rows(const Tensor<S>& a, const std::vector<int64_t>& idx) {
  const int64_t rows = a.view_rows();
  if (static_cast<int64_t>(idx.size()) != rows)
    throw std::invalid_argument("pick_rows: one index per row required");
  const int64_t cols = a.view_cols();
  for (int64_t i = 0; i < rows; ++i)
    if (idx[i] < 0 || idx[i] >= cols) throw std::out_of_range("pick_rows: index out of range");
  auto out = detail::make_out<S>({rows});
  for (int64_t i = 0; i < rows; ++i) out.values()[i] = a.mat()(i, idx[i]);
  if (detail::want_grad<S>({a}))
    Tape<S>::current()->record(out, [a, out, idx] {
      for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
        a.gmat()(i, idx[i]) += out.grad()[i];
    });
  return out;
}

// ---- layer norm (rowwise, affine) ----

template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias,
                          S eps = S(1e-5)) {
  const int64_t cols = a.view_cols();
  if (gain.numel() != cols || bias.numel() != cols)
    throw std::invalid_argument("layer_norm: affine width mismatch");
  auto out = detail::make_out<S>(a.shape());
  auto norm = std::make_shared<std::vector<S>>(a.numel());  // saved x_hat
  auto rstd = std::make_shared<std::vector<S>>(a.view_rows());
  auto X = a.mat();
  MatMap<S> N(norm->data(), a.view_rows(), cols);
  ConstMatMap<S> g(gain.values().data(), 1, cols);
  ConstMatMap<S> b(bias.values().data(), 1, cols);
  for (int64_t i = 0; i < X.rows(); ++i) {
    S m = X.row(i).mean();
    S var = (X.row(i).array() - m).square().mean();
    S rs = S(1) / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    N.row(i) = ((X.row(i).array() - m) * rs).matrix();
    out.mat().row(i) = (N.row(i).array() * g.row(0).array() + b.row(0).array()).matrix();
  }
  if (detail::want_grad<S>({a, gain, bias}))
    Tape<S>::current()->record(out, [a, gain, bias, out, norm, rstd, cols] {
      auto G = out.gmat();
      MatMap<S> N(norm->data(), a.view_rows(), cols);
      ConstMatMap<S> g(gain.values().data(), 1, cols);
      const bool need_a = a.requires_grad() || a.impl()->on_tape;
      const bool need_g = gain.requires_grad() || gain.impl()->on_tape;
      const bool need_b = bias.requires_grad() || bias.impl()->on_tape;
      if (need_g) {
        gain.impl()->ensure_grad();
        MatMap<S> gg(gain.grad().data(), 1, cols);
        gg.row(0) += G.cwiseProduct(N).colwise().sum();
      }
      if (need_b) {
        bias.impl()->ensure_grad();
        MatMap<S> bg(bias.grad().data(), 1, cols);
        bg.row(0) += G.colwise().sum();
      }
      if (need_a) {
        const S inv_n = S(1) / static_cast<S>(cols);
        for (int64_t i = 0; i < G.rows(); ++i) {
          // dy/dx through x_hat = (x - mean) * rstd
          Eigen::Array<S, 1, Eigen::Dynamic> gy =
              G.row(i).array() * g.row(0).array();
          S s1 = gy.sum();
          S s2 = (gy * N.row(i).array()).sum();
          a.gmat().row(i) +=
              ((gy - inv_n * s1 - N.row(i).array() * inv_n * s2) * (*rstd)[i]).matrix();
        }
      }
    });
  return out;
}

// ---- embedding lookup ----

template <class S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int64_t>& ids) {
  const int64_t vocab = table.view_rows();
  const int64_t dim = table.view_cols();
  for (int64_t id : ids)
    if (id < 0 || id >= vocab) throw std::out_of_range("embedding: token id out of range");
  auto out = detail::make_out<S>({static_cast<int64_t>(ids.size()), dim});
  for (size_t i = 0; i < ids.size(); ++i) out.mat().row(i) = table.mat().row(ids[i]);
  if (detail::want_grad<S>({table}))
    Tape<S>::current()->record(out, [table, out, ids] {
      for (size_t i = 0; i < ids.size(); ++i)
        table.gmat().row(ids[i]) += out.gmat().row(i);
    });
  return out;
}

// ---- fused causal multi-head self-attention ----
// q,k,v: (B*T x D) with D = heads * head_dim. One tape node, handwritten
// backward; keeps per-step graphs small.
template <class S>
Tensor<S> causal_self_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                int64_t batch, int64_t time, int64_t heads) {
  const int64_t dim = q.view_cols();
  if (dim % heads != 0) throw std::invalid_argument("attention: heads must divide dim");
  if (q.view_rows() != batch * time)
    throw std::invalid_argument("attention: rows != batch*time");
  detail::check_same_shape(q, k, "attention");
  detail::check_same_shape(q, v, "attention");
  const int64_t hd = dim / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
  auto out = detail::make_out<S>(q.shape());
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto probs = std::make_shared<std::vector<Mat>>();  // saved softmax weights
  probs->reserve(batch * heads);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      auto Q = q.mat().block(b * time, h * hd, time, hd);
      auto K = k.mat().block(b * time, h * hd, time, hd);
      auto V = v.mat().block(b * time, h * hd, time, hd);
      Mat scores = (Q * K.transpose()) * inv_sqrt;
      Mat P(time, time);
      for (int64_t t = 0; t < time; ++t) {
        S m = scores.row(t).head(t + 1).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e =
            (scores.row(t).head(t + 1).array() - m).exp();
        P.row(t).setZero();
        P.row(t).head(t + 1) = (e / e.sum()).matrix();
      }
      out.mat().block(b * time, h * hd, time, hd).noalias() = P * V;
      probs->push_back(std::move(P));
    }
  }
  if (detail::want_grad<S>({q, k, v}))
    Tape<S>::current()->record(out, [q, k, v, out, probs, batch, time, heads, hd, inv_sqrt] {
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
          const Mat& P = (*probs)[b * heads + h];
          auto Q = q.mat().block(b * time, h * hd, time, hd);
          auto K = k.mat().block(b * time, h * hd, time, hd);
          auto V = v.mat().block(b * time, h * hd, time, hd);
          auto GO = out.gmat().block(b * time, h * hd, time, hd);
          Mat dP = GO * V.transpose();
          Mat dS(time, time);
          for (int64_t t = 0; t < time; ++t) {
            S dot = (dP.row(t).array() * P.row(t).array()).sum();
            dS.row(t) = (P.row(t).array() * (dP.row(t).array() - dot)).matrix();
          }
          dS *= inv_sqrt;
          v.gmat().block(b * time, h * hd, time, hd).noalias() += P.transpose() * GO;
          q.gmat().block(b * time, h * hd, time, hd).noalias() += dS * K;
          k.gmat().block(b * time, h * hd, time, hd).noalias() += dS.transpose() * Q;
        }
      }
    });
  return out;
}

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TensorF = Tensor<float>;
using TapeF = Tape<float>;

}  // namespace gere
