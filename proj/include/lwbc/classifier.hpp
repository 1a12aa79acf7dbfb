#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lwbc/numerics.hpp"
#include "lwbc/rng.hpp"

namespace lwbc {

/// How per-sample losses are reduced over the samples they are computed on.
enum class Reduction { kMean, kSum };

/// Adam moments for every parameter block of a classifier.
template <typename Scalar>
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  MatrixT<Scalar> m_w1, v_w1, m_w2, v_w2;
  VectorT<Scalar> m_b1, v_b1, m_b2, v_b2;
  std::uint64_t step = 0;
};

/// Gradients of one loss with respect to every classifier parameter, plus the
/// loss value they were taken from.
template <typename Scalar>
struct ClassifierGrads {
  MatrixT<Scalar> w1;
  VectorT<Scalar> b1;
  MatrixT<Scalar> w2;
  VectorT<Scalar> b2;
  Scalar loss = Scalar(0);

  ClassifierGrads& operator+=(const ClassifierGrads& o) {
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    loss += o.loss;
    return *this;
  }
  ClassifierGrads& operator*=(Scalar s) {
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
    loss *= s;
    return *this;
  }
};

/// Two fully connected layers with a ReLU between them:
/// logits = relu(X * w1 + b1) * w2 + b2.
template <typename Scalar>
struct BasicClassifier {
  MatrixT<Scalar> w1;  // d_in x d_hidden
  VectorT<Scalar> b1;  // d_hidden
  MatrixT<Scalar> w2;  // d_hidden x C
  VectorT<Scalar> b2;  // C
  AdamState<Scalar> adam;

  Eigen::Index input_dim() const { return w1.rows(); }
  Eigen::Index hidden_dim() const { return w1.cols(); }
  Eigen::Index num_classes() const { return w2.cols(); }
  Eigen::Index num_params() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

  bool operator==(const BasicClassifier& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && adam.step == o.adam.step &&
           adam.m_w1 == o.adam.m_w1 && adam.v_w1 == o.adam.v_w1 && adam.m_b1 == o.adam.m_b1 &&
           adam.v_b1 == o.adam.v_b1 && adam.m_w2 == o.adam.m_w2 && adam.v_w2 == o.adam.v_w2 &&
           adam.m_b2 == o.adam.m_b2 && adam.v_b2 == o.adam.v_b2;
  }
};

using Classifier = BasicClassifier<double>;
using Grads = ClassifierGrads<double>;

template <typename Scalar>
BasicClassifier<Scalar> init_classifier(Eigen::Index d_in, Eigen::Index d_hidden, Eigen::Index num_classes,
                                        RngStream& rng) {
  if (d_in < 1 || d_hidden < 1 || num_classes < 1) {
    throw ValidationError("init_classifier: dimensions must be positive, got " + std::to_string(d_in) + ", " +
                          std::to_string(d_hidden) + ", " + std::to_string(num_classes));
  }
  BasicClassifier<Scalar> s;
  const auto fill = [&rng](MatrixT<Scalar>& w, Eigen::Index rows, Eigen::Index cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    w.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = Scalar(rng.uniform(-bound, bound));
  };
  fill(s.w1, d_in, d_hidden);
  fill(s.w2, d_hidden, num_classes);
  s.b1 = VectorT<Scalar>::Zero(d_hidden);
  s.b2 = VectorT<Scalar>::Zero(num_classes);
  s.adam.m_w1 = s.adam.v_w1 = MatrixT<Scalar>::Zero(d_in, d_hidden);
  s.adam.m_w2 = s.adam.v_w2 = MatrixT<Scalar>::Zero(d_hidden, num_classes);
  s.adam.m_b1 = s.adam.v_b1 = VectorT<Scalar>::Zero(d_hidden);
  s.adam.m_b2 = s.adam.v_b2 = VectorT<Scalar>::Zero(num_classes);
  return s;
}

namespace detail {

template <typename Scalar>
struct ForwardCache {
  MatrixT<Scalar> pre;     // X * w1 + b1
  MatrixT<Scalar> hidden;  // relu(pre)
  MatrixT<Scalar> logits;
};

template <typename Scalar, typename Derived>
ForwardCache<Scalar> forward_cached(const BasicClassifier<Scalar>& s, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != s.input_dim()) {
    throw ShapeError("forward: input is " + shape_string(x.rows(), x.cols()) + " but classifier expects " +
                     std::to_string(s.input_dim()) + " features");
  }
  ForwardCache<Scalar> c;
  c.pre = matmul(x, s.w1);
  c.pre.rowwise() += s.b1.transpose();
  c.hidden = c.pre.cwiseMax(Scalar(0));
  c.logits = matmul(c.hidden, s.w2);
  c.logits.rowwise() += s.b2.transpose();
  require_finite(c.logits, "forward");
  return c;
}

/// Backpropagates d(loss)/d(logits) through both layers.
template <typename Scalar, typename Derived>
ClassifierGrads<Scalar> backprop(const BasicClassifier<Scalar>& s, const Eigen::MatrixBase<Derived>& x,
                                 const ForwardCache<Scalar>& c, const MatrixT<Scalar>& d_logits) {
  ClassifierGrads<Scalar> g;
  g.w2 = c.hidden.transpose() * d_logits;
  g.b2 = d_logits.colwise().sum().transpose();
  MatrixT<Scalar> d_hidden = d_logits * s.w2.transpose();
  d_hidden.array() *= (c.pre.array() > Scalar(0)).template cast<Scalar>();
  g.w1 = x.transpose() * d_hidden;
  g.b1 = d_hidden.colwise().sum().transpose();
  return g;
}

template <typename Scalar>
Scalar reduction_scale(Reduction r, Eigen::Index n) {
  return r == Reduction::kMean ? Scalar(1) / Scalar(n) : Scalar(1);
}

}  // namespace detail

template <typename Scalar, typename Derived>
MatrixT<Scalar> forward(const BasicClassifier<Scalar>& s, const Eigen::MatrixBase<Derived>& x) {
  return detail::forward_cached(s, x).logits;
}

/// Row-wise argmax of logits; ties resolve to the lowest class index.
template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

template <typename Scalar, typename Derived>
std::vector<int> predict(const BasicClassifier<Scalar>& s, const Eigen::MatrixBase<Derived>& x) {
  return argmax_rows(forward(s, x));
}

/// Gradient of sum_i w_i * CE(logits_i, y_i), divided by the row count under
/// Reduction::kMean.
template <typename Scalar, typename Derived>
ClassifierGrads<Scalar> weighted_ce_backward(const BasicClassifier<Scalar>& s, const Eigen::MatrixBase<Derived>& x,
                                             std::span<const int> labels, std::span<const double> weights,
                                             Reduction reduction = Reduction::kMean) {
  const auto n = x.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(weights.size()) != n) {
    throw ShapeError("weighted_ce_backward: batch of " + std::to_string(n) + " rows with " +
                     std::to_string(labels.size()) + " labels and " + std::to_string(weights.size()) + " weights");
  }
  for (double w : weights)
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("weighted_ce_backward: weights must be finite and >= 0");
  if (n == 0) throw ValidationError("weighted_ce_backward: empty batch");

  const auto cache = detail::forward_cached(s, x);
  const Scalar scale = detail::reduction_scale<Scalar>(reduction, n);
  MatrixT<Scalar> d_logits(n, s.num_classes());
  Scalar loss(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto w = Scalar(weights[static_cast<std::size_t>(i)]);
    const int y = labels[static_cast<std::size_t>(i)];
    loss += w * cross_entropy(cache.logits.row(i), y);
    d_logits.row(i) = stable_softmax(cache.logits.row(i));
    d_logits(i, y) -= Scalar(1);
    d_logits.row(i) *= w * scale;
  }
  auto g = detail::backprop(s, x, cache, d_logits);
  g.loss = loss * scale;
  return g;
}

/// Gradient of sum_i KL(softmax(teacher_i / tau) || softmax(student_i / tau))
/// with respect to the student only. No tau^2 rescaling.
template <typename Scalar, typename Derived, typename TeacherDerived>
ClassifierGrads<Scalar> kd_backward(const BasicClassifier<Scalar>& student, const Eigen::MatrixBase<Derived>& x,
                                    const Eigen::MatrixBase<TeacherDerived>& teacher_logits, double tau,
                                    Reduction reduction = Reduction::kMean) {
  if (!(tau > 0)) throw ValidationError("kd_backward: temperature must be positive");
  const auto n = x.rows();
  if (n == 0) throw ValidationError("kd_backward: empty batch");
  if (teacher_logits.rows() != n || teacher_logits.cols() != student.num_classes()) {
    throw ShapeError("kd_backward: teacher logits are " +
                     shape_string(teacher_logits.rows(), teacher_logits.cols()) + ", expected " +
                     shape_string(n, student.num_classes()));
  }
  const auto cache = detail::forward_cached(student, x);
  const Scalar inv_tau = Scalar(1) / Scalar(tau);
  const Scalar scale = detail::reduction_scale<Scalar>(reduction, n);
  MatrixT<Scalar> d_logits(n, student.num_classes());
  Scalar loss(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVectorT<Scalar> log_p = log_softmax((teacher_logits.row(i) * inv_tau).eval());
    const RowVectorT<Scalar> log_q = log_softmax((cache.logits.row(i) * inv_tau).eval());
    const RowVectorT<Scalar> p = log_p.array().exp().matrix();
    const RowVectorT<Scalar> q = log_q.array().exp().matrix();
    Scalar kl(0);
    for (Eigen::Index j = 0; j < p.size(); ++j)
      if (p(j) > Scalar(0)) kl += p(j) * (log_p(j) - log_q(j));
    loss += kl;
    d_logits.row(i) = (q - p) * (inv_tau * scale);
  }
  auto g = detail::backprop(student, x, cache, d_logits);
  g.loss = loss * scale;
  return g;
}

/// One Adam update with bias correction. Zero gradients leave parameters unchanged.
template <typename Scalar>
void adam_step(BasicClassifier<Scalar>& s, const ClassifierGrads<Scalar>& g, double lr) {
  if (g.w1.rows() != s.w1.rows() || g.w1.cols() != s.w1.cols() || g.w2.rows() != s.w2.rows() ||
      g.w2.cols() != s.w2.cols() || g.b1.size() != s.b1.size() || g.b2.size() != s.b2.size()) {
    throw ShapeError("adam_step: gradient shapes do not match parameters");
  }
  using A = AdamState<Scalar>;
  auto& a = s.adam;
  ++a.step;
  const Scalar c1 = Scalar(1) - Scalar(std::pow(A::kBeta1, static_cast<double>(a.step)));
  const Scalar c2 = Scalar(1) - Scalar(std::pow(A::kBeta2, static_cast<double>(a.step)));
  const auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = Scalar(A::kBeta1) * m + Scalar(1 - A::kBeta1) * grad;
    v = Scalar(A::kBeta2) * v + Scalar(1 - A::kBeta2) * grad.cwiseProduct(grad);
    param.array() -= Scalar(lr) * (m.array() / c1) / ((v.array() / c2).sqrt() + Scalar(A::kEpsilon));
  };
  update(s.w1, a.m_w1, a.v_w1, g.w1);
  update(s.b1, a.m_b1, a.v_b1, g.b1);
  update(s.w2, a.m_w2, a.v_w2, g.w2);
  update(s.b2, a.m_b2, a.v_b2, g.b2);
  require_finite(s.w1, "adam_step");
  require_finite(s.w2, "adam_step");
  require_finite(s.b1, "adam_step");
  require_finite(s.b2, "adam_step");
}

/// Parameters in the order w1, b1, w2, b2, each row-major.
template <typename Scalar>
VectorT<Scalar> flatten_params(const BasicClassifier<Scalar>& s) {
  VectorT<Scalar> out(s.num_params());
  out << Eigen::Map<const VectorT<Scalar>>(s.w1.data(), s.w1.size()), s.b1,
      Eigen::Map<const VectorT<Scalar>>(s.w2.data(), s.w2.size()), s.b2;
  return out;
}

template <typename Scalar>
VectorT<Scalar> flatten_grads(const ClassifierGrads<Scalar>& g) {
  VectorT<Scalar> out(g.w1.size() + g.b1.size() + g.w2.size() + g.b2.size());
  out << Eigen::Map<const VectorT<Scalar>>(g.w1.data(), g.w1.size()), g.b1,
      Eigen::Map<const VectorT<Scalar>>(g.w2.data(), g.w2.size()), g.b2;
  return out;
}

template <typename Scalar>
void unflatten_params(BasicClassifier<Scalar>& s, const VectorT<Scalar>& flat) {
  if (flat.size() != s.num_params()) throw ShapeError("unflatten_params: wrong parameter count");
  Eigen::Index off = 0;
  const auto take = [&](auto& block) {
    Eigen::Map<VectorT<Scalar>>(block.data(), block.size()) = flat.segment(off, block.size());
    off += block.size();
  };
  take(s.w1);
  take(s.b1);
  take(s.w2);
  take(s.b2);
}

}  // namespace lwbc
