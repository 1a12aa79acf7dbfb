#include "lwbc/gradcheck.hpp"

#include <cmath>

#include "lwbc/classifier.hpp"

namespace lwbc {
namespace {

bool near_kink(const Classifier& net, const Matrix& x) {
  Matrix pre = x * net.w1;
  pre.rowwise() += net.b1.transpose();
  return (pre.array().abs() < 2e-3).any();
}

}  // namespace

GradcheckProblem draw_gradcheck_problem(RngStream& rng) {
  GradcheckProblem p;
  while (true) {
    const auto d_in = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto hidden = static_cast<Eigen::Index>(1 + rng.below(8));
    const auto classes = static_cast<Eigen::Index>(2 + rng.below(7));
    const auto batch = static_cast<Eigen::Index>(1 + rng.below(6));
    p.net = init_classifier<double>(d_in, hidden, classes, rng);
    for (Eigen::Index i = 0; i < hidden; ++i) p.net.b1(i) = rng.uniform(-0.5, 0.5);
    for (Eigen::Index i = 0; i < classes; ++i) p.net.b2(i) = rng.uniform(-0.5, 0.5);
    p.x.resize(batch, d_in);
    for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = rng.normal();
    p.labels.resize(static_cast<std::size_t>(batch));
    p.weights.resize(static_cast<std::size_t>(batch));
    for (auto& y : p.labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    for (auto& w : p.weights) w = rng.uniform(0.0, 3.0);
    p.teacher.resize(batch, classes);
    for (Eigen::Index i = 0; i < p.teacher.size(); ++i) p.teacher.data()[i] = rng.normal(0.0, 2.0);
    p.shape = "d_in=" + std::to_string(d_in) + " hidden=" + std::to_string(hidden) +
              " classes=" + std::to_string(classes) + " batch=" + std::to_string(batch);
    if (!near_kink(p.net, p.x)) return p;
  }
}

namespace {

// Loss values for the finite differences come straight from the numeric
// kernels, not from the backward routines under test. They are evaluated in
// extended precision so that coordinates with gradients near 1e-8 still get
// a central difference accurate to the tolerance.
using Wide = long double;

BasicClassifier<Wide> widen(const Classifier& net) {
  BasicClassifier<Wide> w;
  w.w1 = net.w1.cast<Wide>();
  w.b1 = net.b1.cast<Wide>();
  w.w2 = net.w2.cast<Wide>();
  w.b2 = net.b2.cast<Wide>();
  return w;
}

Wide weighted_ce_value(const BasicClassifier<Wide>& net, const GradcheckProblem& p, bool unit_weights) {
  const MatrixT<Wide> logits = forward(net, p.x.cast<Wide>());
  Wide total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Wide w = unit_weights ? 1 : p.weights[static_cast<std::size_t>(i)];
    total += w * cross_entropy(logits.row(i), p.labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<Wide>(logits.rows());
}

Wide kd_value(const BasicClassifier<Wide>& net, const GradcheckProblem& p, double tau) {
  const MatrixT<Wide> logits = forward(net, p.x.cast<Wide>());
  const MatrixT<Wide> teacher = p.teacher.cast<Wide>();
  Wide total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const RowVectorT<Wide> t = stable_softmax((teacher.row(i) / Wide(tau)).eval());
    const RowVectorT<Wide> s = stable_softmax((logits.row(i) / Wide(tau)).eval());
    total += kl_divergence(t, s);
  }
  return total / static_cast<Wide>(logits.rows());
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  struct Spec {
    std::string name;
    int kind;  // 0 ce, 1 weighted ce, 2 kd
    double tau;
  };
  const std::vector<Spec> specs = {{"ce", 0, 0.0}, {"weighted_ce", 1, 0.0}, {"kd_tau1", 2, 1.0}, {"kd_tau2.5", 2, 2.5}};

  GradcheckReport report;
  report.passed = true;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    GradcheckCase c;
    c.loss = spec.name;
    RngStream rng(options.seed, s);
    for (int k = 0; k < options.configs; ++k) {
      const GradcheckProblem p = draw_gradcheck_problem(rng);
      Grads g;
      if (spec.kind == 2) {
        g = kd_backward(p.net, p.x, p.teacher, spec.tau);
        if (options.flip_kd_sign) g *= -1.0;
      } else {
        const std::vector<double> ones(p.labels.size(), 1.0);
        g = weighted_ce_backward(p.net, p.x, p.labels, spec.kind == 0 ? ones : p.weights);
      }
      Classifier probe = p.net;
      const auto wide_loss = [&](const Classifier& net) {
        const auto w = widen(net);
        return spec.kind == 2 ? kd_value(w, p, spec.tau) : weighted_ce_value(w, p, spec.kind == 0);
      };
      // Offsets from the base loss keep the extra precision through the
      // double-valued interface.
      const Wide base = wide_loss(p.net);
      const auto loss = [&](const Vector& params) {
        unflatten_params(probe, params);
        return static_cast<double>(wide_loss(probe) - base);
      };
      const double err = finite_diff_check(loss, flatten_grads(g), flatten_params(p.net), options.step);
      if (k == 0 || err > c.max_rel_error) {
        c.max_rel_error = err;
        c.worst_config = p.shape;
      }
      ++c.configs;
    }
    c.passed = c.max_rel_error < options.tolerance;
    report.passed = report.passed && c.passed;
    report.cases.push_back(std::move(c));
  }
  return report;
}

}  // namespace lwbc
