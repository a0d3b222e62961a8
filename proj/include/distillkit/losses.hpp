#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include <Eigen/Core>

namespace distillkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LossConfig {
  double lambda_reg = 1e-4;
  double distill_ratio = 0.5;
  /// Floor applied to predicted probabilities inside logarithms.
  double epsilon = 1e-8;
  /// Use ||e_s - e_t||^2 instead of ||e_s - e_t|| for the feature term.
  bool squared_distance = false;

  void validate() const;
};

/// (lambda/2) * theta_sq_norm
double l2_penalty(double theta_sq_norm, const LossConfig &cfg);

/// sum_b sum_c y log(y / max(y_hat, eps)) + (lambda/2)||theta||^2.
/// Terms with y == 0 contribute exactly 0. Summed (not averaged) over B.
double kl_loss(const Matrix &y, const Matrix &y_hat, double theta_sq_norm, const LossConfig &cfg);

/// -sum_b sum_c y log(max(y_hat, eps)) + (lambda/2)||theta||^2.
double entropy_loss(const Matrix &y, const Matrix &y_hat, double theta_sq_norm,
                    const LossConfig &cfg);

/// d/d(y_hat) of either loss above (they differ by a y-only term).
Matrix probability_loss_grad(const Matrix &y, const Matrix &y_hat, const LossConfig &cfg);

/// -sum y log y over the whole batch.
double label_entropy(const Matrix &y);

/// Mean over rows of ||e_s - e_t||_2 (or its square, per cfg).
double feature_distance_loss(const Matrix &e_student, const Matrix &e_teacher,
                             const LossConfig &cfg = {});
/// d/d(e_student); rows with zero distance get a zero subgradient.
Matrix feature_distance_grad(const Matrix &e_student, const Matrix &e_teacher,
                             const LossConfig &cfg = {});

/// ratio * ce + (1 - ratio) * dist
double distill_loss(double ce, double dist, const LossConfig &cfg);

Matrix softmax(const Matrix &logits);
/// Pulls d(loss)/d(probabilities) back to d(loss)/d(logits).
Matrix softmax_backward(const Matrix &probabilities, const Matrix &d_probabilities);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t dimensions = 0;
  double rel_tol = 0.0;
  bool passed = false;

  std::string text() const;
};

/// Central finite differences with step h against an analytic gradient.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const std::function<double(const Vector &)> &loss_fn,
                           const std::function<Vector(const Vector &)> &gradient_fn,
                           const Vector &inputs, double rel_tol, double step = 1e-5,
                           double abs_floor = 1e-6);

} // namespace distillkit
