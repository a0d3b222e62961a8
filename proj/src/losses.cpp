#include "distillkit/losses.hpp"

#include <cmath>
#include <sstream>

#include "distillkit/error.hpp"

namespace distillkit {

namespace {

void check_pair(const Matrix &a, const Matrix &b, const char *what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgumentError(std::string(what) + ": shape mismatch [" +
                               std::to_string(a.rows()) + "," + std::to_string(a.cols()) +
                               "] vs [" + std::to_string(b.rows()) + "," +
                               std::to_string(b.cols()) + "]");
}

void check_nonnegative(const Matrix &m, const char *what) {
  if ((m.array() < 0.0).any())
    throw InvalidArgumentError(std::string(what) + ": negative probability entry");
}

} // namespace

void LossConfig::validate() const {
  if (!(lambda_reg >= 0.0)) throw InvalidArgumentError("lambda_reg must be >= 0");
  if (!(distill_ratio >= 0.0 && distill_ratio <= 1.0))
    throw InvalidArgumentError("distill_ratio must lie in [0,1]");
  if (!(epsilon > 0.0)) throw InvalidArgumentError("epsilon must be > 0");
}

double l2_penalty(double theta_sq_norm, const LossConfig &cfg) {
  return 0.5 * cfg.lambda_reg * theta_sq_norm;
}

double kl_loss(const Matrix &y, const Matrix &y_hat, double theta_sq_norm,
               const LossConfig &cfg) {
  check_pair(y, y_hat, "kl_loss");
  check_nonnegative(y, "kl_loss");
  check_nonnegative(y_hat, "kl_loss");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double t = y(i, j);
      if (t > 0.0) sum += t * std::log(t / std::max(y_hat(i, j), cfg.epsilon));
    }
  return sum + l2_penalty(theta_sq_norm, cfg);
}

double entropy_loss(const Matrix &y, const Matrix &y_hat, double theta_sq_norm,
                    const LossConfig &cfg) {
  check_pair(y, y_hat, "entropy_loss");
  check_nonnegative(y, "entropy_loss");
  check_nonnegative(y_hat, "entropy_loss");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double t = y(i, j);
      if (t > 0.0) sum -= t * std::log(std::max(y_hat(i, j), cfg.epsilon));
    }
  return sum + l2_penalty(theta_sq_norm, cfg);
}

Matrix probability_loss_grad(const Matrix &y, const Matrix &y_hat, const LossConfig &cfg) {
  check_pair(y, y_hat, "probability_loss_grad");
  Matrix g = Matrix::Zero(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (y(i, j) > 0.0 && y_hat(i, j) > cfg.epsilon) g(i, j) = -y(i, j) / y_hat(i, j);
  return g;
}

double label_entropy(const Matrix &y) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (y(i, j) > 0.0) h -= y(i, j) * std::log(y(i, j));
  return h;
}

double feature_distance_loss(const Matrix &e_student, const Matrix &e_teacher,
                             const LossConfig &cfg) {
  check_pair(e_student, e_teacher, "feature_distance_loss");
  if (e_student.rows() == 0) return 0.0;
  const Vector sq = (e_student - e_teacher).rowwise().squaredNorm();
  const double total = cfg.squared_distance ? sq.sum() : sq.array().sqrt().sum();
  return total / static_cast<double>(e_student.rows());
}

Matrix feature_distance_grad(const Matrix &e_student, const Matrix &e_teacher,
                             const LossConfig &cfg) {
  check_pair(e_student, e_teacher, "feature_distance_grad");
  Matrix g = e_student - e_teacher;
  if (g.rows() == 0) return g;
  const double inv_b = 1.0 / static_cast<double>(g.rows());
  if (cfg.squared_distance) return g * (2.0 * inv_b);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double n = g.row(i).norm();
    if (n > 0.0)
      g.row(i) *= inv_b / n;
    else
      g.row(i).setZero();
  }
  return g;
}

double distill_loss(double ce, double dist, const LossConfig &cfg) {
  return cfg.distill_ratio * ce + (1.0 - cfg.distill_ratio) * dist;
}

Matrix softmax(const Matrix &logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix softmax_backward(const Matrix &probabilities, const Matrix &d_probabilities) {
  check_pair(probabilities, d_probabilities, "softmax_backward");
  const Vector dot = (probabilities.array() * d_probabilities.array()).rowwise().sum();
  return probabilities.array() * (d_probabilities.colwise() - dot).array();
}

std::string GradCheckReport::text() const {
  std::ostringstream os;
  os << "grad_check: " << (passed ? "PASS" : "FAIL") << "\n"
     << "  dimensions     " << dimensions << "\n"
     << "  max rel error  " << max_rel_error << " (tolerance " << rel_tol << ")\n"
     << "  worst index    " << worst_index << "\n"
     << "  analytic       " << analytic_at_worst << "\n"
     << "  numeric        " << numeric_at_worst << "\n";
  return os.str();
}

GradCheckReport grad_check(const std::function<double(const Vector &)> &loss_fn,
                           const std::function<Vector(const Vector &)> &gradient_fn,
                           const Vector &inputs, double rel_tol, double step,
                           double abs_floor) {
  const Vector analytic = gradient_fn(inputs);
  if (analytic.size() != inputs.size())
    throw InvalidArgumentError("gradient size does not match input size");
  if (!analytic.allFinite()) throw NumericalError("analytic gradient is not finite");

  GradCheckReport report;
  report.dimensions = static_cast<std::size_t>(inputs.size());
  report.rel_tol = rel_tol;
  Vector x = inputs;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss_fn(x);
    x[i] = orig - step;
    const double down = loss_fn(x);
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    if (!std::isfinite(numeric)) throw NumericalError("finite-difference gradient is not finite");
    const double a = analytic[i];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = static_cast<std::size_t>(i);
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_rel_error < rel_tol;
  return report;
}

} // namespace distillkit
