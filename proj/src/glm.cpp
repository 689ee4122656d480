#include "aptmle/glm.hpp"

#include "aptmle/error.hpp"
#include "aptmle/stats.hpp"

#include <algorithm>
#include <cmath>

namespace aptmle {

namespace {

constexpr double kMuFloor = 1e-15;
constexpr double kVarianceFloor = 1e-12;
// A linear predictor beyond this magnitude means fitted probabilities have
// collapsed onto 0 or 1, i.e. (quasi-)separation.
constexpr double kSeparationEta = 30.0;
constexpr int kMaxHalvings = 40;

double xlogy_ratio(double y, double mu) { return y > 0.0 ? y * std::log(y / mu) : 0.0; }

Eigen::VectorXd mean_response(const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    mu(i) = std::clamp(expit(eta(i)), kMuFloor, 1.0 - kMuFloor);
  }
  return mu;
}

}  // namespace

double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                         const Eigen::VectorXd& weights) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double w = weights.size() == 0 ? 1.0 : weights(i);
    total += w * (xlogy_ratio(y(i), mu(i)) + xlogy_ratio(1.0 - y(i), 1.0 - mu(i)));
  }
  return 2.0 * total;
}

std::vector<bool> find_aliased_columns(const Eigen::MatrixXd& x, double tolerance) {
  std::vector<bool> aliased(static_cast<std::size_t>(x.cols()), false);
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd v = x.col(j);
    const double norm0 = v.norm();
    if (norm0 == 0.0) {
      aliased[static_cast<std::size_t>(j)] = true;
      continue;
    }
    // Two Gram-Schmidt passes keep the residual numerically orthogonal.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) v -= q.dot(v) * q;
    }
    const double norm = v.norm();
    if (norm <= tolerance * norm0) {
      aliased[static_cast<std::size_t>(j)] = true;
    } else {
      basis.push_back(v / norm);
    }
  }
  return aliased;
}

GlmFit fit_logistic(const DesignMatrix& x, const Eigen::VectorXd& y, const GlmOptions& options) {
  const Eigen::Index n = x.rows();
  if (y.size() != n) fail(ErrorCode::InvalidArgument, "response length does not match design rows");
  if (options.offset.size() != 0 && options.offset.size() != n) {
    fail(ErrorCode::InvalidArgument, "offset length does not match design rows");
  }
  if (options.weights.size() != 0 && options.weights.size() != n) {
    fail(ErrorCode::InvalidArgument, "weight length does not match design rows");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(y(i) >= 0.0 && y(i) <= 1.0)) fail(ErrorCode::InvalidArgument, "responses must lie in [0,1]");
  }
  if (!x.values.allFinite()) fail(ErrorCode::InvalidArgument, "design matrix has non-finite entries");

  const Eigen::Index p_full = x.cols() + (options.intercept ? 1 : 0);
  Eigen::MatrixXd full(n, p_full);
  if (options.intercept) {
    full.col(0).setOnes();
    full.rightCols(x.cols()) = x.values;
  } else {
    full = x.values;
  }

  GlmFit fit;
  fit.intercept = options.intercept;
  fit.aliased = find_aliased_columns(full);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < p_full; ++j) {
    if (!fit.aliased[static_cast<std::size_t>(j)]) kept.push_back(j);
  }
  fit.rank_deficient = static_cast<Eigen::Index>(kept.size()) < p_full;
  const auto k = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd xk(n, k);
  for (Eigen::Index c = 0; c < k; ++c) xk.col(c) = full.col(kept[static_cast<std::size_t>(c)]);

  const Eigen::VectorXd offset = options.offset.size() == 0 ? Eigen::VectorXd::Zero(n) : options.offset;
  const Eigen::VectorXd prior = options.weights.size() == 0 ? Eigen::VectorXd::Ones(n) : options.weights;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd eta = offset;
  Eigen::VectorXd mu = mean_response(eta);
  double deviance = binomial_deviance(y, mu, prior);
  fit.deviance_trace.push_back(deviance);

  bool converged = false;
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd residual = prior.cwiseProduct(y - mu);
    const Eigen::VectorXd score = xk.transpose() * residual;
    if (k == 0 || score.cwiseAbs().maxCoeff() < options.score_tolerance) {
      converged = true;
      break;
    }

    Eigen::VectorXd variance = mu.cwiseProduct(Eigen::VectorXd::Ones(n) - mu);
    variance = variance.cwiseMax(kVarianceFloor);
    const Eigen::VectorXd working = (eta - offset) + (y - mu).cwiseQuotient(variance);
    const Eigen::VectorXd root_w = prior.cwiseProduct(variance).cwiseSqrt();
    const Eigen::MatrixXd wx = root_w.asDiagonal() * xk;
    const Eigen::VectorXd wz = root_w.cwiseProduct(working);
    const Eigen::VectorXd proposal = wx.colPivHouseholderQr().solve(wz);
    if (!proposal.allFinite()) break;

    // Step-halving until the deviance does not increase.
    const Eigen::VectorXd step = proposal - beta;
    double scale = 1.0;
    Eigen::VectorXd candidate = proposal;
    Eigen::VectorXd cand_eta = offset + xk * candidate;
    Eigen::VectorXd cand_mu = mean_response(cand_eta);
    double cand_dev = binomial_deviance(y, cand_mu, prior);
    int halvings = 0;
    while (!(cand_dev <= deviance * (1.0 + 1e-14) + 1e-300) && halvings < kMaxHalvings) {
      scale *= 0.5;
      candidate = beta + scale * step;
      cand_eta = offset + xk * candidate;
      cand_mu = mean_response(cand_eta);
      cand_dev = binomial_deviance(y, cand_mu, prior);
      ++halvings;
    }
    if (halvings == kMaxHalvings) break;

    const double change = std::abs(deviance - cand_dev) / (std::abs(cand_dev) + 0.1);
    beta = candidate;
    eta = cand_eta;
    mu = cand_mu;
    deviance = cand_dev;
    fit.deviance_trace.push_back(deviance);
    if (change < options.deviance_tolerance) {
      converged = true;
      ++iter;
      break;
    }
  }

  fit.iterations = iter;
  fit.deviance = deviance;
  fit.coefficients = Eigen::VectorXd::Zero(p_full);
  for (Eigen::Index c = 0; c < k; ++c) fit.coefficients(kept[static_cast<std::size_t>(c)]) = beta(c);

  const Eigen::VectorXd lin = xk * beta;
  const bool separated = k > 0 && lin.cwiseAbs().maxCoeff() > kSeparationEta;
  fit.converged = converged && beta.allFinite() && !separated;
  return fit;
}

Eigen::VectorXd linear_predictor(const GlmFit& fit, const Eigen::MatrixXd& x) {
  const Eigen::Index p = x.cols() + (fit.intercept ? 1 : 0);
  if (p != fit.coefficients.size()) {
    fail(ErrorCode::InvalidArgument, "design column count does not match the fitted model");
  }
  if (fit.intercept) {
    return (x * fit.coefficients.tail(x.cols())).array() + fit.coefficients(0);
  }
  return x * fit.coefficients;
}

Eigen::VectorXd predict_response(const GlmFit& fit, const DesignMatrix& x, const Eigen::VectorXd& offset) {
  Eigen::VectorXd eta = linear_predictor(fit, x.values);
  if (offset.size() != 0) {
    if (offset.size() != eta.size()) fail(ErrorCode::InvalidArgument, "offset length does not match design rows");
    eta += offset;
  }
  Eigen::VectorXd out(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    out(i) = std::clamp(expit(eta(i)), kPredictionClip, 1.0 - kPredictionClip);
  }
  return out;
}

}  // namespace aptmle
