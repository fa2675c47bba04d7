#pragma once

// Linear inverse problems y = H x + eps, eps ~ N(0, sigma2 I).
//
// Two likelihood scores are provided:
//  * likelihood_score: grad_x log N(y; H x/alpha_t, sigma2 I + (sigma_t/alpha_t)^2 H H^T),
//    the prior-free form, evaluated in the SVD basis of H;
//  * GaussianPriorLikelihood: the exact grad_x log p_t(y | x_t) when x_0 has a
//    Gaussian prior, used as the reference for end-to-end posterior checks.

#include "cdiff/common.hpp"
#include "cdiff/csv.hpp"
#include "cdiff/density_io.hpp"
#include "cdiff/schedule.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <json.hpp>

#include <cmath>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace cdiff {

class LinearMeasurement {
 public:
  LinearMeasurement(Mat H, double sigma2) : H_(std::move(H)), sigma2_(sigma2) {
    require(H_.rows() >= 1 && H_.cols() >= 1, "LinearMeasurement: empty H");
    require(H_.rows() <= H_.cols(), "LinearMeasurement: more measurements than unknowns is not supported");
    require(H_.allFinite(), "LinearMeasurement: H must be finite");
    require(sigma2_ > 0 && std::isfinite(sigma2_), "LinearMeasurement: sigma2 must be positive");
    Eigen::JacobiSVD<Mat> svd(H_, Eigen::ComputeFullU | Eigen::ComputeFullV);
    P_ = svd.matrixU().transpose();
    U_ = svd.matrixV().transpose();
    mu_ = svd.singularValues();
    const auto m = H_.rows(), d = H_.cols();
    require((P_ * P_.transpose() - Mat::Identity(m, m)).cwiseAbs().maxCoeff() < 1e-10,
            "LinearMeasurement: P is not orthogonal");
    require((U_ * U_.transpose() - Mat::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-10,
            "LinearMeasurement: U is not orthogonal");
    require((reconstruct() - H_).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, H_.cwiseAbs().maxCoeff()),
            "LinearMeasurement: SVD does not reconstruct H");
  }

  const Mat& H() const { return H_; }
  double sigma2() const { return sigma2_; }
  int m() const { return static_cast<int>(H_.rows()); }
  int d() const { return static_cast<int>(H_.cols()); }
  const Mat& P() const { return P_; }
  const Mat& U() const { return U_; }
  const Vec& singular_values() const { return mu_; }
  Vec lambdas() const { return mu_.cwiseAbs2(); }

  /// P^T [diag(mu), 0] U.
  Mat reconstruct() const {
    Mat D = Mat::Zero(H_.rows(), H_.cols());
    D.diagonal().head(mu_.size()) = mu_;
    return P_.transpose() * D * U_;
  }

  /// Indices i with lambda_i outside [sigma2, sigma2^2 * slack]; empty means the condition holds.
  std::vector<int> eigenvalue_condition_violations(double slack = 1.0) const {
    std::vector<int> bad;
    const Vec l = lambdas();
    for (Eigen::Index i = 0; i < l.size(); ++i)
      if (l[i] < sigma2_ || l[i] > slack * sigma2_ * sigma2_) bad.push_back(static_cast<int>(i));
    return bad;
  }

 private:
  Mat H_;
  double sigma2_;
  Mat P_, U_;
  Vec mu_;
};

inline void check_measurement_args(const LinearMeasurement& meas, const Vec& x, const Vec& y, double t) {
  require(x.size() == meas.d(), "inverse: x has wrong dimension");
  require(y.size() == meas.m(), "inverse: y has wrong dimension");
  check_time(t);
}

/// (H^T/alpha) Sigma_t^{-1} (y - H x/alpha), Sigma_t = sigma2 I + (e^t - 1) H H^T, via the SVD.
inline Vec likelihood_score(const LinearMeasurement& meas, const Vec& x, const Vec& y, double t) {
  check_measurement_args(meas, x, y, t);
  const double a = alpha_sigma(t).alpha;
  const double g = std::expm1(t);
  const Vec r = y - meas.H() * x / a;
  Vec pr = meas.P() * r;
  const Vec l = meas.lambdas();
  for (Eigen::Index i = 0; i < pr.size(); ++i) pr[i] /= meas.sigma2() + g * l[i];
  return meas.H().transpose() * (meas.P().transpose() * pr) / a;
}

/// Same quantity through a dense Cholesky solve.
inline Vec likelihood_score_dense(const LinearMeasurement& meas, const Vec& x, const Vec& y, double t) {
  check_measurement_args(meas, x, y, t);
  const double a = alpha_sigma(t).alpha;
  const Mat& H = meas.H();
  const Mat S = meas.sigma2() * Mat::Identity(meas.m(), meas.m()) + std::expm1(t) * H * H.transpose();
  return H.transpose() * S.llt().solve(y - H * x / a) / a;
}

/// log N(y; H x/alpha, Sigma_t).
inline double likelihood_log_density(const LinearMeasurement& meas, const Vec& x, const Vec& y, double t) {
  check_measurement_args(meas, x, y, t);
  const double a = alpha_sigma(t).alpha;
  const Mat& H = meas.H();
  const Mat S = meas.sigma2() * Mat::Identity(meas.m(), meas.m()) + std::expm1(t) * H * H.transpose();
  Eigen::LLT<Mat> llt(S);
  const Vec r = y - H * x / a;
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (r.dot(llt.solve(r)) + logdet + meas.m() * kLogTwoPi);
}

/// Score of x_t when x_0 ~ N(mean, cov).
struct GaussianPrior {
  Vec mean;
  Mat cov;

  GaussianPrior(Vec mean_, Mat cov_) : mean(std::move(mean_)), cov(std::move(cov_)) {
    require(mean.size() == cov.rows() && cov.rows() == cov.cols(), "GaussianPrior: shape mismatch");
    require((cov - cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()),
            "GaussianPrior: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    require(es.eigenvalues().minCoeff() > 0, "GaussianPrior: covariance not positive definite");
  }

  int d() const { return static_cast<int>(mean.size()); }

  Vec score(const Vec& x, double t) const {
    const auto [a, s] = alpha_sigma(t);
    const Mat C = a * a * cov + s * s * Mat::Identity(d(), d());
    return -C.llt().solve(x - a * mean);
  }

  Vec operator()(const Vec& x, double t) const { return score(x, t); }
};

/// Exact grad_x log p_t(y | x_t) under a Gaussian prior: x_0 | x_t ~ N(m, C)
/// with C = (cov^{-1} + alpha^2/sigma_t^2 I)^{-1}, m = C(cov^{-1} mean + alpha x_t/sigma_t^2).
class GaussianPriorLikelihood {
 public:
  GaussianPriorLikelihood(const LinearMeasurement& meas, GaussianPrior prior)
      : meas_(meas), prior_(std::move(prior)) {
    require(prior_.d() == meas.d(), "GaussianPriorLikelihood: prior dimension mismatch");
    prec_ = prior_.cov.llt().solve(Mat::Identity(prior_.d(), prior_.d()));
  }

  Vec operator()(const Vec& x, const Vec& y, double t) const {
    check_measurement_args(meas_, x, y, t);
    const auto [a, s] = alpha_sigma(t);
    const int d = prior_.d();
    const Mat& H = meas_.H();
    // K = (s^2 prec + a^2 I)^{-1}; m = K (s^2 prec mean + a x); C = s^2 K; dm/dx = a K.
    const Mat A = s * s * prec_ + a * a * Mat::Identity(d, d);
    const Eigen::LLT<Mat> llt(A);
    const Mat K = llt.solve(Mat::Identity(d, d));
    const Vec m = K * (s * s * (prec_ * prior_.mean) + a * x);
    const Mat S = meas_.sigma2() * Mat::Identity(meas_.m(), meas_.m()) + s * s * H * K * H.transpose();
    const Vec w = S.llt().solve(y - H * m);
    return a * K.transpose() * (H.transpose() * w);
  }

 private:
  LinearMeasurement meas_;
  GaussianPrior prior_;
  Mat prec_;
};

/// likelihood + prior score.
template <class Likelihood, class PriorScore>
Vec guided_score(const Likelihood& likelihood, const PriorScore& prior_score, const Vec& x, const Vec& y,
                 double t) {
  return likelihood(x, y, t) + prior_score(x, t);
}

template <class PriorScore>
Vec guided_score(const LinearMeasurement& meas, const PriorScore& prior_score, const Vec& x, const Vec& y,
                 double t) {
  return likelihood_score(meas, x, y, t) + prior_score(x, t);
}

struct GaussianPosterior {
  Vec mean;
  Mat cov;
};

/// Conditioning x ~ N(mean, cov) on y = H x + eps.
inline GaussianPosterior gaussian_posterior_oracle(const LinearMeasurement& meas, const GaussianPrior& prior,
                                                   const Vec& y) {
  require(prior.d() == meas.d() && y.size() == meas.m(), "posterior oracle: shape mismatch");
  const Mat prec = prior.cov.llt().solve(Mat::Identity(prior.d(), prior.d()));
  const Mat post_prec = prec + meas.H().transpose() * meas.H() / meas.sigma2();
  Eigen::LLT<Mat> llt(post_prec);
  require(llt.info() == Eigen::Success, "posterior oracle: posterior precision not positive definite");
  GaussianPosterior out;
  out.cov = llt.solve(Mat::Identity(prior.d(), prior.d()));
  out.mean = out.cov * (prec * prior.mean + meas.H().transpose() * y / meas.sigma2());
  return out;
}

/// Diffused posterior score grad log N(x; alpha mean, alpha^2 cov + sigma_t^2 I).
inline Vec diffused_gaussian_score(const GaussianPosterior& post, const Vec& x, double t) {
  return GaussianPrior(post.mean, post.cov).score(x, t);
}

// ---------------------------------------------------------------------------
// JSON: { "H": [[...], ...], "sigma2": 0.25 }

inline nlohmann::json to_json(const LinearMeasurement& meas) {
  return {{"H", io::mat_to_json(meas.H())}, {"sigma2", meas.sigma2()}};
}

inline LinearMeasurement measurement_from_json(const nlohmann::json& j) {
  const auto& jh = j.at("H");
  require(jh.is_array() && !jh.empty() && jh[0].is_array(), "measurement JSON: H must be a nested array");
  return {io::mat_from_json(jh, static_cast<Eigen::Index>(jh.size()), static_cast<Eigen::Index>(jh[0].size())),
          j.at("sigma2").get<double>()};
}

/// One row per coordinate: index, mean, then the covariance row.
inline void write_posterior_csv(std::ostream& os, const GaussianPosterior& post) {
  std::vector<std::string> header{"index", "mean"};
  for (Eigen::Index j = 0; j < post.cov.cols(); ++j) header.push_back("cov" + std::to_string(j));
  CsvWriter w(os, header);
  for (Eigen::Index i = 0; i < post.mean.size(); ++i) {
    std::vector<CsvField> row{CsvField(static_cast<long long>(i)), CsvField(post.mean[i])};
    for (Eigen::Index j = 0; j < post.cov.cols(); ++j) row.emplace_back(post.cov(i, j));
    w.row(row);
  }
}

}  // namespace cdiff
