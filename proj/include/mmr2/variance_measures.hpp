#pragma once

#include <string>

#include <Eigen/Dense>

namespace mmr2 {

enum class Measure { asv, amv, sgv };

std::string to_string(Measure m);

struct TotalVariance {
    double value = 0.0;
    Measure measure = Measure::asv;
    Eigen::Index n = 0;
};

/// Half the variance of y_i - y_j: (v_ii + v_jj) / 2 - v_ij.
double semivariance(const Eigen::MatrixXd& V, Eigen::Index i, Eigen::Index j);

/// Average semivariance over all unordered pairs, trace(V P) / (n - 1)
/// with P = I - 11'/n.
TotalVariance theta_asv(const Eigen::MatrixXd& V);

/// Average marginal variance, trace(V) / n.
TotalVariance theta_amv(const Eigen::MatrixXd& V);

/// Standardized generalized variance |V|^(1/n), via the log-determinant.
TotalVariance theta_sgv(const Eigen::MatrixXd& V);

TotalVariance theta(const Eigen::MatrixXd& V, Measure m);

}  // namespace mmr2
