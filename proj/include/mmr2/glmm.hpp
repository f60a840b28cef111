#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "mmr2/lmm.hpp"

namespace mmr2 {

/// Inverse link, its derivative and the variance function a(mu) for one
/// family/link pair. For the binomial, mu is the success probability.
class LinkFunctions {
  public:
    LinkFunctions(Family family, Link link);

    Family family() const { return family_; }
    Link link() const { return link_; }

    double inverse(double eta) const;
    double derivative(double eta) const;  // d mu / d eta
    double link(double mu) const;
    double variance(double mu) const;     // a(mu)
    bool admissible(double mu) const;

  private:
    Family family_;
    Link link_;
};

/// var(h_i), the linear-predictor-scale auxiliary variance that carries the
/// distributional variance of y_i. Exact for binary logit (pi^2/3) and
/// probit (1); phi * a(mu) / (m * D^2) otherwise.
double aux_variance(Family family, Link link, double mu, double eta, double phi, double m);

struct AuxiliaryVariance {
    Eigen::VectorXd R_h;    // diagonal of R_h
    Eigen::VectorXd W_mu;   // diagonal of the working residual weights a(mu) / (m D^2)
    Eigen::VectorXd D_eta;  // d mu / d eta at eta_hat
};

AuxiliaryVariance auxiliary_variance(const LinkFunctions& lf, const Eigen::VectorXd& mu, const Eigen::VectorXd& eta,
                                     double phi, const Eigen::VectorXd& sizes);

struct VTilde {
    Eigen::MatrixXd V_tilde;
    Eigen::MatrixXd R_tilde;
    std::vector<Eigen::MatrixXd> zgz_blocks;  // explanatory random terms only
    std::vector<std::string> zgz_labels;
};

struct GlmmFit : FittedModel {
    Eigen::VectorXd eta_hat;  // X beta + Z u + f
    Eigen::VectorXd mu_hat;
    double unit_variance = 0.0;
    double dispersion = 1.0;
    Eigen::VectorXd R_h;
    Eigen::MatrixXd R_tilde;
    Eigen::MatrixXd V_tilde;
    std::vector<Eigen::MatrixXd> zgz_blocks;
    std::vector<std::string> zgz_labels;
    int outer_iterations = 0;
};

struct GlmmOptions {
    FitOptions inner;
    int max_outer = 200;
    double tolerance = 1e-8;  // max relative change in covariance parameters
};

/// Pseudo-likelihood fit (MSPL: working model by ML, RSPL: by REML). A unit
/// effect is appended to the spec and design when absent.
GlmmFit fit_pl(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
               const GlmmOptions& options = {});

/// V~ = sum_k Z_k G_k Z_k' + R~ with R~ = sigma_f^2 I + R_h. For a gaussian
/// fit R_h = 0 and the unit effect, if any, is still counted in R~.
VTilde assemble_v_tilde(const GlmmFit& fit);
VTilde assemble_v_tilde(const FittedModel& fit, const Eigen::VectorXd& R_h);

}  // namespace mmr2
