#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmr2/covariance.hpp"
#include "mmr2/design.hpp"
#include "mmr2/model_spec.hpp"
#include "mmr2/optimizer.hpp"

namespace mmr2 {

struct FitOptions {
    OptimOptions optim;
    std::optional<CovParams> start;  // warm start; defaults scale to the OLS residual variance
};

struct FittedModel {
    ModelSpec spec;
    Method method = Method::reml;
    std::shared_ptr<const DesignMatrices> design;

    Eigen::VectorXd beta_hat;
    CovParams params;
    AssembledCovariance cov;
    Eigen::VectorXd u_hat;  // stacked like the columns of [Z_1 ... Z_K]
    std::vector<VarianceComponent> components;

    double deviance = 0.0;  // -2 log-likelihood (restricted for REML)
    double loglik = 0.0;
    double aic = 0.0;
    int n_cov_params = 0;
    bool converged = false;
    int n_iter = 0;
    std::vector<std::string> warnings;
};

/// Profiled -2 log-likelihood of a gaussian working model, evaluated block-wise
/// over the independent row sets of V. beta is generalized least squares given V.
class DevianceEvaluator {
  public:
    DevianceEvaluator(const DesignMatrices& design, bool reml, std::optional<WorkingResidual> working = {});

    struct Result {
        double deviance = 0.0;
        Eigen::VectorXd beta;
        bool ridged = false;
    };

    Result evaluate(const CovParams& params) const;
    double operator()(const Eigen::VectorXd& x) const;

    const CovarianceModel& model() const { return model_; }

  private:
    const DesignMatrices* design_;
    bool reml_;
    CovarianceModel model_;
};

/// Fits a gaussian LMM by ML or REML.
FittedModel fit_lmm(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
                    const FitOptions& options = {});

/// Fits the working LMM of a pseudo-likelihood step: R = dispersion * diag(weights).
FittedModel fit_lmm(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
                    const WorkingResidual& working, const FitOptions& options = {});

/// -2 loglik + 2k; k counts covariance parameters, plus p under ML.
double aic(const FittedModel& fit);

/// u = G Z' V^-1 (y - X beta).
Eigen::VectorXd predict_blups(const FittedModel& fit);

/// OLS residual variance SSE / (n - p), used for starting values.
double ols_residual_variance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

}  // namespace mmr2
