#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmr2/design.hpp"
#include "mmr2/model_spec.hpp"

namespace mmr2 {

/// Log-variance below which a variance is reported as exactly zero.
inline constexpr double boundary_log_variance = -30.0;

/// Unconstrained covariance parameters. Scalar variances are on the log
/// scale; unstructured blocks are lower Cholesky factors stored row-wise
/// (l11, l21, l22, l31, ...) with log-transformed diagonal.
struct CovParams {
    std::vector<Eigen::VectorXd> terms;  // one per random block, in spec order
    Eigen::VectorXd residual;            // empty for working (GLMM) residuals
    std::optional<double> log_dispersion;  // reporting only; held fixed within a fit
};

/// GLMM working residual: R = dispersion * diag(weights).
struct WorkingResidual {
    Eigen::VectorXd weights;
    double dispersion = 1.0;
};

struct AssembledCovariance {
    Eigen::MatrixXd G;                       // block-diagonal q x q
    Eigen::MatrixXd R;                       // n x n
    std::vector<Eigen::MatrixXd> zgz_blocks; // Z_k G_k Z_k^T, spec order
    Eigen::MatrixXd V;                       // sum of zgz_blocks + R
};

struct VarianceComponent {
    std::string label;
    double value = 0.0;
};

int term_param_count(CovStructure s, int dim);
int residual_param_count(const ResidualLayout& layout);

/// d x d covariance of one random term from its unconstrained parameters.
Eigen::MatrixXd term_covariance(CovStructure s, int dim, const Eigen::VectorXd& params);

/// Residual covariance per `by` level: a t x t matrix (1 x 1 for id).
std::vector<Eigen::MatrixXd> residual_covariances(const ResidualLayout& layout,
                                                  const Eigen::VectorXd& params);

/// Covariance structure of one model, fixed by its design. Knows the
/// parameter layout, the independent row blocks of V, and how to evaluate
/// individual entries of V for a given parameter vector.
class CovarianceModel {
  public:
    CovarianceModel(const DesignMatrices& design, std::optional<WorkingResidual> working = {});

    int n_params() const { return n_params_; }
    bool working() const { return working_.has_value(); }

    Eigen::VectorXd flatten(const CovParams& p) const;
    CovParams unflatten(const Eigen::VectorXd& x) const;

    /// Starting values scaled to a residual variance estimate.
    CovParams initial(double residual_variance) const;

    /// Row sets such that V is block-diagonal over them.
    const std::vector<std::vector<int>>& row_blocks() const { return blocks_; }

    /// Evaluated covariance values for fast entry access.
    struct Values {
        std::vector<Eigen::MatrixXd> sigma;
        std::vector<Eigen::MatrixXd> residual;
        Eigen::VectorXd working_diag;
    };
    Values evaluate(const CovParams& p) const;

    double v_entry(const Values& v, int i, int j) const;
    double r_entry(const Values& v, int i, int j) const;

    /// Natural-scale variance components with readable labels.
    std::vector<VarianceComponent> components(const CovParams& p) const;

    const DesignMatrices& design() const { return *design_; }

  private:
    const DesignMatrices* design_;
    std::optional<WorkingResidual> working_;
    int n_params_ = 0;
    std::vector<std::vector<int>> blocks_;
};

/// Dense assembly of G, R, the per-term Z_k G_k Z_k^T and V.
AssembledCovariance assemble(const CovParams& params, const DesignMatrices& design,
                             const ModelSpec& spec);
AssembledCovariance assemble(const CovParams& params, const DesignMatrices& design,
                             const std::optional<WorkingResidual>& working);

/// rho = sigma_u2 / (sigma_u2 + sigma_e2) for the balanced one-way model.
double intraclass_correlation(double sigma_u2, double sigma_e2);

}  // namespace mmr2
