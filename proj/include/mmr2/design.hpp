#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmr2/dataset.hpp"
#include "mmr2/model_spec.hpp"

namespace mmr2 {

/// Random-effect design for one term. `Z` is the dense n x (n_groups * d)
/// matrix with group-major column order, so G_k = I_groups (x) Sigma_k.
/// `group` and `design` are the compact form the engines work from:
/// Z(i, g*d + c) = design(i, c) when group[i] == g.
struct RandomBlock {
    std::string label;
    Eigen::MatrixXd Z;
    std::vector<int> group;
    int n_groups = 0;
    Eigen::MatrixXd design;
    std::vector<std::string> design_labels;
    CovStructure structure = CovStructure::vc;
    bool is_unit_effect = false;

    int dim() const { return static_cast<int>(design.cols()); }
};

/// Row coding needed by the residual covariance. Vectors are empty when
/// the corresponding option is absent.
struct ResidualLayout {
    ResidualStructure structure = ResidualStructure::id;
    std::vector<int> by;
    int n_by = 1;
    std::vector<std::string> by_labels;
    std::vector<int> index;
    int n_index = 1;
    std::vector<std::string> index_labels;
    std::vector<int> subject;
};

struct DesignMatrices {
    Eigen::MatrixXd X;
    std::vector<std::string> x_labels;
    std::vector<RandomBlock> z_blocks;
    Eigen::VectorXd response;
    Eigen::VectorXd binomial_sizes;  // empty unless family is binomial
    ResidualLayout residual;

    Eigen::Index n() const { return X.rows(); }
    Eigen::Index p() const { return X.cols(); }
};

/// Encodes the data under a validated spec. Factors use reference coding
/// (first level dropped); interactions are column-wise products.
DesignMatrices build_design(const Dataset& data, const ModelSpec& spec);

/// Per-observation random effect f: one group per row.
RandomBlock make_unit_block(Eigen::Index n);

}  // namespace mmr2
