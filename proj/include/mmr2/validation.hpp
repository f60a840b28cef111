#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmr2/model_spec.hpp"

namespace mmr2::validation {

/// Platform-independent random streams: std::mt19937_64 bits mapped to
/// uniforms by hand, since the std distributions are implementation-defined.
class Rng {
  public:
    static constexpr const char* algorithm = "mt19937_64; u=(bits>>11)*2^-53; normal=Box-Muller; logistic=inverse-cdf";

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();  // (0, 1)
    double normal();
    double logistic();

    /// Seed for an independent sub-stream, e.g. one per replicate.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mean of (v_ii + v_jj)/2 - v_ij over all unordered pairs, by a literal double loop.
double asv_bruteforce(const Eigen::MatrixXd& V);

struct AnovaEstimates {
    double sigma_u2 = 0.0;  // max(0, (MSA - MSE) / m)
    double sigma_e2 = 0.0;  // MSE
    double msa = 0.0;
    double mse = 0.0;
    double sst = 0.0;       // total sum of squares about the grand mean
};

/// Balanced one-way ANOVA estimators. `groups` holds codes 0..a-1, each used m times.
AnovaEstimates anova_oneway(const Eigen::VectorXd& y, const std::vector<int>& groups, int m);

struct OlsFit {
    double r2 = 0.0;
    double adj_r2 = 0.0;
    double sse = 0.0;
    double sst = 0.0;
};

/// Ordinary and adjusted R^2 of y on X (X includes the intercept column).
OlsFit ols_r2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

struct McResult {
    double variance = 0.0;
    double std_error = 0.0;  // Monte Carlo standard error of `variance` (at the target for exact binary cases)
    double target = 0.0;     // var(y | mu) on the mean scale, per unit size
    long long draws = 0;
    std::uint64_t seed = 0;
    std::string algorithm;
};

/// Empirical variance of the mean-scale response implied by eta + h. For the
/// binary logit/probit case h follows the logistic/standard normal law and
/// the response is the latent-threshold indicator 1{eta + h > 0}; otherwise
/// h ~ N(0, var(h)) with the first-order variance and the response is g^-1(eta + h).
McResult mc_link_variance(Family family, Link link, double eta, double phi, double m, long long draws,
                          std::uint64_t seed);

/// Symmetric PSD test matrix A A' / k with A an n x k standard normal draw.
Eigen::MatrixXd random_psd(Eigen::Index n, Eigen::Index k, Rng& rng);

/// V of the balanced one-way model: I_a (x) (sigma_u2 J_m + sigma_e2 I_m).
Eigen::MatrixXd oneway_covariance(int a, int m, double sigma_u2, double sigma_e2);

struct Check {
    std::string name;
    double value = 0.0;
    double target = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct SuiteOptions {
    std::uint64_t seed = 20190101;
    int anova_replicates = 500;
    long long mc_draws = 1000000;
};

/// The oracle suite behind `mmr2 validate`.
std::vector<Check> run_suite(const SuiteOptions& options = {});

}  // namespace mmr2::validation
