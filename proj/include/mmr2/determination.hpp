#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmr2/dataset.hpp"
#include "mmr2/glmm.hpp"
#include "mmr2/lmm.hpp"
#include "mmr2/model_spec.hpp"
#include "mmr2/variance_measures.hpp"

namespace mmr2 {

struct MeasurePair {
    double asv = 0.0;
    double amv = 0.0;

    friend bool operator==(const MeasurePair&, const MeasurePair&) = default;
};

struct PartialOmega {
    std::string label;
    MeasurePair value;

    friend bool operator==(const PartialOmega&, const PartialOmega&) = default;
};

struct NamedValue {
    std::string name;
    double value = 0.0;

    friend bool operator==(const NamedValue&, const NamedValue&) = default;
};

struct FitSummary {
    std::string formula;
    bool converged = false;
    double loglik = 0.0;
    double aic = 0.0;
    int n_cov_params = 0;
    int iterations = 0;
    std::vector<NamedValue> beta;
    std::vector<NamedValue> variance_components;
    std::optional<double> unit_variance;
    std::optional<double> dispersion;
    std::vector<std::string> warnings;

    friend bool operator==(const FitSummary&, const FitSummary&) = default;
};

struct ThetaInputs {
    MeasurePair full;      // theta(V) or theta(V~)
    MeasurePair null;      // theta(V_0)
    MeasurePair zgz;       // theta(sum_k Z_k G_k Z_k')
    MeasurePair residual;  // theta(R) or theta(R~)
    std::vector<PartialOmega> zgz_terms;

    friend bool operator==(const ThetaInputs&, const ThetaInputs&) = default;
};

struct R2Report {
    std::string formula;
    Method method = Method::reml;
    Family family = Family::gaussian;
    long long n = 0;
    bool converged = false;

    std::optional<MeasurePair> omega_beta;
    std::optional<MeasurePair> omega_u;
    std::optional<MeasurePair> omega_beta_u;
    std::vector<PartialOmega> partials;
    ThetaInputs theta;
    // GLMM only: omega_beta with the null model's R_h replaced by the full model's
    std::optional<MeasurePair> omega_beta_shared_rh;

    FitSummary full;
    FitSummary null;
    std::vector<std::string> warnings;

    friend bool operator==(const R2Report&, const R2Report&) = default;
};

/// (theta(V_0) - theta(V)) / theta(V_0).
double omega_beta(const TotalVariance& theta_full, const TotalVariance& theta_null);

struct OmegaU {
    double value = 0.0;
    std::vector<double> partials;
};

/// theta(ZGZ') / theta(V_0) with one partial per term.
OmegaU omega_u(const std::vector<TotalVariance>& theta_zgz, const TotalVariance& theta_null);

/// 1 - theta(R) / theta(V_0).
double omega_beta_u(const TotalVariance& theta_r, const TotalVariance& theta_null);

struct AnalyzeOptions {
    FitOptions lmm;
    GlmmOptions glmm;
    bool concurrent = true;  // fit full and null models in parallel
};

/// Fits the spec and its null model with the spec's method and reports the
/// coefficients of determination under ASV and AMV.
R2Report analyze(const Dataset& data, const ModelSpec& spec, const AnalyzeOptions& options = {});

std::string to_json(const R2Report& report, int indent = 2);
std::string to_json(const std::vector<R2Report>& reports, int indent = 2);
R2Report report_from_json(std::string_view text);
std::vector<R2Report> reports_from_json(std::string_view text);

std::string to_text(const R2Report& report);
std::string csv_header();
std::string to_csv_row(const R2Report& report);

}  // namespace mmr2
