#include "mmr2/validation.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mmr2/dataset.hpp"
#include "mmr2/design.hpp"
#include "mmr2/determination.hpp"
#include "mmr2/lmm.hpp"
#include "mmr2/variance_measures.hpp"

namespace mmr2::validation {

namespace {

double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_density(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

struct Moments {
    double variance = 0.0;
    double std_error = 0.0;
};

// Unbiased sample variance and its standard error from
// var(s^2) = (m4 - s^4 (N-3)/(N-1)) / N.
Moments variance_with_error(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0;
    double m4 = 0.0;
    for (double v : x) {
        const double d2 = (v - mean) * (v - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    const double var = m2 / (n - 1.0);
    m4 /= n;
    const double var_of_var = std::max(0.0, (m4 - var * var * (n - 3.0) / (n - 1.0)) / n);
    return {var, std::sqrt(var_of_var)};
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

Check make_check(std::string name, double value, double target, double tolerance, bool pass, std::string detail = {}) {
    return {std::move(name), value, target, tolerance, pass, std::move(detail)};
}

}  // namespace

double Rng::uniform() {
    for (;;) {
        const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        if (u > 0.0) return u;
    }
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

double Rng::logistic() {
    const double u = uniform();
    return std::log(u / (1.0 - u));
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double asv_bruteforce(const Eigen::MatrixXd& V) {
    const Eigen::Index n = V.rows();
    if (n < 2 || V.cols() != n) throw std::invalid_argument("asv_bruteforce: needs a square matrix with n >= 2");
    double sum = 0.0;
    long long pairs = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            sum += 0.5 * (V(i, i) + V(j, j)) - V(i, j);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

AnovaEstimates anova_oneway(const Eigen::VectorXd& y, const std::vector<int>& groups, int m) {
    const auto n = static_cast<std::size_t>(y.size());
    if (groups.size() != n || m < 2 || n % static_cast<std::size_t>(m) != 0)
        throw std::invalid_argument("anova_oneway: unbalanced input");
    const int a = static_cast<int>(n / static_cast<std::size_t>(m));
    std::vector<double> sums(static_cast<std::size_t>(a), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(a), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int g = groups[i];
        if (g < 0 || g >= a) throw std::invalid_argument("anova_oneway: unbalanced input");
        sums[static_cast<std::size_t>(g)] += y(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(g)];
    }
    for (int c : counts) {
        if (c != m) throw std::invalid_argument("anova_oneway: unbalanced input");
    }
    const double grand = y.mean();
    double ssa = 0.0;
    for (double s : sums) ssa += m * (s / m - grand) * (s / m - grand);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y(static_cast<Eigen::Index>(i)) - sums[static_cast<std::size_t>(groups[i])] / m;
        sse += d * d;
    }
    AnovaEstimates out;
    out.msa = a > 1 ? ssa / (a - 1) : 0.0;
    out.mse = sse / (static_cast<double>(n) - a);
    out.sigma_e2 = out.mse;
    out.sigma_u2 = std::max(0.0, (out.msa - out.mse) / m);
    out.sst = ssa + sse;
    return out;
}

OlsFit ols_r2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    const Eigen::VectorXd beta = qr.solve(y);
    OlsFit out;
    out.sse = (y - X * beta).squaredNorm();
    out.sst = (y.array() - y.mean()).matrix().squaredNorm();
    const double n = static_cast<double>(y.size());
    const double p = static_cast<double>(X.cols());
    out.r2 = 1.0 - out.sse / out.sst;
    out.adj_r2 = 1.0 - (out.sse / (n - p)) / (out.sst / (n - 1.0));
    return out;
}

McResult mc_link_variance(Family family, Link link, double eta, double phi, double m, long long draws,
                          std::uint64_t seed) {
    if (draws < 100000) throw std::invalid_argument("mc_link_variance: needs at least 1e5 draws");
    if (!(phi > 0.0)) throw std::invalid_argument("mc_link_variance: phi must be positive");
    Rng rng(seed);
    std::vector<double> x(static_cast<std::size_t>(draws));
    McResult out;
    out.draws = draws;
    out.seed = seed;
    out.algorithm = Rng::algorithm;

    if (family == Family::binomial && (link == Link::logit || link == Link::probit)) {
        const double pi = link == Link::logit ? logistic_cdf(eta) : normal_cdf(eta);
        if (phi == 1.0 && m == 1.0) {
            for (auto& v : x) v = eta + (link == Link::logit ? rng.logistic() : rng.normal()) > 0.0 ? 1.0 : 0.0;
            out.target = pi * (1.0 - pi);
        } else {
            const double d = link == Link::logit ? pi * (1.0 - pi) : normal_density(eta);
            const double sd = std::sqrt(phi * pi * (1.0 - pi) / (m * d * d));
            for (auto& v : x) {
                const double e = eta + sd * rng.normal();
                v = link == Link::logit ? logistic_cdf(e) : normal_cdf(e);
            }
            out.target = phi * pi * (1.0 - pi) / m;
        }
    } else if (family == Family::poisson && link == Link::log) {
        const double mu = std::exp(eta);
        const double sd = std::sqrt(phi / mu);
        for (auto& v : x) v = std::exp(eta + sd * rng.normal());
        out.target = phi * mu;
    } else {
        throw std::invalid_argument("mc_link_variance: unsupported family/link pair");
    }
    const Moments mo = variance_with_error(x);
    out.variance = mo.variance;
    out.std_error = mo.std_error;
    if (family == Family::binomial && phi == 1.0 && m == 1.0) {
        // Bernoulli moments at the target; the sample fourth moment degenerates at pi = 1/2
        const double n = static_cast<double>(draws);
        const double s2 = out.target;
        const double mu4 = s2 * (1.0 - 3.0 * s2);
        out.std_error = std::sqrt((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n);
    }
    return out;
}

Eigen::MatrixXd random_psd(Eigen::Index n, Eigen::Index k, Rng& rng) {
    Eigen::MatrixXd A(n, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) A(i, j) = rng.normal();
    }
    Eigen::MatrixXd V = A * A.transpose() / static_cast<double>(k);
    return 0.5 * (V + V.transpose());
}

Eigen::MatrixXd oneway_covariance(int a, int m, double sigma_u2, double sigma_e2) {
    const Eigen::Index n = static_cast<Eigen::Index>(a) * m;
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
    for (int g = 0; g < a; ++g) {
        V.block(static_cast<Eigen::Index>(g) * m, static_cast<Eigen::Index>(g) * m, m, m)
            .setConstant(sigma_u2);
    }
    V.diagonal().array() += sigma_e2;
    return V;
}

std::vector<Check> run_suite(const SuiteOptions& options) {
    std::vector<Check> checks;
    Rng rng(options.seed);

    // trace identity against the pairwise loop
    {
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform() * 80);
            const Eigen::MatrixXd V = random_psd(n, n + 3, rng);
            const double b = asv_bruteforce(V);
            worst = std::max(worst, std::abs(theta_asv(V).value - b) / std::abs(b));
        }
        checks.push_back(make_check("asv trace identity vs pairwise loop (20 random PSD)", worst, 0.0, 1e-12,
                                    worst <= 1e-12, "max relative difference"));
    }

    // one-way closed forms
    {
        const Eigen::MatrixXd V = oneway_covariance(2, 3, 1.0, 1.0);
        const double asv = theta_asv(V).value;
        checks.push_back(make_check("one-way a=2 m=3: theta_asv", asv, 1.6, 1e-12, std::abs(asv - 1.6) <= 1e-12));
        const double amv = theta_amv(V).value;
        checks.push_back(make_check("one-way a=2 m=3: theta_amv", amv, 2.0, 1e-12, std::abs(amv - 2.0) <= 1e-12));
        const double sgv = theta_sgv(oneway_covariance(1, 3, 1.0, 1.0)).value;
        const double target = std::cbrt(4.0);
        checks.push_back(make_check("one-way a=1 m=3: theta_sgv", sgv, target, 1e-12,
                                    std::abs(sgv - target) <= 1e-12 * target));
    }

    // balanced one-way REML against ANOVA
    {
        constexpr int a = 6;
        constexpr int m = 5;
        const ModelSpec spec = parse_formula("y ~ 1, random(1 | g), method(reml)");
        double worst = 0.0;
        int boundary = 0;
        for (int rep = 0; rep < options.anova_replicates; ++rep) {
            Rng r(Rng::derive(options.seed, 1000 + static_cast<std::uint64_t>(rep)));
            std::vector<double> y(a * m);
            std::vector<int> g(a * m);
            for (int i = 0; i < a; ++i) {
                const double u = std::sqrt(2.0) * r.normal();
                for (int j = 0; j < m; ++j) {
                    y[static_cast<std::size_t>(i * m + j)] = 10.0 + u + r.normal();
                    g[static_cast<std::size_t>(i * m + j)] = i;
                }
            }
            std::vector<std::string> levels;
            for (int i = 0; i < a; ++i) levels.push_back("g" + std::to_string(i));
            const Dataset data({Column::make_numeric("y", y), Column::make_factor("g", levels, g)});
            const ModelSpec checked = validate(spec, data);
            auto design = std::make_shared<const DesignMatrices>(build_design(data, checked));
            const FittedModel fit = fit_lmm(design, checked, Method::reml);

            const AnovaEstimates anova = anova_oneway(Eigen::Map<const Eigen::VectorXd>(y.data(), a * m), g, m);
            double target_u = anova.sigma_u2;
            double target_e = anova.sigma_e2;
            if (anova.msa <= anova.mse) {
                // REML on the boundary: all variation is residual
                target_u = 0.0;
                target_e = anova.sst / (a * m - 1);
                ++boundary;
            }
            const double su = std::exp(fit.params.terms[0](0));
            const double se = std::exp(fit.params.residual(0));
            worst = std::max({worst, std::abs(su - target_u), std::abs(se - target_e)});
        }
        checks.push_back(make_check("balanced one-way REML vs ANOVA (" + std::to_string(options.anova_replicates) +
                                        " replicates)",
                                    worst, 0.0, 1e-6, worst <= 1e-6,
                                    "max abs difference; " + std::to_string(boundary) + " replicates on the boundary"));
    }

    // LM: omega_beta is R^2 under ML and adjusted R^2 under REML
    {
        constexpr int n = 60;
        std::vector<double> y(n), x1(n), x2(n);
        Eigen::MatrixXd X(n, 3);
        for (int i = 0; i < n; ++i) {
            x1[i] = rng.normal();
            x2[i] = rng.uniform();
            y[i] = 1.0 + 0.8 * x1[i] - 0.5 * x2[i] + rng.normal();
            X.row(i) << 1.0, x1[i], x2[i];
        }
        const Dataset data(
            {Column::make_numeric("y", y), Column::make_numeric("x1", x1), Column::make_numeric("x2", x2)});
        const OlsFit ols = ols_r2(X, Eigen::Map<const Eigen::VectorXd>(y.data(), n));
        for (const char* method : {"ml", "reml"}) {
            const R2Report r = analyze(data, parse_formula(std::string("y ~ x1 + x2, method(") + method + ")"));
            const double target = std::string(method) == "ml" ? ols.r2 : ols.adj_r2;
            const double value = r.omega_beta ? r.omega_beta->asv : std::nan("");
            checks.push_back(make_check(std::string("LM omega_beta (") + method + ") vs " +
                                            (std::string(method) == "ml" ? "R^2" : "adjusted R^2"),
                                        value, target, 1e-8, std::abs(value - target) <= 1e-8));
        }
    }

    // auxiliary variance, exact binary cases and the Poisson first-order case
    {
        std::uint64_t stream = 1;
        for (const Link link : {Link::logit, Link::probit}) {
            for (const double eta : {-2.0, 0.0, 2.0}) {
                const McResult mc = mc_link_variance(Family::binomial, link, eta, 1.0, 1.0, options.mc_draws,
                                                     Rng::derive(options.seed, stream++));
                const double z = std::abs(mc.variance - mc.target) / mc.std_error;
                checks.push_back(make_check("binary " + to_string(link) + " eta=" + fmt(eta) + ": var(y) = pi(1-pi)",
                                            mc.variance, mc.target, 3.0 * mc.std_error, z <= 3.0,
                                            fmt(z) + " Monte Carlo standard errors"));
            }
        }
        for (const double mu : {35.0, 50.0, 100.0, 200.0}) {
            const McResult mc = mc_link_variance(Family::poisson, Link::log, std::log(mu), 1.0, 1.0,
                                                 options.mc_draws, Rng::derive(options.seed, stream++));
            const double rel = std::abs(mc.variance - mc.target) / mc.target;
            checks.push_back(make_check("poisson mu=" + fmt(mu) + ": var(exp(eta+h)) within 5% of mu", mc.variance,
                                        mc.target, 0.05 * mc.target, rel < 0.05,
                                        "relative error " + fmt(rel)));
        }
    }
    return checks;
}

}  // namespace mmr2::validation
