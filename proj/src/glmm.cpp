#include "mmr2/glmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

namespace mmr2 {

namespace {

void unsupported(Family f, Link l) {
    throw std::invalid_argument("unsupported family/link pair: " + to_string(f) + "/" + to_string(l));
}

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

LinkFunctions::LinkFunctions(Family family, Link link) : family_(family), link_(link) {
    const bool ok = (family == Family::gaussian && link == Link::identity) ||
                    (family == Family::binomial && (link == Link::logit || link == Link::probit)) ||
                    (family == Family::poisson && link == Link::log);
    if (!ok) unsupported(family, link);
}

double LinkFunctions::inverse(double eta) const {
    switch (link_) {
        case Link::identity: return eta;
        case Link::logit: return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
        case Link::probit: return 0.5 * std::erfc(-eta / std::numbers::sqrt2);
        case Link::log: return std::exp(eta);
    }
    return eta;
}

double LinkFunctions::derivative(double eta) const {
    switch (link_) {
        case Link::identity: return 1.0;
        case Link::logit: {
            const double p = inverse(eta);
            return p * (1.0 - p);
        }
        case Link::probit: return normal_pdf(eta);
        case Link::log: return std::exp(eta);
    }
    return 1.0;
}

double LinkFunctions::link(double mu) const {
    switch (link_) {
        case Link::identity: return mu;
        case Link::logit: return std::log(mu / (1.0 - mu));
        case Link::probit: return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * mu);
        case Link::log: return std::log(mu);
    }
    return mu;
}

double LinkFunctions::variance(double mu) const {
    switch (family_) {
        case Family::gaussian: return 1.0;
        case Family::binomial: return mu * (1.0 - mu);
        case Family::poisson: return mu;
    }
    return 1.0;
}

bool LinkFunctions::admissible(double mu) const {
    if (!std::isfinite(mu)) return false;
    switch (family_) {
        case Family::gaussian: return true;
        case Family::binomial: return mu > 0.0 && mu < 1.0;
        case Family::poisson: return mu > 0.0;
    }
    return false;
}

double aux_variance(Family family, Link link, double mu, double eta, double phi, double m) {
    const LinkFunctions lf(family, link);
    if (!(phi > 0.0)) throw std::invalid_argument("aux_variance: phi must be positive");
    if (family == Family::gaussian) return 0.0;
    if (!lf.admissible(mu)) throw std::invalid_argument("aux_variance: mean outside the family's range");
    if (family == Family::binomial) {
        if (!(m >= 1.0)) throw std::invalid_argument("aux_variance: binomial size must be at least 1");
        if (phi == 1.0 && m == 1.0) {
            if (link == Link::logit) return std::numbers::pi * std::numbers::pi / 3.0;
            if (link == Link::probit) return 1.0;
        }
        const double d = lf.derivative(eta);
        return phi * lf.variance(mu) / (d * d * m);
    }
    return phi / mu;
}

AuxiliaryVariance auxiliary_variance(const LinkFunctions& lf, const Eigen::VectorXd& mu, const Eigen::VectorXd& eta,
                                     double phi, const Eigen::VectorXd& sizes) {
    const Eigen::Index n = mu.size();
    AuxiliaryVariance out;
    out.R_h.resize(n);
    out.W_mu.resize(n);
    out.D_eta.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = sizes.size() ? sizes(i) : 1.0;
        const double d = lf.derivative(eta(i));
        out.D_eta(i) = d;
        out.W_mu(i) = lf.variance(mu(i)) / (m * d * d);
        out.R_h(i) = aux_variance(lf.family(), lf.link(), mu(i), eta(i), phi, m);
    }
    return out;
}

GlmmFit fit_pl(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
               const GlmmOptions& options) {
    if (!design) throw std::invalid_argument("fit_pl: no design");
    if (spec.family.is_gaussian()) throw std::invalid_argument("fit_pl: family must be binomial or poisson");
    if (method != Method::mspl && method != Method::rspl)
        throw std::invalid_argument("fit_pl: method must be mspl or rspl");

    const LinkFunctions lf(spec.family.family, spec.family.link);
    const Eigen::Index n = design->n();
    const Eigen::Index p = design->p();

    ModelSpec work_spec = spec;
    work_spec.method = method;
    DesignMatrices base = *design;
    if (!spec.has_unit_effect()) {
        work_spec.random_terms.push_back(RandomTerm{{}, "", CovStructure::vc, true});
        base.z_blocks.push_back(make_unit_block(n));
    }
    std::size_t unit_index = 0;
    for (std::size_t k = 0; k < base.z_blocks.size(); ++k) {
        if (base.z_blocks[k].is_unit_effect) unit_index = k;
    }

    const Eigen::VectorXd sizes =
        spec.family.family == Family::binomial ? base.binomial_sizes : Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd y_obs = spec.family.family == Family::binomial
                                      ? Eigen::VectorXd(base.response.cwiseQuotient(sizes))
                                      : base.response;

    Eigen::VectorXd eta(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu0 = spec.family.family == Family::binomial ? (base.response(i) + 0.5) / (sizes(i) + 1.0)
                                                                  : base.response(i) + 0.5;
        eta(i) = lf.link(mu0);
    }

    const bool estimate_phi = spec.family.dispersion == Dispersion::estimated;
    double phi = 1.0;
    FitOptions inner = options.inner;
    Eigen::VectorXd previous;
    FittedModel last;
    bool converged = false;
    int outer = 0;
    int inner_iterations = 0;

    for (outer = 1; outer <= options.max_outer; ++outer) {
        auto work = std::make_shared<DesignMatrices>(base);
        Eigen::VectorXd weights(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = lf.inverse(eta(i));
            const double d = lf.derivative(eta(i));
            work->response(i) = eta(i) + (y_obs(i) - mu) / d;
            weights(i) = lf.variance(mu) / (sizes(i) * d * d);
        }

        last = fit_lmm(work, work_spec, method, WorkingResidual{weights, phi}, inner);
        inner_iterations += last.n_iter;
        inner.start = last.params;

        Eigen::VectorXd eta_new = base.X * last.beta_hat;
        Eigen::Index offset = 0;
        for (const auto& b : base.z_blocks) {
            eta_new += b.Z * last.u_hat.segment(offset, b.Z.cols());
            offset += b.Z.cols();
        }
        for (int halving = 0;; ++halving) {
            bool ok = true;
            for (Eigen::Index i = 0; i < n && ok; ++i) ok = lf.admissible(lf.inverse(eta_new(i)));
            if (ok) break;
            if (halving == 10) throw std::runtime_error("fit_pl: fitted mean left the admissible range");
            eta_new = eta + 0.5 * (eta_new - eta);
        }
        eta = eta_new;

        double next_phi = phi;
        if (estimate_phi) {
            double pearson = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mu = lf.inverse(eta(i));
                pearson += sizes(i) * (y_obs(i) - mu) * (y_obs(i) - mu) / lf.variance(mu);
            }
            next_phi = std::max(pearson / static_cast<double>(n - p), 1e-8);
        }

        const Eigen::VectorXd x = CovarianceModel(*work, WorkingResidual{weights, phi}).flatten(last.params);
        double change = std::abs(next_phi - phi) / phi;
        if (previous.size() == x.size()) {
            for (Eigen::Index k = 0; k < x.size(); ++k) {
                if (x(k) < -25.0 && previous(k) < -25.0) continue;
                change = std::max(change, std::abs(x(k) - previous(k)) / std::max(1.0, std::abs(previous(k))));
            }
        } else {
            change = std::numeric_limits<double>::infinity();
        }
        previous = x;
        phi = next_phi;
        if (change < options.tolerance) {
            converged = true;
            break;
        }
    }

    GlmmFit fit;
    static_cast<FittedModel&>(fit) = last;
    fit.spec = work_spec;
    fit.n_iter = inner_iterations;
    fit.outer_iterations = std::min(outer, options.max_outer);
    fit.converged = converged && last.converged;
    if (!converged) fit.warnings.push_back("pseudo-likelihood iterations did not converge");
    fit.dispersion = phi;
    fit.eta_hat = eta;
    fit.mu_hat = eta.unaryExpr([&lf](double e) { return lf.inverse(e); });

    const double log_unit = fit.params.terms[unit_index](0);
    fit.unit_variance = log_unit < boundary_log_variance ? 0.0 : std::exp(log_unit);
    fit.R_h = auxiliary_variance(lf, fit.mu_hat, fit.eta_hat, phi, sizes).R_h;

    VTilde vt = assemble_v_tilde(fit, fit.R_h);
    fit.V_tilde = std::move(vt.V_tilde);
    fit.R_tilde = std::move(vt.R_tilde);
    fit.zgz_blocks = std::move(vt.zgz_blocks);
    fit.zgz_labels = std::move(vt.zgz_labels);
    return fit;
}

VTilde assemble_v_tilde(const FittedModel& fit, const Eigen::VectorXd& R_h) {
    const DesignMatrices& dm = *fit.design;
    const Eigen::Index n = dm.n();
    VTilde out;
    out.R_tilde = fit.spec.family.is_gaussian() ? fit.cov.R : Eigen::MatrixXd::Zero(n, n);
    if (R_h.size()) {
        if (R_h.size() != n) throw std::invalid_argument("assemble_v_tilde: R_h has the wrong length");
        out.R_tilde.diagonal() += R_h;
    }
    for (std::size_t k = 0; k < dm.z_blocks.size(); ++k) {
        if (dm.z_blocks[k].is_unit_effect) {
            out.R_tilde += fit.cov.zgz_blocks[k];
        } else {
            out.zgz_blocks.push_back(fit.cov.zgz_blocks[k]);
            out.zgz_labels.push_back(dm.z_blocks[k].label);
        }
    }
    out.V_tilde = out.R_tilde;
    for (const auto& z : out.zgz_blocks) out.V_tilde += z;
    return out;
}

VTilde assemble_v_tilde(const GlmmFit& fit) { return assemble_v_tilde(fit, fit.R_h); }

}  // namespace mmr2
