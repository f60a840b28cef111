#include "mmr2/lmm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmr2 {

namespace {

constexpr double log_2pi = 1.8378770664093454836;  // log(2 pi)
constexpr double param_floor = -60.0;

bool is_reml(Method m) { return m == Method::reml || m == Method::rspl; }

FittedModel fit_impl(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
                     const std::optional<WorkingResidual>& working, const FitOptions& options) {
    if (!design) throw std::invalid_argument("fit_lmm: no design");
    if (!working && !spec.family.is_gaussian())
        throw std::invalid_argument("fit_lmm: non-gaussian family needs the pseudo-likelihood engine");
    if (!working && method != Method::ml && method != Method::reml)
        throw std::invalid_argument("fit_lmm: method must be ml or reml");

    const DesignMatrices& dm = *design;
    const DevianceEvaluator ev(dm, is_reml(method), working);
    const CovarianceModel& model = ev.model();

    const double s2 = ols_residual_variance(dm.X, dm.response);
    const double scale = std::max(1.0, dm.response.squaredNorm() / static_cast<double>(dm.n()));
    if (!working && !(s2 > 1e-14 * scale))
        throw std::runtime_error("response is reproduced exactly by the fixed effects; "
                                 "variance components are not identifiable");

    const CovParams start = options.start ? *options.start : model.initial(s2);
    Eigen::VectorXd x = model.flatten(start);

    FittedModel fit;
    fit.spec = spec;
    fit.method = method;
    fit.design = design;
    fit.n_cov_params = model.n_params();

    if (model.n_params() > 0) {
        const Objective objective = [&ev](const Eigen::VectorXd& p) {
            return ev(p.cwiseMax(param_floor));
        };
        const OptimResult opt = minimize(objective, x, options.optim);
        x = opt.x.cwiseMax(param_floor);
        fit.converged = opt.converged;
        fit.n_iter = opt.iterations;
    } else {
        fit.converged = true;
    }

    fit.params = model.unflatten(x);
    const DevianceEvaluator::Result r = ev.evaluate(fit.params);
    if (!std::isfinite(r.deviance)) throw std::runtime_error("non-finite deviance at the optimum (singular V)");
    if (r.ridged) fit.warnings.push_back("V needed a ridge of 1e-10*trace(V)/n to factorize");
    if (!fit.converged) fit.warnings.push_back("optimizer exhausted its budget before converging");

    fit.beta_hat = r.beta;
    fit.deviance = r.deviance;
    fit.loglik = -0.5 * r.deviance;
    fit.cov = assemble(fit.params, dm, working);
    fit.components = model.components(fit.params);
    fit.aic = aic(fit);
    fit.u_hat = predict_blups(fit);
    return fit;
}

}  // namespace

DevianceEvaluator::DevianceEvaluator(const DesignMatrices& design, bool reml, std::optional<WorkingResidual> working)
    : design_(&design), reml_(reml), model_(design, std::move(working)) {}

DevianceEvaluator::Result DevianceEvaluator::evaluate(const CovParams& params) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const DesignMatrices& dm = *design_;
    const Eigen::Index n = dm.n();
    const Eigen::Index p = dm.p();
    const CovarianceModel::Values values = model_.evaluate(params);

    Result out;
    const auto& blocks = model_.row_blocks();
    std::vector<Eigen::MatrixXd> xw(blocks.size());
    std::vector<Eigen::VectorXd> yw(blocks.size());
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
    double logdet = 0.0;

    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& rows = blocks[b];
        const auto m = static_cast<Eigen::Index>(rows.size());
        Eigen::MatrixXd vb(m, m);
        Eigen::MatrixXd xb(m, p);
        Eigen::VectorXd yb(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            const int i = rows[static_cast<std::size_t>(a)];
            for (Eigen::Index c = 0; c <= a; ++c)
                vb(a, c) = vb(c, a) = model_.v_entry(values, i, rows[static_cast<std::size_t>(c)]);
            xb.row(a) = dm.X.row(i);
            yb(a) = dm.response(i);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(vb);
        if (llt.info() != Eigen::Success) {
            vb.diagonal().array() += 1e-10 * vb.trace() / static_cast<double>(m);
            llt.compute(vb);
            if (llt.info() != Eigen::Success) return {inf, {}, true};
            out.ridged = true;
        }
        const auto L = llt.matrixL();
        logdet += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        xw[b] = L.solve(xb);
        yw[b] = L.solve(yb);
        xtx.noalias() += xw[b].transpose() * xw[b];
        xty.noalias() += xw[b].transpose() * yw[b];
    }

    Eigen::LLT<Eigen::MatrixXd> xllt(xtx);
    if (xllt.info() != Eigen::Success) return {inf, {}, out.ridged};
    out.beta = xllt.solve(xty);

    double quad = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) quad += (yw[b] - xw[b] * out.beta).squaredNorm();

    const double nd = static_cast<double>(n);
    const double pd = static_cast<double>(p);
    out.deviance = logdet + quad;
    if (reml_) {
        out.deviance += 2.0 * xllt.matrixLLT().diagonal().array().log().sum() + (nd - pd) * log_2pi;
    } else {
        out.deviance += nd * log_2pi;
    }
    if (!std::isfinite(out.deviance)) out.deviance = inf;
    return out;
}

double DevianceEvaluator::operator()(const Eigen::VectorXd& x) const {
    return evaluate(model_.unflatten(x)).deviance;
}

FittedModel fit_lmm(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
                    const FitOptions& options) {
    return fit_impl(std::move(design), spec, method, std::nullopt, options);
}

FittedModel fit_lmm(std::shared_ptr<const DesignMatrices> design, const ModelSpec& spec, Method method,
                    const WorkingResidual& working, const FitOptions& options) {
    return fit_impl(std::move(design), spec, method, working, options);
}

double aic(const FittedModel& fit) {
    int k = fit.n_cov_params;
    if (fit.method == Method::ml || fit.method == Method::mspl) k += static_cast<int>(fit.beta_hat.size());
    return -2.0 * fit.loglik + 2.0 * k;
}

Eigen::VectorXd predict_blups(const FittedModel& fit) {
    const DesignMatrices& dm = *fit.design;
    if (dm.z_blocks.empty()) return {};
    const Eigen::VectorXd r = dm.response - dm.X * fit.beta_hat;
    const Eigen::VectorXd vinv_r = fit.cov.V.ldlt().solve(r);
    Eigen::VectorXd u(fit.cov.G.rows());
    Eigen::Index offset = 0;
    for (const auto& b : dm.z_blocks) {
        const Eigen::Index q = b.Z.cols();
        u.segment(offset, q) = fit.cov.G.block(offset, offset, q, q) * (b.Z.transpose() * vinv_r);
        offset += q;
    }
    return u;
}

double ols_residual_variance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (X.rows() <= X.cols()) return std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    return (y - X * beta).squaredNorm() / static_cast<double>(X.rows() - X.cols());
}

}  // namespace mmr2
