#include "mmr2/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace mmr2 {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

struct Counted {
    const Objective& f;
    int evaluations = 0;

    double operator()(const Eigen::VectorXd& x) {
        ++evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : inf;
    }
};

struct RunResult {
    Eigen::VectorXd x;
    double f = inf;
    int iterations = 0;
    bool met_tolerance = false;
};

RunResult nelder_mead_run(Counted& f, const Eigen::VectorXd& x0, double fx0, const OptimOptions& opt) {
    const Eigen::Index d = x0.size();
    const double dd = static_cast<double>(d);
    // adaptive coefficients (Gao & Han); reduce to the classic values for d <= 2
    const double alpha = 1.0;
    const double beta = d >= 2 ? 1.0 + 2.0 / dd : 2.0;
    const double gamma = d >= 2 ? 0.75 - 1.0 / (2.0 * dd) : 0.5;
    const double delta = d >= 2 ? 1.0 - 1.0 / dd : 0.5;

    std::vector<Eigen::VectorXd> simplex(static_cast<std::size_t>(d + 1), x0);
    std::vector<double> values(static_cast<std::size_t>(d + 1), fx0);
    for (Eigen::Index k = 0; k < d; ++k) {
        auto& v = simplex[static_cast<std::size_t>(k + 1)];
        v(k) += opt.initial_step * std::max(1.0, std::abs(x0(k)));
        values[static_cast<std::size_t>(k + 1)] = f(v);
    }

    std::vector<std::size_t> order(simplex.size());
    RunResult run;
    for (int it = 0; it < opt.max_iter; ++it) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[order.size() - 2];

        // coordinates that have run off to the boundary on every vertex do not count
        double xspread = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
            double hi = -inf;
            for (const auto& v : simplex) hi = std::max(hi, v(k));
            if (hi <= opt.polish_floor) continue;
            for (const auto& v : simplex) xspread = std::max(xspread, std::abs(v(k) - simplex[best](k)));
        }
        const double fspread = values[worst] - values[best];
        run.iterations = it;
        if (std::isfinite(fspread) && fspread <= opt.ftol && xspread <= opt.xtol) {
            run.met_tolerance = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
        for (std::size_t k : order) {
            if (k != worst) centroid += simplex[k];
        }
        centroid /= dd;

        const Eigen::VectorXd xr = centroid + alpha * (centroid - simplex[worst]);
        const double fr = f(xr);
        if (fr < values[best]) {
            const Eigen::VectorXd xe = centroid + beta * (xr - centroid);
            const double fe = f(xe);
            if (fe < fr) {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if (fr < values[second]) {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        const bool outside = fr < values[worst];
        const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + gamma * (xr - centroid))
                                           : Eigen::VectorXd(centroid - gamma * (centroid - simplex[worst]));
        const double fc = f(xc);
        if (fc < (outside ? fr : values[worst])) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        for (std::size_t k = 0; k < simplex.size(); ++k) {
            if (k == best) continue;
            simplex[k] = simplex[best] + delta * (simplex[k] - simplex[best]);
            values[k] = f(simplex[k]);
        }
    }
    const auto best_it = std::min_element(values.begin(), values.end());
    run.x = simplex[static_cast<std::size_t>(best_it - values.begin())];
    run.f = *best_it;
    return run;
}

// Damped Newton steps on central differences over the non-boundary coordinates.
// Returns true when it stops at a stationary point.
bool newton_polish(Counted& f, Eigen::VectorXd& x, double& fx, const OptimOptions& opt) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        if (x(k) > opt.polish_floor) active.push_back(k);
    }
    const auto m = static_cast<Eigen::Index>(active.size());
    if (!std::isfinite(fx)) return false;
    if (m == 0) return true;

    for (int step = 0; step < 6; ++step) {
        Eigen::VectorXd g(m);
        Eigen::MatrixXd H(m, m);
        std::vector<double> h(static_cast<std::size_t>(m));
        for (Eigen::Index a = 0; a < m; ++a)
            h[static_cast<std::size_t>(a)] = 1e-4 * std::max(1.0, std::abs(x(active[static_cast<std::size_t>(a)])));

        auto shifted = [&](Eigen::Index a, double da, Eigen::Index b, double db) {
            Eigen::VectorXd y = x;
            y(active[static_cast<std::size_t>(a)]) += da;
            if (b >= 0) y(active[static_cast<std::size_t>(b)]) += db;
            return f(y);
        };
        bool finite = true;
        for (Eigen::Index a = 0; a < m; ++a) {
            const double ha = h[static_cast<std::size_t>(a)];
            const double fp = shifted(a, ha, -1, 0.0);
            const double fm = shifted(a, -ha, -1, 0.0);
            finite = finite && std::isfinite(fp) && std::isfinite(fm);
            g(a) = (fp - fm) / (2.0 * ha);
            H(a, a) = (fp - 2.0 * fx + fm) / (ha * ha);
            for (Eigen::Index b = 0; b < a; ++b) {
                const double hb = h[static_cast<std::size_t>(b)];
                const double fpp = shifted(a, ha, b, hb);
                const double fpm = shifted(a, ha, b, -hb);
                const double fmp = shifted(a, -ha, b, hb);
                const double fmm = shifted(a, -ha, b, -hb);
                finite = finite && std::isfinite(fpp + fpm + fmp + fmm);
                H(a, b) = H(b, a) = (fpp - fpm - fmp + fmm) / (4.0 * ha * hb);
            }
        }
        if (!finite) return false;

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
        double lambda = 0.0;
        const double min_eig = eig.eigenvalues().minCoeff();
        const double max_eig = std::max(eig.eigenvalues().maxCoeff(), 1e-12);
        if (min_eig < 1e-8 * max_eig) lambda = -min_eig + 1e-6 * max_eig;

        // Near the optimum the decrease is lost in rounding; take the Newton
        // step regardless so the result does not depend on the noise.
        if (min_eig > 0.0) {
            const Eigen::VectorXd s = -(eig.eigenvectors() * (eig.eigenvalues().cwiseInverse().asDiagonal() *
                                                              (eig.eigenvectors().transpose() * g)));
            if (-0.5 * g.dot(s) < 1e-10 * std::max(1.0, std::abs(fx))) {
                Eigen::VectorXd y = x;
                for (Eigen::Index a = 0; a < m; ++a) y(active[static_cast<std::size_t>(a)]) += s(a);
                const double fy = f(y);
                if (std::isfinite(fy) && fy <= fx + 1e-9 * std::max(1.0, std::abs(fx))) {
                    x = y;
                    fx = fy;
                }
                return true;
            }
        }

        bool improved = false;
        for (int attempt = 0; attempt < 8; ++attempt) {
            const Eigen::MatrixXd A = H + lambda * Eigen::MatrixXd::Identity(m, m);
            const Eigen::VectorXd s = A.ldlt().solve(-g);
            Eigen::VectorXd y = x;
            for (Eigen::Index a = 0; a < m; ++a) y(active[static_cast<std::size_t>(a)]) += s(a);
            const double fy = f(y);
            if (fy < fx) {
                const double gain = fx - fy;
                x = y;
                fx = fy;
                improved = true;
                if (gain < 1e-13 * std::max(1.0, std::abs(fx))) return true;
                break;
            }
            lambda = lambda == 0.0 ? 1e-3 * max_eig : lambda * 10.0;
        }
        if (!improved) return min_eig > 0.0;
    }
    return false;
}

}  // namespace

OptimResult minimize(const Objective& objective, const Eigen::VectorXd& x0, const OptimOptions& options) {
    Counted f{objective};
    OptimResult result;
    result.x = x0;
    result.f = f(x0);

    bool converged = false;
    for (int run = 0; run < std::max(1, options.restarts); ++run) {
        OptimOptions opt = options;
        if (run > 0) opt.initial_step = std::max(options.initial_step * 0.2, 1e-3);
        RunResult r = nelder_mead_run(f, result.x, result.f, opt);
        result.iterations += r.iterations;
        const double gain = result.f - r.f;
        if (r.f <= result.f) {
            result.x = r.x;
            result.f = r.f;
        }
        if (run > 0 && r.met_tolerance && gain <= options.ftol) {
            converged = true;
            break;
        }
        if (run == std::max(1, options.restarts) - 1) converged = r.met_tolerance;
    }
    if (options.polish && std::isfinite(result.f) && newton_polish(f, result.x, result.f, options))
        converged = true;

    result.converged = converged && std::isfinite(result.f);
    result.evaluations = f.evaluations;
    return result;
}

}  // namespace mmr2
