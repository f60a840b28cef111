#include "mmr2/variance_measures.hpp"

#include <cmath>
#include <stdexcept>

namespace mmr2 {

namespace {

void require_square(const Eigen::MatrixXd& V, const char* what) {
    if (V.rows() != V.cols()) throw std::invalid_argument(std::string(what) + ": matrix is not square");
}

}  // namespace

std::string to_string(Measure m) {
    switch (m) {
        case Measure::asv: return "asv";
        case Measure::amv: return "amv";
        case Measure::sgv: return "sgv";
    }
    return "?";
}

double semivariance(const Eigen::MatrixXd& V, Eigen::Index i, Eigen::Index j) {
    require_square(V, "semivariance");
    if (i == j) throw std::invalid_argument("semivariance: i and j must differ");
    if (i < 0 || j < 0 || i >= V.rows() || j >= V.rows())
        throw std::out_of_range("semivariance: index out of range");
    return 0.5 * (V(i, i) + V(j, j)) - V(i, j);
}

TotalVariance theta_asv(const Eigen::MatrixXd& V) {
    require_square(V, "theta_asv");
    const Eigen::Index n = V.rows();
    if (n < 2) throw std::invalid_argument("theta_asv: needs n >= 2");
    const double nd = static_cast<double>(n);
    // trace(V P) = trace(V) - 1'V1 / n
    const double value = (V.trace() - V.sum() / nd) / (nd - 1.0);
    return {value, Measure::asv, n};
}

TotalVariance theta_amv(const Eigen::MatrixXd& V) {
    require_square(V, "theta_amv");
    const Eigen::Index n = V.rows();
    if (n < 1) throw std::invalid_argument("theta_amv: empty matrix");
    return {V.trace() / static_cast<double>(n), Measure::amv, n};
}

TotalVariance theta_sgv(const Eigen::MatrixXd& V) {
    require_square(V, "theta_sgv");
    const Eigen::Index n = V.rows();
    if (n < 1) throw std::invalid_argument("theta_sgv: empty matrix");
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) throw std::domain_error("theta_sgv: matrix is not positive definite");
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return {std::exp(logdet / static_cast<double>(n)), Measure::sgv, n};
}

TotalVariance theta(const Eigen::MatrixXd& V, Measure m) {
    switch (m) {
        case Measure::asv: return theta_asv(V);
        case Measure::amv: return theta_amv(V);
        case Measure::sgv: return theta_sgv(V);
    }
    throw std::invalid_argument("unknown measure");
}

}  // namespace mmr2
