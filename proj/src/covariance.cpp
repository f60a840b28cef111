#include "mmr2/covariance.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmr2 {

namespace {

double reported_variance(double v) {
    return v < std::exp(boundary_log_variance) ? 0.0 : v;
}

Eigen::MatrixXd cholesky_from_params(int d, const Eigen::VectorXd& p) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
    Eigen::Index k = 0;
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) L(i, j) = i == j ? std::exp(p(k++)) : p(k++);
    }
    return L;
}

class UnionFind {
  public:
    explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)) {
        std::iota(parent_.begin(), parent_.end(), 0);
    }
    int find(int a) {
        while (parent_[static_cast<std::size_t>(a)] != a) {
            auto& pa = parent_[static_cast<std::size_t>(a)];
            pa = parent_[static_cast<std::size_t>(pa)];
            a = pa;
        }
        return a;
    }
    void unite(int a, int b) { parent_[static_cast<std::size_t>(find(a))] = find(b); }

  private:
    std::vector<int> parent_;
};

}  // namespace

int term_param_count(CovStructure s, int dim) {
    return s == CovStructure::vc ? dim : dim * (dim + 1) / 2;
}

int residual_param_count(const ResidualLayout& layout) {
    const int t = layout.n_index;
    switch (layout.structure) {
        case ResidualStructure::id: return layout.n_by;
        case ResidualStructure::diag: return layout.n_by * t;
        case ResidualStructure::un: return layout.n_by * t * (t + 1) / 2;
    }
    return 0;
}

Eigen::MatrixXd term_covariance(CovStructure s, int dim, const Eigen::VectorXd& params) {
    if (params.size() != term_param_count(s, dim))
        throw std::invalid_argument("random-term parameter count does not match its structure");
    if (s == CovStructure::vc) return params.array().exp().matrix().asDiagonal();
    const Eigen::MatrixXd L = cholesky_from_params(dim, params);
    return L * L.transpose();
}

std::vector<Eigen::MatrixXd> residual_covariances(const ResidualLayout& layout,
                                                  const Eigen::VectorXd& params) {
    if (params.size() != residual_param_count(layout))
        throw std::invalid_argument("residual parameter count does not match its structure");
    std::vector<Eigen::MatrixXd> out;
    const int t = layout.n_index;
    Eigen::Index offset = 0;
    for (int b = 0; b < layout.n_by; ++b) {
        switch (layout.structure) {
            case ResidualStructure::id:
                out.push_back(Eigen::MatrixXd::Constant(1, 1, std::exp(params(offset++))));
                break;
            case ResidualStructure::diag:
                out.push_back(params.segment(offset, t).array().exp().matrix().asDiagonal());
                offset += t;
                break;
            case ResidualStructure::un: {
                const Eigen::Index len = t * (t + 1) / 2;
                const Eigen::MatrixXd L = cholesky_from_params(t, params.segment(offset, len));
                out.push_back(L * L.transpose());
                offset += len;
                break;
            }
        }
    }
    return out;
}

CovarianceModel::CovarianceModel(const DesignMatrices& design, std::optional<WorkingResidual> working)
    : design_(&design), working_(std::move(working)) {
    const int n = static_cast<int>(design.n());
    for (const auto& b : design.z_blocks) n_params_ += term_param_count(b.structure, b.dim());
    if (working_) {
        if (working_->weights.size() != n)
            throw std::invalid_argument("working residual weights have the wrong length");
        if (!(working_->dispersion > 0.0)) throw std::invalid_argument("dispersion must be positive");
    } else {
        n_params_ += residual_param_count(design.residual);
    }

    UnionFind uf(n);
    for (const auto& b : design.z_blocks) {
        if (b.is_unit_effect) continue;
        std::vector<int> first(static_cast<std::size_t>(b.n_groups), -1);
        for (int i = 0; i < n; ++i) {
            int& f = first[static_cast<std::size_t>(b.group[static_cast<std::size_t>(i)])];
            if (f < 0) {
                f = i;
            } else {
                uf.unite(i, f);
            }
        }
    }
    if (!working_ && design.residual.structure == ResidualStructure::un) {
        const auto& subj = design.residual.subject;
        std::vector<int> first;
        for (int i = 0; i < n; ++i) {
            const auto s = static_cast<std::size_t>(subj[static_cast<std::size_t>(i)]);
            if (s >= first.size()) first.resize(s + 1, -1);
            if (first[s] < 0) {
                first[s] = i;
            } else {
                uf.unite(i, first[s]);
            }
        }
    }
    std::vector<int> block_of(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        const int root = uf.find(i);
        int& id = block_of[static_cast<std::size_t>(root)];
        if (id < 0) {
            id = static_cast<int>(blocks_.size());
            blocks_.emplace_back();
        }
        blocks_[static_cast<std::size_t>(id)].push_back(i);
    }
}

Eigen::VectorXd CovarianceModel::flatten(const CovParams& p) const {
    Eigen::VectorXd x(n_params_);
    Eigen::Index k = 0;
    for (const auto& t : p.terms) {
        x.segment(k, t.size()) = t;
        k += t.size();
    }
    if (!working_) {
        x.segment(k, p.residual.size()) = p.residual;
        k += p.residual.size();
    }
    if (k != n_params_) throw std::invalid_argument("covariance parameters do not match the model");
    return x;
}

CovParams CovarianceModel::unflatten(const Eigen::VectorXd& x) const {
    if (x.size() != n_params_) throw std::invalid_argument("covariance parameter vector has the wrong length");
    CovParams p;
    Eigen::Index k = 0;
    for (const auto& b : design_->z_blocks) {
        const int len = term_param_count(b.structure, b.dim());
        p.terms.push_back(x.segment(k, len));
        k += len;
    }
    if (working_) {
        p.log_dispersion = std::log(working_->dispersion);
    } else {
        p.residual = x.segment(k, n_params_ - k);
    }
    return p;
}

CovParams CovarianceModel::initial(double residual_variance) const {
    const double s2 = residual_variance > 0 && std::isfinite(residual_variance) ? residual_variance : 1.0;
    CovParams p;
    for (const auto& b : design_->z_blocks) {
        const int d = b.dim();
        Eigen::VectorXd scale(d);
        for (int c = 0; c < d; ++c) {
            const double ms = b.design.col(c).squaredNorm() / static_cast<double>(b.design.rows());
            scale(c) = 0.25 * s2 / std::max(ms, 1e-12);
        }
        if (b.structure == CovStructure::vc) {
            p.terms.push_back(scale.array().log().matrix());
        } else {
            Eigen::VectorXd t = Eigen::VectorXd::Zero(term_param_count(b.structure, d));
            Eigen::Index k = 0;
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j <= i; ++j, ++k) {
                    if (i == j) t(k) = 0.5 * std::log(scale(i));
                }
            }
            p.terms.push_back(t);
        }
    }
    if (working_) {
        p.log_dispersion = std::log(working_->dispersion);
    } else {
        const auto& layout = design_->residual;
        p.residual = Eigen::VectorXd::Zero(residual_param_count(layout));
        const double ls = std::log(s2);
        const int t = layout.n_index;
        Eigen::Index k = 0;
        for (int b = 0; b < layout.n_by; ++b) {
            switch (layout.structure) {
                case ResidualStructure::id: p.residual(k++) = ls; break;
                case ResidualStructure::diag:
                    for (int i = 0; i < t; ++i) p.residual(k++) = ls;
                    break;
                case ResidualStructure::un:
                    for (int i = 0; i < t; ++i) {
                        for (int j = 0; j <= i; ++j, ++k) {
                            if (i == j) p.residual(k) = 0.5 * ls;
                        }
                    }
                    break;
            }
        }
    }
    return p;
}

CovarianceModel::Values CovarianceModel::evaluate(const CovParams& p) const {
    Values v;
    const auto& blocks = design_->z_blocks;
    if (p.terms.size() != blocks.size()) throw std::invalid_argument("dimension mismatch: random terms");
    for (std::size_t k = 0; k < blocks.size(); ++k)
        v.sigma.push_back(term_covariance(blocks[k].structure, blocks[k].dim(), p.terms[k]));
    if (working_) {
        v.working_diag = working_->dispersion * working_->weights;
    } else {
        v.residual = residual_covariances(design_->residual, p.residual);
    }
    return v;
}

double CovarianceModel::r_entry(const Values& v, int i, int j) const {
    const auto si = static_cast<std::size_t>(i);
    const auto sj = static_cast<std::size_t>(j);
    if (working_) return i == j ? v.working_diag(i) : 0.0;
    const ResidualLayout& r = design_->residual;
    const int bi = r.by.empty() ? 0 : r.by[si];
    switch (r.structure) {
        case ResidualStructure::id:
            return i == j ? v.residual[static_cast<std::size_t>(bi)](0, 0) : 0.0;
        case ResidualStructure::diag:
            return i == j ? v.residual[static_cast<std::size_t>(bi)](r.index[si], r.index[si]) : 0.0;
        case ResidualStructure::un: {
            if (r.subject[si] != r.subject[sj]) return 0.0;
            const int bj = r.by.empty() ? 0 : r.by[sj];
            if (bi != bj) return 0.0;
            return v.residual[static_cast<std::size_t>(bi)](r.index[si], r.index[sj]);
        }
    }
    return 0.0;
}

double CovarianceModel::v_entry(const Values& v, int i, int j) const {
    double s = r_entry(v, i, j);
    const auto& blocks = design_->z_blocks;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        const RandomBlock& b = blocks[k];
        if (b.group[static_cast<std::size_t>(i)] != b.group[static_cast<std::size_t>(j)]) continue;
        if (b.dim() == 1) {
            s += b.design(i, 0) * v.sigma[k](0, 0) * b.design(j, 0);
        } else {
            s += b.design.row(i).dot(v.sigma[k] * b.design.row(j).transpose());
        }
    }
    return s;
}

std::vector<VarianceComponent> CovarianceModel::components(const CovParams& p) const {
    std::vector<VarianceComponent> out;
    const Values v = evaluate(p);
    const auto& blocks = design_->z_blocks;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        const RandomBlock& b = blocks[k];
        const std::string group = b.is_unit_effect ? "unit" : b.label.substr(b.label.find('|') + 2);
        for (int i = 0; i < b.dim(); ++i) {
            for (int j = 0; j <= i; ++j) {
                if (i != j && b.structure == CovStructure::vc) continue;
                VarianceComponent c;
                if (b.is_unit_effect) {
                    c.label = "unit";
                } else if (i == j) {
                    c.label = group + ": var(" + b.design_labels[static_cast<std::size_t>(i)] + ")";
                } else {
                    c.label = group + ": cov(" + b.design_labels[static_cast<std::size_t>(j)] + ", " +
                              b.design_labels[static_cast<std::size_t>(i)] + ")";
                }
                c.value = i == j ? reported_variance(v.sigma[k](i, i)) : v.sigma[k](i, j);
                out.push_back(std::move(c));
            }
        }
    }
    if (working_) {
        out.push_back({"dispersion", working_->dispersion});
        return out;
    }
    const ResidualLayout& r = design_->residual;
    for (int b = 0; b < r.n_by; ++b) {
        const std::string tag = r.by_labels.empty() ? "" : "[" + r.by_labels[static_cast<std::size_t>(b)] + "]";
        const Eigen::MatrixXd& m = v.residual[static_cast<std::size_t>(b)];
        if (r.structure == ResidualStructure::id) {
            out.push_back({"residual" + tag, reported_variance(m(0, 0))});
            continue;
        }
        for (int i = 0; i < m.rows(); ++i) {
            for (int j = 0; j <= i; ++j) {
                if (i != j && r.structure == ResidualStructure::diag) continue;
                const auto& lab = r.index_labels;
                const std::string cell = i == j ? "var(" + lab[static_cast<std::size_t>(i)] + ")"
                                                : "cov(" + lab[static_cast<std::size_t>(j)] + ", " +
                                                      lab[static_cast<std::size_t>(i)] + ")";
                out.push_back({"residual" + tag + ": " + cell, i == j ? reported_variance(m(i, i)) : m(i, j)});
            }
        }
    }
    return out;
}

AssembledCovariance assemble(const CovParams& params, const DesignMatrices& design,
                             const std::optional<WorkingResidual>& working) {
    const CovarianceModel model(design, working);
    const CovarianceModel::Values v = model.evaluate(params);
    const Eigen::Index n = design.n();

    AssembledCovariance out;
    Eigen::Index q = 0;
    for (const auto& b : design.z_blocks) q += b.Z.cols();
    out.G = Eigen::MatrixXd::Zero(q, q);
    Eigen::Index offset = 0;
    for (std::size_t k = 0; k < design.z_blocks.size(); ++k) {
        const RandomBlock& b = design.z_blocks[k];
        const int d = b.dim();
        for (int g = 0; g < b.n_groups; ++g) out.G.block(offset + g * d, offset + g * d, d, d) = v.sigma[k];
        offset += b.Z.cols();

        Eigen::MatrixXd zgz = Eigen::MatrixXd::Zero(n, n);
        if (b.is_unit_effect) {
            zgz.diagonal().setConstant(v.sigma[k](0, 0));
        } else {
            const Eigen::MatrixXd DS = b.design * v.sigma[k];
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j <= i; ++j) {
                    if (b.group[static_cast<std::size_t>(i)] != b.group[static_cast<std::size_t>(j)]) continue;
                    zgz(i, j) = zgz(j, i) = DS.row(i).dot(b.design.row(j));
                }
            }
        }
        out.zgz_blocks.push_back(std::move(zgz));
    }

    out.R = Eigen::MatrixXd::Zero(n, n);
    for (const auto& rows : model.row_blocks()) {
        for (int i : rows) {
            for (int j : rows) out.R(i, j) = model.r_entry(v, i, j);
        }
    }
    out.V = out.R;
    for (const auto& z : out.zgz_blocks) out.V += z;
    return out;
}

AssembledCovariance assemble(const CovParams& params, const DesignMatrices& design, const ModelSpec& spec) {
    if (spec.random_terms.size() != design.z_blocks.size())
        throw std::invalid_argument("dimension mismatch: spec and design disagree on random terms");
    if (!spec.family.is_gaussian())
        throw std::invalid_argument("assemble(spec) covers gaussian residuals; pass a working residual for GLMMs");
    return assemble(params, design, std::optional<WorkingResidual>{});
}

double intraclass_correlation(double sigma_u2, double sigma_e2) {
    if (!(sigma_e2 > 0.0)) throw std::invalid_argument("intraclass_correlation: sigma_e2 must be positive");
    if (sigma_u2 < 0.0) throw std::invalid_argument("intraclass_correlation: sigma_u2 must be non-negative");
    return sigma_u2 / (sigma_u2 + sigma_e2);
}

}  // namespace mmr2
