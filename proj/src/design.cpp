#include "mmr2/design.hpp"

#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mmr2 {

namespace {

struct Coded {
    std::vector<Eigen::VectorXd> columns;
    std::vector<std::string> labels;
};

const Column& resolve(const Dataset& data, const std::string& name) {
    const Column* c = data.find(name);
    if (!c) throw std::invalid_argument("unresolved identifier '" + name + "'");
    return *c;
}

Coded code_variable(const Dataset& data, const std::string& name) {
    const Column& col = resolve(data, name);
    const auto n = static_cast<Eigen::Index>(data.n_rows());
    Coded out;
    if (!col.is_factor()) {
        out.columns.emplace_back(Eigen::Map<const Eigen::VectorXd>(col.values().data(), n));
        out.labels.push_back(name);
        return out;
    }
    for (std::size_t level = 1; level < col.levels().size(); ++level) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i)
            v(i) = col.codes()[static_cast<std::size_t>(i)] == static_cast<int>(level) ? 1.0 : 0.0;
        out.columns.push_back(std::move(v));
        out.labels.push_back(name + "[" + col.levels()[level] + "]");
    }
    return out;
}

Coded code_term(const Dataset& data, const Term& term) {
    const auto n = static_cast<Eigen::Index>(data.n_rows());
    Coded out;
    if (term.is_intercept()) {
        out.columns.push_back(Eigen::VectorXd::Ones(n));
        out.labels.push_back("(Intercept)");
        return out;
    }
    out = code_variable(data, term.vars.front());
    for (std::size_t k = 1; k < term.vars.size(); ++k) {
        const Coded rhs = code_variable(data, term.vars[k]);
        Coded prod;
        for (std::size_t a = 0; a < out.columns.size(); ++a) {
            for (std::size_t b = 0; b < rhs.columns.size(); ++b) {
                prod.columns.push_back(out.columns[a].cwiseProduct(rhs.columns[b]));
                prod.labels.push_back(out.labels[a] + ":" + rhs.labels[b]);
            }
        }
        out = std::move(prod);
    }
    return out;
}

// Dense recoding of a factor to 0..k-1 over the levels actually present.
std::vector<int> compact_codes(const Column& col, int& n_levels, std::vector<std::string>* labels = nullptr) {
    std::map<int, int> remap;
    for (int c : col.codes()) remap.emplace(c, 0);
    int next = 0;
    for (auto& [code, idx] : remap) {
        idx = next++;
        if (labels) labels->push_back(col.levels()[static_cast<std::size_t>(code)]);
    }
    n_levels = next;
    std::vector<int> out;
    out.reserve(col.codes().size());
    for (int c : col.codes()) out.push_back(remap.at(c));
    return out;
}

std::vector<int> index_codes(const Column& col, int& n_levels, std::vector<std::string>& labels) {
    if (col.is_factor()) return compact_codes(col, n_levels, &labels);
    std::map<double, int> remap;
    for (double v : col.values()) remap.emplace(v, 0);
    int next = 0;
    for (auto& [value, idx] : remap) {
        idx = next++;
        std::ostringstream os;
        os << value;
        labels.push_back(os.str());
    }
    n_levels = next;
    std::vector<int> out;
    for (double v : col.values()) out.push_back(remap.at(v));
    return out;
}

}  // namespace

DesignMatrices build_design(const Dataset& data, const ModelSpec& spec) {
    const auto n = static_cast<Eigen::Index>(data.n_rows());
    DesignMatrices dm;

    // fixed effects
    std::vector<Eigen::VectorXd> xcols;
    for (const auto& term : spec.fixed_terms) {
        Coded c = code_term(data, term);
        for (std::size_t k = 0; k < c.columns.size(); ++k) {
            xcols.push_back(std::move(c.columns[k]));
            dm.x_labels.push_back(std::move(c.labels[k]));
        }
    }
    if (xcols.empty() || dm.x_labels.front() != "(Intercept)")
        throw std::invalid_argument("fixed effects must start with the intercept");
    dm.X.resize(n, static_cast<Eigen::Index>(xcols.size()));
    for (std::size_t k = 0; k < xcols.size(); ++k) dm.X.col(static_cast<Eigen::Index>(k)) = xcols[k];

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dm.X);
    if (qr.rank() < dm.X.cols())
        throw std::invalid_argument("fixed-effects design is rank deficient (rank " +
                                    std::to_string(qr.rank()) + " < " +
                                    std::to_string(dm.X.cols()) + " columns)");

    // response and binomial sizes
    const Column& y = resolve(data, spec.response);
    if (y.is_factor()) throw std::invalid_argument("response must be numeric");
    dm.response = Eigen::Map<const Eigen::VectorXd>(y.values().data(), n);
    if (spec.family.family == Family::binomial) {
        if (spec.family.size) {
            const Column& m = resolve(data, *spec.family.size);
            dm.binomial_sizes = Eigen::Map<const Eigen::VectorXd>(m.values().data(), n);
        } else {
            dm.binomial_sizes = Eigen::VectorXd::Ones(n);
        }
    }

    // random effects
    for (const auto& rt : spec.random_terms) {
        RandomBlock block;
        block.label = rt.label();
        block.structure = rt.structure;
        block.is_unit_effect = rt.is_unit_effect;
        if (rt.is_unit_effect) {
            dm.z_blocks.push_back(make_unit_block(n));
            continue;
        } else {
            const Column& g = resolve(data, rt.group);
            if (!g.is_factor())
                throw std::invalid_argument("grouping column '" + rt.group + "' is not a factor");
            block.group = compact_codes(g, block.n_groups);
            if (block.n_groups < 2)
                throw std::invalid_argument("grouping factor '" + rt.group + "' has a single level");
            std::vector<Eigen::VectorXd> dcols;
            for (const auto& term : rt.design) {
                Coded c = code_term(data, term);
                for (std::size_t k = 0; k < c.columns.size(); ++k) {
                    dcols.push_back(std::move(c.columns[k]));
                    block.design_labels.push_back(std::move(c.labels[k]));
                }
            }
            block.design.resize(n, static_cast<Eigen::Index>(dcols.size()));
            for (std::size_t k = 0; k < dcols.size(); ++k)
                block.design.col(static_cast<Eigen::Index>(k)) = dcols[k];
        }
        const int d = block.dim();
        block.Z = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(block.n_groups) * d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int g = block.group[static_cast<std::size_t>(i)];
            for (int c = 0; c < d; ++c) block.Z(i, static_cast<Eigen::Index>(g) * d + c) = block.design(i, c);
        }
        dm.z_blocks.push_back(std::move(block));
    }

    // residual layout
    const ResidualSpec& rs = spec.residual;
    dm.residual.structure = rs.structure;
    if (rs.by) dm.residual.by = compact_codes(resolve(data, *rs.by), dm.residual.n_by, &dm.residual.by_labels);
    if (rs.index)
        dm.residual.index = index_codes(resolve(data, *rs.index), dm.residual.n_index, dm.residual.index_labels);
    if (rs.subject) {
        int n_subjects = 0;
        dm.residual.subject = compact_codes(resolve(data, *rs.subject), n_subjects);
    }
    return dm;
}

RandomBlock make_unit_block(Eigen::Index n) {
    RandomBlock block;
    block.label = "unit";
    block.is_unit_effect = true;
    block.n_groups = static_cast<int>(n);
    block.group.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) block.group[static_cast<std::size_t>(i)] = static_cast<int>(i);
    block.design = Eigen::MatrixXd::Ones(n, 1);
    block.design_labels = {"unit"};
    block.Z = Eigen::MatrixXd::Identity(n, n);
    return block;
}

}  // namespace mmr2
