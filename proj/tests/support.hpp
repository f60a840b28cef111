#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "mmr2/dataset.hpp"
#include "mmr2/design.hpp"
#include "mmr2/model_spec.hpp"

#ifndef MMR2_DATA_DIR
#error "MMR2_DATA_DIR must point at the bundled data directory"
#endif

namespace mmr2::test {

inline std::filesystem::path data_dir() { return MMR2_DATA_DIR; }

inline const Dataset& dental() {
    static const Dataset d = load_csv(data_dir() / "dental.csv", load_schema(data_dir() / "dental.schema.json"));
    return d;
}

inline const Dataset& crab() {
    static const Dataset d = load_csv(data_dir() / "crab.csv", load_schema(data_dir() / "crab.schema.json"));
    return d;
}

inline ModelSpec checked(const std::string& formula, const Dataset& data) {
    return validate(parse_formula(formula), data);
}

inline std::shared_ptr<const DesignMatrices> design_of(const Dataset& data, const ModelSpec& spec) {
    return std::make_shared<const DesignMatrices>(build_design(data, spec));
}

// Balanced one-way layout: factor g with a levels, each repeated m times.
inline Dataset oneway_data(const Eigen::VectorXd& y, int a, int m) {
    std::vector<std::string> levels;
    for (int j = 0; j < a; ++j) levels.push_back("g" + std::to_string(j));
    std::vector<int> codes;
    for (int j = 0; j < a; ++j)
        for (int k = 0; k < m; ++k) codes.push_back(j);
    std::vector<double> values(y.data(), y.data() + y.size());
    return Dataset({Column::make_factor("g", levels, codes), Column::make_numeric("y", values)});
}

}  // namespace mmr2::test
