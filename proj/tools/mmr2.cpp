// mmr2: coefficients of determination for linear and generalized linear mixed models.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmr2/dataset.hpp"
#include "mmr2/determination.hpp"
#include "mmr2/model_spec.hpp"
#include "mmr2/parallel.hpp"
#include "mmr2/validation.hpp"

namespace {

using namespace mmr2;

struct RunConfig {
    std::string data_path;
    std::string schema_path;
    std::vector<std::string> formulas;
    std::string method;
    std::string out = "text";
    std::string output_path;
    std::string rank_by = "aic";
    std::uint64_t seed = 20190101;
    int replicates = 500;
    long long draws = 1000000;
};

// Exit with status 1 after a diagnostic.
struct Failure {
    std::string message;
};

std::vector<ModelSpec> load_specs(const RunConfig& cfg, const Dataset& data) {
    std::vector<ModelSpec> specs;
    for (const auto& text : cfg.formulas) {
        ModelSpec spec;
        try {
            spec = parse_formula(text);
        } catch (const ParseError& e) {
            throw Failure{std::string("formula error: ") + e.what() + "\n" + e.caret()};
        }
        if (!cfg.method.empty()) spec.method = parse_method(cfg.method);
        try {
            specs.push_back(validate(spec, data));
        } catch (const ValidationError& e) {
            std::string msg = "invalid model '" + text + "':";
            for (const auto& p : e.problems()) msg += "\n  - " + p;
            throw Failure{msg};
        }
    }
    return specs;
}

Dataset load_data(const RunConfig& cfg) {
    try {
        return load_csv(cfg.data_path, load_schema(cfg.schema_path));
    } catch (const std::exception& e) {
        throw Failure{std::string("cannot read data: ") + e.what()};
    }
}

std::vector<R2Report> analyze_all(const Dataset& data, const std::vector<ModelSpec>& specs) {
    std::vector<std::optional<R2Report>> slots(specs.size());
    std::vector<std::string> errors(specs.size());
    AnalyzeOptions options;
    options.concurrent = specs.size() == 1;
    parallel_for(specs.size(), [&](std::size_t i) {
        try {
            slots[i] = analyze(data, specs[i], options);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    std::vector<R2Report> out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!errors[i].empty()) throw Failure{"fit failed for '" + print_formula(specs[i]) + "': " + errors[i]};
        out.push_back(std::move(*slots[i]));
    }
    return out;
}

void emit(const RunConfig& cfg, const std::string& text) {
    if (cfg.output_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(cfg.output_path);
    if (!f) throw Failure{"cannot write '" + cfg.output_path + "'"};
    f << text;
}

void cmd_r2(const RunConfig& cfg) {
    const Dataset data = load_data(cfg);
    const auto reports = analyze_all(data, load_specs(cfg, data));
    std::ostringstream os;
    if (cfg.out == "json") {
        os << (reports.size() == 1 ? to_json(reports.front()) : to_json(reports)) << "\n";
    } else if (cfg.out == "csv") {
        os << csv_header() << "\n";
        for (const auto& r : reports) os << to_csv_row(r) << "\n";
    } else {
        for (std::size_t i = 0; i < reports.size(); ++i) os << (i ? "\n" : "") << to_text(reports[i]);
    }
    emit(cfg, os.str());
}

void cmd_compare(const RunConfig& cfg) {
    if (cfg.formulas.size() < 2) throw Failure{"compare needs at least two --formula options"};
    const Dataset data = load_data(cfg);
    const auto specs = load_specs(cfg, data);
    for (const auto& s : specs) {
        if (s.family.family != specs.front().family.family || s.family.link != specs.front().family.link)
            throw Failure{"compare: all formulas must share one family and link"};
    }
    const auto reports = analyze_all(data, specs);

    std::vector<std::size_t> order(reports.size());
    std::iota(order.begin(), order.end(), 0);
    const bool by_omega = cfg.rank_by == "omega";
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const R2Report& ra = reports[a];
        const R2Report& rb = reports[b];
        if (by_omega) {
            const double oa = ra.omega_beta ? ra.omega_beta->asv : -std::numeric_limits<double>::infinity();
            const double ob = rb.omega_beta ? rb.omega_beta->asv : -std::numeric_limits<double>::infinity();
            if (oa != ob) return oa > ob;
        } else if (ra.full.aic != rb.full.aic) {
            return ra.full.aic < rb.full.aic;
        }
        return ra.full.n_cov_params < rb.full.n_cov_params;
    });

    std::ostringstream os;
    if (cfg.out == "json") {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t k = 0; k < order.size(); ++k) {
            const R2Report& r = reports[order[k]];
            rows.push_back({{"rank", k + 1},
                            {"best", k == 0},
                            {"formula", r.formula},
                            {"aic", r.full.aic},
                            {"n_cov_params", r.full.n_cov_params},
                            {"report", nlohmann::json::parse(to_json(r, -1))}});
        }
        os << nlohmann::json{{"rank_by", cfg.rank_by}, {"ranking", rows}}.dump(2) << "\n";
    } else if (cfg.out == "csv") {
        os << "rank,best," << csv_header() << "\n";
        for (std::size_t k = 0; k < order.size(); ++k)
            os << k + 1 << ',' << (k == 0 ? "true" : "false") << ',' << to_csv_row(reports[order[k]]) << "\n";
    } else {
        os << "ranked by " << (by_omega ? "omega_beta (ASV), descending" : "AIC, ascending") << "\n";
        os << "rank          AIC    k  omega_b ASV  omega_b AMV  formula\n";
        for (std::size_t k = 0; k < order.size(); ++k) {
            const R2Report& r = reports[order[k]];
            os << std::setw(3) << k + 1 << (k == 0 ? '*' : ' ') << std::fixed << std::setprecision(2)
               << std::setw(12) << r.full.aic << std::setw(5) << r.full.n_cov_params << std::setprecision(4);
            if (r.omega_beta) {
                os << std::setw(13) << r.omega_beta->asv << std::setw(13) << r.omega_beta->amv;
            } else {
                os << std::setw(13) << "-" << std::setw(13) << "-";
            }
            os << "  " << r.formula << "\n";
        }
    }
    emit(cfg, os.str());
}

void cmd_validate(const RunConfig& cfg) {
    validation::SuiteOptions options;
    options.seed = cfg.seed;
    options.anova_replicates = cfg.replicates;
    options.mc_draws = cfg.draws;
    const auto checks = validation::run_suite(options);
    const bool all = std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });

    std::ostringstream os;
    if (cfg.out == "json") {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& c : checks)
            rows.push_back({{"name", c.name}, {"value", c.value}, {"target", c.target},
                            {"tolerance", c.tolerance}, {"pass", c.pass}, {"detail", c.detail}});
        os << nlohmann::json{{"seed", cfg.seed}, {"rng", validation::Rng::algorithm}, {"checks", rows}, {"pass", all}}
                  .dump(2)
           << "\n";
    } else if (cfg.out == "csv") {
        os << "name,value,target,tolerance,pass,detail\n";
        for (const auto& c : checks)
            os << '"' << c.name << "\"," << std::setprecision(12) << c.value << ',' << c.target << ',' << c.tolerance
               << ',' << (c.pass ? "true" : "false") << ",\"" << c.detail << "\"\n";
    } else {
        os << "seed " << cfg.seed << "  rng: " << validation::Rng::algorithm << "\n";
        for (const auto& c : checks) {
            os << (c.pass ? "PASS  " : "FAIL  ") << c.name << "  value=" << std::setprecision(8) << c.value
               << " target=" << c.target << " tol=" << c.tolerance;
            if (!c.detail.empty()) os << "  (" << c.detail << ")";
            os << "\n";
        }
    }
    emit(cfg, os.str());
    if (!all) throw Failure{"validation failed"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coefficients of determination for linear and generalized linear mixed models"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto add_model_options = [&cfg](CLI::App* sub) {
        sub->add_option("--data", cfg.data_path, "CSV file, one row per observation")->required()->check(CLI::ExistingFile);
        sub->add_option("--schema", cfg.schema_path, "JSON column schema")->required()->check(CLI::ExistingFile);
        sub->add_option("--formula", cfg.formulas, "model formula (repeatable)")->required()->allow_extra_args(false);
        sub->add_option("--method", cfg.method, "override the estimation method")
            ->check(CLI::IsMember({"ml", "reml", "mspl", "rspl"}));
        sub->add_option("--out", cfg.out, "output format")->check(CLI::IsMember({"text", "json", "csv"}));
        sub->add_option("-o,--output", cfg.output_path, "write to a file instead of standard output");
    };

    CLI::App* r2 = app.add_subcommand("r2", "fit full and null models and report omega_beta, omega_u, omega_beta_u");
    add_model_options(r2);
    CLI::App* compare = app.add_subcommand("compare", "rank candidate models");
    add_model_options(compare);
    compare->add_option("--rank-by", cfg.rank_by, "ranking criterion")->check(CLI::IsMember({"aic", "omega"}));
    CLI::App* val = app.add_subcommand("validate", "run the oracle suite");
    val->add_option("--seed", cfg.seed, "random seed");
    val->add_option("--replicates", cfg.replicates, "one-way REML replicates")->check(CLI::PositiveNumber);
    val->add_option("--draws", cfg.draws, "Monte Carlo draws")->check(CLI::Range(100000LL, 1000000000LL));
    val->add_option("--out", cfg.out, "output format")->check(CLI::IsMember({"text", "json", "csv"}));
    val->add_option("-o,--output", cfg.output_path, "write to a file instead of standard output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (r2->parsed()) cmd_r2(cfg);
        else if (compare->parsed()) cmd_compare(cfg);
        else cmd_validate(cfg);
    } catch (const Failure& f) {
        std::cerr << "mmr2: " << f.message << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "mmr2: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
