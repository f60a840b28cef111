#include "mmr2/determination.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "mmr2/design.hpp"
#include "mmr2/parallel.hpp"

namespace mmr2 {

namespace {

using nlohmann::json;

void require_same_measure(const TotalVariance& a, const TotalVariance& b) {
    if (a.measure != b.measure) throw std::invalid_argument("total-variance measures do not match");
}

void require_positive_null(const TotalVariance& null) {
    if (!(null.value > 0.0)) throw std::domain_error("null-model total variance must be positive");
}

struct Outcome {
    FitSummary summary;
    VTilde vt;
    Eigen::VectorXd R_h;
    bool converged = false;
};

FitSummary summarize(const FittedModel& fit) {
    FitSummary s;
    s.formula = print_formula(fit.spec);
    s.converged = fit.converged;
    s.loglik = fit.loglik;
    s.aic = fit.aic;
    s.n_cov_params = fit.n_cov_params;
    s.iterations = fit.n_iter;
    for (Eigen::Index k = 0; k < fit.beta_hat.size(); ++k)
        s.beta.push_back({fit.design->x_labels[static_cast<std::size_t>(k)], fit.beta_hat(k)});
    for (const auto& c : fit.components) s.variance_components.push_back({c.label, c.value});
    s.warnings = fit.warnings;
    return s;
}

Outcome run_fit(const Dataset& data, const ModelSpec& spec, const AnalyzeOptions& options) {
    auto design = std::make_shared<const DesignMatrices>(build_design(data, spec));
    Outcome out;
    if (spec.family.is_gaussian()) {
        const FittedModel fit = fit_lmm(design, spec, spec.method, options.lmm);
        out.summary = summarize(fit);
        out.vt = assemble_v_tilde(fit, Eigen::VectorXd());
        out.converged = fit.converged;
    } else {
        const GlmmFit fit = fit_pl(design, spec, spec.method, options.glmm);
        out.summary = summarize(fit);
        out.summary.iterations = fit.outer_iterations;
        out.summary.unit_variance = fit.unit_variance;
        out.summary.dispersion = fit.dispersion;
        out.vt = VTilde{fit.V_tilde, fit.R_tilde, fit.zgz_blocks, fit.zgz_labels};
        out.R_h = fit.R_h;
        out.converged = fit.converged;
    }
    return out;
}

MeasurePair measure_pair(const Eigen::MatrixXd& M) { return {theta_asv(M).value, theta_amv(M).value}; }

void flag_measure_gap(const std::string& name, const MeasurePair& p, std::vector<std::string>& warnings) {
    if (std::abs(p.asv - p.amv) > 0.01) {
        std::ostringstream os;
        os << name << ": ASV and AMV differ by " << std::setprecision(3) << std::abs(p.asv - p.amv)
           << " (covariance among observations matters)";
        warnings.push_back(os.str());
    }
}

// ---- JSON ----

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

void put_pair(json& j, const std::string& stem, const std::optional<MeasurePair>& p) {
    j[stem + "_asv"] = p ? json(p->asv) : json(nullptr);
    j[stem + "_amv"] = p ? json(p->amv) : json(nullptr);
}

std::optional<MeasurePair> get_pair(const json& j, const std::string& stem) {
    const auto a = read_opt(j, (stem + "_asv").c_str());
    const auto b = read_opt(j, (stem + "_amv").c_str());
    if (!a || !b) return std::nullopt;
    return MeasurePair{*a, *b};
}

json named_values(const std::vector<NamedValue>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back({{"name", x.name}, {"value", x.value}});
    return a;
}

std::vector<NamedValue> read_named(const json& a) {
    std::vector<NamedValue> out;
    for (const auto& x : a) out.push_back({x.at("name").get<std::string>(), x.at("value").get<double>()});
    return out;
}

json summary_json(const FitSummary& s) {
    return {{"formula", s.formula},
            {"converged", s.converged},
            {"loglik", s.loglik},
            {"aic", s.aic},
            {"n_cov_params", s.n_cov_params},
            {"iterations", s.iterations},
            {"beta", named_values(s.beta)},
            {"variance_components", named_values(s.variance_components)},
            {"unit_variance", opt_number(s.unit_variance)},
            {"dispersion", opt_number(s.dispersion)},
            {"warnings", s.warnings}};
}

FitSummary read_summary(const json& j) {
    FitSummary s;
    s.formula = j.at("formula").get<std::string>();
    s.converged = j.at("converged").get<bool>();
    s.loglik = j.at("loglik").get<double>();
    s.aic = j.at("aic").get<double>();
    s.n_cov_params = j.at("n_cov_params").get<int>();
    s.iterations = j.at("iterations").get<int>();
    s.beta = read_named(j.at("beta"));
    s.variance_components = read_named(j.at("variance_components"));
    s.unit_variance = read_opt(j, "unit_variance");
    s.dispersion = read_opt(j, "dispersion");
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
    return s;
}

json report_json(const R2Report& r) {
    json j;
    j["formula"] = r.formula;
    j["method"] = to_string(r.method);
    j["family"] = to_string(r.family);
    j["n"] = r.n;
    j["converged"] = r.converged;
    put_pair(j, "omega_beta", r.omega_beta);
    put_pair(j, "omega_u", r.omega_u);
    put_pair(j, "omega_beta_u", r.omega_beta_u);
    json partials = json::array();
    for (const auto& p : r.partials)
        partials.push_back({{"term", p.label}, {"omega_u_asv", p.value.asv}, {"omega_u_amv", p.value.amv}});
    j["partials"] = partials;
    put_pair(j, "theta_full", r.theta.full);
    put_pair(j, "theta_null", r.theta.null);
    put_pair(j, "theta_zgz", r.theta.zgz);
    put_pair(j, "theta_residual", r.theta.residual);
    json terms = json::array();
    for (const auto& t : r.theta.zgz_terms) terms.push_back({{"term", t.label}, {"asv", t.value.asv}, {"amv", t.value.amv}});
    j["theta_zgz_terms"] = terms;
    put_pair(j, "omega_beta_shared_rh", r.omega_beta_shared_rh);
    j["full"] = summary_json(r.full);
    j["null"] = summary_json(r.null);
    j["warnings"] = r.warnings;
    return j;
}

Family parse_family(const std::string& s) {
    if (s == "gaussian") return Family::gaussian;
    if (s == "binomial") return Family::binomial;
    if (s == "poisson") return Family::poisson;
    throw std::invalid_argument("unknown family '" + s + "'");
}

R2Report read_report(const json& j) {
    R2Report r;
    r.formula = j.at("formula").get<std::string>();
    r.method = parse_method(j.at("method").get<std::string>());
    r.family = parse_family(j.at("family").get<std::string>());
    r.n = j.at("n").get<long long>();
    r.converged = j.at("converged").get<bool>();
    r.omega_beta = get_pair(j, "omega_beta");
    r.omega_u = get_pair(j, "omega_u");
    r.omega_beta_u = get_pair(j, "omega_beta_u");
    for (const auto& p : j.at("partials"))
        r.partials.push_back({p.at("term").get<std::string>(),
                              {p.at("omega_u_asv").get<double>(), p.at("omega_u_amv").get<double>()}});
    r.theta.full = get_pair(j, "theta_full").value_or(MeasurePair{});
    r.theta.null = get_pair(j, "theta_null").value_or(MeasurePair{});
    r.theta.zgz = get_pair(j, "theta_zgz").value_or(MeasurePair{});
    r.theta.residual = get_pair(j, "theta_residual").value_or(MeasurePair{});
    for (const auto& t : j.at("theta_zgz_terms"))
        r.theta.zgz_terms.push_back({t.at("term").get<std::string>(), {t.at("asv").get<double>(), t.at("amv").get<double>()}});
    r.omega_beta_shared_rh = get_pair(j, "omega_beta_shared_rh");
    r.full = read_summary(j.at("full"));
    r.null = read_summary(j.at("null"));
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os << std::setprecision(10) << *v;
    return os.str();
}

}  // namespace

double omega_beta(const TotalVariance& theta_full, const TotalVariance& theta_null) {
    require_same_measure(theta_full, theta_null);
    require_positive_null(theta_null);
    return (theta_null.value - theta_full.value) / theta_null.value;
}

OmegaU omega_u(const std::vector<TotalVariance>& theta_zgz, const TotalVariance& theta_null) {
    require_positive_null(theta_null);
    OmegaU out;
    for (const auto& t : theta_zgz) {
        require_same_measure(t, theta_null);
        out.partials.push_back(t.value / theta_null.value);
        out.value += out.partials.back();
    }
    return out;
}

double omega_beta_u(const TotalVariance& theta_r, const TotalVariance& theta_null) {
    require_same_measure(theta_r, theta_null);
    require_positive_null(theta_null);
    return 1.0 - theta_r.value / theta_null.value;
}

R2Report analyze(const Dataset& data, const ModelSpec& spec, const AnalyzeOptions& options) {
    const ModelSpec checked = validate(spec, data);
    const ModelSpec specs[2] = {checked, null_spec(checked)};
    std::optional<Outcome> outcomes[2];
    parallel_for(
        2, [&](std::size_t k) { outcomes[k] = run_fit(data, specs[k], options); },
        options.concurrent ? std::min(2u, max_threads()) : 1u);
    const Outcome& full = *outcomes[0];
    const Outcome& null = *outcomes[1];

    R2Report r;
    r.formula = print_formula(checked);
    r.method = checked.method;
    r.family = checked.family.family;
    r.n = static_cast<long long>(data.n_rows());
    r.full = full.summary;
    r.null = null.summary;
    r.converged = full.converged && null.converged;
    for (const auto& w : full.summary.warnings) r.warnings.push_back("full model: " + w);
    for (const auto& w : null.summary.warnings) r.warnings.push_back("null model: " + w);

    const Eigen::Index n = full.vt.V_tilde.rows();
    Eigen::MatrixXd zgz = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < full.vt.zgz_blocks.size(); ++k) {
        zgz += full.vt.zgz_blocks[k];
        r.theta.zgz_terms.push_back({full.vt.zgz_labels[k], measure_pair(full.vt.zgz_blocks[k])});
    }
    r.theta.full = measure_pair(full.vt.V_tilde);
    r.theta.null = measure_pair(null.vt.V_tilde);
    r.theta.zgz = measure_pair(zgz);
    r.theta.residual = measure_pair(full.vt.R_tilde);

    if (!r.converged) {
        r.warnings.push_back("a fit did not converge; coefficients of determination are not reported");
        return r;
    }

    MeasurePair ob{}, ou{}, obu{};
    for (const Measure m : {Measure::asv, Measure::amv}) {
        const TotalVariance t_full = theta(full.vt.V_tilde, m);
        const TotalVariance t_null = theta(null.vt.V_tilde, m);
        std::vector<TotalVariance> t_zgz;
        for (const auto& b : full.vt.zgz_blocks) t_zgz.push_back(theta(b, m));
        const OmegaU u = omega_u(t_zgz, t_null);
        const double b = omega_beta(t_full, t_null);
        const double bu = omega_beta_u(theta(full.vt.R_tilde, m), t_null);
        (m == Measure::asv ? ob.asv : ob.amv) = b;
        (m == Measure::asv ? ou.asv : ou.amv) = u.value;
        (m == Measure::asv ? obu.asv : obu.amv) = bu;
        for (std::size_t k = 0; k < u.partials.size(); ++k) {
            if (m == Measure::asv) r.partials.push_back({full.vt.zgz_labels[k], {u.partials[k], 0.0}});
            else r.partials[k].value.amv = u.partials[k];
        }
    }
    r.omega_beta = ob;
    r.omega_u = ou;
    r.omega_beta_u = obu;

    if (!checked.family.is_gaussian()) {
        Eigen::MatrixXd v0 = null.vt.V_tilde;
        v0.diagonal() += full.R_h - null.R_h;
        const MeasurePair t0 = measure_pair(v0);
        r.omega_beta_shared_rh = MeasurePair{1.0 - r.theta.full.asv / t0.asv, 1.0 - r.theta.full.amv / t0.amv};
    }

    if (ob.asv < 0.0 || ob.amv < 0.0)
        r.warnings.push_back("omega_beta is negative: the fixed effects explain no variance beyond the null model");
    flag_measure_gap("omega_beta", ob, r.warnings);
    flag_measure_gap("omega_u", ou, r.warnings);
    flag_measure_gap("omega_beta_u", obu, r.warnings);
    return r;
}

std::string to_json(const R2Report& report, int indent) { return report_json(report).dump(indent); }

std::string to_json(const std::vector<R2Report>& reports, int indent) {
    json a = json::array();
    for (const auto& r : reports) a.push_back(report_json(r));
    return a.dump(indent);
}

R2Report report_from_json(std::string_view text) {
    try {
        return read_report(json::parse(text));
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed report JSON: ") + e.what());
    }
}

std::vector<R2Report> reports_from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        std::vector<R2Report> out;
        if (j.is_array()) {
            for (const auto& x : j) out.push_back(read_report(x));
        } else {
            out.push_back(read_report(j));
        }
        return out;
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed report JSON: ") + e.what());
    }
}

std::string to_text(const R2Report& r) {
    std::ostringstream os;
    os << r.formula << "\n";
    os << "  family " << to_string(r.family) << ", method " << to_string(r.method) << ", n = " << r.n
       << (r.converged ? "" : "  [NOT CONVERGED]") << "\n";
    os << "  full: loglik " << fixed(r.full.loglik, 3) << "  AIC " << fixed(r.full.aic, 2) << "  ("
       << r.full.n_cov_params << " covariance parameters)\n";
    os << "  null: loglik " << fixed(r.null.loglik, 3) << "  AIC " << fixed(r.null.aic, 2) << "\n";
    if (r.full.unit_variance)
        os << "  unit variance: full " << fixed(*r.full.unit_variance, 4) << ", null "
           << fixed(r.null.unit_variance.value_or(0.0), 4) << "\n";
    if (r.omega_beta) {
        os << "                      ASV      AMV\n";
        auto row = [&](const std::string& name, const MeasurePair& p) {
            os << "  " << std::left << std::setw(16) << name << std::right << std::setw(9) << fixed(p.asv, 4)
               << std::setw(9) << fixed(p.amv, 4) << "\n";
        };
        row("omega_beta", *r.omega_beta);
        row("omega_u", *r.omega_u);
        for (const auto& p : r.partials) row("  " + p.label, p.value);
        row("omega_beta_u", *r.omega_beta_u);
    }
    for (const auto& w : r.warnings) os << "  warning: " << w << "\n";
    return os.str();
}

std::string csv_header() {
    return "formula,family,method,n,converged,omega_beta_asv,omega_beta_amv,omega_u_asv,omega_u_amv,"
           "omega_beta_u_asv,omega_beta_u_amv,aic,loglik,n_cov_params,unit_variance,unit_variance_null";
}

std::string to_csv_row(const R2Report& r) {
    auto get = [](const std::optional<MeasurePair>& p, bool asv) -> std::optional<double> {
        if (!p) return std::nullopt;
        return asv ? p->asv : p->amv;
    };
    std::ostringstream os;
    os << csv_quote(r.formula) << ',' << to_string(r.family) << ',' << to_string(r.method) << ',' << r.n << ','
       << (r.converged ? "true" : "false") << ',' << csv_number(get(r.omega_beta, true)) << ','
       << csv_number(get(r.omega_beta, false)) << ',' << csv_number(get(r.omega_u, true)) << ','
       << csv_number(get(r.omega_u, false)) << ',' << csv_number(get(r.omega_beta_u, true)) << ','
       << csv_number(get(r.omega_beta_u, false)) << ',' << csv_number(r.full.aic) << ','
       << csv_number(r.full.loglik) << ',' << r.full.n_cov_params << ',' << csv_number(r.full.unit_variance) << ','
       << csv_number(r.null.unit_variance);
    return os.str();
}

}  // namespace mmr2
