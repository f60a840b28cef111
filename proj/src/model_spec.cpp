#include "mmr2/model_spec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "mmr2/dataset.hpp"

namespace mmr2 {

ParseError::ParseError(const std::string& message, std::string text, std::size_t position)
    : std::runtime_error(message + " at position " + std::to_string(position)),
      text_(std::move(text)),
      position_(position) {}

std::string ParseError::caret() const {
    return text_ + "\n" + std::string(std::min(position_, text_.size()), ' ') + "^";
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> problems)
    : std::runtime_error("invalid model: " + join(problems, "; ")), problems_(std::move(problems)) {}

std::string to_string(Method m) {
    switch (m) {
        case Method::ml: return "ml";
        case Method::reml: return "reml";
        case Method::mspl: return "mspl";
        case Method::rspl: return "rspl";
    }
    return "?";
}

std::string to_string(Family f) {
    switch (f) {
        case Family::gaussian: return "gaussian";
        case Family::binomial: return "binomial";
        case Family::poisson: return "poisson";
    }
    return "?";
}

std::string to_string(Link l) {
    switch (l) {
        case Link::identity: return "identity";
        case Link::logit: return "logit";
        case Link::probit: return "probit";
        case Link::log: return "log";
    }
    return "?";
}

std::string to_string(CovStructure s) { return s == CovStructure::vc ? "vc" : "un"; }

std::string to_string(ResidualStructure s) {
    switch (s) {
        case ResidualStructure::id: return "id";
        case ResidualStructure::diag: return "diag";
        case ResidualStructure::un: return "un";
    }
    return "?";
}

Method parse_method(std::string_view s) {
    if (s == "ml") return Method::ml;
    if (s == "reml") return Method::reml;
    if (s == "mspl") return Method::mspl;
    if (s == "rspl") return Method::rspl;
    throw std::invalid_argument("unknown estimation method '" + std::string(s) + "'");
}

std::string Term::label() const {
    if (vars.empty()) return "1";
    return join(vars, ":");
}

std::string RandomTerm::label() const {
    if (is_unit_effect) return "unit";
    std::vector<std::string> parts;
    for (const auto& t : design) parts.push_back(t.label());
    return join(parts, " + ") + " | " + group;
}

bool ModelSpec::has_unit_effect() const {
    return std::any_of(random_terms.begin(), random_terms.end(),
                       [](const RandomTerm& r) { return r.is_unit_effect; });
}

Link default_link(Family f) {
    switch (f) {
        case Family::gaussian: return Link::identity;
        case Family::binomial: return Link::logit;
        case Family::poisson: return Link::log;
    }
    return Link::identity;
}

Method default_method(Family f) {
    return f == Family::gaussian ? Method::reml : Method::rspl;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Token {
    enum Kind { ident, number, symbol, end } kind = end;
    std::string text;
    std::size_t pos = 0;
};

class Lexer {
  public:
    explicit Lexer(std::string_view text) : text_(text) {
        std::size_t i = 0;
        while (i < text_.size()) {
            const char c = text_[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
            } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
                const std::size_t start = i;
                while (i < text_.size() &&
                       (std::isalnum(static_cast<unsigned char>(text_[i])) || text_[i] == '_' ||
                        text_[i] == '.'))
                    ++i;
                tokens_.push_back({Token::ident, std::string(text_.substr(start, i - start)), start});
            } else if (std::isdigit(static_cast<unsigned char>(c))) {
                const std::size_t start = i;
                while (i < text_.size() && std::isdigit(static_cast<unsigned char>(text_[i]))) ++i;
                tokens_.push_back({Token::number, std::string(text_.substr(start, i - start)), start});
            } else if (std::string_view("~+:,()|=").find(c) != std::string_view::npos) {
                tokens_.push_back({Token::symbol, std::string(1, c), i});
                ++i;
            } else {
                throw ParseError(std::string("unexpected character '") + c + "'", std::string(text_), i);
            }
        }
        tokens_.push_back({Token::end, "", text_.size()});
    }

    const std::vector<Token>& tokens() const { return tokens_; }

  private:
    std::string_view text_;
    std::vector<Token> tokens_;
};

class Parser {
  public:
    explicit Parser(std::string_view text) : text_(text), tokens_(Lexer(text).tokens()) {}

    ModelSpec parse() {
        ModelSpec spec;
        spec.response = expect_ident("response name");
        expect_symbol("~");
        spec.fixed_terms.push_back(Term{});
        for (auto& t : parse_terms()) {
            if (t.is_intercept()) continue;
            if (std::find(spec.fixed_terms.begin(), spec.fixed_terms.end(), t) !=
                spec.fixed_terms.end())
                fail("duplicate fixed term '" + t.label() + "'", last_term_pos_);
            spec.fixed_terms.push_back(std::move(t));
        }

        bool have_residual = false;
        bool have_family = false;
        bool have_method = false;
        while (peek_symbol(",")) {
            advance();
            const Token& kw = peek();
            if (kw.kind != Token::ident) fail("expected a clause name", kw.pos);
            if (kw.text == "random") {
                advance();
                spec.random_terms.push_back(parse_random());
            } else if (kw.text == "residual") {
                if (have_residual) fail("duplicate residual clause", kw.pos);
                have_residual = true;
                advance();
                spec.residual = parse_residual();
            } else if (kw.text == "family") {
                if (have_family) fail("duplicate family clause", kw.pos);
                have_family = true;
                advance();
                spec.family = parse_family();
            } else if (kw.text == "method") {
                if (have_method) fail("duplicate method clause", kw.pos);
                have_method = true;
                advance();
                expect_symbol("(");
                const Token& m = peek();
                const std::string name = expect_ident("estimation method");
                try {
                    spec.method = parse_method(name);
                } catch (const std::invalid_argument&) {
                    fail("unknown estimation method '" + name + "'", m.pos);
                }
                expect_symbol(")");
            } else {
                fail("unknown clause '" + kw.text + "'", kw.pos);
            }
        }
        if (peek().kind != Token::end) fail("unexpected '" + peek().text + "'", peek().pos);
        if (!have_method) spec.method = default_method(spec.family.family);
        return spec;
    }

  private:
    const Token& peek() const { return tokens_[cursor_]; }
    const Token& advance() { return tokens_[cursor_++]; }

    bool peek_symbol(std::string_view s) const {
        return peek().kind == Token::symbol && peek().text == s;
    }

    [[noreturn]] void fail(const std::string& message, std::size_t pos) const {
        throw ParseError(message, std::string(text_), pos);
    }

    void expect_symbol(std::string_view s) {
        if (!peek_symbol(s)) {
            const Token& t = peek();
            fail("expected '" + std::string(s) + "'" +
                     (t.kind == Token::end ? std::string(" before end of input")
                                           : " but found '" + t.text + "'"),
                 t.pos);
        }
        advance();
    }

    std::string expect_ident(const std::string& what) {
        if (peek().kind != Token::ident) fail("expected " + what, peek().pos);
        return advance().text;
    }

    Term parse_term() {
        last_term_pos_ = peek().pos;
        if (peek().kind == Token::number) {
            if (peek().text != "1") fail("only the constant 1 is allowed as a numeric term", peek().pos);
            advance();
            return Term{};
        }
        Term t;
        t.vars.push_back(expect_ident("a term"));
        if (peek_symbol(":")) {
            advance();
            t.vars.push_back(expect_ident("a variable after ':'"));
        }
        return t;
    }

    std::vector<Term> parse_terms() {
        std::vector<Term> terms;
        terms.push_back(parse_term());
        while (peek_symbol("+")) {
            advance();
            terms.push_back(parse_term());
        }
        return terms;
    }

    // Parses "key=value" after the comma, returning key and value tokens.
    std::pair<Token, Token> parse_option() {
        const Token key = peek();
        expect_ident("an option name");
        expect_symbol("=");
        const Token value = peek();
        expect_ident("a value for '" + key.text + "'");
        return {key, value};
    }

    RandomTerm parse_random() {
        expect_symbol("(");
        RandomTerm rt;
        if (peek().kind == Token::ident && peek().text == "unit" &&
            tokens_[cursor_ + 1].kind == Token::symbol && tokens_[cursor_ + 1].text == ")") {
            advance();
            advance();
            rt.is_unit_effect = true;
            rt.structure = CovStructure::vc;
            return rt;
        }
        rt.design = parse_terms();
        for (std::size_t i = 0; i < rt.design.size(); ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                if (rt.design[i] == rt.design[j])
                    fail("duplicate random design term '" + rt.design[i].label() + "'",
                         last_term_pos_);
            }
        }
        expect_symbol("|");
        rt.group = expect_ident("a grouping factor");
        if (peek_symbol(",")) {
            advance();
            auto [key, value] = parse_option();
            if (key.text != "cov") fail("unknown random-term option '" + key.text + "'", key.pos);
            if (value.text == "vc") {
                rt.structure = CovStructure::vc;
            } else if (value.text == "un") {
                rt.structure = CovStructure::un;
            } else {
                fail("unknown covariance structure '" + value.text + "'", value.pos);
            }
        }
        expect_symbol(")");
        return rt;
    }

    ResidualSpec parse_residual() {
        expect_symbol("(");
        ResidualSpec rs;
        const Token s = peek();
        const std::string name = expect_ident("a residual structure");
        if (name == "id") {
            rs.structure = ResidualStructure::id;
        } else if (name == "diag") {
            rs.structure = ResidualStructure::diag;
        } else if (name == "un") {
            rs.structure = ResidualStructure::un;
        } else {
            fail("unknown residual structure '" + name + "'", s.pos);
        }
        while (peek_symbol(",")) {
            advance();
            auto [key, value] = parse_option();
            std::optional<std::string>* slot = nullptr;
            if (key.text == "by") {
                slot = &rs.by;
            } else if (key.text == "index") {
                slot = &rs.index;
            } else if (key.text == "subject") {
                slot = &rs.subject;
            } else {
                fail("unknown residual option '" + key.text + "'", key.pos);
            }
            if (slot->has_value()) fail("duplicate residual option '" + key.text + "'", key.pos);
            *slot = value.text;
        }
        expect_symbol(")");
        return rs;
    }

    FamilySpec parse_family() {
        expect_symbol("(");
        FamilySpec fs;
        const Token f = peek();
        const std::string name = expect_ident("a family name");
        if (name == "gaussian") {
            fs.family = Family::gaussian;
        } else if (name == "binomial") {
            fs.family = Family::binomial;
        } else if (name == "poisson") {
            fs.family = Family::poisson;
        } else {
            fail("unknown family '" + name + "'", f.pos);
        }
        fs.link = default_link(fs.family);
        std::set<std::string> seen;
        while (peek_symbol(",")) {
            advance();
            auto [key, value] = parse_option();
            if (!seen.insert(key.text).second)
                fail("duplicate family option '" + key.text + "'", key.pos);
            if (key.text == "link") {
                if (value.text == "identity") {
                    fs.link = Link::identity;
                } else if (value.text == "logit") {
                    fs.link = Link::logit;
                } else if (value.text == "probit") {
                    fs.link = Link::probit;
                } else if (value.text == "log") {
                    fs.link = Link::log;
                } else {
                    fail("unknown link '" + value.text + "'", value.pos);
                }
            } else if (key.text == "dispersion") {
                if (value.text == "fixed") {
                    fs.dispersion = Dispersion::fixed;
                } else if (value.text == "estimated") {
                    fs.dispersion = Dispersion::estimated;
                } else {
                    fail("dispersion must be 'fixed' or 'estimated'", value.pos);
                }
            } else if (key.text == "size") {
                fs.size = value.text;
            } else {
                fail("unknown family option '" + key.text + "'", key.pos);
            }
        }
        expect_symbol(")");
        return fs;
    }

    std::string_view text_;
    std::vector<Token> tokens_;
    std::size_t cursor_ = 0;
    std::size_t last_term_pos_ = 0;
};

std::string print_terms(const std::vector<Term>& terms) {
    std::vector<std::string> parts;
    for (const auto& t : terms) parts.push_back(t.label());
    return join(parts, " + ");
}

}  // namespace

ModelSpec parse_formula(std::string_view text) { return Parser(text).parse(); }

std::string print_formula(const ModelSpec& spec) {
    std::ostringstream os;
    os << spec.response << " ~ ";
    std::vector<Term> shown;
    for (const auto& t : spec.fixed_terms) {
        if (!t.is_intercept()) shown.push_back(t);
    }
    os << (shown.empty() ? std::string("1") : print_terms(shown));

    for (const auto& rt : spec.random_terms) {
        if (rt.is_unit_effect) {
            os << ", random(unit)";
            continue;
        }
        os << ", random(" << print_terms(rt.design) << " | " << rt.group;
        if (rt.structure == CovStructure::un) os << ", cov=un";
        os << ")";
    }

    const ResidualSpec& rs = spec.residual;
    if (!(rs == ResidualSpec{})) {
        os << ", residual(" << to_string(rs.structure);
        if (rs.by) os << ", by=" << *rs.by;
        if (rs.index) os << ", index=" << *rs.index;
        if (rs.subject) os << ", subject=" << *rs.subject;
        os << ")";
    }

    const FamilySpec& fs = spec.family;
    if (!(fs == FamilySpec{})) {
        os << ", family(" << to_string(fs.family) << ", link=" << to_string(fs.link);
        if (fs.dispersion == Dispersion::estimated) os << ", dispersion=estimated";
        if (fs.size) os << ", size=" << *fs.size;
        os << ")";
    }
    os << ", method(" << to_string(spec.method) << ")";
    return os.str();
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

void check_numeric_or_factor(const Dataset& data, const std::string& name, const std::string& role,
                             std::vector<std::string>& problems) {
    const Column* c = data.find(name);
    if (!c) {
        problems.push_back(role + ": unknown column '" + name + "'");
    } else if (c->has_missing()) {
        problems.push_back(role + ": column '" + name + "' has missing values");
    }
}

}  // namespace

ModelSpec validate(const ModelSpec& spec, const Dataset& data) {
    std::vector<std::string> problems;
    const bool gaussian = spec.family.is_gaussian();

    // family / link / method
    const Family fam = spec.family.family;
    const Link link = spec.family.link;
    const bool link_ok = (fam == Family::gaussian && link == Link::identity) ||
                         (fam == Family::binomial && (link == Link::logit || link == Link::probit)) ||
                         (fam == Family::poisson && link == Link::log);
    if (!link_ok)
        problems.push_back("link not supported for family: " + to_string(fam) + "/" +
                           to_string(link));
    if (gaussian && (spec.method == Method::mspl || spec.method == Method::rspl))
        problems.push_back("method " + to_string(spec.method) +
                           " requires a binomial or poisson family");
    if (!gaussian && (spec.method == Method::ml || spec.method == Method::reml))
        problems.push_back("method " + to_string(spec.method) + " requires the gaussian family");
    if (gaussian && spec.family.dispersion == Dispersion::estimated)
        problems.push_back("dispersion=estimated applies to binomial and poisson families only");
    if (spec.family.size && fam != Family::binomial)
        problems.push_back("size= applies to the binomial family only");

    if (spec.fixed_terms.empty() || !spec.fixed_terms.front().is_intercept())
        problems.push_back("fixed terms must start with the intercept");

    // response
    const Column* response = data.find(spec.response);
    if (!response) {
        problems.push_back("response: unknown column '" + spec.response + "'");
    } else if (response->is_factor()) {
        problems.push_back("response '" + spec.response + "' must be numeric");
    } else if (response->has_missing()) {
        problems.push_back("response '" + spec.response + "' has missing values");
    } else if (fam == Family::poisson) {
        for (double v : response->values()) {
            if (!is_integer(v) || v < 0) {
                problems.push_back("poisson response must hold non-negative integers");
                break;
            }
        }
    } else if (fam == Family::binomial) {
        const Column* size = nullptr;
        if (spec.family.size) {
            size = data.find(*spec.family.size);
            if (!size) {
                problems.push_back("size: unknown column '" + *spec.family.size + "'");
            } else if (size->is_factor() || size->has_missing()) {
                problems.push_back("size column '" + *spec.family.size +
                                   "' must be numeric without missing values");
                size = nullptr;
            }
        }
        const auto& y = response->values();
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double m = size ? size->values()[i] : 1.0;
            if (size && (!is_integer(m) || m < 1)) {
                problems.push_back("binomial sizes must be positive integers");
                break;
            }
            if (!is_integer(y[i]) || y[i] < 0 || y[i] > m) {
                problems.push_back(size ? "binomial response must be an integer count in [0, size]"
                                        : "binomial response without size= must be binary 0/1");
                break;
            }
        }
    }

    // fixed terms
    for (const auto& t : spec.fixed_terms) {
        for (const auto& v : t.vars) check_numeric_or_factor(data, v, "fixed term " + t.label(), problems);
    }

    // random terms
    std::size_t n_unit = 0;
    for (const auto& rt : spec.random_terms) {
        if (rt.is_unit_effect) {
            ++n_unit;
            if (gaussian)
                problems.push_back("random(unit) is confounded with the residual for the gaussian family");
            continue;
        }
        if (rt.design.empty()) problems.push_back("random term without design columns");
        if (rt.structure == CovStructure::un && rt.design.size() < 2)
            problems.push_back("random(" + rt.label() + "): cov=un needs at least two design columns");
        for (const auto& t : rt.design) {
            for (const auto& v : t.vars) {
                const Column* c = data.find(v);
                if (!c) {
                    problems.push_back("random(" + rt.label() + "): unknown column '" + v + "'");
                } else if (c->is_factor()) {
                    problems.push_back("random(" + rt.label() + "): slope '" + v +
                                       "' must be a numeric column");
                } else if (c->has_missing()) {
                    problems.push_back("random(" + rt.label() + "): column '" + v +
                                       "' has missing values");
                }
            }
        }
        const Column* g = data.find(rt.group);
        if (!g) {
            problems.push_back("random(" + rt.label() + "): unknown grouping factor '" + rt.group + "'");
        } else if (!g->is_factor()) {
            problems.push_back("random(" + rt.label() + "): grouping column '" + rt.group +
                               "' must be a factor");
        } else if (g->has_missing()) {
            problems.push_back("random(" + rt.label() + "): grouping column '" + rt.group +
                               "' has missing values");
        } else {
            std::set<int> used(g->codes().begin(), g->codes().end());
            if (used.size() < 2)
                problems.push_back("random(" + rt.label() + "): grouping factor '" + rt.group +
                                   "' has a single level");
        }
    }
    if (n_unit > 1) problems.push_back("at most one random(unit) term");

    // residual
    const ResidualSpec& rs = spec.residual;
    if (!gaussian && !(rs == ResidualSpec{}))
        problems.push_back("residual(...) applies to the gaussian family only");
    auto factor_column = [&](const std::optional<std::string>& name, const std::string& role,
                             bool allow_numeric) -> const Column* {
        if (!name) return nullptr;
        const Column* c = data.find(*name);
        if (!c) {
            problems.push_back("residual " + role + ": unknown column '" + *name + "'");
            return nullptr;
        }
        if (!allow_numeric && !c->is_factor()) {
            problems.push_back("residual " + role + ": column '" + *name + "' must be a factor");
            return nullptr;
        }
        if (c->has_missing()) {
            problems.push_back("residual " + role + ": column '" + *name + "' has missing values");
            return nullptr;
        }
        return c;
    };
    factor_column(rs.by, "by", false);
    const Column* index = factor_column(rs.index, "index", true);
    const Column* subject = factor_column(rs.subject, "subject", false);
    if (rs.structure == ResidualStructure::id && (rs.index || rs.subject))
        problems.push_back("residual(id) takes no index= or subject=");
    if (rs.structure == ResidualStructure::diag) {
        if (!rs.index) problems.push_back("residual(diag) requires index=");
        if (rs.subject) problems.push_back("residual(diag) takes no subject=");
    }
    if (rs.structure == ResidualStructure::un) {
        if (!rs.index) problems.push_back("residual(un) requires index=");
        if (!rs.subject) problems.push_back("residual(un) requires subject=");
        if (index && subject) {
            // each subject must carry every index level exactly once
            std::map<double, int> index_levels;
            std::vector<double> key(data.n_rows());
            for (std::size_t i = 0; i < data.n_rows(); ++i) {
                key[i] = index->is_factor() ? index->codes()[i] : index->values()[i];
                index_levels.emplace(key[i], 0);
            }
            std::map<int, std::set<double>> seen;
            std::map<int, std::size_t> count;
            bool ok = true;
            for (std::size_t i = 0; i < data.n_rows(); ++i) {
                const int s = subject->codes()[i];
                if (!seen[s].insert(key[i]).second) ok = false;
                ++count[s];
            }
            for (const auto& [s, c] : count) {
                if (c != index_levels.size()) ok = false;
            }
            if (!ok)
                problems.push_back("residual(un): every subject needs each index level exactly once "
                                   "(equal times per subject)");
        }
    }

    if (!problems.empty()) throw ValidationError(std::move(problems));
    return spec;
}

ModelSpec null_spec(const ModelSpec& spec) {
    ModelSpec out = spec;
    out.fixed_terms = {Term{}};
    return out;
}

}  // namespace mmr2
