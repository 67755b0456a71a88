#pragma once

// CSV and JSON reading and writing for fits, population means and simulation
// reports. CSV is comma separated with a mandatory header row; numbers are
// written in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cbp/error.hpp"
#include "cbp/model.hpp"
#include "cbp/popmean.hpp"
#include "cbp/predictors.hpp"
#include "cbp/simulation.hpp"

namespace cbp {

using json = nlohmann::json;

inline std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Parses a decimal number; "NA" reads as NaN.
inline std::optional<double> parse_number(const std::string& text) {
    std::size_t b = text.find_first_not_of(" \t\r");
    std::size_t e = text.find_last_not_of(" \t\r");
    if (b == std::string::npos) return std::nullopt;
    const std::string s = text.substr(b, e - b + 1);
    if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Inf") return std::numeric_limits<double>::infinity();
    if (s == "-Inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    const auto res = std::from_chars(first, s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;  // 1-based source line of each row

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw InvalidInputError("missing column '" + name + "'");
    }

    double number(std::size_t row, std::size_t col) const {
        const auto v = parse_number(rows[row][col]);
        if (!v || std::isnan(*v))
            throw InvalidInputError("line " + std::to_string(line_numbers[row]) + ", column '" + header[col] +
                                    "': not a number: '" + rows[row][col] + "'");
        return *v;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cell));
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    if (quoted) throw InvalidInputError("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(std::move(cell));
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_escape(cells[i]);
    os << '\n';
}

}  // namespace detail

/// Reads one CSV block: header, then rows until end of input or a blank line.
inline CsvTable read_csv_block(std::istream& is, int& line_no) {
    CsvTable t;
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            if (t.header.empty()) continue;
            break;
        }
        auto cells = detail::split_csv_line(line, line_no);
        if (t.header.empty()) {
            if (!cells.empty() && cells[0].rfind("\xEF\xBB\xBF", 0) == 0) cells[0].erase(0, 3);
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw InvalidInputError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                                    " fields, found " + std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(line_no);
    }
    if (t.header.empty()) throw InvalidInputError("CSV input has no header row");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot open '" + path + "'");
    int line_no = 0;
    return read_csv_block(in, line_no);
}

/// Column mapping for area-level input.
struct AreaColumns {
    std::string y = "y";
    std::optional<std::string> sigma2;
    std::optional<std::string> s;
    std::optional<std::string> n;
    std::vector<std::string> x;
    std::optional<std::string> id;
    bool intercept = true;
};

struct AreaInput {
    AreaDataset data;
    std::vector<std::string> covariate_names;
};

inline AreaInput area_dataset_from_table(const CsvTable& t, const AreaColumns& c) {
    if (c.sigma2.has_value() == (c.s.has_value() || c.n.has_value()))
        throw ConfigError("give exactly one of a sampling-variance column or an (s, n) column pair");
    if (!c.sigma2 && !(c.s && c.n)) throw ConfigError("the s column needs a matching n column");
    const Index k = static_cast<Index>(t.rows.size());
    if (k == 0) throw InsufficientDataError("input has no data rows");
    const auto iy = t.column(c.y);
    std::vector<std::size_t> ix;
    for (const auto& name : c.x) ix.push_back(t.column(name));
    const auto isig = c.sigma2 ? std::optional<std::size_t>(t.column(*c.sigma2)) : std::nullopt;
    const auto is = c.s ? std::optional<std::size_t>(t.column(*c.s)) : std::nullopt;
    const auto in = c.n ? std::optional<std::size_t>(t.column(*c.n)) : std::nullopt;
    const auto iid = c.id ? std::optional<std::size_t>(t.column(*c.id)) : std::nullopt;

    const Index p = static_cast<Index>(ix.size()) + (c.intercept ? 1 : 0);
    if (p == 0) throw ConfigError("model has no covariates and no intercept");
    VectorXd y(k), sigma2(k);
    MatrixXd x(k, p);
    std::optional<VectorXd> n;
    if (in) n = VectorXd(k);
    std::vector<std::string> ids;
    for (Index r = 0; r < k; ++r) {
        const auto row = static_cast<std::size_t>(r);
        y[r] = t.number(row, iy);
        Index col = 0;
        if (c.intercept) x(r, col++) = 1.0;
        for (auto j : ix) x(r, col++) = t.number(row, j);
        if (isig) {
            sigma2[r] = t.number(row, *isig);
        } else {
            const double s = t.number(row, *is);
            sigma2[r] = s * s / t.number(row, *in);
        }
        if (in) (*n)[r] = t.number(row, *in);
        if (!(sigma2[r] > 0.0) || !std::isfinite(sigma2[r]))
            throw InvalidInputError("line " + std::to_string(t.line_numbers[row]) + ": sampling variance must be positive");
        ids.push_back(iid ? t.rows[row][*iid] : std::to_string(r + 1));
    }
    std::vector<std::string> names;
    if (c.intercept) names.push_back("intercept");
    names.insert(names.end(), c.x.begin(), c.x.end());
    return AreaInput{AreaDataset(std::move(ids), std::move(y), std::move(x), std::move(sigma2), std::move(n)), names};
}

/// Fit output as written to disk: per-area predictions and shrinkage plus a
/// per-method summary.
struct FitTable {
    struct Summary {
        std::string method;
        std::vector<double> beta;
        double tau_star = 0.0;
        double tau0 = std::numeric_limits<double>::quiet_NaN();
        double tau1 = std::numeric_limits<double>::quiet_NaN();
        double alpha_star = std::numeric_limits<double>::quiet_NaN();
        double risk_estimate = 0.0;
    };
    std::vector<std::string> area_ids;
    std::vector<double> y;
    std::vector<double> sigma2;
    std::vector<std::string> covariate_names;
    std::vector<std::string> methods;
    std::map<std::string, std::vector<double>> theta_hat;
    std::map<std::string, std::vector<double>> shrinkage;
    std::vector<Summary> summaries;
};

inline FitTable make_fit_table(const AreaInput& input, const std::vector<FitResult>& fits) {
    FitTable t;
    const auto& d = input.data;
    t.area_ids = d.area_ids();
    t.y.assign(d.y().data(), d.y().data() + d.size());
    t.sigma2.assign(d.sigma2().data(), d.sigma2().data() + d.size());
    t.covariate_names = input.covariate_names;
    for (const auto& f : fits) {
        const std::string m = to_string(f.method);
        t.methods.push_back(m);
        t.theta_hat[m].assign(f.theta_hat.data(), f.theta_hat.data() + f.theta_hat.size());
        t.shrinkage[m].assign(f.shrinkage.values().data(), f.shrinkage.values().data() + f.shrinkage.size());
        FitTable::Summary s;
        s.method = m;
        s.beta.assign(f.beta.data(), f.beta.data() + f.beta.size());
        s.tau_star = f.tau_star;
        if (f.tau_pair) {
            s.tau0 = f.tau_pair->first;
            s.tau1 = f.tau_pair->second;
        }
        if (f.alpha_star) s.alpha_star = *f.alpha_star;
        s.risk_estimate = f.risk_estimate;
        t.summaries.push_back(s);
    }
    return t;
}

/// Two blocks separated by a blank line: per-area rows, then one summary row per method.
inline void write_fit_csv(std::ostream& os, const FitTable& t) {
    std::vector<std::string> head{"area_id", "y", "sigma2"};
    for (const auto& m : t.methods) head.push_back("theta_" + m);
    for (const auto& m : t.methods) head.push_back("B_" + m);
    detail::write_row(os, head);
    for (std::size_t k = 0; k < t.area_ids.size(); ++k) {
        std::vector<std::string> row{t.area_ids[k], format_number(t.y[k]), format_number(t.sigma2[k])};
        for (const auto& m : t.methods) row.push_back(format_number(t.theta_hat.at(m)[k]));
        for (const auto& m : t.methods) row.push_back(format_number(t.shrinkage.at(m)[k]));
        detail::write_row(os, row);
    }
    os << '\n';
    std::vector<std::string> sh{"method", "tau_star", "tau0", "tau1", "alpha_star", "risk_estimate"};
    for (const auto& c : t.covariate_names) sh.push_back("beta_" + c);
    detail::write_row(os, sh);
    for (const auto& s : t.summaries) {
        std::vector<std::string> row{s.method, format_number(s.tau_star), format_number(s.tau0), format_number(s.tau1),
                                     format_number(s.alpha_star), format_number(s.risk_estimate)};
        for (double b : s.beta) row.push_back(format_number(b));
        detail::write_row(os, row);
    }
}

inline FitTable read_fit_csv(std::istream& is) {
    int line_no = 0;
    const auto areas = read_csv_block(is, line_no);
    const auto summary = read_csv_block(is, line_no);
    FitTable t;
    for (std::size_t j = 3; j < areas.header.size(); ++j)
        if (areas.header[j].rfind("theta_", 0) == 0) t.methods.push_back(areas.header[j].substr(6));
    for (std::size_t r = 0; r < areas.rows.size(); ++r) {
        t.area_ids.push_back(areas.rows[r][0]);
        t.y.push_back(areas.number(r, 1));
        t.sigma2.push_back(areas.number(r, 2));
        for (const auto& m : t.methods) {
            t.theta_hat[m].push_back(areas.number(r, areas.column("theta_" + m)));
            t.shrinkage[m].push_back(areas.number(r, areas.column("B_" + m)));
        }
    }
    for (std::size_t j = 6; j < summary.header.size(); ++j) t.covariate_names.push_back(summary.header[j].substr(5));
    for (std::size_t r = 0; r < summary.rows.size(); ++r) {
        FitTable::Summary s;
        auto opt = [&](std::size_t c) {
            const auto v = parse_number(summary.rows[r][c]);
            if (!v) throw InvalidInputError("line " + std::to_string(summary.line_numbers[r]) + ": bad number");
            return *v;
        };
        s.method = summary.rows[r][0];
        s.tau_star = opt(1);
        s.tau0 = opt(2);
        s.tau1 = opt(3);
        s.alpha_star = opt(4);
        s.risk_estimate = opt(5);
        for (std::size_t j = 6; j < summary.header.size(); ++j) s.beta.push_back(opt(j));
        t.summaries.push_back(s);
    }
    return t;
}

namespace detail {

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace detail

inline json fit_table_to_json(const FitTable& t) {
    json areas = json::array();
    for (std::size_t k = 0; k < t.area_ids.size(); ++k) {
        json a{{"area_id", t.area_ids[k]}, {"y", t.y[k]}, {"sigma2", t.sigma2[k]}};
        json theta = json::object(), b = json::object();
        for (const auto& m : t.methods) {
            theta[m] = t.theta_hat.at(m)[k];
            b[m] = t.shrinkage.at(m)[k];
        }
        a["theta_hat"] = theta;
        a["shrinkage"] = b;
        areas.push_back(a);
    }
    json methods = json::array();
    for (const auto& s : t.summaries) {
        json beta = json::object();
        for (std::size_t j = 0; j < s.beta.size(); ++j) beta[t.covariate_names[j]] = s.beta[j];
        methods.push_back({{"method", s.method},
                           {"tau_star", s.tau_star},
                           {"tau0", detail::number_or_null(s.tau0)},
                           {"tau1", detail::number_or_null(s.tau1)},
                           {"alpha_star", detail::number_or_null(s.alpha_star)},
                           {"risk_estimate", s.risk_estimate},
                           {"beta", beta}});
    }
    return json{{"covariates", t.covariate_names}, {"areas", areas}, {"methods", methods}};
}

inline FitTable fit_table_from_json(const json& j) {
    FitTable t;
    t.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    for (const auto& m : j.at("methods")) {
        FitTable::Summary s;
        s.method = m.at("method").get<std::string>();
        s.tau_star = m.at("tau_star").get<double>();
        s.tau0 = detail::number_from(m.at("tau0"));
        s.tau1 = detail::number_from(m.at("tau1"));
        s.alpha_star = detail::number_from(m.at("alpha_star"));
        s.risk_estimate = m.at("risk_estimate").get<double>();
        for (const auto& c : t.covariate_names) s.beta.push_back(m.at("beta").at(c).get<double>());
        t.methods.push_back(s.method);
        t.summaries.push_back(s);
    }
    for (const auto& a : j.at("areas")) {
        t.area_ids.push_back(a.at("area_id").get<std::string>());
        t.y.push_back(a.at("y").get<double>());
        t.sigma2.push_back(a.at("sigma2").get<double>());
        for (const auto& m : t.methods) {
            t.theta_hat[m].push_back(a.at("theta_hat").at(m).get<double>());
            t.shrinkage[m].push_back(a.at("shrinkage").at(m).get<double>());
        }
    }
    return t;
}

/// One row per (setting, method).
inline void write_report_csv(std::ostream& os, const std::vector<SimReport>& reports) {
    if (reports.empty()) return;
    std::vector<std::string> head;
    for (const auto& [name, v] : reports.front().scenario.settings()) head.push_back(name);
    head.insert(head.end(), {"method", "mspe", "mc_se", "ratio_to_min", "n_used"});
    detail::write_row(os, head);
    for (const auto& r : reports) {
        std::vector<std::string> prefix;
        for (const auto& [name, v] : r.scenario.settings()) prefix.push_back(format_number(v));
        for (const auto& m : r.methods) {
            auto row = prefix;
            row.insert(row.end(), {m.method, format_number(m.mspe), format_number(m.mc_se), format_number(m.ratio_to_min),
                                   std::to_string(r.n_used)});
            detail::write_row(os, row);
        }
    }
}

/// Wide layout for plotting: the setting parameters that vary across the
/// study, then one MSPE column per method.
inline void write_figure_csv(std::ostream& os, const std::vector<SimReport>& reports) {
    if (reports.empty()) return;
    const auto first = reports.front().scenario.settings();
    std::vector<std::size_t> varying;
    for (std::size_t i = 0; i < first.size(); ++i)
        for (const auto& r : reports)
            if (r.scenario.settings()[i].second != first[i].second) {
                varying.push_back(i);
                break;
            }
    std::vector<std::string> head;
    for (auto i : varying) head.push_back(first[i].first);
    for (const auto& m : reports.front().methods) head.push_back(m.method);
    detail::write_row(os, head);
    for (const auto& r : reports) {
        std::vector<std::string> row;
        const auto s = r.scenario.settings();
        for (auto i : varying) row.push_back(format_number(s[i].second));
        for (const auto& m : r.methods) row.push_back(format_number(m.mspe));
        detail::write_row(os, row);
    }
}

inline json scenario_to_json(const SimScenario& s) {
    json params;
    switch (s.kind) {
        case ScenarioKind::LatentClusters:
            params = {{"beta0", s.latent.beta0}, {"beta1", s.latent.beta1}, {"q", s.latent.q}};
            break;
        case ScenarioKind::InformativeSampleSize:
            params = {{"rho", s.iss.rho}, {"sigma2", s.iss.sigma2}, {"tau", s.iss.tau}, {"v", to_string(s.iss.v)},
                      {"beta", s.iss.beta}};
            break;
        case ScenarioKind::PopAverage:
            params = {{"sigma2", s.pop.sigma2}, {"rho", s.pop.rho}, {"xi", s.pop.xi}, {"n_bar", s.pop.n_bar},
                      {"sigma_n", s.pop.target_sigma_n()}};
            break;
    }
    return json{{"tag", to_string(s.kind)}, {"K", s.k},           {"n_rep", s.n_rep},
                {"seed", s.seed},           {"methods", s.methods}, {"params", params}};
}

inline json reports_to_json(const std::string& name, const std::vector<SimReport>& reports) {
    json settings = json::array();
    for (const auto& r : reports) {
        json methods = json::array();
        for (const auto& m : r.methods)
            methods.push_back({{"method", m.method},
                               {"mspe", m.mspe},
                               {"mc_se", detail::number_or_null(m.mc_se)},
                               {"ratio_to_min", m.ratio_to_min}});
        settings.push_back({{"scenario", scenario_to_json(r.scenario)},
                            {"n_used", r.n_used},
                            {"n_failed", r.n_failed},
                            {"results", methods}});
    }
    return json{{"study", name}, {"settings", settings}};
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

inline void apply_param(SimScenario& s, const std::string& key, const json& v) {
    try {
        switch (s.kind) {
            case ScenarioKind::LatentClusters:
                if (key == "beta0") s.latent.beta0 = v.get<double>();
                else if (key == "beta1") s.latent.beta1 = v.get<double>();
                else if (key == "q") s.latent.q = v.get<int>();
                else throw ConfigError("unknown latent-clusters parameter '" + key + "'");
                break;
            case ScenarioKind::InformativeSampleSize:
                if (key == "rho") s.iss.rho = v.get<double>();
                else if (key == "sigma2") s.iss.sigma2 = v.get<double>();
                else if (key == "tau") s.iss.tau = v.get<double>();
                else if (key == "v") s.iss.v = parse_v_distribution(v.get<std::string>());
                else if (key == "beta") s.iss.beta = v.get<std::vector<double>>();
                else throw ConfigError("unknown informative-sample-size parameter '" + key + "'");
                break;
            case ScenarioKind::PopAverage:
                if (key == "sigma2") s.pop.sigma2 = v.get<double>();
                else if (key == "rho") s.pop.rho = v.get<double>();
                else if (key == "xi") s.pop.xi = v.get<double>();
                else if (key == "n_bar") s.pop.n_bar = v.get<double>();
                else if (key == "sigma_n") s.pop.sigma_n = v.get<double>();
                else throw ConfigError("unknown pop-average parameter '" + key + "'");
                break;
        }
    } catch (const json::exception& e) {
        throw ConfigError("parameter '" + key + "': " + e.what());
    }
}

}  // namespace detail

/// Scenario config: {"name", "tag", "K", "n_rep", "seed", "methods", "params",
/// "sweep": {"param", "values"}}; all but "tag" optional. A "K" sweep is allowed.
inline Study study_from_json(const json& j) {
    detail::check_keys(j, {"name", "tag", "K", "n_rep", "seed", "methods", "params", "sweep"}, "scenario config");
    try {
        SimScenario s;
        if (!j.contains("tag")) throw ConfigError("scenario config needs a 'tag'");
        s.kind = parse_scenario_kind(j.at("tag").get<std::string>());
        if (j.contains("K")) s.k = j.at("K").get<int>();
        if (j.contains("n_rep")) s.n_rep = j.at("n_rep").get<int>();
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("methods")) {
            s.methods = j.at("methods").get<std::vector<std::string>>();
        } else if (s.kind == ScenarioKind::PopAverage) {
            s.methods = {"eblup-reml", "obp", "cbp", "cbp-plugin", "direct", "minvar", "direct-compromise", "spline-regression"};
        } else {
            s.methods = {"eblup-mle", "eblup-reml", "eblup-ure", "obp", "cbp", "cbp-plugin"};
        }
        if (j.contains("params")) {
            if (!j.at("params").is_object()) throw ConfigError("'params' must be an object");
            for (const auto& [key, v] : j.at("params").items()) detail::apply_param(s, key, v);
        }
        Study st;
        st.name = j.value("name", std::string("custom"));
        if (j.contains("sweep")) {
            const auto& sw = j.at("sweep");
            detail::check_keys(sw, {"param", "values"}, "sweep");
            st.swept = sw.at("param").get<std::string>();
            st.values = sw.at("values").get<std::vector<double>>();
            if (st.values.empty()) throw ConfigError("sweep needs at least one value");
            for (double v : st.values) {
                SimScenario c = s;
                if (st.swept == "K") c.k = static_cast<int>(v);
                else detail::apply_param(c, st.swept, json(st.swept == "q" ? json(static_cast<int>(v)) : json(v)));
                st.scenarios.push_back(c);
            }
        } else {
            st.scenarios.push_back(s);
        }
        for (const auto& c : st.scenarios) c.validate();
        return st;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config: ") + e.what());
    }
}

inline void write_popmean_csv(std::ostream& os, const std::vector<PopMeanResult>& results) {
    detail::write_row(os, {"method", "mu_hat", "alpha", "tau", "flagged"});
    for (const auto& r : results)
        detail::write_row(os, {to_string(r.method), format_number(r.mu_hat),
                               format_number(r.alpha_used.value_or(std::numeric_limits<double>::quiet_NaN())),
                               format_number(r.tau_used.value_or(std::numeric_limits<double>::quiet_NaN())),
                               r.flagged ? "1" : "0"});
}

}  // namespace cbp
