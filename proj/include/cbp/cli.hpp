#pragma once

// Command-line front end: fit, simulate, popmean.
// Exit codes: 0 success, 2 input error, 3 numerical failure, 4 config error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cbp/io.hpp"
#include "cbp/popmean.hpp"
#include "cbp/predictors.hpp"
#include "cbp/simulation.hpp"

namespace cbp {

enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitNumerical = 3, kExitConfig = 4 };

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Runs `body` with an output stream bound to `path` ("-" is stdout).
template <class Body>
void with_output(const std::string& path, std::ostream& out, Body body) {
    if (path == "-" || path.empty()) {
        body(out);
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InvalidInputError("cannot write '" + path + "'");
    body(f);
}

struct FitOptions {
    std::string input;
    std::string y_col = "y";
    std::string sigma2_col, s_col, n_col, x_cols, id_col;
    bool no_intercept = false;
    std::string methods = "reml,obp,cbp,cbp-plugin";
    std::string out = "-";
    std::string format = "csv";
};

inline int cmd_fit(const FitOptions& o, std::ostream& out) {
    AreaColumns cols;
    cols.y = o.y_col;
    if (!o.sigma2_col.empty()) cols.sigma2 = o.sigma2_col;
    if (!o.s_col.empty()) cols.s = o.s_col;
    if (!o.n_col.empty()) cols.n = o.n_col;
    if (!o.id_col.empty()) cols.id = o.id_col;
    cols.x = split_list(o.x_cols);
    cols.intercept = !o.no_intercept;
    if (o.format != "csv" && o.format != "json") throw ConfigError("--format must be csv or json");
    std::vector<Method> methods;
    for (const auto& m : split_list(o.methods)) methods.push_back(parse_method(m));
    if (methods.empty()) throw ConfigError("no methods requested");

    const auto input = area_dataset_from_table(read_csv(o.input), cols);
    if (input.data.size() <= input.data.num_covariates())
        throw InsufficientDataError("need more areas (" + std::to_string(input.data.size()) + ") than covariates (" +
                                    std::to_string(input.data.num_covariates()) + ")");
    std::vector<FitResult> fits;
    for (auto m : methods) fits.push_back(fit(input.data, m));
    const auto table = make_fit_table(input, fits);
    with_output(o.out, out, [&](std::ostream& os) {
        if (o.format == "json")
            os << fit_table_to_json(table).dump(2) << '\n';
        else
            write_fit_csv(os, table);
    });
    return kExitOk;
}

struct SimulateOptions {
    std::string preset;
    std::string config;
    int n_rep = 0;
    long long seed = -1;
    unsigned threads = 0;
    std::string out = ".";
};

inline int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    if (o.preset.empty() == o.config.empty()) throw ConfigError("give exactly one of --preset or --config");
    Study st;
    if (!o.preset.empty()) {
        st = preset(o.preset);
    } else {
        std::ifstream f(o.config);
        if (!f) throw InvalidInputError("cannot open '" + o.config + "'");
        json j;
        try {
            f >> j;
        } catch (const json::exception& e) {
            throw ConfigError(std::string("scenario config is not valid JSON: ") + e.what());
        }
        st = study_from_json(j);
    }
    for (auto& s : st.scenarios) {
        if (o.n_rep != 0) s.n_rep = o.n_rep;
        if (o.seed >= 0) s.seed = static_cast<std::uint64_t>(o.seed);
        s.validate();
    }
    const unsigned threads = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());

    std::vector<SimReport> reports;
    for (const auto& s : st.scenarios) reports.push_back(run_study(s, threads));

    namespace fs = std::filesystem;
    fs::create_directories(o.out);
    const fs::path dir(o.out);
    auto open = [&](const std::string& file) {
        std::ofstream f(dir / file, std::ios::binary);
        if (!f) throw InvalidInputError("cannot write '" + (dir / file).string() + "'");
        return f;
    };
    {
        auto f = open(st.name + "_report.csv");
        write_report_csv(f, reports);
    }
    {
        auto f = open(st.name + "_figure.csv");
        write_figure_csv(f, reports);
    }
    {
        auto f = open(st.name + "_report.json");
        f << reports_to_json(st.name, reports).dump(2) << '\n';
    }
    out << "wrote " << (dir / (st.name + "_report.csv")).string() << ", " << (dir / (st.name + "_figure.csv")).string()
        << ", " << (dir / (st.name + "_report.json")).string() << '\n';
    return kExitOk;
}

struct PopmeanOptions {
    std::string input;
    std::string y_col = "y";
    std::string n_col = "n";
    double sigma2 = 0.0;
    std::string out = "-";
};

inline int cmd_popmean(const PopmeanOptions& o, std::ostream& out) {
    const auto t = read_csv(o.input);
    const auto iy = t.column(o.y_col);
    const auto in = t.column(o.n_col);
    VectorXd y(static_cast<Index>(t.rows.size())), n(static_cast<Index>(t.rows.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        y[static_cast<Index>(r)] = t.number(r, iy);
        n[static_cast<Index>(r)] = t.number(r, in);
    }
    if (t.rows.size() < 2) throw InsufficientDataError("population mean needs at least two areas");
    const PopMeanInput input(y, n, o.sigma2);
    std::vector<PopMeanResult> results;
    for (auto m : {PopMeanMethod::Direct, PopMeanMethod::MinVar, PopMeanMethod::DirectCompromise,
                   PopMeanMethod::SplineRegression, PopMeanMethod::Eblup, PopMeanMethod::Obp, PopMeanMethod::Cbp,
                   PopMeanMethod::PlugInCbp})
        results.push_back(estimate_popmean(input, m));
    with_output(o.out, out, [&](std::ostream& os) { write_popmean_csv(os, results); });
    return kExitOk;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Compromise best predictors for small-area estimation"};
    app.require_subcommand(1);

    detail::FitOptions fo;
    auto* fit_cmd = app.add_subcommand("fit", "Fit area-level predictors to a CSV file");
    fit_cmd->add_option("--input", fo.input, "Input CSV")->required();
    fit_cmd->add_option("--y-col", fo.y_col, "Direct estimate column");
    auto* sig = fit_cmd->add_option("--sigma2-col", fo.sigma2_col, "Sampling variance column");
    auto* s_opt = fit_cmd->add_option("--s-col", fo.s_col, "Unit-level SD column (variance = s^2 / n)");
    auto* n_opt = fit_cmd->add_option("--n-col", fo.n_col, "Sample size column");
    sig->excludes(s_opt);
    s_opt->needs(n_opt);
    fit_cmd->add_option("--x-cols", fo.x_cols, "Comma-separated covariate columns");
    fit_cmd->add_option("--id-col", fo.id_col, "Area label column");
    fit_cmd->add_flag("--no-intercept", fo.no_intercept, "Do not add an intercept column");
    fit_cmd->add_option("--methods", fo.methods, "Comma-separated methods");
    fit_cmd->add_option("--out", fo.out, "Output path, - for stdout");
    fit_cmd->add_option("--format", fo.format, "csv or json");

    detail::SimulateOptions so;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a simulation study");
    sim_cmd->add_option("--preset", so.preset, "Built-in study name");
    sim_cmd->add_option("--config", so.config, "Scenario JSON file");
    sim_cmd->add_option("--n-rep", so.n_rep, "Replicates per setting");
    sim_cmd->add_option("--seed", so.seed, "Master seed");
    sim_cmd->add_option("--threads", so.threads, "Worker threads (default: all cores)");
    sim_cmd->add_option("--out", so.out, "Output directory");

    detail::PopmeanOptions po;
    auto* pm_cmd = app.add_subcommand("popmean", "Estimate the population average of the area means");
    pm_cmd->add_option("--input", po.input, "Input CSV")->required();
    pm_cmd->add_option("--y-col", po.y_col, "Direct estimate column");
    pm_cmd->add_option("--n-col", po.n_col, "Sample size column");
    pm_cmd->add_option("--sigma2", po.sigma2, "Unit-level variance")->required();
    pm_cmd->add_option("--out", po.out, "Output path, - for stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*fit_cmd) return detail::cmd_fit(fo, out);
        if (*sim_cmd) return detail::cmd_simulate(so, out);
        if (*pm_cmd) return detail::cmd_popmean(po, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        err << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "input error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitConfig;
}

}  // namespace cbp
