#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cbp/cli.hpp"

using namespace cbp;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "cbp");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("cbp_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string write(const std::string& name, const std::string& text) {
        const auto p = dir_ / name;
        std::ofstream(p) << text;
        return p.string();
    }

    fs::path dir_;
};

std::string area_csv(int k) {
    std::ostringstream os;
    os << "strata,y,s,n,height\n";
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int i = 0; i < k; ++i)
        os << "s" << i << ',' << 1.0 + 0.3 * z(rng) << ',' << 0.5 + 0.1 * (i % 3) << ',' << 5 + i % 7 << ','
           << 1.6 + 0.05 * z(rng) << '\n';
    return os.str();
}

}  // namespace

TEST_F(CliTest, FitWritesFourCoefficientSets) {
    const auto in = write("areas.csv", area_csv(48));
    const auto r = run({"fit", "--input", in, "--s-col", "s", "--n-col", "n", "--x-cols", "height", "--id-col",
                        "strata", "--methods", "reml,obp,cbp,cbp-plugin"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream is(r.out);
    const auto t = read_fit_csv(is);
    EXPECT_EQ(t.summaries.size(), 4u);
    EXPECT_EQ(t.area_ids.size(), 48u);
    for (const auto& s : t.summaries) EXPECT_EQ(s.beta.size(), 2u);
}

TEST_F(CliTest, FitJsonToFile) {
    const auto in = write("areas.csv", area_csv(20));
    const auto out = (dir_ / "fit.json").string();
    const auto r = run({"fit", "--input", in, "--s-col", "s", "--n-col", "n", "--format", "json", "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream f(out);
    const auto t = fit_table_from_json(json::parse(f));
    EXPECT_EQ(t.methods.size(), 4u);
}

TEST_F(CliTest, SingleAreaIsInputError) {
    const auto in = write("one.csv", "y,v\n1.0,0.5\n");
    const auto r = run({"fit", "--input", in, "--sigma2-col", "v"});
    EXPECT_EQ(r.code, kExitInput);
    EXPECT_NE(r.err.find("need more areas"), std::string::npos);
}

TEST_F(CliTest, ConfigErrors) {
    const auto in = write("areas.csv", area_csv(10));
    EXPECT_EQ(run({"fit", "--input", in, "--sigma2-col", "s", "--methods", "bogus"}).code, kExitConfig);
    EXPECT_EQ(run({"fit", "--input", in}).code, kExitConfig);
    EXPECT_EQ(run({"fit"}).code, kExitConfig);
    EXPECT_EQ(run({"nonsense"}).code, kExitConfig);
    EXPECT_EQ(run({"simulate", "--preset", "fig9"}).code, kExitConfig);
    EXPECT_EQ(run({"fit", "--input", (dir_ / "absent.csv").string(), "--sigma2-col", "s"}).code, kExitInput);
}

TEST_F(CliTest, PopmeanEqualSizes) {
    const auto in = write("pm.csv", "y,n\n1,5\n2,5\n4,5\n0.5,5\n3,5\n");
    const auto r = run({"popmean", "--input", in, "--sigma2", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream is(r.out);
    int line = 0;
    const auto t = read_csv_block(is, line);
    ASSERT_EQ(t.rows.size(), 8u);
    std::map<std::string, double> mu;
    for (std::size_t i = 0; i < t.rows.size(); ++i) mu[t.rows[i][0]] = t.number(i, 1);
    EXPECT_DOUBLE_EQ(mu["direct"], 2.1);
    EXPECT_NEAR(mu["minvar"], 2.1, 1e-14);
    EXPECT_NEAR(mu["direct-compromise"], 2.1, 1e-14);
}

TEST_F(CliTest, PopmeanMissingColumnNamed) {
    const auto in = write("pm.csv", "y,m\n1,5\n2,5\n");
    const auto r = run({"popmean", "--input", in, "--sigma2", "1"});
    EXPECT_EQ(r.code, kExitInput);
    EXPECT_NE(r.err.find("'n'"), std::string::npos) << r.err;
}

TEST_F(CliTest, SimulateSmokeAndConfig) {
    const auto out = (dir_ / "sim").string();
    auto r = run({"simulate", "--preset", "fig1b", "--n-rep", "1", "--threads", "1", "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(fs::path(out) / "fig1b_report.csv"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "fig1b_figure.csv"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "fig1b_report.json"));

    const auto cfg = write("cfg.json", R"({"name": "mine", "tag": "pop-average", "K": 10, "n_rep": 2,
        "params": {"rho": 0.2}, "methods": ["direct", "cbp"]})");
    r = run({"simulate", "--config", cfg, "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(fs::path(out) / "mine_report.csv"));

    const auto bad = write("bad.json", "{not json");
    EXPECT_EQ(run({"simulate", "--config", bad}).code, kExitConfig);
    EXPECT_EQ(run({"simulate"}).code, kExitConfig);
}
