#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nusvqr/model_io.hpp"
#include "nusvqr/synth.hpp"

namespace fs = std::filesystem;

namespace {

nusvqr::ModelFile trained(bool scaled) {
    nusvqr::SynthSpec s;
    s.l = 60;
    s.seed = 12;
    nusvqr::Dataset d = nusvqr::generate(s);
    nusvqr::FitConfig cfg;
    cfg.model = nusvqr::ModelKind::NuSVQR;
    cfg.tau = 0.3;
    cfg.nu = 0.4;
    cfg.C = 50.0;
    cfg.kernel = nusvqr::KernelSpec::rbf(0.6);
    nusvqr::ModelFile f;
    f.feature_names = {"x"};
    if (scaled) {
        f.scaling = nusvqr::MinMaxScaling::fit(d.features);
        d.features = f.scaling->apply(d.features);
    }
    f.model = nusvqr::fit(d, cfg);
    return f;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("nusvqr_test_" + name); }

}  // namespace

TEST(ModelIo, RoundTripIsBitExact) {
    for (bool scaled : {false, true}) {
        const auto f = trained(scaled);
        const auto path = temp_file(scaled ? "scaled.json" : "plain.json");
        nusvqr::save_model(f, path.string());
        const auto g = nusvqr::load_model(path.string());
        fs::remove(path);
        EXPECT_EQ(g.model.coeffs, f.model.coeffs);
        EXPECT_EQ(g.model.alpha, f.model.alpha);
        EXPECT_EQ(g.model.beta, f.model.beta);
        EXPECT_EQ(g.model.bias, f.model.bias);
        EXPECT_EQ(g.model.eps_width, f.model.eps_width);
        EXPECT_EQ(g.model.train_features, f.model.train_features);
        EXPECT_EQ(g.model.sv_indices, f.model.sv_indices);
        EXPECT_EQ(g.model.config.kernel.q, f.model.config.kernel.q);
        EXPECT_EQ(g.feature_names, f.feature_names);
        ASSERT_EQ(g.scaling.has_value(), scaled);
        nusvqr::FeatureMatrix x(5, 1);
        x << -3.9, -1.0, 0.0, 2.2, 3.95;
        EXPECT_EQ(nusvqr::predict(g, x), nusvqr::predict(f, x));
    }
}

TEST(ModelIo, RejectsMalformedFiles) {
    const auto good = nusvqr::model_to_json(trained(false));
    for (const char* key : {"format", "version", "config", "bias", "coeffs", "train_features", "preprocessing"}) {
        auto j = good;
        j.erase(key);
        EXPECT_THROW(nusvqr::model_from_json(j), nusvqr::InputError) << key;
    }
    auto wrong_type = good;
    wrong_type["bias"] = "high";
    EXPECT_THROW(nusvqr::model_from_json(wrong_type), nusvqr::InputError);
    auto short_coeffs = good;
    short_coeffs["coeffs"].erase(0);
    EXPECT_THROW(nusvqr::model_from_json(short_coeffs), nusvqr::InputError);
    auto bad_tau = good;
    bad_tau["config"]["tau"] = 1.5;
    EXPECT_THROW(nusvqr::model_from_json(bad_tau), nusvqr::InputError);

    const auto path = temp_file("garbage.json");
    std::ofstream(path) << "{not json";
    EXPECT_THROW(nusvqr::load_model(path.string()), nusvqr::InputError);
    fs::remove(path);
    EXPECT_THROW(nusvqr::load_model(temp_file("absent.json").string()), nusvqr::InputError);
}

TEST(Csv, ParseAndSelectTarget) {
    std::istringstream in("x1,y,x2\n1,2,3\n4.5,-6,7e-1\n");
    const auto t = nusvqr::parse_csv(in);
    ASSERT_EQ(t.rows.size(), 2u);
    const auto d = nusvqr::table_to_dataset(t, "y");
    EXPECT_EQ(d.response(1), -6.0);
    EXPECT_EQ(d.features(1, 1), 0.7);
    EXPECT_EQ(d.feature_names, (std::vector<std::string>{"x1", "x2"}));
    EXPECT_THROW(nusvqr::table_to_dataset(t, "z"), nusvqr::InputError);

    std::istringstream bad("a,b\n1,oops\n");
    EXPECT_THROW(nusvqr::parse_csv(bad), nusvqr::InputError);
    std::istringstream ragged("a,b\n1\n");
    EXPECT_THROW(nusvqr::parse_csv(ragged), nusvqr::InputError);
}

TEST(Csv, FormattedDoublesRoundTrip) {
    for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 2.0}) {
        EXPECT_EQ(std::stod(nusvqr::format_double(v)), v);
    }
}

TEST(Servo, OneHotEncoding) {
    std::istringstream in("E,E,5,4,0.28125095\nB,D,6,5,0.5062525\n");
    const auto d = nusvqr::parse_servo(in);
    ASSERT_EQ(d.features.cols(), 12);
    EXPECT_EQ(d.features(0, 4), 1.0);
    EXPECT_EQ(d.features(0, 9), 1.0);
    EXPECT_EQ(d.features.row(0).head(10).sum(), 2.0);
    EXPECT_EQ(d.features(1, 1), 1.0);
    EXPECT_EQ(d.features(1, 8), 1.0);
    EXPECT_EQ(d.features(1, 10), 6.0);
    EXPECT_EQ(d.features(1, 11), 5.0);
    EXPECT_EQ(d.response(0), 0.28125095);
    std::istringstream bad("F,A,5,4,1\n");
    EXPECT_THROW(nusvqr::parse_servo(bad), nusvqr::InputError);
    EXPECT_THROW(nusvqr::read_servo("/nonexistent/servo.data"), nusvqr::InputError);
}
