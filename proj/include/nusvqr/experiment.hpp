#pragma once

// Experiment drivers, cross-validated grid search and report files.
//
// Every result record is a pure function of its options and seed. Work is
// spread over `jobs` threads, but results are collected by cell index, so
// output does not depend on scheduling. Timestamps and wall-clock times are
// kept together on the first line of report.json; everything after that line
// is byte-identical across reruns.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/kernel.hpp"
#include "nusvqr/metrics.hpp"
#include "nusvqr/svqr.hpp"
#include "nusvqr/synth.hpp"

namespace nusvqr {

using ojson = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Parallel map with deterministic output order

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. If any call throws,
/// the exception of the lowest failing index is rethrown after all workers stop.
inline void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || stop.load()) return;
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    failure = std::current_exception();
                }
                stop.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned count = std::min<std::size_t>(jobs, n);
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Reports

struct Table {
    std::string name;  ///< "" for table.csv, otherwise table_<name>.csv
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct Plot {
    std::string name;  ///< written to plot_<name>.csv
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct Report {
    std::string experiment;
    ojson parameters = ojson::object();
    ojson metadata = ojson::object();
    std::vector<ojson> records;
    std::vector<double> wall_seconds;  ///< one per record; stored in the run header only
    std::vector<Table> tables;
    std::vector<Plot> plots;
};

namespace detail {

inline std::string fixed(double v, int digits) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// JSON has no infinity; ratios use null for "nothing below".
inline ojson num(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline ojson environment() {
    ojson e;
    e["library_version"] = kVersion;
#if defined(__clang__)
    e["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    e["compiler"] = std::string("gcc ") + __VERSION__;
#else
    e["compiler"] = "unknown";
#endif
    e["rng"] = "mt19937_64, 53-bit uniforms, Box-Muller normals";
    return e;
}

}  // namespace detail

/// Writes report.json, table.csv (plus table_<name>.csv) and plot_<name>.csv into `dir`.
inline void write_report(const Report& r, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());

    ojson run;
    run["timestamp"] = detail::utc_timestamp();
    run["wall_seconds"] = r.wall_seconds;
    ojson body;
    body["experiment"] = r.experiment;
    body["parameters"] = r.parameters;
    body["metadata"] = r.metadata;
    body["environment"] = detail::environment();
    body["records"] = r.records;

    const auto path = (fs::path(dir) / "report.json").string();
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    // First line holds everything that changes between reruns.
    out << "{\"run\": " << run.dump() << ",\n";
    const std::string rest = body.dump(1);
    out << rest.substr(1) << '\n';

    for (const auto& t : r.tables) {
        const auto tpath = (fs::path(dir) / (t.name.empty() ? "table.csv" : "table_" + t.name + ".csv")).string();
        std::ofstream tf(tpath);
        if (!tf) throw InputError("cannot write '" + tpath + "'");
        for (std::size_t c = 0; c < t.header.size(); ++c) tf << (c ? "," : "") << t.header[c];
        tf << '\n';
        for (const auto& row : t.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) tf << (c ? "," : "") << row[c];
            tf << '\n';
        }
    }
    for (const auto& p : r.plots) {
        const auto ppath = (fs::path(dir) / ("plot_" + p.name + ".csv")).string();
        std::ofstream pf(ppath);
        if (!pf) throw InputError("cannot write '" + ppath + "'");
        write_csv(pf, p.header, p.rows);
    }
}

// ---------------------------------------------------------------------------
// Per-fit evaluation

struct FitEval {
    double eps = 0.0;
    double frac_sv = 0.0;
    double frac_errors = 0.0;
    double ratio = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double coverage = 0.0;  ///< on the test sample
    double sparsity = 0.0;  ///< fraction
    bool degenerate = false;
    double kkt = 0.0;
    double max_alpha_beta = 0.0;
};

/// Fits on `train` and scores against the true quantile on `test`.
inline FitEval evaluate_synthetic(const Dataset& train, const Dataset& test, const SynthSpec& law, const FitConfig& cfg,
                                  std::shared_ptr<const Eigen::MatrixXd> gram = nullptr) {
    const TrainedModel m = gram ? fit(train, cfg, std::move(gram)) : fit(train, cfg);
    const TubeStats ts = tube_stats(m, train);
    const Vector pred = predict(m, test.features);
    const Vector truth = true_quantiles(law, cfg.tau, test.features);
    FitEval e;
    e.eps = m.eps_width;
    e.frac_sv = ts.frac_sv;
    e.frac_errors = ts.frac_errors;
    e.ratio = ts.ratio_above_below;
    e.rmse = rmse_vs_truth(pred, truth);
    e.mae = mae_vs_truth(pred, truth);
    e.coverage = coverage(pred, test.response);
    e.sparsity = sparsity(m);
    e.degenerate = m.diagnostics.recovery_degenerate;
    e.kkt = m.diagnostics.kkt_residual;
    e.max_alpha_beta = m.alpha.cwiseProduct(m.beta).maxCoeff();
    return e;
}

/// Averages of FitEval over trials, with the extremes the property checks need.
struct CellSummary {
    std::size_t trials = 0;
    double eps = 0.0;
    double frac_sv = 0.0;
    double frac_errors = 0.0;
    double ratio = 0.0;  ///< mean over trials with a finite ratio; inf if none
    double rmse = 0.0;
    double mae = 0.0;
    double coverage = 0.0;
    double e_tau = 0.0;  ///< |mean coverage - tau|
    double sparsity = 0.0;
    double frac_sv_min = std::numeric_limits<double>::infinity();
    double frac_errors_max = 0.0;
    double kkt_max = 0.0;
    double max_alpha_beta = 0.0;
    std::size_t degenerate = 0;
    std::vector<double> eps_per_trial;
};

inline CellSummary summarize(const std::vector<FitEval>& evals, double tau) {
    CellSummary s;
    s.trials = evals.size();
    std::size_t finite = 0;
    for (const auto& e : evals) {
        s.eps += e.eps;
        s.frac_sv += e.frac_sv;
        s.frac_errors += e.frac_errors;
        if (std::isfinite(e.ratio)) {
            s.ratio += e.ratio;
            ++finite;
        }
        s.rmse += e.rmse;
        s.mae += e.mae;
        s.coverage += e.coverage;
        s.sparsity += e.sparsity;
        s.frac_sv_min = std::min(s.frac_sv_min, e.frac_sv);
        s.frac_errors_max = std::max(s.frac_errors_max, e.frac_errors);
        s.kkt_max = std::max(s.kkt_max, e.kkt);
        s.max_alpha_beta = std::max(s.max_alpha_beta, e.max_alpha_beta);
        s.degenerate += e.degenerate ? 1 : 0;
        s.eps_per_trial.push_back(e.eps);
    }
    const auto n = static_cast<double>(evals.size());
    s.eps /= n;
    s.frac_sv /= n;
    s.frac_errors /= n;
    s.ratio = finite ? s.ratio / static_cast<double>(finite) : std::numeric_limits<double>::infinity();
    s.rmse /= n;
    s.mae /= n;
    s.coverage /= n;
    s.sparsity /= n;
    s.e_tau = std::abs(s.coverage - tau);
    return s;
}

inline ojson summary_json(const CellSummary& s) {
    ojson j;
    j["trials"] = s.trials;
    j["eps_recovered"] = s.eps;
    j["frac_sv"] = s.frac_sv;
    j["frac_errors"] = s.frac_errors;
    j["ratio"] = detail::num(s.ratio);
    j["rmse"] = s.rmse;
    j["mae"] = s.mae;
    j["e_tau"] = s.e_tau;
    j["sparsity_pct"] = 100.0 * s.sparsity;
    j["frac_sv_min"] = s.frac_sv_min;
    j["frac_errors_max"] = s.frac_errors_max;
    j["kkt_residual_max"] = s.kkt_max;
    j["max_alpha_beta"] = s.max_alpha_beta;
    j["degenerate_fits"] = s.degenerate;
    return j;
}

// ---------------------------------------------------------------------------
// Experiment options

struct ExperimentOptions {
    std::uint64_t seed = 1;
    std::optional<std::size_t> trials;
    unsigned jobs = 1;
    QpOptions solver;
    std::optional<double> C;
    std::optional<double> q;
    std::vector<double> taus;    ///< empty: experiment default
    std::vector<double> nus;     ///< empty: experiment default
    std::vector<double> sigmas;  ///< empty: experiment default
    std::vector<std::size_t> sizes;
    std::string servo_path;
    bool normalize = false;
    std::size_t test_points = 1000;
};

namespace detail {

template <class T>
std::vector<T> or_default(const std::vector<T>& v, std::vector<T> dflt) {
    return v.empty() ? dflt : v;
}

inline std::vector<double> nu_ladder(double from, double to, double step) {
    std::vector<double> out;
    const auto n = static_cast<int>(std::lround((to - from) / step));
    for (int i = 0; i <= n; ++i) out.push_back(std::round((from + step * i) * 1e6) / 1e6);
    return out;
}

inline ojson solver_json(const QpOptions& s) { return {{"tol", s.tol}, {"max_iter", s.max_iter}}; }

inline std::uint64_t train_seed(std::uint64_t base, std::size_t trial) { return derive_seed(base, trial); }
inline std::uint64_t test_seed(std::uint64_t base, std::size_t trial) { return derive_seed(base, 1000000 + trial); }

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace detail

// Defaults shared by the synthetic experiments.
inline constexpr double kSynthQ = 1.0;
inline constexpr double kSynthC = 1000.0;
inline constexpr double kExp1Sigma = 0.1;

// ---------------------------------------------------------------------------
// Experiment 1: ν sweep on AD1 (fraction of errors and support vectors)

inline Report run_experiment1(const ExperimentOptions& opt) {
    const auto taus = detail::or_default(opt.taus, {0.2, 0.5, 0.7, 0.8});
    const auto nus = detail::or_default(opt.nus, detail::nu_ladder(0.05, 1.0, 0.05));
    const double sigma = opt.sigmas.empty() ? kExp1Sigma : opt.sigmas.front();
    const std::size_t l = opt.sizes.empty() ? 200 : opt.sizes.front();
    const std::size_t trials = opt.trials.value_or(10);
    const double C = opt.C.value_or(kSynthC);
    const double q = opt.q.value_or(kSynthQ);

    SynthSpec law;
    law.dataset = SynthKind::AD1;
    law.l = l;
    law.sigma = sigma;

    // Shared training/test samples and Gram matrices, one per trial.
    std::vector<Dataset> train(trials);
    std::vector<Dataset> test(trials);
    std::vector<std::shared_ptr<const Eigen::MatrixXd>> grams(trials);
    parallel_for(trials, opt.jobs, [&](std::size_t t) {
        SynthSpec s = law;
        s.seed = detail::train_seed(opt.seed, t);
        train[t] = generate(s);
        s.seed = detail::test_seed(opt.seed, t);
        s.l = opt.test_points;
        test[t] = generate(s);
        grams[t] = std::make_shared<const Eigen::MatrixXd>(gram_matrix(KernelSpec::rbf(q), train[t].features));
    });

    const std::size_t cells = taus.size() * nus.size();
    std::vector<CellSummary> out(cells);
    std::vector<double> wall(cells);
    parallel_for(cells, opt.jobs, [&](std::size_t c) {
        const auto t0 = detail::Clock::now();
        FitConfig cfg;
        cfg.model = ModelKind::NuSVQR;
        cfg.tau = taus[c / nus.size()];
        cfg.nu = nus[c % nus.size()];
        cfg.C = C;
        cfg.kernel = KernelSpec::rbf(q);
        cfg.solver = opt.solver;
        std::vector<FitEval> evals;
        for (std::size_t t = 0; t < trials; ++t) evals.push_back(evaluate_synthetic(train[t], test[t], law, cfg, grams[t]));
        out[c] = summarize(evals, cfg.tau);
        wall[c] = detail::seconds_since(t0);
    });

    Report r;
    r.experiment = "1";
    r.parameters = {{"dataset", "AD1"}, {"l", l},           {"sigma", sigma}, {"trials", trials},
                    {"C", C},           {"q", q},           {"taus", taus},   {"nus", nus},
                    {"seed", opt.seed}, {"test_points", opt.test_points}, {"solver", detail::solver_json(opt.solver)}};
    r.metadata = {{"sigma_note", "AD1 noise standard deviation used for this sweep"},
                  {"trial_seeds", "train: derive_seed(seed, t); test: derive_seed(seed, 1000000 + t)"}};
    Table table{"", {"tau", "metric"}, {}};
    for (double nu : nus) table.header.push_back(detail::fixed(nu, 3));
    Plot plot{"eps_vs_nu", {"tau", "nu", "eps", "frac_sv", "frac_errors", "rmse", "mae"}, {}};
    for (std::size_t ti = 0; ti < taus.size(); ++ti) {
        std::vector<std::vector<std::string>> rows(5);
        const char* names[] = {"eps", "SV", "Error", "RMSE", "MAE"};
        for (std::size_t k = 0; k < 5; ++k) rows[k] = {detail::fixed(taus[ti], 2), names[k]};
        for (std::size_t ni = 0; ni < nus.size(); ++ni) {
            const std::size_t c = ti * nus.size() + ni;
            const auto& s = out[c];
            ojson rec;
            rec["tau"] = taus[ti];
            rec["nu"] = nus[ni];
            rec["C"] = C;
            rec["q"] = q;
            rec["l"] = l;
            rec["sigma"] = sigma;
            rec["seed"] = opt.seed;
            rec.update(summary_json(s));
            rec["eps_per_trial"] = s.eps_per_trial;
            r.records.push_back(rec);
            r.wall_seconds.push_back(wall[c]);
            rows[0].push_back(detail::fixed(s.eps, 3));
            rows[1].push_back(detail::fixed(s.frac_sv, 3));
            rows[2].push_back(detail::fixed(s.frac_errors, 3));
            rows[3].push_back(detail::fixed(s.rmse, 3));
            rows[4].push_back(detail::fixed(s.mae, 3));
            plot.rows.push_back({taus[ti], nus[ni], s.eps, s.frac_sv, s.frac_errors, s.rmse, s.mae});
        }
        for (auto& row : rows) table.rows.push_back(std::move(row));
    }
    r.tables.push_back(std::move(table));
    r.plots.push_back(std::move(plot));
    return r;
}

// ---------------------------------------------------------------------------
// Experiment 2: growing training sets at ν = 0.8

inline Report run_experiment2(const ExperimentOptions& opt) {
    const auto taus = detail::or_default(opt.taus, {0.1, 0.3, 0.7, 0.9});
    const auto sizes = detail::or_default(opt.sizes, {100, 200, 500, 1000, 3000, 5000});
    const double nu = opt.nus.empty() ? 0.8 : opt.nus.front();
    const double sigma = opt.sigmas.empty() ? kExp1Sigma : opt.sigmas.front();
    const std::size_t trials = opt.trials.value_or(1);
    const double C = opt.C.value_or(kSynthC);
    const double q = opt.q.value_or(kSynthQ);

    SynthSpec law;
    law.sigma = sigma;
    const std::size_t cells = taus.size() * sizes.size();
    std::vector<CellSummary> out(cells);
    std::vector<double> wall(cells);
    // Largest sizes first so the long fits start early.
    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sizes[a % sizes.size()] > sizes[b % sizes.size()]; });
    parallel_for(cells, opt.jobs, [&](std::size_t k) {
        const std::size_t c = order[k];
        const auto t0 = detail::Clock::now();
        FitConfig cfg;
        cfg.tau = taus[c / sizes.size()];
        cfg.nu = nu;
        cfg.C = C;
        cfg.kernel = KernelSpec::rbf(q);
        cfg.solver = opt.solver;
        std::vector<FitEval> evals;
        for (std::size_t t = 0; t < trials; ++t) {
            SynthSpec s = law;
            s.l = sizes[c % sizes.size()];
            s.seed = detail::train_seed(opt.seed, t);
            const Dataset train = generate(s);
            s.l = opt.test_points;
            s.seed = detail::test_seed(opt.seed, t);
            const Dataset test = generate(s);
            evals.push_back(evaluate_synthetic(train, test, law, cfg));
        }
        out[c] = summarize(evals, cfg.tau);
        wall[c] = detail::seconds_since(t0);
    });

    Report r;
    r.experiment = "2";
    r.parameters = {{"dataset", "AD1"}, {"sizes", sizes}, {"nu", nu},     {"sigma", sigma},
                    {"trials", trials}, {"C", C},         {"q", q},       {"taus", taus},
                    {"seed", opt.seed}, {"test_points", opt.test_points}, {"solver", detail::solver_json(opt.solver)}};
    r.metadata = {{"ratio", "points above the tube divided by points below"}};
    Table table{"", {"tau", "metric"}, {}};
    for (auto l : sizes) table.header.push_back(std::to_string(l));
    Plot plot{"asymptotic", {"tau", "l", "frac_sv", "frac_errors", "ratio", "eps", "rmse"}, {}};
    for (std::size_t ti = 0; ti < taus.size(); ++ti) {
        std::vector<std::vector<std::string>> rows(5);
        const char* names[] = {"SV", "Error", "Ratio", "eps", "RMSE"};
        for (std::size_t k = 0; k < 5; ++k) rows[k] = {detail::fixed(taus[ti], 2), names[k]};
        for (std::size_t li = 0; li < sizes.size(); ++li) {
            const std::size_t c = ti * sizes.size() + li;
            const auto& s = out[c];
            ojson rec;
            rec["tau"] = taus[ti];
            rec["nu"] = nu;
            rec["C"] = C;
            rec["q"] = q;
            rec["l"] = sizes[li];
            rec["sigma"] = sigma;
            rec["seed"] = opt.seed;
            rec.update(summary_json(s));
            r.records.push_back(rec);
            r.wall_seconds.push_back(wall[c]);
            rows[0].push_back(detail::fixed(s.frac_sv, 2));
            rows[1].push_back(detail::fixed(s.frac_errors, 2));
            rows[2].push_back(detail::fixed(s.ratio, 2));
            rows[3].push_back(detail::fixed(s.eps, 2));
            rows[4].push_back(detail::fixed(s.rmse, 2));
            plot.rows.push_back({taus[ti], static_cast<double>(sizes[li]), s.frac_sv, s.frac_errors,
                                 std::isfinite(s.ratio) ? s.ratio : std::numeric_limits<double>::quiet_NaN(), s.eps,
                                 s.rmse});
        }
        for (auto& row : rows) table.rows.push_back(std::move(row));
    }
    r.tables.push_back(std::move(table));
    r.plots.push_back(std::move(plot));
    return r;
}

// ---------------------------------------------------------------------------
// Experiment 3: noise level sweep at ν = 0.4

inline Report run_experiment3(const ExperimentOptions& opt) {
    const auto taus = detail::or_default(opt.taus, {0.9, 0.7, 0.5, 0.3, 0.1});
    const auto sigmas = detail::or_default(opt.sigmas, detail::nu_ladder(0.1, 1.0, 0.1));
    const double nu = opt.nus.empty() ? 0.4 : opt.nus.front();
    const std::size_t l = opt.sizes.empty() ? 500 : opt.sizes.front();
    const std::size_t trials = opt.trials.value_or(10);
    const double C = opt.C.value_or(kSynthC);
    const double q = opt.q.value_or(kSynthQ);

    const std::size_t cells = taus.size() * sigmas.size();
    std::vector<CellSummary> out(cells);
    std::vector<double> wall(cells);
    parallel_for(cells, opt.jobs, [&](std::size_t c) {
        const auto t0 = detail::Clock::now();
        SynthSpec law;
        law.sigma = sigmas[c % sigmas.size()];
        FitConfig cfg;
        cfg.tau = taus[c / sigmas.size()];
        cfg.nu = nu;
        cfg.C = C;
        cfg.kernel = KernelSpec::rbf(q);
        cfg.solver = opt.solver;
        std::vector<FitEval> evals;
        for (std::size_t t = 0; t < trials; ++t) {
            SynthSpec s = law;
            s.l = l;
            s.seed = detail::train_seed(opt.seed, t);
            const Dataset train = generate(s);
            s.l = opt.test_points;
            s.seed = detail::test_seed(opt.seed, t);
            const Dataset test = generate(s);
            evals.push_back(evaluate_synthetic(train, test, law, cfg));
        }
        out[c] = summarize(evals, cfg.tau);
        wall[c] = detail::seconds_since(t0);
    });

    Report r;
    r.experiment = "3";
    r.parameters = {{"dataset", "AD1"}, {"l", l},         {"nu", nu},     {"sigmas", sigmas},
                    {"trials", trials}, {"C", C},         {"q", q},       {"taus", taus},
                    {"seed", opt.seed}, {"test_points", opt.test_points}, {"solver", detail::solver_json(opt.solver)}};
    r.metadata = {{"noise", "same base seed for every sigma, so samples differ only in noise scale"}};
    Table table{"", {"tau", "metric"}, {}};
    for (double s : sigmas) table.header.push_back(detail::fixed(s, 1));
    Plot plot{"eps_vs_sigma", {"tau", "sigma", "eps", "frac_errors", "frac_sv", "rmse"}, {}};
    for (std::size_t ti = 0; ti < taus.size(); ++ti) {
        std::vector<std::vector<std::string>> rows(4);
        const char* names[] = {"eps", "Error", "SV", "RMSE"};
        for (std::size_t k = 0; k < 4; ++k) rows[k] = {detail::fixed(taus[ti], 2), names[k]};
        for (std::size_t si = 0; si < sigmas.size(); ++si) {
            const std::size_t c = ti * sigmas.size() + si;
            const auto& s = out[c];
            ojson rec;
            rec["tau"] = taus[ti];
            rec["nu"] = nu;
            rec["C"] = C;
            rec["q"] = q;
            rec["l"] = l;
            rec["sigma"] = sigmas[si];
            rec["seed"] = opt.seed;
            rec.update(summary_json(s));
            r.records.push_back(rec);
            r.wall_seconds.push_back(wall[c]);
            rows[0].push_back(detail::fixed(s.eps, 2));
            rows[1].push_back(detail::fixed(s.frac_errors, 2));
            rows[2].push_back(detail::fixed(s.frac_sv, 2));
            rows[3].push_back(detail::fixed(s.rmse, 2));
            plot.rows.push_back({taus[ti], sigmas[si], s.eps, s.frac_errors, s.frac_sv, s.rmse});
        }
        for (auto& row : rows) table.rows.push_back(std::move(row));
    }
    r.tables.push_back(std::move(table));
    r.plots.push_back(std::move(plot));
    return r;
}

// ---------------------------------------------------------------------------
// Experiment 4: fixed ε versus adaptive ν when the noise level jumps

struct Exp4Config {
    double tau = 0.3;
    std::size_t l = 500;
    double eps = 0.1;    ///< ε model width
    double eps_C = 1.0;  ///< ε model C
    double nu = 0.5;
    double nu_C = 500.0;
    double q = kSynthQ;
    std::vector<double> half_widths{0.1, 5.0};  ///< U(-h, h) noise per phase
};

inline Report run_experiment4(const ExperimentOptions& opt, Exp4Config cfg4 = {}) {
    if (opt.q) cfg4.q = *opt.q;
    if (!opt.taus.empty()) cfg4.tau = opt.taus.front();
    if (!opt.sizes.empty()) cfg4.l = opt.sizes.front();
    if (!opt.nus.empty()) cfg4.nu = opt.nus.front();
    if (!opt.sigmas.empty()) cfg4.half_widths = opt.sigmas;
    const std::size_t trials = opt.trials.value_or(10);

    FitConfig eps_cfg;
    eps_cfg.model = ModelKind::EpsSVQR;
    eps_cfg.tau = cfg4.tau;
    eps_cfg.C = cfg4.eps_C;
    eps_cfg.eps = cfg4.eps;
    eps_cfg.kernel = KernelSpec::rbf(cfg4.q);
    eps_cfg.solver = opt.solver;
    FitConfig nu_cfg = eps_cfg;
    nu_cfg.model = ModelKind::NuSVQR;
    nu_cfg.C = opt.C.value_or(cfg4.nu_C);
    nu_cfg.nu = cfg4.nu;

    const std::size_t phases = cfg4.half_widths.size();
    const std::size_t cells = phases * 2;
    std::vector<CellSummary> out(cells);
    std::vector<double> wall(cells);
    std::vector<std::vector<double>> curve(cells);
    Dataset curve_x;
    {
        // Evaluation grid for the prediction plot.
        curve_x.features.resize(161, 1);
        for (Eigen::Index i = 0; i < 161; ++i) curve_x.features(i, 0) = -4.0 + 0.05 * static_cast<double>(i);
    }
    parallel_for(cells, opt.jobs, [&](std::size_t c) {
        const auto t0 = detail::Clock::now();
        SynthSpec law;
        law.dataset = SynthKind::AD2;
        law.a = -cfg4.half_widths[c / 2];
        law.b = cfg4.half_widths[c / 2];
        const FitConfig& cfg = c % 2 == 0 ? eps_cfg : nu_cfg;
        std::vector<FitEval> evals;
        for (std::size_t t = 0; t < trials; ++t) {
            SynthSpec s = law;
            s.l = cfg4.l;
            s.seed = detail::train_seed(opt.seed, t);
            const Dataset train = generate(s);
            s.l = opt.test_points;
            s.seed = detail::test_seed(opt.seed, t);
            const Dataset test = generate(s);
            evals.push_back(evaluate_synthetic(train, test, law, cfg));
            if (t == 0) {
                const Vector p = predict(fit(train, cfg), curve_x.features);
                curve[c].assign(p.data(), p.data() + p.size());
            }
        }
        out[c] = summarize(evals, cfg.tau);
        wall[c] = detail::seconds_since(t0);
    });

    Report r;
    r.experiment = "4";
    r.parameters = {{"dataset", "AD2"},
                    {"l", cfg4.l},
                    {"tau", cfg4.tau},
                    {"q", cfg4.q},
                    {"eps_model", {{"eps", cfg4.eps}, {"C", eps_cfg.C}}},
                    {"nu_model", {{"nu", cfg4.nu}, {"C", nu_cfg.C}}},
                    {"noise_half_widths", cfg4.half_widths},
                    {"trials", trials},
                    {"seed", opt.seed},
                    {"test_points", opt.test_points},
                    {"solver", detail::solver_json(opt.solver)}};
    r.metadata = {{"protocol", "parameters stay fixed while the noise level changes between phases"}};
    Table table{"", {"phase", "noise", "model", "C", "eps_param_or_nu", "tube_width", "RMSE", "MAE"}, {}};
    Plot plot{"predictions", {"x", "truth_phase"}, {}};
    for (std::size_t ph = 0; ph < phases; ++ph) {
        plot.header.push_back("eps_model_phase" + std::to_string(ph + 1));
        plot.header.push_back("nu_model_phase" + std::to_string(ph + 1));
    }
    for (std::size_t c = 0; c < cells; ++c) {
        const std::size_t ph = c / 2;
        const bool is_nu = c % 2 == 1;
        const auto& s = out[c];
        const std::string noise = "U(" + detail::fixed(-cfg4.half_widths[ph], 2) + "," +
                                  detail::fixed(cfg4.half_widths[ph], 2) + ")";
        ojson rec;
        rec["phase"] = ph + 1;
        rec["noise"] = noise;
        rec["model"] = is_nu ? "nu" : "eps";
        rec["tau"] = cfg4.tau;
        rec["C"] = is_nu ? nu_cfg.C : eps_cfg.C;
        rec["q"] = cfg4.q;
        rec["l"] = cfg4.l;
        if (is_nu) {
            rec["nu"] = cfg4.nu;
        } else {
            rec["eps"] = cfg4.eps;
        }
        rec["seed"] = opt.seed;
        rec.update(summary_json(s));
        r.records.push_back(rec);
        r.wall_seconds.push_back(wall[c]);
        table.rows.push_back({std::to_string(ph + 1), noise, is_nu ? "nu" : "eps",
                              detail::fixed(is_nu ? nu_cfg.C : eps_cfg.C, 1),
                              detail::fixed(is_nu ? cfg4.nu : cfg4.eps, 3), detail::fixed(s.eps, 4),
                              detail::fixed(s.rmse, 4), detail::fixed(s.mae, 4)});
    }
    SynthSpec any;
    any.dataset = SynthKind::AD2;
    for (Eigen::Index i = 0; i < curve_x.features.rows(); ++i) {
        // The true quantile curve differs between phases only by a constant.
        const double x = curve_x.features(i, 0);
        std::vector<double> row{x, base_function(x)};
        for (std::size_t c = 0; c < cells; ++c) row.push_back(curve[c][static_cast<std::size_t>(i)]);
        plot.rows.push_back(std::move(row));
    }
    r.metadata["truth_phase_column"] = "g(x) without the noise quantile shift; add a + tau (b - a) for each phase";
    r.tables.push_back(std::move(table));
    r.plots.push_back(std::move(plot));
    return r;
}

// ---------------------------------------------------------------------------
// Experiment 5: Servo coverage error and sparsity

inline constexpr double kServoQ = 8.0;
inline constexpr double kServoC = 1000.0;

/// Random 80/20 split of n rows; returns (train, test) index lists.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> random_split(std::size_t n, double train_frac,
                                                                                  std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto k = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
    std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    return {tr, te};
}

inline Report run_experiment5(const ExperimentOptions& opt) {
    if (opt.servo_path.empty()) {
        throw InputError("experiment 5 needs the UCI Servo data: pass --servo <path to servo.data> "
                         "(167 rows 'motor,screw,pgain,vgain,class', motor/screw in A-E)");
    }
    const Dataset data = read_servo(opt.servo_path);
    const auto taus = detail::or_default(opt.taus, detail::nu_ladder(0.1, 0.9, 0.1));
    const auto nus = detail::or_default(opt.nus, detail::nu_ladder(0.1, 1.0, 0.05));
    const std::size_t trials = opt.trials.value_or(100);
    const double C = opt.C.value_or(kServoC);
    const double q = opt.q.value_or(kServoQ);

    struct Split {
        Dataset train;
        Dataset test;
        std::shared_ptr<const Eigen::MatrixXd> gram;
    };
    std::vector<Split> splits(trials);
    parallel_for(trials, opt.jobs, [&](std::size_t t) {
        const auto [tr, te] = random_split(data.size(), 0.8, detail::train_seed(opt.seed, t));
        Split s{data.subset(tr), data.subset(te), nullptr};
        if (opt.normalize) {
            // Scaling is fitted on the training part only.
            const auto sc = MinMaxScaling::fit(s.train.features);
            s.train.features = sc.apply(s.train.features);
            s.test.features = sc.apply(s.test.features);
        }
        s.gram = std::make_shared<const Eigen::MatrixXd>(gram_matrix(KernelSpec::rbf(q), s.train.features));
        splits[t] = std::move(s);
    });

    const std::size_t cells = taus.size() * nus.size();
    std::vector<double> e_tau(cells);
    std::vector<double> sparsity_pct(cells);
    std::vector<std::size_t> degenerate(cells);
    std::vector<double> wall(cells);
    parallel_for(cells, opt.jobs, [&](std::size_t c) {
        const auto t0 = detail::Clock::now();
        FitConfig cfg;
        cfg.tau = taus[c % taus.size()];
        cfg.nu = nus[c / taus.size()];
        cfg.C = C;
        cfg.kernel = KernelSpec::rbf(q);
        cfg.solver = opt.solver;
        double cov = 0.0;
        double sp = 0.0;
        std::size_t deg = 0;
        for (const auto& s : splits) {
            const TrainedModel m = fit(s.train, cfg, s.gram);
            cov += coverage(predict(m, s.test.features), s.test.response);
            sp += sparsity(m);
            deg += m.diagnostics.recovery_degenerate ? 1 : 0;
        }
        e_tau[c] = std::abs(cov / static_cast<double>(trials) - cfg.tau);
        sparsity_pct[c] = 100.0 * sp / static_cast<double>(trials);
        degenerate[c] = deg;
        wall[c] = detail::seconds_since(t0);
    });

    Report r;
    r.experiment = "5";
    r.parameters = {{"dataset", "servo"}, {"rows", data.size()}, {"train_fraction", 0.8}, {"trials", trials},
                    {"C", C},             {"q", q},              {"taus", taus},          {"nus", nus},
                    {"seed", opt.seed},   {"solver", detail::solver_json(opt.solver)}};
    r.metadata = {{"encoding", std::string(kServoEncoding)},
                  {"preprocessing", opt.normalize ? "minmax (fitted per training split)" : "none"},
                  {"splits", "uniform random, not stratified; split t uses derive_seed(seed, t)"},
                  {"e_tau", "|mean over trials of test coverage - tau|"}};
    Table etab{"", {"nu/tau"}, {}};
    Table stab{"sparsity", {"nu/tau"}, {}};
    for (double t : taus) {
        etab.header.push_back(detail::fixed(t, 1));
        stab.header.push_back(detail::fixed(t, 1));
    }
    Plot plot{"sparsity_vs_nu", {"tau", "nu", "sparsity_pct", "e_tau"}, {}};
    for (std::size_t ni = 0; ni < nus.size(); ++ni) {
        std::vector<std::string> erow{detail::fixed(nus[ni], 2)};
        std::vector<std::string> srow{detail::fixed(nus[ni], 2)};
        for (std::size_t ti = 0; ti < taus.size(); ++ti) {
            const std::size_t c = ni * taus.size() + ti;
            ojson rec;
            rec["tau"] = taus[ti];
            rec["nu"] = nus[ni];
            rec["C"] = C;
            rec["q"] = q;
            rec["l"] = splits.front().train.size();
            rec["trials"] = trials;
            rec["seed"] = opt.seed;
            rec["e_tau"] = e_tau[c];
            rec["sparsity_pct"] = sparsity_pct[c];
            rec["degenerate_fits"] = degenerate[c];
            r.records.push_back(rec);
            r.wall_seconds.push_back(wall[c]);
            erow.push_back(detail::fixed(e_tau[c], 3));
            srow.push_back(detail::fixed(sparsity_pct[c], 2));
            plot.rows.push_back({taus[ti], nus[ni], sparsity_pct[c], e_tau[c]});
        }
        etab.rows.push_back(std::move(erow));
        stab.rows.push_back(std::move(srow));
    }
    r.tables.push_back(std::move(etab));
    r.tables.push_back(std::move(stab));
    r.plots.push_back(std::move(plot));
    return r;
}

inline Report run_experiment(int id, const ExperimentOptions& opt) {
    switch (id) {
        case 1: return run_experiment1(opt);
        case 2: return run_experiment2(opt);
        case 3: return run_experiment3(opt);
        case 4: return run_experiment4(opt);
        case 5: return run_experiment5(opt);
        default: throw InputError("experiment id must be 1-5, got " + std::to_string(id));
    }
}

// ---------------------------------------------------------------------------
// Grid search

inline std::vector<int> default_grid_exponents() { return {-15, -12, -9, -6, -3, 0, 3, 6, 9, 12, 15}; }

struct GridSpec {
    ModelKind model = ModelKind::NuSVQR;
    double tau = 0.5;
    std::vector<int> q_exponents = default_grid_exponents();
    std::vector<int> c_exponents = default_grid_exponents();
    std::vector<double> third;  ///< ν values (nu model) or ε values (eps model); ignored for standard
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    QpOptions solver;
    unsigned jobs = 1;
};

struct GridCell {
    double q = 0.0;
    double C = 0.0;
    double third = 0.0;
    double cv_loss = std::numeric_limits<double>::infinity();
    bool converged = true;
    double seconds = 0.0;
};

struct GridResult {
    FitConfig best;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<GridCell> cells;  ///< in (q, C, third) lexicographic order
};

/// Index of the lowest converged cv_loss; ties go to the earliest cell, so cells
/// in (q, C, third) order give the lexicographically smallest winner. Returns
/// cells.size() when nothing converged.
inline std::size_t best_cell(const std::vector<GridCell>& cells) {
    std::size_t best = cells.size();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i].converged) continue;
        if (best == cells.size() || cells[i].cv_loss < cells[best].cv_loss) best = i;
    }
    return best;
}

/// Fold id per row, balanced sizes, order from `seed`.
inline std::vector<std::size_t> kfold_assignment(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > n) throw InputError("fold count must be in [2, n]");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<std::size_t> fold(n);
    for (std::size_t r = 0; r < n; ++r) fold[perm[r]] = r % k;
    return fold;
}

inline FitConfig grid_config(const GridSpec& g, double q, double C, double third) {
    FitConfig cfg;
    cfg.model = g.model;
    cfg.tau = g.tau;
    cfg.C = C;
    cfg.kernel = KernelSpec::rbf(q);
    cfg.solver = g.solver;
    if (g.model == ModelKind::NuSVQR) cfg.nu = third;
    if (g.model == ModelKind::EpsSVQR) cfg.eps = third;
    return cfg;
}

/// Mean over folds of the mean validation pinball loss.
inline double cv_loss(const Dataset& data, const FitConfig& cfg, const std::vector<std::size_t>& fold, std::size_t k) {
    double total = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> tr;
        std::vector<std::size_t> va;
        for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? va : tr).push_back(i);
        const Dataset train = data.subset(tr);
        const Dataset valid = data.subset(va);
        const TrainedModel m = fit(train, cfg);
        total += mean_pinball_loss(predict(m, valid.features), valid.response, cfg.tau);
    }
    return total / static_cast<double>(k);
}

inline GridResult grid_search(const Dataset& data, GridSpec g) {
    check_consistent(data);
    TauLevel{g.tau};
    if (g.q_exponents.empty() || g.c_exponents.empty()) throw InputError("grid exponents must not be empty");
    if (g.model == ModelKind::StandardSVQR || g.third.empty()) {
        if (g.model == ModelKind::NuSVQR && g.third.empty()) g.third = {0.1, 0.3, 0.5, 0.7, 0.9};
        if (g.model == ModelKind::EpsSVQR && g.third.empty()) g.third = {0.0, 0.05, 0.1, 0.2, 0.4};
        if (g.model == ModelKind::StandardSVQR) g.third = {0.0};
    }
    auto qs = g.q_exponents;
    auto cs = g.c_exponents;
    auto th = g.third;
    std::sort(qs.begin(), qs.end());
    std::sort(cs.begin(), cs.end());
    std::sort(th.begin(), th.end());
    qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
    th.erase(std::unique(th.begin(), th.end()), th.end());

    GridResult res;
    for (int qe : qs) {
        for (int ce : cs) {
            for (double t : th) res.cells.push_back({std::ldexp(1.0, qe), std::ldexp(1.0, ce), t});
        }
    }
    for (const auto& c : res.cells) grid_config(g, c.q, c.C, c.third).validate();
    const auto fold = kfold_assignment(data.size(), g.folds, g.seed);
    parallel_for(res.cells.size(), g.jobs, [&](std::size_t i) {
        auto& cell = res.cells[i];
        const auto t0 = detail::Clock::now();
        try {
            cell.cv_loss = cv_loss(data, grid_config(g, cell.q, cell.C, cell.third), fold, g.folds);
        } catch (const NonConvergenceError&) {
            cell.converged = false;
        }
        cell.seconds = detail::seconds_since(t0);
    });
    const std::size_t best = best_cell(res.cells);
    if (best == res.cells.size()) {
        throw NonConvergenceError("no grid cell converged; raise --max-iter", {}, 0.0, g.solver.max_iter);
    }
    const auto& b = res.cells[best];
    res.best_loss = b.cv_loss;
    res.best = grid_config(g, b.q, b.C, b.third);
    return res;
}

inline Report grid_report(const GridResult& res, const GridSpec& g, const std::string& source) {
    Report r;
    r.experiment = "gridsearch";
    r.parameters = {{"data", source},
                    {"model", to_string(g.model)},
                    {"tau", g.tau},
                    {"q_exponents", g.q_exponents},
                    {"c_exponents", g.c_exponents},
                    {"folds", g.folds},
                    {"seed", g.seed},
                    {"solver", detail::solver_json(g.solver)}};
    r.metadata = {{"score", "mean over folds of mean validation pinball loss"},
                  {"tie_break", "lexicographically smallest (q, C, nu or eps)"},
                  {"best", {{"q", res.best.kernel.q},
                            {"C", res.best.C},
                            {"nu", res.best.nu},
                            {"eps", res.best.eps},
                            {"cv_loss", res.best_loss}}}};
    const char* third = g.model == ModelKind::NuSVQR ? "nu" : "eps";
    Table t{"", {"q", "C", third, "cv_loss", "converged"}, {}};
    Plot p{"cv_loss", {"log2_q", "log2_C", third, "cv_loss"}, {}};
    for (const auto& c : res.cells) {
        ojson rec = {{"q", c.q}, {"C", c.C}, {third, c.third}, {"cv_loss", detail::num(c.cv_loss)},
                     {"converged", c.converged}, {"seed", g.seed}};
        r.records.push_back(rec);
        r.wall_seconds.push_back(c.seconds);
        t.rows.push_back({format_double(c.q), format_double(c.C), format_double(c.third),
                          c.converged ? format_double(c.cv_loss) : "nan", c.converged ? "1" : "0"});
        p.rows.push_back({std::log2(c.q), std::log2(c.C), c.third,
                          c.converged ? c.cv_loss : std::numeric_limits<double>::quiet_NaN()});
    }
    r.tables.push_back(std::move(t));
    r.plots.push_back(std::move(p));
    return r;
}

}  // namespace nusvqr
