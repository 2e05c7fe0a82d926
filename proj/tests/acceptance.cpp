// End-to-end acceptance checks. Each criterion prints one line
//   criterion <n>: PASS|FAIL|SKIP <details>
// and the process exits 0 on pass, 1 on failure, 77 when required data is absent.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nusvqr/experiment.hpp"
#include "oracles.hpp"

namespace {

using nusvqr::Dataset;
using nusvqr::FitConfig;
using nusvqr::ModelKind;
using nusvqr::Vector;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitSkip = 77;

struct Context {
    unsigned jobs = 1;
    std::string servo_path;
};

class Verdict {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass_ = false;
            failures_.push_back(what);
        }
    }
    void note(const std::string& s) { notes_.push_back(s); }
    void skip(const std::string& why) {
        skipped_ = true;
        notes_.push_back(why);
    }
    void limit_runtime(double seconds, double limit) {
        std::ostringstream os;
        os << "runtime " << std::fixed << std::setprecision(1) << seconds << "s (limit " << limit << "s)";
        note(os.str());
        require(seconds < limit, "runtime over limit");
    }

    [[nodiscard]] int exit_code() const { return skipped_ ? kExitSkip : pass_ ? kExitPass : kExitFail; }

    void print(int id, std::ostream& out) const {
        out << "criterion " << id << ": " << (skipped_ ? "SKIP" : pass_ ? "PASS" : "FAIL");
        for (const auto& n : notes_) out << " | " << n;
        for (const auto& f : failures_) out << " | failed: " << f;
        out << '\n';
    }

private:
    bool pass_ = true;
    bool skipped_ = false;
    std::vector<std::string> notes_;
    std::vector<std::string> failures_;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Dataset ad1(std::size_t l, std::uint64_t seed, double sigma = 0.2) {
    nusvqr::SynthSpec s;
    s.l = l;
    s.seed = seed;
    s.sigma = sigma;
    return nusvqr::generate(s);
}

using Records = std::vector<nusvqr::ojson>;

const nusvqr::ojson* find_record(const Records& recs, const std::function<bool(const nusvqr::ojson&)>& pred) {
    for (const auto& r : recs) {
        if (pred(r)) return &r;
    }
    return nullptr;
}

bool same(double a, double b) { return std::abs(a - b) < 1e-9; }

// Counts adjacent increases of `v` and the largest one.
std::pair<int, double> increases(const std::vector<double>& v) {
    int n = 0;
    double worst = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[i - 1]) {
            ++n;
            worst = std::max(worst, v[i] - v[i - 1]);
        }
    }
    return {n, worst};
}

// ---------------------------------------------------------------------------

Verdict criterion1(const Context&) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double taus[] = {0.2, 0.5, 0.8};
    double worst = 0.0;
    int solved = 0;
    for (int k = 0; k < 50; ++k) {
        const std::size_t l = 2 + static_cast<std::size_t>(k % 7);
        const Dataset d = ad1(l, 100 + static_cast<std::uint64_t>(k));
        const Eigen::MatrixXd gram = nusvqr::gram_matrix(nusvqr::KernelSpec::rbf(1.0), d.features);
        FitConfig nu;
        nu.model = ModelKind::NuSVQR;
        nu.tau = taus[rng() % 3];
        nu.nu = 0.05 + 0.95 * unit(rng);
        nu.C = std::exp(std::log(1.0) + std::log(1000.0) * unit(rng));
        FitConfig eps;
        eps.model = ModelKind::EpsSVQR;
        eps.tau = nu.tau;
        eps.eps = 0.5 * unit(rng);
        eps.C = std::exp(std::log(0.1) + std::log(100.0) * unit(rng));
        for (const auto& problem : {nusvqr::build_nu_dual(d, nu, gram), nusvqr::build_eps_dual(d, eps, gram)}) {
            const auto sol = nusvqr::solve_qp(problem);
            const auto ref = oracle::enumerate_split_faces(problem);
            const double diff = std::abs(sol.objective - ref.objective);
            worst = std::max(worst, std::isfinite(diff) ? diff : 1e300);
            ++solved;
        }
    }
    v.note(std::to_string(solved) + " duals, max |objective - oracle| = " + fmt(worst));
    v.require(worst <= 1e-6, "objective gap above 1e-6");
    v.limit_runtime(elapsed(t0), 60.0);
    return v;
}

Verdict criterion2(const Context&) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    double worst_raw = 0.0;
    double worst_flat = 0.0;
    int with_width = 0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t l = k % 2 == 0 ? 50 : 200;
        const Dataset d = ad1(l, 5000 + static_cast<std::uint64_t>(k));
        FitConfig cfg;
        cfg.tau = 0.05 + 0.9 * unit(rng);
        cfg.kernel = nusvqr::KernelSpec::rbf(std::exp2(-2.0 + 4.0 * unit(rng)));
        if (k % 4 < 3) {
            cfg.model = ModelKind::NuSVQR;
            cfg.nu = 0.05 + 0.95 * unit(rng);
            cfg.C = std::exp(std::log(1000.0) * unit(rng));
        } else {
            cfg.model = ModelKind::EpsSVQR;
            cfg.eps = 0.5 * unit(rng);
            cfg.C = std::exp(std::log(0.1) + std::log(100.0) * unit(rng));
        }
        const auto m = nusvqr::fit(d, cfg);
        worst = std::max(worst, m.alpha.cwiseProduct(m.beta).maxCoeff());
        if (m.eps_width > 0.0) {
            worst_raw = std::max(worst_raw, m.diagnostics.max_alpha_beta_raw);
            ++with_width;
        } else {
            worst_flat = std::max(worst_flat, m.diagnostics.max_alpha_beta_raw);
        }
    }
    v.note("200 fits, max alpha*beta of returned models = " + fmt(worst));
    v.note("solver output before splitting common parts: " + fmt(worst_raw) + " over " + std::to_string(with_width) +
           " fits with eps > 0, " + fmt(worst_flat) + " over fits with eps = 0");
    v.require(worst <= 1e-10, "model has alpha*beta above 1e-10");
    v.limit_runtime(elapsed(t0), 300.0);
    return v;
}

Verdict criterion3(const Context& ctx) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    nusvqr::ExperimentOptions opt;
    opt.jobs = ctx.jobs;
    opt.taus = {0.2, 0.5, 0.7, 0.8};
    opt.trials = 10;
    opt.sizes = {200};
    const auto rep = nusvqr::run_experiment(1, opt);
    const double l = 200.0;
    int cells = 0;
    int err_bad = 0;
    int sv_bad = 0;
    for (double tau : opt.taus) {
        std::vector<double> eps;
        for (const auto& r : rep.records) {
            if (!same(r.at("tau").get<double>(), tau)) continue;
            const double nu = r.at("nu").get<double>();
            ++cells;
            if (r.at("frac_errors").get<double>() > nu) ++err_bad;
            if (r.at("frac_sv").get<double>() < nu - 2.0 / l) ++sv_bad;
            eps.push_back(r.at("eps_recovered").get<double>());
        }
        const auto [n_inc, worst_inc] = increases(eps);
        v.require(n_inc <= 1 && worst_inc <= 0.005,
                  "eps not non-increasing in nu at tau=" + fmt(tau) + " (" + std::to_string(n_inc) +
                      " inversions, largest " + fmt(worst_inc) + ")");
    }
    v.note(std::to_string(cells) + " cells; Error<=nu violated in " + std::to_string(err_bad) +
           ", SV>=nu-2/l violated in " + std::to_string(sv_bad));
    v.require(cells == 80, "expected 80 cells");
    v.require(err_bad == 0, "fraction of errors above nu");
    v.require(sv_bad == 0, "fraction of support vectors below nu - 2/l");

    const auto* a = find_record(rep.records, [](const nusvqr::ojson& r) {
        return same(r.at("tau").get<double>(), 0.2) && same(r.at("nu").get<double>(), 0.05);
    });
    const auto* b = find_record(rep.records, [](const nusvqr::ojson& r) {
        return same(r.at("tau").get<double>(), 0.2) && same(r.at("nu").get<double>(), 0.9);
    });
    if (a == nullptr || b == nullptr) {
        v.require(false, "anchor cells missing");
    } else {
        const double e05 = a->at("eps_recovered").get<double>();
        const double err05 = a->at("frac_errors").get<double>();
        const double e90 = b->at("eps_recovered").get<double>();
        v.note("tau=0.2: eps(nu=0.05)=" + fmt(e05) + " Error(nu=0.05)=" + fmt(err05) + " eps(nu=0.9)=" + fmt(e90));
        v.require(e05 > 0.2, "eps at nu=0.05 not above 0.2");
        v.require(e90 < 0.05, "eps at nu=0.9 not below 0.05");
        v.require(err05 >= 0.0 && err05 <= 0.05, "Error at nu=0.05 outside [0, 0.05]");
    }
    v.limit_runtime(elapsed(t0), 900.0);
    return v;
}

Verdict criterion4(const Context& ctx) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    nusvqr::ExperimentOptions opt;
    opt.jobs = ctx.jobs;
    opt.taus = {0.1, 0.3, 0.7};
    opt.sizes = {3000};
    opt.nus = {0.8};
    opt.trials = 1;
    const auto rep = nusvqr::run_experiment(2, opt);
    for (double tau : opt.taus) {
        const auto* r = find_record(rep.records, [&](const nusvqr::ojson& x) { return same(x.at("tau").get<double>(), tau); });
        if (r == nullptr) {
            v.require(false, "missing tau=" + fmt(tau));
            continue;
        }
        const double sv = r->at("frac_sv").get<double>();
        const double err = r->at("frac_errors").get<double>();
        const double ratio = r->at("ratio").is_null() ? std::numeric_limits<double>::infinity() : r->at("ratio").get<double>();
        const double ideal = (1.0 - tau) / tau;
        v.note("tau=" + fmt(tau) + ": SV=" + fmt(sv) + " Error=" + fmt(err) + " ratio=" + fmt(ratio) + " (ideal " +
               fmt(ideal) + ")");
        v.require(std::abs(sv - 0.8) <= 0.02, "SV fraction off at tau=" + fmt(tau));
        v.require(std::abs(err - 0.8) <= 0.02, "Error fraction off at tau=" + fmt(tau));
        v.require(std::abs(ratio - ideal) <= 0.25 * ideal, "ratio outside +-25% at tau=" + fmt(tau));
    }
    v.limit_runtime(elapsed(t0), 1200.0);
    return v;
}

Verdict criterion5(const Context& ctx) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    nusvqr::ExperimentOptions opt;
    opt.jobs = ctx.jobs;
    opt.taus = {0.9};
    opt.sigmas = {0.1, 0.5, 1.0};
    opt.nus = {0.4};
    opt.sizes = {500};
    const auto rep = nusvqr::run_experiment(3, opt);
    const double anchors[] = {0.02, 0.09, 0.18};
    std::vector<double> eps;
    std::vector<double> rmse;
    for (std::size_t i = 0; i < opt.sigmas.size(); ++i) {
        const double sigma = opt.sigmas[i];
        const auto* r =
            find_record(rep.records, [&](const nusvqr::ojson& x) { return same(x.at("sigma").get<double>(), sigma); });
        if (r == nullptr) {
            v.require(false, "missing sigma=" + fmt(sigma));
            return v;
        }
        eps.push_back(r->at("eps_recovered").get<double>());
        rmse.push_back(r->at("rmse").get<double>());
        v.note("sigma=" + fmt(sigma) + ": eps=" + fmt(eps.back()) + " (anchor " + fmt(anchors[i]) +
               ") RMSE=" + fmt(rmse.back()));
        v.require(std::abs(eps.back() - anchors[i]) <= 0.5 * anchors[i],
                  "eps at sigma=" + fmt(sigma) + " outside +-50% of " + fmt(anchors[i]));
    }
    v.require(eps[0] < eps[1] && eps[1] < eps[2], "eps not strictly increasing in sigma");
    v.require(rmse[0] < rmse[1] && rmse[1] < rmse[2], "RMSE not increasing in sigma");
    v.limit_runtime(elapsed(t0), 300.0);
    return v;
}

Verdict criterion6(const Context&) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t l = 100;
    const double c_prime = 200.0;
    const double taus[] = {0.2, 0.5, 0.8};
    int used = 0;
    int skipped = 0;
    double worst = 0.0;
    double worst_inverse = 0.0;
    for (std::uint64_t seed = 1; used < 20 && seed <= 200; ++seed) {
        const Dataset d = ad1(l, 9000 + seed);
        FitConfig nu;
        nu.model = ModelKind::NuSVQR;
        nu.tau = taus[seed % 3];
        nu.nu = 0.2 + 0.1 * static_cast<double>(seed % 6);
        nu.C = c_prime;
        const auto mn = nusvqr::fit(d, nu);
        if (mn.diagnostics.recovery_degenerate) {
            ++skipped;
            continue;
        }
        FitConfig eps;
        eps.model = ModelKind::EpsSVQR;
        eps.tau = nu.tau;
        eps.eps = mn.eps_width;
        eps.C = c_prime * static_cast<double>(l);
        eps.solver.max_iter = 20'000'000;  // boxes l^2 times wider than the nu fit's
        const Vector pn = nusvqr::predict(mn, d.features);
        worst = std::max(worst, (pn - nusvqr::predict(nusvqr::fit(d, eps), d.features)).cwiseAbs().maxCoeff());
        // Same refit with the box scaling matched the other way round, for the record.
        eps.C = c_prime / static_cast<double>(l);
        eps.solver = nusvqr::QpOptions{};
        worst_inverse =
            std::max(worst_inverse, (pn - nusvqr::predict(nusvqr::fit(d, eps), d.features)).cwiseAbs().maxCoeff());
        ++used;
    }
    v.note(std::to_string(used) + " non-degenerate fits (" + std::to_string(skipped) + " degenerate skipped), C'=" +
           fmt(c_prime));
    v.note("refit C=C'*l: max |pred diff| = " + fmt(worst));
    v.note("info: refit C=C'/l: max |pred diff| = " + fmt(worst_inverse));
    v.require(used == 20, "fewer than 20 non-degenerate fits");
    v.require(worst <= 1e-4, "predictions differ by more than 1e-4 with C=C'*l");
    v.limit_runtime(elapsed(t0), 120.0);
    return v;
}

Verdict criterion7(const Context& ctx) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    nusvqr::ExperimentOptions opt;
    opt.jobs = ctx.jobs;
    const auto rep = nusvqr::run_experiment(4, opt);
    std::map<std::pair<int, std::string>, std::pair<double, double>> by;  // (phase, model) -> (rmse, width)
    for (const auto& r : rep.records) {
        by[{r.at("phase").get<int>(), r.at("model").get<std::string>()}] = {r.at("rmse").get<double>(),
                                                                          r.at("eps_recovered").get<double>()};
    }
    if (by.size() != 4) {
        v.require(false, "expected 4 phase/model records");
        return v;
    }
    const auto [e1, ew1] = by[{1, "eps"}];
    const auto [n1, nw1] = by[{1, "nu"}];
    const auto [e2, ew2] = by[{2, "eps"}];
    const auto [n2, nw2] = by[{2, "nu"}];
    v.note("U(-0.1,0.1): RMSE eps=" + fmt(e1) + " nu=" + fmt(n1) + " nu width=" + fmt(nw1));
    v.note("U(-5,5): RMSE eps=" + fmt(e2) + " nu=" + fmt(n2) + " nu width=" + fmt(nw2));
    v.require(e1 < 0.02 && n1 < 0.02, "low-noise RMSE not below 0.02");
    v.require(n2 < e2, "nu model not better than eps model under high noise");
    v.require(nw2 >= 10.0 * nw1, "tube width grew less than 10x");
    v.limit_runtime(elapsed(t0), 300.0);
    return v;
}

Verdict criterion8(const Context& ctx) {
    Verdict v;
    if (ctx.servo_path.empty() || !std::filesystem::exists(ctx.servo_path)) {
        v.skip("Servo data not available; pass --servo <servo.data> or set NUSVQR_SERVO_DATA");
        return v;
    }
    const auto t0 = std::chrono::steady_clock::now();
    nusvqr::ExperimentOptions opt;
    opt.jobs = ctx.jobs;
    opt.servo_path = ctx.servo_path;
    opt.trials = 30;
    opt.taus = {0.1, 0.5, 0.9};
    const auto rep = nusvqr::run_experiment(5, opt);
    for (double tau : opt.taus) {
        std::vector<double> sp;
        std::map<long, double> at;
        for (const auto& r : rep.records) {
            if (!same(r.at("tau").get<double>(), tau)) continue;
            sp.push_back(r.at("sparsity_pct").get<double>());
            at[std::lround(100.0 * r.at("nu").get<double>())] = sp.back();
        }
        const auto [n_inc, worst_inc] = increases(sp);
        v.require(n_inc <= 1 && worst_inc <= 2.0, "sparsity not decreasing in nu at tau=" + fmt(tau));
        v.require(at.count(100) && at[100] <= 1.0, "sparsity at nu=1 not about 0 at tau=" + fmt(tau));
        std::string line = "tau=" + fmt(tau) + ":";
        for (long nu : {10L, 50L, 90L}) {
            const double expect = 100.0 - static_cast<double>(nu);
            const bool ok = at.count(nu) && std::abs(at[nu] - expect) <= 8.0;
            line += " nu=" + fmt(nu / 100.0) + "->" + (at.count(nu) ? fmt(at[nu]) : std::string("?"));
            v.require(ok, "sparsity at nu=" + fmt(nu / 100.0) + " outside +-8 of " + fmt(expect));
        }
        v.note(line + " nu=1->" + (at.count(100) ? fmt(at[100]) : std::string("?")));
    }
    v.limit_runtime(elapsed(t0), 600.0);
    return v;
}

Verdict criterion9(const Context& ctx) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    for (double tau : {0.1, 0.5, 0.9}) {
        double err_sum = 0.0;
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Dataset train = ad1(1000, nusvqr::derive_seed(90, s));
            const Dataset test = ad1(1000, nusvqr::derive_seed(90, 1000000 + s));
            nusvqr::GridSpec g;
            g.model = ModelKind::NuSVQR;
            g.tau = tau;
            g.q_exponents = {-1, 1};
            g.c_exponents = {6, 10};
            g.third = {0.5};
            g.folds = 3;
            g.seed = s + 1;
            g.jobs = ctx.jobs;
            const auto res = nusvqr::grid_search(train, g);
            const auto m = nusvqr::fit(train, res.best);
            err_sum += nusvqr::coverage_error(nusvqr::predict(m, test.features), test.response, tau);
        }
        const double e_tau = err_sum / 10.0;
        v.note("tau=" + fmt(tau) + ": mean E_tau=" + fmt(e_tau));
        v.require(e_tau <= 0.05, "E_tau above 0.05 at tau=" + fmt(tau));
    }
    v.limit_runtime(elapsed(t0), 900.0);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    int only = 0;
    Context ctx;
    ctx.jobs = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("NUSVQR_SERVO_DATA")) ctx.servo_path = env;
    app.add_option("--criterion", only, "Run a single criterion (1-9); 0 runs all")->check(CLI::Range(0, 9));
    app.add_option("--jobs", ctx.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--servo", ctx.servo_path, "Path to the UCI servo.data file");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::function<Verdict(const Context&)>> all = {criterion1, criterion2, criterion3,
                                                                     criterion4, criterion5, criterion6,
                                                                     criterion7, criterion8, criterion9};
    int worst = kExitPass;
    for (int id = 1; id <= 9; ++id) {
        if (only != 0 && id != only) continue;
        Verdict v;
        try {
            v = all[static_cast<std::size_t>(id - 1)](ctx);
        } catch (const std::exception& e) {
            v.require(false, std::string("exception: ") + e.what());
        }
        v.print(id, std::cout);
        std::cout.flush();
        const int code = v.exit_code();
        if (code == kExitFail || (code == kExitSkip && worst == kExitPass)) worst = code;
    }
    return worst;
}
