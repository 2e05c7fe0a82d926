// nusvqr command-line tool.
//
// Exit codes: 0 success, 2 invalid input or arguments, 3 solver did not converge.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/experiment.hpp"
#include "nusvqr/model_io.hpp"
#include "nusvqr/svqr.hpp"
#include "nusvqr/synth.hpp"

namespace {

using namespace nusvqr;

constexpr int kExitInput = 2;
constexpr int kExitNoConvergence = 3;

struct SolverArgs {
    double tol = QpOptions{}.tol;
    long max_iter = QpOptions{}.max_iter;

    void attach(CLI::App* app) {
        app->add_option("--tol", tol, "Solver KKT tolerance")->capture_default_str();
        app->add_option("--max-iter", max_iter, "Solver iteration limit")->capture_default_str();
    }
    [[nodiscard]] QpOptions options() const { return {tol, max_iter}; }
};

struct GenerateArgs {
    std::string dataset = "AD1";
    std::size_t l = 200;
    double sigma = 0.2;
    double a = -0.1;
    double b = 0.1;
    std::uint64_t seed = 1;
    std::vector<double> taus;
    std::string out = "-";
};

struct FitArgs {
    std::string data;
    std::string target = "y";
    std::string model = "nu";
    double tau = 0.5;
    double C = 1.0;
    double nu = 0.5;
    double eps = 0.0;
    double q = 1.0;
    std::string kernel = "rbf";
    bool normalize = false;
    std::string out = "model.json";
    SolverArgs solver;
};

struct PredictArgs {
    std::string model;
    std::string data;
    std::string out = "-";
};

struct GridArgs {
    std::string data;
    std::string target = "y";
    std::string model = "nu";
    double tau = 0.5;
    std::vector<int> exponents = default_grid_exponents();
    std::vector<int> q_exponents;
    std::vector<int> c_exponents;
    std::vector<double> nu_grid;
    std::vector<double> eps_grid;
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
    bool normalize = false;
    std::string out = "gridsearch_out";
    std::string save_model;
    SolverArgs solver;
};

struct ExperimentArgs {
    int id = 1;
    std::uint64_t seed = 1;
    std::size_t trials = 0;
    unsigned jobs = 1;
    std::string out;
    std::vector<double> taus;
    std::vector<double> nus;
    std::vector<double> sigmas;
    std::vector<std::size_t> sizes;
    double C = 0.0;
    double q = 0.0;
    std::string servo;
    bool normalize = false;
    std::size_t test_points = 1000;
    SolverArgs solver;
};

template <class F>
void with_output(const std::string& path, F&& write) {
    if (path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    write(out);
}

void cmd_generate(const GenerateArgs& g) {
    SynthSpec s;
    s.dataset = synth_kind_from_string(g.dataset);
    s.l = g.l;
    s.sigma = g.sigma;
    s.a = g.a;
    s.b = g.b;
    s.seed = g.seed;
    const Dataset d = generate(s);
    std::vector<std::string> header{"x", "y"};
    std::vector<Vector> truth;
    for (double t : g.taus) {
        header.push_back("q_" + format_double(t));
        truth.push_back(true_quantiles(s, t, d.features));
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(d.size());
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.size()); ++i) {
        std::vector<double> row{d.features(i, 0), d.response(i)};
        for (const auto& q : truth) row.push_back(q(i));
        rows.push_back(std::move(row));
    }
    with_output(g.out, [&](std::ostream& os) { write_csv(os, header, rows); });
}

FitConfig make_config(const std::string& model, double tau, double C, double nu, double eps, const std::string& kernel,
                      double q, const QpOptions& solver) {
    FitConfig cfg;
    cfg.model = model_kind_from_string(model);
    cfg.tau = tau;
    cfg.C = C;
    cfg.nu = nu;
    cfg.eps = eps;
    cfg.kernel = kernel_family_from_string(kernel) == KernelFamily::Linear ? KernelSpec::linear() : KernelSpec::rbf(q);
    cfg.solver = solver;
    cfg.validate();
    return cfg;
}

ModelFile fit_file(Dataset data, const FitConfig& cfg, bool normalize) {
    ModelFile f;
    f.feature_names = data.feature_names;
    if (normalize) {
        f.scaling = MinMaxScaling::fit(data.features);
        data.features = f.scaling->apply(data.features);
    }
    f.model = fit(data, cfg);
    return f;
}

void cmd_fit(const FitArgs& a) {
    const FitConfig cfg = make_config(a.model, a.tau, a.C, a.nu, a.eps, a.kernel, a.q, a.solver.options());
    const Dataset data = table_to_dataset(read_csv(a.data), a.target);
    const ModelFile f = fit_file(data, cfg, a.normalize);
    save_model(f, a.out);
    const auto& m = f.model;
    std::cout << "model " << to_string(cfg.model) << " tau=" << cfg.tau << " l=" << m.size()
              << " support_vectors=" << m.sv_indices.size() << " eps=" << format_double(m.eps_width)
              << " bias=" << format_double(m.bias) << " objective=" << format_double(m.diagnostics.objective)
              << " iterations=" << m.diagnostics.iterations << " solver=" << m.diagnostics.method
              << (m.diagnostics.recovery_degenerate ? " (degenerate recovery)" : "") << "\n";
}

void cmd_predict(const PredictArgs& a) {
    const ModelFile f = load_model(a.model);
    const CsvTable table = read_csv(a.data);
    const FeatureMatrix x = table_features(table, f.feature_names);
    const Vector p = predict(f, x);
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) rows.push_back({p(i)});
    with_output(a.out, [&](std::ostream& os) { write_csv(os, {"prediction"}, rows); });
}

void cmd_gridsearch(const GridArgs& a) {
    GridSpec g;
    g.model = model_kind_from_string(a.model);
    g.tau = a.tau;
    g.q_exponents = a.q_exponents.empty() ? a.exponents : a.q_exponents;
    g.c_exponents = a.c_exponents.empty() ? a.exponents : a.c_exponents;
    g.third = g.model == ModelKind::NuSVQR ? a.nu_grid : a.eps_grid;
    g.folds = a.folds;
    g.seed = a.seed;
    g.solver = a.solver.options();
    g.jobs = a.jobs;
    Dataset data = table_to_dataset(read_csv(a.data), a.target);
    Dataset scaled = data;
    if (a.normalize) scaled.features = MinMaxScaling::fit(data.features).apply(data.features);
    const GridResult res = grid_search(scaled, g);
    Report r = grid_report(res, g, a.data);
    r.metadata["preprocessing"] = a.normalize ? "minmax (fitted on the full input)" : "none";
    write_report(r, a.out);
    std::cout << "best q=" << format_double(res.best.kernel.q) << " C=" << format_double(res.best.C);
    if (g.model == ModelKind::NuSVQR) std::cout << " nu=" << format_double(res.best.nu);
    if (g.model == ModelKind::EpsSVQR) std::cout << " eps=" << format_double(res.best.eps);
    std::cout << " cv_loss=" << format_double(res.best_loss) << "\n";
    if (!a.save_model.empty()) save_model(fit_file(data, res.best, a.normalize), a.save_model);
}

void cmd_experiment(const ExperimentArgs& a) {
    ExperimentOptions o;
    o.seed = a.seed;
    if (a.trials > 0) o.trials = a.trials;
    o.jobs = a.jobs;
    o.solver = a.solver.options();
    if (a.C > 0.0) o.C = a.C;
    if (a.q > 0.0) o.q = a.q;
    o.taus = a.taus;
    o.nus = a.nus;
    o.sigmas = a.sigmas;
    o.sizes = a.sizes;
    o.servo_path = a.servo;
    o.normalize = a.normalize;
    o.test_points = a.test_points;
    const Report r = run_experiment(a.id, o);
    const std::string dir = a.out.empty() ? "exp" + std::to_string(a.id) + "_out" : a.out;
    write_report(r, dir);
    for (const auto& t : r.tables) {
        if (!t.name.empty()) continue;
        for (std::size_t c = 0; c < t.header.size(); ++c) std::cout << (c ? "," : "") << t.header[c];
        std::cout << "\n";
        for (const auto& row : t.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) std::cout << (c ? "," : "") << row[c];
            std::cout << "\n";
        }
    }
    std::cout << "report written to " << dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel quantile regression with nu-SVQR, eps-SVQR and standard SVQR"};
    app.set_version_flag("--version", nusvqr::kVersion);
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic AD1/AD2 sample as CSV (x,y[,q_tau...])");
    g->add_option("--dataset", gen.dataset, "AD1 (Gaussian noise) or AD2 (uniform noise)")->capture_default_str();
    g->add_option("--l", gen.l, "Number of samples")->capture_default_str();
    g->add_option("--sigma", gen.sigma, "AD1 noise standard deviation")->capture_default_str();
    g->add_option("--a", gen.a, "AD2 noise lower bound")->capture_default_str();
    g->add_option("--b", gen.b, "AD2 noise upper bound")->capture_default_str();
    g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    g->add_option("--tau", gen.taus, "Add true-quantile columns q_<tau>")->delimiter(',');
    g->add_option("--out", gen.out, "Output CSV path, '-' for stdout")->capture_default_str();

    FitArgs fa;
    auto* f = app.add_subcommand("fit", "Train a model on a CSV file and save it as JSON");
    f->add_option("--data", fa.data, "Training CSV with header")->required();
    f->add_option("--target", fa.target, "Response column")->capture_default_str();
    f->add_option("--model", fa.model, "nu, eps or standard")->capture_default_str();
    f->add_option("--tau", fa.tau, "Quantile level in (0, 1)")->capture_default_str();
    f->add_option("--c", fa.C, "Regularization constant C")->capture_default_str();
    f->add_option("--nu", fa.nu, "nu in (0, 1] (nu model)")->capture_default_str();
    f->add_option("--eps", fa.eps, "Tube width (eps model)")->capture_default_str();
    f->add_option("--q", fa.q, "RBF width: k(x, x') = exp(-|x - x'|^2 / q)")->capture_default_str();
    f->add_option("--kernel", fa.kernel, "rbf or linear")->capture_default_str();
    f->add_flag("--normalize", fa.normalize, "Min-max scale features before fitting");
    f->add_option("--out", fa.out, "Model file path")->capture_default_str();
    fa.solver.attach(f);

    PredictArgs pa;
    auto* p = app.add_subcommand("predict", "Evaluate a saved model on a CSV file");
    p->add_option("--model", pa.model, "Model file")->required();
    p->add_option("--data", pa.data, "CSV holding the model's feature columns")->required();
    p->add_option("--out", pa.out, "Output CSV path, '-' for stdout")->capture_default_str();

    GridArgs ga;
    auto* gs = app.add_subcommand("gridsearch", "Cross-validated search over q, C and nu/eps");
    gs->add_option("--data", ga.data, "Training CSV with header")->required();
    gs->add_option("--target", ga.target, "Response column")->capture_default_str();
    gs->add_option("--model", ga.model, "nu, eps or standard")->capture_default_str();
    gs->add_option("--tau", ga.tau, "Quantile level")->capture_default_str();
    gs->add_option("--grid-exponents", ga.exponents, "Base-2 exponents for q and C")->delimiter(',');
    gs->add_option("--q-exponents", ga.q_exponents, "Base-2 exponents for q only")->delimiter(',');
    gs->add_option("--c-exponents", ga.c_exponents, "Base-2 exponents for C only")->delimiter(',');
    gs->add_option("--nu-grid", ga.nu_grid, "nu values (default 0.1,0.3,0.5,0.7,0.9)")->delimiter(',');
    gs->add_option("--eps-grid", ga.eps_grid, "eps values (default 0,0.05,0.1,0.2,0.4)")->delimiter(',');
    gs->add_option("--folds", ga.folds, "Cross-validation folds")->capture_default_str();
    gs->add_option("--seed", ga.seed, "Fold assignment seed")->capture_default_str();
    gs->add_option("--jobs", ga.jobs, "Worker threads")->capture_default_str();
    gs->add_flag("--normalize", ga.normalize, "Min-max scale features");
    gs->add_option("--out", ga.out, "Report directory")->capture_default_str();
    gs->add_option("--save-model", ga.save_model, "Refit the best cell on all data and save it here");
    ga.solver.attach(gs);

    ExperimentArgs ea;
    auto* e = app.add_subcommand("experiment", "Run a numbered experiment and write its report");
    e->add_option("id", ea.id, "Experiment 1-5")->required()->check(CLI::Range(1, 5));
    e->add_option("--seed", ea.seed, "Base seed")->capture_default_str();
    e->add_option("--trials", ea.trials, "Repetitions per cell (default depends on the experiment)");
    e->add_option("--jobs", ea.jobs, "Worker threads")->capture_default_str();
    e->add_option("--out", ea.out, "Report directory (default exp<id>_out)");
    e->add_option("--tau", ea.taus, "Override the quantile levels")->delimiter(',');
    e->add_option("--nu", ea.nus, "Override the nu values")->delimiter(',');
    e->add_option("--sigma", ea.sigmas, "Override the noise level(s); AD2 half-widths for experiment 4")
        ->delimiter(',');
    e->add_option("--sizes", ea.sizes, "Override the training-set size(s)")->delimiter(',');
    e->add_option("--c", ea.C, "Override C");
    e->add_option("--q", ea.q, "Override the RBF width");
    e->add_option("--servo", ea.servo, "Path to the UCI servo.data file (experiment 5)");
    e->add_flag("--normalize", ea.normalize, "Min-max scale Servo features per split");
    e->add_option("--test-points", ea.test_points, "Fresh test points per trial")->capture_default_str();
    ea.solver.attach(e);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*g) cmd_generate(gen);
        if (*f) cmd_fit(fa);
        if (*p) cmd_predict(pa);
        if (*gs) cmd_gridsearch(ga);
        if (*e) cmd_experiment(ea);
    } catch (const nusvqr::NonConvergenceError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitNoConvergence;
    } catch (const nusvqr::InputError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInput;
    } catch (const nusvqr::InfeasibleError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInput;
    }
    return 0;
}
