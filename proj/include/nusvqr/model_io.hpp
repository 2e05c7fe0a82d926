#pragma once

// JSON model files. Doubles are written in shortest round-trip form, so a
// saved model reproduces in-process predictions exactly.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nusvqr/dataset.hpp"
#include "nusvqr/error.hpp"
#include "nusvqr/svqr.hpp"

namespace nusvqr {

inline constexpr const char* kModelFormat = "nusvqr-model";
inline constexpr int kModelVersion = 1;

/// A trained model plus the input preprocessing that was applied before fitting.
struct ModelFile {
    TrainedModel model;
    std::vector<std::string> feature_names;
    std::optional<MinMaxScaling> scaling;
};

namespace detail {

using nlohmann::json;

inline json to_json_vec(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vec_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json_row(const Eigen::RowVectorXd& v) {
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline const json& field(const json& j, const char* key) {
    if (!j.contains(key)) throw InputError(std::string("model file is missing field '") + key + "'");
    return j.at(key);
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelFile& f) {
    using nlohmann::json;
    const TrainedModel& m = f.model;
    json cfg = {{"model", to_string(m.config.model)},
                {"tau", m.config.tau},
                {"C", m.config.C},
                {"nu", m.config.nu},
                {"eps", m.config.eps},
                {"kernel", {{"family", to_string(m.config.kernel.family)}, {"q", m.config.kernel.q}}},
                {"tol", m.config.solver.tol},
                {"max_iter", m.config.solver.max_iter}};
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.train_features.rows(); ++r) rows.push_back(detail::to_json_row(m.train_features.row(r)));
    json pre = {{"scaling", "none"}};
    if (f.scaling) {
        pre = {{"scaling", "minmax"}, {"lo", detail::to_json_row(f.scaling->lo)}, {"span", detail::to_json_row(f.scaling->span)}};
    }
    const auto& d = m.diagnostics;
    return {{"format", kModelFormat},
            {"version", kModelVersion},
            {"config", cfg},
            {"bias", m.bias},
            {"eps_width", m.eps_width},
            {"coeffs", detail::to_json_vec(m.coeffs)},
            {"alpha", detail::to_json_vec(m.alpha)},
            {"beta", detail::to_json_vec(m.beta)},
            {"sv_indices", m.sv_indices},
            {"boundary_upper", m.boundary_upper},
            {"boundary_lower", m.boundary_lower},
            {"feature_names", f.feature_names},
            {"train_features", rows},
            {"preprocessing", pre},
            {"diagnostics",
             {{"objective", d.objective},
              {"eq_multiplier", d.eq_multiplier},
              {"ineq_multiplier", d.ineq_multiplier},
              {"kkt_residual", d.kkt_residual},
              {"iterations", d.iterations},
              {"method", d.method},
              {"recovery_degenerate", d.recovery_degenerate},
              {"max_alpha_beta_raw", d.max_alpha_beta_raw}}}};
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    using detail::field;
    try {
        if (field(j, "format").get<std::string>() != kModelFormat) throw InputError("not a model file");
        if (field(j, "version").get<int>() != kModelVersion) throw InputError("unsupported model file version");
        ModelFile f;
        TrainedModel& m = f.model;
        const auto& cfg = field(j, "config");
        m.config.model = model_kind_from_string(field(cfg, "model").get<std::string>());
        m.config.tau = field(cfg, "tau").get<double>();
        m.config.C = field(cfg, "C").get<double>();
        m.config.nu = field(cfg, "nu").get<double>();
        m.config.eps = field(cfg, "eps").get<double>();
        const auto& k = field(cfg, "kernel");
        m.config.kernel.family = kernel_family_from_string(field(k, "family").get<std::string>());
        m.config.kernel.q = field(k, "q").get<double>();
        m.config.solver.tol = field(cfg, "tol").get<double>();
        m.config.solver.max_iter = field(cfg, "max_iter").get<long>();
        m.config.validate();

        m.bias = field(j, "bias").get<double>();
        m.eps_width = field(j, "eps_width").get<double>();
        m.coeffs = detail::vec_from_json(field(j, "coeffs"));
        m.alpha = detail::vec_from_json(field(j, "alpha"));
        m.beta = detail::vec_from_json(field(j, "beta"));
        m.sv_indices = field(j, "sv_indices").get<std::vector<std::size_t>>();
        m.boundary_upper = field(j, "boundary_upper").get<std::vector<std::size_t>>();
        m.boundary_lower = field(j, "boundary_lower").get<std::vector<std::size_t>>();
        f.feature_names = field(j, "feature_names").get<std::vector<std::string>>();

        const auto& rows = field(j, "train_features");
        const auto l = static_cast<Eigen::Index>(rows.size());
        if (l != m.coeffs.size() || m.alpha.size() != l || m.beta.size() != l) {
            throw InputError("model file: coefficient and training-row counts disagree");
        }
        const auto n = l > 0 ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
        m.train_features.resize(l, n);
        for (Eigen::Index r = 0; r < l; ++r) {
            const auto row = rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != n) throw InputError("model file: ragged training features");
            for (Eigen::Index c = 0; c < n; ++c) m.train_features(r, c) = row[static_cast<std::size_t>(c)];
        }
        for (auto i : m.sv_indices) {
            if (static_cast<Eigen::Index>(i) >= l) throw InputError("model file: support-vector index out of range");
        }

        const auto& pre = field(j, "preprocessing");
        const auto kind = field(pre, "scaling").get<std::string>();
        if (kind == "minmax") {
            MinMaxScaling s;
            const auto lo = field(pre, "lo").get<std::vector<double>>();
            const auto span = field(pre, "span").get<std::vector<double>>();
            s.lo = Eigen::Map<const Eigen::RowVectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
            s.span = Eigen::Map<const Eigen::RowVectorXd>(span.data(), static_cast<Eigen::Index>(span.size()));
            f.scaling = s;
        } else if (kind != "none") {
            throw InputError("model file: unknown preprocessing '" + kind + "'");
        }

        if (j.contains("diagnostics")) {
            const auto& d = j.at("diagnostics");
            auto& md = m.diagnostics;
            md.objective = d.value("objective", 0.0);
            md.eq_multiplier = d.value("eq_multiplier", 0.0);
            md.ineq_multiplier = d.value("ineq_multiplier", 0.0);
            md.kkt_residual = d.value("kkt_residual", 0.0);
            md.iterations = d.value("iterations", 0L);
            md.method = d.value("method", std::string{});
            md.recovery_degenerate = d.value("recovery_degenerate", false);
            md.max_alpha_beta_raw = d.value("max_alpha_beta_raw", 0.0);
        }
        m.diagnostics.n_interior_alpha = m.boundary_upper.size();
        m.diagnostics.n_interior_beta = m.boundary_lower.size();
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const ModelFile& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << model_to_json(f).dump(1) << '\n';
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("'" + path + "' is not valid JSON: " + e.what());
    }
    return model_from_json(j);
}

/// Predictions for raw (unscaled) feature rows.
inline Vector predict(const ModelFile& f, const FeatureMatrix& x) {
    return f.scaling ? predict(f.model, f.scaling->apply(x)) : predict(f.model, x);
}

}  // namespace nusvqr
