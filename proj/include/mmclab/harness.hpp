#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mmclab/covariance.hpp"
#include "mmclab/datagen.hpp"
#include "mmclab/errors.hpp"
#include "mmclab/evaluation.hpp"
#include "mmclab/numerics.hpp"
#include "mmclab/theory.hpp"
#include "mmclab/training.hpp"

namespace mmclab {

enum class ExperimentKind { Dm1Robustness, Dm2Robustness, CaptionSweepDm1, CaptionSweepDm2, MethodCompare, VerifyTheorems };
enum class Method { MmclClosed, MmclGd, Sl, SupCon };
enum class CovarianceSource { Empirical, Population };

inline const std::vector<std::pair<ExperimentKind, std::string>>& experiment_kind_names()
{
    static const std::vector<std::pair<ExperimentKind, std::string>> names{
        {ExperimentKind::Dm1Robustness, "dm1-robustness"},     {ExperimentKind::Dm2Robustness, "dm2-robustness"},
        {ExperimentKind::CaptionSweepDm1, "caption-sweep-dm1"}, {ExperimentKind::CaptionSweepDm2, "caption-sweep-dm2"},
        {ExperimentKind::MethodCompare, "method-compare"},     {ExperimentKind::VerifyTheorems, "verify-theorems"}};
    return names;
}

inline const std::vector<std::pair<Method, std::string>>& method_names()
{
    static const std::vector<std::pair<Method, std::string>> names{
        {Method::MmclClosed, "mmcl-closed"}, {Method::MmclGd, "mmcl-gd"}, {Method::Sl, "sl"}, {Method::SupCon, "supcon"}};
    return names;
}

inline std::string to_string(ExperimentKind k)
{
    for (const auto& [kind, name] : experiment_kind_names())
        if (kind == k) return name;
    return "?";
}

inline std::string to_string(Method m)
{
    for (const auto& [method, name] : method_names())
        if (method == m) return name;
    return "?";
}

/// Suites accepted by `verify --suite`.
inline const std::vector<std::string>& verify_suite_names()
{
    static const std::vector<std::string> names{"all", "dm1", "dm2", "captions", "supcon", "id"};
    return names;
}

struct ModalitySpec {
    Index dim = 2;
    double noise_sigma = 0.0;
    DictionaryKind dictionary = DictionaryKind::IdentityEmbed;
};

/// Keys a sweep grid may vary; they match the parameter columns of the CSV.
inline const std::vector<std::string>& grid_keys()
{
    static const std::vector<std::string> keys{"n_train", "d_I",       "d_T",      "p_dim",  "rho",
                                               "sigma_core", "sigma_spu", "p_spu", "m",     "alpha",
                                               "beta",    "pi_core",   "pi_spu",   "pi"};
    return keys;
}

struct ExperimentConfig {
    std::string name; ///< free label, copied into the experiment column when set
    ExperimentKind kind = ExperimentKind::MethodCompare;
    DataModelParams model = DataModel1Params{};
    ModalitySpec image;
    ModalitySpec text;
    bool masked = false;
    double pi_core = 1.0;
    double pi_spu = 1.0;
    double pi = 1.0;
    std::vector<Method> methods{Method::MmclClosed};

    Index n_train = 1000;
    Index p_dim = 0; ///< 0 means the latent dimension l
    double rho = 1.0;
    CovarianceSource covariance = CovarianceSource::Empirical;
    MaskExponent mask_exponent = MaskExponent::Linear;
    EvalMode train_mode = EvalMode::Auto; ///< model 2: enumerate the train split when under the cap
    int probe_restarts = 0;
    GdOptions mmcl_gd = GdOptions::mmcl_defaults();
    GdOptions sl = GdOptions::sl_defaults();
    GdOptions probe = GdOptions::sl_defaults();

    Index n_eval = 10000;
    std::vector<Split> splits{Split::True, Split::Train};
    EvalMode eval_mode = EvalMode::Auto;
    std::optional<double> eval_noise_sigma; ///< defaults to the image training noise

    std::vector<std::pair<std::string, std::vector<double>>> grid;
    std::uint64_t root_seed = 0;
    int trials = 1;
    int threads = 1;
    std::string suite = "all";
    double tolerance = kDefaultTolerance;
};

/// Fully resolved parameters of one grid cell.
struct CellParams {
    Index n_train = 0;
    Index d_I = 0;
    Index d_T = 0;
    Index p_dim = 0;
    double rho = 1.0;
    DataModelParams model;
    bool masked = false;
    double pi_core = 1.0;
    double pi_spu = 1.0;
    double pi = 1.0;
};

struct RunRecord {
    std::string run_id;
    std::string experiment;
    std::uint64_t seed = 0;
    std::string method;
    CellParams cell;
    std::string split;
    std::string group;
    std::string metric;
    double value = std::nan("");
    std::optional<double> prediction;
    std::string comparator;
    std::optional<bool> pass;
    double wall_time = 0.0; ///< seconds for the whole trial; not written to CSV
    std::size_t cell_index = 0;
    int trial = 0;
};

// ---------------------------------------------------------------------------
// Config parsing and validation

namespace detail {

class FieldErrors {
public:
    void add(const std::string& field, const std::string& msg) { errors_.push_back(field + ": " + msg); }
    bool empty() const { return errors_.empty(); }
    void raise() const
    {
        if (errors_.empty()) return;
        std::string msg = "invalid experiment config (" + std::to_string(errors_.size()) + " problem" +
                          (errors_.size() == 1 ? "" : "s") + ")";
        for (const auto& e : errors_) msg += "\n  - " + e;
        throw ValidationError(msg);
    }

private:
    std::vector<std::string> errors_;
};

inline void check_keys(const nlohmann::json& obj, const std::string& where, const std::vector<std::string>& allowed,
                       FieldErrors& errs)
{
    if (!obj.is_object()) {
        errs.add(where.empty() ? "<root>" : where, "must be an object");
        return;
    }
    for (const auto& [key, value] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            errs.add(where.empty() ? key : where + "." + key, "unknown key");
}

template <typename T>
void read(const nlohmann::json& obj, const char* key, const std::string& where, T& out, FieldErrors& errs)
{
    if (!obj.is_object() || !obj.contains(key)) return;
    const std::string field = where.empty() ? key : where + "." + key;
    try {
        out = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        errs.add(field, "wrong type");
    }
}

inline void read_gd(const nlohmann::json& obj, const char* key, const std::string& where, GdOptions& out,
                    FieldErrors& errs)
{
    if (!obj.contains(key)) return;
    const std::string field = where + "." + key;
    const auto& sub = obj.at(key);
    check_keys(sub, field, {"lr", "epochs", "init_scale", "tolerance"}, errs);
    if (!sub.is_object()) return;
    read(sub, "lr", field, out.lr, errs);
    read(sub, "epochs", field, out.epochs, errs);
    read(sub, "init_scale", field, out.init_scale, errs);
    read(sub, "tolerance", field, out.tolerance, errs);
    if (!(out.lr > 0.0)) errs.add(field + ".lr", "must be > 0");
    if (out.epochs < 1) errs.add(field + ".epochs", "must be >= 1");
    if (!(out.init_scale >= 0.0)) errs.add(field + ".init_scale", "must be >= 0");
}

inline void read_modality(const nlohmann::json& obj, const char* key, ModalitySpec& out, FieldErrors& errs)
{
    if (!obj.contains(key)) return;
    const std::string field = key;
    const auto& sub = obj.at(key);
    check_keys(sub, field, {"dim", "noise_sigma", "dictionary"}, errs);
    if (!sub.is_object()) return;
    read(sub, "dim", field, out.dim, errs);
    read(sub, "noise_sigma", field, out.noise_sigma, errs);
    std::string dict = to_string(out.dictionary);
    read(sub, "dictionary", field, dict, errs);
    if (dict == "identity") out.dictionary = DictionaryKind::IdentityEmbed;
    else if (dict == "random-orthonormal") out.dictionary = DictionaryKind::RandomOrthonormal;
    else errs.add(field + ".dictionary", "must be identity or random-orthonormal");
    if (!(out.noise_sigma >= 0.0)) errs.add(field + ".noise_sigma", "must be >= 0");
}

inline std::optional<EvalMode> parse_mode(const std::string& s)
{
    if (s == "auto") return EvalMode::Auto;
    if (s == "sampled") return EvalMode::Sampled;
    if (s == "exhaustive") return EvalMode::Exhaustive;
    return std::nullopt;
}

} // namespace detail

inline CellParams base_cell(const ExperimentConfig& cfg)
{
    CellParams c;
    c.n_train = cfg.n_train;
    c.d_I = cfg.image.dim;
    c.d_T = cfg.text.dim;
    c.p_dim = cfg.p_dim;
    c.rho = cfg.rho;
    c.model = cfg.model;
    c.masked = cfg.masked;
    c.pi_core = cfg.pi_core;
    c.pi_spu = cfg.pi_spu;
    c.pi = cfg.pi;
    return c;
}

/// Applies one grid override; model-specific keys on the wrong model are rejected.
inline void apply_grid_value(CellParams& c, const std::string& key, double v)
{
    auto* p1 = std::get_if<DataModel1Params>(&c.model);
    auto* p2 = std::get_if<DataModel2Params>(&c.model);
    auto need = [&](bool ok) {
        if (!ok) throw ConfigurationError("grid key " + key + " does not apply to this data model");
    };
    if (key == "n_train") c.n_train = static_cast<Index>(v);
    else if (key == "d_I") c.d_I = static_cast<Index>(v);
    else if (key == "d_T") c.d_T = static_cast<Index>(v);
    else if (key == "p_dim") c.p_dim = static_cast<Index>(v);
    else if (key == "rho") c.rho = v;
    else if (key == "sigma_core") { need(p1); p1->sigma_core = v; }
    else if (key == "sigma_spu") { need(p1); p1->sigma_spu = v; }
    else if (key == "p_spu") { need(p1); p1->p_spu = v; }
    else if (key == "m") { need(p2); p2->m = static_cast<int>(v); }
    else if (key == "alpha") { need(p2); p2->alpha = v; }
    else if (key == "beta") { need(p2); p2->beta = v; }
    else if (key == "pi_core") { need(p1); c.pi_core = v; c.masked = true; }
    else if (key == "pi_spu") { need(p1); c.pi_spu = v; c.masked = true; }
    else if (key == "pi") { need(p2); c.pi = v; c.masked = true; }
    else throw ConfigurationError("unknown grid key " + key);
}

/// Number of grid cells (1 without a grid).
inline std::size_t cell_count(const ExperimentConfig& cfg)
{
    std::size_t n = 1;
    for (const auto& [key, values] : cfg.grid) n *= values.size();
    return n;
}

/// Cell `index` of the cartesian grid; the first grid key varies slowest.
inline CellParams make_cell(const ExperimentConfig& cfg, std::size_t index)
{
    CellParams c = base_cell(cfg);
    std::size_t stride = cell_count(cfg);
    for (const auto& [key, values] : cfg.grid) {
        stride /= values.size();
        apply_grid_value(c, key, values[(index / stride) % values.size()]);
    }
    if (c.p_dim == 0) c.p_dim = latent_dim(c.model);
    return c;
}

namespace detail {

inline void validate_cell(const CellParams& c, const std::string& where, FieldErrors& errs)
{
    try {
        std::visit([](const auto& p) { p.validate(); }, c.model);
    } catch (const Error& e) {
        errs.add(where + "model", e.what());
    }
    const Index l = latent_dim(c.model);
    if (c.d_I < l) errs.add(where + "image.dim", "must be >= latent dim " + std::to_string(l));
    if (c.d_T < l) errs.add(where + "text.dim", "must be >= latent dim " + std::to_string(l));
    if (c.n_train < 2) errs.add(where + "training.n_train", "must be >= 2");
    if (c.p_dim < 1 || c.p_dim > std::min(c.d_I, c.d_T)) errs.add(where + "training.p_dim", "must lie in [1, min(d_I, d_T)]");
    if (!(c.rho > 0.0)) errs.add(where + "training.rho", "must be > 0");
    auto unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!unit(c.pi_core)) errs.add(where + "mask.pi_core", "must lie in [0, 1]");
    if (!unit(c.pi_spu)) errs.add(where + "mask.pi_spu", "must lie in [0, 1]");
    if (!unit(c.pi)) errs.add(where + "mask.pi", "must lie in [0, 1]");
}

} // namespace detail

/// Checks every cell; throws ValidationError listing all offending fields.
inline void validate(const ExperimentConfig& cfg)
{
    detail::FieldErrors errs;
    if (cfg.trials < 1) errs.add("trials", "must be >= 1");
    if (cfg.threads < 1) errs.add("threads", "must be >= 1");
    if (!(cfg.tolerance >= 0.0)) errs.add("tolerance", "must be >= 0");
    if (cfg.kind == ExperimentKind::VerifyTheorems) {
        const auto& names = verify_suite_names();
        if (std::find(names.begin(), names.end(), cfg.suite) == names.end()) errs.add("suite", "unknown suite " + cfg.suite);
        errs.raise();
        return;
    }
    const bool dm1 = std::holds_alternative<DataModel1Params>(cfg.model);
    if ((cfg.kind == ExperimentKind::Dm1Robustness || cfg.kind == ExperimentKind::CaptionSweepDm1) && !dm1)
        errs.add("model.kind", to_string(cfg.kind) + " needs model kind dm1");
    if ((cfg.kind == ExperimentKind::Dm2Robustness || cfg.kind == ExperimentKind::CaptionSweepDm2) && dm1)
        errs.add("model.kind", to_string(cfg.kind) + " needs model kind dm2");
    if (cfg.methods.empty()) errs.add("methods", "must list at least one method");
    if (cfg.n_eval < 1) errs.add("evaluation.n_eval", "must be >= 1");
    if (cfg.splits.empty()) errs.add("evaluation.splits", "must list at least one split");
    if (cfg.eval_noise_sigma && !(*cfg.eval_noise_sigma >= 0.0)) errs.add("evaluation.noise_sigma", "must be >= 0");
    if (cfg.probe_restarts < 0) errs.add("training.probe_restarts", "must be >= 0");
    if (cfg.eval_mode == EvalMode::Exhaustive && dm1) errs.add("evaluation.mode", "exhaustive needs model kind dm2");
    if (cfg.train_mode == EvalMode::Exhaustive && dm1) errs.add("training.train_mode", "exhaustive needs model kind dm2");
    for (const auto& [key, values] : cfg.grid) {
        if (std::find(grid_keys().begin(), grid_keys().end(), key) == grid_keys().end())
            errs.add("grid." + key, "unknown grid key");
        else if (values.empty())
            errs.add("grid." + key, "must list at least one value");
    }
    errs.raise();
    for (std::size_t i = 0; i < cell_count(cfg); ++i) {
        CellParams cell;
        try {
            cell = make_cell(cfg, i);
        } catch (const Error& e) {
            errs.add("grid", e.what());
            break;
        }
        detail::validate_cell(cell, cfg.grid.empty() ? "" : "cell " + std::to_string(i) + ": ", errs);
    }
    errs.raise();
}

/// Parses a JSON experiment document (comments allowed) and validates it.
inline ExperimentConfig parse_config(const std::string& text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    detail::FieldErrors errs;
    detail::check_keys(doc, "",
                       {"name", "experiment", "model", "image", "text", "mask", "methods", "training", "evaluation", "grid",
                        "root_seed", "trials", "threads", "suite", "tolerance"},
                       errs);
    if (!doc.is_object()) errs.raise();

    ExperimentConfig cfg;
    detail::read(doc, "name", "", cfg.name, errs);
    std::string kind;
    detail::read(doc, "experiment", "", kind, errs);
    if (kind.empty()) {
        errs.add("experiment", "is required");
    } else {
        bool found = false;
        for (const auto& [k, n] : experiment_kind_names())
            if (n == kind) {
                cfg.kind = k;
                found = true;
            }
        if (!found) errs.add("experiment", "unknown kind " + kind);
    }
    detail::read(doc, "root_seed", "", cfg.root_seed, errs);
    detail::read(doc, "trials", "", cfg.trials, errs);
    detail::read(doc, "threads", "", cfg.threads, errs);
    detail::read(doc, "suite", "", cfg.suite, errs);
    detail::read(doc, "tolerance", "", cfg.tolerance, errs);

    std::string model_kind = "dm1";
    if (doc.contains("model")) {
        const auto& m = doc.at("model");
        detail::read(m, "kind", "model", model_kind, errs);
        if (model_kind == "dm1") {
            detail::check_keys(m, "model", {"kind", "sigma_core", "sigma_spu", "p_spu"}, errs);
            DataModel1Params p;
            detail::read(m, "sigma_core", "model", p.sigma_core, errs);
            detail::read(m, "sigma_spu", "model", p.sigma_spu, errs);
            detail::read(m, "p_spu", "model", p.p_spu, errs);
            cfg.model = p;
        } else if (model_kind == "dm2") {
            detail::check_keys(m, "model", {"kind", "m", "alpha", "beta"}, errs);
            DataModel2Params p;
            detail::read(m, "m", "model", p.m, errs);
            detail::read(m, "alpha", "model", p.alpha, errs);
            detail::read(m, "beta", "model", p.beta, errs);
            cfg.model = p;
        } else {
            errs.add("model.kind", "must be dm1 or dm2");
        }
    }
    const Index l = latent_dim(cfg.model);
    cfg.image.dim = l;
    cfg.text.dim = l;
    detail::read_modality(doc, "image", cfg.image, errs);
    detail::read_modality(doc, "text", cfg.text, errs);

    if (doc.contains("mask")) {
        const auto& m = doc.at("mask");
        cfg.masked = true;
        if (model_kind == "dm1") {
            detail::check_keys(m, "mask", {"pi_core", "pi_spu"}, errs);
            detail::read(m, "pi_core", "mask", cfg.pi_core, errs);
            detail::read(m, "pi_spu", "mask", cfg.pi_spu, errs);
        } else {
            detail::check_keys(m, "mask", {"pi"}, errs);
            detail::read(m, "pi", "mask", cfg.pi, errs);
        }
    }

    if (doc.contains("methods")) {
        std::vector<std::string> names;
        detail::read(doc, "methods", "", names, errs);
        cfg.methods.clear();
        for (const auto& n : names) {
            bool found = false;
            for (const auto& [m, mn] : method_names())
                if (mn == n) {
                    cfg.methods.push_back(m);
                    found = true;
                }
            if (!found) errs.add("methods", "unknown method " + n);
        }
    }

    if (doc.contains("training")) {
        const auto& t = doc.at("training");
        detail::check_keys(t, "training",
                           {"n_train", "p_dim", "rho", "covariance", "mask_exponent", "train_mode", "probe_restarts",
                            "mmcl_gd", "sl", "probe"},
                           errs);
        if (t.is_object()) {
            detail::read(t, "n_train", "training", cfg.n_train, errs);
            detail::read(t, "p_dim", "training", cfg.p_dim, errs);
            detail::read(t, "rho", "training", cfg.rho, errs);
            detail::read(t, "probe_restarts", "training", cfg.probe_restarts, errs);
            std::string cov = "empirical", expo = "linear", mode = "auto";
            detail::read(t, "covariance", "training", cov, errs);
            detail::read(t, "mask_exponent", "training", expo, errs);
            detail::read(t, "train_mode", "training", mode, errs);
            if (cov == "empirical") cfg.covariance = CovarianceSource::Empirical;
            else if (cov == "population") cfg.covariance = CovarianceSource::Population;
            else errs.add("training.covariance", "must be empirical or population");
            if (expo == "linear") cfg.mask_exponent = MaskExponent::Linear;
            else if (expo == "squared") cfg.mask_exponent = MaskExponent::Squared;
            else errs.add("training.mask_exponent", "must be linear or squared");
            if (auto md = detail::parse_mode(mode)) cfg.train_mode = *md;
            else errs.add("training.train_mode", "must be auto, sampled or exhaustive");
            detail::read_gd(t, "mmcl_gd", "training", cfg.mmcl_gd, errs);
            detail::read_gd(t, "sl", "training", cfg.sl, errs);
            detail::read_gd(t, "probe", "training", cfg.probe, errs);
        }
    }

    if (doc.contains("evaluation")) {
        const auto& e = doc.at("evaluation");
        detail::check_keys(e, "evaluation", {"n_eval", "splits", "mode", "noise_sigma"}, errs);
        if (e.is_object()) {
            detail::read(e, "n_eval", "evaluation", cfg.n_eval, errs);
            std::string mode = "auto";
            detail::read(e, "mode", "evaluation", mode, errs);
            if (auto md = detail::parse_mode(mode)) cfg.eval_mode = *md;
            else errs.add("evaluation.mode", "must be auto, sampled or exhaustive");
            if (e.contains("noise_sigma")) {
                double s = 0.0;
                detail::read(e, "noise_sigma", "evaluation", s, errs);
                cfg.eval_noise_sigma = s;
            }
            if (e.contains("splits")) {
                std::vector<std::string> splits;
                detail::read(e, "splits", "evaluation", splits, errs);
                cfg.splits.clear();
                for (const auto& s : splits) {
                    if (s == "true") cfg.splits.push_back(Split::True);
                    else if (s == "train") cfg.splits.push_back(Split::Train);
                    else errs.add("evaluation.splits", "unknown split " + s);
                }
            }
        }
    }

    if (doc.contains("grid")) {
        const auto& g = doc.at("grid");
        if (!g.is_object()) {
            errs.add("grid", "must be an object");
        } else {
            // Grid axes follow the canonical column order so cell numbering never depends on key order in the file.
            for (const auto& key : grid_keys())
                if (g.contains(key)) {
                    std::vector<double> values;
                    detail::read(g, key.c_str(), "grid", values, errs);
                    cfg.grid.emplace_back(key, values);
                }
            for (const auto& [key, v] : g.items())
                if (std::find(grid_keys().begin(), grid_keys().end(), key) == grid_keys().end())
                    errs.add("grid." + key, "unknown grid key");
        }
    }
    errs.raise();
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Built-in verification suites

/// The fixed scenarios behind `verify --suite`; each is an ordinary experiment config.
inline std::vector<ExperimentConfig> verify_suite_configs(const std::string& suite, std::uint64_t root_seed, int threads)
{
    std::vector<ExperimentConfig> out;
    auto want = [&](const char* s) { return suite == "all" || suite == s; };
    auto base = [&](const char* name, ExperimentKind kind, DataModelParams model) {
        ExperimentConfig c;
        c.name = std::string("verify/") + name;
        c.kind = kind;
        c.model = model;
        c.image.dim = latent_dim(model);
        c.text.dim = latent_dim(model);
        c.root_seed = root_seed;
        c.threads = threads;
        return c;
    };
    if (want("dm1")) {
        ExperimentConfig mmcl = base("dm1-mmcl", ExperimentKind::Dm1Robustness, DataModel1Params{1.0, 0.02, 0.999});
        mmcl.n_train = 20000;
        mmcl.n_eval = 20000;
        mmcl.splits = {Split::True};
        out.push_back(mmcl);

        ExperimentConfig sl = base("dm1-sl-overparameterized", ExperimentKind::Dm1Robustness,
                                   DataModel1Params{1.0, 0.01, 0.99});
        sl.methods = {Method::Sl};
        sl.n_train = 500;
        sl.image = {2000, 0.1, DictionaryKind::IdentityEmbed};
        sl.text = {2, 0.0, DictionaryKind::IdentityEmbed};
        sl.sl = {0.5, 5000, 1e-3, 1e-8, 0};
        sl.n_eval = 10000;
        sl.splits = {Split::True};
        sl.trials = 3;
        out.push_back(sl);
    }
    if (want("dm2")) {
        const DataModel2Params robust{3, 0.7, 1.0 / 3.0};
        ExperimentConfig emp = base("dm2-mmcl-empirical", ExperimentKind::Dm2Robustness, robust);
        emp.splits = {Split::True};
        out.push_back(emp);
        ExperimentConfig pop = emp;
        pop.name = "verify/dm2-mmcl-population";
        pop.covariance = CovarianceSource::Population;
        out.push_back(pop);

        ExperimentConfig unshared = base("dm2-mmcl-unshared", ExperimentKind::Dm2Robustness, DataModel2Params{3, 2.0, 0.0});
        unshared.splits = {Split::True};
        out.push_back(unshared);

        ExperimentConfig sl = base("dm2-sl", ExperimentKind::Dm2Robustness, DataModel2Params{3, 10.0, 1.0 / 3.0});
        sl.methods = {Method::Sl};
        sl.sl = {0.05, 20000, 1e-3, 1e-8, 0};
        out.push_back(sl);
    }
    if (want("captions")) {
        ExperimentConfig c1 = base("captions-dm1", ExperimentKind::CaptionSweepDm1, DataModel1Params{1.0, 0.02, 0.999});
        c1.masked = true;
        c1.n_train = 50000;
        c1.n_eval = 50000;
        c1.splits = {Split::True};
        c1.grid = {{"pi_core", {0.0, 0.5, 1.0}}, {"pi_spu", {0.0, 1.0}}};
        out.push_back(c1);

        ExperimentConfig c2 = base("captions-dm2", ExperimentKind::CaptionSweepDm2, DataModel2Params{30, 1.1, 1.0 / 3.0});
        c2.masked = true;
        c2.covariance = CovarianceSource::Population;
        c2.n_train = 100;
        c2.n_eval = 50000;
        c2.splits = {Split::True};
        c2.grid = {{"pi", {0.3, 0.6}}};
        c2.tolerance = 0.005;
        out.push_back(c2);
    }
    if (want("supcon")) {
        ExperimentConfig s1 = base("supcon-dm1", ExperimentKind::Dm1Robustness, DataModel1Params{1.0, 0.02, 0.999});
        s1.methods = {Method::SupCon};
        s1.n_train = 20000;
        s1.n_eval = 20000;
        s1.probe = {0.05, 5000, 1e-3, 1e-8, 0};
        s1.splits = {Split::True};
        out.push_back(s1);

        ExperimentConfig s2 = base("supcon-dm2", ExperimentKind::Dm2Robustness, DataModel2Params{2, 1.5, 1.0 / 3.0});
        s2.methods = {Method::SupCon};
        s2.probe_restarts = 20;
        out.push_back(s2);
    }
    if (want("id")) {
        ExperimentConfig id = base("id-control", ExperimentKind::Dm1Robustness, DataModel1Params{1.0, 0.01, 0.999});
        id.methods = {Method::Sl, Method::MmclClosed};
        id.n_train = 5000;
        id.n_eval = 20000;
        id.splits = {Split::Train};
        out.push_back(id);
    }
    if (out.empty()) throw ValidationError("unknown verify suite " + suite);
    return out;
}

// ---------------------------------------------------------------------------
// Trial pipeline

namespace detail {

struct RowSink {
    const ExperimentConfig& cfg;
    const CellParams& cell;
    std::size_t cell_index;
    int trial;
    std::uint64_t seed;
    std::vector<RunRecord>& out;

    RunRecord& add(const std::string& method, const std::string& split, const std::string& group,
                   const std::string& metric, double value)
    {
        RunRecord r;
        r.run_id = "c" + std::to_string(cell_index) + "-t" + std::to_string(trial);
        r.experiment = cfg.name.empty() ? to_string(cfg.kind) : cfg.name;
        r.seed = seed;
        r.method = method;
        r.cell = cell;
        r.split = split;
        r.group = group;
        r.metric = metric;
        r.value = value;
        r.cell_index = cell_index;
        r.trial = trial;
        out.push_back(std::move(r));
        return out.back();
    }
};

inline void attach(RunRecord& r, double prediction, Comparator c, double tol)
{
    r.prediction = prediction;
    r.comparator = to_string(c);
    r.pass = std::isfinite(r.value) && compare(c, r.value, prediction, tol);
}

/// Every group key the data model can produce, so row counts never depend on sampling luck.
inline std::vector<std::pair<std::string, bool>> all_groups(const DataModelParams& params)
{
    std::vector<std::pair<std::string, bool>> out;
    if (std::holds_alternative<DataModel1Params>(params)) {
        for (const char* y : {"+1", "-1"})
            for (const char* a : {"+1", "-1"})
                out.emplace_back(std::string("y=") + y + ",a=" + a, std::string(y) != a);
    } else {
        const int q = num_classes(params);
        for (int y = 1; y <= q; ++y) {
            out.emplace_back("y=" + std::to_string(y) + ",agree", false);
            out.emplace_back("y=" + std::to_string(y) + ",disagree", true);
        }
    }
    return out;
}

struct TrialContext {
    const ExperimentConfig& cfg;
    CellParams cell;
    ModalityConfig image;
    ModalityConfig text;
    CaptionMask mask = CaptionMask::none();
    PairedDataset data;
    bool train_exhaustive = false;
};

inline void emit_report(RowSink& sink, const TrialContext& ctx, Method method, Split split, const EvalReport& rep)
{
    const std::string m = to_string(method);
    const std::string s = to_string(split);
    const bool dm1 = std::holds_alternative<DataModel1Params>(ctx.cell.model);
    const bool exact = rep.mode == EvalMode::Exhaustive;
    const double tol = exact ? 0.0 : ctx.cfg.tolerance;
    const bool noiseless = ctx.image.noise_sigma == 0.0 && ctx.text.noise_sigma == 0.0;

    RunRecord& overall = sink.add(m, s, "overall", "accuracy", rep.overall_accuracy);
    const std::size_t overall_pos = sink.out.size() - 1;
    sink.add(m, s, "minority", "accuracy", rep.minority_accuracy());
    const std::size_t minority_pos = sink.out.size() - 1;
    sink.add(m, s, "majority", "accuracy", rep.majority_accuracy());
    (void)overall;
    for (const auto& [key, minority] : all_groups(ctx.cell.model)) {
        const auto it = rep.groups.find(key);
        sink.add(m, s, key, "accuracy", it == rep.groups.end() ? std::nan("") : it->second.accuracy);
    }
    RunRecord& o = sink.out[overall_pos];
    RunRecord& mi = sink.out[minority_pos];
    const bool mmcl = method == Method::MmclClosed || method == Method::MmclGd;

    if (dm1) {
        const auto& p = std::get<DataModel1Params>(ctx.cell.model);
        const bool masked = ctx.cell.masked && (ctx.cell.pi_core < 1.0 || ctx.cell.pi_spu < 1.0);
        if (mmcl && split == Split::True) {
            if (masked) {
                const MaskExponent alt = ctx.cfg.mask_exponent == MaskExponent::Linear ? MaskExponent::Squared
                                                                                       : MaskExponent::Linear;
                attach(mi, masked_dm1_minority(p.sigma_core, p.sigma_spu, p.p_spu, ctx.cell.pi_core, ctx.cfg.mask_exponent).value("minority"),
                       Comparator::EqualityThreshold, tol);
                RunRecord& ref = sink.add(m, s, "minority", "accuracy_" + to_string(alt) + "_exponent", rep.minority_accuracy());
                ref.prediction = masked_dm1_minority(p.sigma_core, p.sigma_spu, p.p_spu, ctx.cell.pi_core, alt).value("minority");
                ref.comparator = "reference";
            } else {
                const TheoremPrediction t = mmcl_dm1_bound(p.sigma_core, p.sigma_spu, p.p_spu);
                attach(o, t.value("overall"), Comparator::LowerBound, tol);
                attach(mi, t.value("minority"), Comparator::LowerBound, tol);
                if (ctx.cfg.kind == ExperimentKind::Dm1Robustness)
                    attach(sink.add(m, s, "overall", "accuracy_ceiling", rep.overall_accuracy), kDm1AccuracyCeiling,
                           Comparator::UpperBound, 0.0);
            }
        } else if (mmcl && split == Split::Train && !masked) {
            attach(o, id_accuracy_predictions(p.sigma_core, p.sigma_spu, p.p_spu).value("mmcl"),
                   Comparator::EqualityThreshold, std::max(tol, 0.01));
        } else if (method == Method::Sl && split == Split::True && ctx.cell.d_I > ctx.cell.n_train) {
            const TheoremPrediction t = sl_dm1_bounds();
            attach(o, t.value("overall"), Comparator::UpperBound, tol);
            attach(mi, t.value("minority"), Comparator::UpperBound, tol);
        } else if (method == Method::Sl && split == Split::Train) {
            attach(o, id_accuracy_predictions(p.sigma_core, p.sigma_spu, p.p_spu).value("sl"), Comparator::LowerBound,
                   tol);
        } else if (method == Method::SupCon && split == Split::True) {
            // Desk-scale slack for the o(1) terms: 0.05 overall, 0.10 minority.
            attach(o, 0.5, Comparator::UpperBound, 0.05);
            attach(mi, 0.0, Comparator::UpperBound, 0.10);
        }
        return;
    }

    const auto& p = std::get<DataModel2Params>(ctx.cell.model);
    if (mmcl && split == Split::True && noiseless) {
        const bool masked = ctx.cell.masked && ctx.cell.pi < 1.0;
        if (masked && p.beta > 0.0) {
            const double threshold = masked_dm2_threshold(p.m, p.alpha, p.beta).value("pi_threshold");
            if (ctx.cell.pi > threshold) attach(o, 1.0, Comparator::EqualityThreshold, tol);
            else if (ctx.cell.pi < threshold) attach(o, 0.5, Comparator::UpperBound, tol);
        } else if (!masked) {
            if (p.beta == 0.0) attach(o, 0.5, Comparator::UpperBound, tol);
            else if (*mmcl_dm2_condition(p.m, p.alpha, p.beta).holds) attach(o, 1.0, Comparator::EqualityThreshold, tol);
        }
    } else if (method == Method::Sl && split == Split::True && ctx.train_exhaustive && noiseless) {
        const double den = (1.0 + p.alpha * p.alpha) * (1.0 - p.beta) * (1.0 - p.beta) - 8.0;
        if (den > 0.0) attach(o, sl_dm2_bound(p.alpha, p.beta).value("bound"), Comparator::UpperBound, tol);
    } else if ((method == Method::Sl || method == Method::SupCon) && split == Split::Train && ctx.train_exhaustive &&
               noiseless) {
        attach(o, 1.0, Comparator::EqualityThreshold, tol);
    } else if (method == Method::SupCon && split == Split::True && ctx.train_exhaustive && noiseless) {
        attach(o, 0.5, Comparator::EqualityThreshold, tol);
    }
}

inline void run_method(RowSink& sink, TrialContext& ctx, Method method, std::size_t method_pos, const RngStream& trial_rng)
{
    const ExperimentConfig& cfg = ctx.cfg;
    const CellParams& cell = ctx.cell;
    RngStream fit_rng = trial_rng.child(10 + method_pos);
    const int q = num_classes(cell.model);
    const std::vector<int> labels = class_indices(ctx.data.latents);
    const ModalityConfig eval_image{ctx.image.dictionary, cfg.eval_noise_sigma.value_or(ctx.image.noise_sigma)};

    BatchPredictor predictor;
    std::optional<SupConEncoder> encoder;
    std::optional<ProbeModel> probe;
    if (method == Method::MmclClosed || method == Method::MmclGd) {
        MMCLModel model;
        if (method == Method::MmclGd) {
            model = mmcl_fit_gd(ctx.data, cell.p_dim, cell.rho, cfg.mmcl_gd, fit_rng);
        } else if (cfg.covariance == CovarianceSource::Population) {
            CrossCov s;
            if (const auto* p1 = std::get_if<DataModel1Params>(&cell.model))
                s = population_cross_cov_dm1(*p1, ctx.mask, cfg.mask_exponent);
            else
                s = population_cross_cov_dm2(std::get<DataModel2Params>(cell.model), cell.masked ? cell.pi : 1.0);
            model = mmcl_fit_closed_form(s, std::min<Index>(cell.p_dim, s.matrix.rows()), cell.rho,
                                         ctx.image.dictionary, ctx.text.dictionary);
        } else {
            model = mmcl_fit_closed_form(empirical_cross_cov(ctx.data), cell.p_dim, cell.rho);
        }
        predictor = zero_shot_predictor(model, build_prompts(cell.model, ctx.text.dictionary));
        if (method == Method::MmclGd) {
            sink.add(to_string(method), "train", "overall", "final_loss", model.meta.final_loss);
            sink.add(to_string(method), "train", "overall", "final_grad_norm", model.meta.final_grad_norm);
        }
    } else if (method == Method::Sl) {
        const SLModel model = sl_fit_gd(ctx.data.images, labels, q, q == 2 ? LossKind::Logistic : LossKind::CrossEntropy,
                                        cfg.sl, fit_rng);
        predictor = [model](const Matrix& x) { return model.predict(x); };
        sink.add(to_string(method), "train", "overall", "final_grad_norm", model.meta.final_grad_norm);
    } else {
        const DataModelKind kind =
            std::holds_alternative<DataModel1Params>(cell.model) ? DataModelKind::DM1 : DataModelKind::DM2;
        encoder = supcon_fit_closed_form(supcon_class_mean_cov(ctx.data, kind), std::min(cell.p_dim, cell.d_I), cell.rho);
        probe = probe_fit(encoder->encode(ctx.data.images), labels, q, cfg.probe, fit_rng);
        predictor = probe_predictor(*encoder, *probe);
    }

    for (std::size_t si = 0; si < cfg.splits.size(); ++si) {
        const Split split = cfg.splits[si];
        // Same evaluation stream for every method so methods see identical inputs.
        RngStream eval_rng = trial_rng.child(100 + static_cast<std::uint64_t>(split));
        const EvalSampler sampler{cell.model, split, eval_image, cfg.eval_mode};
        const EvalReport rep = evaluate(predictor, sampler, cfg.n_eval, eval_rng);
        emit_report(sink, ctx, method, split, rep);

        const auto* p2 = std::get_if<DataModel2Params>(&cell.model);
        if (method == Method::SupCon && p2 && split == Split::True && rep.mode == EvalMode::Exhaustive) {
            const auto latents = enumerate_latents_dm2(*p2, Split::True);
            RngStream geo_rng = trial_rng.child(200);
            const Matrix images = project_images(latents, eval_image, geo_rng);
            const GroupGeometry geo = supcon_group_geometry(*encoder, images, latents);
            attach(sink.add(to_string(method), to_string(split), "overall", "collinearity_residual", geo.max_residual), 0.0,
                   Comparator::UpperBound, 1e-8);
            if (cfg.probe_restarts > 0) {
                // Probes trained on true-split representations from fresh initializations.
                const Matrix reps = encoder->encode(images);
                const std::vector<int> true_labels = class_indices(latents);
                double best = 0.0;
                for (int r = 0; r < cfg.probe_restarts; ++r) {
                    RngStream restart_rng = trial_rng.child(300 + static_cast<std::uint64_t>(r));
                    GdOptions opts = cfg.probe;
                    opts.init_scale = std::max(opts.init_scale, 1.0);
                    const ProbeModel candidate = probe_fit(reps, true_labels, q, opts, restart_rng);
                    RngStream unused(0, 0);
                    const EvalReport cr = evaluate_latents(probe_predictor(*encoder, candidate), latents, eval_image,
                                                           Split::True, EvalMode::Exhaustive, unused);
                    best = std::max(best, cr.overall_accuracy);
                }
                attach(sink.add(to_string(method), to_string(split), "overall", "best_probe_accuracy", best), 0.75,
                       Comparator::UpperBound, 1e-9);
            }
        }
    }
}

inline std::vector<RunRecord> run_trial(const ExperimentConfig& cfg, std::size_t cell_index, int trial)
{
    std::vector<RunRecord> out;
    const std::uint64_t stream = stream_hash(cell_index, static_cast<std::uint64_t>(trial));
    const CellParams cell = make_cell(cfg, cell_index);
    RowSink sink{cfg, cell, cell_index, trial, stream, out};
    const auto start = std::chrono::steady_clock::now();
    try {
        const RngStream trial_rng(cfg.root_seed, stream);
        RngStream dict_rng = trial_rng.child(1);
        RngStream data_rng = trial_rng.child(2);
        const Index l = latent_dim(cell.model);
        TrialContext ctx{cfg, cell, {make_dictionary(cell.d_I, l, cfg.image.dictionary, dict_rng), cfg.image.noise_sigma},
                         {make_dictionary(cell.d_T, l, cfg.text.dictionary, dict_rng), cfg.text.noise_sigma},
                         CaptionMask::none(), {}, false};
        if (cell.masked) {
            if (std::holds_alternative<DataModel1Params>(cell.model)) ctx.mask = CaptionMask::model1(cell.pi_core, cell.pi_spu);
            else ctx.mask = CaptionMask::model2(cell.pi);
        }
        std::vector<LatentSample> latents;
        if (const auto* p2 = std::get_if<DataModel2Params>(&cell.model)) {
            ctx.train_exhaustive = cfg.train_mode == EvalMode::Exhaustive ||
                                   (cfg.train_mode == EvalMode::Auto && dm2_enumerable(p2->m, Split::Train));
            latents = ctx.train_exhaustive ? enumerate_latents_dm2(*p2, Split::Train)
                                           : sample_latents_dm2(*p2, cell.n_train, Split::Train, data_rng);
        } else {
            latents = sample_latents_dm1(std::get<DataModel1Params>(cell.model), cell.n_train, Split::Train, data_rng);
        }
        ctx.data = make_paired_dataset(std::move(latents), ctx.image, ctx.text, ctx.mask, data_rng);
        for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
            const std::size_t before = out.size();
            try {
                run_method(sink, ctx, cfg.methods[i], i, trial_rng);
            } catch (const std::exception& e) {
                out.resize(before);
                RunRecord& r = sink.add(to_string(cfg.methods[i]), "", std::string("error: ") + e.what(), "error", std::nan(""));
                r.pass = false;
            }
        }
    } catch (const std::exception& e) {
        RunRecord& r = sink.add("", "", std::string("error: ") + e.what(), "error", std::nan(""));
        r.pass = false;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (auto& r : out) r.wall_time = secs;
    return out;
}

} // namespace detail

/**
 * @brief Runs every (cell, trial) of a config and returns records in cell, trial order.
 *
 * Trials are spread across `cfg.threads` workers; each trial draws from the stream
 * stream_hash(cell, trial), so output is identical at any thread count.
 */
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg)
{
    validate(cfg);
    if (cfg.kind == ExperimentKind::VerifyTheorems) {
        std::vector<RunRecord> all;
        for (const auto& sub : verify_suite_configs(cfg.suite, cfg.root_seed, cfg.threads)) {
            auto records = run_experiment(sub);
            all.insert(all.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
        }
        return all;
    }
    const std::size_t cells = cell_count(cfg);
    const std::size_t tasks = cells * static_cast<std::size_t>(cfg.trials);
    std::vector<std::vector<RunRecord>> results(tasks);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < tasks; t = next++)
            results[t] = detail::run_trial(cfg, t / static_cast<std::size_t>(cfg.trials),
                                           static_cast<int>(t % static_cast<std::size_t>(cfg.trials)));
    };
    const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), tasks));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::vector<RunRecord> out;
    for (auto& r : results) out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
    return out;
}

inline bool all_pass(const std::vector<RunRecord>& records)
{
    for (const auto& r : records)
        if (r.pass && !*r.pass) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Output

inline const std::vector<std::string>& csv_columns()
{
    static const std::vector<std::string> cols{
        "run_id", "experiment", "seed",  "method",  "n_train", "d_I",   "d_T",    "p_dim",      "rho",
        "sigma_core", "sigma_spu", "p_spu", "m",     "alpha",   "beta",  "pi_core", "pi_spu", "pi",
        "split", "group", "metric", "value", "prediction", "comparator", "pass"};
    return cols;
}

/// 9 significant digits; empty for NaN.
inline std::string format_number(double v)
{
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> csv_fields(const RunRecord& r)
{
    const CellParams& c = r.cell;
    const auto* p1 = std::get_if<DataModel1Params>(&c.model);
    const auto* p2 = std::get_if<DataModel2Params>(&c.model);
    const double nan = std::nan("");
    auto num = [](double v) { return format_number(v); };
    const bool dm1_mask = c.masked && p1;
    const bool dm2_mask = c.masked && p2;
    return {r.run_id,
            r.experiment,
            std::to_string(r.seed),
            r.method,
            num(static_cast<double>(c.n_train)),
            num(static_cast<double>(c.d_I)),
            num(static_cast<double>(c.d_T)),
            num(static_cast<double>(c.p_dim)),
            num(c.rho),
            num(p1 ? p1->sigma_core : nan),
            num(p1 ? p1->sigma_spu : nan),
            num(p1 ? p1->p_spu : nan),
            num(p2 ? p2->m : nan),
            num(p2 ? p2->alpha : nan),
            num(p2 ? p2->beta : nan),
            num(dm1_mask ? c.pi_core : nan),
            num(dm1_mask ? c.pi_spu : nan),
            num(dm2_mask ? c.pi : nan),
            r.split,
            r.group,
            r.metric,
            num(r.value),
            r.prediction ? num(*r.prediction) : "",
            r.comparator,
            r.pass ? (*r.pass ? "true" : "false") : ""};
}

inline std::string to_csv(const std::vector<RunRecord>& records)
{
    std::string out;
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += "\n";
    for (const auto& r : records) {
        const auto fields = csv_fields(r);
        for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_escape(fields[i]);
        out += "\n";
    }
    return out;
}

namespace detail {

inline void write_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << content;
    if (!out) throw IoError("write failed for " + path);
}

} // namespace detail

inline void emit_csv(const std::vector<RunRecord>& records, const std::string& path)
{
    detail::write_file(path, to_csv(records));
}

/// Per-cell mean/min/max of every (method, split, group, metric), the failures and the overall verdict.
inline nlohmann::ordered_json summary_json(const std::vector<RunRecord>& records)
{
    using ojson = nlohmann::ordered_json;
    struct Agg {
        double sum = 0.0, min = INFINITY, max = -INFINITY;
        int count = 0, checks = 0, failed = 0;
        std::optional<double> prediction;
        std::string comparator;
    };
    struct CellAgg {
        const RunRecord* first = nullptr;
        std::vector<std::string> order;
        std::map<std::string, Agg> metrics;
        std::map<std::string, std::array<std::string, 4>> labels;
        double wall = 0.0;
        std::map<int, double> trial_wall;
    };
    std::vector<std::pair<std::string, CellAgg>> cells; // keyed by experiment + cell index, first-seen order
    std::map<std::string, std::size_t> cell_pos;
    ojson failures = ojson::array();
    int checks = 0, failed = 0;
    for (const auto& r : records) {
        const std::string ck = r.experiment + "#" + std::to_string(r.cell_index);
        auto [it, inserted] = cell_pos.emplace(ck, cells.size());
        if (inserted) cells.emplace_back(ck, CellAgg{});
        CellAgg& cell = cells[it->second].second;
        if (!cell.first) cell.first = &r;
        cell.trial_wall[r.trial] = r.wall_time;
        const std::string mk = r.method + "|" + r.split + "|" + r.group + "|" + r.metric;
        if (!cell.metrics.count(mk)) {
            cell.order.push_back(mk);
            cell.labels[mk] = {r.method, r.split, r.group, r.metric};
        }
        Agg& a = cell.metrics[mk];
        if (std::isfinite(r.value)) {
            a.sum += r.value;
            a.min = std::min(a.min, r.value);
            a.max = std::max(a.max, r.value);
            ++a.count;
        }
        if (r.prediction) {
            a.prediction = r.prediction;
            a.comparator = r.comparator;
        }
        if (r.pass) {
            ++a.checks;
            ++checks;
            if (!*r.pass) {
                ++a.failed;
                ++failed;
                failures.push_back({{"experiment", r.experiment},
                                    {"run_id", r.run_id},
                                    {"method", r.method},
                                    {"split", r.split},
                                    {"group", r.group},
                                    {"metric", r.metric},
                                    {"value", std::isfinite(r.value) ? ojson(r.value) : ojson(nullptr)},
                                    {"prediction", r.prediction ? ojson(*r.prediction) : ojson(nullptr)},
                                    {"comparator", r.comparator}});
            }
        }
    }
    ojson out;
    out["verdict"] = failed == 0 ? "pass" : "fail";
    out["n_records"] = records.size();
    out["n_checks"] = checks;
    out["n_failed"] = failed;
    out["failures"] = failures;
    ojson cell_list = ojson::array();
    for (auto& [key, cell] : cells) {
        const auto fields = csv_fields(*cell.first);
        ojson params;
        for (std::size_t i = 4; i <= 17; ++i)
            if (!fields[i].empty()) params[csv_columns()[i]] = std::stod(fields[i]);
        double wall = 0.0;
        for (const auto& [t, w] : cell.trial_wall) wall += w;
        ojson metrics = ojson::array();
        for (const auto& mk : cell.order) {
            const Agg& a = cell.metrics[mk];
            const auto& lab = cell.labels[mk];
            ojson m{{"method", lab[0]}, {"split", lab[1]}, {"group", lab[2]}, {"metric", lab[3]}, {"count", a.count}};
            m["mean"] = a.count ? ojson(a.sum / a.count) : ojson(nullptr);
            m["min"] = a.count ? ojson(a.min) : ojson(nullptr);
            m["max"] = a.count ? ojson(a.max) : ojson(nullptr);
            if (a.prediction) {
                m["prediction"] = *a.prediction;
                m["comparator"] = a.comparator;
            }
            if (a.checks) m["pass"] = a.failed == 0;
            metrics.push_back(m);
        }
        cell_list.push_back({{"experiment", cell.first->experiment},
                             {"cell_index", cell.first->cell_index},
                             {"params", params},
                             {"trials", cell.trial_wall.size()},
                             {"wall_time_s", wall},
                             {"metrics", metrics}});
    }
    out["cells"] = cell_list;
    return out;
}

inline void emit_json_summary(const std::vector<RunRecord>& records, const std::string& path)
{
    detail::write_file(path, summary_json(records).dump(2) + "\n");
}

} // namespace mmclab
