#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bdsdep/backward.hpp"
#include "bdsdep/catalog.hpp"
#include "bdsdep/diagnostics.hpp"
#include "bdsdep/drivers.hpp"
#include "bdsdep/feynman_kac.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/noise.hpp"
#include "bdsdep/version.hpp"

namespace bdsdep::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"simulate-forward", "solve", "verify", "continuous-dependence",
                                                "feynman-kac", "converge-study"};
    return names;
}

/// Complete configuration with defaults. A user file or --set override may only
/// touch keys that appear here; `null` marks keys whose default is "use the problem's own".
inline json default_config() {
    return json::parse(R"({
  "problem": "linear-scalar",
  "steps": 100,
  "outerRuns": 5,
  "seed": 1,
  "solver": {
    "innerPaths": 10000,
    "basisDegree": 2,
    "picardTol": 1e-13,
    "picardMaxIter": 200,
    "picardInit": "zero",
    "picardInitSeed": 7,
    "mollifyOrder": null
  },
  "mollifier": {
    "quadNodes": 32,
    "mcFallbackSamples": 4096,
    "tensorDimCap": 4,
    "seed": 20240501
  },
  "forward": {
    "paths": 1000,
    "exportPaths": 10
  },
  "verify": {
    "runs": 10,
    "checkerSamples": 100000,
    "aprioriSlack": 4.0,
    "uniquenessRuns": 1,
    "uniquenessTol": 1e-8
  },
  "continuousDependence": {
    "family": "constant-shift",
    "base": null,
    "levels": [1, 2, 4, 8, 16]
  },
  "feynmanKac": {
    "problem": "heat-quadratic",
    "t": [0.0],
    "x": [[0.0]]
  },
  "converge": {
    "problem": "heat-quadratic",
    "steps": [25, 50, 100],
    "seeds": [1, 2, 3],
    "referenceFactor": 4
  }
})");
}

namespace detail {

inline bool compatible(const json& def, const json& val) {
    if (def.is_null()) return true;
    if (def.is_number()) return val.is_number();
    if (def.is_array()) return val.is_array();
    if (def.is_object()) return val.is_object();
    return def.type() == val.type();
}

/// Recursively merges `patch` into `base`, rejecting keys absent from `schema`.
inline void merge_checked(json& base, const json& patch, const json& schema, const std::string& path) {
    if (!patch.is_object()) throw ValidationError("config: expected an object at '" + (path.empty() ? "." : path) + "'");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key())) throw ValidationError("config: unknown key '" + key + "'");
        const json& def = schema.at(it.key());
        if (def.is_object()) {
            merge_checked(base[it.key()], it.value(), def, key);
        } else {
            if (!it.value().is_null() && !compatible(def, it.value())) {
                throw ValidationError("config: key '" + key + "' has the wrong type");
            }
            base[it.key()] = it.value();
        }
    }
}

inline json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return json(text);
    }
}

template <class T>
T get(const json& cfg, const std::string& dotted) {
    const json* node = &cfg;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) node = &node->at(part);
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config: key '" + dotted + "' has an invalid value");
    }
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline std::vector<double> json_doubles(const json& a) { return a.get<std::vector<double>>(); }

}  // namespace detail

/// Resolves defaults <- config file <- --set overrides <- --seed.
inline json resolve_config(const std::string& configPath, const std::vector<std::string>& overrides,
                           std::optional<std::uint64_t> seed) {
    const json schema = default_config();
    json cfg = schema;
    if (!configPath.empty()) {
        std::ifstream in(configPath);
        if (!in) throw ValidationError("config: cannot read '" + configPath + "'");
        json file;
        try {
            file = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ValidationError(std::string("config: parse error: ") + e.what());
        }
        detail::merge_checked(cfg, file, schema, "");
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + ov + "'");
        const std::string key = ov.substr(0, eq);
        json patch = detail::parse_override_value(ov.substr(eq + 1));
        std::vector<std::string> parts;
        std::stringstream ss(key);
        for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
            json wrap = json::object();
            wrap[*it] = std::move(patch);
            patch = std::move(wrap);
        }
        detail::merge_checked(cfg, patch, schema, "");
    }
    if (seed) cfg["seed"] = *seed;
    return cfg;
}

inline BackwardConfig backward_config(const json& cfg) {
    BackwardConfig b;
    b.innerPaths = detail::get<std::size_t>(cfg, "solver.innerPaths");
    b.basis.degree = detail::get<int>(cfg, "solver.basisDegree");
    b.picardTol = detail::get<double>(cfg, "solver.picardTol");
    b.picardMaxIter = detail::get<std::size_t>(cfg, "solver.picardMaxIter");
    const auto init = detail::get<std::string>(cfg, "solver.picardInit");
    if (init == "zero") {
        b.picardInit = PicardInit::Zero;
    } else if (init == "random") {
        b.picardInit = PicardInit::Random;
    } else {
        throw ValidationError("config: solver.picardInit must be 'zero' or 'random'");
    }
    b.picardInitSeed = detail::get<std::uint64_t>(cfg, "solver.picardInitSeed");
    const json& mo = cfg.at("solver").at("mollifyOrder");
    if (!mo.is_null()) {
        const int order = detail::get<int>(cfg, "solver.mollifyOrder");
        if (order < 0) throw ValidationError("config: solver.mollifyOrder must be >= 0");
        if (order > 0) b.mollifyOrder = order;
    }
    b.mollifier.quadNodes = detail::get<std::size_t>(cfg, "mollifier.quadNodes");
    b.mollifier.mcFallbackSamples = detail::get<std::size_t>(cfg, "mollifier.mcFallbackSamples");
    b.mollifier.tensorDimCap = detail::get<std::size_t>(cfg, "mollifier.tensorDimCap");
    b.mollifier.seed = detail::get<std::uint64_t>(cfg, "mollifier.seed");
    b.mollifier.validate();
    return b;
}

/// Catalog problem with solver.mollifyOrder = 0 switching off its default mollification.
inline Problem configured_problem(const std::string& name, const json& cfg) {
    Problem pb = builtin_driver(name);
    const json& mo = cfg.at("solver").at("mollifyOrder");
    if (mo.is_number() && mo.get<int>() == 0) pb.mollifyOrder.reset();
    return pb;
}

/// All file output of a run goes through one writer; CSV numbers use 17 significant digits.
class RunWriter {
public:
    explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    void json_file(const std::string& name, const json& j) const {
        std::ofstream out(dir_ / name);
        out << j.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    }

    void csv_file(const std::string& name, const std::vector<std::string>& header,
                  const std::vector<std::vector<double>>& rows) const {
        std::ofstream out(dir_ / name);
        out << std::setprecision(17);
        for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
        out << '\n';
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
            out << '\n';
        }
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    }

    void text_file(const std::string& name, const std::string& text) const {
        std::ofstream out(dir_ / name);
        out << text;
        if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
};

struct CommandResult {
    json results;
    bool passed = true;  ///< false makes the run exit with the validation code
};

namespace detail {

inline json report_json(const CheckReport& r) {
    json w = json::array();
    for (const auto& x : r.witnesses) {
        json e{{"condition", x.condition}, {"ratio", x.ratio}, {"point", x.point.to_string()}};
        if (x.partner) e["partner"] = x.partner->to_string();
        w.push_back(e);
    }
    return json{{"samples", r.samples}, {"maxViolation", r.maxViolation}, {"passed", r.passed()}, {"witnesses", w}};
}

inline json norms_json(const SolutionNorms& n) {
    return json{{"sSq", n.sSq}, {"mSq", n.mSq}, {"fSq", n.fSq}, {"total", n.total()}};
}

inline CommandResult cmd_simulate_forward(const json& cfg, const RunWriter& w) {
    const Problem pb = configured_problem(get<std::string>(cfg, "problem"), cfg);
    const auto steps = get<std::size_t>(cfg, "steps");
    const auto paths = get<std::size_t>(cfg, "forward.paths");
    const auto exportPaths = get<std::size_t>(cfg, "forward.exportPaths");
    const auto seed = get<std::uint64_t>(cfg, "seed");
    if (paths == 0) throw ValidationError("config: forward.paths must be >= 1");
    const TimeGrid grid = TimeGrid::make(pb.forward.tStart, pb.T, steps);
    const auto m = static_cast<Eigen::Index>(pb.forward.m);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd sumSq = Eigen::VectorXd::Zero(m);
    double exitTimeSum = 0.0;
    std::size_t exited = 0;
    std::size_t jumps = 0;
    std::ostringstream csv;
    csv << std::setprecision(17);
    for (std::size_t p = 0; p < paths; ++p) {
        const NoiseBundle b = generate_bundle(grid, NoiseDims{pb.forward.d, pb.driver.l}, pb.driver.marks, seed,
                                              static_cast<std::uint32_t>(p));
        const ForwardPath path = simulate_forward(pb.forward, b);
        if (p < exportPaths) write_path_csv(csv, path, pb.forward, p == 0, p);
        const Eigen::VectorXd xT = path.exit_state();
        sum += xT;
        sumSq += xT.cwiseAbs2();
        exitTimeSum += exit_time(path);
        exited += path.exitIndex < grid.steps ? 1 : 0;
        for (const auto& e : path.jumpLog) jumps += static_cast<std::size_t>(e.count);
    }
    w.text_file("paths.csv", csv.str());
    const double n = static_cast<double>(paths);
    const Eigen::VectorXd mean = sum / n;
    const Eigen::VectorXd var = (sumSq - n * mean.cwiseAbs2()) / std::max(1.0, n - 1.0);
    CommandResult r;
    r.results = json{{"problem", pb.name},
                     {"steps", steps},
                     {"paths", paths},
                     {"meanStoppedState", vec_json(mean)},
                     {"varStoppedState", vec_json(var)},
                     {"meanExitTime", exitTimeSum / n},
                     {"exitFraction", static_cast<double>(exited) / n},
                     {"meanJumpCount", static_cast<double>(jumps) / n}};
    return r;
}

inline CommandResult cmd_solve(const json& cfg, const RunWriter& w) {
    const Problem pb = configured_problem(get<std::string>(cfg, "problem"), cfg);
    const BackwardConfig bc = backward_config(cfg);
    const auto steps = get<std::size_t>(cfg, "steps");
    const auto outer = get<std::size_t>(cfg, "outerRuns");
    const OuterSummary s = solve_outer(pb, bc, steps, outer, get<std::uint64_t>(cfg, "seed"));

    std::vector<std::vector<double>> runRows;
    SolutionNorms avg;
    std::size_t maxIter = 0;
    for (std::size_t i = 0; i < s.runs.size(); ++i) {
        const OuterRun& run = s.runs[i];
        std::vector<double> row{static_cast<double>(i)};
        for (Eigen::Index c = 0; c < run.p0.size(); ++c) row.push_back(run.p0[c]);
        row.insert(row.end(), {run.norms.sSq, run.norms.mSq, run.norms.fSq, run.xiSecondMoment,
                               static_cast<double>(run.maxPicardIterations), static_cast<double>(run.ridgeSteps)});
        runRows.push_back(row);
        avg.sSq += run.norms.sSq / static_cast<double>(outer);
        avg.mSq += run.norms.mSq / static_cast<double>(outer);
        avg.fSq += run.norms.fSq / static_cast<double>(outer);
        maxIter = std::max(maxIter, run.maxPicardIterations);
    }
    std::vector<std::string> header{"run"};
    for (std::size_t c = 0; c < pb.driver.n; ++c) header.push_back("p0_" + std::to_string(c));
    header.insert(header.end(), {"sSq", "mSq", "fSq", "xiSecondMoment", "maxPicardIterations", "ridgeSteps"});
    w.csv_file("runs.csv", header, runRows);

    const TimeGrid grid = TimeGrid::make(pb.forward.tStart, pb.T, steps);
    std::vector<std::vector<double>> stepRows;
    const OuterRun& first = s.runs.front();
    for (std::size_t i = 0; i <= steps; ++i) {
        std::vector<double> row{static_cast<double>(i), grid.time(i)};
        for (Eigen::Index c = 0; c < first.meanP.cols(); ++c) row.push_back(first.meanP(static_cast<Eigen::Index>(i), c));
        if (i < steps) {
            const StepDiagnostics& d = first.diagnostics[i];
            row.insert(row.end(), {static_cast<double>(d.alive), static_cast<double>(d.iterations), d.residual,
                                   d.ridge ? 1.0 : 0.0});
        } else {
            row.insert(row.end(), {0.0, 0.0, 0.0, 0.0});
        }
        stepRows.push_back(row);
    }
    std::vector<std::string> stepHeader{"step", "t"};
    for (std::size_t c = 0; c < pb.driver.n; ++c) stepHeader.push_back("meanP_" + std::to_string(c));
    stepHeader.insert(stepHeader.end(), {"alive", "picardIterations", "picardResidual", "ridge"});
    w.csv_file("steps.csv", stepHeader, stepRows);

    CommandResult r;
    r.results = json{{"problem", pb.name},
                     {"steps", steps},
                     {"outerRuns", outer},
                     {"innerPaths", bc.innerPaths},
                     {"mollifyOrder", s.mollifyOrder ? json(*s.mollifyOrder) : json(nullptr)},
                     {"p0Mean", vec_json(s.mean)},
                     {"p0Std", vec_json(s.std)},
                     {"norms", norms_json(avg)},
                     {"picard", {{"maxIterations", maxIter}, {"tol", bc.picardTol}}},
                     {"gDependsOnK", s.gDependsOnK}};
    if (s.gDependsOnK) {
        r.results["warnings"] = json::array(
            {"g depends on k: regression on X alone may not capture the full conditioning field"});
    }
    if (pb.analytic) {
        const double exact = pb.analytic(pb.forward.tStart);
        r.results["analyticP0"] = exact;
        r.results["relativeError"] = std::abs(s.mean[0] - exact) / std::max(std::abs(exact), 1e-300);
    }
    return r;
}

inline CommandResult cmd_verify(const json& cfg, const RunWriter& w) {
    const Problem pb = configured_problem(get<std::string>(cfg, "problem"), cfg);
    const BackwardConfig bc = backward_config(cfg);
    const auto steps = get<std::size_t>(cfg, "steps");
    const auto seed = get<std::uint64_t>(cfg, "seed");
    const auto runs = get<std::size_t>(cfg, "verify.runs");
    const auto samples = get<std::size_t>(cfg, "verify.checkerSamples");
    const auto slack = get<double>(cfg, "verify.aprioriSlack");
    const auto tol = get<double>(cfg, "verify.uniquenessTol");

    const CheckReport growth = check_growth(pb.driver, samples, seed);
    const CheckReport monotone = check_monotone(pb.driver, samples, seed);

    const OuterSummary s = solve_outer(pb, bc, steps, runs, seed);
    std::vector<std::vector<double>> rows;
    bool aprioriOk = true;
    double worstRatio = 0.0;
    for (std::size_t i = 0; i < s.runs.size(); ++i) {
        const OuterRun& run = s.runs[i];
        const double bound = apriori_bound(pb.driver.mu_t, run.xiSecondMoment, pb.T - pb.forward.tStart, slack);
        const bool ok = run.norms.total() <= bound;
        aprioriOk = aprioriOk && ok;
        worstRatio = std::max(worstRatio, run.norms.total() / bound);
        rows.push_back({static_cast<double>(i), run.norms.total(), bound, ok ? 1.0 : 0.0});
    }
    w.csv_file("apriori.csv", {"run", "normsTotal", "bound", "holds"}, rows);

    const UniquenessReport uq =
        uniqueness_probe(pb, bc, steps, seed, get<std::size_t>(cfg, "verify.uniquenessRuns"));
    const bool uniqueOk = uq.passed(tol);

    CommandResult r;
    r.passed = growth.passed() && monotone.passed() && aprioriOk && uniqueOk;
    r.results = json{{"problem", pb.name},
                     {"steps", steps},
                     {"innerPaths", bc.innerPaths},
                     {"growth", report_json(growth)},
                     {"monotone", report_json(monotone)},
                     {"apriori", {{"runs", runs}, {"slack", slack}, {"worstRatio", worstRatio}, {"passed", aprioriOk}}},
                     {"uniqueness",
                      {{"maxGap", uq.maxGap}, {"relGap", uq.relGap}, {"tol", tol}, {"passed", uniqueOk}}},
                     {"passed", r.passed}};
    return r;
}

inline CommandResult cmd_continuous_dependence(const json& cfg, const RunWriter& w) {
    const PerturbationFamily fam = parse_family(get<std::string>(cfg, "continuousDependence.family"));
    const json& baseNode = cfg.at("continuousDependence").at("base");
    const std::string baseName = baseNode.is_null() ? default_family_base(fam) : baseNode.get<std::string>();
    const Problem base = configured_problem(baseName, cfg);
    const BackwardConfig bc = backward_config(cfg);
    const auto steps = get<std::size_t>(cfg, "steps");
    const auto levels = get<std::vector<double>>(cfg, "continuousDependence.levels");
    const DependenceTable t = continuous_dependence(base, fam, levels, bc, steps, get<std::size_t>(cfg, "outerRuns"),
                                                    get<std::uint64_t>(cfg, "seed"));
    std::vector<std::vector<double>> rows;
    json table = json::array();
    bool envelopeOk = true;
    for (const auto& row : t.rows) {
        const double env = row.envelope.value_or(std::numeric_limits<double>::quiet_NaN());
        rows.push_back({row.m, row.supGap, row.qkGap, row.inputGap, env});
        json j{{"m", row.m}, {"supGap", row.supGap}, {"qkGap", row.qkGap}, {"inputGap", row.inputGap}};
        if (row.envelope) {
            j["envelope"] = *row.envelope;
            envelopeOk = envelopeOk && row.supGap <= *row.envelope;
        }
        table.push_back(j);
    }
    w.csv_file("dependence.csv", {"m", "supGap", "qkGap", "inputGap", "envelope"}, rows);
    CommandResult r;
    r.results = json{{"family", family_name(fam)}, {"base", baseName}, {"steps", steps},
                     {"innerPaths", bc.innerPaths}, {"table", table}};
    if (family_is_uniform(fam)) r.results["envelopeHolds"] = envelopeOk;
    return r;
}

inline CommandResult cmd_feynman_kac(const json& cfg, const RunWriter& w) {
    const FKProblem fk = builtin_fk(get<std::string>(cfg, "feynmanKac.problem"));
    const BackwardConfig bc = backward_config(cfg);
    const auto steps = get<std::size_t>(cfg, "steps");
    const auto ts = get<std::vector<double>>(cfg, "feynmanKac.t");
    std::vector<Eigen::VectorXd> xs;
    for (const auto& pt : cfg.at("feynmanKac").at("x")) {
        std::vector<double> v;
        try {
            v = pt.get<std::vector<double>>();
        } catch (const json::exception&) {
            throw ValidationError("config: feynmanKac.x must be a list of points");
        }
        xs.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    const auto rowsOut = u_surface(fk, ts, xs, bc, steps, get<std::size_t>(cfg, "outerRuns"),
                                   get<std::uint64_t>(cfg, "seed"));
    std::vector<std::vector<double>> rows;
    json cells = json::array();
    std::vector<std::string> header{"t"};
    for (std::size_t k = 0; k < fk.forward.m; ++k) header.push_back("x" + std::to_string(k));
    for (std::size_t k = 0; k < fk.driver.n; ++k) header.push_back("u" + std::to_string(k) + "_mean");
    for (std::size_t k = 0; k < fk.driver.n; ++k) header.push_back("u" + std::to_string(k) + "_std");
    for (std::size_t k = 0; k < fk.driver.n; ++k) header.push_back("u" + std::to_string(k) + "_stderr");
    if (fk.reference) header.push_back("reference");
    for (const auto& c : rowsOut) {
        std::vector<double> row{c.t};
        for (Eigen::Index k = 0; k < c.x.size(); ++k) row.push_back(c.x[k]);
        for (Eigen::Index k = 0; k < c.u.mean.size(); ++k) row.push_back(c.u.mean[k]);
        for (Eigen::Index k = 0; k < c.u.std.size(); ++k) row.push_back(c.u.std[k]);
        for (Eigen::Index k = 0; k < c.u.stdError.size(); ++k) row.push_back(c.u.stdError[k]);
        json cell{{"t", c.t}, {"x", vec_json(c.x)}, {"mean", vec_json(c.u.mean)}, {"std", vec_json(c.u.std)},
                  {"stdError", vec_json(c.u.stdError)}};
        if (fk.reference) {
            const double ref = fk.reference(c.t, c.x);
            row.push_back(ref);
            cell["reference"] = ref;
        }
        rows.push_back(row);
        cells.push_back(cell);
    }
    w.csv_file("surface.csv", header, rows);
    CommandResult r;
    r.results = json{{"problem", fk.name}, {"steps", steps}, {"innerPaths", bc.innerPaths}, {"cells", cells}};
    return r;
}

inline CommandResult cmd_converge_study(const json& cfg, const RunWriter& w) {
    const FKProblem fk = builtin_fk(get<std::string>(cfg, "converge.problem"));
    const BackwardConfig bc = backward_config(cfg);
    const auto stepsList = get<std::vector<std::size_t>>(cfg, "converge.steps");
    const auto seeds = get<std::vector<std::uint64_t>>(cfg, "converge.seeds");
    const ConvergenceStudy st = convergence_study(fk, stepsList, bc, seeds, get<std::size_t>(cfg, "converge.referenceFactor"));
    std::vector<std::vector<double>> rows;
    json table = json::array();
    for (const auto& row : st.rows) {
        rows.push_back({static_cast<double>(row.seedIndex), static_cast<double>(row.steps), row.p0, row.u0Error,
                        row.pathError});
        table.push_back(json{{"seed", row.seed}, {"steps", row.steps}, {"p0", row.p0}, {"u0Error", row.u0Error},
                             {"pathError", row.pathError}});
    }
    w.csv_file("convergence.csv", {"seedIndex", "steps", "p0", "u0Error", "error"}, rows);
    json dec = json::array();
    for (bool b : st.decreasing) dec.push_back(b);
    CommandResult r;
    r.results = json{{"problem", fk.name},
                     {"innerPaths", bc.innerPaths},
                     {"table", table},
                     {"decreasingPerSeed", dec},
                     {"majorityDecreasing", 2 * st.decreasing_count() > st.decreasing.size()}};
    return r;
}

}  // namespace detail

/// Runs one subcommand with a resolved config, writing manifest.json, results.json and CSVs
/// under `outDir`. Returns the process exit code.
inline int execute(const std::string& sub, const json& cfg, const std::filesystem::path& outDir,
                   const std::vector<std::string>& argv = {}) {
    const RunWriter writer(outDir);
    json manifest{{"schemaVersion", kSchemaVersion},
                  {"tool", "bdsdep"},
                  {"version", kVersion},
                  {"subcommand", sub},
                  {"seed", cfg.at("seed")},
                  {"config", cfg},
                  {"argv", argv},
                  {"timestamp", detail::utc_timestamp()}};
    writer.json_file("manifest.json", manifest);

    CommandResult r;
    if (sub == "simulate-forward") {
        r = detail::cmd_simulate_forward(cfg, writer);
    } else if (sub == "solve") {
        r = detail::cmd_solve(cfg, writer);
    } else if (sub == "verify") {
        r = detail::cmd_verify(cfg, writer);
    } else if (sub == "continuous-dependence") {
        r = detail::cmd_continuous_dependence(cfg, writer);
    } else if (sub == "feynman-kac") {
        r = detail::cmd_feynman_kac(cfg, writer);
    } else if (sub == "converge-study") {
        r = detail::cmd_converge_study(cfg, writer);
    } else {
        throw ValidationError("unknown subcommand '" + sub + "'");
    }
    json results{{"schemaVersion", kSchemaVersion}, {"subcommand", sub}, {"seed", cfg.at("seed")}};
    for (auto it = r.results.begin(); it != r.results.end(); ++it) results[it.key()] = it.value();
    writer.json_file("results.json", results);
    return r.passed ? kExitOk : kExitValidation;
}

/// Command-line entry point; args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
    CLI::App app{"Solver and verification harness for backward doubly stochastic differential equations with jumps",
                 "bdsdep"};
    app.require_subcommand(1);
    std::string configPath;
    std::string outDir = "bdsdep-out";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    static const std::map<std::string, std::string> help{
        {"simulate-forward", "simulate forward paths and their exit times"},
        {"solve", "solve the backward equation over independent outer runs"},
        {"verify", "assumption checkers, a priori bound and uniqueness probe"},
        {"continuous-dependence", "gap table for a perturbation family"},
        {"feynman-kac", "estimate u(t, x) on a grid against the reference solution"},
        {"converge-study", "path error against the reference under time refinement"}};
    for (const auto& name : subcommands()) {
        CLI::App* sc = app.add_subcommand(name, help.at(name));
        sc->add_option("--config", configPath, "JSON configuration file");
        sc->add_option("--seed", seed, "master seed (overrides the config)");
        sc->add_option("--out", outDir, "output directory");
        sc->add_option("--set", overrides, "override key=value (dotted key, JSON value); repeatable")
            ->allow_extra_args(false);
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        err << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        const json cfg = resolve_config(configPath, overrides, seed);
        const int code = execute(sub, cfg, outDir, args);
        if (code != kExitOk) err << "error: verification failed, see " << outDir << "/results.json\n";
        return code;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const nlohmann::json::exception& e) {
        err << "error: config: " << e.what() << '\n';
        return kExitValidation;
    }
}

}  // namespace bdsdep::cli
