// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "bdsdep/bdsdep.hpp"
#include "bdsdep/cli.hpp"
#include "bdsdep/oracle.hpp"

using namespace bdsdep;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

BackwardConfig solver(std::size_t innerPaths) {
    BackwardConfig cfg;
    cfg.innerPaths = innerPaths;
    return cfg;
}

Outcome zero_identity() {
    const Problem pb = builtin_driver("zero");
    const TimeGrid grid = TimeGrid::make(0.0, pb.T, 100);
    const Stopwatch sw;
    const BackwardSolution sol = solve_backward(pb.forward, pb.driver, pb.terminal, solver(10000), grid,
                                                generate_backward_slice(grid, 1, 1, 0), 2);
    const double secs = sw.seconds();
    double pGap = 0.0;
    double qk = 0.0;
    for (std::size_t i = 0; i < sol.P.size(); ++i) pGap = std::max(pGap, (sol.P[i] - sol.P.back()).cwiseAbs().maxCoeff());
    for (std::size_t i = 0; i < sol.Q.size(); ++i)
        qk = std::max({qk, sol.Q[i].cwiseAbs().maxCoeff(), sol.K[i].cwiseAbs().maxCoeff()});
    const bool ok = pGap <= 1e-10 && qk <= 1e-10 && secs < 1.0;
    return {ok, "max|P-xi|=" + fmt(pGap) + " max|Q|,|K|=" + fmt(qk) + " runtime=" + fmt(secs, 3) +
                    "s (steps=100, innerPaths=10000)"};
}

Outcome linear_oracle() {
    const Problem pb = builtin_driver("linear-scalar");
    const Stopwatch sw;
    const OuterSummary s = solve_outer(pb, solver(10000), 100, 1, 1);
    const double secs = sw.seconds();
    const double exact = oracle::analytic_linear(1.0, 1.0, 1.0, 0.0);
    const double rel = std::abs(s.mean[0] - exact) / exact;
    return {rel < 0.02 && secs < 30.0,
            "P0=" + fmt(s.mean[0], 10) + " e=" + fmt(exact, 10) + " relErr=" + fmt(rel) + " runtime=" + fmt(secs, 3) + "s"};
}

Outcome apriori() {
    double worst = 0.0;
    bool ok = true;
    for (const auto& name : catalog_names()) {
        const Problem pb = builtin_driver(name);
        const OuterSummary s = solve_outer(pb, solver(2000), 50, 10, 31);
        for (const auto& run : s.runs) {
            const double bound = apriori_bound(pb.driver, run.xiSecondMoment);
            ok = ok && run.norms.total() <= bound;
            worst = std::max(worst, run.norms.total() / bound);
        }
    }
    return {ok, "4 problems x 10 runs, worst norms/bound=" + fmt(worst) + " (steps=50, innerPaths=2000)"};
}

Outcome uniqueness() {
    std::string detail;
    bool ok = true;
    for (const auto& name : catalog_names()) {
        const Problem pb = builtin_driver(name);
        const UniquenessReport rep = uniqueness_probe(pb, solver(2000), 50, 41, 1);
        ok = ok && rep.passed(1e-8);
        detail += name + (pb.mollifyOrder ? "(n=" + std::to_string(*pb.mollifyOrder) + ")" : "") +
                  " relGap=" + fmt(rep.relGap, 3) + "; ";
    }
    return {ok, detail + "tol 1e-8"};
}

Outcome continuous_dependence_check() {
    const std::vector<double> levels{1, 2, 4, 8, 16};
    const BackwardConfig cfg = solver(2000);
    const auto constant = continuous_dependence(builtin_driver("zero"), PerturbationFamily::ConstantShift, levels, cfg,
                                                50, 2, 51);
    double constErr = 0.0;
    for (const auto& r : constant.rows) constErr = std::max(constErr, std::abs(r.supGap * r.m * r.m - 1.0));
    const auto shift = continuous_dependence(builtin_driver("linear-scalar"), PerturbationFamily::DriverShift, levels,
                                             cfg, 50, 2, 52);
    const double ratio = shift.rows.back().supGap / shift.rows.front().supGap;
    const auto terminal = continuous_dependence(builtin_driver("jump-coupled"), PerturbationFamily::TerminalPerturbation,
                                                levels, cfg, 50, 2, 53);
    bool qkMonotone = true;
    for (std::size_t i = 1; i < terminal.rows.size(); ++i)
        qkMonotone = qkMonotone && terminal.rows[i].qkGap < terminal.rows[i - 1].qkGap;
    // the shift families move P by a deterministic amount, so Q and K do not move at all
    double shiftQk = 0.0;
    for (const auto* t : {&constant, &shift})
        for (const auto& r : t->rows) shiftQk = std::max(shiftQk, r.qkGap);
    const bool ok = constErr <= 1e-12 && ratio < 1.0 / 64.0 && qkMonotone && shiftQk <= 1e-20;
    return {ok, "constant-shift max|supGap*m^2-1|=" + fmt(constErr, 3) + "; driver-shift supGap(16)/supGap(1)=" +
                    fmt(ratio) + " (<1/64); terminal-perturbation qkGap " + fmt(terminal.rows.front().qkGap, 3) +
                    " -> " + fmt(terminal.rows.back().qkGap, 3) + (qkMonotone ? " strictly decreasing" : " NOT monotone") +
                    "; shift-family qkGap max=" + fmt(shiftQk, 3)};
}

Outcome heat() {
    const FKProblem fk = builtin_fk("heat-quadratic");
    const Stopwatch sw;
    const UEstimate u = estimate_u(fk, 0.0, Eigen::VectorXd::Zero(1), solver(10000), 100, 5, 61);
    const double secs = sw.seconds();
    const double rel = std::abs(u.mean[0] - 1.0);
    return {rel < 0.05 && secs < 120.0, "u(0,0)=" + fmt(u.mean[0]) + " stderr=" + fmt(u.stdError[0], 3) +
                                            " relErr=" + fmt(rel) + " runtime=" + fmt(secs, 3) + "s"};
}

Outcome jump_linear() {
    const FKProblem fk = builtin_fk("jump-linear");
    double worstZ = 0.0;
    bool ok = true;
    for (double t : {0.0, 0.5, 0.9}) {
        for (double x : {-1.0, 0.0, 1.0}) {
            const Eigen::VectorXd pt = Eigen::VectorXd::Constant(1, x);
            const UEstimate u = estimate_u(fk, t, pt, solver(4000), 50, 10, 71);
            const double err = std::abs(u.mean[0] - x);
            const double z = err / u.stdError[0];
            ok = ok && u.stdError[0] > 0.0 && err < 5.0 * u.stdError[0];
            worstZ = std::max(worstZ, z);
        }
    }
    return {ok, "9 points t in {0,0.5,0.9} x {-1,0,1}, worst |u-x|/stderr=" + fmt(worstZ, 3) +
                    " (10 outer runs, steps=50, innerPaths=4000)"};
}

Outcome mollifier() {
    boost::math::quadrature::tanh_sinh<double> ts;
    double normErr = 0.0;
    for (int dim = 1; dim <= 3; ++dim) {
        const double radial = ts.integrate(
            [dim](double r) {
                const double s = (1.0 - r) * (1.0 + r);
                return s > 0.0 ? std::pow(r, dim - 1) * std::exp(-1.0 / s) : 0.0;
            },
            0.0, 1.0);
        const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * dim) / std::tgamma(0.5 * dim);
        normErr = std::max(normErr, std::abs(bump_normalizer(static_cast<std::size_t>(dim)) * sphere * radial - 1.0));
    }
    MollifierConfig mc;
    normErr = std::max(normErr, std::abs(build_kernel_table(1, 1, mc, false).rawMass - 1.0));
    normErr = std::max(normErr, std::abs(build_kernel_table(1, 1, mc, true).rawMass - 1.0));

    DriverSpec affine = builtin_driver("zero").driver;
    affine.f1 = [](double t, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                   const Eigen::MatrixXd&) { return Eigen::VectorXd(0.3 * p - 1.7 * q.col(0) + Eigen::VectorXd::Constant(1, t)); };
    double affineErr = 0.0;
    for (int order : {1, 10, 100}) {
        mc.order = order;
        const DriverSpec m = mollify_driver(affine, mc);
        for (double p : {-5.0, 0.0, 0.3, 12.0}) {
            const Eigen::VectorXd pv = Eigen::VectorXd::Constant(1, p);
            const Eigen::MatrixXd q = Eigen::MatrixXd::Constant(1, 1, 0.4);
            const Eigen::MatrixXd k = Eigen::MatrixXd::Zero(1, 1);
            affineErr = std::max(affineErr, std::abs(m.f1(0.5, pv, pv, q, k)[0] - affine.f1(0.5, pv, pv, q, k)[0]));
        }
    }

    const DriverSpec raw = builtin_driver("dissipative-sqrtlog").driver;
    std::string lips;
    bool finite = true;
    for (int order : {1, 10, 100}) {
        mc.order = order;
        const double L = estimate_lipschitz(mollify_driver(raw, mc), 20000, 81);
        finite = finite && std::isfinite(L);
        lips += " n=" + std::to_string(order) + ":" + fmt(L, 4);
    }
    const bool ok = normErr <= 1e-6 && affineErr <= 1e-8 && finite;
    return {ok, "normalization err=" + fmt(normErr, 3) + " affine err=" + fmt(affineErr, 3) + " Lipschitz" + lips};
}

Outcome bihari() {
    const double zLin = bihari_bound(0.0, BihariModulus{ConcaveModulus::linear(1.0), 1.0, 1.0}, 1.0, 3.0);
    const double zLog = bihari_bound(0.0, BihariModulus{ConcaveModulus::log_modulus(), 1.0, 1.0}, 1.0, 3.0);
    const double e = bihari_bound(1.0, BihariModulus{ConcaveModulus::linear(1.0), 1.0, 0.0}, 1.0, 1.0);
    const double err = std::abs(e - std::exp(1.0));
    return {zLin == 0.0 && zLog == 0.0 && err < 1e-8,
            "x(0)=0 -> linear " + fmt(zLin) + ", log-modulus " + fmt(zLog) + "; x'=x, x(0)=1 -> " + fmt(e, 16) +
                " |err|=" + fmt(err, 3)};
}

Outcome convergence() {
    const ConvergenceStudy st = convergence_study(builtin_fk("heat-quadratic"), {25, 50, 100}, solver(10000), {1, 2, 3}, 4);
    std::string detail;
    for (std::size_t s = 0; s < st.decreasing.size(); ++s) {
        detail += "seed" + std::to_string(s) + ":";
        for (const auto& r : st.rows)
            if (r.seedIndex == s) detail += " " + fmt(r.pathError, 4);
        detail += st.decreasing[s] ? " (decreasing); " : " (not decreasing); ";
    }
    return {2 * st.decreasing_count() > st.decreasing.size(),
            detail + std::to_string(st.decreasing_count()) + "/3 seeds"};
}

Outcome reproducibility() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "bdsdep_acceptance_repro";
    fs::remove_all(root);
    const std::vector<std::string> small{"steps=10", "outerRuns=2", "solver.innerPaths=200"};
    const std::vector<std::vector<std::string>> extra{
        {"forward.paths=50"},
        {"problem=jump-coupled"},
        {"verify.checkerSamples=2000", "verify.runs=2"},
        {"continuousDependence.family=terminal-perturbation", "continuousDependence.levels=[1,2,4]"},
        {"feynmanKac.problem=jump-linear", "feynmanKac.t=[0.0,0.5]", "feynmanKac.x=[[0.0],[1.0]]"},
        {"converge.steps=[5,10]", "converge.seeds=[1,2]", "converge.referenceFactor=2"}};
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < cli::subcommands().size(); ++i) {
        const std::string& sub = cli::subcommands()[i];
        std::vector<std::string> ov = small;
        ov.insert(ov.end(), extra[i].begin(), extra[i].end());
        const auto cfg = cli::resolve_config("", ov, 2024);
        const int a = cli::execute(sub, cfg, root / (sub + "-a"));
        const int b = cli::execute(sub, cfg, root / (sub + "-b"));
        const bool same = a == b && slurp(root / (sub + "-a") / "results.json") ==
                                        slurp(root / (sub + "-b") / "results.json");
        ok = ok && same;
        detail += sub + (same ? " identical; " : " DIFFERS; ");
    }
    fs::remove_all(root);
    return {ok, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"zero-driver identity", zero_identity},
        {"linear oracle", linear_oracle},
        {"a priori bound", apriori},
        {"uniqueness probe", uniqueness},
        {"continuous dependence", continuous_dependence_check},
        {"Feynman-Kac heat-quadratic", heat},
        {"Feynman-Kac jump-linear", jump_linear},
        {"mollifier suite", mollifier},
        {"Bihari bound", bihari},
        {"convergence study", convergence},
        {"reproducibility", reproducibility}};
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const Stopwatch sw;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.passed ? 0 : 1;
        std::cout << (o.passed ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
                  << " [" << fmt(sw.seconds(), 3) << "s]" << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
