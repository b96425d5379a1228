#pragma once

#include "amp.hpp"
#include "coeffs.hpp"
#include "numerics.hpp"
#include "priors.hpp"
#include "replica.hpp"
#include "sampling.hpp"
#include "se.hpp"
#include "spectrum.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qamp {

/** Bad or inconsistent experiment configuration (exit code 1). */
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;

inline const std::vector<std::string>& algorithm_names() {
    static const std::vector<std::string> v{"pca", "amp", "bamp", "bamp-empirical", "em"};
    return v;
}

inline const std::vector<std::string>& theory_names() {
    static const std::vector<std::string> v{"replica", "baseline-se", "bamp-se", "mismatch", "pca-formula"};
    return v;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

// Shortest representation that parses back to the same double.
inline std::string exact(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& v) {
    double x = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
    return x;
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
    I x = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
    return x;
}

inline std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

}  // namespace detail

/**
 * "2,2.5,3" or "a:b:step" (inclusive, step > 0). Each entry must be finite.
 */
inline std::vector<double> parse_lambda_grid(const std::string& s) {
    std::vector<double> out;
    const auto parts = detail::split(s, ',');
    for (const auto& p : parts) {
        if (p.find(':') != std::string::npos) {
            const auto r = detail::split(p, ':');
            if (r.size() != 3) throw ConfigError("lambda: range must be lo:hi:step");
            const double lo = detail::parse_double("lambda", r[0]);
            const double hi = detail::parse_double("lambda", r[1]);
            const double st = detail::parse_double("lambda", r[2]);
            if (!(st > 0.0) || !(hi >= lo)) throw ConfigError("lambda: range needs hi >= lo and step > 0");
            const long cnt = std::lround(std::floor((hi - lo) / st + 1e-9));
            if (cnt > 10000) throw ConfigError("lambda: range too long");
            for (long i = 0; i <= cnt; ++i) out.push_back(lo + st * static_cast<double>(i));
        } else {
            out.push_back(detail::parse_double("lambda", p));
        }
    }
    return out;
}

struct ExperimentConfig {
    double mu = 0.0;
    std::vector<double> lambdas{2.5};
    int n = 2000;
    int trials = 10;
    std::string prior = "rademacher";
    double epsilon = 0.9;
    int T = 10;
    long mc_samples = 200000;
    std::uint64_t seed = 1;
    std::vector<std::string> algorithms{"amp", "bamp"};
    std::vector<std::string> theory{"replica", "baseline-se", "bamp-se"};
    std::string output;

    bool operator==(const ExperimentConfig&) const = default;

    /**
     * mu in [0, 1]; lambdas nonempty, finite, in [0, 100]; 2 <= n <= 20000;
     * 1 <= trials <= 10000; epsilon in (0, 1]; 1 <= T <= 50; mc_samples in
     * [1000, 1e8]; known prior and method names, no repeats.
     */
    void validate() const {
        if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0, 1]");
        if (lambdas.empty()) throw ConfigError("lambda grid is empty");
        for (double l : lambdas)
            if (!(l >= 0.0 && l <= 100.0)) throw ConfigError("lambda values must lie in [0, 100]");
        if (n < 2 || n > 20000) throw ConfigError("n must lie in [2, 20000]");
        if (trials < 1 || trials > 10000) throw ConfigError("trials must lie in [1, 10000]");
        if (prior != "rademacher" && prior != "gaussian") throw ConfigError("prior must be rademacher or gaussian");
        if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
        if (T < 1 || T > 50) throw ConfigError("T must lie in [1, 50]");
        if (mc_samples < 1000 || mc_samples > 100000000L) throw ConfigError("mc_samples must lie in [1000, 1e8]");
        auto check = [](const std::vector<std::string>& got, const std::vector<std::string>& known,
                        const std::string& what) {
            for (std::size_t i = 0; i < got.size(); ++i) {
                if (std::find(known.begin(), known.end(), got[i]) == known.end())
                    throw ConfigError(what + ": unknown method '" + got[i] + "'");
                if (std::find(got.begin(), got.begin() + i, got[i]) != got.begin() + i)
                    throw ConfigError(what + ": repeated method '" + got[i] + "'");
            }
        };
        check(algorithms, algorithm_names(), "algorithms");
        check(theory, theory_names(), "theory");
    }

    /** Ordered key=value pairs; doubles in shortest round-trip form. */
    std::vector<std::pair<std::string, std::string>> items() const {
        std::vector<std::string> ls;
        for (double l : lambdas) ls.push_back(detail::exact(l));
        return {{"mu", detail::exact(mu)},
                {"lambda", detail::join(ls)},
                {"n", std::to_string(n)},
                {"trials", std::to_string(trials)},
                {"prior", prior},
                {"epsilon", detail::exact(epsilon)},
                {"T", std::to_string(T)},
                {"mc_samples", std::to_string(mc_samples)},
                {"seed", std::to_string(seed)},
                {"algorithms", detail::join(algorithms)},
                {"theory", detail::join(theory)},
                {"output", output}};
    }

    std::string serialize() const {
        std::string s;
        for (const auto& [k, v] : items()) s += k + "=" + v + "\n";
        return s;
    }

    /** Single-line form used in CSV header comments. */
    std::string header_line(const std::string& command) const {
        std::string s = "# qamp " + command;
        for (const auto& [k, v] : items()) s += " " + k + "=" + v;
        return s;
    }

    void set(const std::string& key, const std::string& raw) {
        const std::string v = detail::trim(raw);
        if (key == "mu") mu = detail::parse_double(key, v);
        else if (key == "lambda") lambdas = parse_lambda_grid(v);
        else if (key == "n") n = detail::parse_int<int>(key, v);
        else if (key == "trials") trials = detail::parse_int<int>(key, v);
        else if (key == "prior") prior = v;
        else if (key == "epsilon") epsilon = detail::parse_double(key, v);
        else if (key == "T") T = detail::parse_int<int>(key, v);
        else if (key == "mc_samples") mc_samples = detail::parse_int<long>(key, v);
        else if (key == "seed") seed = detail::parse_int<std::uint64_t>(key, v);
        else if (key == "algorithms") algorithms = v == "none" ? std::vector<std::string>{} : detail::split(v, ',');
        else if (key == "theory") theory = v == "none" ? std::vector<std::string>{} : detail::split(v, ',');
        else if (key == "output") output = v;
        else throw ConfigError("unknown config key '" + key + "'");
    }

    /** Lines "key=value"; blank lines and '#' comments skipped. Keys not present keep defaults. */
    static ExperimentConfig parse(std::istream& is) {
        ExperimentConfig c;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
            c.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        }
        return c;
    }

    static ExperimentConfig parse(const std::string& text) {
        std::istringstream is(text);
        return parse(is);
    }

    bool has_algorithm(const std::string& a) const {
        return std::find(algorithms.begin(), algorithms.end(), a) != algorithms.end();
    }
    bool has_theory(const std::string& a) const { return std::find(theory.begin(), theory.end(), a) != theory.end(); }
};

// ---------------------------------------------------------------------------
// Commands. Each writes one CSV (12 significant digits) to `os` after the
// header comment and returns an exit code.

namespace detail {

struct CsvOut {
    std::ostream& os;
    explicit CsvOut(std::ostream& o) : os(o) { os << std::setprecision(12); }
};

inline FreeCumulants cumulants_for(const EnsembleParams& p, int T) {
    return ensemble_cumulants(p, std::max(30, se_required_kmax(3, T)));
}

inline SeOptions se_options(const ExperimentConfig& c) {
    SeOptions o;
    o.epsilon = c.epsilon;
    o.T = c.T;
    o.mc_samples = c.mc_samples;
    o.seed = SeedScheme{c.seed, 0}.seed("se-mc");
    return o;
}

inline AmpOptions amp_options(const ExperimentConfig& c) {
    AmpOptions o;
    o.T = c.T;
    o.epsilon = c.epsilon;
    return o;
}

}  // namespace detail

/** (x, rho) on 1000 equispaced points spanning [-2a, 2a]. */
inline int cmd_density(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    detail::CsvOut out(os);
    os << "x,rho\n";
    const int pts = 1000;
    for (int i = 0; i < pts; ++i) {
        const double x = -p.edge() + 2.0 * p.edge() * i / (pts - 1);
        os << x << ',' << density(x, p) << '\n';
    }
    return kExitOk;
}

/** Free cumulants and moments up to kmax. */
inline int cmd_cumulants(const ExperimentConfig& cfg, int kmax, std::ostream& os) {
    if (kmax < 1 || kmax > 200) throw ConfigError("kmax must lie in [1, 200]");
    const auto p = make_params(cfg.mu);
    const auto cum = ensemble_cumulants(p, kmax);
    const auto m = moments(p, kmax);
    detail::CsvOut out(os);
    os << "k,moment,free_cumulant\n";
    for (int k = 1; k <= kmax; ++k) os << k << ',' << m[k] << ',' << cum(k) << '\n';
    return kExitOk;
}

/**
 * Ranked eigenvalues of Y and of J(Y) for trial 0 at the first lambda. J(Y) is a
 * polynomial in Y, so its eigenvalues are J applied to those of Y.
 */
inline int cmd_spectrum(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const double lambda = cfg.lambdas.front();
    const auto inst = make_instance(cfg.n, lambda, parse_prior(cfg.prior), p, SeedScheme{cfg.seed, 0});
    const Eigen::VectorXd ey = symmetric_eigenvalues(inst.y);
    const auto j = optimal_coeffs(p.mu, p.gamma, lambda);
    std::vector<double> ej(ey.size());
    for (Eigen::Index i = 0; i < ey.size(); ++i) ej[i] = j(ey(i));
    std::sort(ej.begin(), ej.end(), std::greater<double>());
    detail::CsvOut out(os);
    os << "rank,eig_y,eig_j\n";
    for (Eigen::Index i = 0; i < ey.size(); ++i) os << i + 1 << ',' << ey(i) << ',' << ej[i] << '\n';
    return kExitOk;
}

inline int cmd_replica(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    detail::CsvOut out(os);
    os << "lambda,m,tilde_v,hat_m,mmse,iterations\n";
    for (double l : cfg.lambdas) {
        const auto s = bo_fixed_point(l, prior, p);
        os << l << ',' << s.m << ',' << s.tilde_v << ',' << s.hat_m << ',' << s.mmse << ',' << s.iterations << '\n';
    }
    return kExitOk;
}

inline int cmd_baseline_se(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    const auto cum = detail::cumulants_for(p, cfg.T);
    detail::CsvOut out(os);
    os << "lambda,delta,sigma,mse,iterations\n";
    for (double l : cfg.lambdas) {
        if (l == 0.0) {
            os << l << ",0,0,0.5,0\n";
            continue;
        }
        const auto b = baseline_fixed_point(l, prior, cum);
        os << l << ',' << b.delta_star << ',' << b.sigma_star << ',' << b.mse << ',' << b.iterations << '\n';
    }
    return kExitOk;
}

/** Full trajectories; with `tables` set (single lambda only) also writes the theory tables. */
inline int cmd_bamp_se(const ExperimentConfig& cfg, std::ostream& os, std::ostream* tables = nullptr) {
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    if (tables && cfg.lambdas.size() != 1) throw ConfigError("--tables needs a single lambda");
    detail::CsvOut out(os);
    os << "lambda,t,mu_t,sigma_t2,overlap_t,mse_t,diverged\n";
    for (double l : cfg.lambdas) {
        const auto tr = se_run(l, prior, p, detail::se_options(cfg));
        for (const auto& s : tr.steps)
            os << l << ',' << s.t << ',' << s.mu_t << ',' << s.sigma2 << ',' << s.overlap << ',' << s.mse << ','
               << (tr.diverged ? 1 : 0) << '\n';
        if (tables) write_tables(*tables, tr);
    }
    return kExitOk;
}

inline int cmd_mismatch(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    detail::CsvOut out(os);
    os << "lambda,m,q,v,mse,iterations\n";
    for (double l : cfg.lambdas) {
        const auto s = mismatched_fixed_point(l, prior, p);
        os << l << ',' << s.m << ',' << s.q << ',' << s.v << ',' << s.mse << ',' << s.iterations << '\n';
    }
    return kExitOk;
}

/** Outcome of one algorithm on one instance. */
struct TrialResult {
    double mse = std::numeric_limits<double>::quiet_NaN();
    double overlap = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    bool diverged = false;
    bool failed = false;  // numerical exception
};

/** Theory value for one (lambda, method). overlap is the cosine with x*. */
struct TheoryResult {
    double mse = std::numeric_limits<double>::quiet_NaN();
    double overlap = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    bool diverged = false;
};

namespace detail {

/** Per-lambda state shared by the algorithms of a sweep. */
struct LambdaContext {
    double lambda = 0.0;
    PreprocessCoeffs coeffs;
    std::optional<SeTrajectory> se;  // bamp-se, computed on demand
    std::string se_error;
};

inline const SeTrajectory& ensure_se(LambdaContext& lc, const ExperimentConfig& cfg, const Prior& prior,
                                     const EnsembleParams& p) {
    if (!lc.se) {
        if (!lc.se_error.empty()) throw NumericalError(lc.se_error);
        try {
            lc.se = se_run(lc.lambda, prior, p, se_options(cfg));
        } catch (const std::exception& e) {
            lc.se_error = e.what();
            throw;
        }
    }
    return *lc.se;
}

inline TrialResult from_trace(const AmpTrace& tr) {
    TrialResult r;
    r.mse = tr.final_mse();
    r.overlap = tr.final_overlap();
    r.converged = tr.converged;
    r.diverged = tr.diverged;
    return r;
}

inline TrialResult run_algorithm(const std::string& method, const SpikedInstance& inst, LambdaContext& lc,
                                 const ExperimentConfig& cfg, const Prior& prior, const EnsembleParams& p,
                                 const FreeCumulants& cum, const SeedScheme& seeds) {
    TrialResult r;
    try {
        const AmpOptions aopt = amp_options(cfg);
        Rng rng = seeds.stream("amp-init");
        if (method == "pca") {
            const auto pc = spectral_pca(inst, cum);
            r.mse = pc.mse;
            r.overlap = std::sqrt(pc.overlap2);
            r.converged = true;
        } else if (method == "amp") {
            r = from_trace(run_baseline_amp(inst, prior, cum, aopt, rng));
        } else if (method == "bamp") {
            const auto& se = ensure_se(lc, cfg, prior, p);
            r = from_trace(run_bamp(inst, lc.coeffs, prior, cum, aopt, rng, BampMode::Theory, &se));
        } else if (method == "bamp-empirical") {
            r = from_trace(run_bamp(inst, lc.coeffs, prior, cum, aopt, rng, BampMode::Empirical));
        } else if (method == "em") {
            EmOptions eo;
            eo.inner_T = cfg.T;
            eo.epsilon = cfg.epsilon;
            Rng erng = seeds.stream("em");
            const auto em = em_learn_coeffs(inst, prior, cum, PreprocessCoeffs{{1.0, 0.0, 0.0}}, eo, erng);
            r = from_trace(run_bamp(inst, em.coeffs, prior, cum, aopt, rng, BampMode::Empirical));
        } else {
            throw ConfigError("unknown algorithm '" + method + "'");
        }
    } catch (const NumericalError&) {
        r = TrialResult{};
        r.failed = true;
    } catch (const DomainError&) {
        r = TrialResult{};
        r.failed = true;
    }
    return r;
}

inline TheoryResult run_theory(const std::string& method, LambdaContext& lc, const ExperimentConfig& cfg,
                               const Prior& prior, const EnsembleParams& p, const FreeCumulants& cum) {
    TheoryResult r;
    const double l = lc.lambda;
    if (method == "replica") {
        const auto s = bo_fixed_point(l, prior, p);
        r.mse = s.mmse;
        r.overlap = std::sqrt(std::max(0.0, s.m));
    } else if (method == "baseline-se") {
        if (l == 0.0) {
            r.mse = 0.5;
            r.overlap = 0.0;
        } else {
            const auto b = baseline_fixed_point(l, prior, cum);
            r.mse = b.mse;
            r.overlap = std::sqrt(std::max(0.0, b.delta_star));
        }
    } else if (method == "bamp-se") {
        const auto& tr = ensure_se(lc, cfg, prior, p);
        r.mse = tr.final_step().mse;
        r.overlap = tr.final_step().overlap;
        r.diverged = tr.diverged;
    } else if (method == "mismatch") {
        const auto s = mismatched_fixed_point(l, prior, p);
        r.mse = s.mse;
        r.overlap = s.q > 0.0 ? s.m / std::sqrt(s.q) : 0.0;
    } else if (method == "pca-formula") {
        const auto pc = pca_overlap_and_mse(l, cum);
        r.mse = pc.mse;
        r.overlap = std::sqrt(pc.cos2);
    } else {
        throw ConfigError("unknown theory method '" + method + "'");
    }
    r.converged = !r.diverged;
    return r;
}

// Config order restricted to the canonical method order.
inline std::vector<std::string> ordered(const std::vector<std::string>& chosen, const std::vector<std::string>& all) {
    std::vector<std::string> out;
    for (const auto& m : all)
        if (std::find(chosen.begin(), chosen.end(), m) != chosen.end()) out.push_back(m);
    return out;
}

/**
 * Runs every (trial, lambda, algorithm) with one noise draw and one signal per
 * trial shared across lambdas. Calls sink(lambda_index, trial, method, result).
 */
template <class Sink>
void for_each_trial(const ExperimentConfig& cfg, std::vector<LambdaContext>& ctx, const EnsembleParams& p,
                    const FreeCumulants& cum, Sink&& sink) {
    const auto prior = parse_prior(cfg.prior);
    const auto algs = ordered(cfg.algorithms, algorithm_names());
    if (algs.empty()) return;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        const SeedScheme seeds{cfg.seed, static_cast<std::uint64_t>(trial)};
        const auto noise = make_noise(cfg.n, p, seeds);
        const auto x = sample_signal(cfg.n, prior, seeds);
        for (std::size_t li = 0; li < ctx.size(); ++li) {
            const auto inst = assemble_instance(noise, x, ctx[li].lambda);
            for (const auto& a : algs) sink(li, trial, a, run_algorithm(a, inst, ctx[li], cfg, prior, p, cum, seeds));
        }
    }
}

inline std::vector<LambdaContext> make_contexts(const ExperimentConfig& cfg, const EnsembleParams& p) {
    std::vector<LambdaContext> ctx;
    for (double l : cfg.lambdas) {
        LambdaContext lc;
        lc.lambda = l;
        lc.coeffs = optimal_coeffs(p.mu, p.gamma, l);
        ctx.push_back(std::move(lc));
    }
    return ctx;
}

}  // namespace detail

/** Per-trial rows for every requested algorithm. */
inline int cmd_run(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const auto cum = detail::cumulants_for(p, cfg.T);
    auto ctx = detail::make_contexts(cfg, p);
    detail::CsvOut out(os);
    os << "lambda,trial,method,mse,overlap,converged,diverged,failed\n";
    bool any_failed = false;
    detail::for_each_trial(cfg, ctx, p, cum, [&](std::size_t li, int trial, const std::string& m, const TrialResult& r) {
        any_failed = any_failed || r.failed;
        os << ctx[li].lambda << ',' << trial << ',' << m << ',' << r.mse << ',' << r.overlap << ','
           << int(r.converged) << ',' << int(r.diverged) << ',' << int(r.failed) << '\n';
    });
    return any_failed ? kExitNumerical : kExitOk;
}

/**
 * Aggregate rows (lambda, method, mean_mse, std_mse, mean_overlap, n_converged,
 * n_diverged). Theory rows come first for each lambda. Diverged trials are
 * counted in n_diverged and left out of the means; a failed solver or trial
 * yields NaN entries and the run goes on, ending with exit code 2.
 */
inline int cmd_sweep(const ExperimentConfig& cfg, std::ostream& os) {
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    const auto cum = detail::cumulants_for(p, cfg.T);
    auto ctx = detail::make_contexts(cfg, p);
    const auto theory = detail::ordered(cfg.theory, theory_names());
    const auto algs = detail::ordered(cfg.algorithms, algorithm_names());

    bool any_failed = false;
    std::vector<std::vector<TheoryResult>> th(ctx.size());
    for (std::size_t li = 0; li < ctx.size(); ++li)
        for (const auto& m : theory) {
            try {
                th[li].push_back(detail::run_theory(m, ctx[li], cfg, prior, p, cum));
            } catch (const NumericalError&) {
                th[li].push_back(TheoryResult{});
                any_failed = true;
            } catch (const DomainError&) {
                th[li].push_back(TheoryResult{});
                any_failed = true;
            }
        }

    struct Acc {
        double sum = 0.0, sum2 = 0.0, sum_ov = 0.0;
        int used = 0, converged = 0, diverged = 0;
    };
    std::vector<std::map<std::string, Acc>> acc(ctx.size());
    detail::for_each_trial(cfg, ctx, p, cum, [&](std::size_t li, int, const std::string& m, const TrialResult& r) {
        auto& a = acc[li][m];
        if (r.failed) {
            any_failed = true;
            return;
        }
        if (r.converged) ++a.converged;
        if (r.diverged) {
            ++a.diverged;
            return;
        }
        a.sum += r.mse;
        a.sum2 += r.mse * r.mse;
        a.sum_ov += r.overlap;
        ++a.used;
    });

    const double nan = std::numeric_limits<double>::quiet_NaN();
    detail::CsvOut out(os);
    os << "lambda,method,mean_mse,std_mse,mean_overlap,n_converged,n_diverged\n";
    for (std::size_t li = 0; li < ctx.size(); ++li) {
        const double l = ctx[li].lambda;
        for (std::size_t i = 0; i < theory.size(); ++i) {
            const auto& r = th[li][i];
            os << l << ',' << theory[i] << ',' << r.mse << ",0," << r.overlap << ',' << int(r.converged) << ','
               << int(r.diverged) << '\n';
        }
        for (const auto& m : algs) {
            const Acc a = acc[li][m];
            const double mean = a.used ? a.sum / a.used : nan;
            const double var = a.used > 1 ? std::max(0.0, (a.sum2 - a.used * mean * mean) / (a.used - 1)) : 0.0;
            os << l << ',' << m << ',' << mean << ',' << (a.used ? std::sqrt(var) : nan) << ','
               << (a.used ? a.sum_ov / a.used : nan) << ',' << a.converged << ',' << a.diverged << '\n';
        }
    }
    return any_failed ? kExitNumerical : kExitOk;
}

/** EM trace on trial 0 at the first lambda, starting from J(Y) = Y. */
inline int cmd_em(const ExperimentConfig& cfg, std::ostream& os, int steps = 20, double zeta = 0.05) {
    if (steps < 1) throw ConfigError("em steps must be positive");
    if (!(zeta >= 0.0)) throw ConfigError("em zeta must be nonnegative");
    const auto p = make_params(cfg.mu);
    const auto prior = parse_prior(cfg.prior);
    const auto cum = detail::cumulants_for(p, cfg.T);
    const SeedScheme seeds{cfg.seed, 0};
    const auto inst = make_instance(cfg.n, cfg.lambdas.front(), prior, p, seeds);
    EmOptions eo;
    eo.steps = steps;
    eo.zeta = zeta;
    eo.inner_T = cfg.T;
    eo.epsilon = cfg.epsilon;
    Rng rng = seeds.stream("em");
    const auto em = em_learn_coeffs(inst, prior, cum, PreprocessCoeffs{{1.0, 0.0, 0.0}}, eo, rng);
    detail::CsvOut out(os);
    os << "step,c1,c2,c3,g1,g2,g3,zeta,v_bar,chi_bar,mse,rejected\n";
    for (std::size_t s = 0; s < em.trace.size(); ++s) {
        const auto& r = em.trace[s];
        os << s;
        for (double c : r.coeffs) os << ',' << c;
        for (double g : r.gradient) os << ',' << g;
        os << ',' << r.zeta << ',' << r.v_bar << ',' << r.chi_bar << ',' << r.mse << ',' << int(r.rejected) << '\n';
    }
    return kExitOk;
}

}  // namespace qamp
