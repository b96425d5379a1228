// qamp: experiment harness for the quartic-noise spiked matrix model.
#include <qamp/cli.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace qamp;

namespace {

struct Flags {
    std::string config_file;
    std::string mu, lambda, n, trials, prior, epsilon, T, mc_samples, seed, algorithms, theory, output;
    bool dump_config = false;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config_file, "key=value config file");
    sub->add_option("--mu", f.mu, "ensemble parameter in [0,1]");
    sub->add_option("--lambda", f.lambda, "SNR grid: 2,2.5,3 or lo:hi:step");
    sub->add_option("--n", f.n, "matrix size");
    sub->add_option("--trials", f.trials, "independent trials");
    sub->add_option("--prior", f.prior, "rademacher | gaussian");
    sub->add_option("--epsilon", f.epsilon, "initial correlation of u^1 with x*");
    sub->add_option("--T", f.T, "iterations");
    sub->add_option("--mc-samples", f.mc_samples, "state evolution Monte-Carlo samples");
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--algorithms", f.algorithms, "subset of pca,amp,bamp,bamp-empirical,em");
    sub->add_option("--theory", f.theory, "subset of replica,baseline-se,bamp-se,mismatch,pca-formula");
    sub->add_option("-o,--output", f.output, "output CSV ('-' for stdout)");
    sub->add_flag("--dump-config", f.dump_config, "print the resolved config and exit");
}

ExperimentConfig resolve(const Flags& f) {
    ExperimentConfig c;
    if (!f.config_file.empty()) {
        std::ifstream is(f.config_file);
        if (!is) throw ConfigError("cannot read config file " + f.config_file);
        c = ExperimentConfig::parse(is);
    }
    const std::pair<const char*, const std::string*> overrides[] = {
        {"mu", &f.mu},           {"lambda", &f.lambda},         {"n", &f.n},
        {"trials", &f.trials},   {"prior", &f.prior},           {"epsilon", &f.epsilon},
        {"T", &f.T},             {"mc_samples", &f.mc_samples}, {"seed", &f.seed},
        {"algorithms", &f.algorithms}, {"theory", &f.theory},   {"output", &f.output}};
    for (const auto& [k, v] : overrides)
        if (!v->empty()) c.set(k, *v);
    c.validate();
    return c;
}

// Empty output: QAMP_OUTPUT_DIR/<command>.csv, or stdout if the variable is unset.
// Relative paths are taken inside QAMP_OUTPUT_DIR when it is set.
std::string output_path(const ExperimentConfig& c, const std::string& command) {
    const char* dir = std::getenv("QAMP_OUTPUT_DIR");
    if (c.output == "-") return "";
    if (c.output.empty()) return dir && *dir ? (fs::path(dir) / (command + ".csv")).string() : "";
    fs::path p(c.output);
    if (p.is_relative() && dir && *dir) p = fs::path(dir) / p;
    return p.string();
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        std::cout.flush();
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + path);
    os << text;
    if (!os) throw ConfigError("write failed: " + path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qamp: spiked matrix estimation under quartic rotationally invariant noise"};
    app.require_subcommand(1);
    Flags f;
    int kmax = 12;
    int em_steps = 20;
    double em_zeta = 0.05;
    std::string tables;

    const char* names[] = {"density", "spectrum", "cumulants", "replica", "baseline-se",
                           "bamp-se", "mismatch", "run",       "sweep",   "em"};
    const char* help[] = {"asymptotic spectral density (x, rho)",
                          "ranked eigenvalues of Y and J(Y) for one instance",
                          "moments and free cumulants",
                          "Bayes-optimal replica fixed point per lambda",
                          "baseline AMP state evolution fixed point per lambda",
                          "BAMP state evolution trajectories",
                          "mismatched (Gaussian-likelihood) replica fixed point",
                          "per-trial algorithm results",
                          "theory and simulation summary per lambda",
                          "EM coefficient learning trace"};
    std::vector<CLI::App*> subs;
    for (int i = 0; i < 10; ++i) {
        auto* s = app.add_subcommand(names[i], help[i]);
        add_common(s, f);
        subs.push_back(s);
    }
    subs[2]->add_option("--kmax", kmax, "highest cumulant order");
    subs[5]->add_option("--tables", tables, "write state evolution tables (single lambda)");
    subs[9]->add_option("--steps", em_steps, "EM steps");
    subs[9]->add_option("--zeta", em_zeta, "EM step size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    std::string command;
    for (int i = 0; i < 10; ++i)
        if (subs[i]->parsed()) command = names[i];

    try {
        const ExperimentConfig cfg = resolve(f);
        if (f.dump_config) {
            std::cout << cfg.serialize();
            return kExitOk;
        }
        std::string header = cfg.header_line(command);
        if (command == "cumulants") header += " kmax=" + std::to_string(kmax);
        if (command == "em") {
            std::ostringstream z;
            z.precision(17);
            z << em_zeta;
            header += " steps=" + std::to_string(em_steps) + " zeta=" + z.str();
        }
        std::ostringstream body;
        body << header << '\n';
        std::ostringstream tab;
        int rc = kExitOk;
        if (command == "density") rc = cmd_density(cfg, body);
        else if (command == "spectrum") rc = cmd_spectrum(cfg, body);
        else if (command == "cumulants") rc = cmd_cumulants(cfg, kmax, body);
        else if (command == "replica") rc = cmd_replica(cfg, body);
        else if (command == "baseline-se") rc = cmd_baseline_se(cfg, body);
        else if (command == "bamp-se") rc = cmd_bamp_se(cfg, body, tables.empty() ? nullptr : &tab);
        else if (command == "mismatch") rc = cmd_mismatch(cfg, body);
        else if (command == "run") rc = cmd_run(cfg, body);
        else if (command == "sweep") rc = cmd_sweep(cfg, body);
        else if (command == "em") rc = cmd_em(cfg, body, em_steps, em_zeta);
        emit(output_path(cfg, command), body.str());
        if (!tables.empty()) emit(tables, tab.str());
        if (rc == kExitNumerical) std::cerr << "qamp: some solvers or trials failed; see NaN rows\n";
        return rc;
    } catch (const ConfigError& e) {
        std::cerr << "qamp: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "qamp: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DomainError& e) {
        std::cerr << "qamp: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "qamp: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
}
