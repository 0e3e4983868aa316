// fedper command-line interface.
//
// Subcommands: generate-data, train, evaluate, sweep, bounds, selftest.
// Precedence for settings: command line > config file > built-in defaults.
// FEDPER_OUT_ROOT sets the default output root when --out is not given.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedper/analysis.hpp"
#include "fedper/experiment.hpp"
#include "fedper/hypcluster.hpp"
#include "fedper/modelinterp.hpp"
#include "fedper/selftest.hpp"
#include "fedper/synthdata.hpp"

using namespace fedper;
using nlohmann::json;

namespace {

std::string default_out_root() {
    if (const char* env = std::getenv("FEDPER_OUT_ROOT"); env != nullptr && *env != '\0') {
        return env;
    }
    return "runs";
}

std::vector<double> parse_value_list(const std::string& csv) {
    std::vector<double> values;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(std::stod(item));
    }
    return values;
}

std::vector<std::string> parse_name_list(const std::string& csv) {
    std::vector<std::string> names;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) names.push_back(item);
    }
    return names;
}

// Peeks at the artifact magic to pick the right loader.
std::string artifact_magic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    return std::string(magic, in ? 4 : 0);
}

int cmd_generate_data(const std::string& kind, int clients, int classes, int samples,
                      std::uint64_t seed, const std::string& out_dir) {
    namespace fs = std::filesystem;
    SplitPopulation split;
    if (kind == "synthetic") {
        SyntheticSpec spec;
        spec.num_clients = clients;
        spec.num_classes = classes;
        spec.samples_per_client = samples;
        spec.seed = seed;
        split = synthetic_split(spec);
    } else if (kind == "threshold") {
        split = threshold_example_split(samples, seed);
    } else if (kind == "two-source") {
        split = two_source_split(clients, classes, samples, seed);
    } else {
        throw std::invalid_argument("unknown dataset kind '" + kind +
                                    "' (synthetic, threshold, two-source)");
    }
    fs::create_directories(out_dir);
    const auto train_path = (fs::path(out_dir) / "train.jsonl").string();
    const auto test_path = (fs::path(out_dir) / "test.jsonl").string();
    save_population(split.train, train_path);
    save_population(split.test, test_path);
    std::cout << "wrote " << train_path << " (" << split.train.total_count << " examples, "
              << split.train.clients.size() << " clients)\n";
    std::cout << "wrote " << test_path << " (" << split.test.total_count << " examples)\n";
    return 0;
}

int cmd_train(ExperimentConfig cfg) {
    const auto results = run_experiment(cfg);
    std::cout << "algorithm " << cfg.algorithm << ", config hash " << config_hash(cfg) << "\n";
    for (const auto& r : results) {
        std::cout << "seed " << r.seed << " (seen clients)\n"
                  << summary_table(r.seen_test);
        if (r.unseen_test) {
            std::cout << "seed " << r.seed << " (unseen clients)\n"
                      << summary_table(*r.unseen_test);
        }
    }
    if (!cfg.out_dir.empty()) std::cout << "outputs under " << cfg.out_dir << "\n";
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out_path) {
    const Population test = load_population(data_path);
    EvalReport report;
    const std::string magic = artifact_magic(model_path);
    if (magic == "FPPM") {
        report = evaluate(load_personalization_map(model_path), test);
    } else if (magic == "FPCS") {
        const auto state = load_cluster_state(model_path);
        report = state.models.size() == 1 && state.assignment.empty()
                     ? evaluate(state.models[0], test)
                     : evaluate(state, test);
    } else {
        throw std::runtime_error("'" + model_path + "' is not a fedper model artifact");
    }
    report.metadata["model"] = model_path;
    report.metadata["data"] = data_path;
    std::cout << summary_table(report);
    if (!out_path.empty()) {
        write_eval_report(report, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::vector<std::string>& algorithms,
              const std::string& axis, const std::vector<double>& values,
              const std::string& out_dir) {
    namespace fs = std::filesystem;
    const auto rows = sweep(cfg, algorithms, axis, values);
    std::cout << "algorithm";
    for (double v : values) std::cout << '\t' << axis << '=' << v;
    std::cout << '\n';
    for (const auto& a : algorithms) {
        std::cout << a;
        for (double v : values) std::cout << '\t' << sweep_mean_loss(rows, a, v);
        std::cout << '\n';
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const auto path = (fs::path(out_dir) / "sweep.csv").string();
        const std::string tmp = path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            out << sweep_to_csv(rows);
        }
        if (std::rename(tmp.c_str(), path.c_str()) != 0) {
            throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
        }
        std::cout << "wrote " << path << " (" << rows.size() << " rows)\n";
    }
    return 0;
}

int cmd_selftest() {
    bool all = true;
    for (const auto& suite : run_invariant_suites()) {
        std::cout << (suite.pass ? "[PASS] " : "[FAIL] ") << suite.name << "\n";
        all = all && suite.pass;
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedper: personalization strategies for federated-style learning"};
    app.require_subcommand(1);

    // generate-data ------------------------------------------------------
    auto* gen = app.add_subcommand("generate-data", "generate a synthetic population");
    std::string gen_kind = "synthetic";
    int gen_clients = 100, gen_classes = 50, gen_samples = 100;
    std::uint64_t gen_seed = 1;
    std::string gen_out;
    gen->add_option("--kind", gen_kind, "synthetic | threshold | two-source");
    gen->add_option("--clients", gen_clients, "number of clients");
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--samples", gen_samples, "samples per client");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");

    // train ----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train an algorithm and report test metrics");
    std::string train_config, train_recipe, train_algorithm, train_out;
    std::uint64_t train_seed = 0;
    int train_parallel = 0;
    bool train_deterministic = false;
    int train_q = 0, train_mk = 0;
    double train_unseen = -1.0;
    train->add_option("--config", train_config, "JSON config file");
    train->add_option("--recipe", train_recipe, "table1 | figure2 | threshold | two-source");
    train->add_option("--algorithm", train_algorithm, "algorithm or base+personalization");
    train->add_option("--seed", train_seed, "single seed override");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--parallel", train_parallel, "worker threads across seeds");
    train->add_flag("--deterministic", train_deterministic, "force deterministic mode");
    train->add_option("--q", train_q, "cluster count override");
    train->add_option("--m-k", train_mk, "samples per client override");
    train->add_option("--unseen-fraction", train_unseen, "fraction of clients held out");

    // evaluate ---------------------------------------------------------------
    auto* eval = app.add_subcommand("evaluate", "evaluate a saved model on a dataset file");
    std::string eval_model, eval_data, eval_out;
    eval->add_option("--model", eval_model, "model / clusters / pmap artifact")->required();
    eval->add_option("--data", eval_data, "dataset (.jsonl)")->required();
    eval->add_option("--out", eval_out, "write the eval report here");

    // sweep -------------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "run an axis sweep over algorithms");
    std::string sw_config, sw_recipe, sw_axis = "m_k", sw_values = "10,30,100,300,1000";
    std::string sw_algorithms = "local,fedavg,hypcluster,finetune,dapper,mapper", sw_out;
    int sw_parallel = 0;
    sw->add_option("--config", sw_config, "JSON config file");
    sw->add_option("--recipe", sw_recipe, "base recipe name");
    sw->add_option("--axis", sw_axis, "m_k | q | r | rounds | lambda_points");
    sw->add_option("--values", sw_values, "comma-separated axis values");
    sw->add_option("--algorithms", sw_algorithms, "comma-separated algorithm names");
    sw->add_option("--out", sw_out, "directory for sweep.csv");
    sw->add_option("--parallel", sw_parallel, "worker threads");

    // bounds -------------------------------------------------------------------
    auto* bounds = app.add_subcommand("bounds", "evaluate the plug-in bound formulas");
    std::string bound_which = "cluster";
    double b_d = 50.0, b_delta = 0.1, b_lambda = 0.5, b_disc = 0.0, b_dl = 0.0, b_L = 1.0;
    std::int64_t b_m = 10000, b_mk = 100, b_mc = 10000, b_p = 100, b_q = 2;
    bounds->add_option("--which", bound_which, "local | global | cluster | interp | model-interp");
    bounds->add_option("--pseudo-dim", b_d, "pseudo-dimension");
    bounds->add_option("--pseudo-dim-local", b_dl, "local pseudo-dimension (model-interp)");
    bounds->add_option("--lipschitz", b_L, "Lipschitz constant (model-interp)");
    bounds->add_option("--delta", b_delta, "confidence parameter");
    bounds->add_option("--m", b_m, "total sample count");
    bounds->add_option("--m-k", b_mk, "client sample count");
    bounds->add_option("--m-c", b_mc, "central sample count");
    bounds->add_option("--p", b_p, "number of clients");
    bounds->add_option("--q", b_q, "number of clusters");
    bounds->add_option("--lambda", b_lambda, "interpolation weight");
    bounds->add_option("--disc", b_disc, "discrepancy term (global)");

    // selftest -----------------------------------------------------------------
    app.add_subcommand("selftest", "run the built-in invariant suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            if (gen_out.empty()) gen_out = default_out_root() + "/data";
            return cmd_generate_data(gen_kind, gen_clients, gen_classes, gen_samples, gen_seed,
                                     gen_out);
        }
        if (train->parsed()) {
            ExperimentConfig cfg;
            if (!train_recipe.empty()) cfg = recipe(train_recipe);
            if (!train_config.empty()) cfg = load_config_file(train_config);
            if (!train_algorithm.empty()) cfg.algorithm = train_algorithm;
            if (train_seed != 0) cfg.seeds = {train_seed};
            if (train_parallel > 0) cfg.parallel = train_parallel;
            if (train_deterministic) cfg.deterministic = true;
            if (train_q > 0) cfg.cluster.num_clusters = train_q;
            if (train_mk > 0) cfg.dataset.samples_per_client = train_mk;
            if (train_unseen >= 0.0) cfg.unseen_fraction = train_unseen;
            if (!train_out.empty()) {
                cfg.out_dir = train_out;
            } else if (cfg.out_dir.empty()) {
                cfg.out_dir = default_out_root() + "/" + cfg.algorithm + "-" + config_hash(cfg);
            }
            parse_algorithm(cfg.algorithm);
            return cmd_train(cfg);
        }
        if (eval->parsed()) return cmd_evaluate(eval_model, eval_data, eval_out);
        if (sw->parsed()) {
            ExperimentConfig cfg = recipe(sw_recipe.empty() ? "figure2" : sw_recipe);
            if (!sw_config.empty()) cfg = load_config_file(sw_config);
            if (sw_parallel > 0) cfg.parallel = sw_parallel;
            return cmd_sweep(cfg, parse_name_list(sw_algorithms), sw_axis,
                             parse_value_list(sw_values), sw_out);
        }
        if (bounds->parsed()) {
            double value = 0.0;
            if (bound_which == "local") {
                value = bound_local(b_d, b_mk, b_delta);
            } else if (bound_which == "global") {
                value = bound_global(b_d, b_m, b_delta, b_disc);
            } else if (bound_which == "cluster") {
                value = bound_cluster(b_p, b_q, b_m, b_d, b_delta);
            } else if (bound_which == "interp") {
                value = bound_interp(b_lambda, b_mk, b_mc, b_d, b_delta);
            } else if (bound_which == "model-interp") {
                value = bound_model_interp(b_d, b_dl > 0 ? b_dl : b_d, b_p, b_m, b_L, b_delta);
            } else {
                throw std::invalid_argument(
                    "unknown bound '" + bound_which +
                    "' (local, global, cluster, interp, model-interp)");
            }
            std::cout << bound_which << " bound (formal plug-in value): " << value << "\n";
            return 0;
        }
        if (app.get_subcommand("selftest")->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
