#include "fedper/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fedper/rng.hpp"

namespace fedper {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kDataTag = 0x44415441ull;
constexpr std::uint64_t kSplitTag = 0x53504c54ull;
constexpr std::uint64_t kTrainTag = 0x5452ull;
constexpr std::uint64_t kPersTag = 0x5045ull;

const char* dataset_kind_name(DatasetSpec::Kind kind) {
    switch (kind) {
        case DatasetSpec::Kind::synthetic: return "synthetic";
        case DatasetSpec::Kind::threshold: return "threshold";
        case DatasetSpec::Kind::two_source: return "two-source";
        case DatasetSpec::Kind::file: return "file";
    }
    return "?";
}

DatasetSpec::Kind dataset_kind_from(const std::string& name) {
    if (name == "synthetic") return DatasetSpec::Kind::synthetic;
    if (name == "threshold") return DatasetSpec::Kind::threshold;
    if (name == "two-source") return DatasetSpec::Kind::two_source;
    if (name == "file") return DatasetSpec::Kind::file;
    throw std::invalid_argument("unknown dataset kind '" + name +
                                "' (synthetic, threshold, two-source, file)");
}

}  // namespace

std::vector<std::string> known_algorithms() {
    return {"local",    "fedavg",           "agnostic",        "hypcluster",
            "finetune", "dapper",           "mapper",          "fedavg+finetune",
            "fedavg+dapper", "fedavg+mapper", "agnostic+finetune", "agnostic+dapper",
            "agnostic+mapper", "hypcluster+finetune", "hypcluster+dapper", "hypcluster+mapper"};
}

AlgorithmSpec parse_algorithm(const std::string& name) {
    auto fail = [&]() -> AlgorithmSpec {
        std::string msg = "unknown algorithm '" + name + "'; valid names:";
        for (const auto& a : known_algorithms()) msg += " " + a;
        throw std::invalid_argument(msg);
    };
    const auto plus = name.find('+');
    if (plus == std::string::npos) {
        if (name == "local" || name == "fedavg" || name == "agnostic" || name == "hypcluster") {
            return {name, ""};
        }
        if (name == "finetune" || name == "dapper" || name == "mapper") return {"fedavg", name};
        return fail();
    }
    const std::string base = name.substr(0, plus);
    const std::string pers = name.substr(plus + 1);
    if ((base == "fedavg" || base == "agnostic" || base == "hypcluster") &&
        (pers == "finetune" || pers == "dapper" || pers == "mapper")) {
        return {base, pers};
    }
    return fail();
}

namespace {

json sgd_to_json(const SgdConfig& c) {
    return {{"step_size", c.step_size}, {"epochs", c.epochs},       {"steps", c.steps},
            {"batch_size", c.batch_size}, {"l2", c.l2},
            {"projection_radius", c.projection_radius}, {"average_iterates", c.average_iterates}};
}

SgdConfig sgd_from_json(const json& j, SgdConfig base = {}) {
    base.step_size = j.value("step_size", base.step_size);
    base.epochs = j.value("epochs", base.epochs);
    base.steps = j.value("steps", base.steps);
    base.batch_size = j.value("batch_size", base.batch_size);
    base.l2 = j.value("l2", base.l2);
    base.projection_radius = j.value("projection_radius", base.projection_radius);
    base.average_iterates = j.value("average_iterates", base.average_iterates);
    return base;
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["dataset"] = {{"kind", dataset_kind_name(cfg.dataset.kind)},
                    {"num_clients", cfg.dataset.num_clients},
                    {"num_classes", cfg.dataset.num_classes},
                    {"samples_per_client", cfg.dataset.samples_per_client},
                    {"train_path", cfg.dataset.train_path},
                    {"test_path", cfg.dataset.test_path}};
    j["algorithm"] = cfg.algorithm;
    j["fed"] = {{"rounds", cfg.fed.rounds},
                {"clients_per_round", cfg.fed.clients_per_round},
                {"client", sgd_to_json(cfg.fed.client)},
                {"weighting",
                 cfg.fed.weighting == FederatedConfig::Weighting::by_sample_count ? "by-sample-count"
                                                                                  : "uniform"},
                {"domain_step", cfg.fed.domain_step}};
    j["cluster"] = {{"num_clusters", cfg.cluster.num_clusters},
                    {"rounds", cfg.cluster.rounds},
                    {"clients_per_round", cfg.cluster.clients_per_round},
                    {"client", sgd_to_json(cfg.cluster.client)},
                    {"warm_start_epochs", cfg.cluster.warm_start_epochs},
                    {"restarts", cfg.cluster.restarts},
                    {"uniform_client_weights", cfg.cluster.uniform_client_weights}};
    j["dapper"] = {{"subsample_multiplier", cfg.dapper.subsample_multiplier},
                   {"lambda_grid", cfg.dapper.lambda_grid},
                   {"selection",
                    cfg.dapper.selection == DapperConfig::Selection::holdout ? "holdout"
                                                                             : "train-loss"},
                   {"holdout_fraction", cfg.dapper.holdout_fraction},
                   {"step_size", cfg.dapper.step_size},
                   {"steps_override", cfg.dapper.steps_override}};
    j["mapper"] = {{"lambda_grid", cfg.mapper.lambda_grid},
                   {"rounds", cfg.mapper.rounds},
                   {"global_step_size", cfg.mapper.global_step_size},
                   {"local", sgd_to_json(cfg.mapper.local)},
                   {"selection",
                    cfg.mapper.selection == MapperConfig::Selection::holdout ? "holdout"
                                                                             : "train-loss"},
                   {"holdout_fraction", cfg.mapper.holdout_fraction},
                   {"final_local_epochs", cfg.mapper.final_local_epochs},
                   {"init_scale", cfg.mapper.init_scale}};
    j["local_sgd"] = sgd_to_json(cfg.local_sgd);
    j["finetune_epochs"] = cfg.finetune_epochs;
    j["finetune_step_size"] = cfg.finetune_step_size;
    j["agnostic_domains"] = cfg.agnostic_domains;
    j["unseen_fraction"] = cfg.unseen_fraction;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    j["parallel"] = cfg.parallel;
    j["deterministic"] = cfg.deterministic;
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        cfg.dataset.kind = dataset_kind_from(d.value("kind", "synthetic"));
        cfg.dataset.num_clients = d.value("num_clients", cfg.dataset.num_clients);
        cfg.dataset.num_classes = d.value("num_classes", cfg.dataset.num_classes);
        cfg.dataset.samples_per_client =
            d.value("samples_per_client", cfg.dataset.samples_per_client);
        cfg.dataset.train_path = d.value("train_path", cfg.dataset.train_path);
        cfg.dataset.test_path = d.value("test_path", cfg.dataset.test_path);
    }
    cfg.algorithm = j.value("algorithm", cfg.algorithm);
    parse_algorithm(cfg.algorithm);
    if (j.contains("fed")) {
        const auto& f = j["fed"];
        cfg.fed.rounds = f.value("rounds", cfg.fed.rounds);
        cfg.fed.clients_per_round = f.value("clients_per_round", cfg.fed.clients_per_round);
        if (f.contains("client")) cfg.fed.client = sgd_from_json(f["client"], cfg.fed.client);
        if (f.contains("weighting")) {
            cfg.fed.weighting = f["weighting"] == "uniform"
                                    ? FederatedConfig::Weighting::uniform
                                    : FederatedConfig::Weighting::by_sample_count;
        }
        cfg.fed.domain_step = f.value("domain_step", cfg.fed.domain_step);
    }
    if (j.contains("cluster")) {
        const auto& c = j["cluster"];
        cfg.cluster.num_clusters = c.value("num_clusters", cfg.cluster.num_clusters);
        cfg.cluster.rounds = c.value("rounds", cfg.cluster.rounds);
        cfg.cluster.clients_per_round =
            c.value("clients_per_round", cfg.cluster.clients_per_round);
        if (c.contains("client")) cfg.cluster.client = sgd_from_json(c["client"], cfg.cluster.client);
        cfg.cluster.warm_start_epochs = c.value("warm_start_epochs", cfg.cluster.warm_start_epochs);
        cfg.cluster.restarts = c.value("restarts", cfg.cluster.restarts);
        cfg.cluster.uniform_client_weights =
            c.value("uniform_client_weights", cfg.cluster.uniform_client_weights);
    }
    if (j.contains("dapper")) {
        const auto& d = j["dapper"];
        cfg.dapper.subsample_multiplier =
            d.value("subsample_multiplier", cfg.dapper.subsample_multiplier);
        if (d.contains("lambda_grid")) {
            cfg.dapper.lambda_grid = d["lambda_grid"].get<std::vector<double>>();
        }
        if (d.contains("selection")) {
            cfg.dapper.selection = d["selection"] == "holdout" ? DapperConfig::Selection::holdout
                                                               : DapperConfig::Selection::train_loss;
        }
        cfg.dapper.holdout_fraction = d.value("holdout_fraction", cfg.dapper.holdout_fraction);
        cfg.dapper.step_size = d.value("step_size", cfg.dapper.step_size);
        cfg.dapper.steps_override = d.value("steps_override", cfg.dapper.steps_override);
    }
    if (j.contains("mapper")) {
        const auto& m = j["mapper"];
        if (m.contains("lambda_grid")) {
            cfg.mapper.lambda_grid = m["lambda_grid"].get<std::vector<double>>();
        }
        cfg.mapper.rounds = m.value("rounds", cfg.mapper.rounds);
        cfg.mapper.global_step_size = m.value("global_step_size", cfg.mapper.global_step_size);
        if (m.contains("local")) cfg.mapper.local = sgd_from_json(m["local"], cfg.mapper.local);
        if (m.contains("selection")) {
            cfg.mapper.selection = m["selection"] == "holdout" ? MapperConfig::Selection::holdout
                                                               : MapperConfig::Selection::train_loss;
        }
        cfg.mapper.holdout_fraction = m.value("holdout_fraction", cfg.mapper.holdout_fraction);
        cfg.mapper.final_local_epochs = m.value("final_local_epochs", cfg.mapper.final_local_epochs);
        cfg.mapper.init_scale = m.value("init_scale", cfg.mapper.init_scale);
    }
    if (j.contains("local_sgd")) cfg.local_sgd = sgd_from_json(j["local_sgd"], cfg.local_sgd);
    cfg.finetune_epochs = j.value("finetune_epochs", cfg.finetune_epochs);
    cfg.finetune_step_size = j.value("finetune_step_size", cfg.finetune_step_size);
    cfg.agnostic_domains = j.value("agnostic_domains", cfg.agnostic_domains);
    cfg.unseen_fraction = j.value("unseen_fraction", cfg.unseen_fraction);
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.parallel = j.value("parallel", cfg.parallel);
    cfg.deterministic = j.value("deterministic", cfg.deterministic);
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    j.erase("out_dir");
    j.erase("parallel");
    j.erase("seeds");
    const std::uint64_t h = fnv1a64(j.dump());
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

Population subset_population(const Population& pop, const std::vector<int>& indices) {
    std::vector<ClientDataset> clients;
    clients.reserve(indices.size());
    for (int idx : indices) clients.push_back(pop.clients[idx]);
    return make_population(pop.label_space, std::move(clients));
}

ExperimentData build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    const std::uint64_t data_seed = mix_seed(seed, {kDataTag});
    SplitPopulation split;
    switch (cfg.dataset.kind) {
        case DatasetSpec::Kind::synthetic: {
            SyntheticSpec spec;
            spec.num_clients = cfg.dataset.num_clients;
            spec.num_classes = cfg.dataset.num_classes;
            spec.samples_per_client = cfg.dataset.samples_per_client;
            spec.seed = data_seed;
            split = synthetic_split(spec);
            break;
        }
        case DatasetSpec::Kind::threshold:
            split = threshold_example_split(cfg.dataset.samples_per_client, data_seed);
            break;
        case DatasetSpec::Kind::two_source:
            split = two_source_split(cfg.dataset.num_clients, cfg.dataset.num_classes,
                                     cfg.dataset.samples_per_client, data_seed);
            break;
        case DatasetSpec::Kind::file: {
            split.train = load_population(cfg.dataset.train_path);
            split.test = cfg.dataset.test_path.empty() ? split.train
                                                       : load_population(cfg.dataset.test_path);
            break;
        }
    }
    ExperimentData data;
    const int p = static_cast<int>(split.train.clients.size());
    std::vector<int> order(p);
    std::iota(order.begin(), order.end(), 0);
    if (cfg.unseen_fraction > 0.0) {
        Rng rng = substream(data_seed, {kSplitTag});
        rng.shuffle(order);
        int n_unseen = static_cast<int>(cfg.unseen_fraction * p);
        n_unseen = std::clamp(n_unseen, 1, p - 1);
        data.unseen.assign(order.begin(), order.begin() + n_unseen);
        data.seen.assign(order.begin() + n_unseen, order.end());
        std::sort(data.unseen.begin(), data.unseen.end());
        std::sort(data.seen.begin(), data.seen.end());
    } else {
        data.seen = order;
    }
    data.train = std::move(split.train);
    data.test = std::move(split.test);
    return data;
}

namespace {

std::vector<int> natural_domains(const ExperimentConfig& cfg, const Population& pop,
                                 int* num_domains_out) {
    int num_domains = cfg.agnostic_domains;
    std::vector<int> map(pop.clients.size(), 0);
    if (num_domains <= 0) {
        switch (cfg.dataset.kind) {
            case DatasetSpec::Kind::synthetic: num_domains = 4; break;
            case DatasetSpec::Kind::threshold: num_domains = 2; break;
            case DatasetSpec::Kind::two_source: num_domains = 2; break;
            case DatasetSpec::Kind::file: num_domains = 1; break;
        }
    }
    num_domains = std::min<int>(num_domains, static_cast<int>(pop.clients.size()));
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        map[k] = static_cast<int>(k) % num_domains;
    }
    *num_domains_out = num_domains;
    return map;
}

// h_central and the dapper pool for one client under the trained base.
struct ClientBase {
    const Model* central = nullptr;
    int cluster = -1;
};

}  // namespace

TrainedPredictor train_algorithm(const ExperimentConfig& cfg, const ExperimentData& data,
                                 std::uint64_t seed) {
    const AlgorithmSpec algo = parse_algorithm(cfg.algorithm);
    const std::uint64_t train_seed = mix_seed(seed, {kTrainTag});
    const std::uint64_t pers_seed = mix_seed(seed, {kPersTag});
    const Population seen_train = subset_population(data.train, data.seen);

    TrainedPredictor out;

    if (algo.base == "local") {
        out.kind = TrainedPredictor::Kind::pmap;
        out.pmap.global = initial_model(data.train);
        for (const auto& client : data.train.clients) {
            SgdConfig local = cfg.local_sgd;
            local.seed = mix_seed(train_seed, {fnv1a64(client.client_id)});
            out.pmap.entries.push_back(
                {client.client_id,
                 train_local(client, data.train.label_space.num_classes, local), 1.0});
        }
        return out;
    }

    Model base_model;
    ClusterState base_state;
    const bool clustered = algo.base == "hypcluster";
    if (algo.base == "fedavg") {
        FederatedConfig fed = cfg.fed;
        fed.seed = train_seed;
        base_model = train_fedavg(seen_train, fed);
    } else if (algo.base == "agnostic") {
        FederatedConfig fed = cfg.fed;
        fed.seed = train_seed;
        int num_domains = 1;
        const auto domains = natural_domains(cfg, seen_train, &num_domains);
        base_model = train_agnostic(seen_train, domains, num_domains, fed).model;
    } else {
        HypClusterConfig hc = cfg.cluster;
        hc.seed = train_seed;
        base_state = train_hypcluster(seen_train, hc);
        // Unseen clients get their cluster from their own training data.
        for (int idx : data.unseen) {
            const auto& client = data.train.clients[idx];
            base_state.assignment[client.client_id] =
                assign_clusters(base_state.models, std::span<const ClientDataset>(&client, 1))[0];
        }
    }

    if (algo.personalization.empty()) {
        if (clustered) {
            out.kind = TrainedPredictor::Kind::cluster;
            out.cluster = std::move(base_state);
        } else {
            out.kind = TrainedPredictor::Kind::single;
            out.model = std::move(base_model);
        }
        return out;
    }

    auto client_base = [&](const std::string& id) -> ClientBase {
        if (!clustered) return {&base_model, -1};
        const int c = base_state.assignment.at(id);
        return {&base_state.models[c], c};
    };
    // Pool of pooled seen-training data per cluster (or one global pool).
    std::vector<std::vector<int>> cluster_members(clustered ? base_state.num_clusters() : 1);
    for (int idx : data.seen) {
        const auto& id = data.train.clients[idx].client_id;
        cluster_members[clustered ? base_state.assignment.at(id) : 0].push_back(idx);
    }

    out.kind = TrainedPredictor::Kind::pmap;
    out.pmap.global = clustered ? base_state.models[0] : base_model;

    if (algo.personalization == "mapper") {
        MapperConfig mc = cfg.mapper;
        mc.seed = pers_seed;
        if (!clustered) {
            const Model global = mapper_train_global(seen_train, mc, &base_model);
            out.pmap.global = global;
            for (const auto& client : data.train.clients) {
                out.pmap.entries.push_back(mapper_personalize(global, client, mc));
            }
        } else {
            // Per-cluster mapper globals; the interpolated predictor is then
            // folded into each entry so one map covers every cluster. The
            // probability-space fold is exact for featureless models only.
            if (data.train.feature_dim > 0) {
                throw std::invalid_argument(
                    "hypcluster+mapper composition supports featureless populations only");
            }
            std::vector<Model> globals;
            for (int c = 0; c < base_state.num_clusters(); ++c) {
                if (cluster_members[c].empty()) {
                    globals.push_back(base_state.models[c]);
                    continue;
                }
                MapperConfig per = mc;
                per.seed = mix_seed(pers_seed, {static_cast<std::uint64_t>(c)});
                if (per.rounds == 0) per.rounds = 50 * static_cast<int>(cluster_members[c].size());
                const Population sub = subset_population(data.train, cluster_members[c]);
                globals.push_back(mapper_train_global(sub, per, &base_state.models[c]));
            }
            for (const auto& client : data.train.clients) {
                const int c = base_state.assignment.at(client.client_id);
                PersonalizationEntry entry = mapper_personalize(globals[c], client, mc);
                const auto mixed = interpolate_predict(entry.local, globals[c],
                                                       InterpolationWeight(entry.lambda));
                entry.local = distribution_to_model(mixed);
                entry.lambda = 1.0;
                out.pmap.entries.push_back(std::move(entry));
            }
        }
        return out;
    }

    for (const auto& client : data.train.clients) {
        const ClientBase cb = client_base(client.client_id);
        const std::uint64_t client_seed = mix_seed(pers_seed, {fnv1a64(client.client_id)});
        if (algo.personalization == "finetune") {
            out.pmap.entries.push_back(
                {client.client_id,
                 finetune(*cb.central, client, cfg.finetune_epochs, cfg.finetune_step_size,
                          client_seed),
                 1.0});
        } else {  // dapper
            const auto& members = clustered && !cluster_members[cb.cluster].empty()
                                      ? cluster_members[cb.cluster]
                                      : cluster_members[0];
            ClientDataset pool;
            try {
                pool = pooled_dataset(data.train, client.client_id, members);
            } catch (const std::invalid_argument&) {
                pool = pooled_dataset(data.train, "", members);  // lone-client cluster
            }
            DapperConfig dc = cfg.dapper;
            dc.seed = client_seed;
            out.pmap.entries.push_back(
                {client.client_id, dapper(*cb.central, client, pool, dc).model, 1.0});
        }
    }
    return out;
}

namespace {

EvalReport evaluate_predictor(const TrainedPredictor& pred, const Population& test) {
    switch (pred.kind) {
        case TrainedPredictor::Kind::single: return evaluate(pred.model, test);
        case TrainedPredictor::Kind::cluster: return evaluate(pred.cluster, test);
        case TrainedPredictor::Kind::pmap: return evaluate(pred.pmap, test);
    }
    throw std::logic_error("unreachable");
}

void attach_metadata(EvalReport& report, const ExperimentConfig& cfg, std::uint64_t seed,
                     const char* split) {
    report.metadata["algorithm"] = cfg.algorithm;
    report.metadata["seed"] = std::to_string(seed);
    report.metadata["config_hash"] = config_hash(cfg);
    report.metadata["dataset"] = dataset_kind_name(cfg.dataset.kind);
    report.metadata["split"] = split;
}

}  // namespace

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("run_experiment needs at least one seed");
    namespace fs = std::filesystem;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        const std::string path = (fs::path(cfg.out_dir) / "config.json").string();
        const std::string tmp = path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            json j = config_to_json(cfg);
            j["config_hash"] = config_hash(cfg);
            out << j.dump(2) << '\n';
        }
        if (std::rename(tmp.c_str(), path.c_str()) != 0) {
            throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
        }
    }

    std::vector<RunResult> results(cfg.seeds.size());
    parallel_for(static_cast<std::int64_t>(cfg.seeds.size()), cfg.parallel, [&](std::int64_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        const ExperimentData data = build_dataset(cfg, seed);
        const TrainedPredictor pred = train_algorithm(cfg, data, seed);

        RunResult r;
        r.seed = seed;
        r.seen_test = evaluate_predictor(pred, subset_population(data.test, data.seen));
        attach_metadata(r.seen_test, cfg, seed, "seen");
        if (!data.unseen.empty()) {
            r.unseen_test = evaluate_predictor(pred, subset_population(data.test, data.unseen));
            attach_metadata(*r.unseen_test, cfg, seed, "unseen");
        }

        if (!cfg.out_dir.empty()) {
            const std::string stem =
                cfg.out_dir + "/" + cfg.algorithm + "-seed" + std::to_string(seed);
            write_eval_report(r.seen_test, stem + "-seen.jsonl");
            if (r.unseen_test) write_eval_report(*r.unseen_test, stem + "-unseen.jsonl");
            switch (pred.kind) {
                case TrainedPredictor::Kind::single: {
                    ClusterState single;
                    single.models.push_back(pred.model);
                    save_cluster_state(single, stem + "-model.bin");
                    break;
                }
                case TrainedPredictor::Kind::cluster:
                    save_cluster_state(pred.cluster, stem + "-clusters.bin");
                    break;
                case TrainedPredictor::Kind::pmap:
                    save_personalization_map(pred.pmap, stem + "-pmap.bin");
                    break;
            }
        }
        results[i] = std::move(r);
    });
    return results;
}

namespace {

void apply_axis(ExperimentConfig& cfg, const std::string& axis, double value) {
    if (axis == "m_k") {
        cfg.dataset.samples_per_client = static_cast<int>(value);
    } else if (axis == "q") {
        cfg.cluster.num_clusters = static_cast<int>(value);
    } else if (axis == "r") {
        cfg.dapper.subsample_multiplier = static_cast<int>(value);
    } else if (axis == "rounds") {
        cfg.fed.rounds = static_cast<int>(value);
        cfg.cluster.rounds = static_cast<int>(value);
    } else if (axis == "lambda_points") {
        const int n = std::max(2, static_cast<int>(value));
        std::vector<double> grid(n);
        for (int i = 0; i < n; ++i) grid[i] = static_cast<double>(i) / (n - 1);
        cfg.dapper.lambda_grid = grid;
        cfg.mapper.lambda_grid = grid;
    } else {
        throw std::invalid_argument("unknown sweep axis '" + axis +
                                    "' (m_k, q, r, rounds, lambda_points)");
    }
}

}  // namespace

std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<std::string>& algorithms,
                            const std::string& axis, const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("sweep needs at least one axis value");
    if (algorithms.empty()) throw std::invalid_argument("sweep needs at least one algorithm");
    for (const auto& a : algorithms) parse_algorithm(a);
    {
        ExperimentConfig probe = base;
        apply_axis(probe, axis, values.front());  // validate the axis up front
    }

    struct Task {
        std::string algorithm;
        double value;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const auto& algorithm : algorithms) {
        for (double value : values) {
            for (std::uint64_t seed : base.seeds) tasks.push_back({algorithm, value, seed});
        }
    }
    std::vector<std::vector<SweepRow>> partial(tasks.size());
    parallel_for(static_cast<std::int64_t>(tasks.size()), base.parallel, [&](std::int64_t i) {
        const Task& task = tasks[i];
        ExperimentConfig cfg = base;
        cfg.algorithm = task.algorithm;
        cfg.out_dir.clear();
        cfg.parallel = 1;
        cfg.seeds = {task.seed};
        apply_axis(cfg, axis, task.value);
        const auto results = run_experiment(cfg);
        for (const auto& m : results.front().seen_test.per_client) {
            partial[i].push_back(
                {task.algorithm, axis, task.value, task.seed, m.client_id, m.loss, m.accuracy});
        }
    });
    std::vector<SweepRow> rows;
    for (auto& p : partial) rows.insert(rows.end(), p.begin(), p.end());
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "algorithm,axis,value,seed,client,loss,accuracy\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.algorithm << ',' << r.axis << ',' << r.value << ',' << r.seed << ',' << r.client
            << ',' << r.loss << ',' << r.accuracy << '\n';
    }
    return out.str();
}

double sweep_mean_loss(const std::vector<SweepRow>& rows, const std::string& algorithm,
                       double value) {
    double total = 0.0;
    std::int64_t n = 0;
    for (const auto& r : rows) {
        if (r.algorithm == algorithm && r.value == value) {
            total += r.loss;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("no sweep rows for '" + algorithm + "'");
    return total / static_cast<double>(n);
}

ExperimentConfig recipe(const std::string& name) {
    ExperimentConfig cfg;
    if (name == "table1") {
        cfg.dataset.kind = DatasetSpec::Kind::synthetic;
        cfg.dataset.num_clients = 100;
        cfg.dataset.num_classes = 50;
        cfg.dataset.samples_per_client = 100;
        cfg.algorithm = "hypcluster";
        cfg.cluster.num_clusters = 4;
        cfg.cluster.rounds = 6;
        cfg.cluster.clients_per_round = 25;
        cfg.cluster.restarts = 5;
        cfg.cluster.warm_start_epochs = 1;
        cfg.cluster.client = SgdConfig{.step_size = 0.07, .epochs = 1, .batch_size = 50};
        cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        return cfg;
    }
    if (name == "figure2") {
        cfg.dataset.kind = DatasetSpec::Kind::synthetic;
        cfg.dataset.num_clients = 100;
        cfg.dataset.num_classes = 50;
        cfg.dataset.samples_per_client = 100;
        cfg.algorithm = "fedavg";
        cfg.fed.rounds = 30;
        cfg.fed.clients_per_round = 25;
        cfg.fed.client = SgdConfig{.step_size = 0.3, .epochs = 1, .batch_size = 10};
        cfg.cluster.num_clusters = 4;
        cfg.cluster.rounds = 30;
        cfg.cluster.clients_per_round = 25;
        cfg.cluster.restarts = 5;
        cfg.cluster.warm_start_epochs = 2;
        cfg.cluster.client = SgdConfig{.step_size = 0.3, .epochs = 1, .batch_size = 10};
        cfg.local_sgd = SgdConfig{.step_size = 0.9, .epochs = 1000, .batch_size = 0};
        cfg.finetune_epochs = 5;
        cfg.finetune_step_size = 0.05;
        cfg.dapper.selection = DapperConfig::Selection::holdout;
        cfg.dapper.step_size = 0.05;
        cfg.mapper.selection = MapperConfig::Selection::holdout;
        cfg.mapper.rounds = 300;
        cfg.mapper.local = SgdConfig{.step_size = 0.1, .epochs = 2, .batch_size = 10};
        cfg.mapper.final_local_epochs = 5;
        cfg.mapper.global_step_size = 0.3;
        cfg.seeds = {1, 2, 3};
        return cfg;
    }
    if (name == "threshold") {
        cfg.dataset.kind = DatasetSpec::Kind::threshold;
        cfg.dataset.num_clients = 2;
        cfg.dataset.num_classes = 2;
        cfg.dataset.samples_per_client = 10000;
        cfg.algorithm = "hypcluster";
        cfg.fed.rounds = 20;
        cfg.fed.clients_per_round = 2;
        cfg.fed.client = SgdConfig{.step_size = 0.5, .epochs = 1, .batch_size = 20};
        cfg.cluster.num_clusters = 2;
        cfg.cluster.rounds = 20;
        cfg.cluster.clients_per_round = 2;
        cfg.cluster.restarts = 5;
        cfg.cluster.warm_start_epochs = 1;
        cfg.cluster.client = SgdConfig{.step_size = 0.5, .epochs = 1, .batch_size = 20};
        cfg.seeds = {1};
        return cfg;
    }
    if (name == "two-source") {
        cfg.dataset.kind = DatasetSpec::Kind::two_source;
        cfg.dataset.num_clients = 20;
        cfg.dataset.num_classes = 50;
        cfg.dataset.samples_per_client = 10;
        cfg.algorithm = "mapper";
        cfg.fed.rounds = 30;
        cfg.fed.clients_per_round = 20;
        cfg.fed.client = SgdConfig{.step_size = 0.3, .epochs = 1, .batch_size = 5};
        cfg.mapper.selection = MapperConfig::Selection::holdout;
        cfg.mapper.rounds = 800;
        cfg.mapper.local = SgdConfig{.step_size = 0.9, .epochs = 200, .batch_size = 0};
        cfg.mapper.final_local_epochs = 800;
        cfg.mapper.global_step_size = 0.05;
        cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
        return cfg;
    }
    throw std::invalid_argument("unknown recipe '" + name +
                                "' (table1, figure2, threshold, two-source)");
}

void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));
    if (workers == 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace fedper
