// Experiment orchestration: configuration, training dispatch across the
// personalization algorithms, seen/unseen evaluation, sweeps, and recipes
// for the bundled synthetic studies.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedper/analysis.hpp"
#include "fedper/baselines.hpp"
#include "fedper/core.hpp"
#include "fedper/datainterp.hpp"
#include "fedper/hypcluster.hpp"
#include "fedper/modelinterp.hpp"
#include "fedper/synthdata.hpp"

namespace fedper {

struct DatasetSpec {
    enum class Kind { synthetic, threshold, two_source, file };
    Kind kind = Kind::synthetic;
    int num_clients = 100;
    int num_classes = 50;
    int samples_per_client = 100;
    std::string train_path;  // Kind::file
    std::string test_path;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::string algorithm = "fedavg";  // base or "base+personalization"
    FederatedConfig fed;               // fedavg / agnostic base
    HypClusterConfig cluster;          // hypcluster base
    DapperConfig dapper;               // +dapper
    MapperConfig mapper;               // +mapper
    SgdConfig local_sgd;               // "local" algorithm
    int finetune_epochs = 5;
    double finetune_step_size = 0.05;
    int agnostic_domains = 0;  // 0 means the dataset's natural domains
    double unseen_fraction = 0.0;
    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir;
    int parallel = 1;
    bool deterministic = true;
};

// Valid algorithm names; throws with the full list on an unknown name.
struct AlgorithmSpec {
    std::string base;             // local | fedavg | agnostic | hypcluster
    std::string personalization;  // empty | finetune | dapper | mapper
};
AlgorithmSpec parse_algorithm(const std::string& name);
std::vector<std::string> known_algorithms();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
std::string config_hash(const ExperimentConfig& cfg);

// Train/test populations plus the seen/unseen client split.
struct ExperimentData {
    Population train;
    Population test;
    std::vector<int> seen;
    std::vector<int> unseen;
};
ExperimentData build_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

Population subset_population(const Population& pop, const std::vector<int>& indices);

// The trained predictor of one run; exactly one member is meaningful.
struct TrainedPredictor {
    enum class Kind { single, cluster, pmap };
    Kind kind = Kind::single;
    Model model;
    ClusterState cluster;
    PersonalizationMap pmap;
};

TrainedPredictor train_algorithm(const ExperimentConfig& cfg, const ExperimentData& data,
                                 std::uint64_t seed);

struct RunResult {
    std::uint64_t seed = 0;
    EvalReport seen_test;
    std::optional<EvalReport> unseen_test;
};

// Runs every configured seed; writes reports and serialized predictors under
// out_dir when it is set. Every output embeds the config hash and seed.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
    std::string algorithm;
    std::string axis;
    double value = 0.0;
    std::uint64_t seed = 0;
    std::string client;
    double loss = 0.0;
    double accuracy = 0.0;
};

// Cartesian product of algorithms x axis values x seeds, one run each; rows
// are in deterministic order regardless of cfg.parallel.
std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<std::string>& algorithms,
                            const std::string& axis, const std::vector<double>& values);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// Mean test loss per (algorithm, axis value), uniform across clients & seeds.
double sweep_mean_loss(const std::vector<SweepRow>& rows, const std::string& algorithm,
                       double value);

// Named experiment recipes: "table1", "figure2", "threshold", "two-source".
ExperimentConfig recipe(const std::string& name);

// Runs fn(0..n-1) on `threads` workers; results must go to preallocated slots.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn);

}  // namespace fedper
