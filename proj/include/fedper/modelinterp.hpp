// Model interpolation: per-client predictors lambda_k * h_local + (1 -
// lambda_k) * h_central, trained either jointly (Mapper) or by composing an
// independently trained global model with independently trained local models.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedper/baselines.hpp"
#include "fedper/core.hpp"
#include "fedper/datainterp.hpp"

namespace fedper {

struct PersonalizationEntry {
    std::string client_id;
    Model local;
    double lambda = 0.0;
};

struct PersonalizationMap {
    Model global;
    std::vector<PersonalizationEntry> entries;

    const PersonalizationEntry* find(const std::string& client_id) const;
};

struct MapperConfig {
    std::vector<double> lambda_grid = default_lambda_grid();
    int rounds = 0;  // client visits; 0 means 50 * p
    double global_step_size = 0.1;
    SgdConfig local;  // per-lambda local training
    enum class Selection { train_loss, holdout };
    Selection selection = Selection::train_loss;
    double holdout_fraction = 0.2;
    int final_local_epochs = 0;  // 0 means local.epochs
    double init_scale = 0.01;    // stddev of the random global init
    std::uint64_t seed = 0;
    FederatedConfig fedavg;  // used by independent_interpolation for h_central
};

// Weighted mean cross-entropy of the per-client interpolated predictors.
double mapper_objective(const PersonalizationMap& pmap, const Population& pop);

// Minimizes L(lambda * h_local + (1 - lambda) * h_central) over the local
// model by SGD, initialized at the global parameters. lambda = 0 returns the
// initialization unchanged.
Model local_best_for_lambda(const Model& h_central, const ClientDataset& client, double lambda,
                            const SgdConfig& cfg);

struct LambdaChoice {
    double lambda = 0.0;
    Model local;
    double loss = 0.0;
    std::vector<double> grid_losses;
};

// Trains a local model per grid value and returns the pair minimizing the
// selection loss; ties go to the smaller lambda.
LambdaChoice select_lambda(const Model& h_central, const ClientDataset& client,
                           std::span<const double> grid, const SgdConfig& cfg,
                           MapperConfig::Selection selection = MapperConfig::Selection::train_loss,
                           double holdout_fraction = 0.2);

// One gradient step on the global model through the interpolated predictor
// (full-batch over the client's data). lambda = 1 leaves h_central unchanged.
Model mapper_global_step(const Model& h_central, const ClientDataset& client, double lambda,
                         const Model& h_local, double step_size);

// The round loop alone: visits random clients and updates the global model.
// Starts from `init` when given, otherwise from a small random init.
Model mapper_train_global(const Population& pop, const MapperConfig& cfg,
                          const Model* init = nullptr);

// Final per-client pass against a frozen global model.
PersonalizationEntry mapper_personalize(const Model& global, const ClientDataset& client,
                                        const MapperConfig& cfg);

PersonalizationMap train_mapper(const Population& pop, const MapperConfig& cfg);

// Baseline: FedAvg global model, per-client local models trained from
// scratch, interpolation weight chosen over the grid afterwards.
PersonalizationMap independent_interpolation(const Population& pop, const MapperConfig& cfg);

// Binary (little-endian) personalization-map files; layout documented in README.
void save_personalization_map(const PersonalizationMap& pmap, const std::string& path);
PersonalizationMap load_personalization_map(const std::string& path);

}  // namespace fedper
