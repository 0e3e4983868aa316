// Data interpolation: per-client fine-tuning on a Bernoulli(lambda) mixture
// of local data and a subsample of the central pool, with the interpolation
// weight chosen over a grid (Dapper), plus the plain fine-tuning baseline.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedper/core.hpp"
#include "fedper/optim.hpp"

namespace fedper {

std::vector<double> default_lambda_grid();  // {0.0, 0.1, ..., 1.0}

struct StepOptions {
    double l2 = 0.0;
    double projection_radius = 0.0;
    bool average_iterates = false;
};

struct DapperConfig {
    int subsample_multiplier = 5;  // r
    std::vector<double> lambda_grid = default_lambda_grid();
    enum class Selection { train_loss, holdout };
    Selection selection = Selection::train_loss;
    double holdout_fraction = 0.2;
    double step_size = 0.1;
    std::int64_t steps_override = 0;  // 0 means r * m_k
    StepOptions step_options;
    std::uint64_t seed = 0;
};

// Every client's data pooled into one dataset, optionally excluding one
// client and optionally restricted to a subset of client indices.
ClientDataset pooled_dataset(const Population& pop, const std::string& exclude_id = "",
                             const std::vector<int>& restrict_to = {});

// Uniform sample of `size` examples with replacement.
ClientDataset subsample_global(const ClientDataset& pool, std::int64_t size, std::uint64_t seed);

// SGD from h_central: each step picks the local dataset with probability
// lambda (the central one otherwise) and applies a one-example gradient step.
Model dapper_for_lambda(const Model& h_central, const ClientDataset& local,
                        const ClientDataset& central, double lambda, std::int64_t steps,
                        double step_size, std::uint64_t seed, const StepOptions& opts = {});

struct DapperResult {
    Model model;
    double lambda = 0.0;
    std::int64_t transferred_examples = 0;       // exactly r * m_k
    std::vector<double> candidate_losses;        // selection loss per grid value
    std::vector<double> lambda_grid;
};

DapperResult dapper(const Model& h_central, const ClientDataset& local,
                    const ClientDataset& central_pool, const DapperConfig& cfg);

// Continue SGD on local data only, starting from the central model; one
// "epoch" is m_k uniformly sampled one-example steps.
Model finetune(const Model& h_central, const ClientDataset& local, int epochs, double step_size,
               std::uint64_t seed);

}  // namespace fedper
