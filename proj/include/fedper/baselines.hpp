// Reference trainers: purely local models, the FedAvg-style uniform global
// model, and agnostic (worst-case mixture) training over declared domains.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedper/core.hpp"
#include "fedper/optim.hpp"

namespace fedper {

struct FederatedConfig {
    int rounds = 20;            // T
    int clients_per_round = 20; // P, clamped to the population size
    SgdConfig client;           // local optimization per selected client
    enum class Weighting { by_sample_count, uniform };
    Weighting weighting = Weighting::by_sample_count;
    double domain_step = 0.05;  // ascent rate on domain weights (agnostic only)
    std::uint64_t seed = 0;
};

// Fresh zero-initialized model matching a population's shape.
Model initial_model(const Population& pop);

// Seed of the local SGD stream a client uses in a given round; exposed so
// single-client reductions can be reproduced exactly.
std::uint64_t federated_client_seed(std::uint64_t seed, int round, const std::string& client_id);

Model train_local(const ClientDataset& client, int num_classes, const SgdConfig& cfg);

Model train_fedavg(const Population& pop, const FederatedConfig& cfg);

struct AgnosticResult {
    Model model;
    std::vector<double> domain_weights;
};

// Minimax training: the model descends on the domain-weighted loss while the
// domain weights take projected-ascent steps toward the worst-case mixture.
// domain_of_client maps each client index to a domain in [0, num_domains).
AgnosticResult train_agnostic(const Population& pop, const std::vector<int>& domain_of_client,
                              int num_domains, const FederatedConfig& cfg);

// Euclidean projection onto the probability simplex.
void project_to_simplex(std::span<double> v);

}  // namespace fedper
