// Hypothesis-based clustering: the weighted min-over-clusters objective, a
// stochastic-EM trainer with warm starts, a deterministic full-batch EM
// variant, and a brute-force oracle for small instances.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedper/baselines.hpp"
#include "fedper/core.hpp"

namespace fedper {

struct ClusterState {
    std::vector<Model> models;
    std::unordered_map<std::string, int> assignment;  // client_id -> cluster

    int num_clusters() const { return static_cast<int>(models.size()); }
};

struct HypClusterConfig {
    int num_clusters = 2;       // q
    int rounds = 20;            // T
    int clients_per_round = 20; // P
    SgdConfig client;           // per-cluster SGD over the round's pooled data
    int warm_start_epochs = 1;  // initialization training per cluster
    int restarts = 5;           // best objective kept
    bool uniform_client_weights = false;  // weight clients 1/p instead of m_k/m
    std::uint64_t seed = 0;
};

// Sum over clients of weight_k * min_i L_k(h_i), cross-entropy.
double hypcluster_objective(const ClusterState& state, const Population& pop,
                            bool uniform_client_weights = false);

// argmin_i L_k(h_i) per client, ties toward the lowest cluster index.
std::vector<int> assign_clusters(std::span<const Model> models,
                                 std::span<const ClientDataset> clients);

// One stochastic-EM round: sample P clients, reassign them, update each
// cluster by SGD on its sampled clients' pooled data. Clusters with no
// sampled clients keep their model untouched.
ClusterState hypcluster_round(const ClusterState& state, const Population& pop,
                              const HypClusterConfig& cfg, std::uint64_t round_seed);

ClusterState train_hypcluster(const Population& pop, const HypClusterConfig& cfg);

struct EmResult {
    ClusterState state;
    std::vector<double> objective_trace;  // objective after each iteration
    int iterations = 0;
    bool converged = false;  // assignment reached a fixed point
};

// Deterministic EM for featureless populations: exact assignment alternated
// with the closed-form per-cluster minimizer (the pooled empirical label
// distribution). init_distributions supplies q starting distributions.
EmResult full_batch_em(const Population& pop, int num_clusters, int max_iters,
                       const std::vector<std::vector<double>>& init_distributions,
                       bool uniform_client_weights = false);

struct BruteForceResult {
    std::vector<int> assignment;
    std::vector<std::vector<double>> cluster_distributions;
    double objective = 0.0;
};

// Enumerates every assignment (guarded by q^p <= 1e6) with closed-form
// per-cluster optima; featureless populations only.
BruteForceResult brute_force_cluster(const Population& pop, int num_clusters,
                                     bool uniform_client_weights = false);

// Cross-entropy of a label histogram against a distribution, with a shared
// log floor so EM and the brute-force oracle agree bit-for-bit.
double histogram_cross_entropy(std::span<const std::int64_t> counts,
                               std::span<const double> probs);

// Materializes a distribution as a categorical model (log probabilities,
// floored to keep parameters finite).
Model distribution_to_model(std::span<const double> probs);

// Binary (little-endian) cluster-state files; layout documented in README.
void save_cluster_state(const ClusterState& state, const std::string& path);
ClusterState load_cluster_state(const std::string& path);

}  // namespace fedper
