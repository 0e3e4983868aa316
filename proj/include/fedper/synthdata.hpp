// Synthetic population generators and client-partitioned dataset files.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedper/core.hpp"

namespace fedper {

// Featureless density-estimation task: p clients over d classes, each client
// drawing labels from 0.5 * point(k mod 4) + 0.25 * uniform + 0.25 * point(k mod (d-4)).
struct SyntheticSpec {
    int num_clients = 100;        // p
    int num_classes = 50;         // d
    int samples_per_client = 100; // m_k
    std::uint64_t seed = 0;
};

// Exact per-client label marginal under the mixture above.
std::vector<double> synthetic_label_distribution(const SyntheticSpec& spec, int client_index);

Population synthetic_population(const SyntheticSpec& spec);

struct SplitPopulation {
    Population train;
    Population test;  // independent draws of the same per-client sizes
};

SplitPopulation synthetic_split(const SyntheticSpec& spec);

// Two clients with the same standard-normal feature distribution and opposite
// threshold labels: client 0 labels 1[x > 0], client 1 labels 1[x < 0].
Population threshold_example_population(int samples_per_client, std::uint64_t seed);
SplitPopulation threshold_example_split(int samples_per_client, std::uint64_t seed);

// Featureless two-source population: even-indexed clients put all mass on
// class 1, odd-indexed clients draw uniformly over [0, d).
Population two_source_population(int num_clients, int num_classes, int samples_per_client,
                                 std::uint64_t seed);
SplitPopulation two_source_split(int num_clients, int num_classes, int samples_per_client,
                                 std::uint64_t seed);

// Line-delimited JSON: a header record with the schema id and label space,
// then one record per client. Lossless for ids, counts, labels, features.
void save_population(const Population& pop, const std::string& path);
Population load_population(const std::string& path);

std::string population_to_string(const Population& pop);
Population population_from_string(const std::string& text);

}  // namespace fedper
