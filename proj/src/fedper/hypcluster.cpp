#include "fedper/hypcluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedper/rng.hpp"

namespace fedper {

namespace {

constexpr std::uint64_t kInitTag = 0x494e4954ull;
constexpr std::uint64_t kRoundTag = 0x524f554eull;
constexpr std::uint64_t kClusterTag = 0x434c5553ull;
constexpr double kLogFloor = -745.0;  // below log(min subnormal double)

double client_weight(const Population& pop, std::size_t idx, bool uniform) {
    return uniform ? 1.0 / static_cast<double>(pop.clients.size()) : pop.weights[idx];
}

std::vector<int> sample_client_indices(std::int64_t population_size, int take, Rng& rng) {
    std::vector<int> all(population_size);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    all.resize(std::max<std::int64_t>(1, std::min<std::int64_t>(take, population_size)));
    std::sort(all.begin(), all.end());
    return all;
}

ClientDataset concatenate(const Population& pop, std::span<const int> indices) {
    ClientDataset merged;
    merged.client_id = "cluster-pool";
    merged.feature_dim = pop.feature_dim;
    for (int idx : indices) {
        const auto& c = pop.clients[idx];
        merged.labels.insert(merged.labels.end(), c.labels.begin(), c.labels.end());
        merged.features.insert(merged.features.end(), c.features.begin(), c.features.end());
    }
    return merged;
}

void require_featureless(const Population& pop, const char* who) {
    if (pop.feature_dim != 0) {
        throw std::invalid_argument(std::string(who) + " supports featureless populations only");
    }
}

}  // namespace

double histogram_cross_entropy(std::span<const std::int64_t> counts,
                               std::span<const double> probs) {
    double total = 0.0;
    std::int64_t n = 0;
    for (std::size_t y = 0; y < counts.size(); ++y) {
        n += counts[y];
        if (counts[y] == 0) continue;
        const double logp = probs[y] > 0.0 ? std::max(std::log(probs[y]), kLogFloor) : kLogFloor;
        total -= static_cast<double>(counts[y]) * logp;
    }
    return total / static_cast<double>(n);
}

Model distribution_to_model(std::span<const double> probs) {
    std::vector<double> logits(probs.size());
    for (std::size_t y = 0; y < probs.size(); ++y) {
        logits[y] = probs[y] > 0.0 ? std::max(std::log(probs[y]), kLogFloor) : kLogFloor;
    }
    return make_categorical_model(static_cast<int>(probs.size()), std::move(logits));
}

double hypcluster_objective(const ClusterState& state, const Population& pop,
                            bool uniform_client_weights) {
    if (state.models.empty()) throw std::invalid_argument("cluster state has no models");
    double total = 0.0;
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& model : state.models) {
            best = std::min(best, empirical_loss(model, pop.clients[k], LossKind::cross_entropy));
        }
        total += client_weight(pop, k, uniform_client_weights) * best;
    }
    return total;
}

std::vector<int> assign_clusters(std::span<const Model> models,
                                 std::span<const ClientDataset> clients) {
    if (models.empty()) throw std::invalid_argument("assign_clusters needs at least one model");
    std::vector<int> assignment(clients.size(), 0);
    for (std::size_t k = 0; k < clients.size(); ++k) {
        double best = std::numeric_limits<double>::infinity();
        int best_i = 0;
        for (std::size_t i = 0; i < models.size(); ++i) {
            const double loss = empirical_loss(models[i], clients[k], LossKind::cross_entropy);
            if (loss < best) {
                best = loss;
                best_i = static_cast<int>(i);
            }
        }
        assignment[k] = best_i;
    }
    return assignment;
}

ClusterState hypcluster_round(const ClusterState& state, const Population& pop,
                              const HypClusterConfig& cfg, std::uint64_t round_seed) {
    Rng rng = substream(round_seed, {kRoundTag});
    const auto picked = sample_client_indices(pop.num_clients(), cfg.clients_per_round, rng);

    std::vector<ClientDataset> sampled;
    sampled.reserve(picked.size());
    for (int idx : picked) sampled.push_back(pop.clients[idx]);
    const auto local_assignment = assign_clusters(state.models, sampled);

    ClusterState next = state;
    for (std::size_t j = 0; j < picked.size(); ++j) {
        next.assignment[pop.clients[picked[j]].client_id] = local_assignment[j];
    }
    for (int i = 0; i < state.num_clusters(); ++i) {
        std::vector<int> members;
        for (std::size_t j = 0; j < picked.size(); ++j) {
            if (local_assignment[j] == i) members.push_back(picked[j]);
        }
        if (members.empty()) continue;  // model stays bit-identical
        const ClientDataset pool = concatenate(pop, members);
        SgdConfig local = cfg.client;
        local.seed = mix_seed(round_seed, {kClusterTag, static_cast<std::uint64_t>(i)});
        next.models[i] = sgd(state.models[i], pool, local);
    }
    return next;
}

ClusterState train_hypcluster(const Population& pop, const HypClusterConfig& cfg) {
    if (cfg.num_clusters < 1) throw std::invalid_argument("num_clusters must be >= 1");
    ClusterState best;
    double best_objective = std::numeric_limits<double>::infinity();

    for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
        const std::uint64_t restart_seed =
            mix_seed(cfg.seed, {kInitTag, static_cast<std::uint64_t>(restart)});

        // Warm starts: train each cluster model on one sampled client,
        // distinct clients while the sample lasts.
        Rng rng = substream(restart_seed, {kInitTag});
        auto warm_pool = sample_client_indices(pop.num_clients(), cfg.clients_per_round, rng);
        rng.shuffle(warm_pool);
        ClusterState state;
        state.models.reserve(cfg.num_clusters);
        for (int i = 0; i < cfg.num_clusters; ++i) {
            const int idx = warm_pool[i % warm_pool.size()];
            SgdConfig warm = cfg.client;
            warm.epochs = cfg.warm_start_epochs;
            warm.steps = 0;
            warm.seed = mix_seed(restart_seed, {kClusterTag, static_cast<std::uint64_t>(i)});
            state.models.push_back(sgd(initial_model(pop), pop.clients[idx], warm));
        }

        for (int t = 0; t < cfg.rounds; ++t) {
            const std::uint64_t round_seed =
                mix_seed(restart_seed, {kRoundTag, static_cast<std::uint64_t>(t)});
            state = hypcluster_round(state, pop, cfg, round_seed);
        }

        const auto final_assignment = assign_clusters(state.models, pop.clients);
        state.assignment.clear();
        for (std::size_t k = 0; k < pop.clients.size(); ++k) {
            state.assignment[pop.clients[k].client_id] = final_assignment[k];
        }

        const double objective = hypcluster_objective(state, pop, cfg.uniform_client_weights);
        if (objective < best_objective) {
            best_objective = objective;
            best = std::move(state);
        }
    }
    return best;
}

EmResult full_batch_em(const Population& pop, int num_clusters, int max_iters,
                       const std::vector<std::vector<double>>& init_distributions,
                       bool uniform_client_weights) {
    require_featureless(pop, "full_batch_em");
    if (num_clusters < 1) throw std::invalid_argument("num_clusters must be >= 1");
    if (static_cast<int>(init_distributions.size()) != num_clusters) {
        throw std::invalid_argument("full_batch_em needs one init distribution per cluster");
    }
    const int d = pop.label_space.num_classes;
    const std::size_t p = pop.clients.size();

    std::vector<std::vector<std::int64_t>> histograms;
    histograms.reserve(p);
    for (const auto& c : pop.clients) histograms.push_back(label_histogram(c, d));

    std::vector<std::vector<double>> dists = init_distributions;
    for (const auto& dist : dists) {
        if (static_cast<int>(dist.size()) != d) {
            throw std::invalid_argument("init distribution length does not match num_classes");
        }
    }

    std::vector<int> assignment(p, -1);
    EmResult result;
    for (int iter = 0; iter < max_iters; ++iter) {
        // E-step: lowest-loss cluster per client, ties toward the lowest index.
        std::vector<int> next_assignment(p, 0);
        for (std::size_t k = 0; k < p; ++k) {
            double best = std::numeric_limits<double>::infinity();
            int best_i = 0;
            for (int i = 0; i < num_clusters; ++i) {
                const double loss = histogram_cross_entropy(histograms[k], dists[i]);
                if (loss < best) {
                    best = loss;
                    best_i = i;
                }
            }
            next_assignment[k] = best_i;
        }
        const bool fixed_point = next_assignment == assignment;
        assignment = std::move(next_assignment);

        // M-step: pooled empirical distribution per cluster.
        for (int i = 0; i < num_clusters; ++i) {
            std::vector<std::int64_t> pooled(d, 0);
            std::int64_t total = 0;
            for (std::size_t k = 0; k < p; ++k) {
                if (assignment[k] != i) continue;
                for (int y = 0; y < d; ++y) pooled[y] += histograms[k][y];
                total += pop.clients[k].count();
            }
            if (total == 0) continue;  // empty cluster keeps its distribution
            for (int y = 0; y < d; ++y) {
                dists[i][y] = static_cast<double>(pooled[y]) / static_cast<double>(total);
            }
        }

        double objective = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < num_clusters; ++i) {
                best = std::min(best, histogram_cross_entropy(histograms[k], dists[i]));
            }
            objective += client_weight(pop, k, uniform_client_weights) * best;
        }
        result.objective_trace.push_back(objective);
        result.iterations = iter + 1;
        if (fixed_point) {
            result.converged = true;
            break;
        }
    }

    result.state.models.reserve(num_clusters);
    for (const auto& dist : dists) result.state.models.push_back(distribution_to_model(dist));
    for (std::size_t k = 0; k < p; ++k) {
        result.state.assignment[pop.clients[k].client_id] = std::max(assignment[k], 0);
    }
    return result;
}

BruteForceResult brute_force_cluster(const Population& pop, int num_clusters,
                                     bool uniform_client_weights) {
    require_featureless(pop, "brute_force_cluster");
    if (num_clusters < 1) throw std::invalid_argument("num_clusters must be >= 1");
    const std::size_t p = pop.clients.size();
    double combos = 1.0;
    for (std::size_t k = 0; k < p; ++k) {
        combos *= num_clusters;
        if (combos > 1e6) {
            throw std::invalid_argument("brute_force_cluster refuses instances with q^p > 1e6");
        }
    }
    const int d = pop.label_space.num_classes;
    std::vector<std::vector<std::int64_t>> histograms;
    histograms.reserve(p);
    for (const auto& c : pop.clients) histograms.push_back(label_histogram(c, d));

    std::vector<int> assignment(p, 0);
    BruteForceResult best;
    best.objective = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> dists(num_clusters, std::vector<double>(d, 0.0));

    for (;;) {
        // Closed-form optimum per cluster under this assignment.
        for (int i = 0; i < num_clusters; ++i) {
            std::vector<std::int64_t> pooled(d, 0);
            std::int64_t total = 0;
            for (std::size_t k = 0; k < p; ++k) {
                if (assignment[k] != i) continue;
                for (int y = 0; y < d; ++y) pooled[y] += histograms[k][y];
                total += pop.clients[k].count();
            }
            for (int y = 0; y < d; ++y) {
                dists[i][y] = total > 0 ? static_cast<double>(pooled[y]) / static_cast<double>(total)
                                        : 1.0 / static_cast<double>(d);
            }
        }
        double objective = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
            double lowest = std::numeric_limits<double>::infinity();
            for (int i = 0; i < num_clusters; ++i) {
                lowest = std::min(lowest, histogram_cross_entropy(histograms[k], dists[i]));
            }
            objective += client_weight(pop, k, uniform_client_weights) * lowest;
        }
        if (objective < best.objective) {
            best.objective = objective;
            best.assignment = assignment;
            best.cluster_distributions = dists;
        }

        // Next assignment in mixed-radix order.
        std::size_t pos = 0;
        while (pos < p) {
            if (++assignment[pos] < num_clusters) break;
            assignment[pos] = 0;
            ++pos;
        }
        if (pos == p) break;
    }
    return best;
}

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_model_block(std::ofstream& out, const Model& m) {
    write_u32(out, m.kind == ModelKind::categorical_logit ? 0u : 1u);
    write_u32(out, static_cast<std::uint32_t>(m.num_classes));
    write_u32(out, static_cast<std::uint32_t>(m.feature_dim));
    write_u64(out, m.params.size());
    out.write(reinterpret_cast<const char*>(m.params.data()),
              static_cast<std::streamsize>(m.params.size() * sizeof(double)));
}

Model read_model_block(std::ifstream& in) {
    const std::uint32_t kind = read_u32(in);
    const std::uint32_t num_classes = read_u32(in);
    const std::uint32_t feature_dim = read_u32(in);
    const std::uint64_t n = read_u64(in);
    std::vector<double> params(n);
    in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated model block");
    if (kind == 0) return make_categorical_model(static_cast<int>(num_classes), std::move(params));
    return make_linear_model(static_cast<int>(num_classes), static_cast<int>(feature_dim),
                             std::move(params));
}

constexpr char kClusterMagic[4] = {'F', 'P', 'C', 'S'};

}  // namespace

void save_cluster_state(const ClusterState& state, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out.write(kClusterMagic, 4);
        write_u32(out, 1u);  // version
        write_u32(out, static_cast<std::uint32_t>(state.models.size()));
        for (const auto& m : state.models) write_model_block(out, m);
        // Deterministic assignment order.
        std::vector<std::pair<std::string, int>> pairs(state.assignment.begin(),
                                                       state.assignment.end());
        std::sort(pairs.begin(), pairs.end());
        write_u64(out, pairs.size());
        for (const auto& [id, cluster] : pairs) {
            write_u32(out, static_cast<std::uint32_t>(id.size()));
            out.write(id.data(), static_cast<std::streamsize>(id.size()));
            write_u32(out, static_cast<std::uint32_t>(cluster));
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
    }
}

ClusterState load_cluster_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kClusterMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "' is not a cluster-state file");
    }
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported cluster-state version");
    const std::uint32_t q = read_u32(in);
    ClusterState state;
    state.models.reserve(q);
    for (std::uint32_t i = 0; i < q; ++i) state.models.push_back(read_model_block(in));
    const std::uint64_t pairs = read_u64(in);
    for (std::uint64_t i = 0; i < pairs; ++i) {
        const std::uint32_t len = read_u32(in);
        std::string id(len, '\0');
        in.read(id.data(), len);
        const std::uint32_t cluster = read_u32(in);
        if (!in) throw std::runtime_error("truncated assignment table");
        state.assignment[id] = static_cast<int>(cluster);
    }
    return state;
}

}  // namespace fedper
