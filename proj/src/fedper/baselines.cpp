#include "fedper/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedper/rng.hpp"

namespace fedper {

namespace {

constexpr std::uint64_t kRoundTag = 0x524f554e44ull;   // client sampling
constexpr std::uint64_t kClientTag = 0x434c49454eull;  // local SGD streams

std::vector<int> sample_clients(std::int64_t population_size, int take, Rng& rng) {
    std::vector<int> all(population_size);
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    all.resize(std::min<std::int64_t>(take, population_size));
    std::sort(all.begin(), all.end());
    return all;
}

}  // namespace

Model initial_model(const Population& pop) {
    if (pop.feature_dim > 0) {
        return make_linear_model(pop.label_space.num_classes, pop.feature_dim);
    }
    return make_categorical_model(pop.label_space.num_classes);
}

std::uint64_t federated_client_seed(std::uint64_t seed, int round, const std::string& client_id) {
    return mix_seed(seed, {kClientTag, static_cast<std::uint64_t>(round), fnv1a64(client_id)});
}

Model train_local(const ClientDataset& client, int num_classes, const SgdConfig& cfg) {
    if (client.labels.empty()) throw std::invalid_argument("train_local needs a nonempty client");
    Model start = client.has_features() ? make_linear_model(num_classes, client.feature_dim)
                                        : make_categorical_model(num_classes);
    return sgd(start, client, cfg);
}

void project_to_simplex(std::span<double> v) {
    const std::size_t n = v.size();
    std::vector<double> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double running = 0.0;
    double threshold = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        running += sorted[i];
        const double candidate = (running - 1.0) / static_cast<double>(i + 1);
        if (sorted[i] - candidate > 0.0) threshold = candidate;
    }
    for (double& x : v) x = std::max(0.0, x - threshold);
}

AgnosticResult train_agnostic(const Population& pop, const std::vector<int>& domain_of_client,
                              int num_domains, const FederatedConfig& cfg) {
    if (num_domains < 1) throw std::invalid_argument("train_agnostic needs at least one domain");
    if (domain_of_client.size() != pop.clients.size()) {
        throw std::invalid_argument("domain map length does not match the population");
    }
    std::vector<std::int64_t> domain_sizes(num_domains, 0);
    for (int d : domain_of_client) {
        if (d < 0 || d >= num_domains) throw std::invalid_argument("domain index out of range");
        ++domain_sizes[d];
    }
    for (std::int64_t s : domain_sizes) {
        if (s == 0) throw std::invalid_argument("every domain needs at least one client");
    }

    Model global = initial_model(pop);
    std::vector<double> lambda(num_domains, 1.0 / num_domains);
    const int take = std::max(1, std::min<int>(cfg.clients_per_round,
                                               static_cast<int>(pop.clients.size())));

    std::vector<double> aggregate(global.params.size());
    std::vector<double> domain_sum(static_cast<std::size_t>(num_domains) * global.params.size());
    std::vector<double> domain_weight(num_domains);
    std::vector<double> domain_loss(num_domains);
    std::vector<std::int64_t> domain_examples(num_domains);

    for (int t = 0; t < cfg.rounds; ++t) {
        Rng round_rng = substream(cfg.seed, {kRoundTag, static_cast<std::uint64_t>(t)});
        const auto picked = sample_clients(pop.num_clients(), take, round_rng);

        std::fill(domain_sum.begin(), domain_sum.end(), 0.0);
        std::fill(domain_weight.begin(), domain_weight.end(), 0.0);
        for (int idx : picked) {
            const auto& client = pop.clients[idx];
            SgdConfig local = cfg.client;
            local.seed = federated_client_seed(cfg.seed, t, client.client_id);
            const Model updated = sgd(global, client, local);
            const double w = cfg.weighting == FederatedConfig::Weighting::by_sample_count
                                 ? static_cast<double>(client.count())
                                 : 1.0;
            const int dom = domain_of_client[idx];
            double* sum = domain_sum.data() + static_cast<std::size_t>(dom) * global.params.size();
            for (std::size_t i = 0; i < global.params.size(); ++i) sum[i] += w * updated.params[i];
            domain_weight[dom] += w;
        }

        // Domains without sampled clients drop out of this round's average.
        double lambda_present = 0.0;
        for (int d = 0; d < num_domains; ++d) {
            if (domain_weight[d] > 0.0) lambda_present += lambda[d];
        }
        if (lambda_present <= 0.0) continue;
        std::fill(aggregate.begin(), aggregate.end(), 0.0);
        for (int d = 0; d < num_domains; ++d) {
            if (domain_weight[d] <= 0.0) continue;
            const double scale = lambda[d] / lambda_present / domain_weight[d];
            const double* sum = domain_sum.data() + static_cast<std::size_t>(d) * global.params.size();
            for (std::size_t i = 0; i < global.params.size(); ++i) aggregate[i] += scale * sum[i];
        }
        global.params.assign(aggregate.begin(), aggregate.end());

        if (num_domains > 1) {
            std::fill(domain_loss.begin(), domain_loss.end(), 0.0);
            std::fill(domain_examples.begin(), domain_examples.end(), std::int64_t{0});
            for (int idx : picked) {
                const auto& client = pop.clients[idx];
                const int dom = domain_of_client[idx];
                domain_loss[dom] +=
                    static_cast<double>(client.count()) *
                    empirical_loss(global, client, LossKind::cross_entropy);
                domain_examples[dom] += client.count();
            }
            for (int d = 0; d < num_domains; ++d) {
                if (domain_examples[d] == 0) continue;
                lambda[d] += cfg.domain_step * domain_loss[d] / static_cast<double>(domain_examples[d]);
            }
            project_to_simplex(lambda);
        }
    }
    return {std::move(global), std::move(lambda)};
}

Model train_fedavg(const Population& pop, const FederatedConfig& cfg) {
    const std::vector<int> one_domain(pop.clients.size(), 0);
    return train_agnostic(pop, one_domain, 1, cfg).model;
}

}  // namespace fedper
