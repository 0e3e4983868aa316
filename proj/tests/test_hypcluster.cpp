#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "fedper/analysis.hpp"
#include "fedper/hypcluster.hpp"
#include "fedper/rng.hpp"
#include "fedper/synthdata.hpp"
#include "support/oracles.hpp"

using namespace fedper;

namespace {

ClientDataset from_counts(std::string id, std::span<const std::int64_t> counts) {
    ClientDataset ds;
    ds.client_id = std::move(id);
    for (std::size_t y = 0; y < counts.size(); ++y) {
        for (std::int64_t i = 0; i < counts[y]; ++i) ds.labels.push_back(static_cast<int>(y));
    }
    return ds;
}

Model point_mass_model(int num_classes, int label) {
    std::vector<double> logits(num_classes, 0.0);
    logits[label] = 60.0;
    return make_categorical_model(num_classes, std::move(logits));
}

double pooled_entropy(const Population& pop) {
    std::vector<std::int64_t> counts(pop.label_space.num_classes, 0);
    for (const auto& c : pop.clients) {
        for (int y : c.labels) counts[y]++;
    }
    double h = 0.0;
    for (std::int64_t cy : counts) {
        if (cy == 0) continue;
        const double f = static_cast<double>(cy) / static_cast<double>(pop.total_count);
        h -= f * std::log(f);
    }
    return h;
}

}  // namespace

TEST_CASE("objective with one cluster equals the weighted global loss") {
    const auto pop = make_population(
        LabelSpace{3}, {from_counts("a", std::vector<std::int64_t>{4, 1, 0}),
                        from_counts("b", std::vector<std::int64_t>{0, 2, 6})});
    ClusterState state;
    state.models.push_back(make_categorical_model(3, {0.2, -0.4, 0.1}));
    double expected = 0.0;
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        expected += pop.weights[k] *
                    empirical_loss(state.models[0], pop.clients[k], LossKind::cross_entropy);
    }
    CHECK(hypcluster_objective(state, pop) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("duplicate models leave the objective unchanged") {
    const auto pop = make_population(
        LabelSpace{2}, {from_counts("a", std::vector<std::int64_t>{5, 2})});
    ClusterState two, three;
    two.models = {make_categorical_model(2, {1.0, 0.0}), make_categorical_model(2, {0.0, 2.0})};
    three.models = two.models;
    three.models.push_back(two.models[1]);
    CHECK(hypcluster_objective(two, pop) == doctest::Approx(hypcluster_objective(three, pop)));
}

TEST_CASE("near point-mass models drive the two-client objective to zero") {
    const auto pop = make_population(
        LabelSpace{2}, {from_counts("zeros", std::vector<std::int64_t>{8, 0}),
                        from_counts("ones", std::vector<std::int64_t>{0, 8})});
    ClusterState state;
    state.models = {point_mass_model(2, 0), point_mass_model(2, 1)};
    CHECK(hypcluster_objective(state, pop) <= 1e-9);
}

TEST_CASE("assign_clusters basics and tie rule") {
    const auto a = from_counts("a", std::vector<std::int64_t>{6, 0});
    const auto b = from_counts("b", std::vector<std::int64_t>{0, 6});
    std::vector<ClientDataset> clients = {a, b};

    std::vector<Model> one = {make_categorical_model(2)};
    CHECK(assign_clusters(one, clients) == std::vector<int>{0, 0});

    std::vector<Model> masses = {point_mass_model(2, 0), point_mass_model(2, 1)};
    CHECK(assign_clusters(masses, clients) == std::vector<int>{0, 1});

    std::vector<Model> twins = {make_categorical_model(2, {0.3, 0.1}),
                                make_categorical_model(2, {0.3, 0.1})};
    CHECK(assign_clusters(twins, clients) == std::vector<int>{0, 0});
}

TEST_CASE("argmin property holds exactly after assignment") {
    Rng rng(15);
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 3 + rng.next_int(3);
        std::vector<Model> models;
        for (int i = 0; i < 3; ++i) {
            Model m = make_categorical_model(d);
            for (double& v : m.params) v = rng.next_normal();
            models.push_back(std::move(m));
        }
        std::vector<ClientDataset> clients;
        for (int k = 0; k < 4; ++k) {
            ClientDataset ds;
            ds.client_id = "c" + std::to_string(k);
            for (int i = 0; i < 6; ++i) ds.labels.push_back(rng.next_int(d));
            clients.push_back(std::move(ds));
        }
        const auto f = assign_clusters(models, clients);
        for (std::size_t k = 0; k < clients.size(); ++k) {
            const double chosen =
                empirical_loss(models[f[k]], clients[k], LossKind::cross_entropy);
            for (const auto& m : models) {
                CHECK(chosen <= empirical_loss(m, clients[k], LossKind::cross_entropy) + 0.0);
            }
        }
    }
}

TEST_CASE("a round leaves empty clusters bit-identical") {
    const auto pop = make_population(
        LabelSpace{2}, {from_counts("a", std::vector<std::int64_t>{9, 0}),
                        from_counts("b", std::vector<std::int64_t>{7, 0})});
    ClusterState state;
    state.models = {point_mass_model(2, 0), point_mass_model(2, 1)};  // nobody picks cluster 1
    HypClusterConfig cfg;
    cfg.num_clusters = 2;
    cfg.clients_per_round = 2;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 4;
    cfg.client.step_size = 0.3;
    const auto next = hypcluster_round(state, pop, cfg, 77);
    CHECK(next.models[1].params == state.models[1].params);
    CHECK(next.models[0].params != state.models[0].params);
}

TEST_CASE("one-cluster full-participation round equals a fedavg round") {
    const auto pop = make_population(LabelSpace{3},
                                     {from_counts("a", std::vector<std::int64_t>{5, 1, 0}),
                                      from_counts("b", std::vector<std::int64_t>{0, 3, 3})});
    HypClusterConfig cfg;
    cfg.num_clusters = 1;
    cfg.clients_per_round = 2;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 0;  // one full-batch step
    cfg.client.step_size = 0.4;
    ClusterState state;
    state.models = {make_categorical_model(3)};
    const auto next = hypcluster_round(state, pop, cfg, 5);

    FederatedConfig fed;
    fed.rounds = 1;
    fed.clients_per_round = 2;
    fed.client = cfg.client;
    fed.seed = 5;
    const Model avg = train_fedavg(pop, fed);
    for (int i = 0; i < 3; ++i) {
        CHECK(next.models[0].params[i] == doctest::Approx(avg.params[i]).epsilon(1e-12));
    }
}

TEST_CASE("stochastic training recovers the planted synthetic clusters") {
    SyntheticSpec spec;
    spec.num_clients = 40;
    spec.num_classes = 50;
    spec.samples_per_client = 100;
    spec.seed = 13;
    const auto pop = synthetic_population(spec);

    HypClusterConfig cfg;
    cfg.num_clusters = 4;
    cfg.rounds = 25;
    cfg.clients_per_round = 20;
    cfg.restarts = 4;
    cfg.warm_start_epochs = 2;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 10;
    cfg.client.step_size = 0.3;
    cfg.seed = 1;
    const auto state = train_hypcluster(pop, cfg);

    std::map<int, std::map<int, int>> group_votes;  // true group -> cluster -> count
    for (int k = 0; k < spec.num_clients; ++k) {
        group_votes[k % 4][state.assignment.at("client-" + std::to_string(k))]++;
    }
    std::set<int> majors;
    int agree = 0;
    for (auto& [group, votes] : group_votes) {
        int best_cluster = -1, best = -1;
        for (auto& [cluster, count] : votes) {
            if (count > best) {
                best = count;
                best_cluster = cluster;
            }
        }
        majors.insert(best_cluster);
        agree += best;
    }
    CHECK(majors.size() == 4);
    CHECK(agree >= static_cast<int>(0.95 * spec.num_clients));
}

TEST_CASE("more restarts never worsen the objective") {
    SyntheticSpec spec;
    spec.num_clients = 12;
    spec.num_classes = 10;
    spec.samples_per_client = 40;
    spec.seed = 21;
    const auto pop = synthetic_population(spec);
    HypClusterConfig cfg;
    cfg.num_clusters = 2;
    cfg.rounds = 8;
    cfg.clients_per_round = 8;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 5;
    cfg.client.step_size = 0.3;
    cfg.seed = 40;
    cfg.restarts = 1;
    const double single = hypcluster_objective(train_hypcluster(pop, cfg), pop);
    cfg.restarts = 5;
    const double multi = hypcluster_objective(train_hypcluster(pop, cfg), pop);
    CHECK(multi <= single + 1e-12);
}

TEST_CASE("full-batch EM: monotone objective and fixed-point termination") {
    const auto pop = two_source_population(8, 6, 25, 3);
    const std::vector<std::vector<double>> init = {
        std::vector<double>(6, 1.0 / 6),
        {0.5, 0.1, 0.1, 0.1, 0.1, 0.1},
    };
    const auto result = full_batch_em(pop, 2, 50, init);
    for (std::size_t i = 1; i < result.objective_trace.size(); ++i) {
        CHECK(result.objective_trace[i] <= result.objective_trace[i - 1] + 1e-9);
    }
    CHECK(result.converged);

    // Restarting from the fixed point changes nothing.
    std::vector<std::vector<double>> fixed;
    for (const auto& m : result.state.models) fixed.push_back(predict(m));
    const auto again = full_batch_em(pop, 2, 50, fixed);
    CHECK(again.iterations <= 2);
    CHECK(again.objective_trace.back() ==
          doctest::Approx(result.objective_trace.back()).epsilon(1e-12));
}

TEST_CASE("full-batch EM matches the brute-force optimum on the two-source task") {
    const auto pop = two_source_population(6, 5, 20, 9);
    const auto oracle_result = brute_force_cluster(pop, 2);

    double best_em = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pop.clients.size(); ++i) {
        for (std::size_t j = i + 1; j < pop.clients.size(); ++j) {
            std::vector<std::vector<double>> init;
            for (std::size_t k : {i, j}) {
                const auto counts = label_histogram(pop.clients[k], 5);
                std::vector<double> dist(5);
                for (int y = 0; y < 5; ++y) {
                    dist[y] = static_cast<double>(counts[y]) /
                              static_cast<double>(pop.clients[k].count());
                }
                init.push_back(std::move(dist));
            }
            const auto result = full_batch_em(pop, 2, 60, init);
            best_em = std::min(best_em, result.objective_trace.back());
            CHECK(result.objective_trace.back() >= oracle_result.objective - 1e-12);
        }
    }
    CHECK(best_em == doctest::Approx(oracle_result.objective).epsilon(1e-9));
}

TEST_CASE("warm-started q+1 clusters never lose to q clusters") {
    SyntheticSpec spec;
    spec.num_clients = 9;
    spec.num_classes = 8;
    spec.samples_per_client = 30;
    spec.seed = 33;
    const auto pop = synthetic_population(spec);
    std::vector<std::vector<double>> init = {std::vector<double>(8, 0.125),
                                             {0.4, 0.2, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05}};
    const auto base = full_batch_em(pop, 2, 60, init);

    std::vector<std::vector<double>> warm;
    for (const auto& m : base.state.models) warm.push_back(predict(m));
    warm.push_back({0.05, 0.05, 0.05, 0.05, 0.1, 0.1, 0.2, 0.4});
    const auto bigger = full_batch_em(pop, 3, 60, warm);
    CHECK(bigger.objective_trace.back() <= base.objective_trace.back() + 1e-9);
}

TEST_CASE("brute force recovers planted groups and closed forms") {
    const auto pop = make_population(
        LabelSpace{3}, {from_counts("a", std::vector<std::int64_t>{9, 1, 0}),
                        from_counts("b", std::vector<std::int64_t>{8, 2, 0}),
                        from_counts("c", std::vector<std::int64_t>{10, 0, 0}),
                        from_counts("d", std::vector<std::int64_t>{0, 1, 9}),
                        from_counts("e", std::vector<std::int64_t>{0, 2, 8}),
                        from_counts("f", std::vector<std::int64_t>{1, 0, 9})});
    const auto result = brute_force_cluster(pop, 2);
    CHECK(result.assignment[0] == result.assignment[1]);
    CHECK(result.assignment[1] == result.assignment[2]);
    CHECK(result.assignment[3] == result.assignment[4]);
    CHECK(result.assignment[4] == result.assignment[5]);
    CHECK(result.assignment[0] != result.assignment[3]);

    const auto one = brute_force_cluster(pop, 1);
    CHECK(one.objective == doctest::Approx(pooled_entropy(pop)).epsilon(1e-12));

    // q = p: every client alone, objective = weighted mean of client entropies.
    const auto each = brute_force_cluster(pop, 6);
    double expected = 0.0;
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        const auto sub = make_population(LabelSpace{3}, {pop.clients[k]});
        expected += pop.weights[k] * pooled_entropy(sub);
    }
    CHECK(each.objective == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("brute force refuses oversized instances") {
    std::vector<ClientDataset> clients;
    for (int k = 0; k < 21; ++k) {
        clients.push_back(from_counts("c" + std::to_string(k), std::vector<std::int64_t>{2, 1}));
    }
    const auto pop = make_population(LabelSpace{2}, std::move(clients));
    CHECK_THROWS_AS(brute_force_cluster(pop, 2), std::invalid_argument);
}

TEST_CASE("empirical cluster solutions satisfy the two-sided reduction bound") {
    // Finite hypothesis class (point masses), zero-one loss, exact enumeration
    // of both the empirical and the true optima over all model tuples.
    Rng rng(271);
    const double delta = 0.05;
    int bound_failures = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 3 + rng.next_int(3);
        const int p = 4 + rng.next_int(3);
        const int q = 2;
        std::vector<std::vector<double>> true_dists(p, std::vector<double>(d));
        std::vector<std::vector<std::int64_t>> counts(p, std::vector<std::int64_t>(d, 0));
        std::vector<std::int64_t> m_k(p);
        std::int64_t m = 0;
        for (int k = 0; k < p; ++k) {
            double sum = 0.0;
            for (int y = 0; y < d; ++y) {
                true_dists[k][y] = 0.05 + rng.next_double();
                sum += true_dists[k][y];
            }
            for (int y = 0; y < d; ++y) true_dists[k][y] /= sum;
            m_k[k] = 30 + rng.next_int(30);
            m += m_k[k];
            for (std::int64_t i = 0; i < m_k[k]; ++i) {
                counts[k][rng.categorical(true_dists[k])]++;
            }
        }
        auto weighted_min_loss = [&](int h1, int h2, bool empirical) {
            double total = 0.0;
            for (int k = 0; k < p; ++k) {
                double a, b;
                if (empirical) {
                    a = oracle::point_mass_zero_one(h1, counts[k]);
                    b = oracle::point_mass_zero_one(h2, counts[k]);
                } else {
                    a = oracle::point_mass_zero_one_true(h1, true_dists[k]);
                    b = oracle::point_mass_zero_one_true(h2, true_dists[k]);
                }
                total += static_cast<double>(m_k[k]) / static_cast<double>(m) * std::min(a, b);
            }
            return total;
        };
        double best_emp = 1e9, best_true = 1e9, max_dev = 0.0;
        int emp_h1 = 0, emp_h2 = 0;
        for (int h1 = 0; h1 < d; ++h1) {
            for (int h2 = 0; h2 < d; ++h2) {
                const double emp = weighted_min_loss(h1, h2, true);
                const double tru = weighted_min_loss(h1, h2, false);
                if (emp < best_emp) {
                    best_emp = emp;
                    emp_h1 = h1;
                    emp_h2 = h2;
                }
                best_true = std::min(best_true, tru);
                max_dev = std::max(max_dev, std::abs(tru - emp));
            }
        }
        const double true_risk_of_empirical = weighted_min_loss(emp_h1, emp_h2, false);
        CHECK(true_risk_of_empirical - best_true <= 2.0 * max_dev + 1e-12);

        // The explicit-constant cluster bound dominates the observed deviation.
        const double pseudo_dim = std::ceil(std::log2(static_cast<double>(d)));
        if (max_dev > bound_cluster(p, q, m, pseudo_dim, delta)) ++bound_failures;
    }
    CHECK(bound_failures <= 1);  // 95% of Monte-Carlo draws
}

TEST_CASE("cluster state serialization round-trips") {
    ClusterState state;
    state.models = {make_categorical_model(4, {0.1, -0.2, 0.3, 0.0}), point_mass_model(4, 2)};
    state.assignment = {{"client-0", 0}, {"client-1", 1}, {"zeta", 0}};
    const std::string path = "roundtrip-clusters.bin";
    save_cluster_state(state, path);
    const auto loaded = load_cluster_state(path);
    REQUIRE(loaded.models.size() == 2);
    CHECK(loaded.models[0].params == state.models[0].params);
    CHECK(loaded.models[1].params == state.models[1].params);
    CHECK(loaded.assignment.at("zeta") == 0);
    CHECK(loaded.assignment.at("client-1") == 1);
    std::remove(path.c_str());
}

TEST_CASE("one-cluster training tracks the fedavg model's loss") {
    SyntheticSpec spec;
    spec.num_clients = 20;
    spec.num_classes = 12;
    spec.samples_per_client = 80;
    spec.seed = 55;
    const auto split = synthetic_split(spec);

    HypClusterConfig hc;
    hc.num_clusters = 1;
    hc.rounds = 30;
    hc.clients_per_round = 20;
    hc.restarts = 2;
    hc.client = SgdConfig{.step_size = 0.3, .epochs = 1, .batch_size = 10};
    hc.seed = 7;
    const auto state = train_hypcluster(split.train, hc);

    FederatedConfig fed;
    fed.rounds = 30;
    fed.clients_per_round = 20;
    fed.client = hc.client;
    fed.seed = 7;
    const Model global = train_fedavg(split.train, fed);

    const double cluster_loss = evaluate(state, split.test).uniform_loss;
    const double global_loss = evaluate(global, split.test).uniform_loss;
    CHECK(std::abs(cluster_loss - global_loss) <= 0.05);
}
