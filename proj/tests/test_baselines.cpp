#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedper/baselines.hpp"
#include "fedper/rng.hpp"
#include "fedper/synthdata.hpp"

using namespace fedper;

namespace {

ClientDataset labels_only(std::string id, std::vector<int> labels) {
    ClientDataset ds;
    ds.client_id = std::move(id);
    ds.labels = std::move(labels);
    return ds;
}

ClientDataset repeated(std::string id, std::initializer_list<std::pair<int, int>> label_counts) {
    ClientDataset ds;
    ds.client_id = std::move(id);
    for (auto [label, count] : label_counts) {
        for (int i = 0; i < count; ++i) ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace

TEST_CASE("train_local: single-label client ends with that argmax") {
    SgdConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    cfg.step_size = 0.5;
    const Model m = train_local(labels_only("a", {2, 2, 2, 2, 2, 2}), 4, cfg);
    CHECK(argmax_lowest(predict(m)) == 2);
}

TEST_CASE("train_local: long training recovers the empirical distribution") {
    const auto client = repeated("a", {{0, 50}, {1, 30}, {2, 20}});
    SgdConfig cfg;
    cfg.epochs = 3000;
    cfg.batch_size = 0;  // deterministic full-batch descent
    cfg.step_size = 0.9;
    const Model m = train_local(client, 3, cfg);
    const auto p = predict(m);
    const double tv = 0.5 * (std::abs(p[0] - 0.5) + std::abs(p[1] - 0.3) + std::abs(p[2] - 0.2));
    CHECK(tv <= 1e-3);
}

TEST_CASE("train_local: one example overfits to a near point mass") {
    SgdConfig cfg;
    cfg.epochs = 4000;
    cfg.batch_size = 0;
    cfg.step_size = 0.9;
    const Model m = train_local(labels_only("a", {1}), 3, cfg);
    CHECK(predict(m)[1] > 0.95);
}

TEST_CASE("train_fedavg with one client chains that client's local updates") {
    const auto client = repeated("only", {{0, 5}, {1, 3}});
    const auto pop = make_population(LabelSpace{2}, {client});
    FederatedConfig cfg;
    cfg.rounds = 3;
    cfg.clients_per_round = 1;
    cfg.client.epochs = 2;
    cfg.client.batch_size = 2;
    cfg.client.step_size = 0.4;
    cfg.seed = 31;
    const Model fed = train_fedavg(pop, cfg);

    Model manual = make_categorical_model(2);
    for (int t = 0; t < 3; ++t) {
        SgdConfig local = cfg.client;
        local.seed = federated_client_seed(cfg.seed, t, "only");
        manual = sgd(manual, client, local);
    }
    for (int i = 0; i < 2; ++i) CHECK(fed.params[i] == doctest::Approx(manual.params[i]).epsilon(1e-14));
}

TEST_CASE("train_fedavg pools two opposite clients into a coin flip") {
    const auto pop = make_population(
        LabelSpace{2}, {repeated("zeros", {{0, 40}}), repeated("ones", {{1, 40}})});
    FederatedConfig cfg;
    cfg.rounds = 60;
    cfg.clients_per_round = 2;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 0;
    cfg.client.step_size = 0.8;
    cfg.seed = 3;
    const auto p = predict(train_fedavg(pop, cfg));
    CHECK(p[0] == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("full participation with one full-batch step is exact pooled descent") {
    const auto pop = make_population(LabelSpace{3}, {repeated("a", {{0, 6}, {1, 2}}),
                                                     repeated("b", {{2, 4}}),
                                                     repeated("c", {{1, 3}, {2, 1}})});
    FederatedConfig cfg;
    cfg.rounds = 5;
    cfg.clients_per_round = 3;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 0;
    cfg.client.step_size = 0.3;
    cfg.seed = 17;
    const Model fed = train_fedavg(pop, cfg);

    ClientDataset pooled;
    pooled.client_id = "pooled";
    for (const auto& c : pop.clients) {
        pooled.labels.insert(pooled.labels.end(), c.labels.begin(), c.labels.end());
    }
    SgdConfig gd;
    gd.epochs = 5;
    gd.batch_size = 0;
    gd.step_size = 0.3;
    const Model direct = sgd(make_categorical_model(3), pooled, gd);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(fed.params[i] - direct.params[i]) <= 1e-9);
}

TEST_CASE("agnostic training with a single domain is exactly fedavg") {
    SyntheticSpec spec;
    spec.num_clients = 8;
    spec.num_classes = 6;
    spec.samples_per_client = 20;
    spec.seed = 4;
    const auto pop = synthetic_population(spec);
    FederatedConfig cfg;
    cfg.rounds = 4;
    cfg.clients_per_round = 5;
    cfg.seed = 9;
    const Model fed = train_fedavg(pop, cfg);
    const auto agn = train_agnostic(pop, std::vector<int>(8, 0), 1, cfg);
    CHECK(fed.params == agn.model.params);
    CHECK(agn.domain_weights == std::vector<double>{1.0});
}

TEST_CASE("agnostic weights stay balanced across symmetric domains") {
    // Domain 1 is domain 0 with labels relabeled by a swap: fully symmetric.
    const auto pop = make_population(LabelSpace{2}, {repeated("a0", {{0, 30}, {1, 10}}),
                                                     repeated("a1", {{0, 30}, {1, 10}}),
                                                     repeated("b0", {{1, 30}, {0, 10}}),
                                                     repeated("b1", {{1, 30}, {0, 10}})});
    FederatedConfig cfg;
    cfg.rounds = 40;
    cfg.clients_per_round = 4;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 0;
    cfg.client.step_size = 0.5;
    cfg.domain_step = 0.05;
    cfg.seed = 21;
    const auto result = train_agnostic(pop, {0, 0, 1, 1}, 2, cfg);
    CHECK(result.domain_weights[0] == doctest::Approx(0.5).epsilon(0.05));
    CHECK(result.domain_weights[1] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("agnostic training shrinks the worst-domain loss versus fedavg") {
    // Domain A dominates the pool; fedavg leans toward A and hurts B.
    std::vector<ClientDataset> clients;
    for (int i = 0; i < 8; ++i) clients.push_back(repeated("a" + std::to_string(i), {{0, 36}, {1, 4}}));
    clients.push_back(repeated("b0", {{1, 36}, {0, 4}}));
    const auto pop = make_population(LabelSpace{2}, std::move(clients));
    std::vector<int> domains(9, 0);
    domains[8] = 1;

    FederatedConfig cfg;
    cfg.rounds = 80;
    cfg.clients_per_round = 9;
    cfg.client.epochs = 1;
    cfg.client.batch_size = 0;
    cfg.client.step_size = 0.5;
    cfg.domain_step = 0.2;
    cfg.seed = 2;
    const Model fed = train_fedavg(pop, cfg);
    const auto agn = train_agnostic(pop, domains, 2, cfg);

    auto domain_loss = [&](const Model& m, int domain) {
        double worst = 0.0;
        for (std::size_t k = 0; k < pop.clients.size(); ++k) {
            if (domains[k] != domain) continue;
            worst = std::max(worst, empirical_loss(m, pop.clients[k], LossKind::cross_entropy));
        }
        return worst;
    };
    const double fed_max = std::max(domain_loss(fed, 0), domain_loss(fed, 1));
    const double agn_max = std::max(domain_loss(agn.model, 0), domain_loss(agn.model, 1));
    CHECK(agn_max <= fed_max + 0.05);
    CHECK(agn_max < fed_max);  // strictly better on this construction

    double sum = 0.0;
    for (double w : agn.domain_weights) {
        CHECK(w >= 0.0);
        sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("agnostic input validation") {
    const auto pop = make_population(LabelSpace{2}, {repeated("a", {{0, 4}})});
    FederatedConfig cfg;
    CHECK_THROWS_AS(train_agnostic(pop, {0}, 2, cfg), std::invalid_argument);   // empty domain
    CHECK_THROWS_AS(train_agnostic(pop, {1}, 1, cfg), std::invalid_argument);   // out of range
    CHECK_THROWS_AS(train_agnostic(pop, {0, 0}, 1, cfg), std::invalid_argument);  // length
}

TEST_CASE("simplex projection") {
    std::vector<double> v = {0.4, 0.3, 0.3};
    project_to_simplex(v);
    CHECK(v[0] == doctest::Approx(0.4).epsilon(1e-12));  // already a simplex point

    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(4);
        for (double& xi : x) xi = 3.0 * rng.next_normal();
        project_to_simplex(x);
        double sum = 0.0;
        for (double xi : x) {
            CHECK(xi >= 0.0);
            sum += xi;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}
