#include "fedper/selftest.hpp"

#include <algorithm>
#include <cmath>

#include "fedper/analysis.hpp"
#include "fedper/datainterp.hpp"
#include "fedper/experiment.hpp"
#include "fedper/hypcluster.hpp"
#include "fedper/modelinterp.hpp"
#include "fedper/optim.hpp"
#include "fedper/rng.hpp"
#include "fedper/synthdata.hpp"

namespace fedper {

namespace {

bool property_simplex() {
    Rng rng(71);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 2 + rng.next_int(8);
        Model a = make_categorical_model(d), b = make_categorical_model(d);
        for (double& v : a.params) v = 3.0 * rng.next_normal();
        for (double& v : b.params) v = 3.0 * rng.next_normal();
        const auto p = interpolate_predict(a, b, InterpolationWeight(rng.next_double()));
        double sum = 0.0;
        for (double v : p) {
            if (v < 0.0) return false;
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9) return false;
    }
    return true;
}

bool property_gradient_fd() {
    Rng rng(72);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 2 + rng.next_int(6);
        const bool linear = trial % 2 == 1;
        ClientDataset ds;
        ds.client_id = "c";
        Model m = linear ? make_linear_model(d, 2) : make_categorical_model(d);
        ds.feature_dim = linear ? 2 : 0;
        for (int i = 0; i < 6; ++i) {
            ds.labels.push_back(rng.next_int(d));
            if (linear) {
                ds.features.push_back(rng.next_normal());
                ds.features.push_back(rng.next_normal());
            }
        }
        for (double& v : m.params) v = rng.next_normal();
        if (finite_diff_check(m, ds, 1e-5) > 1e-6) return false;
    }
    return true;
}

bool property_em_monotone() {
    Rng rng(73);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 4;
        std::vector<ClientDataset> clients;
        for (int k = 0; k < 6; ++k) {
            ClientDataset ds;
            ds.client_id = "c" + std::to_string(k);
            for (int i = 0; i < 15; ++i) ds.labels.push_back(rng.next_int(d));
            clients.push_back(std::move(ds));
        }
        const auto pop = make_population(LabelSpace{d}, std::move(clients));
        std::vector<std::vector<double>> init = {{0.7, 0.1, 0.1, 0.1}, {0.1, 0.1, 0.1, 0.7}};
        const auto em = full_batch_em(pop, 2, 50, init);
        for (std::size_t i = 1; i < em.objective_trace.size(); ++i) {
            if (em.objective_trace[i] > em.objective_trace[i - 1] + 1e-9) return false;
        }
    }
    return true;
}

bool property_assign_argmin() {
    Rng rng(74);
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 3 + rng.next_int(3);
        std::vector<Model> models;
        for (int i = 0; i < 3; ++i) {
            Model m = make_categorical_model(d);
            for (double& v : m.params) v = rng.next_normal();
            models.push_back(std::move(m));
        }
        std::vector<ClientDataset> clients;
        for (int k = 0; k < 5; ++k) {
            ClientDataset ds;
            ds.client_id = "c" + std::to_string(k);
            for (int i = 0; i < 7; ++i) ds.labels.push_back(rng.next_int(d));
            clients.push_back(std::move(ds));
        }
        const auto f = assign_clusters(models, clients);
        for (std::size_t k = 0; k < clients.size(); ++k) {
            const double chosen = empirical_loss(models[f[k]], clients[k], LossKind::cross_entropy);
            for (const auto& m : models) {
                if (chosen > empirical_loss(m, clients[k], LossKind::cross_entropy)) return false;
            }
        }
    }
    return true;
}

bool property_skewness_min() {
    Rng rng(75);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> lambda(6), fracs(6);
        double sl = 0.0, sf = 0.0;
        for (int i = 0; i < 6; ++i) {
            lambda[i] = 0.02 + rng.next_double();
            fracs[i] = 0.02 + rng.next_double();
            sl += lambda[i];
            sf += fracs[i];
        }
        for (int i = 0; i < 6; ++i) {
            lambda[i] /= sl;
            fracs[i] /= sf;
        }
        if (skewness(lambda, fracs) < 1.0 - 1e-12) return false;
        if (std::abs(skewness(fracs, fracs) - 1.0) > 1e-12) return false;
    }
    return true;
}

bool property_mixture_affine() {
    Rng rng(76);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + rng.next_int(4);
        Model m = make_categorical_model(d);
        for (double& v : m.params) v = rng.next_normal();
        ClientDataset local, central;
        local.client_id = "l";
        central.client_id = "c";
        for (int i = 0; i < 9; ++i) {
            local.labels.push_back(rng.next_int(d));
            central.labels.push_back(rng.next_int(d));
        }
        const double ll = empirical_loss(m, local, LossKind::cross_entropy);
        const double lc = empirical_loss(m, central, LossKind::cross_entropy);
        const double lambda = rng.next_double();
        const double mixed = mixture_loss(m, local, central, InterpolationWeight(lambda));
        if (std::abs(mixed - (lambda * ll + (1.0 - lambda) * lc)) > 1e-12) return false;
    }
    return true;
}

bool property_grid_argmins() {
    Rng rng(77);
    for (int trial = 0; trial < 5; ++trial) {
        const int d = 3;
        ClientDataset local;
        local.client_id = "client";
        for (int i = 0; i < 18; ++i) local.labels.push_back(rng.next_int(d));
        ClientDataset pool;
        pool.client_id = "pool";
        for (int y = 0; y < d; ++y) {
            for (int i = 0; i < 20; ++i) pool.labels.push_back(y);
        }
        DapperConfig dc;
        dc.seed = 9000 + trial;
        dc.step_size = 0.2;
        const Model h_c = make_categorical_model(d);
        const auto result = dapper(h_c, local, pool, dc);
        double best = *std::min_element(result.candidate_losses.begin(),
                                        result.candidate_losses.end());
        if (empirical_loss(result.model, local, LossKind::cross_entropy) > best + 1e-12) {
            return false;
        }

        SgdConfig lc;
        lc.epochs = 3;
        lc.batch_size = 6;
        lc.step_size = 0.3;
        lc.seed = 100 + trial;
        const auto choice = select_lambda(h_c, local, default_lambda_grid(), lc);
        if (choice.loss >
            *std::min_element(choice.grid_losses.begin(), choice.grid_losses.end()) + 1e-12) {
            return false;
        }
    }
    return true;
}

bool property_determinism() {
    SyntheticSpec spec;
    spec.num_clients = 6;
    spec.num_classes = 8;
    spec.samples_per_client = 25;
    spec.seed = 123;
    if (population_to_string(synthetic_population(spec)) !=
        population_to_string(synthetic_population(spec))) {
        return false;
    }
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetSpec::Kind::synthetic;
    cfg.dataset.num_clients = 6;
    cfg.dataset.num_classes = 8;
    cfg.dataset.samples_per_client = 25;
    cfg.algorithm = "hypcluster";
    cfg.cluster.num_clusters = 2;
    cfg.cluster.rounds = 3;
    cfg.cluster.clients_per_round = 4;
    cfg.cluster.restarts = 2;
    cfg.cluster.client = SgdConfig{.step_size = 0.3, .epochs = 1, .batch_size = 5};
    cfg.seeds = {9};
    const auto a = run_experiment(cfg);
    const auto b = run_experiment(cfg);
    return eval_report_to_string(a[0].seen_test) == eval_report_to_string(b[0].seen_test);
}

}  // namespace

std::vector<SuiteResult> run_invariant_suites() {
    struct Named {
        const char* name;
        bool (*fn)();
    };
    const Named suites[] = {
        {"simplex", property_simplex},
        {"gradient-fd", property_gradient_fd},
        {"em-monotone", property_em_monotone},
        {"assign-argmin", property_assign_argmin},
        {"skewness-min", property_skewness_min},
        {"mixture-affine", property_mixture_affine},
        {"grid-argmins", property_grid_argmins},
        {"determinism", property_determinism},
    };
    std::vector<SuiteResult> results;
    for (const auto& s : suites) results.push_back({s.name, s.fn()});
    return results;
}

}  // namespace fedper
