#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fedper/analysis.hpp"
#include "fedper/datainterp.hpp"
#include "fedper/rng.hpp"
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

ClientDataset uniform_pool(int d, int per_class) {
    ClientDataset ds;
    ds.client_id = "pool";
    for (int y = 0; y < d; ++y) {
        for (int i = 0; i < per_class; ++i) ds.labels.push_back(y);
    }
    return ds;
}

}  // namespace

TEST_CASE("subsample_global: exact size, determinism, with-replacement contract") {
    const auto pool = uniform_pool(4, 3);  // 12 examples
    const auto big = subsample_global(pool, 50, 7);
    CHECK(big.count() == 50);  // larger than the pool is fine
    const auto a = subsample_global(pool, 20, 9);
    const auto b = subsample_global(pool, 20, 9);
    CHECK(a.labels == b.labels);
    const auto c = subsample_global(pool, 20, 10);
    CHECK(a.labels != c.labels);
}

TEST_CASE("subsample frequencies track the pool within three sigmas") {
    const auto pool = uniform_pool(5, 40);
    const std::int64_t n = 100000;
    const auto sample = subsample_global(pool, n, 123);
    const auto counts = label_histogram(sample, 5);
    for (int y = 0; y < 5; ++y) {
        const double sigma = std::sqrt(0.2 * 0.8 / static_cast<double>(n));
        CHECK(std::abs(counts[y] / static_cast<double>(n) - 0.2) <= 3.0 * sigma);
    }
}

TEST_CASE("lambda = 0 never touches the local dataset") {
    const auto central = uniform_pool(3, 10);
    const auto local_a = from_counts("a", std::vector<std::int64_t>{12, 0, 0});
    const auto local_b = from_counts("b", std::vector<std::int64_t>{0, 0, 12});
    const Model h_c = make_categorical_model(3, {0.3, 0.0, -0.3});
    const auto out_a = dapper_for_lambda(h_c, local_a, central, 0.0, 300, 0.2, 42);
    const auto out_b = dapper_for_lambda(h_c, local_b, central, 0.0, 300, 0.2, 42);
    CHECK(out_a.params == out_b.params);
}

TEST_CASE("lambda = 1 never touches the central dataset and equals finetune") {
    const auto local = from_counts("a", std::vector<std::int64_t>{2, 8});
    const auto central_one = uniform_pool(2, 30);
    const auto central_two = from_counts("z", std::vector<std::int64_t>{40, 0});
    const Model h_c = make_categorical_model(2);
    const auto out_one = dapper_for_lambda(h_c, local, central_one, 1.0, 40, 0.3, 5);
    const auto out_two = dapper_for_lambda(h_c, local, central_two, 1.0, 40, 0.3, 5);
    CHECK(out_one.params == out_two.params);
    const auto tuned = finetune(h_c, local, 4, 0.3, 5);  // 4 epochs * 10 examples
    CHECK(tuned.params == out_one.params);
}

TEST_CASE("finetune: zero epochs is the identity, one label flips the argmax") {
    const Model h_c = make_categorical_model(2, {1.2, 0.0});
    const auto local = from_counts("a", std::vector<std::int64_t>{0, 10});
    CHECK(finetune(h_c, local, 0, 0.5, 1).params == h_c.params);
    const auto tuned = finetune(h_c, local, 40, 0.5, 1);
    CHECK(argmax_lowest(predict(tuned)) == 1);
}

TEST_CASE("dapper returns the argmin candidate over the grid") {
    Rng rng(88);
    for (int trial = 0; trial < 5; ++trial) {
        ClientDataset local;
        local.client_id = "client-x";
        for (int i = 0; i < 20; ++i) local.labels.push_back(rng.next_int(3));
        const auto pool = uniform_pool(3, 25);
        DapperConfig cfg;
        cfg.seed = 1000 + trial;
        cfg.step_size = 0.2;
        const Model h_c = make_categorical_model(3, {0.1, 0.0, -0.1});
        const auto result = dapper(h_c, local, pool, cfg);
        CHECK(result.candidate_losses.size() == cfg.lambda_grid.size());
        const double min_loss =
            *std::min_element(result.candidate_losses.begin(), result.candidate_losses.end());
        const auto it = std::find(cfg.lambda_grid.begin(), cfg.lambda_grid.end(), result.lambda);
        REQUIRE(it != cfg.lambda_grid.end());
        const auto idx = std::distance(cfg.lambda_grid.begin(), it);
        CHECK(result.candidate_losses[idx] == doctest::Approx(min_loss));
        // The returned model really attains the selection loss.
        CHECK(empirical_loss(result.model, local, LossKind::cross_entropy) ==
              doctest::Approx(result.candidate_losses[idx]).epsilon(1e-12));
    }
}

TEST_CASE("communication accounting: exactly r * m_k examples move") {
    const auto local = from_counts("a", std::vector<std::int64_t>{9, 4});  // m_k = 13
    const auto pool = uniform_pool(2, 50);
    DapperConfig cfg;
    cfg.subsample_multiplier = 5;
    const auto result = dapper(make_categorical_model(2), local, pool, cfg);
    CHECK(result.transferred_examples == 65);
}

TEST_CASE("singleton grid degenerates to plain fine-tuning") {
    const auto local = from_counts("a", std::vector<std::int64_t>{3, 9});
    const auto pool = uniform_pool(2, 30);
    DapperConfig cfg;
    cfg.lambda_grid = {1.0};
    cfg.seed = 4;
    cfg.step_size = 0.25;
    const auto result = dapper(make_categorical_model(2), local, pool, cfg);
    CHECK(result.lambda == 1.0);
    CHECK(result.candidate_losses.size() == 1);
}

TEST_CASE("holdout selection favors local data for a disjoint client") {
    // Local is a point mass on class 0; the pool is uniform. The holdout
    // split is all class 0, so larger lambda wins on it.
    int majority = 0;
    for (int seed = 0; seed < 30; ++seed) {
        const auto local = from_counts("a", std::vector<std::int64_t>{20, 0, 0, 0});
        const auto pool = uniform_pool(4, 30);
        DapperConfig cfg;
        cfg.selection = DapperConfig::Selection::holdout;
        cfg.seed = 500 + seed;
        cfg.step_size = 0.3;
        const auto result = dapper(make_categorical_model(4), local, pool, cfg);
        if (result.lambda >= 0.5) ++majority;
    }
    CHECK(majority > 15);
}

TEST_CASE("with the prescribed rate and step count, SGD hits the target gap") {
    // One strongly convex instance end to end (the acceptance suite runs 20).
    Rng rng(2024);
    const int d = 3;
    const double mu = 3.0;
    const double radius = std::sqrt(2.0) / mu + 0.5;
    ConvexityConstants c;
    c.strong_convexity = mu;
    c.gradient_bound = std::sqrt(2.0) + mu * radius;
    c.diameter = 2.0 * radius;
    const double r = std::ceil(dapper_r_threshold(c));

    oracle::MixtureInstance inst;
    inst.l2 = mu;
    inst.lambda = 0.6;
    inst.local_counts = {14, 3, 8};    // m_k = 25
    inst.central_counts = {40, 70, 90};  // m_C = 200
    const auto local = from_counts("local", inst.local_counts);
    const auto central = from_counts("central", inst.central_counts);

    // h_c: near-exact minimizer of the regularized central loss.
    oracle::MixtureInstance central_only = inst;
    central_only.lambda = 0.0;
    Model h_c = make_categorical_model(d, oracle::minimize_mixture(central_only));

    const auto theta_star = oracle::minimize_mixture(inst);
    const double g_star = oracle::mixture_value(inst, theta_star);

    const std::int64_t steps = static_cast<std::int64_t>(r) * local.count();
    const double eta = dapper_lr(c, inst.lambda, r, local.count());
    StepOptions opts;
    opts.l2 = mu;
    opts.projection_radius = radius;
    opts.average_iterates = true;

    double mean_gap = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        const Model out = dapper_for_lambda(h_c, local, central, inst.lambda, steps, eta,
                                            900 + s, opts);
        mean_gap += oracle::mixture_value(inst, out.params) - g_star;
    }
    mean_gap /= seeds;
    CHECK(mean_gap >= -1e-9);
    CHECK(mean_gap <= epsilon_lambda(inst.lambda, local.count(), central.count()));
}

TEST_CASE("empirical mixture minimizers respect the interpolation bound") {
    // Bounded zero-one loss over the finite point-mass class: the true-risk
    // gap of the empirical mixture optimum stays under the plug-in bound.
    Rng rng(515);
    const double delta = 0.1;
    int failures = 0;
    int total = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 3 + rng.next_int(3);
        std::vector<double> local_true(d), central_true(d);
        double sl = 0.0, sc = 0.0;
        for (int y = 0; y < d; ++y) {
            local_true[y] = 0.05 + rng.next_double();
            central_true[y] = 0.05 + rng.next_double();
            sl += local_true[y];
            sc += central_true[y];
        }
        for (int y = 0; y < d; ++y) {
            local_true[y] /= sl;
            central_true[y] /= sc;
        }
        const std::int64_t m_k = 25 + rng.next_int(25);
        const std::int64_t m_c = 120 + rng.next_int(80);
        std::vector<std::int64_t> local_counts(d, 0), central_counts(d, 0);
        for (std::int64_t i = 0; i < m_k; ++i) local_counts[rng.categorical(local_true)]++;
        for (std::int64_t i = 0; i < m_c; ++i) central_counts[rng.categorical(central_true)]++;

        for (double lambda : {0.2, 0.5, 0.8}) {
            ++total;
            auto mixture_risk = [&](int h, bool empirical) {
                if (empirical) {
                    return lambda * oracle::point_mass_zero_one(h, local_counts) +
                           (1.0 - lambda) * oracle::point_mass_zero_one(h, central_counts);
                }
                return lambda * oracle::point_mass_zero_one_true(h, local_true) +
                       (1.0 - lambda) * oracle::point_mass_zero_one_true(h, central_true);
            };
            int h_emp = 0, h_true = 0;
            for (int h = 1; h < d; ++h) {
                if (mixture_risk(h, true) < mixture_risk(h_emp, true)) h_emp = h;
                if (mixture_risk(h, false) < mixture_risk(h_true, false)) h_true = h;
            }
            const double gap = mixture_risk(h_emp, false) - mixture_risk(h_true, false);
            const double pseudo_dim = std::ceil(std::log2(static_cast<double>(d)));
            if (gap > bound_interp(lambda, m_k, m_c, pseudo_dim, delta)) ++failures;
        }
    }
    CHECK(failures <= total / 20);  // 95% pass rate
}
