#include "fedper/datainterp.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedper/rng.hpp"

namespace fedper {

namespace {

constexpr std::uint64_t kSubsampleTag = 0x535542ull;
constexpr std::uint64_t kSplitTag = 0x53504c49ull;
constexpr std::uint64_t kTrainTag = 0x545241494eull;

void copy_example(const ClientDataset& from, std::int64_t i, ClientDataset& to) {
    to.labels.push_back(from.labels[i]);
    if (from.feature_dim > 0) {
        const double* row = from.feature_row(i);
        to.features.insert(to.features.end(), row, row + from.feature_dim);
    }
}

}  // namespace

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    grid.reserve(11);
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    return grid;
}

ClientDataset pooled_dataset(const Population& pop, const std::string& exclude_id,
                             const std::vector<int>& restrict_to) {
    ClientDataset pool;
    pool.client_id = "pool";
    pool.feature_dim = pop.feature_dim;
    auto add_client = [&](const ClientDataset& c) {
        if (c.client_id == exclude_id) return;
        pool.labels.insert(pool.labels.end(), c.labels.begin(), c.labels.end());
        pool.features.insert(pool.features.end(), c.features.begin(), c.features.end());
    };
    if (restrict_to.empty()) {
        for (const auto& c : pop.clients) add_client(c);
    } else {
        for (int idx : restrict_to) add_client(pop.clients[idx]);
    }
    if (pool.labels.empty()) throw std::invalid_argument("pooled dataset is empty");
    return pool;
}

ClientDataset subsample_global(const ClientDataset& pool, std::int64_t size, std::uint64_t seed) {
    if (pool.labels.empty()) throw std::invalid_argument("subsample_global from an empty pool");
    if (size < 1) throw std::invalid_argument("subsample size must be >= 1");
    ClientDataset out;
    out.client_id = pool.client_id + "-subsample";
    out.feature_dim = pool.feature_dim;
    out.labels.reserve(size);
    Rng rng = substream(seed, {kSubsampleTag});
    for (std::int64_t i = 0; i < size; ++i) {
        copy_example(pool, rng.next_below(pool.count()), out);
    }
    return out;
}

Model dapper_for_lambda(const Model& h_central, const ClientDataset& local,
                        const ClientDataset& central, double lambda, std::int64_t steps,
                        double step_size, std::uint64_t seed, const StepOptions& opts) {
    if (local.labels.empty() || central.labels.empty()) {
        throw std::invalid_argument("dapper_for_lambda needs nonempty local and central data");
    }
    const InterpolationWeight check(lambda);
    (void)check;
    Model model = h_central;
    Rng rng(seed);
    std::vector<double> grad(model.params.size());
    std::vector<double> iterate_sum;
    if (opts.average_iterates) iterate_sum.assign(model.params.size(), 0.0);
    std::int64_t idx_buf[1];

    for (std::int64_t t = 0; t < steps; ++t) {
        const bool pick_local = rng.next_double() < lambda;
        const ClientDataset& source = pick_local ? local : central;
        idx_buf[0] = static_cast<std::int64_t>(rng.next_below(source.count()));
        std::fill(grad.begin(), grad.end(), 0.0);
        accumulate_gradient(model, source, std::span<const std::int64_t>(idx_buf, 1), 1.0, grad);
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            double g = grad[i];
            if (opts.l2 != 0.0) g += opts.l2 * model.params[i];
            model.params[i] -= step_size * g;
        }
        if (opts.projection_radius > 0.0) project_to_ball(model.params, opts.projection_radius);
        if (opts.average_iterates) {
            for (std::size_t i = 0; i < model.params.size(); ++i) iterate_sum[i] += model.params[i];
        }
    }
    if (opts.average_iterates && steps > 0) {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            model.params[i] = iterate_sum[i] / static_cast<double>(steps);
        }
    }
    return model;
}

DapperResult dapper(const Model& h_central, const ClientDataset& local,
                    const ClientDataset& central_pool, const DapperConfig& cfg) {
    if (cfg.subsample_multiplier < 1) throw std::invalid_argument("subsample multiplier must be >= 1");
    if (cfg.lambda_grid.empty()) throw std::invalid_argument("lambda grid is empty");

    // Optional holdout split of the local data: train on `fit`, select on `val`.
    ClientDataset fit = local;
    ClientDataset val;
    if (cfg.selection == DapperConfig::Selection::holdout && local.count() >= 2) {
        std::vector<std::int64_t> order(local.count());
        std::iota(order.begin(), order.end(), std::int64_t{0});
        Rng rng = substream(cfg.seed, {kSplitTag, fnv1a64(local.client_id)});
        rng.shuffle(order);
        std::int64_t n_val = static_cast<std::int64_t>(cfg.holdout_fraction * local.count());
        n_val = std::clamp<std::int64_t>(n_val, 1, local.count() - 1);
        fit = ClientDataset{local.client_id + "-fit", {}, {}, local.feature_dim};
        val = ClientDataset{local.client_id + "-val", {}, {}, local.feature_dim};
        for (std::int64_t j = 0; j < local.count(); ++j) {
            copy_example(local, order[j], j < n_val ? val : fit);
        }
    }
    const ClientDataset& selection_set =
        cfg.selection == DapperConfig::Selection::holdout && !val.labels.empty() ? val : local;

    const std::int64_t subsample_size =
        static_cast<std::int64_t>(cfg.subsample_multiplier) * local.count();
    const ClientDataset central =
        subsample_global(central_pool, subsample_size, mix_seed(cfg.seed, {kSubsampleTag}));
    const std::int64_t steps = cfg.steps_override > 0 ? cfg.steps_override : subsample_size;

    DapperResult result;
    result.lambda_grid = cfg.lambda_grid;
    result.transferred_examples = subsample_size;
    result.candidate_losses.reserve(cfg.lambda_grid.size());
    double best = std::numeric_limits<double>::infinity();
    // All candidates share the SGD seed (common random numbers across lambda).
    const std::uint64_t train_seed = mix_seed(cfg.seed, {kTrainTag, fnv1a64(local.client_id)});
    for (double lambda : cfg.lambda_grid) {
        Model candidate = dapper_for_lambda(h_central, fit, central, lambda, steps, cfg.step_size,
                                            train_seed, cfg.step_options);
        const double loss = empirical_loss(candidate, selection_set, LossKind::cross_entropy);
        result.candidate_losses.push_back(loss);
        if (loss < best) {
            best = loss;
            result.lambda = lambda;
            result.model = std::move(candidate);
        }
    }
    return result;
}

Model finetune(const Model& h_central, const ClientDataset& local, int epochs, double step_size,
               std::uint64_t seed) {
    if (local.labels.empty()) throw std::invalid_argument("finetune needs a nonempty client");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (epochs == 0) return h_central;
    return dapper_for_lambda(h_central, local, local, 1.0, epochs * local.count(), step_size, seed);
}

}  // namespace fedper
