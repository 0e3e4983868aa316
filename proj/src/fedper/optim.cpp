#include "fedper/optim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedper/rng.hpp"

namespace fedper {

void accumulate_gradient(const Model& model, const ClientDataset& ds,
                         std::span<const std::int64_t> indices, double scale,
                         std::span<double> grad) {
    const std::int64_t n = indices.empty() ? ds.count() : static_cast<std::int64_t>(indices.size());
    if (n == 0) throw std::invalid_argument("gradient over an empty batch");
    const double w = scale / static_cast<double>(n);
    std::vector<double> probs(model.num_classes);
    if (model.kind == ModelKind::categorical_logit) {
        // Gradient is softmax(theta) minus the batch label frequencies.
        predict_into(model, nullptr, probs);
        std::vector<double> freq(model.num_classes, 0.0);
        if (indices.empty()) {
            for (int y : ds.labels) freq[y] += 1.0;
        } else {
            for (std::int64_t i : indices) freq[ds.labels[i]] += 1.0;
        }
        for (int c = 0; c < model.num_classes; ++c) {
            grad[c] += w * (static_cast<double>(n) * probs[c] - freq[c]);
        }
        return;
    }
    const std::size_t row = model.params_per_class();
    auto add_example = [&](std::int64_t i) {
        const double* x = ds.feature_row(i);
        predict_into(model, x, probs);
        const int y = ds.labels[i];
        for (int c = 0; c < model.num_classes; ++c) {
            const double err = probs[c] - (c == y ? 1.0 : 0.0);
            double* g = grad.data() + c * row;
            for (int j = 0; j < model.feature_dim; ++j) g[j] += w * err * x[j];
            g[model.feature_dim] += w * err;
        }
    };
    if (indices.empty()) {
        for (std::int64_t i = 0; i < ds.count(); ++i) add_example(i);
    } else {
        for (std::int64_t i : indices) add_example(i);
    }
}

std::vector<double> gradient(const Model& model, const ClientDataset& ds,
                             std::span<const std::int64_t> indices) {
    std::vector<double> grad(model.params.size(), 0.0);
    accumulate_gradient(model, ds, indices, 1.0, grad);
    return grad;
}

double finite_diff_check(const Model& model, const ClientDataset& ds, double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) {
        throw std::invalid_argument("finite-difference step must lie in (0, 1e-3]");
    }
    const auto analytic = gradient(model, ds);
    Model probe = model;
    double worst = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const double saved = probe.params[i];
        probe.params[i] = saved + eps;
        const double up = empirical_loss(probe, ds, LossKind::cross_entropy);
        probe.params[i] = saved - eps;
        const double down = empirical_loss(probe, ds, LossKind::cross_entropy);
        probe.params[i] = saved;
        const double central = (up - down) / (2.0 * eps);
        worst = std::max(worst, std::abs(analytic[i] - central));
    }
    return worst;
}

void project_to_ball(std::span<double> params, double radius) {
    if (radius <= 0.0) return;
    double norm_sq = 0.0;
    for (double v : params) norm_sq += v * v;
    if (norm_sq <= radius * radius) return;
    const double scale = radius / std::sqrt(norm_sq);
    for (double& v : params) v *= scale;
}

namespace {

void apply_step(Model& model, std::span<const double> grad, const SgdConfig& cfg,
                std::int64_t step_index, std::vector<double>* iterate_sum) {
    const std::size_t n = model.params.size();
    const double eta = cfg.step_decay > 0.0
                           ? cfg.step_size / (1.0 + cfg.step_decay * static_cast<double>(step_index))
                           : cfg.step_size;
    for (std::size_t i = 0; i < n; ++i) {
        double g = grad[i];
        if (cfg.l2 != 0.0) g += cfg.l2 * model.params[i];
        model.params[i] -= eta * g;
    }
    if (cfg.projection_radius > 0.0) project_to_ball(model.params, cfg.projection_radius);
    if (iterate_sum) {
        for (std::size_t i = 0; i < n; ++i) (*iterate_sum)[i] += model.params[i];
    }
}

}  // namespace

Model sgd(const Model& start, const ClientDataset& ds, const SgdConfig& cfg) {
    if (ds.labels.empty()) throw std::invalid_argument("sgd over an empty dataset");
    Model model = start;
    Rng rng(cfg.seed);
    std::vector<double> grad(model.params.size());
    std::vector<double> iterate_sum;
    if (cfg.average_iterates) iterate_sum.assign(model.params.size(), 0.0);
    auto* sum_ptr = cfg.average_iterates ? &iterate_sum : nullptr;
    std::int64_t total_steps = 0;

    if (cfg.steps > 0) {
        const int batch = cfg.batch_size > 0 ? cfg.batch_size : static_cast<int>(ds.count());
        std::vector<std::int64_t> idx(batch);
        for (std::int64_t t = 0; t < cfg.steps; ++t) {
            for (int b = 0; b < batch; ++b) idx[b] = rng.next_below(ds.count());
            std::fill(grad.begin(), grad.end(), 0.0);
            accumulate_gradient(model, ds, idx, 1.0, grad);
            apply_step(model, grad, cfg, total_steps, sum_ptr);
            ++total_steps;
        }
    } else {
        const std::int64_t m = ds.count();
        const std::int64_t batch = cfg.batch_size > 0 ? std::min<std::int64_t>(cfg.batch_size, m) : m;
        std::vector<std::int64_t> order(m);
        std::iota(order.begin(), order.end(), std::int64_t{0});
        for (int e = 0; e < cfg.epochs; ++e) {
            rng.shuffle(order);
            for (std::int64_t pos = 0; pos < m; pos += batch) {
                const std::int64_t take = std::min(batch, m - pos);
                std::fill(grad.begin(), grad.end(), 0.0);
                accumulate_gradient(model, ds,
                                    std::span<const std::int64_t>(order.data() + pos, take), 1.0,
                                    grad);
                apply_step(model, grad, cfg, total_steps, sum_ptr);
                ++total_steps;
            }
        }
    }

    if (cfg.average_iterates && total_steps > 0) {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            model.params[i] = iterate_sum[i] / static_cast<double>(total_steps);
        }
    }
    return model;
}

double dapper_r_threshold(const ConvexityConstants& c) {
    if (c.strong_convexity <= 0.0 || c.gradient_bound <= 0.0 || c.diameter < 0.0) {
        throw std::invalid_argument("convexity constants must be positive");
    }
    const double inner = 4.0 * c.gradient_bound / c.strong_convexity + 2.0 * c.diameter;
    return c.gradient_bound * c.gradient_bound * inner * inner;
}

double dapper_lr(const ConvexityConstants& c, double lambda, double r, std::int64_t m_k) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
    if (r < 1.0 || m_k < 1) throw std::invalid_argument("dapper_lr needs r >= 1 and m_k >= 1");
    const double denom = c.gradient_bound * std::sqrt(r * static_cast<double>(m_k));
    if (lambda >= 1.0) return c.diameter / denom;
    const double pull = 2.0 * c.gradient_bound * lambda / (c.strong_convexity * (1.0 - lambda));
    return std::min(pull, c.diameter) / denom;
}

double epsilon_lambda(double lambda, std::int64_t m_k, std::int64_t m_c) {
    if (m_k < 1 || m_c < 1) throw std::invalid_argument("epsilon_lambda needs m_k, m_C >= 1");
    return std::sqrt(lambda * lambda / static_cast<double>(m_k) +
                     (1.0 - lambda) * (1.0 - lambda) / static_cast<double>(m_c));
}

}  // namespace fedper
