// SGD machinery, analytic softmax cross-entropy gradients, gradient
// correctness checks, and the step-size / step-count constants used by the
// data-interpolation convergence analysis.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedper/core.hpp"

namespace fedper {

struct SgdConfig {
    double step_size = 0.1;
    int epochs = 1;            // shuffled sweeps; used when steps == 0
    std::int64_t steps = 0;    // uniform-with-replacement sampling when > 0
    int batch_size = 10;       // 0 means full batch
    std::uint64_t seed = 0;
    double l2 = 0.0;                 // adds (l2/2)||theta||^2 to the objective
    double projection_radius = 0.0;  // projects onto a parameter ball when > 0
    bool average_iterates = false;   // return the running mean of iterates
    double step_decay = 0.0;         // eta_t = step_size / (1 + step_decay * t)
};

// Constants of a strongly convex instance: modulus mu, a bound on stochastic
// gradient norms, and the diameter of the feasible parameter ball.
struct ConvexityConstants {
    double strong_convexity = 1.0;  // mu
    double gradient_bound = 1.0;    // G
    double diameter = 1.0;          // R
};

// Gradient of the mean cross-entropy over the given examples (no l2 term).
// `indices` selects a batch; the full dataset is used when it is empty.
std::vector<double> gradient(const Model& model, const ClientDataset& ds,
                             std::span<const std::int64_t> indices = {});

// Adds the mean cross-entropy gradient over `indices` into grad (scaled by
// `scale`); shared by all training loops.
void accumulate_gradient(const Model& model, const ClientDataset& ds,
                         std::span<const std::int64_t> indices, double scale,
                         std::span<double> grad);

// Max over coordinates of |analytic - central difference| on the full-batch
// cross-entropy; eps must lie in (0, 1e-3].
double finite_diff_check(const Model& model, const ClientDataset& ds, double eps);

// Runs SGD on the dataset per the config and returns the trained model.
Model sgd(const Model& start, const ClientDataset& ds, const SgdConfig& cfg);

// In-place Euclidean projection onto the origin-centered ball.
void project_to_ball(std::span<double> params, double radius);

// r >= G^2 (4G/mu + 2R)^2
double dapper_r_threshold(const ConvexityConstants& c);

// eta = min(2 G lambda / (mu (1 - lambda)), R) / (G sqrt(r m_k)); the
// lambda = 1 endpoint returns the min's second arm.
double dapper_lr(const ConvexityConstants& c, double lambda, double r, std::int64_t m_k);

// sqrt(lambda^2 / m_k + (1 - lambda)^2 / m_C)
double epsilon_lambda(double lambda, std::int64_t m_k, std::int64_t m_c);

}  // namespace fedper
