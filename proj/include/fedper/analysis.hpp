// Discrepancy and skewness estimators, generalization-bound calculators, and
// per-client evaluation reports.
//
// The bound calculators are formal plug-in values: hidden constants are set
// to 1 except where the source formula carries explicit ones, and the
// pseudo-dimension is caller-supplied.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedper/core.hpp"
#include "fedper/hypcluster.hpp"
#include "fedper/modelinterp.hpp"

namespace fedper {

// sqrt((d + log(1/delta)) / m_1)
double bound_local(double pseudo_dim, std::int64_t m1, double delta);

// sqrt((d + log(1/delta)) / m) + disc
double bound_global(double pseudo_dim, std::int64_t m, double delta, double disc);

// sqrt(4 p log(2q/delta) / m) + sqrt((d q / m) log(e m / d))
double bound_cluster(std::int64_t p, std::int64_t q, std::int64_t m, double pseudo_dim,
                     double delta);

// sqrt(lambda^2/m_k + (1-lambda)^2/m_C) * sqrt(d log(1/delta))
double bound_interp(double lambda, std::int64_t m_k, std::int64_t m_c, double pseudo_dim,
                    double delta);

// 2L (sqrt((d_c/m) log(em/d_c)) + sqrt((d_l p / m) log(em/d_l))) + 2 sqrt(log(1/delta)/m)
double bound_model_interp(double pseudo_dim_central, double pseudo_dim_local, std::int64_t p,
                          std::int64_t m, double lipschitz, double delta);

// Skewness between a reweighting and the empirical sample fractions:
// sum_k lambda_k^2 / m_k. Always >= 1 on simplex pairs, equal iff lambda == m.
double skewness(std::span<const double> lambda, std::span<const double> sample_fractions);

struct DiscrepancyBudget {
    int restarts = 8;
    int steps = 200;
    double step_size = 0.5;
    double radius = 5.0;  // hypothesis ball; cross-entropy is unbounded without it
    std::uint64_t seed = 0;
};

// Lower-bound estimate of max_h |L_A(h) - L_B(h)| by multi-restart projected
// gradient ascent over the parameter ball, cross-entropy loss. Restart
// streams are nested, so a larger budget never lowers the estimate.
double discrepancy(const ClientDataset& a, const ClientDataset& b, ModelKind kind, int num_classes,
                   const DiscrepancyBudget& budget = {});

// Exact maximization over an explicit finite hypothesis list.
double discrepancy_exact(const ClientDataset& a, const ClientDataset& b,
                         std::span<const Model> hypotheses, LossKind loss);

struct ClientMetric {
    std::string client_id;
    std::int64_t count = 0;
    double loss = 0.0;      // cross-entropy, nats
    double accuracy = 0.0;  // 1 - zero-one loss
};

struct EvalReport {
    std::vector<ClientMetric> per_client;
    double uniform_loss = 0.0;
    double weighted_loss = 0.0;
    double uniform_accuracy = 0.0;
    double weighted_accuracy = 0.0;
    std::map<std::string, std::string> metadata;
};

EvalReport evaluate(const Model& model, const Population& test);

// Seen clients use the state's assignment; clients absent from it are
// assigned from their own data at evaluation time.
EvalReport evaluate(const ClusterState& state, const Population& test);

EvalReport evaluate(const PersonalizationMap& pmap, const Population& test);

// Line-delimited records plus a trailing summary record (schema id in the
// header line); `summary_table` renders a human-readable table.
void write_eval_report(const EvalReport& report, const std::string& path);
std::string eval_report_to_string(const EvalReport& report);
std::string summary_table(const EvalReport& report);

}  // namespace fedper
