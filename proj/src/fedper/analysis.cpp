#include "fedper/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fedper/optim.hpp"
#include "fedper/rng.hpp"

namespace fedper {

using json = nlohmann::json;

namespace {

void check_counts_delta(std::int64_t m, double delta, const char* who) {
    if (m < 1) throw std::invalid_argument(std::string(who) + " needs sample counts >= 1");
    if (!(delta > 0.0 && delta < 1.0)) {
        throw std::invalid_argument(std::string(who) + " needs delta in (0, 1)");
    }
}

}  // namespace

double bound_local(double pseudo_dim, std::int64_t m1, double delta) {
    check_counts_delta(m1, delta, "bound_local");
    return std::sqrt((pseudo_dim + std::log(1.0 / delta)) / static_cast<double>(m1));
}

double bound_global(double pseudo_dim, std::int64_t m, double delta, double disc) {
    check_counts_delta(m, delta, "bound_global");
    return std::sqrt((pseudo_dim + std::log(1.0 / delta)) / static_cast<double>(m)) + disc;
}

double bound_cluster(std::int64_t p, std::int64_t q, std::int64_t m, double pseudo_dim,
                     double delta) {
    check_counts_delta(m, delta, "bound_cluster");
    if (p < 1 || q < 1) throw std::invalid_argument("bound_cluster needs p, q >= 1");
    const double dm = static_cast<double>(m);
    const double estimation = std::sqrt(4.0 * static_cast<double>(p) *
                                        std::log(2.0 * static_cast<double>(q) / delta) / dm);
    const double complexity = std::sqrt(pseudo_dim * static_cast<double>(q) / dm *
                                        std::log(std::exp(1.0) * dm / pseudo_dim));
    return estimation + complexity;
}

double bound_interp(double lambda, std::int64_t m_k, std::int64_t m_c, double pseudo_dim,
                    double delta) {
    check_counts_delta(m_k, delta, "bound_interp");
    return epsilon_lambda(lambda, m_k, m_c) * std::sqrt(pseudo_dim * std::log(1.0 / delta));
}

double bound_model_interp(double pseudo_dim_central, double pseudo_dim_local, std::int64_t p,
                          std::int64_t m, double lipschitz, double delta) {
    check_counts_delta(m, delta, "bound_model_interp");
    const double dm = static_cast<double>(m);
    const double e = std::exp(1.0);
    const double central =
        std::sqrt(pseudo_dim_central / dm * std::log(e * dm / pseudo_dim_central));
    const double local = std::sqrt(pseudo_dim_local * static_cast<double>(p) / dm *
                                   std::log(e * dm / pseudo_dim_local));
    return 2.0 * lipschitz * (central + local) + 2.0 * std::sqrt(std::log(1.0 / delta) / dm);
}

double skewness(std::span<const double> lambda, std::span<const double> sample_fractions) {
    if (lambda.size() != sample_fractions.size()) {
        throw std::invalid_argument("skewness needs simplex vectors of equal length");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < lambda.size(); ++k) {
        if (sample_fractions[k] <= 0.0) {
            throw std::invalid_argument("skewness needs strictly positive sample fractions");
        }
        total += lambda[k] * lambda[k] / sample_fractions[k];
    }
    return total;
}

double discrepancy(const ClientDataset& a, const ClientDataset& b, ModelKind kind, int num_classes,
                   const DiscrepancyBudget& budget) {
    if (a.labels.empty() || b.labels.empty()) {
        throw std::invalid_argument("discrepancy needs nonempty datasets");
    }
    Model model = kind == ModelKind::categorical_logit
                      ? make_categorical_model(num_classes)
                      : make_linear_model(num_classes, a.feature_dim);
    const std::size_t n = model.params.size();
    double best = 0.0;
    std::vector<double> grad_a(n), grad_b(n);

    for (int restart = 0; restart < budget.restarts; ++restart) {
        Rng rng = substream(budget.seed, {static_cast<std::uint64_t>(restart)});
        for (double& v : model.params) v = budget.radius * 0.3 * rng.next_normal();
        project_to_ball(model.params, budget.radius);

        for (int t = 0; t < budget.steps; ++t) {
            const double diff = empirical_loss(model, a, LossKind::cross_entropy) -
                                empirical_loss(model, b, LossKind::cross_entropy);
            best = std::max(best, std::abs(diff));
            const double sign = diff >= 0.0 ? 1.0 : -1.0;
            std::fill(grad_a.begin(), grad_a.end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);
            accumulate_gradient(model, a, {}, 1.0, grad_a);
            accumulate_gradient(model, b, {}, 1.0, grad_b);
            for (std::size_t i = 0; i < n; ++i) {
                model.params[i] += budget.step_size * sign * (grad_a[i] - grad_b[i]);
            }
            project_to_ball(model.params, budget.radius);
        }
        const double diff = empirical_loss(model, a, LossKind::cross_entropy) -
                            empirical_loss(model, b, LossKind::cross_entropy);
        best = std::max(best, std::abs(diff));
    }
    return best;
}

double discrepancy_exact(const ClientDataset& a, const ClientDataset& b,
                         std::span<const Model> hypotheses, LossKind loss) {
    if (hypotheses.empty()) throw std::invalid_argument("discrepancy_exact needs hypotheses");
    double best = 0.0;
    for (const auto& h : hypotheses) {
        best = std::max(best, std::abs(empirical_loss(h, a, loss) - empirical_loss(h, b, loss)));
    }
    return best;
}

namespace {

EvalReport finalize_report(std::vector<ClientMetric> metrics) {
    EvalReport report;
    report.per_client = std::move(metrics);
    double uniform_loss = 0.0, uniform_acc = 0.0, weighted_loss = 0.0, weighted_acc = 0.0;
    std::int64_t total = 0;
    for (const auto& m : report.per_client) total += m.count;
    for (const auto& m : report.per_client) {
        uniform_loss += m.loss;
        uniform_acc += m.accuracy;
        const double w = static_cast<double>(m.count) / static_cast<double>(total);
        weighted_loss += w * m.loss;
        weighted_acc += w * m.accuracy;
    }
    const double p = static_cast<double>(report.per_client.size());
    report.uniform_loss = uniform_loss / p;
    report.uniform_accuracy = uniform_acc / p;
    report.weighted_loss = weighted_loss;
    report.weighted_accuracy = weighted_acc;
    return report;
}

ClientMetric metric_for(const std::string& id, double loss, double zero_one, std::int64_t count) {
    return {id, count, loss, 1.0 - zero_one};
}

}  // namespace

EvalReport evaluate(const Model& model, const Population& test) {
    std::vector<ClientMetric> metrics;
    metrics.reserve(test.clients.size());
    for (const auto& c : test.clients) {
        metrics.push_back(metric_for(c.client_id, empirical_loss(model, c, LossKind::cross_entropy),
                                     empirical_loss(model, c, LossKind::zero_one), c.count()));
    }
    return finalize_report(std::move(metrics));
}

EvalReport evaluate(const ClusterState& state, const Population& test) {
    if (state.models.empty()) throw std::invalid_argument("cluster state has no models");
    std::vector<ClientMetric> metrics;
    metrics.reserve(test.clients.size());
    for (const auto& c : test.clients) {
        int cluster;
        if (auto it = state.assignment.find(c.client_id); it != state.assignment.end()) {
            cluster = it->second;
        } else {
            cluster = assign_clusters(state.models, std::span<const ClientDataset>(&c, 1))[0];
        }
        const auto& model = state.models[cluster];
        metrics.push_back(metric_for(c.client_id, empirical_loss(model, c, LossKind::cross_entropy),
                                     empirical_loss(model, c, LossKind::zero_one), c.count()));
    }
    return finalize_report(std::move(metrics));
}

EvalReport evaluate(const PersonalizationMap& pmap, const Population& test) {
    std::vector<ClientMetric> metrics;
    metrics.reserve(test.clients.size());
    for (const auto& c : test.clients) {
        const auto* entry = pmap.find(c.client_id);
        if (entry == nullptr) {
            throw std::invalid_argument("personalization map is missing client '" + c.client_id +
                                        "'");
        }
        metrics.push_back(metric_for(
            c.client_id,
            interpolated_loss(entry->local, pmap.global, entry->lambda, c, LossKind::cross_entropy),
            interpolated_loss(entry->local, pmap.global, entry->lambda, c, LossKind::zero_one),
            c.count()));
    }
    return finalize_report(std::move(metrics));
}

std::string eval_report_to_string(const EvalReport& report) {
    std::ostringstream out;
    json header;
    header["schema"] = "fedper-eval-v1";
    header["metadata"] = report.metadata;
    out << header.dump() << '\n';
    for (const auto& m : report.per_client) {
        json rec;
        rec["client"] = m.client_id;
        rec["count"] = m.count;
        rec["loss"] = m.loss;
        rec["accuracy"] = m.accuracy;
        out << rec.dump() << '\n';
    }
    json summary;
    summary["summary"] = {{"uniform_loss", report.uniform_loss},
                          {"weighted_loss", report.weighted_loss},
                          {"uniform_accuracy", report.uniform_accuracy},
                          {"weighted_accuracy", report.weighted_accuracy},
                          {"num_clients", report.per_client.size()}};
    out << summary.dump() << '\n';
    return out.str();
}

void write_eval_report(const EvalReport& report, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out << eval_report_to_string(report);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
    }
}

std::string summary_table(const EvalReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "clients: " << report.per_client.size() << "\n";
    out << "uniform mean   loss " << report.uniform_loss << "  accuracy " << report.uniform_accuracy
        << "\n";
    out << "weighted mean  loss " << report.weighted_loss << "  accuracy "
        << report.weighted_accuracy << "\n";
    return out.str();
}

}  // namespace fedper
