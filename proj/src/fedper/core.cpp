#include "fedper/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedper {

void validate_dataset(const ClientDataset& ds, const LabelSpace& space) {
    if (space.num_classes < 2) {
        throw std::invalid_argument("label space needs at least 2 classes");
    }
    if (ds.labels.empty()) {
        throw std::invalid_argument("client '" + ds.client_id + "' has no examples");
    }
    for (int y : ds.labels) {
        if (y < 0 || y >= space.num_classes) {
            throw std::invalid_argument("client '" + ds.client_id + "' has label " +
                                        std::to_string(y) + " outside [0, " +
                                        std::to_string(space.num_classes) + ")");
        }
    }
    if (ds.feature_dim > 0) {
        if (ds.features.size() != ds.labels.size() * static_cast<std::size_t>(ds.feature_dim)) {
            throw std::invalid_argument("client '" + ds.client_id +
                                        "' feature matrix shape does not match example count");
        }
    } else if (!ds.features.empty()) {
        throw std::invalid_argument("client '" + ds.client_id +
                                    "' has features but feature_dim == 0");
    }
}

Population make_population(LabelSpace space, std::vector<ClientDataset> clients,
                           std::vector<double> weights) {
    if (clients.empty()) throw std::invalid_argument("population needs at least one client");
    Population pop;
    pop.label_space = space;
    pop.feature_dim = clients.front().feature_dim;
    pop.total_count = 0;
    for (const auto& c : clients) {
        validate_dataset(c, space);
        if (c.feature_dim != pop.feature_dim) {
            throw std::invalid_argument("client '" + c.client_id +
                                        "' feature_dim differs from the population's");
        }
        pop.total_count += c.count();
    }
    if (weights.empty()) {
        weights.reserve(clients.size());
        for (const auto& c : clients) {
            weights.push_back(static_cast<double>(c.count()) / static_cast<double>(pop.total_count));
        }
    } else {
        if (weights.size() != clients.size()) {
            throw std::invalid_argument("weight vector length does not match client count");
        }
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw std::invalid_argument("client weights must be nonnegative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("client weights must sum to 1");
        }
    }
    pop.clients = std::move(clients);
    pop.weights = std::move(weights);
    return pop;
}

std::vector<std::int64_t> label_histogram(const ClientDataset& ds, int num_classes) {
    std::vector<std::int64_t> counts(num_classes, 0);
    for (int y : ds.labels) counts[y]++;
    return counts;
}

Model make_categorical_model(int num_classes, std::vector<double> params) {
    if (num_classes < 2) throw std::invalid_argument("model needs at least 2 classes");
    Model m;
    m.kind = ModelKind::categorical_logit;
    m.num_classes = num_classes;
    m.feature_dim = 0;
    if (params.empty()) {
        m.params.assign(num_classes, 0.0);
    } else {
        if (params.size() != static_cast<std::size_t>(num_classes)) {
            throw std::invalid_argument("categorical model expects one logit per class");
        }
        m.params = std::move(params);
    }
    return m;
}

Model make_linear_model(int num_classes, int feature_dim, std::vector<double> params) {
    if (num_classes < 2) throw std::invalid_argument("model needs at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("linear model needs feature_dim >= 1");
    Model m;
    m.kind = ModelKind::linear_softmax;
    m.num_classes = num_classes;
    m.feature_dim = feature_dim;
    const std::size_t n = static_cast<std::size_t>(num_classes) * (feature_dim + 1);
    if (params.empty()) {
        m.params.assign(n, 0.0);
    } else {
        if (params.size() != n) {
            throw std::invalid_argument("linear model expects num_classes*(feature_dim+1) params");
        }
        m.params = std::move(params);
    }
    return m;
}

InterpolationWeight::InterpolationWeight(double v) : value(v) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("interpolation weight must lie in [0, 1]");
    }
}

namespace {

void softmax_inplace(std::span<double> logits) {
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - max_logit);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

}  // namespace

void predict_into(const Model& model, const double* x, std::span<double> out) {
    if (out.size() != static_cast<std::size_t>(model.num_classes)) {
        throw std::invalid_argument("prediction buffer size does not match num_classes");
    }
    if (model.kind == ModelKind::categorical_logit) {
        if (x != nullptr) {
            throw std::invalid_argument("categorical model does not take features");
        }
        std::copy(model.params.begin(), model.params.end(), out.begin());
    } else {
        if (x == nullptr) {
            throw std::invalid_argument("linear model requires a feature vector");
        }
        const std::size_t row = model.params_per_class();
        for (int c = 0; c < model.num_classes; ++c) {
            const double* w = model.params.data() + c * row;
            double z = w[model.feature_dim];  // bias
            for (int j = 0; j < model.feature_dim; ++j) z += w[j] * x[j];
            out[c] = z;
        }
    }
    softmax_inplace(out);
}

std::vector<double> predict(const Model& model, const double* x) {
    std::vector<double> out(model.num_classes);
    predict_into(model, x, out);
    return out;
}

std::vector<double> predict(const Model& model, std::span<const double> x) {
    if (model.kind == ModelKind::linear_softmax &&
        x.size() != static_cast<std::size_t>(model.feature_dim)) {
        throw std::invalid_argument("feature vector length does not match model feature_dim");
    }
    return predict(model, x.data());
}

double cross_entropy(std::span<const double> probs, int label) {
    return -std::log(probs[label]);
}

int argmax_lowest(std::span<const double> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = static_cast<int>(i);
    }
    return best;
}

double empirical_loss(const Model& model, const ClientDataset& ds, LossKind loss) {
    if (ds.labels.empty()) throw std::invalid_argument("empirical_loss over an empty dataset");
    if (ds.has_features() != (model.kind == ModelKind::linear_softmax)) {
        throw std::invalid_argument("model kind does not match dataset feature shape");
    }
    if (ds.has_features() && ds.feature_dim != model.feature_dim) {
        throw std::invalid_argument("dataset feature_dim does not match the model's");
    }
    const std::int64_t m = ds.count();
    std::vector<double> probs(model.num_classes);
    if (!ds.has_features()) {
        // One shared prediction; aggregate through the label histogram.
        predict_into(model, nullptr, probs);
        const auto counts = label_histogram(ds, model.num_classes);
        double total = 0.0;
        if (loss == LossKind::cross_entropy) {
            for (int y = 0; y < model.num_classes; ++y) {
                if (counts[y] > 0) total += counts[y] * -std::log(probs[y]);
            }
        } else {
            const int predicted = argmax_lowest(probs);
            for (int y = 0; y < model.num_classes; ++y) {
                if (y != predicted) total += static_cast<double>(counts[y]);
            }
        }
        return total / static_cast<double>(m);
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        predict_into(model, ds.feature_row(i), probs);
        if (loss == LossKind::cross_entropy) {
            total += cross_entropy(probs, ds.labels[i]);
        } else {
            total += argmax_lowest(probs) != ds.labels[i] ? 1.0 : 0.0;
        }
    }
    return total / static_cast<double>(m);
}

double mixture_loss(const Model& model, const ClientDataset& local, const ClientDataset& central,
                    InterpolationWeight lambda) {
    const double l = lambda.value;
    return l * empirical_loss(model, local, LossKind::cross_entropy) +
           (1.0 - l) * empirical_loss(model, central, LossKind::cross_entropy);
}

std::vector<double> interpolate_predict(const Model& h_local, const Model& h_central,
                                        InterpolationWeight lambda, const double* x) {
    if (h_local.num_classes != h_central.num_classes) {
        throw std::invalid_argument("interpolated models must share a label space");
    }
    std::vector<double> p_local = predict(h_local, h_local.kind == ModelKind::linear_softmax ? x : nullptr);
    std::vector<double> p_central =
        predict(h_central, h_central.kind == ModelKind::linear_softmax ? x : nullptr);
    const double l = lambda.value;
    for (int c = 0; c < h_local.num_classes; ++c) {
        p_local[c] = l * p_local[c] + (1.0 - l) * p_central[c];
    }
    return p_local;
}

double interpolated_loss(const Model& h_local, const Model& h_central, double lambda,
                         const ClientDataset& ds, LossKind loss) {
    if (ds.labels.empty()) throw std::invalid_argument("interpolated_loss over an empty dataset");
    const InterpolationWeight w(lambda);
    const std::int64_t m = ds.count();
    if (!ds.has_features()) {
        const auto mix = interpolate_predict(h_local, h_central, w, nullptr);
        const auto counts = label_histogram(ds, h_local.num_classes);
        double total = 0.0;
        if (loss == LossKind::cross_entropy) {
            for (int y = 0; y < h_local.num_classes; ++y) {
                if (counts[y] > 0) total += counts[y] * -std::log(mix[y]);
            }
        } else {
            const int predicted = argmax_lowest(mix);
            for (int y = 0; y < h_local.num_classes; ++y) {
                if (y != predicted) total += static_cast<double>(counts[y]);
            }
        }
        return total / static_cast<double>(m);
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        const auto mix = interpolate_predict(h_local, h_central, w, ds.feature_row(i));
        if (loss == LossKind::cross_entropy) {
            total += cross_entropy(mix, ds.labels[i]);
        } else {
            total += argmax_lowest(mix) != ds.labels[i] ? 1.0 : 0.0;
        }
    }
    return total / static_cast<double>(m);
}

}  // namespace fedper
