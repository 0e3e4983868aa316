// Domain types shared by every algorithm: client datasets, populations,
// softmax models, and loss evaluation.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedper {

struct LabelSpace {
    int num_classes = 2;
};

// One client's labeled sample. Featureless datasets (feature_dim == 0) are
// used for density estimation; otherwise features is row-major with
// count() rows of feature_dim entries.
struct ClientDataset {
    std::string client_id;
    std::vector<int> labels;
    std::vector<double> features;
    int feature_dim = 0;

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
    bool has_features() const { return feature_dim > 0; }
    const double* feature_row(std::int64_t i) const { return features.data() + i * feature_dim; }
};

// Validates invariants (count >= 1, labels within the label space, feature
// shape) and throws std::invalid_argument naming the client on violation.
void validate_dataset(const ClientDataset& ds, const LabelSpace& space);

struct Population {
    LabelSpace label_space;
    int feature_dim = 0;
    std::vector<ClientDataset> clients;
    std::int64_t total_count = 0;
    std::vector<double> weights;  // defaults to m_k / m

    std::int64_t num_clients() const { return static_cast<std::int64_t>(clients.size()); }
};

Population make_population(LabelSpace space, std::vector<ClientDataset> clients,
                           std::vector<double> weights = {});

// Histogram of labels, length num_classes.
std::vector<std::int64_t> label_histogram(const ClientDataset& ds, int num_classes);

enum class ModelKind { categorical_logit, linear_softmax };

// A softmax-parameterized hypothesis mapping (optional) features to a
// distribution over labels. categorical_logit holds one logit per class;
// linear_softmax holds per-class weight rows of feature_dim entries plus a
// bias, laid out row-major.
struct Model {
    ModelKind kind = ModelKind::categorical_logit;
    int num_classes = 2;
    int feature_dim = 0;
    std::vector<double> params;

    std::size_t params_per_class() const {
        return kind == ModelKind::categorical_logit ? 1 : static_cast<std::size_t>(feature_dim) + 1;
    }
};

Model make_categorical_model(int num_classes, std::vector<double> params = {});
Model make_linear_model(int num_classes, int feature_dim, std::vector<double> params = {});

struct InterpolationWeight {
    double value = 0.0;
    InterpolationWeight() = default;
    explicit InterpolationWeight(double v);
};

// Softmax prediction. x must be null exactly when the model is featureless.
void predict_into(const Model& model, const double* x, std::span<double> out);
std::vector<double> predict(const Model& model, const double* x = nullptr);
std::vector<double> predict(const Model& model, std::span<const double> x);

enum class LossKind { cross_entropy, zero_one };

// Cross-entropy of a predicted distribution against a label, in nats.
double cross_entropy(std::span<const double> probs, int label);

// Argmax with ties broken toward the lowest class index.
int argmax_lowest(std::span<const double> values);

// Mean per-example loss of the model on the dataset.
double empirical_loss(const Model& model, const ClientDataset& ds, LossKind loss);

// lambda * L_local + (1 - lambda) * L_central, cross-entropy.
double mixture_loss(const Model& model, const ClientDataset& local, const ClientDataset& central,
                    InterpolationWeight lambda);

// Convex combination of two predicted distributions (probability space).
std::vector<double> interpolate_predict(const Model& h_local, const Model& h_central,
                                        InterpolationWeight lambda, const double* x = nullptr);

// Mean loss of the interpolated predictor lambda*h_local + (1-lambda)*h_central.
double interpolated_loss(const Model& h_local, const Model& h_central, double lambda,
                         const ClientDataset& ds, LossKind loss);

}  // namespace fedper
