#include "fedper/modelinterp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedper/rng.hpp"

namespace fedper {

namespace {

constexpr std::uint64_t kInitTag = 0x4d494e49ull;
constexpr std::uint64_t kVisitTag = 0x4d564953ull;
constexpr std::uint64_t kLocalTag = 0x4d4c4f43ull;
constexpr std::uint64_t kSplitTag = 0x4d53504cull;

// Mean gradient of -log((1-w)*p_c + w*p_l) with respect to the logits of the
// `target` side; `fixed_probs` is the other side's prediction. Featureless
// only needs one prediction per step since the mixture is example-independent.
void mixture_gradient(const Model& target, const std::vector<double>* fixed_probs_featureless,
                      const Model& other, double target_weight, const ClientDataset& ds,
                      std::vector<double>& grad) {
    const int d = target.num_classes;
    std::vector<double> p_target(d), p_other(d), mix(d);
    std::fill(grad.begin(), grad.end(), 0.0);
    const std::int64_t m = ds.count();
    const double inv_m = 1.0 / static_cast<double>(m);

    if (target.kind == ModelKind::categorical_logit) {
        predict_into(target, nullptr, p_target);
        const std::vector<double>& q = *fixed_probs_featureless;
        for (int y = 0; y < d; ++y) mix[y] = target_weight * p_target[y] + (1.0 - target_weight) * q[y];
        const auto counts = label_histogram(ds, d);
        // d/dz_j of -log(mix[y]) = -(w / mix[y]) * p[y] * (delta_jy - p[j])
        for (int y = 0; y < d; ++y) {
            if (counts[y] == 0) continue;
            const double coef =
                -static_cast<double>(counts[y]) * inv_m * target_weight * p_target[y] / mix[y];
            for (int j = 0; j < d; ++j) {
                grad[j] += coef * ((j == y ? 1.0 : 0.0) - p_target[j]);
            }
        }
        return;
    }

    const std::size_t row = target.params_per_class();
    for (std::int64_t i = 0; i < m; ++i) {
        const double* x = ds.feature_row(i);
        predict_into(target, x, p_target);
        predict_into(other, x, p_other);
        const int y = ds.labels[i];
        double mix_y = target_weight * p_target[y] + (1.0 - target_weight) * p_other[y];
        const double coef = -inv_m * target_weight * p_target[y] / mix_y;
        for (int j = 0; j < d; ++j) {
            const double dz = coef * ((j == y ? 1.0 : 0.0) - p_target[j]);
            double* g = grad.data() + j * row;
            for (int f = 0; f < target.feature_dim; ++f) g[f] += dz * x[f];
            g[target.feature_dim] += dz;
        }
    }
}

// Batched SGD step gradient for the local model of the interpolated loss.
void local_mixture_batch_gradient(const Model& local, const Model& global, double lambda,
                                  const ClientDataset& ds, std::span<const std::int64_t> batch,
                                  const std::vector<double>* global_probs_featureless,
                                  std::vector<double>& grad) {
    const int d = local.num_classes;
    std::vector<double> p_local(d), p_global(d);
    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    if (local.kind == ModelKind::categorical_logit) {
        predict_into(local, nullptr, p_local);
        const std::vector<double>& q = *global_probs_featureless;
        for (std::int64_t i : batch) {
            const int y = ds.labels[i];
            const double mix_y = lambda * p_local[y] + (1.0 - lambda) * q[y];
            const double coef = -inv_n * lambda * p_local[y] / mix_y;
            for (int j = 0; j < d; ++j) grad[j] += coef * ((j == y ? 1.0 : 0.0) - p_local[j]);
        }
        return;
    }
    const std::size_t row = local.params_per_class();
    for (std::int64_t i : batch) {
        const double* x = ds.feature_row(i);
        predict_into(local, x, p_local);
        predict_into(global, x, p_global);
        const int y = ds.labels[i];
        const double mix_y = lambda * p_local[y] + (1.0 - lambda) * p_global[y];
        const double coef = -inv_n * lambda * p_local[y] / mix_y;
        for (int j = 0; j < d; ++j) {
            const double dz = coef * ((j == y ? 1.0 : 0.0) - p_local[j]);
            double* g = grad.data() + j * row;
            for (int f = 0; f < local.feature_dim; ++f) g[f] += dz * x[f];
            g[local.feature_dim] += dz;
        }
    }
}

struct HoldoutSplit {
    ClientDataset fit;
    ClientDataset val;
    bool active = false;
};

HoldoutSplit split_holdout(const ClientDataset& client, double fraction, std::uint64_t seed) {
    HoldoutSplit split;
    if (client.count() < 2) return split;
    std::vector<std::int64_t> order(client.count());
    std::iota(order.begin(), order.end(), std::int64_t{0});
    Rng rng = substream(seed, {kSplitTag, fnv1a64(client.client_id)});
    rng.shuffle(order);
    std::int64_t n_val = static_cast<std::int64_t>(fraction * client.count());
    n_val = std::clamp<std::int64_t>(n_val, 1, client.count() - 1);
    split.fit = ClientDataset{client.client_id + "-fit", {}, {}, client.feature_dim};
    split.val = ClientDataset{client.client_id + "-val", {}, {}, client.feature_dim};
    for (std::int64_t j = 0; j < client.count(); ++j) {
        auto& dst = j < n_val ? split.val : split.fit;
        dst.labels.push_back(client.labels[order[j]]);
        if (client.feature_dim > 0) {
            const double* x = client.feature_row(order[j]);
            dst.features.insert(dst.features.end(), x, x + client.feature_dim);
        }
    }
    split.active = true;
    return split;
}

}  // namespace

const PersonalizationEntry* PersonalizationMap::find(const std::string& client_id) const {
    for (const auto& e : entries) {
        if (e.client_id == client_id) return &e;
    }
    return nullptr;
}

double mapper_objective(const PersonalizationMap& pmap, const Population& pop) {
    double total = 0.0;
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        const auto* entry = pmap.find(pop.clients[k].client_id);
        if (entry == nullptr) {
            throw std::invalid_argument("personalization map is missing client '" +
                                        pop.clients[k].client_id + "'");
        }
        total += pop.weights[k] * interpolated_loss(entry->local, pmap.global, entry->lambda,
                                                    pop.clients[k], LossKind::cross_entropy);
    }
    return total;
}

Model local_best_for_lambda(const Model& h_central, const ClientDataset& client, double lambda,
                            const SgdConfig& cfg) {
    if (client.labels.empty()) throw std::invalid_argument("local_best_for_lambda needs data");
    const InterpolationWeight check(lambda);
    (void)check;
    Model local = h_central;
    if (lambda == 0.0) return local;  // objective does not depend on the local model

    std::vector<double> global_probs;
    if (h_central.kind == ModelKind::categorical_logit) global_probs = predict(h_central);

    Rng rng(cfg.seed);
    const std::int64_t m = client.count();
    const std::int64_t batch =
        cfg.batch_size > 0 ? std::min<std::int64_t>(cfg.batch_size, m) : m;
    std::vector<double> grad(local.params.size());
    std::vector<std::int64_t> order(m);
    std::iota(order.begin(), order.end(), std::int64_t{0});

    auto one_step = [&](std::span<const std::int64_t> idx) {
        local_mixture_batch_gradient(local, h_central, lambda, client, idx,
                                     h_central.kind == ModelKind::categorical_logit ? &global_probs
                                                                                    : nullptr,
                                     grad);
        for (std::size_t i = 0; i < local.params.size(); ++i) {
            local.params[i] -= cfg.step_size * grad[i];
        }
    };

    if (cfg.steps > 0) {
        std::vector<std::int64_t> idx(batch);
        for (std::int64_t t = 0; t < cfg.steps; ++t) {
            for (std::int64_t b = 0; b < batch; ++b) idx[b] = rng.next_below(m);
            one_step(idx);
        }
    } else {
        for (int e = 0; e < cfg.epochs; ++e) {
            rng.shuffle(order);
            for (std::int64_t pos = 0; pos < m; pos += batch) {
                one_step(std::span<const std::int64_t>(order.data() + pos,
                                                       std::min(batch, m - pos)));
            }
        }
    }
    return local;
}

LambdaChoice select_lambda(const Model& h_central, const ClientDataset& client,
                           std::span<const double> grid, const SgdConfig& cfg,
                           MapperConfig::Selection selection, double holdout_fraction) {
    if (grid.empty()) throw std::invalid_argument("select_lambda needs a nonempty grid");
    HoldoutSplit split;
    if (selection == MapperConfig::Selection::holdout) {
        split = split_holdout(client, holdout_fraction, cfg.seed);
    }
    const ClientDataset& fit = split.active ? split.fit : client;
    const ClientDataset& sel = split.active ? split.val : client;

    LambdaChoice choice;
    choice.loss = std::numeric_limits<double>::infinity();
    choice.grid_losses.reserve(grid.size());
    for (double lambda : grid) {
        Model local = local_best_for_lambda(h_central, fit, lambda, cfg);
        const double loss =
            interpolated_loss(local, h_central, lambda, sel, LossKind::cross_entropy);
        choice.grid_losses.push_back(loss);
        if (loss < choice.loss) {  // strict: ties keep the smaller lambda
            choice.loss = loss;
            choice.lambda = lambda;
            choice.local = std::move(local);
        }
    }
    return choice;
}

Model mapper_global_step(const Model& h_central, const ClientDataset& client, double lambda,
                         const Model& h_local, double step_size) {
    const InterpolationWeight check(lambda);
    (void)check;
    if (lambda >= 1.0) return h_central;  // global model absent from the loss
    Model next = h_central;
    std::vector<double> grad(next.params.size());
    std::vector<double> local_probs;
    if (h_local.kind == ModelKind::categorical_logit) local_probs = predict(h_local);
    mixture_gradient(next, h_local.kind == ModelKind::categorical_logit ? &local_probs : nullptr,
                     h_local, 1.0 - lambda, client, grad);
    for (std::size_t i = 0; i < next.params.size(); ++i) {
        next.params[i] -= step_size * grad[i];
    }
    return next;
}

namespace {

Model random_global_init(const Population& pop, double scale, std::uint64_t seed) {
    Model model = initial_model(pop);
    if (scale > 0.0) {
        Rng rng = substream(seed, {kInitTag});
        for (double& v : model.params) v = scale * rng.next_normal();
    }
    return model;
}

}  // namespace

Model mapper_train_global(const Population& pop, const MapperConfig& cfg, const Model* init) {
    if (cfg.lambda_grid.empty()) throw std::invalid_argument("mapper needs a lambda grid");
    const int rounds = cfg.rounds > 0 ? cfg.rounds : 50 * static_cast<int>(pop.clients.size());
    Model global = init != nullptr ? *init : random_global_init(pop, cfg.init_scale, cfg.seed);

    for (int t = 0; t < rounds; ++t) {
        Rng rng = substream(cfg.seed, {kVisitTag, static_cast<std::uint64_t>(t)});
        const auto& client = pop.clients[rng.next_below(pop.clients.size())];
        SgdConfig local_cfg = cfg.local;
        local_cfg.seed = mix_seed(cfg.seed, {kVisitTag, static_cast<std::uint64_t>(t),
                                             fnv1a64(client.client_id)});
        const auto choice = select_lambda(global, client, cfg.lambda_grid, local_cfg,
                                          cfg.selection, cfg.holdout_fraction);
        global = mapper_global_step(global, client, choice.lambda, choice.local,
                                    cfg.global_step_size);
    }
    return global;
}

PersonalizationEntry mapper_personalize(const Model& global, const ClientDataset& client,
                                        const MapperConfig& cfg) {
    SgdConfig local_cfg = cfg.local;
    if (cfg.final_local_epochs > 0) {
        local_cfg.epochs = cfg.final_local_epochs;
        local_cfg.steps = 0;
    }
    local_cfg.seed = mix_seed(cfg.seed, {kLocalTag, fnv1a64(client.client_id)});
    auto choice =
        select_lambda(global, client, cfg.lambda_grid, local_cfg, cfg.selection, cfg.holdout_fraction);
    return {client.client_id, std::move(choice.local), choice.lambda};
}

PersonalizationMap train_mapper(const Population& pop, const MapperConfig& cfg) {
    PersonalizationMap pmap;
    pmap.global = mapper_train_global(pop, cfg, nullptr);
    pmap.entries.reserve(pop.clients.size());
    for (const auto& client : pop.clients) {
        pmap.entries.push_back(mapper_personalize(pmap.global, client, cfg));
    }
    return pmap;
}

PersonalizationMap independent_interpolation(const Population& pop, const MapperConfig& cfg) {
    if (cfg.lambda_grid.empty()) throw std::invalid_argument("needs a lambda grid");
    const Model global = train_fedavg(pop, cfg.fedavg);

    PersonalizationMap pmap;
    pmap.global = global;
    pmap.entries.reserve(pop.clients.size());
    for (std::size_t k = 0; k < pop.clients.size(); ++k) {
        const auto& client = pop.clients[k];
        SgdConfig local_cfg = cfg.local;
        local_cfg.seed = mix_seed(cfg.seed, {kLocalTag, fnv1a64(client.client_id)});
        if (cfg.final_local_epochs > 0) {
            local_cfg.epochs = cfg.final_local_epochs;
            local_cfg.steps = 0;
        }
        HoldoutSplit split;
        if (cfg.selection == MapperConfig::Selection::holdout) {
            split = split_holdout(client, cfg.holdout_fraction, local_cfg.seed);
        }
        const ClientDataset& fit = split.active ? split.fit : client;
        const ClientDataset& sel = split.active ? split.val : client;

        const Model local = train_local(fit, pop.label_space.num_classes, local_cfg);
        double best_loss = std::numeric_limits<double>::infinity();
        double best_lambda = cfg.lambda_grid.front();
        for (double lambda : cfg.lambda_grid) {
            const double loss =
                interpolated_loss(local, global, lambda, sel, LossKind::cross_entropy);
            if (loss < best_loss) {
                best_loss = loss;
                best_lambda = lambda;
            }
        }
        pmap.entries.push_back({client.client_id, local, best_lambda});
    }
    return pmap;
}

namespace {

constexpr char kPmapMagic[4] = {'F', 'P', 'P', 'M'};

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_model(std::ofstream& out, const Model& m) {
    write_u32(out, m.kind == ModelKind::categorical_logit ? 0u : 1u);
    write_u32(out, static_cast<std::uint32_t>(m.num_classes));
    write_u32(out, static_cast<std::uint32_t>(m.feature_dim));
    write_u64(out, m.params.size());
    out.write(reinterpret_cast<const char*>(m.params.data()),
              static_cast<std::streamsize>(m.params.size() * sizeof(double)));
}

Model read_model(std::ifstream& in) {
    const std::uint32_t kind = read_u32(in);
    const std::uint32_t num_classes = read_u32(in);
    const std::uint32_t feature_dim = read_u32(in);
    const std::uint64_t n = read_u64(in);
    std::vector<double> params(n);
    in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated model block");
    if (kind == 0) return make_categorical_model(static_cast<int>(num_classes), std::move(params));
    return make_linear_model(static_cast<int>(num_classes), static_cast<int>(feature_dim),
                             std::move(params));
}

}  // namespace

void save_personalization_map(const PersonalizationMap& pmap, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out.write(kPmapMagic, 4);
        write_u32(out, 1u);  // version
        write_model(out, pmap.global);
        write_u64(out, pmap.entries.size());
        for (const auto& e : pmap.entries) {
            write_u32(out, static_cast<std::uint32_t>(e.client_id.size()));
            out.write(e.client_id.data(), static_cast<std::streamsize>(e.client_id.size()));
            write_f64(out, e.lambda);
            write_model(out, e.local);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
    }
}

PersonalizationMap load_personalization_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kPmapMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "' is not a personalization-map file");
    }
    if (read_u32(in) != 1) throw std::runtime_error("unsupported personalization-map version");
    PersonalizationMap pmap;
    pmap.global = read_model(in);
    const std::uint64_t n = read_u64(in);
    pmap.entries.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint32_t len = read_u32(in);
        std::string id(len, '\0');
        in.read(id.data(), len);
        const double lambda = read_f64(in);
        Model local = read_model(in);
        if (!in) throw std::runtime_error("truncated personalization-map entry");
        pmap.entries.push_back({std::move(id), std::move(local), lambda});
    }
    return pmap;
}

}  // namespace fedper
