#include "fedper/synthdata.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fedper/rng.hpp"

namespace fedper {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTrainStream = 0;
constexpr std::uint64_t kTestStream = 1;

std::string client_name(int k) {
    return "client-" + std::to_string(k);
}

void check_synthetic_spec(const SyntheticSpec& spec) {
    if (spec.num_clients < 1) throw std::invalid_argument("synthetic spec needs num_clients >= 1");
    if (spec.num_classes < 5) throw std::invalid_argument("synthetic spec needs num_classes >= 5");
    if (spec.samples_per_client < 1) {
        throw std::invalid_argument("synthetic spec needs samples_per_client >= 1");
    }
}

ClientDataset draw_synthetic_client(const SyntheticSpec& spec, int k, std::uint64_t stream) {
    ClientDataset ds;
    ds.client_id = client_name(k);
    ds.labels.reserve(spec.samples_per_client);
    const int cluster_label = k % 4;
    const int individual_label = k % (spec.num_classes - 4);
    Rng rng = substream(spec.seed, {fnv1a64(ds.client_id), stream});
    for (int i = 0; i < spec.samples_per_client; ++i) {
        const double u = rng.next_double();
        if (u < 0.5) {
            ds.labels.push_back(cluster_label);
        } else if (u < 0.75) {
            ds.labels.push_back(rng.next_int(spec.num_classes));
        } else {
            ds.labels.push_back(individual_label);
        }
    }
    return ds;
}

Population synthetic_draw(const SyntheticSpec& spec, std::uint64_t stream) {
    check_synthetic_spec(spec);
    std::vector<ClientDataset> clients;
    clients.reserve(spec.num_clients);
    for (int k = 0; k < spec.num_clients; ++k) {
        clients.push_back(draw_synthetic_client(spec, k, stream));
    }
    return make_population(LabelSpace{spec.num_classes}, std::move(clients));
}

ClientDataset draw_threshold_client(int k, int n, std::uint64_t seed, std::uint64_t stream) {
    ClientDataset ds;
    ds.client_id = client_name(k);
    ds.feature_dim = 1;
    ds.labels.reserve(n);
    ds.features.reserve(n);
    Rng rng = substream(seed, {fnv1a64(ds.client_id), stream});
    for (int i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        ds.features.push_back(x);
        const bool positive_side = k == 0 ? x > 0.0 : x < 0.0;
        ds.labels.push_back(positive_side ? 1 : 0);
    }
    return ds;
}

Population threshold_draw(int n, std::uint64_t seed, std::uint64_t stream) {
    if (n < 1) throw std::invalid_argument("threshold example needs samples_per_client >= 1");
    std::vector<ClientDataset> clients;
    clients.push_back(draw_threshold_client(0, n, seed, stream));
    clients.push_back(draw_threshold_client(1, n, seed, stream));
    return make_population(LabelSpace{2}, std::move(clients));
}

ClientDataset draw_two_source_client(int k, int d, int m_k, std::uint64_t seed,
                                     std::uint64_t stream) {
    ClientDataset ds;
    ds.client_id = client_name(k);
    ds.labels.reserve(m_k);
    Rng rng = substream(seed, {fnv1a64(ds.client_id), stream});
    for (int i = 0; i < m_k; ++i) {
        if (k % 2 == 0) {
            ds.labels.push_back(1);
        } else {
            ds.labels.push_back(rng.next_int(d));
        }
    }
    return ds;
}

Population two_source_draw(int p, int d, int m_k, std::uint64_t seed, std::uint64_t stream) {
    if (p < 2 || p % 2 != 0) throw std::invalid_argument("two-source population needs an even p >= 2");
    if (d < 2) throw std::invalid_argument("two-source population needs num_classes >= 2");
    if (m_k < 1) throw std::invalid_argument("two-source population needs samples_per_client >= 1");
    std::vector<ClientDataset> clients;
    clients.reserve(p);
    for (int k = 0; k < p; ++k) {
        clients.push_back(draw_two_source_client(k, d, m_k, seed, stream));
    }
    return make_population(LabelSpace{d}, std::move(clients));
}

}  // namespace

std::vector<double> synthetic_label_distribution(const SyntheticSpec& spec, int k) {
    check_synthetic_spec(spec);
    std::vector<double> probs(spec.num_classes, 0.25 / spec.num_classes);
    probs[k % 4] += 0.5;
    probs[k % (spec.num_classes - 4)] += 0.25;
    return probs;
}

Population synthetic_population(const SyntheticSpec& spec) {
    return synthetic_draw(spec, kTrainStream);
}

SplitPopulation synthetic_split(const SyntheticSpec& spec) {
    return {synthetic_draw(spec, kTrainStream), synthetic_draw(spec, kTestStream)};
}

Population threshold_example_population(int samples_per_client, std::uint64_t seed) {
    return threshold_draw(samples_per_client, seed, kTrainStream);
}

SplitPopulation threshold_example_split(int samples_per_client, std::uint64_t seed) {
    return {threshold_draw(samples_per_client, seed, kTrainStream),
            threshold_draw(samples_per_client, seed, kTestStream)};
}

Population two_source_population(int num_clients, int num_classes, int samples_per_client,
                                 std::uint64_t seed) {
    return two_source_draw(num_clients, num_classes, samples_per_client, seed, kTrainStream);
}

SplitPopulation two_source_split(int num_clients, int num_classes, int samples_per_client,
                                 std::uint64_t seed) {
    return {two_source_draw(num_clients, num_classes, samples_per_client, seed, kTrainStream),
            two_source_draw(num_clients, num_classes, samples_per_client, seed, kTestStream)};
}

std::string population_to_string(const Population& pop) {
    std::ostringstream out;
    json header;
    header["schema"] = "fedper-dataset-v1";
    header["num_classes"] = pop.label_space.num_classes;
    header["feature_dim"] = pop.feature_dim;
    header["num_clients"] = pop.clients.size();
    out << header.dump() << '\n';
    for (const auto& c : pop.clients) {
        json rec;
        rec["id"] = c.client_id;
        rec["count"] = c.count();
        rec["labels"] = c.labels;
        if (c.has_features()) {
            json rows = json::array();
            for (std::int64_t i = 0; i < c.count(); ++i) {
                json row = json::array();
                for (int j = 0; j < c.feature_dim; ++j) row.push_back(c.feature_row(i)[j]);
                rows.push_back(std::move(row));
            }
            rec["features"] = std::move(rows);
        }
        out << rec.dump() << '\n';
    }
    return out.str();
}

namespace {

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
    throw std::runtime_error("dataset parse error at line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

Population population_from_string(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) parse_fail(1, "empty file");
    ++line_no;
    json header;
    try {
        header = json::parse(line);
    } catch (const json::parse_error& e) {
        parse_fail(line_no, e.what());
    }
    if (!header.contains("schema") || header["schema"] != "fedper-dataset-v1") {
        parse_fail(line_no, "missing or unknown schema id");
    }
    const int num_classes = header.at("num_classes").get<int>();
    const int feature_dim = header.value("feature_dim", 0);
    const std::size_t expected_clients = header.value("num_clients", std::size_t{0});

    std::vector<ClientDataset> clients;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            parse_fail(line_no, e.what());
        }
        ClientDataset ds;
        try {
            ds.client_id = rec.at("id").get<std::string>();
            ds.labels = rec.at("labels").get<std::vector<int>>();
            const auto declared = rec.at("count").get<std::int64_t>();
            if (declared != ds.count()) {
                parse_fail(line_no, "client '" + ds.client_id + "' declares " +
                                        std::to_string(declared) + " examples but has " +
                                        std::to_string(ds.count()));
            }
            if (feature_dim > 0) {
                ds.feature_dim = feature_dim;
                ds.features.reserve(ds.labels.size() * feature_dim);
                for (const auto& row : rec.at("features")) {
                    if (row.size() != static_cast<std::size_t>(feature_dim)) {
                        parse_fail(line_no, "client '" + ds.client_id + "' has a feature row of width " +
                                                std::to_string(row.size()));
                    }
                    for (const auto& v : row) ds.features.push_back(v.get<double>());
                }
            }
        } catch (const json::exception& e) {
            parse_fail(line_no, e.what());
        }
        clients.push_back(std::move(ds));
    }
    if (clients.empty()) parse_fail(line_no, "no client records");
    if (expected_clients != 0 && clients.size() != expected_clients) {
        parse_fail(line_no, "header declares " + std::to_string(expected_clients) +
                                " clients but file has " + std::to_string(clients.size()));
    }
    return make_population(LabelSpace{num_classes}, std::move(clients));
}

void save_population(const Population& pop, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out << population_to_string(pop);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "'");
    }
}

Population load_population(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return population_from_string(buf.str());
}

}  // namespace fedper
