#pragma once

// Fully connected networks: float reference and crossbar-mapped forward pass.

#include "xbarmap/harness/matrix_io.hpp"
#include "xbarmap/harness/tiling.hpp"

namespace xbar {

enum class Activation { None, Relu };

struct DenseLayer {
    Matrix w; // out x in
    Vector b;
    Activation activation = Activation::Relu;
};

inline Vector activate(Vector z, Activation a) {
    if (a == Activation::Relu) z = z.cwiseMax(0.0);
    return z;
}

struct Network {
    std::vector<DenseLayer> layers;

    [[nodiscard]] Vector forward(Vector x) const {
        for (const DenseLayer& l : layers) x = activate(l.w * x + l.b, l.activation);
        return x;
    }
};

struct Dataset {
    Matrix x; // samples x features
    std::vector<int> labels;
};

inline int argmax(const Vector& v) {
    Eigen::Index k = 0;
    v.maxCoeff(&k);
    return static_cast<int>(k);
}

/// {"schema_version": 1, "layers": [{"weights": matrix, "bias": [...], "activation": "relu"|"none"}]}
inline Network network_from_json(const nlohmann::json& j, const std::string& source = "<network>") {
    if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array()) {
        throw io::FormatError(source, 0, 0, "expected an object with a 'layers' array");
    }
    if (j.value("schema_version", 0) != 1) throw io::FormatError(source, 0, 0, "unsupported schema_version");
    Network net;
    int k = 0;
    for (const auto& lj : j["layers"]) {
        const std::string where = source + " layer " + std::to_string(k++);
        if (!lj.contains("weights") || !lj.contains("bias")) throw io::FormatError(where, 0, 0, "needs weights and bias");
        DenseLayer l;
        l.w = io::matrix_from_json(lj["weights"], where + " weights");
        const auto& bj = lj["bias"];
        if (!bj.is_array() || static_cast<Eigen::Index>(bj.size()) != l.w.rows()) {
            throw io::FormatError(where, 0, 0, "bias length must equal the weight row count");
        }
        l.b.resize(l.w.rows());
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = bj[static_cast<std::size_t>(i)].get<double>();
        const std::string act = lj.value("activation", "relu");
        if (act != "relu" && act != "none") throw io::FormatError(where, 0, 0, "activation must be relu or none");
        l.activation = act == "relu" ? Activation::Relu : Activation::None;
        if (!net.layers.empty() && net.layers.back().w.rows() != l.w.cols()) {
            throw io::FormatError(where, 0, 0, "input size does not match the previous layer");
        }
        net.layers.push_back(std::move(l));
    }
    if (net.layers.empty()) throw io::FormatError(source, 0, 0, "no layers");
    return net;
}

inline Network load_network(const std::filesystem::path& path) {
    return network_from_json(io::read_json_file(path), path.string());
}

/// CSV whose last column holds integer class labels.
inline Dataset load_dataset(const std::filesystem::path& path) {
    const Matrix m = io::load_matrix(path);
    if (m.cols() < 2) throw io::FormatError(path.string(), 0, 0, "need features plus a label column");
    Dataset d;
    d.x = m.leftCols(m.cols() - 1);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double l = m(i, m.cols() - 1);
        if (l != std::floor(l) || l < 0) {
            throw io::FormatError(path.string(), static_cast<int>(i + 1), static_cast<int>(m.cols()),
                                  "label must be a non-negative integer");
        }
        d.labels.push_back(static_cast<int>(l));
    }
    return d;
}

struct MappedNetwork {
    std::vector<TiledLayer> layers;
    std::vector<Vector> bias;
    std::vector<Activation> activation;

    [[nodiscard]] Vector forward(Vector x, const Converters& conv) const {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            x = activate(layer_forward(layers[k], x, conv) + bias[k], activation[k]);
        }
        return x;
    }
};

inline MappedNetwork map_network(const Network& net, const CrossbarConfig& config, const LayerMappingOptions& opts) {
    MappedNetwork out;
    for (const DenseLayer& l : net.layers) {
        TiledLayer t = partition_matrix(l.w, config);
        map_layer(t, opts);
        out.layers.push_back(std::move(t));
        out.bias.push_back(l.b);
        out.activation.push_back(l.activation);
    }
    return out;
}

inline MappedNetwork perturb_network(const MappedNetwork& net, double delta, std::uint64_t seed,
                                     const std::optional<DeviceModel>& model) {
    MappedNetwork out = net;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
        out.layers[k] = perturb_layer(net.layers[k], delta, derive_seed(seed, 0x4e5, k), model);
    }
    return out;
}

/// Fraction of samples whose argmax matches the label.
template <class Forward>
double accuracy(const Dataset& d, Forward&& forward, unsigned threads = 1) {
    std::vector<char> hit(static_cast<std::size_t>(d.x.rows()), 0);
    parallel_for(hit.size(), threads, [&](std::size_t i) {
        hit[i] = argmax(forward(Vector(d.x.row(static_cast<Eigen::Index>(i)).transpose()))) == d.labels[i];
    });
    double n = 0;
    for (char h : hit) n += h;
    return hit.empty() ? 0.0 : n / static_cast<double>(hit.size());
}

} // namespace xbar
