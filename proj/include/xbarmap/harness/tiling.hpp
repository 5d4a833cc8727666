#pragma once

// Signed weight matrices on crossbar tiles: differential planes, tile grid,
// DAC/ADC converters and the digital reassembly of tile outputs.

#include "xbarmap/analysis.hpp"
#include "xbarmap/baselines.hpp"
#include "xbarmap/harness/parallel.hpp"

#include <functional>

namespace xbar {

struct DifferentialPair {
    Matrix plus;
    Matrix minus;
};

/// W = plus - minus with both planes non-negative.
inline DifferentialPair differential_encode(const Matrix& w) {
    if (!w.allFinite()) throw std::invalid_argument("weight matrix has non-finite entries");
    return {w.cwiseMax(0.0), (-w).cwiseMax(0.0)};
}

/// Uniform 2^bits levels over [0, v_max], nearest level. No bits = ideal DAC.
inline Vector dac_quantize(const Vector& v, std::optional<int> bits, double v_max) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (!(v[j] >= 0.0 && v[j] <= v_max * (1 + 1e-12))) throw std::invalid_argument("DAC input outside [0, v_max]");
    }
    if (!bits) return v;
    const double top = std::ldexp(1.0, *bits) - 1.0;
    Vector out(v.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) out[j] = std::min(std::round(v[j] / v_max * top), top) / top * v_max;
    return out;
}

/// Uniform 2^bits levels over [0, max(y)] of this vector. No bits = ideal ADC.
inline Vector adc_quantize(const Vector& y, std::optional<int> bits) {
    if (!bits || y.size() == 0) return y;
    const double ref = y.maxCoeff();
    if (!(ref > 0.0)) return Vector::Zero(y.size());
    const double top = std::ldexp(1.0, *bits) - 1.0;
    Vector out(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        out[i] = std::round(std::clamp(y[i] / ref, 0.0, 1.0) * top) / top * ref;
    }
    return out;
}

struct Converters {
    std::optional<int> dac_bits;
    std::optional<int> adc_bits;
};

struct TileBlock {
    int row0 = 0;
    int col0 = 0;
    int rows = 0;
    int cols = 0;
};

enum class Plane { Plus = 0, Minus = 1 };

/// One crossbar-sized piece of one differential plane. The weight block is
/// zero-padded to the full crossbar; padded inputs are driven at 0 V and
/// padded outputs are discarded.
struct TilePlane {
    Matrix w;
    std::optional<MappingSolution> solution; // empty for an all-zero plane
    std::shared_ptr<const MappedTile> tile;
};

struct TiledLayer {
    int out_dim = 0;
    int in_dim = 0;
    CrossbarConfig config;
    std::vector<TileBlock> blocks;
    std::vector<std::array<TilePlane, 2>> planes; // per block, indexed by Plane

    /// plus - minus over all blocks; equals the partitioned matrix exactly.
    [[nodiscard]] Matrix reassemble() const {
        Matrix w = Matrix::Zero(out_dim, in_dim);
        for (std::size_t t = 0; t < blocks.size(); ++t) {
            const TileBlock& b = blocks[t];
            w.block(b.row0, b.col0, b.rows, b.cols) =
                planes[t][0].w.topLeftCorner(b.rows, b.cols) - planes[t][1].w.topLeftCorner(b.rows, b.cols);
        }
        return w;
    }
    [[nodiscard]] bool mapped() const {
        for (const auto& p : planes) {
            for (const auto& q : p) {
                if (q.w.maxCoeff() > 0.0 && !q.tile) return false;
            }
        }
        return true;
    }
};

/// Row and column blocks of at most the crossbar size, row-major order.
inline TiledLayer partition_matrix(const Matrix& w, const CrossbarConfig& config) {
    config.validate();
    if (w.size() == 0) throw std::invalid_argument("empty weight matrix");
    const DifferentialPair pair = differential_encode(w);
    TiledLayer layer;
    layer.out_dim = static_cast<int>(w.rows());
    layer.in_dim = static_cast<int>(w.cols());
    layer.config = config;
    for (int r = 0; r < layer.out_dim; r += config.rows) {
        for (int c = 0; c < layer.in_dim; c += config.cols) {
            TileBlock b{r, c, std::min(config.rows, layer.out_dim - r), std::min(config.cols, layer.in_dim - c)};
            std::array<TilePlane, 2> planes;
            for (int p = 0; p < 2; ++p) {
                const Matrix& src = p == 0 ? pair.plus : pair.minus;
                planes[p].w = Matrix::Zero(config.rows, config.cols);
                planes[p].w.topLeftCorner(b.rows, b.cols) = src.block(b.row0, b.col0, b.rows, b.cols);
            }
            layer.blocks.push_back(b);
            layer.planes.push_back(std::move(planes));
        }
    }
    return layer;
}

struct LayerMappingOptions {
    MappingMethod method = MappingMethod::Proposed;
    std::optional<DeviceModel> model;
    AlphaSearchParams search;
    MappingOptions mapping;
    std::optional<Vector> v_cal; // default v_max / 2
    unsigned threads = 1;
};

inline MappingSolution map_plane(const Matrix& w, const CrossbarConfig& config, const LayerMappingOptions& opts) {
    const Vector v_cal = opts.v_cal.value_or(default_calibration_vector(config));
    switch (opts.method) {
    case MappingMethod::Proposed: return map_matrix(w, config, opts.model, opts.search, v_cal, opts.mapping);
    case MappingMethod::FixedAlpha: {
        const double a = opts.search.alpha_0 > 0.0 ? opts.search.alpha_0 : default_alpha(w, config);
        MappingSolution sol = baseline_fixed_alpha_map(w, config, a, opts.mapping.descent);
        if (opts.model) {
            StateSolveResult st = solve_state_variables(sol.g_quantized, config, *opts.model, v_cal);
            sol.s = std::move(st.s);
            sol.flagged_cells = std::move(st.flagged);
        }
        return sol;
    }
    case MappingMethod::Calibration: return baseline_calibration_map(w, config, opts.model, v_cal);
    }
    throw std::invalid_argument("unknown mapping method");
}

/// Maps every non-zero plane of every tile.
inline void map_layer(TiledLayer& layer, const LayerMappingOptions& opts) {
    const std::size_t n = layer.planes.size() * 2;
    parallel_for(n, opts.threads, [&](std::size_t k) {
        TilePlane& tp = layer.planes[k / 2][k % 2];
        if (!(tp.w.maxCoeff() > 0.0)) return;
        tp.solution = map_plane(tp.w, layer.config, opts);
        tp.tile = std::make_shared<const MappedTile>(layer.config, *tp.solution, opts.model);
    });
}

/// Copy of a mapped layer with static RTN on every device: states when the
/// solution has them, otherwise the quantized conductances.
inline TiledLayer perturb_layer(const TiledLayer& layer, double delta, std::uint64_t seed,
                                const std::optional<DeviceModel>& model) {
    TiledLayer out = layer;
    for (std::size_t t = 0; t < out.planes.size(); ++t) {
        for (int p = 0; p < 2; ++p) {
            TilePlane& tp = out.planes[t][p];
            if (!tp.solution) continue;
            const std::uint64_t s = derive_seed(seed, t, static_cast<std::uint64_t>(p));
            MappingSolution& sol = *tp.solution;
            if (sol.s && model) {
                sol.s = apply_rtn_noise(*sol.s, delta, s, 0.0, 1.0);
            } else {
                sol.g_quantized = ConductanceGrid(
                    apply_rtn_noise(sol.g_quantized.values(), delta, s, layer.config.g_min, layer.config.g_max));
            }
            tp.tile = std::make_shared<const MappedTile>(out.config, sol, model);
        }
    }
    return out;
}

/// Output of one plane of one tile, in weight units, for crossbar voltages v.
using TileEvaluator = std::function<Vector(std::size_t tile, Plane plane, const Vector& v)>;

/// Evaluator that uses the mapped crossbars.
inline TileEvaluator mapped_evaluator(const TiledLayer& layer) {
    return [&layer](std::size_t t, Plane p, const Vector& v) -> Vector {
        const TilePlane& tp = layer.planes[t][static_cast<int>(p)];
        if (!tp.tile) return Vector::Zero(layer.config.rows);
        return tp.tile->outputs(v);
    };
}

/// Evaluator that multiplies the stored blocks exactly (digital reference).
inline TileEvaluator exact_evaluator(const TiledLayer& layer) {
    return [&layer](std::size_t t, Plane p, const Vector& v) -> Vector {
        return layer.planes[t][static_cast<int>(p)].w * v;
    };
}

/// Pre-activation W x of a tiled layer. x must be non-negative; it is scaled
/// so its largest entry drives v_max, DAC-quantized, pushed through every
/// tile, ADC-quantized per tile and plane, and the partial sums are combined
/// digitally (plus minus minus, then undoing the input scale).
inline Vector layer_forward(const TiledLayer& layer, const Vector& x, const Converters& conv,
                            const TileEvaluator& eval) {
    if (x.size() != layer.in_dim) throw std::invalid_argument("layer input has the wrong length");
    if ((x.array() < 0.0).any() || !x.allFinite()) throw std::invalid_argument("layer inputs must be non-negative");
    Vector y = Vector::Zero(layer.out_dim);
    const double peak = x.size() ? x.maxCoeff() : 0.0;
    if (!(peak > 0.0)) return y;
    const CrossbarConfig& c = layer.config;
    const double scale = c.v_max / peak;
    for (std::size_t t = 0; t < layer.blocks.size(); ++t) {
        const TileBlock& b = layer.blocks[t];
        Vector v = Vector::Zero(c.cols);
        v.head(b.cols) = (x.segment(b.col0, b.cols) * scale).cwiseMin(c.v_max);
        v = dac_quantize(v, conv.dac_bits, c.v_max);
        const Vector yp = adc_quantize(eval(t, Plane::Plus, v), conv.adc_bits);
        const Vector ym = adc_quantize(eval(t, Plane::Minus, v), conv.adc_bits);
        y.segment(b.row0, b.rows) += (yp - ym).head(b.rows);
    }
    return y / scale;
}

inline Vector layer_forward(const TiledLayer& layer, const Vector& x, const Converters& conv = {}) {
    return layer_forward(layer, x, conv, mapped_evaluator(layer));
}

} // namespace xbar
