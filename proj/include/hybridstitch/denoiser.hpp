// Toy DiT-style denoiser with seeded weights and a per-layer K/V interface.
//
// Architecture (pre-norm, image tokens only):
//   h   = x * W_in + pos_emb(token) + time_emb(t)
//   per layer:  h += MHA(LN(h)) * W_o ;  h += GELU(LN(h) * W_1) * W_2
//   out = gain(token) * (LN(h) * W_out)
// gain is a fixed spatial detail map derived from content_seed. Two denoisers
// that share a content_seed agree closely on low-detail tokens, the way a
// large and a small model agree on easy image regions.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridstitch/latent.hpp"
#include "hybridstitch/tensor.hpp"

namespace hybridstitch {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DenoiserConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    std::size_t tokens = 256;
    std::size_t channels = 4;
    std::uint64_t weight_seed = 1;
    std::uint64_t content_seed = 7;
    std::string preset_name = "custom";

    std::size_t side() const { return static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens)))); }
    std::size_t head_dim() const { return model_dim / heads; }
    std::size_t ffn_dim() const { return 4 * model_dim; }

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;

    void validate() const {
        auto fail = [](const std::string& field, const std::string& msg) {
            throw ConfigError("DenoiserConfig." + field + ": " + msg);
        };
        if (layers == 0) fail("layers", "must be >= 1");
        if (heads == 0) fail("heads", "must be >= 1");
        if (model_dim == 0) fail("model_dim", "must be >= 1");
        if (model_dim % heads != 0) {
            fail("model_dim", std::to_string(model_dim) + " is not divisible by heads=" + std::to_string(heads));
        }
        if (tokens == 0) fail("tokens", "must be >= 1");
        if (side() * side() != tokens) fail("tokens", std::to_string(tokens) + " is not a perfect square");
        if (channels == 0) fail("channels", "must be >= 1");
    }
};

/// Built-in presets. "large" has more layers and a wider model than "small";
/// both cover the same 16x16x4 latent.
inline DenoiserConfig preset(const std::string& name) {
    DenoiserConfig c;
    c.preset_name = name;
    if (name == "large") {
        c.layers = 6;
        c.model_dim = 128;
        c.heads = 4;
        c.weight_seed = 1001;
    } else if (name == "small") {
        c.layers = 2;
        c.model_dim = 64;
        c.heads = 4;
        c.weight_seed = 2002;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected 'large' or 'small')");
    }
    return c;
}

/// Sinusoidal embedding: [sin(p w_0), cos(p w_0), sin(p w_1), ...], w_i = 10000^(-2i/dim).
inline std::vector<float> sinusoidal_embedding(std::size_t position, std::size_t dim) {
    std::vector<float> e(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
        const double angle = static_cast<double>(position) * freq;
        e[i] = static_cast<float>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
    return e;
}

struct TimestepEmbedding {
    std::size_t t_index = 0;
    std::vector<float> embedding;

    TimestepEmbedding(std::size_t t, std::size_t dim) : t_index(t), embedding(sinusoidal_embedding(t, dim)) {}
};

/// Spatial detail map in [0, 1]: a sum of Gaussian blobs placed from content_seed.
inline std::vector<float> content_gain_map(std::size_t tokens, std::uint64_t content_seed) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
    const std::size_t blobs = std::max<std::size_t>(1, side / 4);
    const double radius = std::max(1.0, static_cast<double>(side) / 8.0);
    SeededRng rng(content_seed);
    std::vector<double> cx(blobs), cy(blobs);
    for (std::size_t b = 0; b < blobs; ++b) {
        cx[b] = rng.uniform() * static_cast<double>(side);
        cy[b] = rng.uniform() * static_cast<double>(side);
    }
    std::vector<float> gain(tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        const double x = static_cast<double>(i % side) + 0.5;
        const double y = static_cast<double>(i / side) + 0.5;
        double g = 0.0;
        for (std::size_t b = 0; b < blobs; ++b) {
            const double d2 = (x - cx[b]) * (x - cx[b]) + (y - cy[b]) * (y - cy[b]);
            g += std::exp(-d2 / (2.0 * radius * radius));
        }
        gain[i] = static_cast<float>(std::min(1.0, g));
    }
    return gain;
}

/// Keys and values of one attention layer, one row per token covered.
struct LayerKV {
    std::size_t layer = 0;
    Grid2D keys;
    Grid2D values;
};

using KVCache = std::vector<LayerKV>;

struct ForwardResult {
    Grid2D noise;
    KVCache kv;
};

struct LayerWeights {
    Grid2D wq, wk, wv, wo;
    Grid2D w1, w2;
};

class Denoiser {
public:
    /// Weights are N(0, 1/fan_in), drawn from one SeededRng(weight_seed)
    /// stream: W_in, then per layer Wq, Wk, Wv, Wo, W1, W2, then W_out.
    explicit Denoiser(DenoiserConfig config) : config_(std::move(config)) {
        config_.validate();
        SeededRng rng(config_.weight_seed);
        const std::size_t d = config_.model_dim;
        w_in_ = scaled_gaussian(rng, config_.channels, d);
        layers_.reserve(config_.layers);
        for (std::size_t l = 0; l < config_.layers; ++l) {
            LayerWeights w;
            w.wq = scaled_gaussian(rng, d, d);
            w.wk = scaled_gaussian(rng, d, d);
            w.wv = scaled_gaussian(rng, d, d);
            w.wo = scaled_gaussian(rng, d, d);
            w.w1 = scaled_gaussian(rng, d, config_.ffn_dim());
            w.w2 = scaled_gaussian(rng, config_.ffn_dim(), d);
            layers_.push_back(std::move(w));
        }
        w_out_ = scaled_gaussian(rng, d, config_.channels);

        pos_emb_ = Grid2D(config_.tokens, d);
        for (std::size_t p = 0; p < config_.tokens; ++p) {
            const auto e = sinusoidal_embedding(p, d);
            std::copy(e.begin(), e.end(), pos_emb_.row(p).begin());
        }
        gain_ = content_gain_map(config_.tokens, config_.content_seed);
    }

    const DenoiserConfig& config() const { return config_; }
    std::span<const float> gain_map() const { return gain_; }
    const Grid2D& input_projection() const { return w_in_; }
    const std::vector<LayerWeights>& layer_weights() const { return layers_; }
    const Grid2D& output_projection() const { return w_out_; }

    // Test hook: overwrite every weight matrix with `value`.
    void fill_weights_for_test(float value) {
        auto fill = [value](Grid2D& g) { std::fill(g.values().begin(), g.values().end(), value); };
        fill(w_in_);
        fill(w_out_);
        for (auto& w : layers_) {
            fill(w.wq);
            fill(w.wk);
            fill(w.wv);
            fill(w.wo);
            fill(w.w1);
            fill(w.w2);
        }
    }

    /// Noise prediction for every token plus fresh K/V for every layer.
    ForwardResult forward_full(const LatentGrid& latent, std::size_t t) const {
        if (latent.tokens() != config_.tokens || latent.channels != config_.channels) {
            throw ShapeError("forward_full: latent " + latent.data.shape() + " does not match model " +
                             shape_str(config_.tokens, config_.channels));
        }
        std::vector<std::size_t> all(config_.tokens);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return run(latent.data, all, nullptr, t);
    }

    /// Runs only the masked tokens. Attention for each layer sees the full
    /// token context: prev_kv supplies K/V rows for unmasked positions and the
    /// freshly computed rows are scattered over the masked positions. Returns
    /// noise rows and fresh K/V rows for the masked tokens only, in mask order.
    ForwardResult forward_masked(const Grid2D& latent_masked, const Mask& mask, const KVCache& prev_kv,
                                 std::size_t t) const {
        if (mask.empty()) throw std::invalid_argument("forward_masked: empty mask");
        if (mask.total_tokens() != config_.tokens) {
            throw ShapeError("forward_masked: mask covers " + std::to_string(mask.total_tokens()) +
                             " tokens, model has " + std::to_string(config_.tokens));
        }
        if (latent_masked.rows() != mask.size() || latent_masked.cols() != config_.channels) {
            throw ShapeError("forward_masked: masked latent " + latent_masked.shape() + " vs expected " +
                             shape_str(mask.size(), config_.channels));
        }
        check_cache(prev_kv);
        return run(latent_masked, mask.indices(), &prev_kv, t);
    }

    /// forward_masked for positions in any order (each at most once). Row r of
    /// the result belongs to positions[r].
    ForwardResult forward_positions(const Grid2D& rows, std::span<const std::size_t> positions,
                                    const KVCache& prev_kv, std::size_t t) const {
        if (positions.empty()) throw std::invalid_argument("forward_positions: no positions");
        if (rows.rows() != positions.size() || rows.cols() != config_.channels) {
            throw ShapeError("forward_positions: rows " + rows.shape() + " vs expected " +
                             shape_str(positions.size(), config_.channels));
        }
        std::vector<bool> seen(config_.tokens, false);
        for (std::size_t p : positions) {
            if (p >= config_.tokens || seen[p]) {
                throw std::invalid_argument("forward_positions: position " + std::to_string(p) +
                                            " out of range or repeated");
            }
            seen[p] = true;
        }
        check_cache(prev_kv);
        return run(rows, positions, &prev_kv, t);
    }

    void check_cache(const KVCache& kv) const {
        if (kv.size() != config_.layers) {
            throw ShapeError("KV cache has " + std::to_string(kv.size()) + " layers, model has " +
                             std::to_string(config_.layers));
        }
        for (std::size_t l = 0; l < kv.size(); ++l) {
            const auto expect = shape_str(config_.tokens, config_.model_dim);
            if (kv[l].keys.rows() != config_.tokens || kv[l].keys.cols() != config_.model_dim ||
                !kv[l].keys.same_shape(kv[l].values)) {
                throw ShapeError("KV cache layer " + std::to_string(l) + ": keys " + kv[l].keys.shape() +
                                 ", values " + kv[l].values.shape() + ", expected " + expect);
            }
        }
    }

private:
    static Grid2D scaled_gaussian(SeededRng& rng, std::size_t fan_in, std::size_t fan_out) {
        Grid2D g = gaussian(rng, fan_in, fan_out);
        const float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
        for (float& v : g.values()) v *= s;
        return g;
    }

    // q: m x d queries for the covered tokens; keys/values: tokens x d.
    Grid2D attention(const Grid2D& q, const Grid2D& keys, const Grid2D& values) const {
        const std::size_t dh = config_.head_dim();
        const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
        Grid2D out(q.rows(), config_.model_dim);
        for (std::size_t h = 0; h < config_.heads; ++h) {
            const Grid2D qh = slice_cols(q, h * dh, dh);
            const Grid2D kh_t = transpose(slice_cols(keys, h * dh, dh));
            const Grid2D vh = slice_cols(values, h * dh, dh);
            const Grid2D probs = softmax_rows(matmul(qh, kh_t), scale);
            write_cols(out, h * dh, matmul(probs, vh));
        }
        return out;
    }

    ForwardResult run(const Grid2D& x, std::span<const std::size_t> positions, const KVCache* prev_kv,
                      std::size_t t) const {
        Grid2D h = matmul(x, w_in_);
        add_inplace(h, gather_rows(pos_emb_, positions));
        const TimestepEmbedding temb(t, config_.model_dim);
        add_row_broadcast(h, temb.embedding);

        ForwardResult result;
        result.kv.reserve(config_.layers);
        for (std::size_t l = 0; l < config_.layers; ++l) {
            const LayerWeights& w = layers_[l];
            const Grid2D n1 = layer_norm_rows(h);
            Grid2D q = matmul(n1, w.wq);
            Grid2D k = matmul(n1, w.wk);
            Grid2D v = matmul(n1, w.wv);
            Grid2D attn;
            if (prev_kv == nullptr) {
                attn = attention(q, k, v);
            } else {
                Grid2D keys = (*prev_kv)[l].keys;
                Grid2D values = (*prev_kv)[l].values;
                scatter_rows(keys, positions, k);
                scatter_rows(values, positions, v);
                attn = attention(q, keys, values);
            }
            add_inplace(h, matmul(attn, w.wo));
            const Grid2D n2 = layer_norm_rows(h);
            add_inplace(h, matmul(gelu(matmul(n2, w.w1)), w.w2));
            result.kv.push_back(LayerKV{l, std::move(k), std::move(v)});
        }
        result.noise = matmul(layer_norm_rows(h), w_out_);
        for (std::size_t r = 0; r < positions.size(); ++r) {
            const float g = gain_[positions[r]];
            for (float& val : result.noise.row(r)) val *= g;
        }
        return result;
    }

    DenoiserConfig config_;
    Grid2D w_in_;
    std::vector<LayerWeights> layers_;
    Grid2D w_out_;
    Grid2D pos_emb_;
    std::vector<float> gain_;
};

inline Denoiser build_denoiser(const DenoiserConfig& config) { return Denoiser(config); }

/// Copy of `old` with rows at mask positions replaced by the matching rows of `fresh`.
inline KVCache refresh_kv_cache(const KVCache& old, const KVCache& fresh, const Mask& mask) {
    if (old.size() != fresh.size()) {
        throw ShapeError("refresh_kv_cache: " + std::to_string(old.size()) + " cached layers vs " +
                         std::to_string(fresh.size()) + " fresh");
    }
    KVCache out = old;
    for (std::size_t l = 0; l < old.size(); ++l) {
        if (fresh[l].keys.rows() != mask.size() || fresh[l].values.rows() != mask.size()) {
            throw ShapeError("refresh_kv_cache: layer " + std::to_string(l) + " has " +
                             std::to_string(fresh[l].keys.rows()) + " fresh rows for a mask of " +
                             std::to_string(mask.size()));
        }
        scatter_rows(out[l].keys, mask.indices(), fresh[l].keys);
        scatter_rows(out[l].values, mask.indices(), fresh[l].values);
    }
    return out;
}

}  // namespace hybridstitch
