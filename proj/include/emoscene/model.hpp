// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-branch convolutional network for apparent-emotion recognition.
//
// Each branch is a 16-layer backbone of one-dimensional kernels in
// alternating orientations (odd layers 1x3, even layers 3x1), every conv
// followed by batch normalization and ReLU. The last two layers of every
// four-layer block stride by 2 along their own orientation, so a block
// halves both spatial dimensions; channels double from block to block.
// Global average pooling reduces each branch to a feature vector.
//
// The body branch sees the person crop; the image branch sees the whole
// frame and carries the scene context. Their features are concatenated into
// a fusion trunk (fully connected, width 256, ReLU) with two parallel linear
// heads: 26 category scores and 3 continuous dimensions. With
// `use_context = false` ("B" mode) the image branch is not evaluated and its
// feature slice is presented to the fusion trunk as zeros, which keeps the
// parameter layout identical between modes.
//
// Everything runs in double precision with deterministic seeded
// initialization; forward is const so finite-difference checks can probe it.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "emoscene/checkpoint.hpp"
#include "emoscene/core.hpp"
#include "emoscene/util.hpp"

namespace emoscene {

inline constexpr int kNumConvLayers = 16;
inline constexpr int kFusionWidth = 256;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

// ---------------------------------------------------------------------------
// Batched feature maps

struct BatchMap {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    BatchMap() = default;
    BatchMap(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * static_cast<std::size_t>(c_) * static_cast<std::size_t>(h_) *
            static_cast<std::size_t>(w_)) {}

    std::size_t index(int ni, int ci, int yi, int xi) const {
        return ((static_cast<std::size_t>(ni) * static_cast<std::size_t>(c) + static_cast<std::size_t>(ci)) *
                    static_cast<std::size_t>(h) +
                static_cast<std::size_t>(yi)) *
                   static_cast<std::size_t>(w) +
               static_cast<std::size_t>(xi);
    }
    double at(int ni, int ci, int yi, int xi) const { return v[index(ni, ci, yi, xi)]; }
    double& at(int ni, int ci, int yi, int xi) { return v[index(ni, ci, yi, xi)]; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
};

// ---------------------------------------------------------------------------
// Architecture schedule

/// Output channels of backbone layer `layer` (1-based).
inline int layer_channels(int base_channels, int layer) {
    return base_channels << ((layer - 1) / 4);
}

/// Odd layers run 1x3 kernels (horizontal), even layers 3x1 (vertical).
inline bool layer_horizontal(int layer) { return layer % 2 == 1; }

/// The last two layers of each four-layer block stride by 2.
inline int layer_stride(int layer) {
    const int m = layer % 4;
    return (m == 3 || m == 0) ? 2 : 1;
}

struct BackboneConfig {
    int input_size = 64;    // square input, divisible by 16
    int base_channels = 8;  // channels of the first block
    int in_channels = 3;
};

struct ModelConfig {
    BackboneConfig backbone;
    bool use_context = true;  // false: body-only ("B") mode
    std::uint64_t seed = 1;
};

inline int backbone_feature_dim(const BackboneConfig& cfg) { return cfg.base_channels * 8; }

inline void validate_backbone(const BackboneConfig& cfg) {
    if (cfg.input_size < 16 || cfg.input_size % 16 != 0)
        throw Error("backbone: input_size must be a positive multiple of 16, got " +
                    std::to_string(cfg.input_size));
    if (cfg.base_channels < 1) throw Error("backbone: base_channels must be >= 1");
    if (cfg.in_channels != 1 && cfg.in_channels != 3)
        throw Error("backbone: in_channels must be 1 or 3");
}

// ---------------------------------------------------------------------------
// Model: a named parameter store

struct Model {
    ModelConfig cfg;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::vector<int>> shapes;

    std::vector<double>& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("model: unknown parameter '" + name + "'");
        return it->second;
    }
    const std::vector<double>& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw Error("model: unknown parameter '" + name + "'");
        return it->second;
    }
};

/// Running statistics are state, not learnable parameters.
inline bool is_trainable_param(const std::string& name) {
    return name.find(".running_") == std::string::npos;
}

namespace detail {

inline std::string layer_name(const std::string& branch, const char* kind, int layer, const char* field) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s.%s%02d.%s", branch.c_str(), kind, layer, field);
    return buf;
}

inline void add_param(Model& m, std::size_t& stream_index, const std::string& name,
                      std::vector<int> shape, double init_std) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    std::vector<double> data(count, 0.0);
    if (init_std > 0.0) {
        auto rng = make_rng(stream_seed(m.cfg.seed, stream_index));
        std::normal_distribution<double> normal(0.0, init_std);
        for (auto& x : data) x = normal(rng);
    }
    ++stream_index;
    m.shapes[name] = std::move(shape);
    m.params[name] = std::move(data);
}

inline void add_constant_param(Model& m, std::size_t& stream_index, const std::string& name, int count,
                               double value) {
    ++stream_index;  // keep stream numbering independent of init kind
    m.shapes[name] = {count};
    m.params[name] = std::vector<double>(static_cast<std::size_t>(count), value);
}

} // namespace detail

inline Model make_model(const ModelConfig& cfg) {
    validate_backbone(cfg.backbone);
    Model m;
    m.cfg = cfg;
    std::size_t stream = 0;
    for (const std::string branch : {"body", "image"}) {
        int in_c = cfg.backbone.in_channels;
        for (int layer = 1; layer <= kNumConvLayers; ++layer) {
            const int out_c = layer_channels(cfg.backbone.base_channels, layer);
            const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * 3.0));
            detail::add_param(m, stream, detail::layer_name(branch, "conv", layer, "weight"),
                              {out_c, in_c, 3}, std);
            detail::add_constant_param(m, stream, detail::layer_name(branch, "bn", layer, "gamma"), out_c, 1.0);
            detail::add_constant_param(m, stream, detail::layer_name(branch, "bn", layer, "beta"), out_c, 0.0);
            detail::add_constant_param(m, stream, detail::layer_name(branch, "bn", layer, "running_mean"), out_c, 0.0);
            detail::add_constant_param(m, stream, detail::layer_name(branch, "bn", layer, "running_var"), out_c, 1.0);
            in_c = out_c;
        }
    }
    const int feat = backbone_feature_dim(cfg.backbone);
    const int fusion_in = 2 * feat;
    detail::add_param(m, stream, "fusion.fc1.weight", {kFusionWidth, fusion_in},
                      std::sqrt(2.0 / fusion_in));
    detail::add_constant_param(m, stream, "fusion.fc1.bias", kFusionWidth, 0.0);
    detail::add_param(m, stream, "fusion.disc.weight", {kNumCategories, kFusionWidth},
                      std::sqrt(1.0 / kFusionWidth));
    detail::add_constant_param(m, stream, "fusion.disc.bias", kNumCategories, 0.0);
    detail::add_param(m, stream, "fusion.cont.weight", {kNumDims, kFusionWidth},
                      std::sqrt(1.0 / kFusionWidth));
    detail::add_constant_param(m, stream, "fusion.cont.bias", kNumDims, 0.0);
    return m;
}

inline std::size_t parameter_count(const Model& m, bool trainable_only = false) {
    std::size_t n = 0;
    for (const auto& [name, data] : m.params)
        if (!trainable_only || is_trainable_param(name)) n += data.size();
    return n;
}

// ---------------------------------------------------------------------------
// Primitive ops

namespace detail {

/// Correlation with a 1-D kernel of extent 3 along the layer's orientation,
/// zero padding 1, stride along that same orientation.
inline BatchMap conv_forward(const BatchMap& x, const std::vector<double>& w, int out_c, bool horizontal,
                             int stride) {
    const int in_c = x.c;
    const int out_h = horizontal ? x.h : (x.h - 1) / stride + 1;
    const int out_w = horizontal ? (x.w - 1) / stride + 1 : x.w;
    BatchMap y(x.n, out_c, out_h, out_w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int co = 0; co < out_c; ++co)
            for (int yo = 0; yo < out_h; ++yo)
                for (int xo = 0; xo < out_w; ++xo) {
                    double acc = 0.0;
                    for (int ci = 0; ci < in_c; ++ci) {
                        const double* wp = w.data() + (static_cast<std::size_t>(co) * static_cast<std::size_t>(in_c) + static_cast<std::size_t>(ci)) * 3;
                        for (int dk = 0; dk < 3; ++dk) {
                            const int yy = horizontal ? yo : yo * stride + dk - 1;
                            const int xx = horizontal ? xo * stride + dk - 1 : xo;
                            if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
                            acc += wp[dk] * x.at(ni, ci, yy, xx);
                        }
                    }
                    y.at(ni, co, yo, xo) = acc;
                }
    return y;
}

/// Gradients of conv_forward: accumulates into dw, returns dx.
inline BatchMap conv_backward(const BatchMap& x, const std::vector<double>& w, const BatchMap& dy,
                              bool horizontal, int stride, std::vector<double>& dw) {
    const int in_c = x.c, out_c = dy.c;
    BatchMap dx(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int co = 0; co < out_c; ++co)
            for (int yo = 0; yo < dy.h; ++yo)
                for (int xo = 0; xo < dy.w; ++xo) {
                    const double g = dy.at(ni, co, yo, xo);
                    if (g == 0.0) continue;
                    for (int ci = 0; ci < in_c; ++ci) {
                        const std::size_t wb = (static_cast<std::size_t>(co) * static_cast<std::size_t>(in_c) + static_cast<std::size_t>(ci)) * 3;
                        for (int dk = 0; dk < 3; ++dk) {
                            const int yy = horizontal ? yo : yo * stride + dk - 1;
                            const int xx = horizontal ? xo * stride + dk - 1 : xo;
                            if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
                            dw[wb + static_cast<std::size_t>(dk)] += x.at(ni, ci, yy, xx) * g;
                            dx.at(ni, ci, yy, xx) += w[wb + static_cast<std::size_t>(dk)] * g;
                        }
                    }
                }
    return dx;
}

struct BnStats {
    std::vector<double> mean, var;  // per channel, batch statistics
};

/// Batch-norm forward with batch statistics; fills stats and returns xhat
/// scaled by gamma plus beta.
inline BatchMap bn_forward_train(const BatchMap& x, const std::vector<double>& gamma,
                                 const std::vector<double>& beta, BnStats& stats, BatchMap& xhat) {
    const double m_count = static_cast<double>(x.n) * static_cast<double>(x.plane());
    stats.mean.assign(static_cast<std::size_t>(x.c), 0.0);
    stats.var.assign(static_cast<std::size_t>(x.c), 0.0);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const double* p = x.v.data() + x.index(ni, ci, 0, 0);
            double s = 0.0;
            for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
            stats.mean[static_cast<std::size_t>(ci)] += s;
        }
    for (auto& s : stats.mean) s /= m_count;
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const double* p = x.v.data() + x.index(ni, ci, 0, 0);
            const double mu = stats.mean[static_cast<std::size_t>(ci)];
            double s = 0.0;
            for (std::size_t i = 0; i < x.plane(); ++i) s += (p[i] - mu) * (p[i] - mu);
            stats.var[static_cast<std::size_t>(ci)] += s;
        }
    for (auto& s : stats.var) s /= m_count;

    xhat = BatchMap(x.n, x.c, x.h, x.w);
    BatchMap y(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const double mu = stats.mean[static_cast<std::size_t>(ci)];
            const double inv = 1.0 / std::sqrt(stats.var[static_cast<std::size_t>(ci)] + kBnEps);
            const double g = gamma[static_cast<std::size_t>(ci)], b = beta[static_cast<std::size_t>(ci)];
            const double* p = x.v.data() + x.index(ni, ci, 0, 0);
            double* ph = xhat.v.data() + xhat.index(ni, ci, 0, 0);
            double* py = y.v.data() + y.index(ni, ci, 0, 0);
            for (std::size_t i = 0; i < x.plane(); ++i) {
                ph[i] = (p[i] - mu) * inv;
                py[i] = g * ph[i] + b;
            }
        }
    return y;
}

inline BatchMap bn_forward_eval(const BatchMap& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, const std::vector<double>& mean,
                                const std::vector<double>& var) {
    BatchMap y(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci) {
            const double mu = mean[static_cast<std::size_t>(ci)];
            const double inv = 1.0 / std::sqrt(var[static_cast<std::size_t>(ci)] + kBnEps);
            const double g = gamma[static_cast<std::size_t>(ci)], b = beta[static_cast<std::size_t>(ci)];
            const double* p = x.v.data() + x.index(ni, ci, 0, 0);
            double* py = y.v.data() + y.index(ni, ci, 0, 0);
            for (std::size_t i = 0; i < x.plane(); ++i) py[i] = g * (p[i] - mu) * inv + b;
        }
    return y;
}

/// Batch-norm backward through the batch statistics.
inline BatchMap bn_backward(const BatchMap& xhat, const BnStats& stats, const std::vector<double>& gamma,
                            const BatchMap& dy, std::vector<double>& dgamma, std::vector<double>& dbeta) {
    const double m_count = static_cast<double>(xhat.n) * static_cast<double>(xhat.plane());
    BatchMap dx(xhat.n, xhat.c, xhat.h, xhat.w);
    for (int ci = 0; ci < xhat.c; ++ci) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int ni = 0; ni < xhat.n; ++ni) {
            const double* pd = dy.v.data() + dy.index(ni, ci, 0, 0);
            const double* ph = xhat.v.data() + xhat.index(ni, ci, 0, 0);
            for (std::size_t i = 0; i < xhat.plane(); ++i) {
                sum_dy += pd[i];
                sum_dy_xhat += pd[i] * ph[i];
            }
        }
        dgamma[static_cast<std::size_t>(ci)] += sum_dy_xhat;
        dbeta[static_cast<std::size_t>(ci)] += sum_dy;
        const double g = gamma[static_cast<std::size_t>(ci)];
        const double inv = 1.0 / std::sqrt(stats.var[static_cast<std::size_t>(ci)] + kBnEps);
        for (int ni = 0; ni < xhat.n; ++ni) {
            const double* pd = dy.v.data() + dy.index(ni, ci, 0, 0);
            const double* ph = xhat.v.data() + xhat.index(ni, ci, 0, 0);
            double* px = dx.v.data() + dx.index(ni, ci, 0, 0);
            for (std::size_t i = 0; i < xhat.plane(); ++i)
                px[i] = g * inv / m_count * (m_count * pd[i] - sum_dy - ph[i] * sum_dy_xhat);
        }
    }
    return dx;
}

inline void relu_inplace(BatchMap& x) {
    for (auto& v : x.v) v = v > 0.0 ? v : 0.0;
}

/// dx = dy where the activation stayed positive.
inline BatchMap relu_backward(const BatchMap& out, const BatchMap& dy) {
    BatchMap dx(dy.n, dy.c, dy.h, dy.w);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = out.v[i] > 0.0 ? dy.v[i] : 0.0;
    return dx;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Branch forward/backward

struct BranchCache {
    BatchMap input;
    std::vector<BatchMap> xhat;      // per layer, BN-normalized pre-activation
    std::vector<BatchMap> relu;      // per layer, post-ReLU output
    std::vector<detail::BnStats> stats;
    std::vector<double> features;    // [n * feat] after global average pooling
};

namespace detail {

inline std::vector<double> branch_forward(const Model& m, const std::string& branch, const BatchMap& x,
                                          BranchCache* cache) {
    const auto& bb = m.cfg.backbone;
    if (x.c != bb.in_channels || x.h != bb.input_size || x.w != bb.input_size)
        throw Error("branch_forward: input is " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" +
                    std::to_string(x.w) + ", expected " + std::to_string(bb.in_channels) + "x" +
                    std::to_string(bb.input_size) + "x" + std::to_string(bb.input_size));
    if (cache) {
        cache->input = x;
        cache->xhat.resize(kNumConvLayers);
        cache->relu.resize(kNumConvLayers);
        cache->stats.resize(kNumConvLayers);
    }
    BatchMap cur = x;
    for (int layer = 1; layer <= kNumConvLayers; ++layer) {
        const int out_c = layer_channels(bb.base_channels, layer);
        const auto& w = m.at(layer_name(branch, "conv", layer, "weight"));
        BatchMap z = conv_forward(cur, w, out_c, layer_horizontal(layer), layer_stride(layer));
        const auto& gamma = m.at(layer_name(branch, "bn", layer, "gamma"));
        const auto& beta = m.at(layer_name(branch, "bn", layer, "beta"));
        BatchMap a;
        if (cache) {
            a = bn_forward_train(z, gamma, beta, cache->stats[static_cast<std::size_t>(layer - 1)],
                                 cache->xhat[static_cast<std::size_t>(layer - 1)]);
        } else {
            a = bn_forward_eval(z, gamma, beta, m.at(layer_name(branch, "bn", layer, "running_mean")),
                                m.at(layer_name(branch, "bn", layer, "running_var")));
        }
        relu_inplace(a);
        if (cache) cache->relu[static_cast<std::size_t>(layer - 1)] = a;
        cur = std::move(a);
    }
    // Global average pooling.
    std::vector<double> feat(static_cast<std::size_t>(cur.n) * static_cast<std::size_t>(cur.c));
    for (int ni = 0; ni < cur.n; ++ni)
        for (int ci = 0; ci < cur.c; ++ci) {
            const double* p = cur.v.data() + cur.index(ni, ci, 0, 0);
            double s = 0.0;
            for (std::size_t i = 0; i < cur.plane(); ++i) s += p[i];
            feat[static_cast<std::size_t>(ni) * static_cast<std::size_t>(cur.c) + static_cast<std::size_t>(ci)] =
                s / static_cast<double>(cur.plane());
        }
    if (cache) cache->features = feat;
    return feat;
}

inline void branch_backward(const Model& m, const std::string& branch, const BranchCache& cache,
                            const std::vector<double>& dfeat,
                            std::map<std::string, std::vector<double>>& grads) {
    const auto& bb = m.cfg.backbone;
    const BatchMap& last = cache.relu.back();
    BatchMap dcur(last.n, last.c, last.h, last.w);
    const double inv_plane = 1.0 / static_cast<double>(last.plane());
    for (int ni = 0; ni < last.n; ++ni)
        for (int ci = 0; ci < last.c; ++ci) {
            const double g = dfeat[static_cast<std::size_t>(ni) * static_cast<std::size_t>(last.c) + static_cast<std::size_t>(ci)] * inv_plane;
            double* p = dcur.v.data() + dcur.index(ni, ci, 0, 0);
            for (std::size_t i = 0; i < last.plane(); ++i) p[i] = g;
        }

    for (int layer = kNumConvLayers; layer >= 1; --layer) {
        const std::size_t li = static_cast<std::size_t>(layer - 1);
        BatchMap d_bn_out = relu_backward(cache.relu[li], dcur);
        const auto& gamma = m.at(layer_name(branch, "bn", layer, "gamma"));
        auto& dgamma = grads[layer_name(branch, "bn", layer, "gamma")];
        auto& dbeta = grads[layer_name(branch, "bn", layer, "beta")];
        BatchMap dz = bn_backward(cache.xhat[li], cache.stats[li], gamma, d_bn_out, dgamma, dbeta);
        const BatchMap& layer_in = layer == 1 ? cache.input : cache.relu[li - 1];
        const auto& w = m.at(layer_name(branch, "conv", layer, "weight"));
        auto& dw = grads[layer_name(branch, "conv", layer, "weight")];
        dcur = conv_backward(layer_in, w, dz, layer_horizontal(layer), layer_stride(layer), dw);
    }
    (void)bb;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Full model forward/backward

struct FusionCache {
    std::vector<double> concat;  // [n * 2feat]
    std::vector<double> hidden;  // [n * kFusionWidth], post ReLU
};

struct TrainCache {
    int n = 0;
    BranchCache body, image;
    FusionCache fusion;
};

struct ForwardOutput {
    std::vector<std::array<double, kNumCategories>> disc;
    std::vector<std::array<double, kNumDims>> cont;
};

/// Run the network. A non-null `cache` selects training mode: batch-norm
/// uses batch statistics and all intermediates are recorded for backward.
/// Without a cache the running statistics are used (inference).
inline ForwardOutput model_forward(const Model& m, const BatchMap& body, const BatchMap& image,
                                   TrainCache* cache = nullptr) {
    if (body.n == 0) throw Error("model_forward: empty batch");
    if (m.cfg.use_context && (image.n != body.n))
        throw Error("model_forward: body and image batch sizes differ");
    const int n = body.n;
    const int feat = backbone_feature_dim(m.cfg.backbone);
    if (cache) cache->n = n;

    std::vector<double> fb = detail::branch_forward(m, "body", body, cache ? &cache->body : nullptr);
    std::vector<double> fi(static_cast<std::size_t>(n) * static_cast<std::size_t>(feat), 0.0);
    if (m.cfg.use_context) fi = detail::branch_forward(m, "image", image, cache ? &cache->image : nullptr);

    std::vector<double> concat(static_cast<std::size_t>(n) * 2 * static_cast<std::size_t>(feat));
    for (int ni = 0; ni < n; ++ni) {
        std::copy(fb.begin() + static_cast<long>(ni) * feat, fb.begin() + static_cast<long>(ni + 1) * feat,
                  concat.begin() + static_cast<long>(ni) * 2 * feat);
        std::copy(fi.begin() + static_cast<long>(ni) * feat, fi.begin() + static_cast<long>(ni + 1) * feat,
                  concat.begin() + static_cast<long>(ni) * 2 * feat + feat);
    }

    const auto& w1 = m.at("fusion.fc1.weight");
    const auto& b1 = m.at("fusion.fc1.bias");
    std::vector<double> hidden(static_cast<std::size_t>(n) * kFusionWidth);
    const int in_dim = 2 * feat;
    for (int ni = 0; ni < n; ++ni)
        for (int o = 0; o < kFusionWidth; ++o) {
            double acc = b1[static_cast<std::size_t>(o)];
            const double* wp = w1.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in_dim);
            const double* xp = concat.data() + static_cast<std::size_t>(ni) * static_cast<std::size_t>(in_dim);
            for (int i = 0; i < in_dim; ++i) acc += wp[i] * xp[i];
            hidden[static_cast<std::size_t>(ni) * kFusionWidth + static_cast<std::size_t>(o)] = acc > 0.0 ? acc : 0.0;
        }

    if (cache) {
        cache->fusion.concat = concat;
        cache->fusion.hidden = hidden;
    }

    const auto& wd = m.at("fusion.disc.weight");
    const auto& bd = m.at("fusion.disc.bias");
    const auto& wc = m.at("fusion.cont.weight");
    const auto& bc = m.at("fusion.cont.bias");
    ForwardOutput out;
    out.disc.resize(static_cast<std::size_t>(n));
    out.cont.resize(static_cast<std::size_t>(n));
    for (int ni = 0; ni < n; ++ni) {
        const double* hp = hidden.data() + static_cast<std::size_t>(ni) * kFusionWidth;
        for (int o = 0; o < kNumCategories; ++o) {
            double acc = bd[static_cast<std::size_t>(o)];
            const double* wp = wd.data() + static_cast<std::size_t>(o) * kFusionWidth;
            for (int i = 0; i < kFusionWidth; ++i) acc += wp[i] * hp[i];
            out.disc[static_cast<std::size_t>(ni)][static_cast<std::size_t>(o)] = acc;
        }
        for (int o = 0; o < kNumDims; ++o) {
            double acc = bc[static_cast<std::size_t>(o)];
            const double* wp = wc.data() + static_cast<std::size_t>(o) * kFusionWidth;
            for (int i = 0; i < kFusionWidth; ++i) acc += wp[i] * hp[i];
            out.cont[static_cast<std::size_t>(ni)][static_cast<std::size_t>(o)] = acc;
        }
    }
    return out;
}

/// Fold the cached batch statistics into the running estimates:
/// running = momentum * running + (1 - momentum) * batch.
inline void update_running_stats(Model& m, const TrainCache& cache) {
    for (const std::string branch : {"body", "image"}) {
        const BranchCache& bc = branch == "body" ? cache.body : cache.image;
        if (bc.stats.empty()) continue;  // branch skipped (B mode)
        for (int layer = 1; layer <= kNumConvLayers; ++layer) {
            const auto& st = bc.stats[static_cast<std::size_t>(layer - 1)];
            auto& mean = m.at(detail::layer_name(branch, "bn", layer, "running_mean"));
            auto& var = m.at(detail::layer_name(branch, "bn", layer, "running_var"));
            for (std::size_t i = 0; i < mean.size(); ++i) {
                mean[i] = kBnMomentum * mean[i] + (1.0 - kBnMomentum) * st.mean[i];
                var[i] = kBnMomentum * var[i] + (1.0 - kBnMomentum) * st.var[i];
            }
        }
    }
}

/// Backpropagate head gradients; returns dL/dparam for every trainable
/// parameter (zero-filled arrays for untouched ones).
inline std::map<std::string, std::vector<double>> model_backward(
    const Model& m, const TrainCache& cache, const std::vector<std::array<double, kNumCategories>>& grad_disc,
    const std::vector<std::array<double, kNumDims>>& grad_cont) {
    const int n = cache.n;
    if (static_cast<int>(grad_disc.size()) != n || static_cast<int>(grad_cont.size()) != n)
        throw Error("model_backward: gradient batch size mismatch");
    const int feat = backbone_feature_dim(m.cfg.backbone);
    const int in_dim = 2 * feat;

    std::map<std::string, std::vector<double>> grads;
    for (const auto& [name, data] : m.params)
        if (is_trainable_param(name)) grads[name] = std::vector<double>(data.size(), 0.0);

    const auto& wd = m.at("fusion.disc.weight");
    const auto& wc = m.at("fusion.cont.weight");
    auto& dwd = grads["fusion.disc.weight"];
    auto& dbd = grads["fusion.disc.bias"];
    auto& dwc = grads["fusion.cont.weight"];
    auto& dbc = grads["fusion.cont.bias"];

    std::vector<double> dhidden(static_cast<std::size_t>(n) * kFusionWidth, 0.0);
    for (int ni = 0; ni < n; ++ni) {
        const double* hp = cache.fusion.hidden.data() + static_cast<std::size_t>(ni) * kFusionWidth;
        double* dh = dhidden.data() + static_cast<std::size_t>(ni) * kFusionWidth;
        for (int o = 0; o < kNumCategories; ++o) {
            const double g = grad_disc[static_cast<std::size_t>(ni)][static_cast<std::size_t>(o)];
            if (g == 0.0) continue;
            dbd[static_cast<std::size_t>(o)] += g;
            const double* wp = wd.data() + static_cast<std::size_t>(o) * kFusionWidth;
            double* dwp = dwd.data() + static_cast<std::size_t>(o) * kFusionWidth;
            for (int i = 0; i < kFusionWidth; ++i) {
                dwp[i] += g * hp[i];
                dh[i] += g * wp[i];
            }
        }
        for (int o = 0; o < kNumDims; ++o) {
            const double g = grad_cont[static_cast<std::size_t>(ni)][static_cast<std::size_t>(o)];
            if (g == 0.0) continue;
            dbc[static_cast<std::size_t>(o)] += g;
            const double* wp = wc.data() + static_cast<std::size_t>(o) * kFusionWidth;
            double* dwp = dwc.data() + static_cast<std::size_t>(o) * kFusionWidth;
            for (int i = 0; i < kFusionWidth; ++i) {
                dwp[i] += g * hp[i];
                dh[i] += g * wp[i];
            }
        }
        // ReLU of the fusion trunk.
        for (int i = 0; i < kFusionWidth; ++i)
            if (hp[i] <= 0.0) dh[i] = 0.0;
    }

    const auto& w1 = m.at("fusion.fc1.weight");
    auto& dw1 = grads["fusion.fc1.weight"];
    auto& db1 = grads["fusion.fc1.bias"];
    std::vector<double> dconcat(static_cast<std::size_t>(n) * static_cast<std::size_t>(in_dim), 0.0);
    for (int ni = 0; ni < n; ++ni) {
        const double* xp = cache.fusion.concat.data() + static_cast<std::size_t>(ni) * static_cast<std::size_t>(in_dim);
        const double* dh = dhidden.data() + static_cast<std::size_t>(ni) * kFusionWidth;
        double* dxp = dconcat.data() + static_cast<std::size_t>(ni) * static_cast<std::size_t>(in_dim);
        for (int o = 0; o < kFusionWidth; ++o) {
            const double g = dh[o];
            if (g == 0.0) continue;
            db1[static_cast<std::size_t>(o)] += g;
            const double* wp = w1.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in_dim);
            double* dwp = dw1.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in_dim);
            for (int i = 0; i < in_dim; ++i) {
                dwp[i] += g * xp[i];
                dxp[i] += g * wp[i];
            }
        }
    }

    std::vector<double> dfb(static_cast<std::size_t>(n) * static_cast<std::size_t>(feat));
    std::vector<double> dfi(static_cast<std::size_t>(n) * static_cast<std::size_t>(feat));
    for (int ni = 0; ni < n; ++ni)
        for (int i = 0; i < feat; ++i) {
            dfb[static_cast<std::size_t>(ni) * static_cast<std::size_t>(feat) + static_cast<std::size_t>(i)] =
                dconcat[static_cast<std::size_t>(ni) * static_cast<std::size_t>(in_dim) + static_cast<std::size_t>(i)];
            dfi[static_cast<std::size_t>(ni) * static_cast<std::size_t>(feat) + static_cast<std::size_t>(i)] =
                dconcat[static_cast<std::size_t>(ni) * static_cast<std::size_t>(in_dim) + static_cast<std::size_t>(feat) + static_cast<std::size_t>(i)];
        }

    detail::branch_backward(m, "body", cache.body, dfb, grads);
    if (m.cfg.use_context) detail::branch_backward(m, "image", cache.image, dfi, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// Persistence

inline Checkpoint to_checkpoint(const Model& m, nlohmann::json metadata = {}) {
    Checkpoint ckpt;
    ckpt.arrays = m.params;
    ckpt.shapes = m.shapes;
    if (metadata.is_null()) metadata = nlohmann::json::object();
    metadata["model"] = {{"input_size", m.cfg.backbone.input_size},
                         {"base_channels", m.cfg.backbone.base_channels},
                         {"in_channels", m.cfg.backbone.in_channels},
                         {"use_context", m.cfg.use_context},
                         {"seed", m.cfg.seed}};
    ckpt.metadata = std::move(metadata);
    return ckpt;
}

inline Model model_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("model"))
        throw Error("model_from_checkpoint: checkpoint carries no model configuration");
    const auto& mc = ckpt.metadata.at("model");
    ModelConfig cfg;
    cfg.backbone.input_size = mc.at("input_size").get<int>();
    cfg.backbone.base_channels = mc.at("base_channels").get<int>();
    cfg.backbone.in_channels = mc.at("in_channels").get<int>();
    cfg.use_context = mc.at("use_context").get<bool>();
    cfg.seed = mc.at("seed").get<std::uint64_t>();
    Model m = make_model(cfg);
    for (auto& [name, data] : m.params) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end())
            throw Error("model_from_checkpoint: checkpoint is missing '" + name + "'");
        if (it->second.size() != data.size())
            throw Error("model_from_checkpoint: size mismatch for '" + name + "'");
        data = it->second;
    }
    return m;
}

/// Copy every checkpoint array whose name (after an optional prefix filter)
/// matches an existing parameter of the model. Returns how many arrays were
/// imported; importing nothing is an error, as is a shape mismatch on a
/// matching name.
inline std::size_t import_pretrained(Model& m, const std::filesystem::path& path,
                                     const std::string& prefix = "") {
    Checkpoint ckpt = load_checkpoint(path);
    std::size_t imported = 0;
    for (const auto& [name, data] : ckpt.arrays) {
        if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
        auto it = m.params.find(name);
        if (it == m.params.end()) continue;
        if (it->second.size() != data.size())
            throw Error("import_pretrained: shape mismatch for '" + name + "': model has " +
                        std::to_string(it->second.size()) + " values, checkpoint has " +
                        std::to_string(data.size()));
        it->second = data;
        ++imported;
    }
    if (imported == 0)
        throw Error("import_pretrained: no matching parameters in '" + path.string() + "'" +
                    (prefix.empty() ? "" : " under prefix '" + prefix + "'"));
    return imported;
}

} // namespace emoscene
