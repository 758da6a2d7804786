#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maffsrn/autodiff.hpp"
#include "maffsrn/core.hpp"
#include "maffsrn/ops.hpp"
#include "maffsrn/tensor.hpp"

namespace maffsrn {

// Configuration of one multi-attention block.
struct MabConfig {
    int channels = 32;
    int reduction = 4;
    int attn_stride = 3;
    std::vector<int> dilations = {1, 2};
    std::vector<int> branch_kernels = {3, 3};
    int body_convs = 2;
    bool cea_enabled = true;
    int dw_kernel = 5;

    void validate() const {
        if (channels < 1) throw config_error("mab: channels must be >= 1");
        if (reduction < 1 || channels % reduction != 0)
            throw config_error("mab: channels must be divisible by reduction");
        if (attn_stride < 1) throw config_error("mab: attn_stride must be >= 1");
        if (body_convs < 1) throw config_error("mab: body_convs must be >= 1");
        if (dw_kernel < 1 || dw_kernel % 2 == 0)
            throw config_error("mab: dw_kernel must be odd and positive");
        if (dilations.empty() || dilations.size() != branch_kernels.size())
            throw config_error("mab: dilations and branch_kernels must have equal length >= 1");
        for (int d : dilations)
            if (d < 1) throw config_error("mab: dilations must be >= 1");
        for (int k : branch_kernels)
            if (k < 1 || k % 2 == 0) throw config_error("mab: branch kernels must be odd");
    }
};

enum class Fusion { HFF, BFF, MBFF };

inline std::string fusion_name(Fusion f) {
    switch (f) {
        case Fusion::HFF: return "hff";
        case Fusion::BFF: return "bff";
        case Fusion::MBFF: return "mbff";
    }
    throw config_error("unknown fusion topology");
}

inline Fusion fusion_from_name(const std::string& s) {
    if (s == "hff") return Fusion::HFF;
    if (s == "bff") return Fusion::BFF;
    if (s == "mbff") return Fusion::MBFF;
    throw config_error("unknown fusion topology '" + s + "' (expected hff, bff or mbff)");
}

// Configuration of one feature fusion group: a chain of m MABs plus the
// fusion stage that merges their outputs.
struct FfgConfig {
    MabConfig mab;
    int m = 4;
    Fusion fusion = Fusion::MBFF;
    bool channel_shuffle_enabled = true;
    int shuffle_groups = 2;
    double lambda_init = 0.5;

    void validate() const {
        mab.validate();
        if (m < 1) throw config_error("ffg: m must be >= 1");
        if ((fusion == Fusion::MBFF || fusion == Fusion::BFF) && m < 2)
            throw config_error("ffg: " + fusion_name(fusion) + " fusion degenerates for m < 2");
        if (fusion == Fusion::BFF && (m & (m - 1)) != 0)
            throw config_error("ffg: bff fusion requires m to be a power of two");
        if (shuffle_groups < 1) throw config_error("ffg: shuffle_groups must be >= 1");
        if (!std::isfinite(lambda_init)) throw config_error("ffg: lambda_init must be finite");
    }

    // Reduce convolutions in the fusion stage: progressive and tree fusion
    // pair features m-1 times; flat fusion reduces once.
    int fuse_conv_count() const { return fusion == Fusion::HFF ? 1 : m - 1; }
};

// Geometry constructors shared by parameter builders and the static
// complexity planner, so both derive shapes from the same source.
inline ConvSpec conv_spec(int in_ch, int out_ch, int k, int stride, int dilation, int pad,
                          int groups) {
    ConvSpec spec;
    spec.in_channels = in_ch;
    spec.out_channels = out_ch;
    spec.kh = spec.kw = k;
    spec.sh = spec.sw = stride;
    spec.dh = spec.dw = dilation;
    spec.ph = spec.pw = pad;
    spec.groups = groups;
    spec.validate();
    return spec;
}

inline ConvSpec conv_spec_square(int in_ch, int out_ch, int k, int groups = 1) {
    return conv_spec(in_ch, out_ch, k, 1, 1, same_padding(k), groups);
}

inline int64_t conv_param_count(const ConvSpec& s) {
    return static_cast<int64_t>(s.out_channels) * (s.in_channels / s.groups) * s.kh * s.kw +
           (s.has_bias ? s.out_channels : 0);
}

// One convolution with its geometry and parameters.
template <typename T>
struct ConvLayer {
    ConvSpec spec;
    Tensor<T> weight;
    Tensor<T> bias;

    Tensor<T> operator()(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
        return conv2d(x, weight, spec.has_bias ? &bias : nullptr, spec, tape);
    }
    int64_t param_count() const { return weight.numel() + (spec.has_bias ? bias.numel() : 0); }
};

// Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero. The shrinking
// uniform bound keeps activations from compounding across the many residual
// adds of a deep trunk. Draw order is the flat weight index order, which
// makes builds reproducible from the seed.
template <typename T>
ConvLayer<T> make_conv(const ConvSpec& spec, Rng& rng) {
    ConvLayer<T> layer;
    layer.spec = spec;
    layer.weight = Tensor<T>({spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw});
    const double fan_in = static_cast<double>(spec.in_channels / spec.groups) * spec.kh * spec.kw;
    const double bound = 1.0 / std::sqrt(fan_in);
    for (int64_t i = 0; i < layer.weight.numel(); ++i)
        layer.weight.data()[i] = static_cast<T>(rng.next_symmetric() * bound);
    layer.bias = Tensor<T>::zeros({spec.out_channels, 1, 1, 1});
    return layer;
}

template <typename T>
ConvLayer<T> make_conv_square(int in_ch, int out_ch, int k, Rng& rng, int groups = 1) {
    return make_conv<T>(conv_spec_square(in_ch, out_ch, k, groups), rng);
}

// --- CEA: pointwise conv then depthwise conv, added back to the input. ---

template <typename T>
struct CeaParams {
    ConvLayer<T> pw;
    ConvLayer<T> dw;
};

template <typename T>
CeaParams<T> make_cea(const MabConfig& cfg, Rng& rng) {
    CeaParams<T> p;
    p.pw = make_conv_square<T>(cfg.channels, cfg.channels, 1, rng);
    p.dw = make_conv_square<T>(cfg.channels, cfg.channels, cfg.dw_kernel, rng, cfg.channels);
    return p;
}

template <typename T>
Tensor<T> cea_forward(const Tensor<T>& x, const CeaParams<T>& p, Tape<T>* tape = nullptr) {
    Tensor<T> t = p.pw(x, tape);
    Tensor<T> refined = p.dw(t, tape);
    t.reset();
    return add(x, refined, tape);
}

// --- MAB: optional CEA, conv body, and a reduced spatial-attention mask. ---

template <typename T>
struct MabParams {
    CeaParams<T> cea;  // unused when !cfg.cea_enabled
    std::vector<ConvLayer<T>> body;
    ConvLayer<T> reduce;             // 1x1, C -> C/r
    ConvLayer<T> stride;             // 3x3, stride attn_stride, pad 1
    std::vector<ConvLayer<T>> branch;  // dilated same-pad convs, summed
    ConvLayer<T> expand;             // 1x1, C/r -> C
};

template <typename T>
MabParams<T> make_mab(const MabConfig& cfg, Rng& rng) {
    cfg.validate();
    MabParams<T> p;
    if (cfg.cea_enabled) p.cea = make_cea<T>(cfg, rng);
    for (int i = 0; i < cfg.body_convs; ++i)
        p.body.push_back(make_conv_square<T>(cfg.channels, cfg.channels, 3, rng));
    const int cr = cfg.channels / cfg.reduction;
    p.reduce = make_conv_square<T>(cfg.channels, cr, 1, rng);
    p.stride = make_conv<T>(conv_spec(cr, cr, 3, cfg.attn_stride, 1, 1, 1), rng);
    for (size_t i = 0; i < cfg.dilations.size(); ++i) {
        const int k = cfg.branch_kernels[i];
        const int d = cfg.dilations[i];
        p.branch.push_back(make_conv<T>(conv_spec(cr, cr, k, 1, d, same_padding(k, d), 1), rng));
    }
    p.expand = make_conv_square<T>(cr, cfg.channels, 1, rng);
    return p;
}

template <typename T>
Tensor<T> mab_forward(Tensor<T> x, const MabParams<T>& p, const MabConfig& cfg,
                      Tape<T>* tape = nullptr) {
    const int64_t h = x.shape().h, w = x.shape().w;
    if (h < 3 || w < 3)
        throw shape_error("mab: spatial extents must be >= 3, got " + x.shape().str());
    if (cfg.cea_enabled) x = cea_forward(x, p.cea, tape);

    Tensor<T> f = p.body[0](x, tape);
    x.reset();
    for (size_t i = 1; i < p.body.size(); ++i) {
        Tensor<T> r = relu(f, tape);
        f.reset();
        f = p.body[i](r, tape);
    }

    Tensor<T> a = p.reduce(f, tape);
    Tensor<T> sc = p.stride(a, tape);
    Tensor<T> s = relu(sc, tape);
    sc.reset();
    Tensor<T> b;
    for (size_t i = 0; i < p.branch.size(); ++i) {
        Tensor<T> c = p.branch[i](s, tape);
        if (i + 1 == p.branch.size()) s.reset();  // s dies at its last conv
        b = b.valid() ? add(b, c, tape) : std::move(c);
    }
    b = relu(b, tape);
    Tensor<T> u = upsample_bilinear(b, h, w, tape);
    b.reset();
    u = add(u, a, tape);
    a.reset();
    Tensor<T> e = p.expand(u, tape);
    u.reset();
    Tensor<T> mask = sigmoid(e, tape);
    e.reset();
    return mul(f, mask, tape);
}

// --- FFG: MAB chain, fusion of the chain outputs, gated residual. ---

template <typename T>
struct FfgParams {
    std::vector<MabParams<T>> mabs;
    std::vector<ConvLayer<T>> fuse;
    Tensor<T> lambda1;  // gates the group input
    Tensor<T> lambda2;  // gates the fused features
};

template <typename T>
FfgParams<T> make_ffg(const FfgConfig& cfg, Rng& rng) {
    cfg.validate();
    FfgParams<T> p;
    for (int i = 0; i < cfg.m; ++i) p.mabs.push_back(make_mab<T>(cfg.mab, rng));
    const int c = cfg.mab.channels;
    if (cfg.fusion == Fusion::HFF) {
        p.fuse.push_back(make_conv_square<T>(cfg.m * c, c, 1, rng));
    } else {
        for (int i = 0; i < cfg.m - 1; ++i) p.fuse.push_back(make_conv_square<T>(2 * c, c, 1, rng));
    }
    p.lambda1 = Tensor<T>::scalar(static_cast<T>(cfg.lambda_init));
    p.lambda2 = Tensor<T>::scalar(static_cast<T>(cfg.lambda_init));
    return p;
}

// Fusion stage alone, consuming the chain outputs. Exposed separately so the
// shuffle-equivariance property can be asserted directly on it.
template <typename T>
Tensor<T> fuse_features(std::vector<Tensor<T>> f, const FfgParams<T>& p, const FfgConfig& cfg,
                        Tape<T>* tape = nullptr) {
    if (static_cast<int>(f.size()) != cfg.m)
        throw shape_error("fuse: expected " + std::to_string(cfg.m) + " feature blocks, got " +
                          std::to_string(f.size()));
    auto shuffled = [&](Tensor<T> cat, int groups) {
        if (!cfg.channel_shuffle_enabled) return cat;
        Tensor<T> sh = channel_shuffle(cat, groups, tape);
        cat.reset();
        return sh;
    };

    switch (cfg.fusion) {
        case Fusion::MBFF: {
            Tensor<T> acc = std::move(f[0]);
            for (int i = 1; i < cfg.m; ++i) {
                Tensor<T> cat = concat_channels(acc, f[static_cast<size_t>(i)], tape);
                acc.reset();
                f[static_cast<size_t>(i)].reset();
                cat = shuffled(std::move(cat), cfg.shuffle_groups);
                acc = p.fuse[static_cast<size_t>(i - 1)](cat, tape);
                cat.reset();
            }
            return acc;
        }
        case Fusion::BFF: {
            std::vector<Tensor<T>> level = std::move(f);
            size_t k = 0;
            while (level.size() > 1) {
                std::vector<Tensor<T>> next;
                for (size_t j = 0; j + 1 < level.size(); j += 2) {
                    Tensor<T> cat = concat_channels(level[j], level[j + 1], tape);
                    level[j].reset();
                    level[j + 1].reset();
                    cat = shuffled(std::move(cat), cfg.shuffle_groups);
                    next.push_back(p.fuse[k++](cat, tape));
                    cat.reset();
                }
                level = std::move(next);
            }
            return std::move(level[0]);
        }
        case Fusion::HFF: {
            Tensor<T> cat = std::move(f[0]);
            for (int i = 1; i < cfg.m; ++i) {
                Tensor<T> wider = concat_channels(cat, f[static_cast<size_t>(i)], tape);
                cat.reset();
                f[static_cast<size_t>(i)].reset();
                cat = std::move(wider);
            }
            cat = shuffled(std::move(cat), cfg.m);
            Tensor<T> out = p.fuse[0](cat, tape);
            cat.reset();
            return out;
        }
    }
    throw config_error("unknown fusion topology");
}

template <typename T>
Tensor<T> ffg_forward(Tensor<T> x, const FfgParams<T>& p, const FfgConfig& cfg,
                      Tape<T>* tape = nullptr) {
    std::vector<Tensor<T>> f;
    f.reserve(static_cast<size_t>(cfg.m));
    f.push_back(mab_forward(x, p.mabs[0], cfg.mab, tape));
    for (int i = 1; i < cfg.m; ++i)
        f.push_back(mab_forward(f.back(), p.mabs[static_cast<size_t>(i)], cfg.mab, tape));
    Tensor<T> fused = fuse_features(std::move(f), p, cfg, tape);
    Tensor<T> g1 = scale(x, p.lambda1, tape);
    x.reset();
    Tensor<T> g2 = scale(fused, p.lambda2, tape);
    fused.reset();
    return add(g1, g2, tape);
}

// --- Named parameter traversal (fixed order; checkpoints follow it). ---

template <typename T, typename F>
void visit_params(ConvLayer<T>& layer, const std::string& prefix, F&& f) {
    f(prefix + ".weight", layer.weight);
    if (layer.spec.has_bias) f(prefix + ".bias", layer.bias);
}

template <typename T, typename F>
void visit_params(CeaParams<T>& p, const std::string& prefix, F&& f) {
    visit_params(p.pw, prefix + ".pw", f);
    visit_params(p.dw, prefix + ".dw", f);
}

template <typename T, typename F>
void visit_params(MabParams<T>& p, const MabConfig& cfg, const std::string& prefix, F&& f) {
    if (cfg.cea_enabled) visit_params(p.cea, prefix + ".cea", f);
    for (size_t i = 0; i < p.body.size(); ++i)
        visit_params(p.body[i], prefix + ".body." + std::to_string(i), f);
    visit_params(p.reduce, prefix + ".attn.reduce", f);
    visit_params(p.stride, prefix + ".attn.stride", f);
    for (size_t i = 0; i < p.branch.size(); ++i)
        visit_params(p.branch[i], prefix + ".attn.branch." + std::to_string(i), f);
    visit_params(p.expand, prefix + ".attn.expand", f);
}

template <typename T, typename F>
void visit_params(FfgParams<T>& p, const FfgConfig& cfg, const std::string& prefix, F&& f) {
    for (size_t i = 0; i < p.mabs.size(); ++i)
        visit_params(p.mabs[i], cfg.mab, prefix + ".mab." + std::to_string(i), f);
    for (size_t i = 0; i < p.fuse.size(); ++i)
        visit_params(p.fuse[i], prefix + ".fuse." + std::to_string(i), f);
    f(prefix + ".lambda.1", p.lambda1);
    f(prefix + ".lambda.2", p.lambda2);
}

}  // namespace maffsrn
