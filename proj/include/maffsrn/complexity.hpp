#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "maffsrn/model.hpp"

namespace maffsrn {

// One node of the static forward plan. `macs` counts one multiply-accumulate
// per convolution kernel tap; every other kind carries zero.
struct PlanOp {
    std::string name;
    std::string kind;
    std::vector<int> inputs;
    int output = -1;
    int64_t params = 0;
    int64_t macs = 0;
};

struct ForwardPlan {
    std::vector<Shape4> tensors;
    std::vector<PlanOp> ops;
    int input = -1;
    int output = -1;

    int64_t total_macs() const {
        int64_t total = 0;
        for (const auto& op : ops) total += op.macs;
        return total;
    }
    int64_t total_params() const {
        int64_t total = 0;
        for (const auto& op : ops) total += op.params;
        return total;
    }
};

namespace detail {

// Replays the network forward symbolically. Every emit() mirrors exactly one
// runtime operator call, in execution order; the agreement is pinned by the
// instrumented-execution test, so edits to either side must keep them in step.
class Planner {
public:
    Planner(const NetConfig& cfg, Shape4 input) : cfg_(cfg) {
        cfg_.validate();
        plan_.input = new_tensor(input);
        run(plan_.input);
    }

    ForwardPlan take() { return std::move(plan_); }

private:
    int new_tensor(Shape4 s) {
        plan_.tensors.push_back(s);
        return static_cast<int>(plan_.tensors.size()) - 1;
    }

    int emit(const std::string& name, const std::string& kind, std::vector<int> inputs,
             Shape4 out_shape, int64_t params = 0, int64_t macs = 0) {
        PlanOp op;
        op.name = name;
        op.kind = kind;
        op.inputs = std::move(inputs);
        op.output = new_tensor(out_shape);
        op.params = params;
        op.macs = macs;
        plan_.ops.push_back(std::move(op));
        return plan_.ops.back().output;
    }

    Shape4 shape(int id) const { return plan_.tensors[static_cast<size_t>(id)]; }

    int conv(const std::string& name, int x, const ConvSpec& sp) {
        const Shape4 is = shape(x);
        if (is.c != sp.in_channels)
            throw shape_error("plan: conv '" + name + "' expects " +
                              std::to_string(sp.in_channels) + " channels, got " + is.str());
        const int64_t ho = sp.out_extent(is.h, sp.ph, sp.dh, sp.kh, sp.sh);
        const int64_t wo = sp.out_extent(is.w, sp.pw, sp.dw, sp.kw, sp.sw);
        if (ho < 1 || wo < 1)
            throw shape_error("plan: conv '" + name + "' output collapses for input " + is.str());
        const Shape4 os{is.n, sp.out_channels, ho, wo};
        const int64_t macs = static_cast<int64_t>(sp.kh) * sp.kw * (sp.in_channels / sp.groups) *
                             sp.out_channels * os.n * ho * wo;
        return emit(name, "conv", {x}, os, conv_param_count(sp), macs);
    }

    int eltwise(const std::string& name, const std::string& kind, int x) {
        return emit(name, kind, {x}, shape(x));
    }

    int gate(const std::string& name, int x) { return emit(name, "scale", {x}, shape(x), 1); }

    int cea(const std::string& p, int x) {
        const int c = cfg_.channels();
        const int t1 = conv(p + ".pw", x, conv_spec_square(c, c, 1));
        const int t2 = conv(p + ".dw", t1, conv_spec_square(c, c, cfg_.ffg.mab.dw_kernel, c));
        return emit(p + ".add", "add", {x, t2}, shape(x));
    }

    int mab(const std::string& p, int x) {
        const MabConfig& m = cfg_.ffg.mab;
        const Shape4 in = shape(x);
        const int c = m.channels;
        const int cr = c / m.reduction;
        if (m.cea_enabled) x = cea(p + ".cea", x);

        int f = conv(p + ".body.0", x, conv_spec_square(c, c, 3));
        for (int i = 1; i < m.body_convs; ++i) {
            const int r = eltwise(p + ".body." + std::to_string(i) + ".relu", "relu", f);
            f = conv(p + ".body." + std::to_string(i), r, conv_spec_square(c, c, 3));
        }

        const int a = conv(p + ".attn.reduce", f, conv_spec_square(c, cr, 1));
        const int sc = conv(p + ".attn.stride", a, conv_spec(cr, cr, 3, m.attn_stride, 1, 1, 1));
        const int s = eltwise(p + ".attn.stride.relu", "relu", sc);
        int b = -1;
        for (size_t i = 0; i < m.dilations.size(); ++i) {
            const int k = m.branch_kernels[i];
            const int d = m.dilations[i];
            const int ci = conv(p + ".attn.branch." + std::to_string(i), s,
                                conv_spec(cr, cr, k, 1, d, same_padding(k, d), 1));
            b = (b < 0) ? ci : emit(p + ".attn.branch.add." + std::to_string(i), "add", {b, ci},
                                    shape(ci));
        }
        b = eltwise(p + ".attn.branch.relu", "relu", b);
        const int u0 = emit(p + ".attn.up", "bilinear", {b}, {in.n, cr, in.h, in.w});
        const int u = emit(p + ".attn.skip", "add", {u0, a}, shape(u0));
        const int e = conv(p + ".attn.expand", u, conv_spec_square(cr, c, 1));
        const int mask = eltwise(p + ".attn.mask", "sigmoid", e);
        return emit(p + ".gate", "mul", {f, mask}, shape(f));
    }

    int shuffle(const std::string& name, int x) {
        if (!cfg_.ffg.channel_shuffle_enabled) return x;
        return emit(name, "shuffle", {x}, shape(x));
    }

    int concat(const std::string& name, int a, int b) {
        const Shape4 as = shape(a), bs = shape(b);
        return emit(name, "concat", {a, b}, {as.n, as.c + bs.c, as.h, as.w});
    }

    int fuse(const std::string& p, std::vector<int> f) {
        const FfgConfig& g = cfg_.ffg;
        const int c = g.mab.channels;
        switch (g.fusion) {
            case Fusion::MBFF: {
                int acc = f[0];
                for (int i = 1; i < g.m; ++i) {
                    const std::string tag = p + ".fuse." + std::to_string(i - 1);
                    int cat = concat(tag + ".concat", acc, f[static_cast<size_t>(i)]);
                    cat = shuffle(tag + ".shuffle", cat);
                    acc = conv(tag, cat, conv_spec_square(2 * c, c, 1));
                }
                return acc;
            }
            case Fusion::BFF: {
                std::vector<int> level = std::move(f);
                int k = 0;
                while (level.size() > 1) {
                    std::vector<int> next;
                    for (size_t j = 0; j + 1 < level.size(); j += 2) {
                        const std::string tag = p + ".fuse." + std::to_string(k++);
                        int cat = concat(tag + ".concat", level[j], level[j + 1]);
                        cat = shuffle(tag + ".shuffle", cat);
                        next.push_back(conv(tag, cat, conv_spec_square(2 * c, c, 1)));
                    }
                    level = std::move(next);
                }
                return level[0];
            }
            case Fusion::HFF: {
                int cat = f[0];
                for (int i = 1; i < g.m; ++i)
                    cat = concat(p + ".fuse.0.concat." + std::to_string(i), cat,
                                 f[static_cast<size_t>(i)]);
                cat = shuffle(p + ".fuse.0.shuffle", cat);
                return conv(p + ".fuse.0", cat, conv_spec_square(g.m * c, c, 1));
            }
        }
        throw config_error("unknown fusion topology");
    }

    int ffg(const std::string& p, int x) {
        std::vector<int> f;
        f.push_back(mab(p + ".mab.0", x));
        for (int i = 1; i < cfg_.ffg.m; ++i)
            f.push_back(mab(p + ".mab." + std::to_string(i), f.back()));
        const int fused = fuse(p, std::move(f));
        const int g1 = gate(p + ".lambda.1", x);
        const int g2 = gate(p + ".lambda.2", fused);
        return emit(p + ".residual", "add", {g1, g2}, shape(g1));
    }

    void run(int in) {
        const Shape4 is = shape(in);
        const int s = cfg_.scale;
        const int up = emit("up", "bicubic", {in}, {is.n, is.c, is.h * s, is.w * s});
        int x = conv("sfe", in, conv_spec_square(cfg_.colors, cfg_.channels(), 3));
        for (int i = 0; i < cfg_.n_ffg; ++i) x = ffg("ffg." + std::to_string(i), x);

        const int out_c = cfg_.colors * s * s;
        const int c5 = conv("recon.k5", x, conv_spec_square(cfg_.channels(), out_c, 5));
        const int g5 = gate("lambda0.1", c5);
        const Shape4 g5s = shape(g5);
        const int p5 = emit("recon.k5.ps", "pshuffle", {g5},
                            {g5s.n, g5s.c / (s * s), g5s.h * s, g5s.w * s});
        const int c3 = conv("recon.k3", x, conv_spec_square(cfg_.channels(), out_c, 3));
        const int g3 = gate("lambda0.2", c3);
        const Shape4 g3s = shape(g3);
        const int p3 = emit("recon.k3.ps", "pshuffle", {g3},
                            {g3s.n, g3s.c / (s * s), g3s.h * s, g3s.w * s});
        const int sum = emit("recon.sum", "add", {p5, p3}, shape(p5));
        plan_.output = emit("output", "add", {sum, up}, shape(sum));
    }

    NetConfig cfg_;
    ForwardPlan plan_;
};

}  // namespace detail

inline ForwardPlan build_plan(const NetConfig& cfg, Shape4 input) {
    return detail::Planner(cfg, input).take();
}

// Closed-form parameter count, independent of both the plan and the built
// tensors (those two are verified against this in tests).
inline int64_t count_params(const NetConfig& cfg) {
    cfg.validate();
    const MabConfig& m = cfg.ffg.mab;
    const int64_t c = m.channels;
    const int64_t cr = c / m.reduction;
    auto conv_n = [](int64_t in, int64_t out, int64_t k, int64_t groups = 1) {
        return out * (in / groups) * k * k + out;
    };

    int64_t mab = 0;
    if (m.cea_enabled) mab += conv_n(c, c, 1) + conv_n(c, c, m.dw_kernel, c);
    mab += static_cast<int64_t>(m.body_convs) * conv_n(c, c, 3);
    mab += conv_n(c, cr, 1);
    mab += conv_n(cr, cr, 3);
    for (size_t i = 0; i < m.dilations.size(); ++i) mab += conv_n(cr, cr, m.branch_kernels[i]);
    mab += conv_n(cr, c, 1);

    int64_t fuse = 0;
    if (cfg.ffg.fusion == Fusion::HFF)
        fuse = conv_n(static_cast<int64_t>(cfg.ffg.m) * c, c, 1);
    else
        fuse = static_cast<int64_t>(cfg.ffg.m - 1) * conv_n(2 * c, c, 1);

    const int64_t ffg = static_cast<int64_t>(cfg.ffg.m) * mab + fuse + 2;
    const int64_t out_c = static_cast<int64_t>(cfg.colors) * cfg.scale * cfg.scale;
    const int64_t recon = conv_n(c, out_c, 5) + conv_n(c, out_c, 3);
    return conv_n(cfg.colors, c, 3) + cfg.n_ffg * ffg + recon + 2;
}

// Multiply-accumulate count for one HR image of the given size. The HR frame
// must be divisible by the scale so the LR grid is exact.
inline int64_t count_multi_adds(const NetConfig& cfg, int64_t hr_h, int64_t hr_w) {
    cfg.validate();
    if (hr_h < 1 || hr_w < 1) throw shape_error("multi-adds: HR extents must be positive");
    if (hr_h % cfg.scale != 0 || hr_w % cfg.scale != 0)
        throw shape_error("multi-adds: HR " + std::to_string(hr_w) + "x" + std::to_string(hr_h) +
                          " is not divisible by scale " + std::to_string(cfg.scale));
    const ForwardPlan plan =
        build_plan(cfg, {1, cfg.colors, hr_h / cfg.scale, hr_w / cfg.scale});
    return plan.total_macs();
}

// Peak activation bytes (4 per element) under sequential execution with each
// tensor freed immediately after its last consumer, matching the runtime's
// release discipline when the input is moved in.
inline int64_t peak_activation_memory(const NetConfig& cfg, Shape4 input) {
    const ForwardPlan plan = build_plan(cfg, input);
    const size_t n = plan.tensors.size();
    std::vector<int> last_use(n, -1);
    for (size_t i = 0; i < plan.ops.size(); ++i)
        for (int in : plan.ops[i].inputs) last_use[static_cast<size_t>(in)] = static_cast<int>(i);
    last_use[static_cast<size_t>(plan.output)] = static_cast<int>(plan.ops.size());

    auto bytes = [&](int id) { return plan.tensors[static_cast<size_t>(id)].numel() * 4; };
    int64_t live = bytes(plan.input);
    int64_t peak = live;
    for (size_t i = 0; i < plan.ops.size(); ++i) {
        live += bytes(plan.ops[i].output);
        peak = std::max(peak, live);
        std::vector<int> freed;
        for (int in : plan.ops[i].inputs) {
            if (last_use[static_cast<size_t>(in)] == static_cast<int>(i) &&
                std::find(freed.begin(), freed.end(), in) == freed.end()) {
                live -= bytes(in);
                freed.push_back(in);
            }
        }
    }
    return peak;
}

inline const char* multi_add_convention() {
    return "one multiply-accumulate per convolution kernel tap; bias, activations, "
           "elementwise ops, channel/pixel shuffles and interpolation are not counted";
}

struct ComplexityReport {
    int64_t params = 0;
    int64_t multi_adds = 0;
    int64_t hr_h = 0;
    int64_t hr_w = 0;
    int64_t peak_activation_bytes = 0;
    std::string convention;
    ForwardPlan plan;
};

inline ComplexityReport analyze(const NetConfig& cfg, int64_t hr_h, int64_t hr_w) {
    ComplexityReport rep;
    rep.params = count_params(cfg);
    rep.multi_adds = count_multi_adds(cfg, hr_h, hr_w);
    rep.hr_h = hr_h;
    rep.hr_w = hr_w;
    rep.peak_activation_bytes =
        peak_activation_memory(cfg, {1, cfg.colors, hr_h / cfg.scale, hr_w / cfg.scale});
    rep.convention = multi_add_convention();
    rep.plan = build_plan(cfg, {1, cfg.colors, hr_h / cfg.scale, hr_w / cfg.scale});
    return rep;
}

inline nlohmann::json to_json(const ComplexityReport& rep) {
    nlohmann::json j;
    j["params"] = rep.params;
    j["multi_adds"] = rep.multi_adds;
    j["hr"] = {{"height", rep.hr_h}, {"width", rep.hr_w}};
    j["peak_activation_bytes"] = rep.peak_activation_bytes;
    j["convention"] = rep.convention;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& op : rep.plan.ops) {
        const Shape4 s = rep.plan.tensors[static_cast<size_t>(op.output)];
        layers.push_back({{"name", op.name},
                          {"kind", op.kind},
                          {"params", op.params},
                          {"multi_adds", op.macs},
                          {"output_shape", {s.n, s.c, s.h, s.w}}});
    }
    j["per_layer"] = std::move(layers);
    return j;
}

}  // namespace maffsrn
