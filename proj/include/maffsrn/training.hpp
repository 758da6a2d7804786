#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "maffsrn/gradcheck.hpp"
#include "maffsrn/imaging.hpp"
#include "maffsrn/model.hpp"

namespace maffsrn {

struct TrainConfig {
    double lr0 = 2e-4;
    int batch = 16;
    int patch = 48;
    int epochs = 1000;
    int halve_every = 200;
    std::string optimizer = "adamp";  // "adam" | "adamp"
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
    std::string loss = "l1";  // "l1" | "l2"

    void validate() const {
        if (!(lr0 > 0)) throw config_error("train: lr0 must be positive");
        if (batch < 1) throw config_error("train: batch must be >= 1");
        if (patch < 8) throw config_error("train: patch must be >= 8");
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
        if (halve_every < 1) throw config_error("train: halve_every must be >= 1");
        if (optimizer != "adam" && optimizer != "adamp")
            throw config_error("train: optimizer must be adam or adamp");
        if (loss != "l1" && loss != "l2") throw config_error("train: loss must be l1 or l2");
    }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw config_error("lr_at: epoch must be >= 0");
    return cfg.lr0 * std::pow(0.5, epoch / cfg.halve_every);
}

// Mean absolute error. The subgradient at exact ties is defined as zero.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr) {
    if (pred.shape() != target.shape())
        throw shape_error("l1_loss: shape mismatch " + pred.shape().str() + " vs " +
                          target.shape().str());
    Tensor<T> out({1, 1, 1, 1});
    if (tape) out.set_tape(tape);
    const T* p = pred.data();
    const T* t = target.data();
    const int64_t n = pred.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i)
        acc += p[i] >= t[i] ? static_cast<double>(p[i] - t[i]) : static_cast<double>(t[i] - p[i]);
    out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
    ensure_finite(out, "l1_loss");
    if (tape) {
        Tensor<T> pc = pred, tc = target, oc = out;
        tape->record([pc, tc, oc, n]() mutable {
            const T g = oc.grad()[0] / static_cast<T>(n);
            const T* p = pc.data();
            const T* t = tc.data();
            T* gp = pc.grad();
            T* gt = tc.grad();
            for (int64_t i = 0; i < n; ++i) {
                const T s = p[i] > t[i] ? T(1) : (p[i] < t[i] ? T(-1) : T(0));
                gp[i] += g * s;
                gt[i] -= g * s;
            }
        });
    }
    return out;
}

// Mean squared error.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr) {
    if (pred.shape() != target.shape())
        throw shape_error("l2_loss: shape mismatch " + pred.shape().str() + " vs " +
                          target.shape().str());
    Tensor<T> out({1, 1, 1, 1});
    if (tape) out.set_tape(tape);
    const T* p = pred.data();
    const T* t = target.data();
    const int64_t n = pred.numel();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += d * d;
    }
    out.data()[0] = static_cast<T>(acc / static_cast<double>(n));
    ensure_finite(out, "l2_loss");
    if (tape) {
        Tensor<T> pc = pred, tc = target, oc = out;
        tape->record([pc, tc, oc, n]() mutable {
            const T g = oc.grad()[0] * T(2) / static_cast<T>(n);
            const T* p = pc.data();
            const T* t = tc.data();
            T* gp = pc.grad();
            T* gt = tc.grad();
            for (int64_t i = 0; i < n; ++i) {
                gp[i] += g * (p[i] - t[i]);
                gt[i] -= g * (p[i] - t[i]);
            }
        });
    }
    return out;
}

template <typename T>
struct OptimizerState {
    struct Moments {
        std::vector<T> m;
        std::vector<T> v;
    };
    std::map<std::string, Moments> slots;
    int64_t step = 0;
};

// One Adam update on a single tensor; with `project` the component of the
// update parallel to the weight vector is removed (AdamP-style treatment of
// scale-invariant tensors).
template <typename T>
void adam_update_tensor(Tensor<T>& t, typename OptimizerState<T>::Moments& mo, int64_t step,
                        double lr, double beta1, double beta2, double eps, bool project) {
    const int64_t n = t.numel();
    if (mo.m.empty()) {
        mo.m.assign(static_cast<size_t>(n), T(0));
        mo.v.assign(static_cast<size_t>(n), T(0));
    }
    if (static_cast<int64_t>(mo.m.size()) != n)
        throw shape_error("optimizer state does not match parameter shape");

    const T* g = t.grad();
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    std::vector<T> update(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const size_t k = static_cast<size_t>(i);
        mo.m[k] = static_cast<T>(beta1 * mo.m[k] + (1.0 - beta1) * g[i]);
        mo.v[k] = static_cast<T>(beta2 * mo.v[k] + (1.0 - beta2) * g[i] * g[i]);
        const double mhat = mo.m[k] / bc1;
        const double vhat = mo.v[k] / bc2;
        update[k] = static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
    if (project) {
        double wu = 0.0, ww = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            wu += static_cast<double>(t.data()[i]) * update[static_cast<size_t>(i)];
            ww += static_cast<double>(t.data()[i]) * t.data()[i];
        }
        if (ww > 0.0) {
            const double r = wu / ww;
            for (int64_t i = 0; i < n; ++i)
                update[static_cast<size_t>(i)] -= static_cast<T>(r * t.data()[i]);
        }
    }
    for (int64_t i = 0; i < n; ++i) t.data()[i] -= update[static_cast<size_t>(i)];
    ensure_finite(t, "optimizer step");
}

// Projection applies to convolution weight tensors only; biases and the
// scalar gates always take the plain Adam update.
inline bool adamp_projects(const std::string& name) {
    return name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

template <typename T>
void optimizer_step(Network<T>& net, OptimizerState<T>& st, double lr, const TrainConfig& cfg) {
    const bool adamp = cfg.optimizer == "adamp";
    ++st.step;
    visit_params(net, [&](const std::string& name, Tensor<T>& t) {
        adam_update_tensor(t, st.slots[name], st.step, lr, cfg.beta1, cfg.beta2, cfg.eps,
                           adamp && adamp_projects(name));
    });
}

template <typename T>
void zero_grads(Network<T>& net) {
    visit_params(net, [](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
};

// Stacks B single-image tensors (1,C,H,W) into one (B,C,H,W) batch.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    const Shape4 s = items.front().shape();
    Tensor<T> out({static_cast<int64_t>(items.size()), s.c, s.h, s.w});
    const int64_t per = s.numel();
    for (size_t b = 0; b < items.size(); ++b) {
        const T* src = items[b].data();
        T* dst = out.data() + static_cast<int64_t>(b) * per;
        for (int64_t i = 0; i < per; ++i) dst[i] = src[i];
    }
    return out;
}

// Patch-based optimization loop. Batches are drawn with replacement; one
// epoch is ceil(dataset/batch) iterations. Deterministic for a fixed seed
// and thread-count-independent operator kernels.
template <typename T>
std::vector<EpochStats> train(Network<T>& net, const std::vector<ImagePair>& data,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochStats&)>& reporter = {}) {
    cfg.validate();
    if (data.empty()) throw io_error("train: dataset is empty");
    for (const auto& p : data) {
        if (p.scale != net.cfg.scale)
            throw config_error("train: dataset scale does not match network scale");
        if (p.lr.width < cfg.patch || p.lr.height < cfg.patch)
            throw shape_error("train: LR image " + std::to_string(p.lr.width) + "x" +
                              std::to_string(p.lr.height) + " smaller than patch " +
                              std::to_string(cfg.patch));
    }

    Rng rng(cfg.seed);
    OptimizerState<T> st;
    const int64_t iters =
        (static_cast<int64_t>(data.size()) + cfg.batch - 1) / static_cast<int64_t>(cfg.batch);
    std::vector<EpochStats> curve;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        double loss_sum = 0.0;
        for (int64_t it = 0; it < iters; ++it) {
            std::vector<Tensor<T>> lr_items, hr_items;
            for (int b = 0; b < cfg.batch; ++b) {
                const auto& pair = data[rng.next_index(data.size())];
                ImagePair patch = extract_patch(pair, cfg.patch, rng);
                patch = augment(patch, rng);
                lr_items.push_back(image_to_tensor<T>(patch.lr));
                hr_items.push_back(image_to_tensor<T>(patch.hr));
            }
            Tensor<T> input = stack_batch(lr_items);
            Tensor<T> target = stack_batch(hr_items);
            lr_items.clear();
            hr_items.clear();

            zero_grads(net);
            Tape<T> tape;
            Tensor<T> pred = forward(net, std::move(input), &tape);
            Tensor<T> loss = cfg.loss == "l1" ? l1_loss(pred, target, &tape)
                                              : l2_loss(pred, target, &tape);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    " iteration " + std::to_string(it));
            backward(tape, loss);
            optimizer_step(net, st, lr, cfg);
            loss_sum += lv;
        }
        EpochStats stats{epoch, lr, loss_sum / static_cast<double>(iters)};
        curve.push_back(stats);
        if (reporter) reporter(stats);
    }
    return curve;
}

// --- whole-network gradient verification in 64-bit mode ---

struct GradcheckReport {
    double max_rel_error = 0.0;
    int checked = 0;
    std::string worst_param;
};

// Compares tape gradients of a scalar L2 objective against central finite
// differences for `samples` randomly chosen parameter elements plus every
// scalar gate.
inline GradcheckReport gradcheck_network(const NetConfig& cfg, Shape4 input_shape, int samples,
                                         double eps, uint64_t seed) {
    Network<double> net = build<double>(cfg, seed);
    Rng rng(seed + 1);

    // Move every parameter to a generic point. Finite differences are only
    // meaningful where the objective is differentiable: the zero bias init
    // pins ReLU kinks exactly at the probe point wherever a whole receptive
    // field is inactive, and the variance-controlled init clusters deep
    // pre-activations near zero where an eps step crosses kinks.
    visit_params(net, [&](const std::string&, Tensor<double>& t) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] += 0.25 * rng.next_symmetric();
    });

    Tensor<double> x(input_shape);
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.next_uniform();
    Tensor<double> target({input_shape.n, input_shape.c, input_shape.h * cfg.scale,
                           input_shape.w * cfg.scale});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = rng.next_uniform();

    auto loss_value = [&]() {
        Tensor<double> pred = forward(net, x);
        return l2_loss(pred, target).item();
    };

    zero_grads(net);
    {
        Tape<double> tape;
        Tensor<double> pred = forward(net, x, &tape);
        Tensor<double> loss = l2_loss(pred, target, &tape);
        backward(tape, loss);
    }

    std::vector<std::pair<std::string, Tensor<double>*>> params;
    visit_params(net, [&](const std::string& name, Tensor<double>& t) {
        params.emplace_back(name, &t);
    });

    // Every scalar gate is always checked; the rest of the budget samples
    // uniformly across all tensors.
    std::vector<std::pair<size_t, int64_t>> picks;
    for (size_t pi = 0; pi < params.size(); ++pi)
        if (params[pi].first.find("lambda") != std::string::npos) picks.emplace_back(pi, 0);
    while (static_cast<int>(picks.size()) < samples) {
        const size_t pi = static_cast<size_t>(rng.next_index(params.size()));
        const int64_t ei = static_cast<int64_t>(rng.next_index(
            static_cast<uint64_t>(params[pi].second->numel())));
        picks.emplace_back(pi, ei);
    }

    GradcheckReport rep;
    for (const auto& [pi, ei] : picks) {
        Tensor<double>& t = *params[pi].second;
        double* slot = t.data() + ei;
        const double saved = *slot;
        *slot = saved + eps;
        const double fp = loss_value();
        *slot = saved - eps;
        const double fm = loss_value();
        *slot = saved;
        const double fd = (fp - fm) / (2.0 * eps);
        const double rel = relative_error(t.grad()[ei], fd);
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_param = params[pi].first;
        }
        ++rep.checked;
    }
    return rep;
}

}  // namespace maffsrn
