#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "maffsrn/autodiff.hpp"
#include "maffsrn/core.hpp"
#include "maffsrn/resample.hpp"
#include "maffsrn/tensor.hpp"

namespace maffsrn {

// 2-D convolution geometry. Weight layout is (out, in/groups, kh, kw);
// depthwise convolution is groups == in_channels.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 1, kw = 1;
    int sh = 1, sw = 1;
    int dh = 1, dw = 1;
    int ph = 0, pw = 0;
    int groups = 1;
    bool has_bias = true;

    void validate() const {
        if (in_channels < 1 || out_channels < 1)
            throw config_error("conv: channel counts must be positive");
        if (kh < 1 || kw < 1 || sh < 1 || sw < 1 || dh < 1 || dw < 1)
            throw config_error("conv: kernel, stride and dilation extents must be >= 1");
        if (ph < 0 || pw < 0) throw config_error("conv: padding must be non-negative");
        if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
            throw config_error("conv: in_channels and out_channels must be divisible by groups");
    }

    int64_t out_extent(int64_t in, int pad, int dil, int k, int stride) const {
        return (in + 2 * pad - static_cast<int64_t>(dil) * (k - 1) - 1) / stride + 1;
    }
};

// "same" padding for an odd kernel at stride 1.
inline int same_padding(int k, int dilation = 1) { return dilation * (k - 1) / 2; }

namespace detail {

template <typename T>
Tensor<T> make_output(Shape4 shape, Tape<T>* tape) {
    Tensor<T> out(shape);
    if (tape) out.set_tape(tape);
    return out;
}

}  // namespace detail

// Direct convolution. Accumulation order per output element is fixed and
// independent of threading: bias first, then kernel taps in
// (input-channel, kernel-row, kernel-column) order. Out-of-bounds taps are
// zero-padding and contribute nothing.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec,
                 Tape<T>* tape = nullptr) {
    spec.validate();
    const Shape4 is = input.shape();
    if (is.c != spec.in_channels)
        throw shape_error("conv2d: input has " + std::to_string(is.c) + " channels, spec expects " +
                          std::to_string(spec.in_channels));
    const int64_t cin_g = spec.in_channels / spec.groups;
    const int64_t cout_g = spec.out_channels / spec.groups;
    const Shape4 ws{spec.out_channels, cin_g, spec.kh, spec.kw};
    if (weight.shape() != ws)
        throw shape_error("conv2d: weight shape " + weight.shape().str() + " does not match spec " +
                          ws.str());
    if (spec.has_bias) {
        if (!bias) throw shape_error("conv2d: spec declares bias but none was given");
        if (bias->numel() != spec.out_channels)
            throw shape_error("conv2d: bias must have one value per output channel");
    }
    const int64_t ho = spec.out_extent(is.h, spec.ph, spec.dh, spec.kh, spec.sh);
    const int64_t wo = spec.out_extent(is.w, spec.pw, spec.dw, spec.kw, spec.sw);
    if (ho < 1 || wo < 1)
        throw shape_error("conv2d: non-positive output extent for input " + is.str());

    Tensor<T> out = detail::make_output<T>({is.n, spec.out_channels, ho, wo}, tape);

    const T* idata = input.data();
    const T* wdata = weight.data();
    const T* bdata = spec.has_bias ? bias->data() : nullptr;
    T* odata = out.data();
    const int64_t h = is.h, w = is.w;

    parallel_for(is.n * spec.out_channels, [&](int64_t t) {
        const int64_t n = t / spec.out_channels;
        const int64_t co = t % spec.out_channels;
        const int64_t g = co / cout_g;
        const T* wbase = wdata + co * cin_g * spec.kh * spec.kw;
        T* obase = odata + t * ho * wo;
        const T binit = bdata ? bdata[co] : T(0);
        std::fill(obase, obase + ho * wo, binit);

        for (int64_t cl = 0; cl < cin_g; ++cl) {
            const T* ibase = idata + (n * is.c + g * cin_g + cl) * h * w;
            for (int ky = 0; ky < spec.kh; ++ky) {
                for (int kx = 0; kx < spec.kw; ++kx) {
                    const T wv = wbase[(cl * spec.kh + ky) * spec.kw + kx];
                    const int64_t iw0 = static_cast<int64_t>(kx) * spec.dw - spec.pw;
                    if (iw0 > w - 1) continue;  // tap never lands inside the row
                    int64_t ow_lo = iw0 >= 0 ? 0 : (-iw0 + spec.sw - 1) / spec.sw;
                    int64_t ow_hi = (w - 1 - iw0) / spec.sw;
                    if (ow_hi > wo - 1) ow_hi = wo - 1;
                    if (ow_lo > ow_hi) continue;
                    for (int64_t oh = 0; oh < ho; ++oh) {
                        const int64_t ih = oh * spec.sh - spec.ph + static_cast<int64_t>(ky) * spec.dh;
                        if (ih < 0 || ih >= h) continue;
                        const T* irow = ibase + ih * w + iw0;
                        T* orow = obase + oh * wo;
                        if (spec.sw == 1) {
                            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * irow[ow];
                        } else {
                            for (int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                                orow[ow] += wv * irow[ow * spec.sw];
                        }
                    }
                }
            }
        }
    });
    ensure_finite(out, "conv2d");

    if (tape) {
        Tensor<T> in_c = input, w_c = weight, out_c = out;
        Tensor<T> b_c = spec.has_bias ? *bias : Tensor<T>();
        ConvSpec sp = spec;
        tape->record([in_c, w_c, b_c, out_c, sp, cin_g, cout_g]() mutable {
            const Shape4 is = in_c.shape();
            const Shape4 os = out_c.shape();
            const T* dout = out_c.grad();
            const T* wdata = w_c.data();
            const T* idata = in_c.data();

            // d/d(input): gather over the output positions each input
            // element fed, in (out-channel, kernel-row, kernel-col) order.
            T* din = in_c.grad();
            parallel_for(is.n * is.c, [&](int64_t t) {
                const int64_t n = t / is.c;
                const int64_t ci = t % is.c;
                const int64_t g = ci / cin_g;
                const int64_t cl = ci % cin_g;
                T* dbase = din + t * is.h * is.w;
                for (int64_t ih = 0; ih < is.h; ++ih) {
                    for (int64_t iw = 0; iw < is.w; ++iw) {
                        T acc = 0;
                        for (int64_t co = g * cout_g; co < (g + 1) * cout_g; ++co) {
                            const T* dorow = dout + (n * os.c + co) * os.h * os.w;
                            const T* wbase = wdata + (co * cin_g + cl) * sp.kh * sp.kw;
                            for (int ky = 0; ky < sp.kh; ++ky) {
                                const int64_t th = ih + sp.ph - static_cast<int64_t>(ky) * sp.dh;
                                if (th < 0 || th % sp.sh != 0) continue;
                                const int64_t oh = th / sp.sh;
                                if (oh >= os.h) continue;
                                for (int kx = 0; kx < sp.kw; ++kx) {
                                    const int64_t tw = iw + sp.pw - static_cast<int64_t>(kx) * sp.dw;
                                    if (tw < 0 || tw % sp.sw != 0) continue;
                                    const int64_t ow = tw / sp.sw;
                                    if (ow >= os.w) continue;
                                    acc += dorow[oh * os.w + ow] * wbase[ky * sp.kw + kx];
                                }
                            }
                        }
                        dbase[ih * is.w + iw] += acc;
                    }
                }
            });

            // d/d(weight): gather over (batch, output-row, output-col).
            T* dw = w_c.grad();
            parallel_for(static_cast<int64_t>(sp.out_channels) * cin_g, [&](int64_t t) {
                const int64_t co = t / cin_g;
                const int64_t cl = t % cin_g;
                const int64_t g = co / cout_g;
                const int64_t ci = g * cin_g + cl;
                for (int ky = 0; ky < sp.kh; ++ky) {
                    for (int kx = 0; kx < sp.kw; ++kx) {
                        T acc = 0;
                        for (int64_t n = 0; n < is.n; ++n) {
                            const T* dorow = dout + (n * os.c + co) * os.h * os.w;
                            const T* ibase = idata + (n * is.c + ci) * is.h * is.w;
                            for (int64_t oh = 0; oh < os.h; ++oh) {
                                const int64_t ih = oh * sp.sh - sp.ph + static_cast<int64_t>(ky) * sp.dh;
                                if (ih < 0 || ih >= is.h) continue;
                                for (int64_t ow = 0; ow < os.w; ++ow) {
                                    const int64_t iw = ow * sp.sw - sp.pw + static_cast<int64_t>(kx) * sp.dw;
                                    if (iw < 0 || iw >= is.w) continue;
                                    acc += dorow[oh * os.w + ow] * ibase[ih * is.w + iw];
                                }
                            }
                        }
                        dw[(t * sp.kh + ky) * sp.kw + kx] += acc;
                    }
                }
            });

            if (b_c.valid()) {
                T* db = b_c.grad();
                for (int64_t co = 0; co < os.c; ++co) {
                    T acc = 0;
                    for (int64_t n = 0; n < os.n; ++n) {
                        const T* dorow = dout + (n * os.c + co) * os.h * os.w;
                        for (int64_t i = 0; i < os.h * os.w; ++i) acc += dorow[i];
                    }
                    db[co] += acc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec, Tape<T>* tape = nullptr) {
    return conv2d(input, weight, &bias, spec, tape);
}

// Sub-pixel rearrangement: (N, C, H, W) -> (N, C/r^2, H*r, W*r) with
// out[n][c][h*r+i][w*r+j] = in[n][c*r*r + i*r + j][h][w].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r, Tape<T>* tape = nullptr) {
    if (r < 1) throw config_error("pixel_shuffle: scale must be positive");
    const Shape4 is = input.shape();
    if (is.c % (static_cast<int64_t>(r) * r) != 0)
        throw shape_error("pixel_shuffle: channels " + std::to_string(is.c) +
                          " not divisible by r^2 = " + std::to_string(r * r));
    const Shape4 os{is.n, is.c / (r * r), is.h * r, is.w * r};
    Tensor<T> out = detail::make_output<T>(os, tape);
    const T* src = input.data();
    T* dst = out.data();
    for (int64_t n = 0; n < is.n; ++n)
        for (int64_t c = 0; c < os.c; ++c)
            for (int64_t h = 0; h < is.h; ++h)
                for (int64_t w = 0; w < is.w; ++w)
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < r; ++j)
                            dst[flat_index(os, n, c, h * r + i, w * r + j)] =
                                src[flat_index(is, n, c * r * r + i * r + j, h, w)];

    if (tape) {
        Tensor<T> in_c = input, out_c = out;
        tape->record([in_c, out_c, r, is, os]() mutable {
            const T* dout = out_c.grad();
            T* din = in_c.grad();
            for (int64_t n = 0; n < is.n; ++n)
                for (int64_t c = 0; c < os.c; ++c)
                    for (int64_t h = 0; h < is.h; ++h)
                        for (int64_t w = 0; w < is.w; ++w)
                            for (int i = 0; i < r; ++i)
                                for (int j = 0; j < r; ++j)
                                    din[flat_index(is, n, c * r * r + i * r + j, h, w)] +=
                                        dout[flat_index(os, n, c, h * r + i, w * r + j)];
        });
    }
    return out;
}

// Channel permutation induced by transposing a g x (C/g) view of the channel
// axis: output channel i*g + j takes input channel j*(C/g) + i.
inline std::vector<int64_t> channel_shuffle_perm(int64_t channels, int groups) {
    const int64_t per = channels / groups;
    std::vector<int64_t> perm(static_cast<size_t>(channels));
    for (int64_t i = 0; i < per; ++i)
        for (int64_t j = 0; j < groups; ++j)
            perm[static_cast<size_t>(i * groups + j)] = j * per + i;
    return perm;
}

template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& input, int groups, Tape<T>* tape = nullptr) {
    const Shape4 is = input.shape();
    if (groups < 1 || is.c % groups != 0)
        throw shape_error("channel_shuffle: channels " + std::to_string(is.c) +
                          " not divisible by groups " + std::to_string(groups));
    const auto perm = channel_shuffle_perm(is.c, groups);
    Tensor<T> out = detail::make_output<T>(is, tape);
    const int64_t plane = is.h * is.w;
    for (int64_t n = 0; n < is.n; ++n)
        for (int64_t c = 0; c < is.c; ++c)
            std::memcpy(out.data() + (n * is.c + c) * plane,
                        input.data() + (n * is.c + perm[static_cast<size_t>(c)]) * plane,
                        sizeof(T) * static_cast<size_t>(plane));

    if (tape) {
        Tensor<T> in_c = input, out_c = out;
        tape->record([in_c, out_c, perm, is, plane]() mutable {
            const T* dout = out_c.grad();
            T* din = in_c.grad();
            for (int64_t n = 0; n < is.n; ++n)
                for (int64_t c = 0; c < is.c; ++c) {
                    const T* s = dout + (n * is.c + c) * plane;
                    T* d = din + (n * is.c + perm[static_cast<size_t>(c)]) * plane;
                    for (int64_t i = 0; i < plane; ++i) d[i] += s[i];
                }
        });
    }
    return out;
}

// Bilinear interpolation with half-pixel centers:
// src = (dst + 0.5) * in/out - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int64_t out_h, int64_t out_w,
                            Tape<T>* tape = nullptr) {
    if (out_h < 1 || out_w < 1) throw shape_error("upsample_bilinear: target extents must be >= 1");
    const Shape4 is = input.shape();
    const Shape4 os{is.n, is.c, out_h, out_w};

    struct Lerp {
        int64_t i0, i1;
        T f;
    };
    auto make_axis = [](int64_t in, int64_t out) {
        std::vector<Lerp> axis(static_cast<size_t>(out));
        for (int64_t d = 0; d < out; ++d) {
            double src = (d + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
            if (src < 0) src = 0;
            if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
            int64_t i0 = static_cast<int64_t>(src);
            int64_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
            axis[static_cast<size_t>(d)] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
        }
        return axis;
    };
    const auto ay = make_axis(is.h, out_h);
    const auto ax = make_axis(is.w, out_w);

    Tensor<T> out = detail::make_output<T>(os, tape);
    const T* src = input.data();
    T* dst = out.data();
    parallel_for(is.n * is.c, [&](int64_t t) {
        const T* plane = src + t * is.h * is.w;
        T* oplane = dst + t * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const Lerp& ly = ay[static_cast<size_t>(y)];
            for (int64_t x = 0; x < out_w; ++x) {
                const Lerp& lx = ax[static_cast<size_t>(x)];
                const T v00 = plane[ly.i0 * is.w + lx.i0];
                const T v01 = plane[ly.i0 * is.w + lx.i1];
                const T v10 = plane[ly.i1 * is.w + lx.i0];
                const T v11 = plane[ly.i1 * is.w + lx.i1];
                const T top = v00 + (v01 - v00) * lx.f;
                const T bot = v10 + (v11 - v10) * lx.f;
                oplane[y * out_w + x] = top + (bot - top) * ly.f;
            }
        }
    });
    ensure_finite(out, "upsample_bilinear");

    if (tape) {
        Tensor<T> in_c = input, out_c = out;
        tape->record([in_c, out_c, ay, ax, is, out_h, out_w]() mutable {
            const T* dout = out_c.grad();
            T* din = in_c.grad();
            parallel_for(is.n * is.c, [&](int64_t t) {
                T* dplane = din + t * is.h * is.w;
                const T* oplane = dout + t * out_h * out_w;
                for (int64_t y = 0; y < out_h; ++y) {
                    const Lerp& ly = ay[static_cast<size_t>(y)];
                    for (int64_t x = 0; x < out_w; ++x) {
                        const Lerp& lx = ax[static_cast<size_t>(x)];
                        const T g = oplane[y * out_w + x];
                        dplane[ly.i0 * is.w + lx.i0] += g * (T(1) - ly.f) * (T(1) - lx.f);
                        dplane[ly.i0 * is.w + lx.i1] += g * (T(1) - ly.f) * lx.f;
                        dplane[ly.i1 * is.w + lx.i0] += g * ly.f * (T(1) - lx.f);
                        dplane[ly.i1 * is.w + lx.i1] += g * ly.f * lx.f;
                    }
                }
            });
        });
    }
    return out;
}

// Antialiased bicubic upsampling of every plane by an integer factor.
// Parameter-free skip branch; produced as a leaf, so no backward is recorded.
template <typename T>
Tensor<T> bicubic_upsample(const Tensor<T>& input, int scale) {
    if (scale < 1) throw config_error("bicubic_upsample: scale must be >= 1");
    const Shape4 is = input.shape();
    const Shape4 os{is.n, is.c, is.h * scale, is.w * scale};
    Tensor<T> out(os);
    const T* src = input.data();
    T* dst = out.data();
    for (int64_t t = 0; t < is.n * is.c; ++t) {
        auto plane = resample_plane_bicubic(src + t * is.h * is.w, static_cast<int>(is.w),
                                            static_cast<int>(is.h), static_cast<int>(os.w),
                                            static_cast<int>(os.h));
        T* oplane = dst + t * os.h * os.w;
        for (int64_t i = 0; i < os.h * os.w; ++i) oplane[i] = static_cast<T>(plane[static_cast<size_t>(i)]);
    }
    ensure_finite(out, "bicubic_upsample");
    return out;
}

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = detail::make_output<T>(a.shape(), tape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    ensure_finite(out, "add");
    if (tape) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, n]() mutable {
            const T* g = oc.grad();
            T* ga = ac.grad();
            T* gb = bc.grad();
            for (int64_t i = 0; i < n; ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = detail::make_output<T>(a.shape(), tape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    ensure_finite(out, "mul");
    if (tape) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, n]() mutable {
            const T* g = oc.grad();
            const T* pa = ac.data();
            const T* pb = bc.data();
            T* ga = ac.grad();
            T* gb = bc.grad();
            for (int64_t i = 0; i < n; ++i) {
                ga[i] += g[i] * pb[i];
                gb[i] += g[i] * pa[i];
            }
        });
    }
    return out;
}

// Broadcast-multiply by a trainable scalar gate (a 1x1x1x1 tensor). The gate
// receives sum(x * dout) in flat index order.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& gate, Tape<T>* tape = nullptr) {
    if (gate.numel() != 1) throw shape_error("scale: gate must be a scalar tensor");
    Tensor<T> out = detail::make_output<T>(x.shape(), tape);
    const T s = gate.data()[0];
    const T* px = x.data();
    T* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = s * px[i];
    ensure_finite(out, "scale");
    if (tape) {
        Tensor<T> xc = x, gc = gate, oc = out;
        tape->record([xc, gc, oc, n]() mutable {
            const T* g = oc.grad();
            const T* px = xc.data();
            const T sv = gc.data()[0];
            T* gx = xc.grad();
            T acc = 0;
            for (int64_t i = 0; i < n; ++i) {
                gx[i] += g[i] * sv;
                acc += g[i] * px[i];
            }
            gc.grad()[0] += acc;
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T constant, Tape<T>* tape = nullptr) {
    Tensor<T> out = detail::make_output<T>(x.shape(), tape);
    const T* px = x.data();
    T* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = constant * px[i];
    ensure_finite(out, "scale");
    if (tape) {
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n, constant]() mutable {
            const T* g = oc.grad();
            T* gx = xc.grad();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * constant;
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = detail::make_output<T>(x.shape(), tape);
    const T* px = x.data();
    T* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
    if (tape) {
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            const T* g = oc.grad();
            const T* px = xc.data();
            T* gx = xc.grad();
            for (int64_t i = 0; i < n; ++i)
                if (px[i] > T(0)) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = detail::make_output<T>(x.shape(), tape);
    const T* px = x.data();
    T* po = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(px[i]);
        const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        po[i] = static_cast<T>(s);
    }
    ensure_finite(out, "sigmoid");
    if (tape) {
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            const T* g = oc.grad();
            const T* py = oc.data();
            T* gx = xc.grad();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * py[i] * (T(1) - py[i]);
        });
    }
    return out;
}

// Stacks channels in argument order; batch and spatial extents must agree.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    const Shape4 as = a.shape(), bs = b.shape();
    if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
        throw shape_error("concat_channels: batch/spatial mismatch " + as.str() + " vs " + bs.str());
    const Shape4 os{as.n, as.c + bs.c, as.h, as.w};
    Tensor<T> out = detail::make_output<T>(os, tape);
    const int64_t plane = as.h * as.w;
    for (int64_t n = 0; n < as.n; ++n) {
        std::memcpy(out.data() + n * os.c * plane, a.data() + n * as.c * plane,
                    sizeof(T) * static_cast<size_t>(as.c * plane));
        std::memcpy(out.data() + (n * os.c + as.c) * plane, b.data() + n * bs.c * plane,
                    sizeof(T) * static_cast<size_t>(bs.c * plane));
    }
    if (tape) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, as, bs, os, plane]() mutable {
            const T* g = oc.grad();
            T* ga = ac.grad();
            T* gb = bc.grad();
            for (int64_t n = 0; n < as.n; ++n) {
                const T* gn = g + n * os.c * plane;
                for (int64_t i = 0; i < as.c * plane; ++i) ga[n * as.c * plane + i] += gn[i];
                for (int64_t i = 0; i < bs.c * plane; ++i)
                    gb[n * bs.c * plane + i] += gn[as.c * plane + i];
            }
        });
    }
    return out;
}

// Reduces to a 1x1x1x1 scalar in flat index order.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out = detail::make_output<T>({1, 1, 1, 1}, tape);
    const T* px = x.data();
    T acc = 0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    out.data()[0] = acc;
    ensure_finite(out, "sum");
    if (tape) {
        Tensor<T> xc = x, oc = out;
        tape->record([xc, oc, n]() mutable {
            const T g = oc.grad()[0];
            T* gx = xc.grad();
            for (int64_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return out;
}

}  // namespace maffsrn
