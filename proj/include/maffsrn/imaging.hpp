#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "maffsrn/core.hpp"
#include "maffsrn/resample.hpp"
#include "maffsrn/tensor.hpp"

namespace maffsrn {

// 8-bit image, row-major, interleaved samples, RGB channel order.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<uint8_t> data;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c) {
        if (w < 1 || h < 1 || (c != 1 && c != 3))
            throw shape_error("image: invalid dimensions " + std::to_string(w) + "x" +
                              std::to_string(h) + "x" + std::to_string(c));
        data.assign(static_cast<size_t>(w) * h * c, 0);
    }
    uint8_t& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

// Single-channel float plane on the 0..255 sample scale.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Plane() = default;
    Plane(int w, int h) : width(w), height(h) {
        if (w < 1 || h < 1)
            throw shape_error("plane: invalid dimensions " + std::to_string(w) + "x" +
                              std::to_string(h));
        data.assign(static_cast<size_t>(w) * h, 0.0f);
    }
    float& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Half-away-from-zero rounding onto the 8-bit range.
inline uint8_t quantize_sample(double v) {
    if (v <= 0.0) return 0;
    if (v >= 255.0) return 255;
    return static_cast<uint8_t>(std::lround(v));
}

inline Image modcrop(const Image& img, int s) {
    if (s < 1) throw config_error("modcrop: scale must be >= 1");
    const int w = (img.width / s) * s;
    const int h = (img.height / s) * s;
    if (w < 1 || h < 1)
        throw shape_error("modcrop: " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " collapses at scale " + std::to_string(s));
    if (w == img.width && h == img.height) return img;
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
    return out;
}

// ITU-R BT.601 studio-swing luminance; grayscale input passes through as
// float. Output lies in [16, 235] for 8-bit RGB input.
inline Plane rgb_to_y(const Image& img) {
    Plane y(img.width, img.height);
    if (img.channels == 1) {
        for (size_t i = 0; i < img.data.size(); ++i) y.data[i] = static_cast<float>(img.data[i]);
        return y;
    }
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const double red = img.at(r, c, 0), green = img.at(r, c, 1), blue = img.at(r, c, 2);
            y.at(r, c) =
                static_cast<float>(16.0 + (65.481 * red + 128.553 * green + 24.966 * blue) / 255.0);
        }
    return y;
}

// PSNR over the interior after cropping `border` pixels per side. Identical
// inputs return +infinity.
inline double psnr(const Plane& a, const Plane& b, int border = 0) {
    if (a.width != b.width || a.height != b.height)
        throw shape_error("psnr: plane sizes differ");
    if (border < 0) throw config_error("psnr: border must be >= 0");
    const int w = a.width - 2 * border, h = a.height - 2 * border;
    if (w < 1 || h < 1) throw shape_error("psnr: border leaves an empty interior");
    double sq = 0.0;
    for (int y = border; y < a.height - border; ++y)
        for (int x = border; x < a.width - border; ++x) {
            const double d = static_cast<double>(a.at(y, x)) - b.at(y, x);
            sq += d * d;
        }
    const double mse = sq / (static_cast<double>(w) * h);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {

inline const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(11);
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5.0;
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += v[static_cast<size_t>(i)];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

// Separable 11-tap weighted sum over valid window positions only.
inline std::vector<double> ssim_filter(const std::vector<double>& src, int w, int h) {
    const auto& k = ssim_kernel();
    const int ow = w - 10, oh = h - 10;
    std::vector<double> tmp(static_cast<size_t>(ow) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += k[static_cast<size_t>(t)] * src[static_cast<size_t>(y) * w + x + t];
            tmp[static_cast<size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(ow) * oh, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += k[static_cast<size_t>(t)] * tmp[static_cast<size_t>(y + t) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace detail

// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5, K1 = 0.01,
// K2 = 0.03, L = 255) over fully-interior window positions.
inline double ssim(const Plane& a, const Plane& b) {
    if (a.width != b.width || a.height != b.height)
        throw shape_error("ssim: plane sizes differ");
    if (a.width < 11 || a.height < 11)
        throw shape_error("ssim: planes must be at least 11x11");
    const int w = a.width, h = a.height;
    const size_t n = static_cast<size_t>(w) * h;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        const double av = a.data[i], bv = b.data[i];
        x[i] = av;
        y[i] = bv;
        xx[i] = av * av;
        yy[i] = bv * bv;
        xy[i] = av * bv;
    }
    const auto mx = detail::ssim_filter(x, w, h);
    const auto my = detail::ssim_filter(y, w, h);
    const auto mxx = detail::ssim_filter(xx, w, h);
    const auto myy = detail::ssim_filter(yy, w, h);
    const auto mxy = detail::ssim_filter(xy, w, h);

    const double c1 = 6.5025, c2 = 58.5225;
    double total = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

inline Plane bicubic_resize(const Plane& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw shape_error("resize: target extents must be >= 1");
    std::vector<double> in(src.data.begin(), src.data.end());
    const auto out = resample_plane_bicubic(in.data(), src.width, src.height, out_w, out_h);
    Plane res(out_w, out_h);
    for (size_t i = 0; i < out.size(); ++i) res.data[i] = static_cast<float>(out[i]);
    return res;
}

inline Image bicubic_resize(const Image& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw shape_error("resize: target extents must be >= 1");
    Image out(out_w, out_h, src.channels);
    std::vector<double> plane(static_cast<size_t>(src.width) * src.height);
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < src.height; ++y)
            for (int x = 0; x < src.width; ++x)
                plane[static_cast<size_t>(y) * src.width + x] = src.at(y, x, c);
        const auto res = resample_plane_bicubic(plane.data(), src.width, src.height, out_w, out_h);
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x)
                out.at(y, x, c) = quantize_sample(res[static_cast<size_t>(y) * out_w + x]);
    }
    return out;
}

// --- dataset pairing, patching, augmentation ---

struct ImagePair {
    Image hr;
    Image lr;
    int scale = 1;
};

inline ImagePair make_pair(const Image& hr, int s) {
    if (s < 1) throw config_error("make_pair: scale must be >= 1");
    ImagePair p;
    p.scale = s;
    p.hr = modcrop(hr, s);
    p.lr = bicubic_resize(p.hr, p.hr.width / s, p.hr.height / s);
    return p;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
        throw shape_error("crop: window outside image");
    Image out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

// Aligned random patch pair: LR patch of lr_size with the corresponding
// lr_size*scale HR patch at (scale*x0, scale*y0).
inline ImagePair extract_patch(const ImagePair& pair, int lr_size, Rng& rng) {
    if (lr_size < 1) throw config_error("extract_patch: patch size must be >= 1");
    if (pair.lr.width < lr_size || pair.lr.height < lr_size)
        throw shape_error("extract_patch: LR image " + std::to_string(pair.lr.width) + "x" +
                          std::to_string(pair.lr.height) + " smaller than patch " +
                          std::to_string(lr_size));
    const int x0 = static_cast<int>(rng.next_index(static_cast<uint64_t>(pair.lr.width - lr_size + 1)));
    const int y0 = static_cast<int>(rng.next_index(static_cast<uint64_t>(pair.lr.height - lr_size + 1)));
    ImagePair out;
    out.scale = pair.scale;
    out.lr = crop(pair.lr, x0, y0, lr_size, lr_size);
    out.hr = crop(pair.hr, x0 * pair.scale, y0 * pair.scale, lr_size * pair.scale,
                  lr_size * pair.scale);
    return out;
}

// Quarter-turn counterclockwise.
inline Image rot90(const Image& img) {
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(x, img.width - 1 - y, c);
    return out;
}

inline Image flip_h(const Image& img) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

inline Image dihedral(const Image& img, int k) {
    Image out = img;
    for (int i = 0; i < (k & 3); ++i) out = rot90(out);
    if (k & 4) out = flip_h(out);
    return out;
}

// Applies one of the eight flip/rotation symmetries, drawn uniformly, to both
// halves of the pair.
inline ImagePair augment(const ImagePair& pair, Rng& rng) {
    const int k = static_cast<int>(rng.next_index(8));
    ImagePair out;
    out.scale = pair.scale;
    out.lr = dihedral(pair.lr, k);
    out.hr = dihedral(pair.hr, k);
    return out;
}

// --- image <-> tensor bridges (tensors hold [0,1] normalized samples) ---

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    Tensor<T> t({1, img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c) / 255.0);
    return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
    const Shape4 s = t.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3))
        throw shape_error("tensor_to_image: need shape 1x{1|3}xHxW, got " + s.str());
    Image img(static_cast<int>(s.w), static_cast<int>(s.h), static_cast<int>(s.c));
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.at(y, x, c) = quantize_sample(static_cast<double>(t.at(0, c, y, x)) * 255.0);
    return img;
}

}  // namespace maffsrn
