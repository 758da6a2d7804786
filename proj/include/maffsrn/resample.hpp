#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "maffsrn/core.hpp"

namespace maffsrn {

// Keys cubic kernel, a = -0.5.
inline double keys_cubic(double x) {
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

// One output sample as a weighted sum of input samples. Indices are already
// clamped into range (edge replication) and weights are normalized to sum 1,
// so constants map to constants and out==in is the exact identity.
struct ResampleTap {
    std::vector<int> index;
    std::vector<double> weight;
};

// Builds the 1-D bicubic sampling plan with half-pixel centers. When
// downscaling the kernel support is widened by the inverse scale factor,
// which is what antialiased bicubic degradation means.
inline std::vector<ResampleTap> cubic_taps(int in_size, int out_size) {
    std::vector<ResampleTap> taps(static_cast<size_t>(out_size));
    const double ratio = static_cast<double>(out_size) / static_cast<double>(in_size);
    const double kscale = ratio < 1.0 ? ratio : 1.0;
    const double radius = 2.0 / kscale;

    for (int i = 0; i < out_size; ++i) {
        const double center = (i + 0.5) / ratio - 0.5;
        const int lo = static_cast<int>(std::ceil(center - radius));
        const int hi = static_cast<int>(std::floor(center + radius));
        ResampleTap& t = taps[static_cast<size_t>(i)];
        double wsum = 0.0;
        for (int j = lo; j <= hi; ++j) {
            double w = keys_cubic((j - center) * kscale);
            if (w == 0.0) continue;
            int idx = j < 0 ? 0 : (j >= in_size ? in_size - 1 : j);
            t.index.push_back(idx);
            t.weight.push_back(w);
            wsum += w;
        }
        if (t.index.empty()) {  // degenerate kernel placement, fall back to nearest
            int idx = static_cast<int>(center + 0.5);
            t.index.push_back(idx < 0 ? 0 : (idx >= in_size ? in_size - 1 : idx));
            t.weight.push_back(1.0);
            wsum = 1.0;
        }
        for (double& w : t.weight) w /= wsum;
    }
    return taps;
}

// Resamples one row-major plane horizontally then vertically, in double
// precision throughout.
template <typename T>
std::vector<double> resample_plane_bicubic(const T* src, int in_w, int in_h, int out_w, int out_h) {
    const auto hx = cubic_taps(in_w, out_w);
    const auto vy = cubic_taps(in_h, out_h);

    std::vector<double> rows(static_cast<size_t>(in_h) * out_w);
    for (int y = 0; y < in_h; ++y) {
        const T* srow = src + static_cast<int64_t>(y) * in_w;
        double* drow = rows.data() + static_cast<int64_t>(y) * out_w;
        for (int x = 0; x < out_w; ++x) {
            const ResampleTap& t = hx[static_cast<size_t>(x)];
            double acc = 0.0;
            for (size_t k = 0; k < t.index.size(); ++k)
                acc += t.weight[k] * static_cast<double>(srow[t.index[k]]);
            drow[x] = acc;
        }
    }

    std::vector<double> out(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        const ResampleTap& t = vy[static_cast<size_t>(y)];
        double* drow = out.data() + static_cast<int64_t>(y) * out_w;
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (size_t k = 0; k < t.index.size(); ++k)
                acc += t.weight[k] * rows[static_cast<size_t>(t.index[k]) * out_w + x];
            drow[x] = acc;
        }
    }
    return out;
}

}  // namespace maffsrn
