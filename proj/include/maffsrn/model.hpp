#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "maffsrn/blocks.hpp"

namespace maffsrn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

// Top-level architecture description. The flat JSON form uses the keys:
// scale, n_ffg, m_mab, channels, reduction, attn_stride, dilations,
// branch_kernels, body_convs, cea_enabled, dw_kernel, fusion,
// channel_shuffle, shuffle_groups, lambda_init, colors. Missing keys take
// the defaults below.
struct NetConfig {
    int scale = 2;
    int n_ffg = 4;
    int colors = 3;
    FfgConfig ffg;
    // Reconstruction kernels are architecturally fixed at 5 and 3.
    static constexpr int recon_k5 = 5;
    static constexpr int recon_k3 = 3;

    int channels() const { return ffg.mab.channels; }

    void validate() const {
        if (scale < 2 || scale > 4) throw config_error("net: scale must be 2, 3 or 4");
        if (n_ffg < 1) throw config_error("net: n_ffg must be >= 1");
        if (colors < 1) throw config_error("net: colors must be >= 1");
        ffg.validate();
    }
};

inline nlohmann::json to_json(const NetConfig& cfg) {
    nlohmann::json j;
    j["scale"] = cfg.scale;
    j["n_ffg"] = cfg.n_ffg;
    j["m_mab"] = cfg.ffg.m;
    j["channels"] = cfg.ffg.mab.channels;
    j["reduction"] = cfg.ffg.mab.reduction;
    j["attn_stride"] = cfg.ffg.mab.attn_stride;
    j["dilations"] = cfg.ffg.mab.dilations;
    j["branch_kernels"] = cfg.ffg.mab.branch_kernels;
    j["body_convs"] = cfg.ffg.mab.body_convs;
    j["cea_enabled"] = cfg.ffg.mab.cea_enabled;
    j["dw_kernel"] = cfg.ffg.mab.dw_kernel;
    j["fusion"] = fusion_name(cfg.ffg.fusion);
    j["channel_shuffle"] = cfg.ffg.channel_shuffle_enabled;
    j["shuffle_groups"] = cfg.ffg.shuffle_groups;
    j["lambda_init"] = cfg.ffg.lambda_init;
    j["colors"] = cfg.colors;
    return j;
}

inline NetConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw config_error("config: top-level JSON value must be an object");
    static const std::vector<std::string> known = {
        "scale",      "n_ffg",       "m_mab",          "channels",
        "reduction",  "attn_stride", "dilations",      "branch_kernels",
        "body_convs", "cea_enabled", "dw_kernel",      "fusion",
        "channel_shuffle", "shuffle_groups", "lambda_init", "colors"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw config_error("config: unknown key '" + it.key() + "'");
    }
    NetConfig cfg;
    try {
        if (j.contains("scale")) cfg.scale = j["scale"].get<int>();
        if (j.contains("n_ffg")) cfg.n_ffg = j["n_ffg"].get<int>();
        if (j.contains("colors")) cfg.colors = j["colors"].get<int>();
        if (j.contains("m_mab")) cfg.ffg.m = j["m_mab"].get<int>();
        if (j.contains("fusion")) cfg.ffg.fusion = fusion_from_name(j["fusion"].get<std::string>());
        if (j.contains("channel_shuffle"))
            cfg.ffg.channel_shuffle_enabled = j["channel_shuffle"].get<bool>();
        if (j.contains("shuffle_groups")) cfg.ffg.shuffle_groups = j["shuffle_groups"].get<int>();
        if (j.contains("lambda_init")) cfg.ffg.lambda_init = j["lambda_init"].get<double>();
        if (j.contains("channels")) cfg.ffg.mab.channels = j["channels"].get<int>();
        if (j.contains("reduction")) cfg.ffg.mab.reduction = j["reduction"].get<int>();
        if (j.contains("attn_stride")) cfg.ffg.mab.attn_stride = j["attn_stride"].get<int>();
        if (j.contains("dilations")) cfg.ffg.mab.dilations = j["dilations"].get<std::vector<int>>();
        if (j.contains("branch_kernels"))
            cfg.ffg.mab.branch_kernels = j["branch_kernels"].get<std::vector<int>>();
        if (j.contains("body_convs")) cfg.ffg.mab.body_convs = j["body_convs"].get<int>();
        if (j.contains("cea_enabled")) cfg.ffg.mab.cea_enabled = j["cea_enabled"].get<bool>();
        if (j.contains("dw_kernel")) cfg.ffg.mab.dw_kernel = j["dw_kernel"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline NetConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

template <typename T>
struct Network {
    NetConfig cfg;
    ConvLayer<T> sfe;
    std::vector<FfgParams<T>> ffgs;
    ConvLayer<T> recon_k5;
    ConvLayer<T> recon_k3;
    Tensor<T> lambda0_1;
    Tensor<T> lambda0_2;
};

// Deterministic construction: parameter tensors are drawn from a single
// seeded stream in declaration order.
template <typename T>
Network<T> build(const NetConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Network<T> net;
    net.cfg = cfg;
    const int c = cfg.channels();
    net.sfe = make_conv_square<T>(cfg.colors, c, 3, rng);
    for (int i = 0; i < cfg.n_ffg; ++i) net.ffgs.push_back(make_ffg<T>(cfg.ffg, rng));
    const int out_c = cfg.colors * cfg.scale * cfg.scale;
    net.recon_k5 = make_conv_square<T>(c, out_c, NetConfig::recon_k5, rng);
    net.recon_k3 = make_conv_square<T>(c, out_c, NetConfig::recon_k3, rng);
    net.lambda0_1 = Tensor<T>::scalar(static_cast<T>(cfg.ffg.lambda_init));
    net.lambda0_2 = Tensor<T>::scalar(static_cast<T>(cfg.ffg.lambda_init));
    return net;
}

// Fixed traversal order; checkpoints and optimizer state follow it.
template <typename T, typename F>
void visit_params(Network<T>& net, F&& f) {
    visit_params(net.sfe, "sfe", f);
    for (size_t i = 0; i < net.ffgs.size(); ++i)
        visit_params(net.ffgs[i], net.cfg.ffg, "ffg." + std::to_string(i), f);
    visit_params(net.recon_k5, "recon.k5", f);
    visit_params(net.recon_k3, "recon.k3", f);
    f("lambda0.1", net.lambda0_1);
    f("lambda0.2", net.lambda0_2);
}

template <typename T>
int64_t parameter_count(Network<T>& net) {
    int64_t total = 0;
    visit_params(net, [&](const std::string&, Tensor<T>& t) { total += t.numel(); });
    return total;
}

// Whole-network forward. The input is consumed (pass by move for exact
// activation-memory accounting); the skip path is upsampled first, then the
// convolutional trunk runs and both reconstruction branches are shuffled to
// HR and summed with it.
template <typename T>
Tensor<T> forward(const Network<T>& net, Tensor<T> lr, Tape<T>* tape = nullptr) {
    const NetConfig& cfg = net.cfg;
    const Shape4 is = lr.shape();
    if (is.c != cfg.colors)
        throw shape_error("forward: input has " + std::to_string(is.c) + " channels, net expects " +
                          std::to_string(cfg.colors));
    if (is.h < 3 || is.w < 3)
        throw shape_error("forward: spatial extents must be >= 3, got " + is.str());
    ensure_finite(lr, "forward input");

    Tensor<T> up = bicubic_upsample(lr, cfg.scale);
    Tensor<T> x = net.sfe(lr, tape);
    lr.reset();
    for (const auto& ffg : net.ffgs) x = ffg_forward(std::move(x), ffg, cfg.ffg, tape);

    Tensor<T> c5 = net.recon_k5(x, tape);
    Tensor<T> g5 = scale(c5, net.lambda0_1, tape);
    c5.reset();
    Tensor<T> p5 = pixel_shuffle(g5, cfg.scale, tape);
    g5.reset();
    Tensor<T> c3 = net.recon_k3(x, tape);
    x.reset();
    Tensor<T> g3 = scale(c3, net.lambda0_2, tape);
    c3.reset();
    Tensor<T> p3 = pixel_shuffle(g3, cfg.scale, tape);
    g3.reset();
    Tensor<T> s = add(p5, p3, tape);
    p5.reset();
    p3.reset();
    return add(s, up, tape);
}

// --- Checkpoint format ---
// Little-endian binary: magic "MAFW"; version u32 = 1; u32 config-blob
// length + UTF-8 JSON config; u32 tensor count; then per tensor: u16 name
// length + name, u8 ndim, ndim u32 extents, float32 payload row-major.
// Weights are rank 4; biases and scalar gates are rank 1.

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename U>
void write_pod(std::ostream& os, U v) {
    write_bytes(os, &v, sizeof(U));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw io_error(std::string("checkpoint truncated while reading ") + what);
}

template <typename U>
U read_pod(std::istream& is, const char* what) {
    U v;
    read_bytes(is, &v, sizeof(U), what);
    return v;
}

// Logical serialized rank: weights keep all four extents; biases and scalar
// gates are one-dimensional.
inline std::vector<uint32_t> logical_extents(const std::string& name, Shape4 s) {
    const bool rank1 = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    const bool gate = name.find("lambda") != std::string::npos;
    if (rank1 || gate) return {static_cast<uint32_t>(s.n)};
    return {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c), static_cast<uint32_t>(s.h),
            static_cast<uint32_t>(s.w)};
}

}  // namespace detail

template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path + "' for writing");

    detail::write_bytes(os, "MAFW", 4);
    detail::write_pod<uint32_t>(os, 1);
    const std::string blob = to_json(net.cfg).dump();
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(blob.size()));
    detail::write_bytes(os, blob.data(), blob.size());

    uint32_t count = 0;
    visit_params(net, [&](const std::string&, Tensor<T>&) { ++count; });
    detail::write_pod<uint32_t>(os, count);

    visit_params(net, [&](const std::string& name, Tensor<T>& t) {
        detail::write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
        detail::write_bytes(os, name.data(), name.size());
        const auto ext = detail::logical_extents(name, t.shape());
        detail::write_pod<uint8_t>(os, static_cast<uint8_t>(ext.size()));
        for (uint32_t e : ext) detail::write_pod<uint32_t>(os, e);
        for (int64_t i = 0; i < t.numel(); ++i)
            detail::write_pod<float>(os, static_cast<float>(t.data()[i]));
    });
    if (!os) throw io_error("write failed for '" + path + "'");
}

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path + "' for reading");

    char magic[4];
    detail::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "MAFW")
        throw io_error("not a checkpoint file: bad magic bytes");
    const uint32_t version = detail::read_pod<uint32_t>(is, "version");
    if (version != 1)
        throw io_error("unsupported checkpoint version " + std::to_string(version));

    const uint32_t blob_len = detail::read_pod<uint32_t>(is, "config length");
    std::string blob(blob_len, '\0');
    detail::read_bytes(is, blob.data(), blob_len, "config blob");
    const NetConfig cfg = parse_config(blob);

    Network<T> net = build<T>(cfg, 0);
    std::map<std::string, Tensor<T>*> by_name;
    visit_params(net, [&](const std::string& name, Tensor<T>& t) {
        if (!by_name.emplace(name, &t).second)
            throw io_error("duplicate parameter name '" + name + "' in network");
    });

    const uint32_t count = detail::read_pod<uint32_t>(is, "tensor count");
    if (count != by_name.size())
        throw io_error("checkpoint holds " + std::to_string(count) + " tensors, network needs " +
                       std::to_string(by_name.size()));

    std::map<std::string, bool> seen;
    for (uint32_t k = 0; k < count; ++k) {
        const uint16_t name_len = detail::read_pod<uint16_t>(is, "name length");
        std::string name(name_len, '\0');
        detail::read_bytes(is, name.data(), name_len, "name");
        if (!seen.emplace(name, true).second)
            throw io_error("duplicate tensor '" + name + "' in checkpoint");
        auto it = by_name.find(name);
        if (it == by_name.end()) throw io_error("unknown tensor '" + name + "' in checkpoint");
        Tensor<T>& t = *it->second;

        const uint8_t ndim = detail::read_pod<uint8_t>(is, "rank");
        std::vector<uint32_t> ext(ndim);
        for (auto& e : ext) e = detail::read_pod<uint32_t>(is, "extent");
        const auto expect = detail::logical_extents(name, t.shape());
        if (ext != expect)
            throw io_error("tensor '" + name + "' has mismatched extents in checkpoint");

        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<T>(detail::read_pod<float>(is, "payload"));
    }
    return net;
}

}  // namespace maffsrn
