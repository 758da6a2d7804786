#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "maffsrn/complexity.hpp"
#include "maffsrn/model.hpp"

using namespace maffsrn;

namespace {

NetConfig tiny_config() {
    NetConfig cfg;
    cfg.scale = 2;
    cfg.n_ffg = 1;
    cfg.ffg.m = 2;
    cfg.ffg.mab.channels = 8;
    cfg.ffg.mab.reduction = 2;
    return cfg;
}

Tensor<float> random_input(Shape4 s, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t(s);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(rng.next_uniform());
    return t;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> named_params(Network<T>& net) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    visit_params(net, [&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); });
    return out;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    REQUIRE(os);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("built parameter totals equal the closed-form count") {
    for (Fusion fusion : {Fusion::HFF, Fusion::BFF, Fusion::MBFF})
        for (bool cea : {false, true})
            for (int scale : {2, 3, 4}) {
                NetConfig cfg;
                cfg.scale = scale;
                cfg.ffg.fusion = fusion;
                cfg.ffg.mab.cea_enabled = cea;
                Network<float> net = build<float>(cfg, 1);
                INFO("fusion " << fusion_name(fusion) << " cea " << cea << " scale " << scale);
                CHECK(parameter_count(net) == count_params(cfg));
            }

    SECTION("reference configuration") {
        NetConfig cfg;
        Network<float> net = build<float>(cfg, 1);
        CHECK(parameter_count(net) == 401954);
    }
}

TEST_CASE("network naming and gate bookkeeping") {
    NetConfig cfg = tiny_config();
    cfg.n_ffg = 3;
    Network<float> net = build<float>(cfg, 2);
    const auto params = named_params(net);

    CHECK(params.front().first == "sfe.weight");
    CHECK(params[1].first == "sfe.bias");
    CHECK(params[2].first == "ffg.0.mab.0.cea.pw.weight");
    CHECK(params[params.size() - 2].first == "lambda0.1");
    CHECK(params.back().first == "lambda0.2");

    bool has_recon = false;
    int64_t gates = 0;
    for (const auto& [name, t] : params) {
        if (name == "recon.k5.weight" || name == "recon.k3.weight") has_recon = true;
        if (name.find("lambda") != std::string::npos) {
            gates += t->numel();
            CHECK(t->numel() == 1);
        }
    }
    CHECK(has_recon);
    CHECK(gates == 2 * cfg.n_ffg + 2);
}

TEST_CASE("construction is deterministic in the seed") {
    NetConfig cfg = tiny_config();
    Network<float> a = build<float>(cfg, 424242);
    Network<float> b = build<float>(cfg, 424242);
    Network<float> c = build<float>(cfg, 424243);

    auto pa = named_params(a), pb = named_params(b), pc = named_params(c);
    REQUIRE(pa.size() == pb.size());
    bool same = true, all_different_equal = true;
    for (size_t i = 0; i < pa.size(); ++i) {
        same = same && bit_equal(*pa[i].second, *pb[i].second);
        all_different_equal = all_different_equal && bit_equal(*pa[i].second, *pc[i].second);
    }
    CHECK(same);
    CHECK_FALSE(all_different_equal);
}

TEST_CASE("forward pass geometry and reproducibility") {
    NetConfig cfg = tiny_config();
    cfg.scale = 3;
    Network<float> net = build<float>(cfg, 7);
    const Tensor<float> in = random_input({1, 3, 24, 16}, 9);

    Tensor<float> out1 = forward(net, in);
    const Shape4 expect{1, 3, 72, 48};
    CHECK(out1.shape() == expect);

    Tensor<float> out2 = forward(net, in);
    CHECK(bit_equal(out1, out2));

    SECTION("input contract") {
        CHECK_THROWS_AS(forward(net, random_input({1, 1, 24, 16}, 9)), shape_error);
        CHECK_THROWS_AS(forward(net, random_input({1, 3, 2, 16}, 9)), shape_error);
        Tensor<float> bad = random_input({1, 3, 8, 8}, 9);
        bad.data()[5] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(forward(net, bad), numeric_error);
    }

    SECTION("batched input gives the same per-image answer") {
        Tensor<float> two({2, 3, 24, 16});
        for (int64_t i = 0; i < in.numel(); ++i) {
            two.data()[i] = in.data()[i];
            two.data()[in.numel() + i] = in.data()[i];
        }
        Tensor<float> both = forward(net, std::move(two));
        const Shape4 pair_shape{2, 3, 72, 48};
        REQUIRE(both.shape() == pair_shape);
        for (int64_t i = 0; i < out1.numel(); ++i) {
            REQUIRE(both.data()[i] == out1.data()[i]);
            REQUIRE(both.data()[out1.numel() + i] == out1.data()[i]);
        }
    }
}

TEST_CASE("zero weights reduce the network to plain bicubic upsampling") {
    NetConfig cfg = tiny_config();
    cfg.scale = 2;
    Network<float> net = build<float>(cfg, 3);
    visit_params(net, [](const std::string& name, Tensor<float>& t) {
        if (name.find("lambda") != std::string::npos) return;  // gates stay at 1/2
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.0f;
    });

    const Tensor<float> in = random_input({1, 3, 12, 10}, 31);
    Tensor<float> out = forward(net, in);
    Tensor<float> up = bicubic_upsample(in, cfg.scale);
    CHECK(bit_equal(out, up));
}

TEST_CASE("every parameter tensor receives gradient from the output") {
    NetConfig cfg = tiny_config();
    Network<double> net = build<double>(cfg, 13);
    Rng rng(17);
    Tensor<double> in({1, 3, 10, 10});
    for (int64_t i = 0; i < in.numel(); ++i) in.data()[i] = rng.next_uniform();

    Tape<double> tape;
    Tensor<double> out = forward(net, in, &tape);
    // An uneven weighting so no path cancels out of the objective.
    Tensor<double> pattern(out.shape());
    for (int64_t i = 0; i < pattern.numel(); ++i)
        pattern.data()[i] = 0.25 + 0.5 * std::cos(0.37 * static_cast<double>(i));
    Tensor<double> loss = sum(mul(out, pattern, &tape), &tape);
    backward(tape, loss);

    int checked = 0;
    visit_params(net, [&](const std::string& name, Tensor<double>& t) {
        bool any = false;
        for (int64_t i = 0; i < t.numel() && !any; ++i)
            if (t.grad()[i] != 0.0) any = true;
        INFO("parameter " << name);
        CHECK(any);
        ++checked;
    });
    CHECK(checked >= 10);
}

TEST_CASE("checkpoint round trip preserves every bit") {
    const std::string path = "/tmp/maffsrn_ckpt_roundtrip.bin";
    NetConfig cfg = tiny_config();
    cfg.ffg.fusion = Fusion::BFF;
    Network<float> net = build<float>(cfg, 99);
    save_checkpoint(net, path);
    Network<float> back = load_checkpoint<float>(path);

    CHECK(to_json(back.cfg) == to_json(net.cfg));
    auto pa = named_params(net), pb = named_params(back);
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(bit_equal(*pa[i].second, *pb[i].second));
    }

    SECTION("restored networks run identically") {
        const Tensor<float> in = random_input({1, 3, 12, 12}, 55);
        CHECK(bit_equal(forward(net, in), forward(back, in)));
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected") {
    const std::string path = "/tmp/maffsrn_ckpt_corrupt.bin";
    NetConfig cfg = tiny_config();
    Network<float> net = build<float>(cfg, 5);
    save_checkpoint(net, path);
    const std::string good = slurp(path);

    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        spit(path, bad);
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("unsupported version") {
        std::string bad = good;
        bad[4] = 9;
        spit(path, bad);
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("truncated payload") {
        spit(path, good.substr(0, good.size() - 7));
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("truncated header") {
        spit(path, good.substr(0, 6));
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("tensor renamed to something unknown") {
        std::string bad = good;
        const size_t pos = bad.find("sfe.weight");
        REQUIRE(pos != std::string::npos);
        bad[pos] = 'z';
        spit(path, bad);
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("tensor count mismatch") {
        std::string bad = good;
        // u32 count sits after magic, version and the config blob.
        const std::string blob = to_json(net.cfg).dump();
        const size_t count_at = 4 + 4 + 4 + blob.size();
        REQUIRE(count_at + 4 <= bad.size());
        bad[count_at] = static_cast<char>(static_cast<unsigned char>(bad[count_at]) + 1);
        spit(path, bad);
        CHECK_THROWS_AS(load_checkpoint<float>(path), io_error);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_checkpoint<float>("/tmp/maffsrn_no_such_file.bin"), io_error);
    }
    std::remove(path.c_str());
}

TEST_CASE("JSON configuration") {
    SECTION("empty object takes all defaults") {
        NetConfig cfg = parse_config("{}");
        CHECK(cfg.scale == 2);
        CHECK(cfg.n_ffg == 4);
        CHECK(cfg.colors == 3);
        CHECK(cfg.ffg.m == 4);
        CHECK(cfg.ffg.fusion == Fusion::MBFF);
        CHECK(cfg.ffg.mab.channels == 32);
        CHECK(cfg.ffg.mab.reduction == 4);
        CHECK(cfg.ffg.mab.attn_stride == 3);
        CHECK(cfg.ffg.mab.cea_enabled);
        CHECK(cfg.ffg.lambda_init == 0.5);
    }

    SECTION("round trip of a non-default configuration") {
        NetConfig cfg;
        cfg.scale = 4;
        cfg.n_ffg = 8;
        cfg.colors = 1;
        cfg.ffg.fusion = Fusion::HFF;
        cfg.ffg.m = 3;
        cfg.ffg.channel_shuffle_enabled = false;
        cfg.ffg.shuffle_groups = 4;
        cfg.ffg.lambda_init = 0.25;
        cfg.ffg.mab.channels = 16;
        cfg.ffg.mab.reduction = 2;
        cfg.ffg.mab.dilations = {1, 2, 3};
        cfg.ffg.mab.branch_kernels = {3, 3, 5};
        cfg.ffg.mab.cea_enabled = false;
        NetConfig back = config_from_json(to_json(cfg));
        CHECK(to_json(back) == to_json(cfg));
    }

    SECTION("rejections") {
        CHECK_THROWS_AS(parse_config("not json"), config_error);
        CHECK_THROWS_AS(parse_config("[1,2]"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"scale": "two"})"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"scale": 5})"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"fusion": "pyramid"})"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"fusion": "bff", "m_mab": 3})"), config_error);
        CHECK_THROWS_AS(parse_config(R"({"channels": 32, "reduction": 5})"), config_error);
    }
}
