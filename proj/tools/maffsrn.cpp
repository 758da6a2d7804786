// maffsrn command-line tool.
//
// Subcommands: analyze, degrade, sr, eval, train, gradcheck. Machine-readable
// JSON result blocks go to stdout; human-readable logs and timing go to
// stderr. Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 numeric failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "maffsrn/maffsrn.hpp"

namespace {

using namespace maffsrn;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Config files are optional everywhere; an empty path means paper defaults.
NetConfig load_config(const std::string& path) {
    if (path.empty()) return NetConfig{};
    std::string text;
    try {
        text = read_file(path);
    } catch (const io_error& e) {
        throw config_error(e.what());
    }
    return parse_config(text);
}

std::pair<int64_t, int64_t> parse_wxh(const std::string& s) {
    const size_t pos = s.find('x');
    int64_t w = 0, h = 0;
    try {
        if (pos == std::string::npos) throw std::invalid_argument("no separator");
        size_t used = 0;
        w = std::stoll(s.substr(0, pos), &used);
        if (used != pos) throw std::invalid_argument("trailing characters");
        const std::string rest = s.substr(pos + 1);
        h = std::stoll(rest, &used);
        if (used != rest.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
        throw config_error("--hr expects WxH, got '" + s + "'");
    }
    if (w < 1 || h < 1) throw config_error("--hr extents must be positive");
    return {w, h};
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

// PSNR can be +inf (identical planes); JSON has no inf literal.
nlohmann::json metric_json(double v) {
    if (std::isfinite(v)) return v;
    return "inf";
}

std::vector<std::string> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw io_error(dir + " is not a directory");
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png") out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw io_error("no PNG images in " + dir);
    return out;
}

Plane crop_border(const Plane& p, int border) {
    if (border == 0) return p;
    if (p.width <= 2 * border || p.height <= 2 * border)
        throw shape_error("border " + std::to_string(border) + " swallows a " +
                          std::to_string(p.width) + "x" + std::to_string(p.height) + " plane");
    Plane out(p.width - 2 * border, p.height - 2 * border);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(y, x) = p.at(y + border, x + border);
    return out;
}

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

// Runs one HR image through degrade -> network -> 8-bit quantization and
// scores the luminance plane against the modcropped original.
EvalRow eval_one(const Network<float>& net, const Image& hr, const std::string& name,
                 int border) {
    ImagePair pair = make_pair(hr, net.cfg.scale);
    Tensor<float> x = image_to_tensor<float>(pair.lr);
    Tensor<float> y = forward(net, std::move(x));
    const Image sr = tensor_to_image(y);
    const Plane ya = rgb_to_y(pair.hr);
    const Plane yb = rgb_to_y(sr);
    EvalRow row;
    row.name = name;
    row.psnr = psnr(ya, yb, border);
    row.ssim = ssim(crop_border(ya, border), crop_border(yb, border));
    return row;
}

int cmd_analyze(const std::string& config_path, const std::string& hr_spec) {
    const NetConfig cfg = load_config(config_path);
    auto [w, h] = parse_wxh(hr_spec);
    // The LR grid must be exact; quote the report at the modcropped frame.
    const int64_t eff_w = w - w % cfg.scale;
    const int64_t eff_h = h - h % cfg.scale;
    if (eff_w != w || eff_h != h)
        std::cerr << "analyze: HR " << w << "x" << h << " modcropped to " << eff_w << "x"
                  << eff_h << " for scale " << cfg.scale << "\n";
    const ComplexityReport rep = analyze(cfg, eff_h, eff_w);
    nlohmann::json j = to_json(rep);
    j["command"] = "analyze";
    j["config"] = to_json(cfg);
    print_json(j);
    return 0;
}

int cmd_degrade(const std::string& input, int scale, const std::string& output) {
    const Image hr = png_read(input);
    const ImagePair pair = make_pair(hr, scale);
    png_write(output, pair.lr);
    nlohmann::json j;
    j["command"] = "degrade";
    j["input"] = input;
    j["output"] = output;
    j["scale"] = scale;
    j["hr"] = {{"width", pair.hr.width}, {"height", pair.hr.height}};
    j["lr"] = {{"width", pair.lr.width}, {"height", pair.lr.height}};
    print_json(j);
    return 0;
}

int cmd_sr(const std::string& ckpt, const std::string& input, const std::string& output) {
    Network<float> net = load_checkpoint<float>(ckpt);
    const Image lr = png_read(input);
    if (lr.channels != net.cfg.colors)
        throw shape_error("sr: input has " + std::to_string(lr.channels) +
                          " channel(s), network expects " + std::to_string(net.cfg.colors));
    Tensor<float> x = image_to_tensor<float>(lr);
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<float> y = forward(net, std::move(x));
    const auto t1 = std::chrono::steady_clock::now();
    const Image sr = tensor_to_image(y);
    png_write(output, sr);
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    std::cerr << "sr: " << lr.width << "x" << lr.height << " -> " << sr.width << "x"
              << sr.height << " in " << std::fixed << std::setprecision(1) << ms << " ms\n";
    nlohmann::json j;
    j["command"] = "sr";
    j["input"] = input;
    j["output"] = output;
    j["scale"] = net.cfg.scale;
    j["input_size"] = {{"width", lr.width}, {"height", lr.height}};
    j["output_size"] = {{"width", sr.width}, {"height", sr.height}};
    print_json(j);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& hr_dir, int scale, int border) {
    Network<float> net = load_checkpoint<float>(ckpt);
    if (scale != 0 && scale != net.cfg.scale)
        throw config_error("eval: --scale " + std::to_string(scale) +
                           " does not match checkpoint scale " +
                           std::to_string(net.cfg.scale));
    if (border < 0) throw config_error("eval: --border must be >= 0");
    const std::vector<std::string> paths = list_pngs(hr_dir);

    std::vector<EvalRow> rows;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& path : paths) {
        const Image hr = png_read(path);
        EvalRow row = eval_one(net, hr, fs::path(path).filename().string(), border);
        std::cerr << "eval: " << row.name << " psnr " << row.psnr << " ssim " << row.ssim
                  << "\n";
        psnr_sum += row.psnr;
        ssim_sum += row.ssim;
        rows.push_back(std::move(row));
    }

    nlohmann::json images = nlohmann::json::array();
    for (const auto& row : rows)
        images.push_back(
            {{"name", row.name}, {"psnr", metric_json(row.psnr)}, {"ssim", row.ssim}});
    nlohmann::json j;
    j["command"] = "eval";
    j["scale"] = net.cfg.scale;
    j["border"] = border;
    j["images"] = std::move(images);
    j["mean"] = {{"psnr", metric_json(psnr_sum / static_cast<double>(rows.size()))},
                 {"ssim", ssim_sum / static_cast<double>(rows.size())}};
    print_json(j);
    return 0;
}

// Smooth deterministic target for the smoke run: the bicubic skip path almost
// reproduces it, so the trainable residual is the dominant initial error.
Image smoke_image(int size) {
    Image img(size, size, 3);
    constexpr double kPi = 3.14159265358979323846;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) {
                const double phase = 0.5 * kPi * c;
                const double v = 0.5 + 0.35 * std::sin(2.0 * kPi * x / 32.0 + phase) *
                                           std::cos(2.0 * kPi * y / 32.0);
                img.at(y, x, c) = quantize_sample(255.0 * v);
            }
    return img;
}

struct TrainFlags {
    std::string config_path;
    std::string data_dir;
    std::string val_dir;
    std::string out = "maffsrn.ckpt";
    std::string curve_path;
    int epochs = 1000;
    int batch = 16;
    int patch = 48;
    double lr0 = 2e-4;
    std::string optimizer = "adamp";
    std::string loss = "l1";
    int checkpoint_every = 0;
    uint64_t seed = 0;
    bool smoke = false;
};

int cmd_train(const TrainFlags& f) {
    NetConfig net_cfg = load_config(f.config_path);
    TrainConfig tc;
    tc.lr0 = f.lr0;
    tc.batch = f.batch;
    tc.patch = f.patch;
    tc.epochs = f.epochs;
    tc.optimizer = f.optimizer;
    tc.loss = f.loss;
    tc.seed = f.seed;

    std::vector<ImagePair> data;
    if (f.smoke) {
        // Single-patch overfit: tiny net, one deterministic pair, plain Adam,
        // 200 iterations at the paper's initial learning rate.
        net_cfg = NetConfig{};
        net_cfg.scale = 2;
        net_cfg.n_ffg = 1;
        net_cfg.ffg.m = 2;
        net_cfg.ffg.mab.channels = 8;
        net_cfg.ffg.mab.reduction = 4;
        tc = TrainConfig{};
        tc.batch = 1;
        tc.patch = 48;
        tc.epochs = 200;
        tc.optimizer = "adam";
        tc.loss = "l1";
        tc.seed = f.seed;
        data.push_back(make_pair(smoke_image(96), net_cfg.scale));
    } else {
        if (f.data_dir.empty()) throw config_error("train: --data-dir is required");
        for (const auto& path : list_pngs(f.data_dir))
            data.push_back(make_pair(png_read(path), net_cfg.scale));
    }

    std::vector<std::pair<std::string, Image>> val;
    if (!f.val_dir.empty() && !f.smoke)
        for (const auto& path : list_pngs(f.val_dir))
            val.emplace_back(fs::path(path).filename().string(), png_read(path));

    std::ofstream curve;
    if (!f.curve_path.empty()) {
        curve.open(f.curve_path, std::ios::binary);
        if (!curve) throw io_error("cannot write " + f.curve_path);
        curve << "epoch,lr,loss\n";
    }

    Network<float> net = build<float>(net_cfg, f.seed);
    double best_val = -1.0;
    std::string selection = val.empty() ? "final" : "best-val-psnr";

    auto val_psnr = [&]() {
        double sum = 0.0;
        for (const auto& [name, img] : val) sum += eval_one(net, img, name, net_cfg.scale).psnr;
        return sum / static_cast<double>(val.size());
    };
    auto maybe_select = [&](int epoch) {
        if (f.checkpoint_every > 0) {
            const std::string path = f.out + ".epoch" + std::to_string(epoch + 1);
            save_checkpoint(net, path);
            std::cerr << "train: wrote " << path << "\n";
        }
        if (!val.empty()) {
            const double v = val_psnr();
            std::cerr << "train: epoch " << epoch << " val psnr " << v << "\n";
            if (v > best_val) {
                best_val = v;
                save_checkpoint(net, f.out);
            }
        }
    };

    const auto reporter = [&](const EpochStats& s) {
        if (curve.is_open())
            curve << s.epoch << ',' << std::setprecision(17) << s.lr << ',' << s.mean_loss
                  << '\n';
        std::cerr << "train: epoch " << s.epoch << " lr " << s.lr << " loss " << s.mean_loss
                  << "\n";
        if (f.checkpoint_every > 0 && (s.epoch + 1) % f.checkpoint_every == 0)
            maybe_select(s.epoch);
    };

    const std::vector<EpochStats> stats = train(net, data, tc, reporter);
    if (val.empty()) {
        save_checkpoint(net, f.out);
    } else if (f.checkpoint_every <= 0 || tc.epochs % f.checkpoint_every != 0) {
        maybe_select(tc.epochs - 1);
    }

    const double initial = stats.front().mean_loss;
    const double final_loss = stats.back().mean_loss;
    nlohmann::json j;
    j["command"] = "train";
    j["smoke"] = f.smoke;
    j["epochs"] = tc.epochs;
    j["optimizer"] = tc.optimizer;
    j["loss"] = tc.loss;
    j["initial_loss"] = initial;
    j["final_loss"] = final_loss;
    j["checkpoint"] = f.out;
    j["selection"] = selection;
    if (!val.empty()) j["best_val_psnr"] = metric_json(best_val);
    if (f.smoke) {
        const bool passed = final_loss <= 0.5 * initial;
        j["drop_ratio"] = final_loss / initial;
        j["passed"] = passed;
        print_json(j);
        if (!passed)
            throw numeric_error("smoke: final loss " + std::to_string(final_loss) +
                                " did not reach 50% of initial " + std::to_string(initial));
        return 0;
    }
    print_json(j);
    return 0;
}

int cmd_gradcheck(const std::string& config_path, int samples, double eps, double tol,
                  uint64_t seed) {
    NetConfig cfg;
    if (config_path.empty()) {
        cfg.scale = 2;
        cfg.n_ffg = 1;
        cfg.ffg.m = 2;
        cfg.ffg.mab.channels = 8;
        cfg.ffg.mab.reduction = 4;
    } else {
        cfg = load_config(config_path);
    }
    const GradcheckReport rep =
        gradcheck_network(cfg, {1, cfg.colors, 9, 9}, samples, eps, seed);
    const bool passed = rep.max_rel_error < tol;
    nlohmann::json j;
    j["command"] = "gradcheck";
    j["checked"] = rep.checked;
    j["max_rel_error"] = rep.max_rel_error;
    j["worst_param"] = rep.worst_param;
    j["tolerance"] = tol;
    j["passed"] = passed;
    print_json(j);
    if (!passed)
        throw numeric_error("gradcheck: max relative error " +
                            std::to_string(rep.max_rel_error) + " exceeds " +
                            std::to_string(tol));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"maffsrn: lightweight single-image super-resolution toolkit"};
    app.require_subcommand(1);

    std::string an_config, an_hr = "1280x720";
    auto* an = app.add_subcommand("analyze", "Report parameters, multi-adds and peak memory");
    an->add_option("--config", an_config, "network config JSON (defaults when omitted)");
    an->add_option("--hr", an_hr, "HR frame as WxH")->capture_default_str();

    std::string dg_input, dg_output;
    int dg_scale = 0;
    auto* dg = app.add_subcommand("degrade", "Modcrop and bicubic-downscale an image");
    dg->add_option("--input", dg_input, "HR PNG")->required();
    dg->add_option("--scale", dg_scale, "downscale factor")->required()->check(CLI::PositiveNumber);
    dg->add_option("--output", dg_output, "LR PNG destination")->required();

    std::string sr_ckpt, sr_input, sr_output;
    auto* sr = app.add_subcommand("sr", "Super-resolve an image with a trained checkpoint");
    sr->add_option("--ckpt", sr_ckpt, "checkpoint path")->required();
    sr->add_option("--input", sr_input, "LR PNG")->required();
    sr->add_option("--output", sr_output, "SR PNG destination")->required();

    std::string ev_ckpt, ev_dir;
    int ev_scale = 0, ev_border = 0;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a directory of HR images");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--hr-dir", ev_dir, "directory of HR PNGs")->required();
    ev->add_option("--scale", ev_scale, "expected scale (must match the checkpoint)");
    ev->add_option("--border", ev_border, "pixels cropped from each side before scoring")->capture_default_str();

    TrainFlags tf;
    auto* tr = app.add_subcommand("train", "Train a network on a directory of HR images");
    tr->add_option("--config", tf.config_path, "network config JSON");
    tr->add_option("--data-dir", tf.data_dir, "directory of HR PNGs");
    tr->add_option("--val-dir", tf.val_dir, "validation HR PNGs for best-model selection");
    tr->add_option("--out", tf.out, "checkpoint destination")->capture_default_str();
    tr->add_option("--curve", tf.curve_path, "loss-curve CSV destination (epoch,lr,loss)");
    tr->add_option("--epochs", tf.epochs, "training epochs")->capture_default_str();
    tr->add_option("--batch", tf.batch, "batch size")->capture_default_str();
    tr->add_option("--patch", tf.patch, "LR patch size")->capture_default_str();
    tr->add_option("--lr0", tf.lr0, "initial learning rate")->capture_default_str();
    tr->add_option("--optimizer", tf.optimizer, "adam | adamp")->capture_default_str();
    tr->add_option("--loss", tf.loss, "l1 | l2")->capture_default_str();
    tr->add_option("--checkpoint-every", tf.checkpoint_every,
                   "write a checkpoint every K epochs (0 = final only)")
        ->capture_default_str();
    tr->add_option("--seed", tf.seed, "RNG seed")->capture_default_str();
    tr->add_flag("--smoke", tf.smoke, "run the single-patch overfit check and exit");

    std::string gc_config;
    int gc_samples = 60;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    uint64_t gc_seed = 3;
    auto* gc = app.add_subcommand("gradcheck",
                                  "Compare tape gradients against finite differences");
    gc->add_option("--config", gc_config, "network config JSON (tiny default when omitted)");
    gc->add_option("--samples", gc_samples, "parameter elements to probe")->capture_default_str();
    gc->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
    gc->add_option("--tol", gc_tol, "max relative error allowed")->capture_default_str();
    gc->add_option("--seed", gc_seed, "RNG seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (an->parsed()) return cmd_analyze(an_config, an_hr);
        if (dg->parsed()) return cmd_degrade(dg_input, dg_scale, dg_output);
        if (sr->parsed()) return cmd_sr(sr_ckpt, sr_input, sr_output);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_dir, ev_scale, ev_border);
        if (tr->parsed()) return cmd_train(tf);
        if (gc->parsed()) return cmd_gradcheck(gc_config, gc_samples, gc_eps, gc_tol, gc_seed);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
