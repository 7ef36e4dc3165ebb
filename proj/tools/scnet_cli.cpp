// scnet: super-resolve, evaluate, train, count and benchmark shift-conv SR models.
//
// Exit codes: 0 ok, 2 bad arguments / config, 3 file or checkpoint I/O,
// 4 shape or numeric failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "scnet/accounting.hpp"
#include "scnet/bench.hpp"
#include "scnet/checkpoint.hpp"
#include "scnet/error.hpp"
#include "scnet/image_io.hpp"
#include "scnet/metrics.hpp"
#include "scnet/model.hpp"
#include "scnet/parallel.hpp"
#include "scnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace scnet;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::vector<std::string> kImplNames = {"naive", "fused"};

std::vector<std::string> names_of(const auto& all) {
    std::vector<std::string> out;
    for (auto v : all) out.emplace_back(to_string(v));
    return out;
}

void require_finite(const Tensor<float>& t, const std::string& what) {
    for (float v : t.values())
        if (!std::isfinite(v)) throw NumericError(what + " contains non-finite values");
}

// Flags shared by every subcommand that builds a model from scratch.
struct ArchFlags {
    std::size_t blocks = 16, dim = 64, scale = 4;
    std::string preset = "Shift8", recon = "pixelshuffle", attention = "none";

    void add(CLI::App* app, bool required) {
        app->add_option("--blocks", blocks, "number of SC residual blocks")->required(required);
        app->add_option("--dim", dim, "feature channels")->required(required);
        app->add_option("--scale", scale, "upscaling factor (2, 3, 4, 8)")->required(required);
        app->add_option("--preset", preset, "shift step preset")->check(CLI::IsMember(names_of(kAllPresets)));
        app->add_option("--recon", recon, "reconstruction head")->check(CLI::IsMember(names_of(kAllRecon)));
        app->add_option("--attention", attention, "block attention")->check(CLI::IsMember(names_of(kAllAttention)));
    }

    ModelConfig config() const {
        ModelConfig c{blocks, dim, scale, parse_step_preset(preset), parse_recon(recon), parse_attention(attention)};
        c.validate_layout();
        return c;
    }
};

int run_sr(const std::string& model_path, const std::string& input, const std::string& output, const std::string& impl) {
    const Model<float> model = read_checkpoint(model_path);
    const Tensor<float> lr = load_image(input);
    const Tensor<float> sr = forward(model, lr, parse_sc_impl(impl));
    require_finite(sr, "SR output");
    save_image(sr, output);
    return kOk;
}

int run_eval(const std::string& model_path, const std::string& hr_dir, int crop_flag) {
    const Model<float> model = read_checkpoint(model_path);
    const std::size_t s = model.config.scale;
    const std::size_t border = crop_flag < 0 ? s : static_cast<std::size_t>(crop_flag);
    const auto files = list_images(hr_dir);
    if (files.empty()) throw IoError("no images in '" + hr_dir + "'");

    std::printf("filename,psnr_db,ssim\n");
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& path : files) {
        const Tensor<float> full = load_image(path);
        const std::size_t h = full.height() / s * s, w = full.width() / s * s;
        if (h == 0 || w == 0) throw ShapeError("'" + path.string() + "' is smaller than the scale factor");
        const Tensor<float> hr = crop(full, 0, 0, h, w);
        const Tensor<float> sr = forward(model, degrade(hr, s));
        require_finite(sr, "SR output for '" + path.filename().string() + "'");
        const QualityScore q = evaluate_pair(sr, hr, border);
        std::printf("%s,%.4f,%.6f\n", path.filename().string().c_str(), q.psnr_db, q.ssim);
        psnr_sum += q.psnr_db;
        ssim_sum += q.ssim;
    }
    const double n = static_cast<double>(files.size());
    std::printf("mean,%.4f,%.6f\n", psnr_sum / n, ssim_sum / n);
    return kOk;
}

struct TrainFlags {
    std::string hr_dir, out, loss_csv;
    std::size_t iters = 0, batch = 32, patch = 64, halve_every = 0;
    double lr = 2e-4;
    std::uint64_t seed = 0;
    bool quiet = false;
};

int run_train(const ArchFlags& arch, const TrainFlags& f) {
    ModelConfig cfg = arch.config();
    cfg.validate();
    TrainConfig tc;
    tc.iterations = f.iters;
    tc.batch = f.batch;
    tc.patch = f.patch;
    tc.lr = f.lr;
    tc.seed = f.seed;
    tc.halve_every = f.halve_every;
    tc.validate();

    std::vector<Tensor<float>> dataset;
    for (const auto& path : list_images(f.hr_dir)) dataset.push_back(load_image(path));
    if (dataset.empty()) throw IoError("no images in '" + f.hr_dir + "'");

    const std::string loss_path = f.loss_csv.empty() ? f.out + ".loss.csv" : f.loss_csv;
    std::ofstream loss_out(loss_path);
    if (!loss_out) throw IoError("cannot write '" + loss_path + "'");
    loss_out << "iteration,loss\n";
    loss_out.precision(9);

    const std::size_t report = std::max<std::size_t>(1, f.iters / 20);
    auto result = train(build_model(cfg, f.seed), dataset, tc, [&](std::size_t it, double loss) {
        if (!std::isfinite(loss)) throw NumericError("loss diverged at iteration " + std::to_string(it));
        loss_out << it << "," << loss << "\n";
        if (!f.quiet && (it % report == 0 || it + 1 == f.iters))
            std::fprintf(stderr, "iter %zu/%zu  loss %.6f\n", it + 1, f.iters, loss);
    });
    if (!loss_out) throw IoError("write failed for '" + loss_path + "'");
    write_checkpoint(result.model, f.out);
    return kOk;
}

int run_count(const ArchFlags& arch, const std::vector<std::size_t>& hw) {
    const ModelConfig cfg = arch.config();
    const std::size_t h = hw.empty() ? 256 : hw[0], w = hw.empty() ? 256 : hw[1];
    const OpCount ops = count_flops(cfg, h, w);
    std::printf("config: %s\n", cfg.name().c_str());
    std::printf("params: %llu\n", static_cast<unsigned long long>(count_params(cfg)));
    std::printf("input: %zux%zu\n", h, w);
    std::printf("macs: %llu\n", static_cast<unsigned long long>(ops.macs));
    std::printf("flops: %llu\n", static_cast<unsigned long long>(ops.flops()));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shift-conv super-resolution toolkit"};
    app.require_subcommand(1, 1);
    unsigned threads = 1;
    app.add_option("--threads", threads, "worker threads for GEMM (default 1)")->check(CLI::PositiveNumber);

    std::string model_path, input, output, impl = "fused", hr_dir;
    int crop = -1;

    auto* sr = app.add_subcommand("sr", "super-resolve one image");
    sr->add_option("--model", model_path, "checkpoint")->required();
    sr->add_option("--input", input, "LR image (.png/.ppm)")->required();
    sr->add_option("--output", output, "SR image (.png/.ppm)")->required();
    sr->add_option("--impl", impl, "SC layer implementation")->check(CLI::IsMember(kImplNames));

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM on a directory of HR images");
    ev->add_option("--model", model_path, "checkpoint")->required();
    ev->add_option("--hr-dir", hr_dir, "directory of HR images")->required();
    ev->add_option("--crop", crop, "border pixels cropped before metrics (default: scale)")
        ->check(CLI::NonNegativeNumber);

    ArchFlags train_arch;
    TrainFlags tf;
    auto* tr = app.add_subcommand("train", "train a model on a directory of HR images");
    train_arch.add(tr, true);
    tr->add_option("--hr-dir", tf.hr_dir, "directory of HR images")->required();
    tr->add_option("--iters", tf.iters, "iterations")->required();
    tr->add_option("--batch", tf.batch, "batch size")->check(CLI::PositiveNumber);
    tr->add_option("--lr", tf.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    tr->add_option("--seed", tf.seed, "seed for init and sampling");
    tr->add_option("--out", tf.out, "checkpoint path")->required();
    tr->add_option("--patch", tf.patch, "LR patch side (HR patch = patch * scale)")->check(CLI::PositiveNumber);
    tr->add_option("--halve-every", tf.halve_every, "halve the learning rate every N iterations (0 = never)");
    tr->add_option("--loss-csv", tf.loss_csv, "loss history path (default: <out>.loss.csv)");
    tr->add_flag("--quiet", tf.quiet, "no progress on stderr");

    ArchFlags count_arch;
    std::vector<std::size_t> flops_hw;
    auto* ct = app.add_subcommand("count", "parameter and FLOP counts");
    count_arch.add(ct, true);
    ct->add_option("--flops-hw", flops_hw, "LR input height and width (default 256 256)")->expected(2);

    ArchFlags bench_arch;
    std::vector<std::size_t> size = {256, 256};
    std::size_t iters = 50, warmup = 10;
    std::uint64_t seed = 0;
    std::string bench_impl = "fused";
    auto* bn = app.add_subcommand("bench", "forward latency and transient memory");
    bench_arch.add(bn, true);
    bn->add_option("--size", size, "LR input height and width")->expected(2);
    bn->add_option("--impl", bench_impl, "SC layer implementation")->check(CLI::IsMember(kImplNames));
    bn->add_option("--iters", iters, "timed iterations")->check(CLI::PositiveNumber);
    bn->add_option("--warmup", warmup, "untimed warmup iterations");
    bn->add_option("--seed", seed, "seed for weights and input");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        set_num_threads(threads);
        if (*sr) return run_sr(model_path, input, output, impl);
        if (*ev) return run_eval(model_path, hr_dir, crop);
        if (*tr) return run_train(train_arch, tf);
        if (*ct) return run_count(count_arch, flops_hw);
        if (*bn) {
            const BenchReport r = bench_latency(bench_arch.config(), size[0], size[1], parse_sc_impl(bench_impl), iters,
                                                warmup, seed);
            std::printf("%s\n%s\n", BenchReport::csv_header().c_str(), r.csv_row().c_str());
            return kOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumeric;
    }
    return kUsage;
}
