// vffc command-line surface: synthesize fragments, train, predict, evaluate,
// benchmark operators, and run depth-activation sweeps.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vffc/errors.hpp"
#include "vffc/ffc.hpp"
#include "vffc/inference.hpp"
#include "vffc/manifest.hpp"
#include "vffc/metrics.hpp"
#include "vffc/nn.hpp"
#include "vffc/parallel.hpp"
#include "vffc/sampling.hpp"
#include "vffc/synth.hpp"
#include "vffc/train.hpp"
#include "vffc/volume_io.hpp"

namespace fs = std::filesystem;
using namespace vffc;

namespace {

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// A fragment directory is either the synth layout (DIR/volume + DIR/mask.pgm)
// or a bare volume directory containing volume.meta.
std::string volume_dir_of(const std::string& dir) {
    if (fs::exists(fs::path(dir) / "volume" / "volume.meta")) return dir + "/volume";
    if (fs::exists(fs::path(dir) / "volume.meta")) return dir;
    throw DataError("not a fragment directory (no volume.meta found): " + dir);
}

void load_fragment(const std::string& dir, TrainDataset& out) {
    out.volumes.push_back(load_volume(volume_dir_of(dir)));
    const std::string mask_path = dir + "/mask.pgm";
    if (!fs::exists(mask_path)) throw DataError("missing ground-truth mask: " + mask_path);
    out.masks.push_back(load_mask(mask_path));
}

std::vector<std::pair<std::string, std::string>> config_pairs(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        pairs.emplace_back(line.substr(0, eq), line.substr(eq + 3));
    }
    return pairs;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 1;
    std::vector<std::int64_t> size{24, 512, 512};
    double delta = 0.04;
    int strokes = 18;
};

void run_synth(const SynthArgs& a) {
    SynthParams p;
    p.depth = a.size[0];
    p.height = a.size[1];
    p.width = a.size[2];
    p.delta = a.delta;
    p.strokes = a.strokes;
    auto [v, m] = synth_fragment(a.seed, p);

    fs::create_directories(a.out);
    save_volume(a.out + "/volume", v);
    save_mask(a.out + "/mask.pgm", m);

    RunManifest man;
    man.command = "synth";
    man.config = {{"seed", std::to_string(a.seed)},
                  {"size", std::to_string(p.depth) + "," + std::to_string(p.height) + "," +
                               std::to_string(p.width)},
                  {"delta", fmt_double(p.delta)},
                  {"strokes", std::to_string(p.strokes)},
                  {"control", p.delta == 0.0 ? "true" : "false"}};
    man.seeds = {a.seed};
    man.outputs = {a.out + "/volume", a.out + "/mask.pgm"};

    if (v.height % 4 == 0 && v.width % 4 == 0) {
        InkMask quarter;
        quarter.height = v.height / 4;
        quarter.width = v.width / 4;
        quarter.values = binarize(mask_downscale4(m.values, v.height, v.width), 0.5);
        save_mask(a.out + "/mask_x4.pgm", quarter);
        man.outputs.push_back(a.out + "/mask_x4.pgm");
    }
    write_manifest(a.out + "/manifest.json", man);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, out;
    std::vector<std::string> data, val;
    std::string bottleneck, loss;
    double ink_weight = -1.0;
    bool no_dihedral = false, no_randcrop = false, no_chdrop = false;
    std::int64_t epochs = -1;
    std::int64_t seed = -1;
};

void run_train(const TrainArgs& a) {
    std::ifstream is(a.config_path);
    if (!is) throw DataError("cannot read config file: " + a.config_path);
    std::stringstream ss;
    ss << is.rdbuf();
    TrainConfig cfg = train_config_from_text(ss.str());

    if (!a.bottleneck.empty())
        cfg.net.bottleneck = a.bottleneck == "conv3d" ? "conv" : a.bottleneck;
    if (!a.loss.empty()) cfg.loss = loss_mode_from_name(a.loss);
    if (a.ink_weight >= 0.0) cfg.ink_weight = a.ink_weight;
    if (a.no_dihedral) cfg.dihedral = false;
    if (a.no_randcrop) cfg.random_crop = false;
    if (a.no_chdrop) cfg.net.channel_dropout_p = 0.0;
    if (a.epochs >= 0) cfg.epochs = a.epochs;
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);

    TrainDataset train_data, val_data;
    for (const auto& d : a.data) load_fragment(d, train_data);
    for (const auto& d : a.val) load_fragment(d, val_data);

    TrainResult res = train(cfg, train_data, val_data, a.out);

    const std::string resolved = train_config_to_text(cfg);
    {
        std::ofstream os(a.out + "/resolved_config.cfg", std::ios::binary);
        os << resolved;
    }

    RunManifest man;
    man.command = "train";
    man.config = config_pairs(resolved);
    man.config.emplace_back("best_epoch", std::to_string(res.best_epoch));
    man.config.emplace_back("best_val_fbeta", fmt_double(res.best_fbeta));
    man.seeds = {cfg.seed, cfg.net.init_seed};
    man.outputs = {res.ckpt_path, res.log_path, a.out + "/resolved_config.cfg"};
    write_manifest(a.out + "/manifest.json", man);
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string ckpt, volume, out, prob_out, raw_out;
    double threshold = 0.5;
};

void run_predict(const PredictArgs& a) {
    Network net = load_checkpoint(a.ckpt);
    FragmentVolume v = load_volume(volume_dir_of(a.volume));
    std::vector<double> probs = tile_predict(v, net);

    InkMask map;
    map.height = v.height / 4;
    map.width = v.width / 4;
    map.values = binarize(probs, a.threshold);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    save_mask(a.out, map);

    RunManifest man;
    man.command = "predict";
    man.config = {{"ckpt", a.ckpt},
                  {"volume", a.volume},
                  {"threshold", fmt_double(a.threshold)},
                  {"network", network_config_to_text(net.cfg)}};
    man.seeds = {net.cfg.init_seed};
    man.outputs = {a.out};

    if (!a.prob_out.empty()) {
        save_inkmap(a.prob_out, probs, map.height, map.width);
        man.outputs.push_back(a.prob_out);
    }
    if (!a.raw_out.empty()) {
        save_tensor(a.raw_out, Tensor::from_data({map.height, map.width}, probs));
        man.outputs.push_back(a.raw_out);
    }
    const fs::path dir = fs::path(a.out).parent_path();
    write_manifest(((dir.empty() ? fs::path(".") : dir) / "predict_manifest.json").string(), man);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt, out;
    double threshold = 0.5;
};

void run_eval(const EvalArgs& a) {
    std::int64_t ph = 0, pw = 0;
    std::vector<double> pred_map = load_inkmap(a.pred, ph, pw);
    InkMask gt = load_mask(a.gt);
    if (gt.height != ph || gt.width != pw)
        throw DataError("eval: prediction is " + std::to_string(ph) + "x" + std::to_string(pw) +
                        " but ground truth is " + std::to_string(gt.height) + "x" +
                        std::to_string(gt.width));

    const auto pred = binarize(pred_map, a.threshold);
    const ConfusionCounts c = confusion(pred, gt.values);
    const double fb = f_beta(c);
    const double pfm = pseudo_fmeasure(pred, gt.values, ph, pw);
    const double db = psnr_binary(pred, gt.values);

    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw DataError("cannot write report: " + a.out);
    os << "fragment,f_beta,pfm,psnr,threshold\n";
    os << fs::path(a.pred).stem().string() << "," << format_metric(fb) << ","
       << format_metric(pfm) << "," << format_metric(db) << "," << format_metric(a.threshold)
       << "\n";
    os.close();

    RunManifest man;
    man.command = "eval";
    man.config = {{"pred", a.pred}, {"gt", a.gt}, {"threshold", fmt_double(a.threshold)}};
    man.outputs = {a.out};
    const fs::path dir = fs::path(a.out).parent_path();
    write_manifest(((dir.empty() ? fs::path(".") : dir) / "eval_manifest.json").string(), man);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string op = "vffc";
    std::vector<std::int64_t> shape{1, 8, 32, 32, 8};
    int iters = 5;
    std::uint64_t seed = 1;
};

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

void run_bench(const BenchArgs& a) {
    const auto& s = a.shape;
    std::int64_t elems = 1;
    for (auto d : s) {
        if (d < 1) throw std::invalid_argument("bench: shape dims must be positive");
        elems *= d;
    }
    if (elems > (std::int64_t{1} << 24))
        throw std::invalid_argument("bench: shape too large for the memory guard (" +
                                    std::to_string(elems) + " > 2^24 elements)");
    const std::int64_t n = s[0], d = s[1], c = s[4];

    auto build_input = [&](bool rg) {
        Rng rng(a.seed);
        return Tensor::uniform({s[0], s[1], s[2], s[3], s[4]}, 0.0, 1.0, rng, rg);
    };

    const bool is_conv = a.op == "conv3d";
    FfcKind kind = FfcKind::Vffc;
    if (!is_conv) kind = ffc_kind_from_name(a.op);

    Rng wrng(a.seed ^ 0x9e3779b97f4a7c15ull);
    Conv3d conv;
    FfcUnit unit;
    if (is_conv)
        conv = make_conv3d(c, c, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false, wrng);
    else
        unit = make_ffc(kind, c, c, d, wrng);

    auto forward = [&](const Tensor& x, bool training) {
        return is_conv ? conv3d(x, conv) : ffc_forward(x, unit, training);
    };

    // Precondition: at D=1 the volumetric and folded variants coincide with
    // the spatial one; verify before timing.
    if (!is_conv && d == 1 && (kind == FfcKind::Vffc || kind == FfcKind::Stffc)) {
        Rng r1(a.seed ^ 0x9e3779b97f4a7c15ull), r2(a.seed ^ 0x9e3779b97f4a7c15ull);
        FfcUnit va = make_ffc(FfcKind::Vffc, c, c, d, r1);
        FfcUnit sa = make_ffc(FfcKind::Sffc, c, c, d, r2);
        GradPause pause;
        Tensor x = build_input(false);
        Tensor ya = ffc_forward(x, va, false), yb = ffc_forward(x, sa, false);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < ya.data().size(); ++i)
            max_diff = std::max(max_diff, std::abs(ya.data()[i] - yb.data()[i]));
        if (max_diff > 1e-9)
            throw NumericError("bench: D=1 variant equivalence precheck failed (max diff " +
                               fmt_double(max_diff) + ")");
    }

    // Determinism self-check: the op output is a pure function of the seed.
    {
        GradPause pause;
        Tensor x1 = build_input(false), x2 = build_input(false);
        Tensor y1 = forward(x1, false), y2 = forward(x2, false);
        for (std::size_t i = 0; i < y1.data().size(); ++i)
            if (y1.data()[i] != y2.data()[i])
                throw NumericError("bench: op output is not deterministic");
    }

    using clock = std::chrono::steady_clock;
    std::vector<double> fwd_ms, bwd_ms;
    for (int i = 0; i < a.iters; ++i) {
        {
            GradPause pause;
            Tensor x = build_input(false);
            const auto t0 = clock::now();
            Tensor y = forward(x, false);
            fwd_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
        }
        {
            Tensor x = build_input(true);
            const auto t0 = clock::now();
            Tensor y = sum(forward(x, true));
            y.backward();
            bwd_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
        }
    }
    std::sort(fwd_ms.begin(), fwd_ms.end());
    std::sort(bwd_ms.begin(), bwd_ms.end());

    std::printf("op,phase,median_ms,p10_ms,p90_ms\n");
    std::printf("%s,forward,%.3f,%.3f,%.3f\n", a.op.c_str(), quantile_sorted(fwd_ms, 0.5),
                quantile_sorted(fwd_ms, 0.1), quantile_sorted(fwd_ms, 0.9));
    std::printf("%s,forward_backward,%.3f,%.3f,%.3f\n", a.op.c_str(),
                quantile_sorted(bwd_ms, 0.5), quantile_sorted(bwd_ms, 0.1),
                quantile_sorted(bwd_ms, 0.9));
    (void)n;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string ckpt, volume, out;
    std::vector<std::int64_t> region{0, 0};
};

void run_sweep(const SweepArgs& a) {
    Network net = load_checkpoint(a.ckpt);
    FragmentVolume v = load_volume(volume_dir_of(a.volume));
    std::int64_t n_cols = 0;
    // Probe the first encoder stage: it has the finest depth resolution
    // (input/2), which is what slice localization needs.
    std::vector<double> matrix = depth_activation_sweep(v, net, 0, a.region[0], a.region[1], n_cols);

    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    std::ofstream os(a.out, std::ios::binary);
    if (!os) throw DataError("cannot write sweep: " + a.out);
    os << sweep_to_csv(matrix, v.depth, n_cols);
    os.close();

    RunManifest man;
    man.command = "sweep";
    man.config = {{"ckpt", a.ckpt},
                  {"volume", a.volume},
                  {"region", std::to_string(a.region[0]) + "," + std::to_string(a.region[1])},
                  {"columns", std::to_string(n_cols)}};
    man.seeds = {net.cfg.init_seed};
    man.outputs = {a.out};
    const fs::path dir = fs::path(a.out).parent_path();
    write_manifest(((dir.empty() ? fs::path(".") : dir) / "sweep_manifest.json").string(), man);
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* t = std::getenv("VFFC_THREADS")) {
        const int n = std::atoi(t);
        if (n > 0) set_thread_count(n);
    }

    CLI::App app{"volumetric fast fourier convolution ink-detection toolkit"};
    app.require_subcommand(1);

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "generate a synthetic fragment");
    synth->add_option("--out", sy.out, "output directory")->required();
    synth->add_option("--seed", sy.seed, "generator seed");
    synth->add_option("--size", sy.size, "volume size D,H,W")->delimiter(',')->expected(3);
    synth->add_option("--delta", sy.delta, "ink density increment (0 = control)");
    synth->add_option("--strokes", sy.strokes, "number of ink strokes");
    synth->callback([&] { run_synth(sy); });

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train an ink-detection model");
    train_cmd->add_option("--config", tr.config_path, "training config file")->required();
    train_cmd->add_option("--data", tr.data, "training fragment dirs")->required();
    train_cmd->add_option("--val", tr.val, "validation fragment dirs")->required();
    train_cmd->add_option("--out", tr.out, "output directory")->required();
    train_cmd->add_option("--bottleneck", tr.bottleneck, "bottleneck kind")
        ->check(CLI::IsMember({"vffc", "stffc", "sffc", "conv3d", "none"}));
    train_cmd->add_option("--loss", tr.loss, "loss mode")
        ->check(CLI::IsMember({"dice", "wbce", "both"}));
    train_cmd->add_option("--ink-weight", tr.ink_weight, "positive-class WBCE weight");
    train_cmd->add_flag("--no-dihedral", tr.no_dihedral, "disable D4 augmentation");
    train_cmd->add_flag("--no-randcrop", tr.no_randcrop, "center crops instead of random");
    train_cmd->add_flag("--no-chdrop", tr.no_chdrop, "disable channel dropout");
    train_cmd->add_option("--epochs", tr.epochs, "override epoch count");
    train_cmd->add_option("--seed", tr.seed, "override training seed");
    train_cmd->callback([&] { run_train(tr); });

    PredictArgs pr;
    auto* predict = app.add_subcommand("predict", "tiled inference over a fragment");
    predict->add_option("--ckpt", pr.ckpt, "checkpoint file")->required();
    predict->add_option("--volume", pr.volume, "fragment or volume directory")->required();
    predict->add_option("--out", pr.out, "binary ink map (PGM)")->required();
    predict->add_option("--prob-out", pr.prob_out, "8-bit probability map (PGM)");
    predict->add_option("--raw", pr.raw_out, "exact probabilities (tensor container)");
    predict->add_option("--threshold", pr.threshold, "binarization threshold");
    predict->callback([&] { run_predict(pr); });

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "score a prediction against ground truth");
    eval_cmd->add_option("--pred", ev.pred, "predicted map (PGM)")->required();
    eval_cmd->add_option("--gt", ev.gt, "ground-truth mask (PGM)")->required();
    eval_cmd->add_option("--out", ev.out, "metrics report CSV")->required();
    eval_cmd->add_option("--threshold", ev.threshold, "binarization threshold");
    eval_cmd->callback([&] { run_eval(ev); });

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "time an operator");
    bench->add_option("--op", be.op, "operator")
        ->check(CLI::IsMember({"vffc", "stffc", "sffc", "conv3d"}));
    bench->add_option("--shape", be.shape, "input shape N,D,H,W,C")->delimiter(',')->expected(5);
    bench->add_option("--iters", be.iters, "timing repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--seed", be.seed, "weight/input seed");
    bench->callback([&] { run_bench(be); });

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "depth-activation sweep");
    sweep->add_option("--ckpt", sw.ckpt, "checkpoint file")->required();
    sweep->add_option("--volume", sw.volume, "fragment or volume directory")->required();
    sweep->add_option("--region", sw.region, "region origin y,x")->delimiter(',')->expected(2);
    sweep->add_option("--out", sw.out, "sweep matrix CSV")->required();
    sweep->callback([&] { run_sweep(sw); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
