#include "vffc/train.hpp"

#include "vffc/format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vffc/errors.hpp"
#include "vffc/inference.hpp"
#include "vffc/metrics.hpp"
#include "vffc/optim.hpp"
#include "vffc/sampling.hpp"

namespace vffc {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return out;
    } catch (...) {
        throw DataError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::int64_t parse_int(const std::string& v, const std::string& key) {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw DataError("config: bad integer for " + key + ": '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw DataError("config: bad boolean for " + key + ": '" + v + "'");
}

void parse_triple(const std::string& v, const std::string& key, std::int64_t& a, std::int64_t& b,
                  std::int64_t& c) {
    std::stringstream ss(v);
    std::string item;
    std::vector<std::int64_t> parts;
    while (std::getline(ss, item, ',')) parts.push_back(parse_int(trim(item), key));
    if (parts.size() != 3) throw DataError("config: " + key + " must be three integers d,h,w");
    a = parts[0];
    b = parts[1];
    c = parts[2];
}

// Applies one train-level key; returns false for keys that are not known here.
bool apply_train_kv(TrainConfig& cfg, const std::string& k, const std::string& v) {
    if (k == "subvolume") parse_triple(v, k, cfg.sub_d, cfg.sub_h, cfg.sub_w);
    else if (k == "cell") parse_triple(v, k, cfg.cell_d, cfg.cell_h, cfg.cell_w);
    else if (k == "stride") cfg.stride = parse_int(v, k);
    else if (k == "lr_max") cfg.lr_max = parse_double(v, k);
    else if (k == "pct_start") cfg.pct_start = parse_double(v, k);
    else if (k == "lr_div") cfg.lr_div = parse_double(v, k);
    else if (k == "lr_final_div") cfg.lr_final_div = parse_double(v, k);
    else if (k == "beta1") cfg.beta1 = parse_double(v, k);
    else if (k == "beta2") cfg.beta2 = parse_double(v, k);
    else if (k == "weight_decay") cfg.weight_decay = parse_double(v, k);
    else if (k == "adam_eps") cfg.adam_eps = parse_double(v, k);
    else if (k == "batch_size") cfg.batch_size = parse_int(v, k);
    else if (k == "epochs") cfg.epochs = parse_int(v, k);
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(v, k));
    else if (k == "ink_weight") cfg.ink_weight = parse_double(v, k);
    else if (k == "loss") cfg.loss = loss_mode_from_name(v);
    else if (k == "wbce_verbatim") cfg.wbce_verbatim = parse_bool(v, k);
    else if (k == "dice_eps") cfg.dice_eps = parse_double(v, k);
    else if (k == "dihedral") cfg.dihedral = parse_bool(v, k);
    else if (k == "random_crop") cfg.random_crop = parse_bool(v, k);
    else if (k == "threshold") cfg.threshold = parse_double(v, k);
    else if (k == "val_depth_offset") cfg.val_depth_offset = parse_int(v, k);
    else if (k == "val_every") cfg.val_every = parse_int(v, k);
    else return false;
    return true;
}

Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(seed).split(fnv1a(tag)).split(a).split(b);
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw DataError("train config: batch_size must be >= 1");
    if (cfg.epochs < 0) throw DataError("train config: epochs must be >= 0");
    if (cfg.sub_d > cfg.cell_d || cfg.sub_h > cfg.cell_h || cfg.sub_w > cfg.cell_w)
        throw DataError("train config: subvolume must fit in the lattice cell");
    if (cfg.sub_h % 32 != 0 || cfg.sub_w % 32 != 0 || cfg.sub_d % 8 != 0)
        throw DataError("train config: subvolume must be (8k)x(32m)x(32n)");
    if (cfg.val_every < 1) throw DataError("train config: val_every must be >= 1");
    if (cfg.ink_weight <= 0) throw DataError("train config: ink_weight must be positive");
    if (cfg.threshold < 0 || cfg.threshold > 1)
        throw DataError("train config: threshold must be in [0,1]");
}

struct ValScores {
    double fbeta = 0.0, pfm = 0.0, psnr_db = 0.0;
};

ValScores validate(Network& net, const TrainDataset& val, const TrainConfig& cfg) {
    ValScores s;
    for (std::size_t f = 0; f < val.volumes.size(); ++f) {
        const auto& v = val.volumes[f];
        std::vector<double> probs = tile_predict(v, net, cfg.val_depth_offset);
        auto pred = binarize(probs, cfg.threshold);
        auto gt = binarize(mask_downscale4(val.masks[f].values, v.height, v.width), 0.5);
        s.fbeta += f_beta(confusion(pred, gt));
        s.pfm += pseudo_fmeasure(pred, gt, v.height / 4, v.width / 4);
        s.psnr_db += psnr_binary(pred, gt);
    }
    const double n = static_cast<double>(val.volumes.size());
    s.fbeta /= n;
    s.pfm /= n;
    s.psnr_db /= n;
    return s;
}

}  // namespace

TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) +
                            ": expected 'key = value', got '" + t + "'");
        const std::string k = trim(t.substr(0, eq));
        const std::string v = trim(t.substr(eq + 1));
        try {
            if (!apply_train_kv(cfg, k, v) && !apply_network_config_kv(cfg.net, k, v))
                throw DataError("unknown key '" + k + "'");
        } catch (const DataError& e) {
            throw DataError("config line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw DataError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.net.depth = cfg.sub_d;
    return cfg;
}

std::string train_config_to_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os << network_config_to_text(cfg.net);
    os << "subvolume = " << cfg.sub_d << "," << cfg.sub_h << "," << cfg.sub_w << "\n";
    os << "cell = " << cfg.cell_d << "," << cfg.cell_h << "," << cfg.cell_w << "\n";
    os << "stride = " << cfg.stride << "\n";
    os << "lr_max = " << format_shortest(cfg.lr_max) << "\n";
    os << "pct_start = " << format_shortest(cfg.pct_start) << "\n";
    os << "lr_div = " << format_shortest(cfg.lr_div) << "\n";
    os << "lr_final_div = " << format_shortest(cfg.lr_final_div) << "\n";
    os << "beta1 = " << format_shortest(cfg.beta1) << "\n";
    os << "beta2 = " << format_shortest(cfg.beta2) << "\n";
    os << "weight_decay = " << format_shortest(cfg.weight_decay) << "\n";
    os << "adam_eps = " << format_shortest(cfg.adam_eps) << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "ink_weight = " << format_shortest(cfg.ink_weight) << "\n";
    os << "loss = " << loss_mode_name(cfg.loss) << "\n";
    os << "wbce_verbatim = " << (cfg.wbce_verbatim ? 1 : 0) << "\n";
    os << "dice_eps = " << format_shortest(cfg.dice_eps) << "\n";
    os << "dihedral = " << (cfg.dihedral ? 1 : 0) << "\n";
    os << "random_crop = " << (cfg.random_crop ? 1 : 0) << "\n";
    os << "threshold = " << format_shortest(cfg.threshold) << "\n";
    os << "val_depth_offset = " << cfg.val_depth_offset << "\n";
    os << "val_every = " << cfg.val_every << "\n";
    return os.str();
}

TrainResult train(const TrainConfig& cfg_in, const TrainDataset& train_data,
                  const TrainDataset& val_data, const std::string& out_dir) {
    TrainConfig cfg = cfg_in;
    cfg.net.depth = cfg.sub_d;
    validate_train_config(cfg);
    if (train_data.volumes.empty()) throw DataError("train: no training fragments");
    if (train_data.volumes.size() != train_data.masks.size() ||
        val_data.volumes.size() != val_data.masks.size())
        throw DataError("train: volumes and masks must pair up");
    if (val_data.volumes.empty()) throw DataError("train: no validation fragments");

    std::filesystem::create_directories(out_dir);
    TrainResult res;
    res.ckpt_path = out_dir + "/best.ckpt";
    res.log_path = out_dir + "/train_log.csv";

    std::vector<LatticeCell> cells;
    for (std::size_t f = 0; f < train_data.volumes.size(); ++f) {
        auto fc = build_lattice(train_data.volumes[f], cfg.cell_d, cfg.cell_h, cfg.cell_w,
                                cfg.stride, static_cast<int>(f));
        cells.insert(cells.end(), fc.begin(), fc.end());
    }

    Network net = make_network(cfg.net);
    ParamStore params = collect_params(net);
    AdamWState opt = make_adamw_state(params);

    const std::int64_t n_cells = static_cast<std::int64_t>(cells.size());
    const std::int64_t steps_per_epoch = (n_cells + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

    std::ofstream log(res.log_path);
    if (!log) throw DataError("train: cannot write " + res.log_path);
    log << "epoch,mean_train_loss,lr,val_fbeta,val_pfm,val_psnr\n";

    if (cfg.epochs == 0) {
        save_checkpoint(res.ckpt_path, net);
        return res;
    }

    char buf[64];
    std::int64_t global_step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order(cells.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = stream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        for (std::int64_t i = n_cells - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

        double epoch_loss = 0.0;
        double lr = 0.0;
        for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
            const std::int64_t b0 = s * cfg.batch_size;
            const std::int64_t bsz = std::min(cfg.batch_size, n_cells - b0);
            std::vector<FragmentSample> batch;
            batch.reserve(static_cast<std::size_t>(bsz));
            for (std::int64_t i = 0; i < bsz; ++i) {
                const LatticeCell& cell = cells[static_cast<std::size_t>(order[b0 + i])];
                Rng srng = stream(cfg.seed, "sample", static_cast<std::uint64_t>(epoch),
                                  static_cast<std::uint64_t>(b0 + i));
                FragmentSample smp = sample_subvolume(
                    cell, train_data.volumes[static_cast<std::size_t>(cell.fragment_id)],
                    train_data.masks[static_cast<std::size_t>(cell.fragment_id)], cfg.sub_d,
                    cfg.sub_h, cfg.sub_w, srng, cfg.random_crop);
                if (cfg.dihedral)
                    smp = d4_transform(smp, static_cast<int>(srng.uniform_int(0, 7)));
                batch.push_back(std::move(smp));
            }

            Tensor x = Tensor::zeros({bsz, cfg.sub_d, cfg.sub_h, cfg.sub_w, 1});
            Tensor g = Tensor::zeros({bsz, cfg.sub_h / 4, cfg.sub_w / 4, 1});
            {
                auto xd = x.mut_data();
                auto gd = g.mut_data();
                const std::int64_t vox = cfg.sub_d * cfg.sub_h * cfg.sub_w;
                const std::int64_t tgt = (cfg.sub_h / 4) * (cfg.sub_w / 4);
                for (std::int64_t i = 0; i < bsz; ++i) {
                    std::copy(batch[i].voxels.begin(), batch[i].voxels.end(),
                              xd.begin() + i * vox);
                    std::copy(batch[i].target.begin(), batch[i].target.end(),
                              gd.begin() + i * tgt);
                }
            }

            for (auto& e : params.params) e.tensor.zero_grad();
            Rng net_rng = stream(cfg.seed, "net", static_cast<std::uint64_t>(epoch),
                                 static_cast<std::uint64_t>(s));
            double loss_value = 0.0;
            try {
                Tensor logits = network_forward(net, x, true, net_rng);
                Tensor loss = total_loss(sigmoid(logits), g, cfg.ink_weight, cfg.dice_eps,
                                         cfg.loss, cfg.wbce_verbatim);
                loss_value = loss.value();
                loss.backward();
            } catch (const NumericError& e) {
                std::ostringstream os;
                os << e.what() << " [epoch " << epoch << " step " << s << "; batch:";
                for (const auto& smp : batch)
                    os << " frag " << smp.fragment_id << " origin (" << smp.oz << "," << smp.oy
                       << "," << smp.ox << ") d4 " << smp.d4 << ";";
                os << "]";
                throw NumericError(os.str());
            }
            epoch_loss += loss_value;
            lr = onecycle_lr(global_step, total_steps, cfg.lr_max, cfg.pct_start, cfg.lr_div,
                             cfg.lr_final_div);
            AdamWHyper hyper{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
            adamw_step(params, opt, hyper, lr);
            ++global_step;
        }

        const double mean_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        std::snprintf(buf, sizeof buf, "%.10g", mean_loss);
        log << epoch << "," << buf << ",";
        std::snprintf(buf, sizeof buf, "%.10g", lr);
        log << buf << ",";
        const bool do_val = (epoch % cfg.val_every == 0) || epoch == cfg.epochs - 1;
        if (do_val) {
            ValScores v = validate(net, val_data, cfg);
            log << format_metric(v.fbeta) << "," << format_metric(v.pfm) << ","
                << format_metric(v.psnr_db) << "\n";
            if (v.fbeta > res.best_fbeta) {
                res.best_fbeta = v.fbeta;
                res.best_epoch = epoch;
                save_checkpoint(res.ckpt_path, net);
            }
        } else {
            log << ",,\n";
        }
        log.flush();
    }
    return res;
}

}  // namespace vffc
