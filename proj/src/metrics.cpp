#include "vffc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace vffc {

std::vector<std::uint8_t> binarize(const std::vector<double>& map, double threshold) {
    std::vector<std::uint8_t> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] >= threshold ? 1 : 0;
    return out;
}

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("confusion: prediction and ground truth sizes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
        c.tn += !p && !g;
    }
    return c;
}

double f_beta(const ConfusionCounts& c, double beta) {
    if (c.tp == 0) return 0.0;
    const double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (b2 * p + r);
}

double psnr(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("psnr: maps must be non-empty and equally sized");
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double psnr_binary(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("psnr: maps must be non-empty and equally sized");
    std::int64_t diff = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) diff += (pred[i] != 0) != (gt[i] != 0);
    if (diff == 0) return std::numeric_limits<double>::infinity();
    const double mse = static_cast<double>(diff) / static_cast<double>(pred.size());
    return 10.0 * std::log10(1.0 / mse);
}

std::vector<std::uint8_t> skeletonize(const std::vector<std::uint8_t>& mask, std::int64_t h,
                                      std::int64_t w) {
    if (static_cast<std::int64_t>(mask.size()) != h * w)
        throw std::invalid_argument("skeletonize: size does not match dims");
    std::vector<std::uint8_t> img(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] ? 1 : 0;
    auto px = [&](std::int64_t y, std::int64_t x) -> int {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0;
        return img[y * w + x];
    };
    std::vector<std::int64_t> to_clear;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int phase = 0; phase < 2; ++phase) {
            to_clear.clear();
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    if (!px(y, x)) continue;
                    // Neighbors p2..p9 clockwise from north.
                    const int p2 = px(y - 1, x), p3 = px(y - 1, x + 1), p4 = px(y, x + 1);
                    const int p5 = px(y + 1, x + 1), p6 = px(y + 1, x), p7 = px(y + 1, x - 1);
                    const int p8 = px(y, x - 1), p9 = px(y - 1, x - 1);
                    const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
                    if (b < 2 || b > 6) continue;
                    const int a = (p2 == 0 && p3 == 1) + (p3 == 0 && p4 == 1) +
                                  (p4 == 0 && p5 == 1) + (p5 == 0 && p6 == 1) +
                                  (p6 == 0 && p7 == 1) + (p7 == 0 && p8 == 1) +
                                  (p8 == 0 && p9 == 1) + (p9 == 0 && p2 == 1);
                    if (a != 1) continue;
                    if (phase == 0) {
                        if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
                    } else {
                        if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
                    }
                    to_clear.push_back(y * w + x);
                }
            }
            for (auto i : to_clear) img[i] = 0;
            changed = changed || !to_clear.empty();
        }
    }
    return img;
}

namespace {

// Forward D4 coordinate map: source (y,x) in an (h,w) image to destination
// (ty,tx); elements 1,3,6,7 swap the dimensions.
inline void d4_map(int g, std::int64_t h, std::int64_t w, std::int64_t y, std::int64_t x,
                   std::int64_t& ty, std::int64_t& tx) {
    switch (g) {
        case 0: ty = y; tx = x; break;
        case 1: ty = x; tx = h - 1 - y; break;  // rotate 90 cw
        case 2: ty = h - 1 - y; tx = w - 1 - x; break;
        case 3: ty = w - 1 - x; tx = y; break;
        case 4: ty = y; tx = w - 1 - x; break;
        case 5: ty = h - 1 - y; tx = x; break;
        case 6: ty = x; tx = y; break;
        default: ty = w - 1 - x; tx = h - 1 - y; break;
    }
}

// Union of the eight back-transformed Zhang-Suen skeletons. The raw thinning
// rules are direction-asymmetric, so a single skeleton is not D4-equivariant;
// the symmetrized union is, which keeps pseudo_fmeasure exactly invariant
// under simultaneous D4 transforms of pred and gt.
std::vector<std::uint8_t> symmetric_skeleton(const std::vector<std::uint8_t>& gt,
                                             std::int64_t h, std::int64_t w) {
    std::vector<std::uint8_t> skel(gt.size(), 0);
    for (int g = 0; g < 8; ++g) {
        const bool swap = g == 1 || g == 3 || g == 6 || g == 7;
        const std::int64_t th = swap ? w : h, tw = swap ? h : w;
        std::vector<std::uint8_t> t(gt.size());
        std::int64_t ty = 0, tx = 0;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                d4_map(g, h, w, y, x, ty, tx);
                t[ty * tw + tx] = gt[y * w + x];
            }
        const std::vector<std::uint8_t> s = skeletonize(t, th, tw);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                d4_map(g, h, w, y, x, ty, tx);
                skel[y * w + x] |= s[ty * tw + tx];
            }
    }
    return skel;
}

}  // namespace

double pseudo_fmeasure(const std::vector<std::uint8_t>& pred,
                       const std::vector<std::uint8_t>& gt, std::int64_t h, std::int64_t w) {
    if (pred.size() != gt.size() || static_cast<std::int64_t>(gt.size()) != h * w)
        throw std::invalid_argument("pseudo_fmeasure: size mismatch");
    const std::vector<std::uint8_t> skel = symmetric_skeleton(gt, h, w);
    std::int64_t pred_pos = 0, tp = 0, skel_pos = 0, skel_hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        pred_pos += p;
        tp += p && gt[i] != 0;
        if (skel[i] != 0) {
            ++skel_pos;
            skel_hit += p;
        }
    }
    if (pred_pos == 0 || skel_pos == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(pred_pos);
    const double pseudo_recall = static_cast<double>(skel_hit) / static_cast<double>(skel_pos);
    if (precision + pseudo_recall == 0.0) return 0.0;
    return 2.0 * precision * pseudo_recall / (precision + pseudo_recall);
}

double quantile_threshold_fbeta(const std::vector<double>& score,
                                const std::vector<std::uint8_t>& gt, double positive_rate,
                                double beta) {
    if (score.size() != gt.size() || score.empty())
        throw std::invalid_argument("quantile_threshold_fbeta: size mismatch");
    if (positive_rate <= 0.0 || positive_rate > 1.0)
        throw std::invalid_argument("quantile_threshold_fbeta: rate must be in (0,1]");
    std::vector<double> sorted = score;
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(positive_rate * sorted.size())));
    std::nth_element(sorted.begin(), sorted.end() - k, sorted.end());
    const double threshold = sorted[sorted.size() - k];
    return f_beta(confusion(binarize(score, threshold), gt), beta);
}

std::string format_metric(double value) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    return buf;
}

}  // namespace vffc
