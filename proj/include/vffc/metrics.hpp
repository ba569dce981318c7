#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vffc {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// pixel >= threshold -> 1.
std::vector<std::uint8_t> binarize(const std::vector<double>& map, double threshold = 0.5);

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt);

// (1+b^2) p r / (b^2 p + r); 0 when tp = 0.
double f_beta(const ConfusionCounts& c, double beta = 0.5);

// 10*log10(1/MSE) on [0,1] maps; +infinity when identical (CSV writes "inf").
double psnr(const std::vector<double>& pred, const std::vector<double>& gt);
double psnr_binary(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

// Zhang-Suen two-subiteration thinning to a 1-px, 8-connected skeleton.
std::vector<std::uint8_t> skeletonize(const std::vector<std::uint8_t>& mask, std::int64_t h,
                                      std::int64_t w);

// Harmonic mean of standard precision and pseudo-recall. The recall reference
// is the D4-symmetrized skeleton of gt (union of the eight back-transformed
// thinnings), so the score is exactly invariant under simultaneous D4
// transforms of pred and gt.
double pseudo_fmeasure(const std::vector<std::uint8_t>& pred,
                       const std::vector<std::uint8_t>& gt, std::int64_t h, std::int64_t w);

// F_beta of the brightness classifier that marks the top `positive_rate`
// fraction of `score` as ink. The no-information value is ~prevalence.
double quantile_threshold_fbeta(const std::vector<double>& score,
                                const std::vector<std::uint8_t>& gt, double positive_rate,
                                double beta = 0.5);

std::string format_metric(double value);  // "inf" sentinel for +infinity

}  // namespace vffc
