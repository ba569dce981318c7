#pragma once

#include <complex>
#include <span>
#include <vector>

#include "vffc/tensor.hpp"

namespace vffc {

// Half-spectrum of a real 3D volume: full extent along D and H, floor(W/2)+1
// bins along the innermost axis. Row-major (D, H, Wh).
struct ComplexSpectrum {
    Shape shape;  // (D, H, Wh)
    std::vector<std::complex<double>> data;

    std::complex<double> at(std::int64_t d, std::int64_t h, std::int64_t w) const {
        return data[(d * shape[1] + h) * shape[2] + w];
    }
};

std::int64_t half_width(std::int64_t W);

// Unscaled forward transform of one contiguous real volume; inverse applies
// the 1/(D*H*W) normalization. irfft3_volume is defined for arbitrary half
// grids as x[n] = (1/N) * sum_k w_k * Re(Z[k] e^{+i theta}), w_k = 2 for the
// conjugate-paired bins 1 <= k_w <= ceil(W/2)-1 and 1 otherwise, which makes
// it exactly inverse to rfft3_spectrum on real input.
ComplexSpectrum rfft3_spectrum(std::span<const double> vol, std::int64_t D, std::int64_t H,
                               std::int64_t W);
std::vector<double> irfft3_volume(const ComplexSpectrum& spec, std::int64_t W);

// Direct-summation oracle with long double accumulators. Refuses volumes
// larger than 4096 voxels; it exists to pin down the fast path in tests.
ComplexSpectrum dft3_reference(std::span<const double> vol, std::int64_t D, std::int64_t H,
                               std::int64_t W);

// Differentiable transforms over channels-last tensors.
//   rfft3 : (N,D,H,W,C)    -> (N,D,H,Wh,2C), channels [Re c0..c{C-1} | Im c0..c{C-1}]
//   irfft3: (N,D,H,Wh,2C)  -> (N,D,H,W,C);  W resolves the Nyquist parity ambiguity.
Tensor rfft3(const Tensor& x);
Tensor irfft3(const Tensor& z, std::int64_t W);

}  // namespace vffc
