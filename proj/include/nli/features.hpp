// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nli/audio_io.hpp"

namespace nli::features {

struct MfccConfig {
    std::size_t frame_len = 2048;
    std::size_t hop = 512;
    std::size_t n_mels = 40;
    std::size_t n_mfcc = 13;
    double fmin = 0.0;
    /// Upper filterbank edge; unset means Nyquist.
    std::optional<double> fmax;
    double log_floor = 1e-10;

    std::size_t n_fft_bins() const { return frame_len / 2 + 1; }
    double fmax_or_nyquist(int sample_rate) const { return fmax.value_or(sample_rate / 2.0); }

    /// Throws ConfigError when the invariants fail for `sample_rate`.
    void validate(int sample_rate) const;

    bool operator==(const MfccConfig&) const = default;
};

/// Row-major frames x coefficients.
struct MfccMatrix {
    std::size_t frames = 0;
    std::size_t coeffs = 0;
    std::vector<double> values;
    int label = 0;
    std::string speaker_id;

    double at(std::size_t frame, std::size_t coeff) const { return values[frame * coeffs + coeff]; }
    double& at(std::size_t frame, std::size_t coeff) { return values[frame * coeffs + coeff]; }
};

/// HTK mel: 2595 * log10(1 + f / 700).
double mel_scale(double hz);
double mel_to_hz(double mel);

/// n_mels x n_fft_bins, row-major. Triangular filters with centres equally
/// spaced on the mel axis between fmin and fmax.
std::vector<double> mel_filterbank(const MfccConfig& cfg, int sample_rate);

/// Centre frequencies (Hz) of the filterbank rows.
std::vector<double> mel_centers(const MfccConfig& cfg, int sample_rate);

/// 1 + floor((n - frame_len) / hop), or 0 if n < frame_len.
std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Reusable MFCC pipeline for one (config, sample rate) pair. Holds an FFT
/// plan, the window and the filterbank. compute() is const and safe to call
/// from several threads at once.
class MfccExtractor {
public:
    MfccExtractor(const MfccConfig& cfg, int sample_rate);
    ~MfccExtractor();
    MfccExtractor(const MfccExtractor&) = delete;
    MfccExtractor& operator=(const MfccExtractor&) = delete;
    MfccExtractor(MfccExtractor&&) noexcept;
    MfccExtractor& operator=(MfccExtractor&&) noexcept;

    MfccMatrix compute(std::span<const double> samples) const;

    /// Power spectrum |X_k|^2 of one windowed frame (frame_len samples).
    std::vector<double> power_spectrum(std::span<const double> windowed_frame) const;

    const MfccConfig& config() const;
    int sample_rate() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Convenience wrapper: builds an extractor and runs it on one segment.
MfccMatrix mfcc(const audio::Segment& seg, const MfccConfig& cfg);

/// Per-coefficient statistics fitted on a training split.
struct NormalizerStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline constexpr double kStdFloor = 1e-8;

/// Mean/std over all frames of all matrices. Throws DataError when empty.
NormalizerStats fit_normalizer(std::span<const MfccMatrix> train);

/// Same, for flat row-major matrices with `coeffs` columns (float storage).
NormalizerStats fit_normalizer(std::span<const std::vector<float>* const> train, std::size_t coeffs);

MfccMatrix apply_normalizer(const MfccMatrix& m, const NormalizerStats& stats);
MfccMatrix denormalize(const MfccMatrix& m, const NormalizerStats& stats);

} // namespace nli::features
