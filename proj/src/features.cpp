// SPDX-License-Identifier: Apache-2.0
#include "nli/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "nli/error.hpp"

namespace nli::features {

namespace {

// FFTW planning touches global state; execution on distinct buffers does not.
std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

bool is_power_of_two(std::size_t n)
{
    return n != 0 && (n & (n - 1)) == 0;
}

// Orthonormal DCT-II basis, n_out x n_in row-major.
std::vector<double> dct_matrix(std::size_t n_out, std::size_t n_in)
{
    std::vector<double> basis(n_out * n_in);
    const double s0 = std::sqrt(1.0 / static_cast<double>(n_in));
    const double sk = std::sqrt(2.0 / static_cast<double>(n_in));
    for (std::size_t k = 0; k < n_out; ++k) {
        for (std::size_t n = 0; n < n_in; ++n) {
            basis[k * n_in + n] = (k == 0 ? s0 : sk) *
                                  std::cos(std::numbers::pi * static_cast<double>(k) *
                                           (2.0 * static_cast<double>(n) + 1.0) /
                                           (2.0 * static_cast<double>(n_in)));
        }
    }
    return basis;
}

} // namespace

void MfccConfig::validate(int sample_rate) const
{
    if (sample_rate <= 0) {
        throw ConfigError("sample rate must be positive");
    }
    if (!is_power_of_two(frame_len)) {
        throw ConfigError("frame_len must be a power of two, got " + std::to_string(frame_len));
    }
    if (hop == 0) {
        throw ConfigError("hop must be positive");
    }
    if (n_mels == 0 || n_mfcc == 0) {
        throw ConfigError("n_mels and n_mfcc must be positive");
    }
    if (n_mfcc > n_mels) {
        throw ConfigError("n_mfcc (" + std::to_string(n_mfcc) + ") exceeds n_mels (" +
                          std::to_string(n_mels) + ")");
    }
    const double top = fmax_or_nyquist(sample_rate);
    if (!(fmin >= 0.0 && fmin < top && top <= sample_rate / 2.0)) {
        throw ConfigError("require 0 <= fmin < fmax <= sample_rate/2");
    }
    if (!(log_floor > 0.0)) {
        throw ConfigError("log_floor must be positive");
    }
}

double mel_scale(double hz)
{
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel)
{
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<double> mel_centers(const MfccConfig& cfg, int sample_rate)
{
    const double lo = mel_scale(cfg.fmin);
    const double hi = mel_scale(cfg.fmax_or_nyquist(sample_rate));
    std::vector<double> centers(cfg.n_mels);
    const double step = (hi - lo) / static_cast<double>(cfg.n_mels + 1);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        centers[m] = mel_to_hz(lo + step * static_cast<double>(m + 1));
    }
    return centers;
}

std::vector<double> mel_filterbank(const MfccConfig& cfg, int sample_rate)
{
    cfg.validate(sample_rate);
    const std::size_t bins = cfg.n_fft_bins();
    const double lo = mel_scale(cfg.fmin);
    const double hi = mel_scale(cfg.fmax_or_nyquist(sample_rate));
    const double step = (hi - lo) / static_cast<double>(cfg.n_mels + 1);

    std::vector<double> edges(cfg.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(lo + step * static_cast<double>(i));
    }

    std::vector<double> bank(cfg.n_mels * bins, 0.0);
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(cfg.frame_len);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[m];
        const double center = edges[m + 1];
        const double right = edges[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < bins; ++k) {
            const double f = bin_hz * static_cast<double>(k);
            const double rise = (f - left) / (center - left);
            const double fall = (right - f) / (right - center);
            const double w = std::max(0.0, std::min(rise, fall));
            bank[m * bins + k] = w;
            any = any || w > 0.0;
        }
        if (!any) {
            throw ConfigError("mel filter " + std::to_string(m) + " is empty: n_mels=" +
                              std::to_string(cfg.n_mels) + " is too large for frame_len=" +
                              std::to_string(cfg.frame_len));
        }
    }
    return bank;
}

std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg)
{
    if (n_samples < cfg.frame_len) {
        return 0;
    }
    return 1 + (n_samples - cfg.frame_len) / cfg.hop;
}

std::vector<double> hann_window(std::size_t n)
{
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(n));
    }
    return w;
}

struct MfccExtractor::Impl {
    MfccConfig cfg;
    int sample_rate = 0;
    std::vector<double> window;
    std::vector<double> bank;
    std::vector<double> dct;
    fftw_plan plan = nullptr;

    ~Impl()
    {
        if (plan != nullptr) {
            std::lock_guard lock(fftw_planner_mutex());
            fftw_destroy_plan(plan);
        }
    }
};

MfccExtractor::MfccExtractor(const MfccConfig& cfg, int sample_rate)
    : impl_(std::make_unique<Impl>())
{
    cfg.validate(sample_rate);
    impl_->cfg = cfg;
    impl_->sample_rate = sample_rate;
    impl_->window = hann_window(cfg.frame_len);
    impl_->bank = mel_filterbank(cfg, sample_rate);
    impl_->dct = dct_matrix(cfg.n_mfcc, cfg.n_mels);

    const int n = static_cast<int>(cfg.frame_len);
    double* in = fftw_alloc_real(cfg.frame_len);
    fftw_complex* out = fftw_alloc_complex(cfg.n_fft_bins());
    {
        std::lock_guard lock(fftw_planner_mutex());
        impl_->plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    }
    fftw_free(in);
    fftw_free(out);
    if (impl_->plan == nullptr) {
        throw ConfigError("failed to create FFT plan");
    }
}

MfccExtractor::~MfccExtractor() = default;
MfccExtractor::MfccExtractor(MfccExtractor&&) noexcept = default;
MfccExtractor& MfccExtractor::operator=(MfccExtractor&&) noexcept = default;

const MfccConfig& MfccExtractor::config() const
{
    return impl_->cfg;
}

int MfccExtractor::sample_rate() const
{
    return impl_->sample_rate;
}

std::vector<double> MfccExtractor::power_spectrum(std::span<const double> windowed_frame) const
{
    const std::size_t n = impl_->cfg.frame_len;
    if (windowed_frame.size() != n) {
        throw ShapeError("power_spectrum: frame has " + std::to_string(windowed_frame.size()) +
                         " samples, expected " + std::to_string(n));
    }
    const std::size_t bins = impl_->cfg.n_fft_bins();
    // fftw_malloc'd buffers keep the SIMD alignment the plan was made with.
    double* in = fftw_alloc_real(n);
    fftw_complex* out = fftw_alloc_complex(bins);
    std::copy(windowed_frame.begin(), windowed_frame.end(), in);
    fftw_execute_dft_r2c(impl_->plan, in, out);
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
    fftw_free(in);
    fftw_free(out);
    return power;
}

MfccMatrix MfccExtractor::compute(std::span<const double> samples) const
{
    const MfccConfig& cfg = impl_->cfg;
    const std::size_t frames = frame_count(samples.size(), cfg);
    if (frames == 0) {
        throw ArgumentError("segment too short for MFCC: " + std::to_string(samples.size()) +
                            " samples < frame_len " + std::to_string(cfg.frame_len));
    }
    const std::size_t n = cfg.frame_len;
    const std::size_t bins = cfg.n_fft_bins();

    MfccMatrix out;
    out.frames = frames;
    out.coeffs = cfg.n_mfcc;
    out.values.resize(frames * cfg.n_mfcc);

    double* in = fftw_alloc_real(n);
    fftw_complex* spec = fftw_alloc_complex(bins);
    std::vector<double> power(bins);
    std::vector<double> log_mel(cfg.n_mels);
    for (std::size_t t = 0; t < frames; ++t) {
        const double* frame = samples.data() + t * cfg.hop;
        for (std::size_t i = 0; i < n; ++i) {
            in[i] = frame[i] * impl_->window[i];
        }
        fftw_execute_dft_r2c(impl_->plan, in, spec);
        for (std::size_t k = 0; k < bins; ++k) {
            power[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
        }
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const double* row = impl_->bank.data() + m * bins;
            double e = 0.0;
            for (std::size_t k = 0; k < bins; ++k) {
                e += row[k] * power[k];
            }
            log_mel[m] = std::log(std::max(e, cfg.log_floor));
        }
        for (std::size_t c = 0; c < cfg.n_mfcc; ++c) {
            const double* basis = impl_->dct.data() + c * cfg.n_mels;
            double acc = 0.0;
            for (std::size_t m = 0; m < cfg.n_mels; ++m) {
                acc += basis[m] * log_mel[m];
            }
            out.values[t * cfg.n_mfcc + c] = acc;
        }
    }
    fftw_free(in);
    fftw_free(spec);
    return out;
}

MfccMatrix mfcc(const audio::Segment& seg, const MfccConfig& cfg)
{
    const MfccExtractor extractor(cfg, seg.sample_rate);
    MfccMatrix m = extractor.compute(seg.samples);
    m.label = seg.label;
    m.speaker_id = seg.speaker_id;
    return m;
}

namespace {

NormalizerStats finish_stats(std::vector<double> sum, std::vector<double> sum_sq, double count)
{
    NormalizerStats stats;
    stats.mean.resize(sum.size());
    stats.stddev.resize(sum.size());
    for (std::size_t c = 0; c < sum.size(); ++c) {
        const double mean = sum[c] / count;
        const double var = std::max(0.0, sum_sq[c] / count);
        stats.mean[c] = mean;
        stats.stddev[c] = std::max(std::sqrt(var), kStdFloor);
    }
    return stats;
}

} // namespace

NormalizerStats fit_normalizer(std::span<const MfccMatrix> train)
{
    if (train.empty()) {
        throw DataError("cannot fit normalizer on an empty training set");
    }
    const std::size_t coeffs = train.front().coeffs;
    std::vector<double> sum(coeffs, 0.0);
    double count = 0.0;
    for (const MfccMatrix& m : train) {
        if (m.coeffs != coeffs) {
            throw ShapeError("fit_normalizer: inconsistent coefficient counts");
        }
        for (std::size_t t = 0; t < m.frames; ++t) {
            for (std::size_t c = 0; c < coeffs; ++c) {
                sum[c] += m.at(t, c);
            }
        }
        count += static_cast<double>(m.frames);
    }
    if (count == 0.0) {
        throw DataError("cannot fit normalizer on zero frames");
    }
    // Two-pass variance; the centred sum lands in sum_sq.
    std::vector<double> mean(coeffs);
    for (std::size_t c = 0; c < coeffs; ++c) {
        mean[c] = sum[c] / count;
    }
    std::vector<double> sum_sq(coeffs, 0.0);
    for (const MfccMatrix& m : train) {
        for (std::size_t t = 0; t < m.frames; ++t) {
            for (std::size_t c = 0; c < coeffs; ++c) {
                const double d = m.at(t, c) - mean[c];
                sum_sq[c] += d * d;
            }
        }
    }
    return finish_stats(std::move(sum), std::move(sum_sq), count);
}

NormalizerStats fit_normalizer(std::span<const std::vector<float>* const> train, std::size_t coeffs)
{
    if (train.empty() || coeffs == 0) {
        throw DataError("cannot fit normalizer on an empty training set");
    }
    std::vector<double> sum(coeffs, 0.0);
    double count = 0.0;
    for (const auto* m : train) {
        for (std::size_t i = 0; i < m->size(); ++i) {
            sum[i % coeffs] += (*m)[i];
        }
        count += static_cast<double>(m->size() / coeffs);
    }
    if (count == 0.0) {
        throw DataError("cannot fit normalizer on zero frames");
    }
    std::vector<double> mean(coeffs);
    for (std::size_t c = 0; c < coeffs; ++c) {
        mean[c] = sum[c] / count;
    }
    std::vector<double> sum_sq(coeffs, 0.0);
    for (const auto* m : train) {
        for (std::size_t i = 0; i < m->size(); ++i) {
            const double d = (*m)[i] - mean[i % coeffs];
            sum_sq[i % coeffs] += d * d;
        }
    }
    return finish_stats(std::move(sum), std::move(sum_sq), count);
}

MfccMatrix apply_normalizer(const MfccMatrix& m, const NormalizerStats& stats)
{
    if (stats.mean.size() != m.coeffs || stats.stddev.size() != m.coeffs) {
        throw ShapeError("normalizer has " + std::to_string(stats.mean.size()) +
                         " coefficients, matrix has " + std::to_string(m.coeffs));
    }
    MfccMatrix out = m;
    for (std::size_t t = 0; t < m.frames; ++t) {
        for (std::size_t c = 0; c < m.coeffs; ++c) {
            out.at(t, c) = (m.at(t, c) - stats.mean[c]) / stats.stddev[c];
        }
    }
    return out;
}

MfccMatrix denormalize(const MfccMatrix& m, const NormalizerStats& stats)
{
    if (stats.mean.size() != m.coeffs || stats.stddev.size() != m.coeffs) {
        throw ShapeError("normalizer/matrix coefficient mismatch");
    }
    MfccMatrix out = m;
    for (std::size_t t = 0; t < m.frames; ++t) {
        for (std::size_t c = 0; c < m.coeffs; ++c) {
            out.at(t, c) = m.at(t, c) * stats.stddev[c] + stats.mean[c];
        }
    }
    return out;
}

} // namespace nli::features
