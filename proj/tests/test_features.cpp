// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mfcc_oracle.hpp"
#include "nli/error.hpp"
#include "nli/features.hpp"

using namespace nli;
using namespace nli::features;

namespace {

std::vector<double> sine(double hz, double seconds, int rate, double amp = 0.5)
{
    std::vector<double> s(static_cast<std::size_t>(seconds * rate));
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
    }
    return s;
}

std::vector<double> noise(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.2);
    std::vector<double> s(n);
    for (double& v : s) {
        v = g(rng);
    }
    return s;
}

} // namespace

TEST_CASE("mel scale reference points")
{
    CHECK(mel_scale(0.0) == 0.0);
    CHECK(mel_scale(700.0) == doctest::Approx(2595.0 * std::log10(2.0)).epsilon(1e-12));
    CHECK(mel_scale(700.0) == doctest::Approx(781.17).epsilon(1e-5));
    CHECK(mel_scale(1000.0) == doctest::Approx(1000.0).epsilon(1e-3));
    for (double f : {0.0, 55.0, 440.0, 4000.0, 11025.0}) {
        CHECK(mel_to_hz(mel_scale(f)) == doctest::Approx(f).epsilon(1e-12));
    }
}

TEST_CASE("filterbank shape and centres")
{
    MfccConfig cfg;
    const auto fb = mel_filterbank(cfg, 22050);
    CHECK(fb.size() == cfg.n_mels * cfg.n_fft_bins());

    const auto centres = mel_centers(cfg, 22050);
    REQUIRE(centres.size() == cfg.n_mels);
    for (std::size_t i = 1; i < centres.size(); ++i) {
        CHECK(centres[i] > centres[i - 1]);
    }
    CHECK(centres.front() > cfg.fmin);
    CHECK(centres.back() < 11025.0);

    SUBCASE("every filter has non-negative weights peaking near its centre")
    {
        const double bin_hz = 22050.0 / static_cast<double>(cfg.frame_len);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const auto row = fb.begin() + static_cast<std::ptrdiff_t>(m * cfg.n_fft_bins());
            const auto peak = std::max_element(row, row + static_cast<std::ptrdiff_t>(cfg.n_fft_bins()));
            CHECK(*peak > 0.0);
            CHECK(std::all_of(row, row + static_cast<std::ptrdiff_t>(cfg.n_fft_bins()),
                              [](double w) { return w >= 0.0 && w <= 1.0; }));
            const double peak_hz = static_cast<double>(peak - row) * bin_hz;
            CHECK(std::abs(peak_hz - centres[m]) <= bin_hz);
        }
    }
    SUBCASE("a pure tone lights up the filter whose centre is nearest")
    {
        const std::vector<double> tones = {300.0, 1000.0, 2500.0, 6000.0};
        for (double hz : tones) {
            const MfccExtractor ex(cfg, 22050);
            const auto s = sine(hz, 0.2, 22050);
            std::vector<double> frame(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(cfg.frame_len));
            const auto w = hann_window(cfg.frame_len);
            for (std::size_t i = 0; i < frame.size(); ++i) {
                frame[i] *= w[i];
            }
            const auto power = ex.power_spectrum(frame);
            std::size_t best = 0;
            double best_e = -1.0;
            for (std::size_t m = 0; m < cfg.n_mels; ++m) {
                double e = 0.0;
                for (std::size_t k = 0; k < power.size(); ++k) {
                    e += fb[m * cfg.n_fft_bins() + k] * power[k];
                }
                if (e > best_e) {
                    best_e = e;
                    best = m;
                }
            }
            std::size_t nearest = 0;
            for (std::size_t m = 1; m < centres.size(); ++m) {
                if (std::abs(centres[m] - hz) < std::abs(centres[nearest] - hz)) {
                    nearest = m;
                }
            }
            CHECK(static_cast<long>(best) - static_cast<long>(nearest) <= 1);
            CHECK(static_cast<long>(nearest) - static_cast<long>(best) <= 1);
        }
    }
    SUBCASE("single filter spans the whole range")
    {
        MfccConfig one = cfg;
        one.n_mels = 1;
        one.n_mfcc = 1;
        const auto single = mel_filterbank(one, 22050);
        CHECK(std::count_if(single.begin(), single.end(), [](double w) { return w > 0.0; }) > 100);
    }
    SUBCASE("filters narrower than a bin are rejected")
    {
        MfccConfig tight = cfg;
        tight.frame_len = 64;
        tight.hop = 32;
        tight.n_mels = 128;
        CHECK_THROWS_AS(mel_filterbank(tight, 22050), ConfigError);
    }
}

TEST_CASE("config validation")
{
    MfccConfig cfg;
    CHECK_NOTHROW(cfg.validate(22050));
    SUBCASE("n_mfcc above n_mels")
    {
        cfg.n_mfcc = 41;
        CHECK_THROWS_AS(cfg.validate(22050), ConfigError);
    }
    SUBCASE("fmax above Nyquist")
    {
        cfg.fmax = 12000.0;
        CHECK_THROWS_AS(cfg.validate(22050), ConfigError);
    }
    SUBCASE("fmin not below fmax")
    {
        cfg.fmin = 5000.0;
        cfg.fmax = 4000.0;
        CHECK_THROWS_AS(cfg.validate(22050), ConfigError);
    }
    SUBCASE("zero hop")
    {
        cfg.hop = 0;
        CHECK_THROWS_AS(cfg.validate(22050), ConfigError);
    }
}

TEST_CASE("frame count and matrix shape")
{
    MfccConfig cfg;
    CHECK(frame_count(2047, cfg) == 0);
    CHECK(frame_count(2048, cfg) == 1);
    CHECK(frame_count(2048 + 511, cfg) == 1);
    CHECK(frame_count(2048 + 512, cfg) == 2);
    CHECK(frame_count(5 * 22050, cfg) == 212);

    const MfccExtractor ex(cfg, 22050);
    const auto m = ex.compute(noise(5 * 22050, 1));
    CHECK(m.frames == 212);
    CHECK(m.coeffs == 13);
    CHECK(m.values.size() == 212 * 13);
}

TEST_CASE("Hann window is periodic")
{
    const auto w = hann_window(8);
    CHECK(w[0] == 0.0);
    CHECK(w[4] == doctest::Approx(1.0));
    CHECK(w[2] == doctest::Approx(0.5));
    CHECK(w[6] == doctest::Approx(0.5));
}

TEST_CASE("FFT power spectrum agrees with a direct DFT")
{
    MfccConfig cfg;
    cfg.frame_len = 512;
    cfg.hop = 128;
    const MfccExtractor ex(cfg, 22050);
    const auto frame = noise(512, 9);
    const auto fast = ex.power_spectrum(frame);
    const auto slow = testing::naive_power_spectrum(frame);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t k = 0; k < fast.size(); ++k) {
        CHECK(fast[k] == doctest::Approx(slow[k]).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("MFCC matches the brute-force reference")
{
    auto compare = [](const std::vector<double>& samples, const MfccConfig& cfg, int rate) {
        testing::OracleMfccParams p;
        p.frame_len = cfg.frame_len;
        p.hop = cfg.hop;
        p.n_mels = cfg.n_mels;
        p.n_mfcc = cfg.n_mfcc;
        p.fmin = cfg.fmin;
        p.fmax = cfg.fmax.value_or(0.0);
        p.log_floor = cfg.log_floor;
        const auto ref = testing::oracle_mfcc(samples, rate, p);
        const MfccExtractor ex(cfg, rate);
        const auto got = ex.compute(samples);
        REQUIRE(got.frames == ref.size());
        double worst = 0.0;
        for (std::size_t f = 0; f < got.frames; ++f) {
            for (std::size_t c = 0; c < got.coeffs; ++c) {
                worst = std::max(worst, std::abs(got.at(f, c) - ref[f][c]));
            }
        }
        CHECK(worst < 1e-6);
    };

    SUBCASE("default config, noise plus tone")
    {
        auto s = noise(22050 / 2, 4);
        const auto t = sine(440.0, 0.5, 22050);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] += t[i];
        }
        compare(s, MfccConfig{}, 22050);
    }
    SUBCASE("band-limited filterbank")
    {
        MfccConfig cfg;
        cfg.fmin = 80.0;
        cfg.fmax = 7600.0;
        cfg.n_mels = 26;
        cfg.n_mfcc = 20;
        compare(noise(8000, 5), cfg, 22050);
    }
    SUBCASE("small frames at 16 kHz")
    {
        MfccConfig cfg;
        cfg.frame_len = 512;
        cfg.hop = 160;
        cfg.n_mels = 20;
        cfg.n_mfcc = 13;
        compare(noise(4000, 6), cfg, 16000);
    }
}

TEST_CASE("silence hits the log floor everywhere")
{
    MfccConfig cfg;
    const MfccExtractor ex(cfg, 22050);
    const auto m = ex.compute(std::vector<double>(22050, 0.0));
    REQUIRE(m.frames > 0);
    const double c0 = std::log(1e-10) * std::sqrt(static_cast<double>(cfg.n_mels));
    for (std::size_t f = 0; f < m.frames; ++f) {
        CHECK(m.at(f, 0) == doctest::Approx(c0).epsilon(1e-12));
        for (std::size_t c = 1; c < m.coeffs; ++c) {
            CHECK(std::abs(m.at(f, c)) < 1e-9);
        }
        for (double v : m.values) {
            CHECK(std::isfinite(v));
        }
    }
}

TEST_CASE("scaling the input by a shifts only c0, by 2 sqrt(n_mels) ln a")
{
    MfccConfig cfg;
    const MfccExtractor ex(cfg, 22050);
    auto s = noise(22050, 11);
    const auto base = ex.compute(s);
    for (double a : {0.5, 3.0}) {
        std::vector<double> scaled(s);
        for (double& v : scaled) {
            v *= a;
        }
        const auto m = ex.compute(scaled);
        const double shift = 2.0 * std::log(a) * std::sqrt(static_cast<double>(cfg.n_mels));
        for (std::size_t f = 0; f < m.frames; ++f) {
            CHECK(m.at(f, 0) - base.at(f, 0) == doctest::Approx(shift).epsilon(1e-8));
            for (std::size_t c = 1; c < m.coeffs; ++c) {
                CHECK(std::abs(m.at(f, c) - base.at(f, c)) < 1e-8);
            }
        }
    }
}

TEST_CASE("segment wrapper carries label and speaker")
{
    audio::Segment seg;
    seg.samples = noise(22050, 2);
    seg.sample_rate = 22050;
    seg.label = 1;
    seg.speaker_id = "spk7";
    const auto m = mfcc(seg, MfccConfig{});
    CHECK(m.label == 1);
    CHECK(m.speaker_id == "spk7");
    CHECK(m.frames == frame_count(22050, MfccConfig{}));
}

TEST_CASE("normalizer")
{
    MfccMatrix a{2, 2, {1.0, 10.0, 3.0, 10.0}, 0, ""};
    MfccMatrix b{1, 2, {5.0, 10.0}, 1, ""};
    const std::vector<MfccMatrix> train = {a, b};
    const auto stats = fit_normalizer(train);
    REQUIRE(stats.mean.size() == 2);
    CHECK(stats.mean[0] == doctest::Approx(3.0));
    CHECK(stats.mean[1] == doctest::Approx(10.0));
    CHECK(stats.stddev[0] == doctest::Approx(std::sqrt(8.0 / 3.0)));
    CHECK(stats.stddev[1] == doctest::Approx(kStdFloor));

    const auto n = apply_normalizer(a, stats);
    CHECK(n.at(0, 0) == doctest::Approx(-2.0 / std::sqrt(8.0 / 3.0)));
    CHECK(n.at(0, 1) == 0.0);
    const auto back = denormalize(n, stats);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        CHECK(back.values[i] == doctest::Approx(a.values[i]));
    }

    SUBCASE("normalised training data has zero mean and unit variance")
    {
        std::vector<MfccMatrix> ms;
        for (std::uint64_t s = 0; s < 4; ++s) {
            const auto v = noise(60, s);
            MfccMatrix m{20, 3, v, 0, ""};
            for (std::size_t i = 0; i < m.values.size(); ++i) {
                m.values[i] = m.values[i] * static_cast<double>(i % 3 + 1) + static_cast<double>(i % 3);
            }
            ms.push_back(m);
        }
        const auto st = fit_normalizer(ms);
        for (std::size_t c = 0; c < 3; ++c) {
            double sum = 0.0;
            double sq = 0.0;
            std::size_t n_frames = 0;
            for (const auto& m : ms) {
                const auto z = apply_normalizer(m, st);
                for (std::size_t f = 0; f < z.frames; ++f) {
                    sum += z.at(f, c);
                    sq += z.at(f, c) * z.at(f, c);
                    ++n_frames;
                }
            }
            CHECK(std::abs(sum / static_cast<double>(n_frames)) < 1e-12);
            CHECK(sq / static_cast<double>(n_frames) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("float overload matches the double overload")
    {
        std::vector<float> fa(a.values.begin(), a.values.end());
        std::vector<float> fb(b.values.begin(), b.values.end());
        const std::vector<const std::vector<float>*> ptrs = {&fa, &fb};
        const auto fs = fit_normalizer(std::span<const std::vector<float>* const>(ptrs), 2);
        CHECK(fs.mean[0] == doctest::Approx(stats.mean[0]));
        CHECK(fs.stddev[0] == doctest::Approx(stats.stddev[0]));
    }
    SUBCASE("empty training set")
    {
        CHECK_THROWS_AS(fit_normalizer(std::span<const MfccMatrix>{}), DataError);
    }
}
