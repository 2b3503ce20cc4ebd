// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "nli/audio_io.hpp"
#include "nli/error.hpp"
#include "nli/features.hpp"
#include "nli/synth.hpp"
#include "test_util.hpp"

using namespace nli;
using namespace nli::synth;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double rms(const std::vector<double>& s)
{
    double acc = 0.0;
    for (double v : s) {
        acc += v * v;
    }
    return std::sqrt(acc / static_cast<double>(s.size()));
}

} // namespace

TEST_CASE("generate writes one minute per speaker and is reproducible")
{
    testing::TempDir a("synth");
    testing::TempDir b("synth");
    SynthSpec spec;
    spec.speakers_per_class = 2;
    spec.minutes_per_speaker = 1.0;
    spec.seed = 17;
    const auto files = generate(spec, a.path(), 2);
    REQUIRE(files.size() == 4);
    for (const auto& f : files) {
        CHECK(std::filesystem::exists(f.path));
        CHECK(f.path.parent_path().filename() == f.class_name);
        CHECK(f.path.stem() == f.speaker_id);
        const auto clip = audio::load_wav(f.path);
        CHECK(clip.sample_rate == 22050);
        CHECK(clip.samples.size() == 60u * 22050u);
        CHECK(rms(clip.samples) > 0.01);
        for (double v : clip.samples) {
            REQUIRE(std::abs(v) <= 1.0);
        }
    }
    const auto again = generate(spec, b.path(), 1);
    REQUIRE(again.size() == files.size());
    for (std::size_t i = 0; i < files.size(); ++i) {
        CHECK(slurp(files[i].path) == slurp(again[i].path));
    }

    SUBCASE("a different seed changes the audio")
    {
        testing::TempDir c("synth");
        spec.seed = 18;
        const auto other = generate(spec, c.path());
        CHECK(slurp(other[0].path) != slurp(files[0].path));
    }
    SUBCASE("speaker prefix keeps held-out corpora distinct")
    {
        testing::TempDir c("synth");
        spec.speaker_prefix = "heldout_";
        const auto other = generate(spec, c.path());
        CHECK(other[0].speaker_id.rfind("heldout_", 0) == 0);
    }
}

TEST_CASE("class centroids are more than 300 Hz apart")
{
    SynthSpec spec;
    double centroid[2] = {0.0, 0.0};
    const std::size_t speakers = 6;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t s = 0; s < speakers; ++s) {
            const auto voice = draw_voice(spec.classes[c], 100 * c + s);
            CHECK(voice.f0 >= spec.classes[c].f0_min);
            CHECK(voice.f0 <= spec.classes[c].f0_max);
            const auto audio = render_speaker(voice, 5.0, 22050, spec.jitter, spec.noise_level, 1000 + 10 * c + s);
            centroid[c] += spectral_centroid(audio, 22050) / static_cast<double>(speakers);
        }
    }
    CHECK(centroid[1] - centroid[0] > 300.0);
}

TEST_CASE("spectral centroid of a pure tone is its frequency")
{
    std::vector<double> s(22050);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::sin(2.0 * 3.14159265358979323846 * 1000.0 * static_cast<double>(i) / 22050.0);
    }
    CHECK(spectral_centroid(s, 22050) == doctest::Approx(1000.0).epsilon(0.02));
}

TEST_CASE("mean MFCC is linearly separable between classes")
{
    SynthSpec spec;
    const features::MfccConfig cfg;
    const features::MfccExtractor ex(cfg, 22050);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t s = 0; s < 10; ++s) {
            const auto voice = draw_voice(spec.classes[c], 500 + 37 * c + s);
            const auto audio = render_speaker(voice, 6.0, 22050, spec.jitter, spec.noise_level, 900 + 37 * c + s);
            audio::AudioClip clip;
            clip.samples = audio;
            for (const auto& seg : audio::segment(clip, 2.0)) {
                const auto m = ex.compute(seg.samples);
                std::vector<double> mean(m.coeffs, 0.0);
                for (std::size_t f = 0; f < m.frames; ++f) {
                    for (std::size_t k = 0; k < m.coeffs; ++k) {
                        mean[k] += m.at(f, k) / static_cast<double>(m.frames);
                    }
                }
                xs.push_back(mean);
                ys.push_back(static_cast<int>(c));
            }
        }
    }
    // Standardize, then fit logistic regression by plain gradient descent.
    const std::size_t d = xs[0].size();
    std::vector<double> mu(d, 0.0);
    std::vector<double> sd(d, 0.0);
    for (const auto& x : xs) {
        for (std::size_t k = 0; k < d; ++k) {
            mu[k] += x[k] / static_cast<double>(xs.size());
        }
    }
    for (const auto& x : xs) {
        for (std::size_t k = 0; k < d; ++k) {
            sd[k] += (x[k] - mu[k]) * (x[k] - mu[k]) / static_cast<double>(xs.size());
        }
    }
    for (auto& x : xs) {
        for (std::size_t k = 0; k < d; ++k) {
            x[k] = (x[k] - mu[k]) / std::sqrt(sd[k] + 1e-12);
        }
    }
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    for (int it = 0; it < 2000; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            double z = b;
            for (std::size_t k = 0; k < d; ++k) {
                z += w[k] * xs[i][k];
            }
            const double err = 1.0 / (1.0 + std::exp(-z)) - ys[i];
            for (std::size_t k = 0; k < d; ++k) {
                gw[k] += err * xs[i][k];
            }
            gb += err;
        }
        for (std::size_t k = 0; k < d; ++k) {
            w[k] -= 0.5 * gw[k] / static_cast<double>(xs.size());
        }
        b -= 0.5 * gb / static_cast<double>(xs.size());
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double z = b;
        for (std::size_t k = 0; k < d; ++k) {
            z += w[k] * xs[i][k];
        }
        correct += ((z > 0.0) == (ys[i] == 1)) ? 1 : 0;
    }
    CHECK(correct == xs.size());
}

TEST_CASE("spec validation")
{
    SynthSpec spec;
    CHECK_NOTHROW(spec.validate());
    SUBCASE("overlapping fundamentals")
    {
        spec.classes[1].f0_min = 140.0;
        CHECK_THROWS_AS(spec.validate(), ConfigError);
    }
    SUBCASE("no speakers")
    {
        spec.speakers_per_class = 0;
        CHECK_THROWS_AS(spec.validate(), ConfigError);
    }
}
