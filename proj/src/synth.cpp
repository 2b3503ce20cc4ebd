// SPDX-License-Identifier: Apache-2.0
#include "nli/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "nli/error.hpp"
#include "nli/features.hpp"
#include "nli/parallel.hpp"
#include "nli/seeding.hpp"

namespace nli::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaxHarmonicHz = 5000.0;

std::string speaker_name(const SynthSpec& spec, const ClassProfile& profile, std::size_t index)
{
    std::ostringstream os;
    os << spec.speaker_prefix << profile.name << "_spk" << std::setw(3) << std::setfill('0')
       << index;
    return os.str();
}

// Syllable-like amplitude envelope: Hann-shaped bursts separated by short gaps.
std::vector<double> syllable_envelope(std::size_t n, int sample_rate, double rate,
                                      std::mt19937_64& rng)
{
    std::vector<double> env(n, 0.0);
    std::uniform_real_distribution<double> length_factor(0.6, 1.4);
    std::uniform_real_distribution<double> gap_seconds(0.02, 0.12);
    std::uniform_real_distribution<double> loudness(0.6, 1.0);
    std::size_t pos = 0;
    while (pos < n) {
        const auto len = static_cast<std::size_t>(length_factor(rng) / rate * sample_rate);
        const double amp = loudness(rng);
        for (std::size_t i = 0; i < len && pos + i < n; ++i) {
            const double phase = static_cast<double>(i) / static_cast<double>(len);
            env[pos + i] = amp * std::sin(std::numbers::pi * phase) * std::sin(std::numbers::pi * phase);
        }
        pos += len + static_cast<std::size_t>(gap_seconds(rng) * sample_rate);
    }
    return env;
}

} // namespace

void SynthSpec::validate() const
{
    if (speakers_per_class == 0) {
        throw ConfigError("synth: speakers_per_class must be positive");
    }
    if (!(minutes_per_speaker > 0.0)) {
        throw ConfigError("synth: minutes_per_speaker must be positive");
    }
    if (sample_rate < 8000) {
        throw ConfigError("synth: sample_rate must be at least 8000 Hz");
    }
    if (classes.size() < 2) {
        throw ConfigError("synth: need at least two class profiles");
    }
    if (jitter < 0.0 || jitter > 0.5 || noise_level < 0.0 || noise_level > 0.5) {
        throw ConfigError("synth: jitter and noise_level must be in [0, 0.5]");
    }
    for (std::size_t a = 0; a < classes.size(); ++a) {
        const ClassProfile& p = classes[a];
        if (!(p.f0_min > 0.0 && p.f0_min <= p.f0_max && p.formant_min > 0.0 &&
              p.formant_min <= p.formant_max && p.formant_max < sample_rate / 2.0)) {
            throw ConfigError("synth: invalid ranges in class profile '" + p.name + "'");
        }
        for (std::size_t b = a + 1; b < classes.size(); ++b) {
            const ClassProfile& q = classes[b];
            if (p.f0_min <= q.f0_max && q.f0_min <= p.f0_max) {
                throw ConfigError("synth: fundamental ranges of '" + p.name + "' and '" + q.name +
                                  "' overlap");
            }
        }
    }
}

SpeakerVoice draw_voice(const ClassProfile& profile, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    SpeakerVoice v;
    v.f0 = uniform(profile.f0_min, profile.f0_max);
    v.formant = uniform(profile.formant_min, profile.formant_max);
    v.formant_width = uniform(120.0, 250.0);
    v.syllable_rate = uniform(3.0, 6.0);
    v.tilt = uniform(0.6, 1.0);
    return v;
}

std::vector<double> render_speaker(const SpeakerVoice& voice, double seconds, int sample_rate,
                                   double jitter, double noise_level, std::uint64_t seed)
{
    const auto n = static_cast<std::size_t>(std::llround(seconds * sample_rate));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Slow pitch wander: a few low-frequency sinusoids.
    std::array<double, 3> wander_hz{};
    std::array<double, 3> wander_phase{};
    for (std::size_t i = 0; i < wander_hz.size(); ++i) {
        wander_hz[i] = 0.1 + 0.9 * unit(rng);
        wander_phase[i] = kTwoPi * unit(rng);
    }
    const std::vector<double> env = syllable_envelope(n, sample_rate, voice.syllable_rate, rng);

    const auto harmonics = static_cast<std::size_t>(
        std::max(1.0, std::floor(std::min(kMaxHarmonicHz, sample_rate / 2.0 - 100.0) / voice.f0)));
    std::vector<double> gain(harmonics);
    for (std::size_t k = 1; k <= harmonics; ++k) {
        const double f = voice.f0 * static_cast<double>(k);
        const double z = (f - voice.formant) / voice.formant_width;
        gain[k - 1] = std::pow(static_cast<double>(k), -voice.tilt) * (0.05 + std::exp(-0.5 * z * z));
    }

    std::vector<double> voiced(n);
    double phase = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        double wander = 0.0;
        for (std::size_t w = 0; w < wander_hz.size(); ++w) {
            wander += std::sin(kTwoPi * wander_hz[w] * t + wander_phase[w]);
        }
        const double f0 = voice.f0 * (1.0 + jitter * wander / 3.0);
        phase = std::fmod(phase + kTwoPi * f0 / sample_rate, kTwoPi);
        if (env[i] == 0.0) {
            voiced[i] = 0.0;
            continue;
        }
        // sin(k*phase) by the Chebyshev recurrence.
        const double two_cos = 2.0 * std::cos(phase);
        double s_prev = 0.0;
        double s_cur = std::sin(phase);
        double acc = 0.0;
        for (std::size_t k = 0; k < harmonics; ++k) {
            acc += gain[k] * s_cur;
            const double s_next = two_cos * s_cur - s_prev;
            s_prev = s_cur;
            s_cur = s_next;
        }
        voiced[i] = acc * env[i];
        peak = std::max(peak, std::abs(voiced[i]));
    }

    // Background noise: white Gaussian through a one-pole low-pass near 3 kHz.
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double alpha = std::exp(-kTwoPi * 3000.0 / sample_rate);
    std::vector<double> noise(n);
    double state = 0.0;
    double energy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        state = alpha * state + (1.0 - alpha) * gauss(rng);
        noise[i] = state;
        energy += state * state;
    }
    const double noise_rms = n > 0 ? std::sqrt(energy / static_cast<double>(n)) : 0.0;
    const double noise_scale = noise_rms > 0.0 ? noise_level / noise_rms : 0.0;
    const double voice_scale = peak > 0.0 ? 0.5 / peak : 0.0;

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::clamp(voiced[i] * voice_scale + noise[i] * noise_scale, -1.0, 1.0);
    }
    return out;
}

std::vector<GeneratedFile> generate(const SynthSpec& spec, const std::filesystem::path& out_dir,
                                    std::size_t jobs)
{
    spec.validate();
    std::vector<GeneratedFile> files;
    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        const ClassProfile& profile = spec.classes[c];
        std::filesystem::create_directories(out_dir / profile.name);
        for (std::size_t s = 0; s < spec.speakers_per_class; ++s) {
            GeneratedFile f;
            f.class_name = profile.name;
            f.label = static_cast<int>(c);
            f.speaker_id = speaker_name(spec, profile, s);
            f.path = out_dir / profile.name / (f.speaker_id + ".wav");
            files.push_back(std::move(f));
        }
    }
    const double seconds = spec.minutes_per_speaker * 60.0;
    parallel_for(files.size(), jobs, [&](std::size_t i) {
        const GeneratedFile& f = files[i];
        const ClassProfile& profile = spec.classes[static_cast<std::size_t>(f.label)];
        const std::uint64_t voice_seed = derive_seed(spec.seed, "voice/" + f.speaker_id);
        const std::uint64_t audio_seed = derive_seed(spec.seed, "audio/" + f.speaker_id);
        const SpeakerVoice voice = draw_voice(profile, voice_seed);
        const auto samples = render_speaker(voice, seconds, spec.sample_rate, spec.jitter,
                                            spec.noise_level, audio_seed);
        audio::write_wav(f.path, samples, spec.sample_rate);
    });
    return files;
}

double spectral_centroid(const std::vector<double>& samples, int sample_rate)
{
    features::MfccConfig cfg;
    const features::MfccExtractor extractor(cfg, sample_rate);
    const std::vector<double> window = features::hann_window(cfg.frame_len);
    const std::size_t frames = features::frame_count(samples.size(), cfg);
    if (frames == 0) {
        throw ArgumentError("spectral_centroid: signal shorter than one frame");
    }
    std::vector<double> mean_mag(cfg.n_fft_bins(), 0.0);
    std::vector<double> frame(cfg.frame_len);
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t i = 0; i < cfg.frame_len; ++i) {
            frame[i] = samples[t * cfg.hop + i] * window[i];
        }
        const auto power = extractor.power_spectrum(frame);
        for (std::size_t k = 0; k < power.size(); ++k) {
            mean_mag[k] += std::sqrt(power[k]);
        }
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < mean_mag.size(); ++k) {
        const double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.frame_len);
        num += f * mean_mag[k];
        den += mean_mag[k];
    }
    return den > 0.0 ? num / den : 0.0;
}

} // namespace nli::synth
