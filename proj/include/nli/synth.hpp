// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nli/audio_io.hpp"

namespace nli::synth {

/// Acoustic profile of one synthetic class.
struct ClassProfile {
    std::string name;
    double f0_min = 100.0;
    double f0_max = 150.0;
    double formant_min = 500.0;
    double formant_max = 900.0;
};

struct SynthSpec {
    std::size_t speakers_per_class = 20;
    double minutes_per_speaker = 1.0;
    int sample_rate = audio::kProcessingRate;
    std::uint64_t seed = 0;
    /// Relative pitch wander within a speaker.
    double jitter = 0.03;
    /// RMS of the background noise relative to full scale.
    double noise_level = 0.005;
    /// Prepended to every speaker id, e.g. to keep held-out corpora distinct.
    std::string speaker_prefix;
    std::vector<ClassProfile> classes = {
        {"native", 100.0, 150.0, 500.0, 900.0},
        {"non_native", 200.0, 300.0, 1200.0, 2000.0},
    };

    /// Throws ConfigError unless the fundamental ranges are disjoint and all
    /// fields are in range.
    void validate() const;
};

/// Per-speaker parameters drawn from the class profile.
struct SpeakerVoice {
    double f0 = 0.0;
    double formant = 0.0;
    double formant_width = 0.0;
    double syllable_rate = 0.0;
    double tilt = 0.0;
};

SpeakerVoice draw_voice(const ClassProfile& profile, std::uint64_t seed);

/// Renders `seconds` of audio for one speaker.
std::vector<double> render_speaker(const SpeakerVoice& voice, double seconds, int sample_rate,
                                   double jitter, double noise_level, std::uint64_t seed);

struct GeneratedFile {
    std::filesystem::path path;
    std::string class_name;
    int label = 0;
    std::string speaker_id;
};

/// Writes `<out_dir>/<class>/<speaker_id>.wav` for every speaker of every
/// class. Output is a pure function of the spec.
std::vector<GeneratedFile> generate(const SynthSpec& spec, const std::filesystem::path& out_dir,
                                    std::size_t jobs = 1);

/// Magnitude-weighted mean frequency of the whole signal (Hz).
double spectral_centroid(const std::vector<double>& samples, int sample_rate);

} // namespace nli::synth
