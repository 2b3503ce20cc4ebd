// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nli::audio {

inline constexpr int kProcessingRate = 22050;

/// Mono sample buffer in [-1, 1] with its provenance.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = kProcessingRate;
    std::string speaker_id;
    int label = 0;
    std::string source_path;

    double duration_seconds() const
    {
        return static_cast<double>(samples.size()) / sample_rate;
    }
};

struct Segment {
    std::vector<double> samples;
    int sample_rate = kProcessingRate;
    double duration_s = 0.0;
    std::string parent;
    std::size_t index = 0;
    std::string speaker_id;
    int label = 0;
};

/// Reads a RIFF/WAVE PCM16 file with one or two channels. Stereo is averaged
/// per frame. speaker_id defaults to the filename stem.
AudioClip load_wav(const std::filesystem::path& path);

/// load_wav followed by resample to `target_rate`.
AudioClip load_wav(const std::filesystem::path& path, int target_rate);

/// Writes mono PCM16. Samples are clamped to [-1, 1] and scaled by 32768.
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);

/// Linear interpolation onto a uniform grid at `target_rate`.
/// Output length is round(len * target / source).
AudioClip resample(const AudioClip& clip, int target_rate);

/// Number of samples in one segment of `duration_s` at `sample_rate`.
std::size_t segment_length(double duration_s, int sample_rate);

/// Cuts consecutive non-overlapping segments starting at sample 0. A trailing
/// partial segment is dropped unless `pad_tail` is set, in which case it is
/// zero-padded to full length.
std::vector<Segment> segment(const AudioClip& clip, double duration_s, bool pad_tail = false);

/// Segments the clip would produce without padding.
std::size_t segment_count(std::size_t n_samples, int sample_rate, double duration_s);

} // namespace nli::audio
