// SPDX-License-Identifier: Apache-2.0
#include "nli/audio_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nli/error.hpp"

namespace nli::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p)
{
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p)
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v)
{
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<unsigned char>((v >> shift) & 0xFF));
    }
}

void put_tag(std::vector<unsigned char>& out, const char* tag)
{
    out.insert(out.end(), tag, tag + 4);
}

struct FmtInfo {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t block_align = 0;
    std::uint16_t bits = 0;
};

FmtInfo parse_fmt(const unsigned char* p, std::uint32_t size, const std::string& path)
{
    if (size < 16) {
        throw FormatError("malformed WAV header (fmt chunk too small): " + path);
    }
    FmtInfo info;
    info.format = read_u16(p);
    info.channels = read_u16(p + 2);
    info.sample_rate = read_u32(p + 4);
    info.block_align = read_u16(p + 12);
    info.bits = read_u16(p + 14);
    if (info.format == kFormatExtensible) {
        if (size < 40) {
            throw FormatError("malformed WAV header (short extensible fmt): " + path);
        }
        // First two bytes of the sub-format GUID carry the actual format tag.
        info.format = read_u16(p + 24);
    }
    return info;
}

} // namespace

AudioClip load_wav(const std::filesystem::path& path)
{
    const std::string spath = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open WAV file: " + spath);
    }
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError("malformed WAV header (missing RIFF/WAVE): " + spath);
    }

    FmtInfo fmt;
    bool have_fmt = false;
    const unsigned char* data = nullptr;
    std::size_t data_size = 0;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t size = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t available = bytes.size() - body;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size > available) {
                throw FormatError("malformed WAV header (truncated fmt chunk): " + spath);
            }
            fmt = parse_fmt(bytes.data() + body, size, spath);
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            // Streaming writers leave 0xFFFFFFFF or an overlong size here.
            data_size = std::min<std::size_t>(size, available);
            have_data = true;
            break;
        }
        pos = body + size + (size & 1U);
    }

    if (!have_fmt) {
        throw FormatError("malformed WAV header (no fmt chunk): " + spath);
    }
    if (!have_data) {
        throw FormatError("malformed WAV header (no data chunk): " + spath);
    }
    if (fmt.format != kFormatPcm) {
        throw UnsupportedFormatError("unsupported WAV encoding (format tag " +
                                     std::to_string(fmt.format) + "), only PCM16 is supported: " +
                                     spath);
    }
    if (fmt.bits != 16) {
        throw UnsupportedFormatError("unsupported WAV bit depth " + std::to_string(fmt.bits) +
                                     ", only 16-bit PCM is supported: " + spath);
    }
    if (fmt.channels < 1 || fmt.channels > 2) {
        throw UnsupportedFormatError("unsupported channel count " +
                                     std::to_string(fmt.channels) + ": " + spath);
    }
    if (fmt.sample_rate == 0) {
        throw FormatError("malformed WAV header (zero sample rate): " + spath);
    }

    const std::size_t frame_bytes = 2U * fmt.channels;
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) {
        throw EmptyClipError("WAV file has an empty data chunk: " + spath);
    }

    AudioClip clip;
    clip.sample_rate = static_cast<int>(fmt.sample_rate);
    clip.source_path = spath;
    clip.speaker_id = path.stem().string();
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const unsigned char* frame = data + i * frame_bytes;
        double acc = 0.0;
        for (std::size_t ch = 0; ch < fmt.channels; ++ch) {
            acc += static_cast<std::int16_t>(read_u16(frame + 2 * ch)) / 32768.0;
        }
        clip.samples[i] = acc / fmt.channels;
    }
    return clip;
}

AudioClip load_wav(const std::filesystem::path& path, int target_rate)
{
    return resample(load_wav(path), target_rate);
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate)
{
    if (sample_rate <= 0) {
        throw ArgumentError("write_wav: sample rate must be positive");
    }
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::vector<unsigned char> out;
    out.reserve(44 + data_bytes);
    put_tag(out, "RIFF");
    put_u32(out, 36 + data_bytes);
    put_tag(out, "WAVE");
    put_tag(out, "fmt ");
    put_u32(out, 16);
    put_u16(out, kFormatPcm);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(sample_rate));
    put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    put_tag(out, "data");
    put_u32(out, data_bytes);
    for (double s : samples) {
        const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
        const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        put_u16(out, static_cast<std::uint16_t>(v));
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw DataError("cannot open for writing: " + path.string());
    }
    file.write(reinterpret_cast<const char*>(out.data()),
               static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw DataError("write failed: " + path.string());
    }
}

AudioClip resample(const AudioClip& clip, int target_rate)
{
    if (target_rate <= 0) {
        throw ArgumentError("resample: target rate must be positive");
    }
    if (target_rate == clip.sample_rate || clip.samples.empty()) {
        AudioClip out = clip;
        out.sample_rate = target_rate;
        return out;
    }
    AudioClip out;
    out.sample_rate = target_rate;
    out.speaker_id = clip.speaker_id;
    out.label = clip.label;
    out.source_path = clip.source_path;

    const std::size_t n = clip.samples.size();
    const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
    const auto m = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * target_rate / clip.sample_rate));
    out.samples.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double t = static_cast<double>(j) * ratio;
        const auto i0 = static_cast<std::size_t>(t);
        if (i0 + 1 >= n) {
            out.samples[j] = clip.samples[n - 1];
            continue;
        }
        const double frac = t - static_cast<double>(i0);
        out.samples[j] = clip.samples[i0] + frac * (clip.samples[i0 + 1] - clip.samples[i0]);
    }
    return out;
}

std::size_t segment_length(double duration_s, int sample_rate)
{
    if (!(duration_s > 0.0)) {
        throw ArgumentError("segment duration must be positive, got " + std::to_string(duration_s));
    }
    const auto len = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
    if (len == 0) {
        throw ArgumentError("segment duration is shorter than one sample");
    }
    return len;
}

std::size_t segment_count(std::size_t n_samples, int sample_rate, double duration_s)
{
    return n_samples / segment_length(duration_s, sample_rate);
}

std::vector<Segment> segment(const AudioClip& clip, double duration_s, bool pad_tail)
{
    const std::size_t len = segment_length(duration_s, clip.sample_rate);
    const std::size_t whole = clip.samples.size() / len;
    const bool has_tail = pad_tail && clip.samples.size() % len != 0;

    std::vector<Segment> out;
    out.reserve(whole + (has_tail ? 1 : 0));
    for (std::size_t k = 0; k < whole + (has_tail ? 1 : 0); ++k) {
        Segment seg;
        seg.sample_rate = clip.sample_rate;
        seg.duration_s = duration_s;
        seg.parent = clip.source_path;
        seg.index = k;
        seg.speaker_id = clip.speaker_id;
        seg.label = clip.label;
        const auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(k * len);
        const auto last = clip.samples.begin() +
                          static_cast<std::ptrdiff_t>(std::min(clip.samples.size(), (k + 1) * len));
        seg.samples.assign(first, last);
        seg.samples.resize(len, 0.0);
        out.push_back(std::move(seg));
    }
    return out;
}

} // namespace nli::audio
