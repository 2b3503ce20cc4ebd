// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nli/features.hpp"

namespace nli::dataset {

inline const std::vector<std::string> kDefaultMapping = {"native", "non_native"};

struct Entry {
    /// frames x coeffs, row-major (time-major).
    std::vector<float> mfcc;
    int label = 0;
    std::string speaker_id;
    std::string source_path;
    std::size_t segment_index = 0;

    bool operator==(const Entry&) const = default;
};

struct Manifest {
    std::vector<std::string> mapping = kDefaultMapping;
    double duration_s = 0.0;
    int sample_rate = audio::kProcessingRate;
    features::MfccConfig mfcc_config;
    std::size_t frames = 0;
    std::size_t coeffs = 0;
    std::vector<Entry> entries;

    std::size_t size() const { return entries.size(); }
    std::vector<std::size_t> class_counts() const;
    std::vector<int> labels() const;

    /// Throws DataError if labels are out of range or shapes disagree.
    void validate() const;

    bool operator==(const Manifest&) const = default;
};

/// Writes the manifest as JSON.
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

struct BuildOptions {
    double duration_s = 5.0;
    int sample_rate = audio::kProcessingRate;
    features::MfccConfig mfcc;
    bool pad_tail = false;
    std::size_t jobs = 1;
};

/// One WAV-directory per class name. Class names must appear in `mapping`.
/// Files are visited in sorted order; unreadable files are skipped with a
/// warning on stderr.
Manifest build_manifest(const std::map<std::string, std::filesystem::path>& labeled_dirs,
                        const BuildOptions& opts,
                        const std::vector<std::string>& mapping = kDefaultMapping);

/// Sorted *.wav files directly under `dir`.
std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir);

/// Inner train/val/test fractions of the non-held-out remainder.
struct InnerScheme {
    double train = 0.8;
    double val = 0.2;
    double test = 0.0;

    static InnerScheme train_val() { return {0.8, 0.2, 0.0}; }
    static InnerScheme train_val_test() { return {0.8, 0.1, 0.1}; }
};

struct SplitSpec {
    double holdout_fraction = 0.10;
    InnerScheme inner = InnerScheme::train_val();
    std::uint64_t seed = 0;
    bool speaker_disjoint = false;
};

/// Index lists into the manifest entries.
struct Split {
    std::vector<std::size_t> final_test;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> inner_test;
};

Split split(const Manifest& m, const SplitSpec& spec);

/// Random oversampling. Returns positions into `labels`: every input position
/// once, in order, followed by minority positions drawn with replacement until
/// both classes reach the majority count.
std::vector<std::size_t> oversample(std::span<const int> labels, std::uint64_t seed);

/// Random undersampling. Returns the positions kept, in input order: all
/// minority positions and a uniform subset of the majority of equal size.
std::vector<std::size_t> undersample(std::span<const int> labels, std::uint64_t seed);

enum class Sampling { none, oversample, undersample };

std::string to_string(Sampling s);
Sampling parse_sampling(const std::string& s);

/// Applies `s` to the subset `indices` of the manifest, returning manifest indices.
std::vector<std::size_t> balance(const Manifest& m, std::span<const std::size_t> indices,
                                 Sampling s, std::uint64_t seed);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Stratified k-fold over positions of `labels`.
std::vector<Fold> kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

/// Stratified k-fold over all manifest entries.
std::vector<Fold> kfold(const Manifest& m, std::size_t k, std::uint64_t seed);

std::vector<int> labels_of(const Manifest& m, std::span<const std::size_t> indices);

} // namespace nli::dataset
