// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nli/audio_io.hpp"
#include "nli/dataset.hpp"
#include "nli/features.hpp"
#include "nli/nn/training.hpp"

namespace nli::models {

enum class ModelKind { ann, cnn, rnn };

std::string to_string(ModelKind k); // "ANN", "CNN", "RNN"
ModelKind parse_model_kind(const std::string& s);

/// ANN uses train:val 80:20 of the non-held-out data, CNN/RNN 80:10:10.
dataset::InnerScheme inner_scheme_for(ModelKind k);

struct ModelSpec {
    ModelKind kind = ModelKind::ann;
    std::size_t frames = 0;
    std::size_t n_mfcc = 13;
    std::size_t n_classes = 2;

    std::vector<std::size_t> ann_hidden = {512, 256, 64};
    double dropout = 0.3;
    std::size_t cnn_filters = 32;
    std::size_t cnn_kernel = 3;
    std::size_t cnn_blocks = 2;
    std::size_t cnn_dense = 64;
    std::vector<std::size_t> lstm_units = {64, 64};
    std::size_t rnn_dense = 64;

    bool operator==(const ModelSpec&) const = default;
};

/// Builds and Glorot-initializes the network. Output is logits over
/// n_classes; softmax is applied by the loss and by predict.
std::unique_ptr<nn::Sequential> build(const ModelSpec& spec, std::uint64_t seed);

/// A trained network plus everything needed to featurize new audio for it.
struct Classifier {
    ModelSpec spec;
    std::unique_ptr<nn::Sequential> network;
    features::NormalizerStats normalizer;
    features::MfccConfig mfcc;
    double duration_s = 5.0;
    int sample_rate = audio::kProcessingRate;
    std::vector<std::string> mapping = dataset::kDefaultMapping;
};

/// Versioned binary: magic, version, JSON header with shapes, raw float64 weights.
void save_classifier(const Classifier& c, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

/// Normalizer fitted on the given manifest entries.
features::NormalizerStats fit_normalizer(const dataset::Manifest& m,
                                         std::span<const std::size_t> indices);

/// Normalized samples of shape [frames, coeffs] for the given entries.
nn::Samples make_samples(const dataset::Manifest& m, std::span<const std::size_t> indices,
                         const features::NormalizerStats& stats);

/// Class distribution for one (un-normalized) MFCC matrix.
std::vector<double> predict_segment(Classifier& c, const features::MfccMatrix& mfcc);

struct TrackPrediction {
    int label = 0;
    std::string class_name;
    std::vector<std::size_t> vote_counts;
    std::vector<double> mean_probs;
    std::vector<std::vector<double>> per_segment;
};

/// Segments the clip at the classifier's duration, classifies each segment
/// and takes a majority vote; ties go to the higher mean probability.
TrackPrediction predict_track(Classifier& c, const audio::AudioClip& clip);

} // namespace nli::models
