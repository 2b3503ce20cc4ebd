// SPDX-License-Identifier: Apache-2.0
#include "nli/models.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nli/error.hpp"
#include "nli/seeding.hpp"

namespace nli::models {

using nlohmann::json;

std::string to_string(ModelKind k)
{
    switch (k) {
    case ModelKind::ann:
        return "ANN";
    case ModelKind::cnn:
        return "CNN";
    case ModelKind::rnn:
        return "RNN";
    }
    return "ANN";
}

ModelKind parse_model_kind(const std::string& s)
{
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "ANN") {
        return ModelKind::ann;
    }
    if (u == "CNN") {
        return ModelKind::cnn;
    }
    if (u == "RNN" || u == "LSTM" || u == "RNN-LSTM") {
        return ModelKind::rnn;
    }
    throw ArgumentError("unknown model kind '" + s + "' (expected ANN, CNN or RNN)");
}

dataset::InnerScheme inner_scheme_for(ModelKind k)
{
    return k == ModelKind::ann ? dataset::InnerScheme::train_val()
                               : dataset::InnerScheme::train_val_test();
}

std::unique_ptr<nn::Sequential> build(const ModelSpec& spec, std::uint64_t seed)
{
    using namespace nn;
    if (spec.frames < 1 || spec.n_mfcc < 1) {
        throw ConfigError("model input must have at least one frame and one coefficient");
    }
    if (spec.n_classes < 2) {
        throw ConfigError("model needs at least two classes");
    }
    auto net = std::make_unique<Sequential>();
    std::uint64_t dropout_stream = 0;
    auto dropout = [&] {
        net->emplace<Dropout>(spec.dropout, derive_seed(seed, "dropout-" + std::to_string(dropout_stream++)));
    };

    switch (spec.kind) {
    case ModelKind::ann: {
        net->emplace<Flatten>();
        std::size_t width = spec.frames * spec.n_mfcc;
        for (std::size_t i = 0; i < spec.ann_hidden.size(); ++i) {
            net->emplace<Dense>(width, spec.ann_hidden[i]);
            net->emplace<Relu>();
            // Dropout after every hidden block except the last.
            if (i + 1 < spec.ann_hidden.size() && spec.dropout > 0.0) {
                dropout();
            }
            width = spec.ann_hidden[i];
        }
        net->emplace<Dense>(width, spec.n_classes);
        break;
    }
    case ModelKind::cnn: {
        std::size_t h = spec.frames;
        std::size_t w = spec.n_mfcc;
        for (std::size_t b = 0; b < spec.cnn_blocks; ++b) {
            if (h < 2 || w < 2) {
                throw ConfigError("CNN input " + std::to_string(spec.frames) + "x" +
                                  std::to_string(spec.n_mfcc) + " is too small for " +
                                  std::to_string(spec.cnn_blocks) + " 2x2 pooling stages");
            }
            h /= 2;
            w /= 2;
        }
        net->emplace<Reshape>(Shape{spec.frames, spec.n_mfcc, 1});
        std::size_t channels = 1;
        for (std::size_t b = 0; b < spec.cnn_blocks; ++b) {
            net->emplace<Conv2D>(channels, spec.cnn_filters, spec.cnn_kernel, spec.cnn_kernel);
            net->emplace<Relu>();
            net->emplace<MaxPool2D>();
            channels = spec.cnn_filters;
        }
        net->emplace<Flatten>();
        net->emplace<Dense>(h * w * channels, spec.cnn_dense);
        net->emplace<Relu>();
        if (spec.dropout > 0.0) {
            dropout();
        }
        net->emplace<Dense>(spec.cnn_dense, spec.n_classes);
        break;
    }
    case ModelKind::rnn: {
        if (spec.lstm_units.empty()) {
            throw ConfigError("RNN needs at least one LSTM layer");
        }
        std::size_t width = spec.n_mfcc;
        for (std::size_t i = 0; i < spec.lstm_units.size(); ++i) {
            const bool last = i + 1 == spec.lstm_units.size();
            net->emplace<Lstm>(width, spec.lstm_units[i], !last);
            width = spec.lstm_units[i];
        }
        net->emplace<Dense>(width, spec.rnn_dense);
        net->emplace<Relu>();
        net->emplace<Dense>(spec.rnn_dense, spec.n_classes);
        break;
    }
    }

    net->output_shape({spec.frames, spec.n_mfcc});
    std::mt19937_64 rng(derive_seed(seed, "init"));
    net->initialize(rng);
    return net;
}

// --- persistence ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'L', 'I', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "model files store little-endian float64");

json spec_to_json(const ModelSpec& s)
{
    return json{{"kind", to_string(s.kind)},     {"frames", s.frames},
                {"n_mfcc", s.n_mfcc},            {"n_classes", s.n_classes},
                {"ann_hidden", s.ann_hidden},    {"dropout", s.dropout},
                {"cnn_filters", s.cnn_filters},  {"cnn_kernel", s.cnn_kernel},
                {"cnn_blocks", s.cnn_blocks},    {"cnn_dense", s.cnn_dense},
                {"lstm_units", s.lstm_units},    {"rnn_dense", s.rnn_dense}};
}

ModelSpec spec_from_json(const json& j)
{
    ModelSpec s;
    s.kind = parse_model_kind(j.at("kind").get<std::string>());
    s.frames = j.at("frames").get<std::size_t>();
    s.n_mfcc = j.at("n_mfcc").get<std::size_t>();
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.ann_hidden = j.at("ann_hidden").get<std::vector<std::size_t>>();
    s.dropout = j.at("dropout").get<double>();
    s.cnn_filters = j.at("cnn_filters").get<std::size_t>();
    s.cnn_kernel = j.at("cnn_kernel").get<std::size_t>();
    s.cnn_blocks = j.at("cnn_blocks").get<std::size_t>();
    s.cnn_dense = j.at("cnn_dense").get<std::size_t>();
    s.lstm_units = j.at("lstm_units").get<std::vector<std::size_t>>();
    s.rnn_dense = j.at("rnn_dense").get<std::size_t>();
    return s;
}

json mfcc_to_json(const features::MfccConfig& c)
{
    return json{{"frame_len", c.frame_len}, {"hop", c.hop},
                {"n_mels", c.n_mels},       {"n_mfcc", c.n_mfcc},
                {"fmin", c.fmin},           {"fmax", c.fmax ? json(*c.fmax) : json(nullptr)},
                {"log_floor", c.log_floor}};
}

features::MfccConfig mfcc_from_json(const json& j)
{
    features::MfccConfig c;
    c.frame_len = j.at("frame_len").get<std::size_t>();
    c.hop = j.at("hop").get<std::size_t>();
    c.n_mels = j.at("n_mels").get<std::size_t>();
    c.n_mfcc = j.at("n_mfcc").get<std::size_t>();
    c.fmin = j.at("fmin").get<double>();
    if (!j.at("fmax").is_null()) {
        c.fmax = j.at("fmax").get<double>();
    }
    c.log_floor = j.at("log_floor").get<double>();
    return c;
}

} // namespace

void save_classifier(const Classifier& c, const std::filesystem::path& path)
{
    if (!c.network) {
        throw ArgumentError("save_classifier: no network");
    }
    json params = json::array();
    for (const nn::Param* p : c.network->params()) {
        params.push_back(json{{"name", p->name}, {"shape", p->value.shape()}});
    }
    const json header{{"spec", spec_to_json(c.spec)},
                      {"normalizer", {{"mean", c.normalizer.mean}, {"std", c.normalizer.stddev}}},
                      {"mfcc_config", mfcc_to_json(c.mfcc)},
                      {"duration_s", c.duration_s},
                      {"sample_rate", c.sample_rate},
                      {"mapping", c.mapping},
                      {"params", params}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write model file: " + path.string());
    }
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t header_len = text.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const nn::Param* p : c.network->params()) {
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(nn::Real)));
    }
    if (!out) {
        throw DataError("write failed: " + path.string());
    }
}

Classifier load_classifier(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open model file: " + path.string());
    }
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("not a model file: " + path.string());
    }
    if (version != kFormatVersion) {
        throw FormatError("unsupported model file version " + std::to_string(version));
    }
    if (header_len > (std::uint64_t{1} << 30)) {
        throw FormatError("corrupt model header length");
    }
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));

    Classifier c;
    try {
        const json header = json::parse(text);
        c.spec = spec_from_json(header.at("spec"));
        c.normalizer.mean = header.at("normalizer").at("mean").get<std::vector<double>>();
        c.normalizer.stddev = header.at("normalizer").at("std").get<std::vector<double>>();
        c.mfcc = mfcc_from_json(header.at("mfcc_config"));
        c.duration_s = header.at("duration_s").get<double>();
        c.sample_rate = header.at("sample_rate").get<int>();
        c.mapping = header.at("mapping").get<std::vector<std::string>>();
        c.network = build(c.spec, 0);
        const auto params = c.network->params();
        const json& shapes = header.at("params");
        if (shapes.size() != params.size()) {
            throw FormatError("model file parameter count does not match its architecture");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (shapes[i].at("shape").get<nn::Shape>() != params[i]->value.shape()) {
                throw FormatError("model file parameter " + std::to_string(i) +
                                  " has an unexpected shape");
            }
            in.read(reinterpret_cast<char*>(params[i]->value.data()),
                    static_cast<std::streamsize>(params[i]->value.size() * sizeof(nn::Real)));
        }
    } catch (const json::exception& ex) {
        throw FormatError("malformed model header in " + path.string() + ": " + ex.what());
    }
    if (!in) {
        throw FormatError("truncated model file: " + path.string());
    }
    return c;
}

// --- features to samples ----------------------------------------------------

features::NormalizerStats fit_normalizer(const dataset::Manifest& m,
                                         std::span<const std::size_t> indices)
{
    std::vector<const std::vector<float>*> mats;
    mats.reserve(indices.size());
    for (const std::size_t i : indices) {
        mats.push_back(&m.entries.at(i).mfcc);
    }
    return features::fit_normalizer(std::span<const std::vector<float>* const>(mats), m.coeffs);
}

nn::Samples make_samples(const dataset::Manifest& m, std::span<const std::size_t> indices,
                         const features::NormalizerStats& stats)
{
    if (stats.mean.size() != m.coeffs) {
        throw ShapeError("normalizer does not match manifest coefficients");
    }
    nn::Samples s;
    s.sample_shape = {m.frames, m.coeffs};
    const std::size_t n = m.frames * m.coeffs;
    s.features.resize(indices.size() * n);
    s.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const dataset::Entry& e = m.entries.at(indices[k]);
        nn::Real* dst = s.features.data() + k * n;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = i % m.coeffs;
            dst[i] = (static_cast<double>(e.mfcc[i]) - stats.mean[c]) / stats.stddev[c];
        }
        s.labels.push_back(e.label);
    }
    return s;
}

// --- prediction -------------------------------------------------------------

std::vector<double> predict_segment(Classifier& c, const features::MfccMatrix& mfcc)
{
    if (mfcc.frames != c.spec.frames || mfcc.coeffs != c.spec.n_mfcc) {
        throw ShapeError("segment MFCC is " + std::to_string(mfcc.frames) + "x" +
                         std::to_string(mfcc.coeffs) + " but the model expects " +
                         std::to_string(c.spec.frames) + "x" + std::to_string(c.spec.n_mfcc));
    }
    const features::MfccMatrix norm = features::apply_normalizer(mfcc, c.normalizer);
    const nn::Tensor x({1, norm.frames, norm.coeffs}, norm.values);
    const nn::Tensor probs = nn::softmax(c.network->forward(x, false));
    return {probs.values().begin(), probs.values().end()};
}

TrackPrediction predict_track(Classifier& c, const audio::AudioClip& clip)
{
    const audio::AudioClip at_rate = audio::resample(clip, c.sample_rate);
    const auto segments = audio::segment(at_rate, c.duration_s);
    if (segments.empty()) {
        throw ArgumentError("clip shorter than one segment (" +
                            std::to_string(clip.duration_seconds()) + " s < " +
                            std::to_string(c.duration_s) + " s)");
    }
    const features::MfccExtractor extractor(c.mfcc, c.sample_rate);
    const std::size_t classes = c.spec.n_classes;

    TrackPrediction out;
    out.vote_counts.assign(classes, 0);
    out.mean_probs.assign(classes, 0.0);
    for (const auto& seg : segments) {
        std::vector<double> probs = predict_segment(c, extractor.compute(seg.samples));
        const auto arg = static_cast<std::size_t>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        ++out.vote_counts[arg];
        for (std::size_t k = 0; k < classes; ++k) {
            out.mean_probs[k] += probs[k];
        }
        out.per_segment.push_back(std::move(probs));
    }
    for (double& p : out.mean_probs) {
        p /= static_cast<double>(segments.size());
    }

    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
        if (out.vote_counts[k] > out.vote_counts[best] ||
            (out.vote_counts[k] == out.vote_counts[best] && out.mean_probs[k] > out.mean_probs[best])) {
            best = k;
        }
    }
    out.label = static_cast<int>(best);
    out.class_name = best < c.mapping.size() ? c.mapping[best] : std::to_string(best);
    return out;
}

} // namespace nli::models
