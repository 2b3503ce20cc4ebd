// SPDX-License-Identifier: Apache-2.0
#include "nli/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "nli/error.hpp"
#include "nli/parallel.hpp"

namespace nli::dataset {

using nlohmann::json;

std::vector<std::size_t> Manifest::class_counts() const
{
    std::vector<std::size_t> counts(mapping.size(), 0);
    for (const Entry& e : entries) {
        if (e.label >= 0 && static_cast<std::size_t>(e.label) < counts.size()) {
            ++counts[static_cast<std::size_t>(e.label)];
        }
    }
    return counts;
}

std::vector<int> Manifest::labels() const
{
    std::vector<int> out;
    out.reserve(entries.size());
    for (const Entry& e : entries) {
        out.push_back(e.label);
    }
    return out;
}

void Manifest::validate() const
{
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= mapping.size()) {
            throw DataError("manifest entry " + std::to_string(i) + " has label " +
                            std::to_string(e.label) + " outside the class mapping");
        }
        if (e.mfcc.size() != frames * coeffs) {
            throw DataError("manifest entry " + std::to_string(i) +
                            " does not match the shared matrix shape " + std::to_string(frames) +
                            "x" + std::to_string(coeffs));
        }
    }
}

std::vector<int> labels_of(const Manifest& m, std::span<const std::size_t> indices)
{
    std::vector<int> out;
    out.reserve(indices.size());
    for (const std::size_t i : indices) {
        out.push_back(m.entries.at(i).label);
    }
    return out;
}

// --- serialization ----------------------------------------------------------

namespace {

json config_to_json(const features::MfccConfig& c, int sample_rate)
{
    return json{{"frame_len", c.frame_len},
                {"hop", c.hop},
                {"n_fft_bins", c.n_fft_bins()},
                {"n_mels", c.n_mels},
                {"n_mfcc", c.n_mfcc},
                {"fmin", c.fmin},
                {"fmax", c.fmax ? json(*c.fmax) : json(nullptr)},
                {"log_floor", c.log_floor},
                {"window", "hann"},
                {"sample_rate", sample_rate}};
}

features::MfccConfig config_from_json(const json& j, int& sample_rate)
{
    features::MfccConfig c;
    c.frame_len = j.at("frame_len").get<std::size_t>();
    c.hop = j.at("hop").get<std::size_t>();
    c.n_mels = j.at("n_mels").get<std::size_t>();
    c.n_mfcc = j.at("n_mfcc").get<std::size_t>();
    c.fmin = j.at("fmin").get<double>();
    if (j.contains("fmax") && !j.at("fmax").is_null()) {
        c.fmax = j.at("fmax").get<double>();
    }
    c.log_floor = j.at("log_floor").get<double>();
    sample_rate = j.value("sample_rate", audio::kProcessingRate);
    return c;
}

} // namespace

void write_manifest(const Manifest& m, const std::filesystem::path& path)
{
    m.validate();
    json entries = json::array();
    for (const Entry& e : m.entries) {
        json rows = json::array();
        for (std::size_t t = 0; t < m.frames; ++t) {
            rows.push_back(std::vector<float>(e.mfcc.begin() + static_cast<std::ptrdiff_t>(t * m.coeffs),
                                              e.mfcc.begin() + static_cast<std::ptrdiff_t>((t + 1) * m.coeffs)));
        }
        entries.push_back(json{{"mfcc", std::move(rows)},
                               {"label", e.label},
                               {"speaker_id", e.speaker_id},
                               {"source_path", e.source_path},
                               {"segment_index", e.segment_index}});
    }
    const json doc{{"mapping", m.mapping},
                   {"duration_s", m.duration_s},
                   {"mfcc_config", config_to_json(m.mfcc_config, m.sample_rate)},
                   {"entries", std::move(entries)}};

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write manifest: " + path.string());
    }
    out << doc.dump();
}

Manifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest: " + path.string());
    }
    Manifest m;
    try {
        const json doc = json::parse(in);
        m.mapping = doc.at("mapping").get<std::vector<std::string>>();
        m.duration_s = doc.at("duration_s").get<double>();
        m.mfcc_config = config_from_json(doc.at("mfcc_config"), m.sample_rate);
        const json& entries = doc.at("entries");
        m.entries.reserve(entries.size());
        for (const json& je : entries) {
            Entry e;
            const json& rows = je.at("mfcc");
            const std::size_t frames = rows.size();
            const std::size_t coeffs = frames == 0 ? 0 : rows.front().size();
            if (m.entries.empty()) {
                m.frames = frames;
                m.coeffs = coeffs;
            } else if (frames != m.frames || coeffs != m.coeffs) {
                throw DataError("manifest entries have inconsistent MFCC shapes");
            }
            e.mfcc.reserve(frames * coeffs);
            for (const json& row : rows) {
                if (row.size() != coeffs) {
                    throw DataError("ragged MFCC matrix in manifest");
                }
                for (const json& v : row) {
                    e.mfcc.push_back(v.get<float>());
                }
            }
            e.label = je.at("label").get<int>();
            e.speaker_id = je.at("speaker_id").get<std::string>();
            e.source_path = je.at("source_path").get<std::string>();
            e.segment_index = je.at("segment_index").get<std::size_t>();
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        throw DataError("malformed manifest " + path.string() + ": " + ex.what());
    }
    m.validate();
    return m;
}

// --- building ---------------------------------------------------------------

std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& item : std::filesystem::directory_iterator(dir)) {
        if (!item.is_regular_file()) {
            continue;
        }
        std::string ext = item.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".wav") {
            files.push_back(item.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

Manifest build_manifest(const std::map<std::string, std::filesystem::path>& labeled_dirs,
                        const BuildOptions& opts, const std::vector<std::string>& mapping)
{
    opts.mfcc.validate(opts.sample_rate);
    audio::segment_length(opts.duration_s, opts.sample_rate);

    struct Job {
        std::filesystem::path path;
        int label;
    };
    std::vector<Job> jobs;
    // Iterate in mapping order so the entry order is independent of map ordering.
    for (std::size_t label = 0; label < mapping.size(); ++label) {
        const auto it = labeled_dirs.find(mapping[label]);
        if (it == labeled_dirs.end()) {
            continue;
        }
        for (auto& p : list_wavs(it->second)) {
            jobs.push_back({std::move(p), static_cast<int>(label)});
        }
    }
    for (const auto& [name, dir] : labeled_dirs) {
        if (std::find(mapping.begin(), mapping.end(), name) == mapping.end()) {
            throw DataError("class '" + name + "' is not in the class mapping");
        }
    }

    const features::MfccExtractor extractor(opts.mfcc, opts.sample_rate);
    std::vector<std::vector<Entry>> per_file(jobs.size());
    std::mutex log_mutex;
    parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
        const Job& job = jobs[i];
        audio::AudioClip clip;
        try {
            clip = audio::load_wav(job.path, opts.sample_rate);
        } catch (const Error& ex) {
            std::lock_guard lock(log_mutex);
            std::cerr << "warning: skipping " << job.path.string() << ": " << ex.what() << '\n';
            return;
        }
        clip.label = job.label;
        const auto segments = audio::segment(clip, opts.duration_s, opts.pad_tail);
        for (const auto& seg : segments) {
            if (seg.samples.size() < opts.mfcc.frame_len) {
                throw ConfigError("segment duration " + std::to_string(opts.duration_s) +
                                  " s is shorter than one MFCC frame");
            }
            const features::MfccMatrix feats = extractor.compute(seg.samples);
            Entry e;
            e.mfcc.assign(feats.values.begin(), feats.values.end());
            e.label = job.label;
            e.speaker_id = seg.speaker_id;
            e.source_path = seg.parent;
            e.segment_index = seg.index;
            per_file[i].push_back(std::move(e));
        }
    });

    Manifest m;
    m.mapping = mapping;
    m.duration_s = opts.duration_s;
    m.sample_rate = opts.sample_rate;
    m.mfcc_config = opts.mfcc;
    m.coeffs = opts.mfcc.n_mfcc;
    m.frames = features::frame_count(audio::segment_length(opts.duration_s, opts.sample_rate),
                                     opts.mfcc);
    for (auto& entries : per_file) {
        for (auto& e : entries) {
            m.entries.push_back(std::move(e));
        }
    }
    if (m.entries.empty()) {
        throw DataError("no segments produced: every file was unreadable or shorter than " +
                        std::to_string(opts.duration_s) + " s");
    }
    m.validate();
    return m;
}

// --- splitting --------------------------------------------------------------

namespace {

std::size_t round_count(double x)
{
    return static_cast<std::size_t>(std::llround(x));
}

void check_spec(const SplitSpec& spec)
{
    const auto& in = spec.inner;
    if (spec.holdout_fraction < 0.0 || spec.holdout_fraction >= 1.0) {
        throw ArgumentError("holdout_fraction must be in [0, 1)");
    }
    if (in.train <= 0.0 || in.val <= 0.0 || in.test < 0.0 ||
        std::abs(in.train + in.val + in.test - 1.0) > 1e-9) {
        throw ArgumentError("inner split fractions must be positive (test may be 0) and sum to 1");
    }
}

void require_nonempty(const Split& s, const SplitSpec& spec)
{
    if (s.train.empty() || s.val.empty() || (spec.holdout_fraction > 0.0 && s.final_test.empty()) ||
        (spec.inner.test > 0.0 && s.inner_test.empty())) {
        throw DataError("split produced an empty partition (train " + std::to_string(s.train.size()) +
                        ", val " + std::to_string(s.val.size()) + ", final test " +
                        std::to_string(s.final_test.size()) + ", inner test " +
                        std::to_string(s.inner_test.size()) + ")");
    }
}

Split split_segments(const Manifest& m, const SplitSpec& spec)
{
    std::vector<std::size_t> order(m.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_hold = round_count(static_cast<double>(m.size()) * spec.holdout_fraction);
    const std::size_t rest = m.size() - n_hold;
    const std::size_t n_train = round_count(static_cast<double>(rest) * spec.inner.train);
    const std::size_t n_val = spec.inner.test > 0.0
                                  ? round_count(static_cast<double>(rest) * spec.inner.val)
                                  : rest - n_train;
    if (n_train + n_val > rest) {
        throw DataError("too few entries to split");
    }

    Split s;
    auto it = order.begin();
    auto take = [&](std::vector<std::size_t>& dst, std::size_t n) {
        dst.assign(it, it + static_cast<std::ptrdiff_t>(n));
        it += static_cast<std::ptrdiff_t>(n);
    };
    take(s.final_test, n_hold);
    take(s.train, n_train);
    take(s.val, n_val);
    take(s.inner_test, rest - n_train - n_val);
    return s;
}

Split split_speakers(const Manifest& m, const SplitSpec& spec)
{
    // Partition slots: 0 final test, 1 train, 2 val, 3 inner test.
    const double h = spec.holdout_fraction;
    const std::array<double, 4> fractions = {h, (1.0 - h) * spec.inner.train,
                                             (1.0 - h) * spec.inner.val,
                                             (1.0 - h) * spec.inner.test};
    std::vector<std::size_t> active;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
        if (fractions[p] > 0.0) {
            active.push_back(p);
        }
    }
    // Smallest partitions receive their guaranteed first speaker first.
    std::stable_sort(active.begin(), active.end(),
                     [&](std::size_t a, std::size_t b) { return fractions[a] < fractions[b]; });

    std::mt19937_64 rng(spec.seed);
    std::array<std::vector<std::size_t>, 4> parts;
    for (std::size_t label = 0; label < m.mapping.size(); ++label) {
        std::map<std::string, std::vector<std::size_t>> by_speaker;
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (m.entries[i].label == static_cast<int>(label)) {
                by_speaker[m.entries[i].speaker_id].push_back(i);
            }
        }
        if (by_speaker.empty()) {
            continue;
        }
        if (by_speaker.size() < active.size()) {
            throw DataError("speaker-disjoint split infeasible: class '" + m.mapping[label] +
                            "' has " + std::to_string(by_speaker.size()) + " speaker(s) but " +
                            std::to_string(active.size()) + " partitions need one each");
        }
        std::vector<const std::vector<std::size_t>*> speakers;
        for (const auto& [id, idx] : by_speaker) {
            speakers.push_back(&idx);
        }
        std::shuffle(speakers.begin(), speakers.end(), rng);

        std::size_t total = 0;
        for (const auto* s : speakers) {
            total += s->size();
        }
        std::array<double, 4> assigned{};
        std::size_t next = 0;
        for (const std::size_t p : active) {
            const auto* s = speakers[next++];
            parts[p].insert(parts[p].end(), s->begin(), s->end());
            assigned[p] += static_cast<double>(s->size());
        }
        for (; next < speakers.size(); ++next) {
            std::size_t best = active.front();
            double best_deficit = -1e300;
            for (const std::size_t p : active) {
                const double deficit = fractions[p] * static_cast<double>(total) - assigned[p];
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    best = p;
                }
            }
            const auto* s = speakers[next];
            parts[best].insert(parts[best].end(), s->begin(), s->end());
            assigned[best] += static_cast<double>(s->size());
        }
    }
    Split s;
    s.final_test = std::move(parts[0]);
    s.train = std::move(parts[1]);
    s.val = std::move(parts[2]);
    s.inner_test = std::move(parts[3]);
    for (auto* v : {&s.final_test, &s.train, &s.val, &s.inner_test}) {
        std::sort(v->begin(), v->end());
    }
    return s;
}

} // namespace

Split split(const Manifest& m, const SplitSpec& spec)
{
    check_spec(spec);
    if (m.size() == 0) {
        throw DataError("cannot split an empty manifest");
    }
    Split s = spec.speaker_disjoint ? split_speakers(m, spec) : split_segments(m, spec);
    require_nonempty(s, spec);
    return s;
}

// --- balancing --------------------------------------------------------------

namespace {

struct TwoClasses {
    std::vector<std::size_t> minority;
    std::vector<std::size_t> majority;
};

TwoClasses group_two_classes(std::span<const int> labels)
{
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        groups[labels[i]].push_back(i);
    }
    if (groups.size() != 2) {
        throw DataError("balancing needs exactly two classes present, found " +
                        std::to_string(groups.size()));
    }
    auto first = std::move(groups.begin()->second);
    auto second = std::move(std::next(groups.begin())->second);
    if (first.size() <= second.size()) {
        return {std::move(first), std::move(second)};
    }
    return {std::move(second), std::move(first)};
}

} // namespace

std::vector<std::size_t> oversample(std::span<const int> labels, std::uint64_t seed)
{
    const TwoClasses g = group_two_classes(labels);
    std::vector<std::size_t> out(labels.size());
    std::iota(out.begin(), out.end(), std::size_t{0});
    const std::size_t deficit = g.majority.size() - g.minority.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, g.minority.size() - 1);
    out.reserve(labels.size() + deficit);
    for (std::size_t i = 0; i < deficit; ++i) {
        out.push_back(g.minority[pick(rng)]);
    }
    return out;
}

std::vector<std::size_t> undersample(std::span<const int> labels, std::uint64_t seed)
{
    TwoClasses g = group_two_classes(labels);
    const std::size_t keep = g.minority.size();
    // Partial Fisher-Yates: the first `keep` slots become a uniform subset.
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, g.majority.size() - 1);
        std::swap(g.majority[i], g.majority[pick(rng)]);
    }
    std::vector<std::size_t> out = std::move(g.minority);
    out.insert(out.end(), g.majority.begin(), g.majority.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(out.begin(), out.end());
    return out;
}

std::string to_string(Sampling s)
{
    switch (s) {
    case Sampling::none:
        return "none";
    case Sampling::oversample:
        return "oversample";
    case Sampling::undersample:
        return "undersample";
    }
    return "none";
}

Sampling parse_sampling(const std::string& s)
{
    if (s == "none") {
        return Sampling::none;
    }
    if (s == "oversample" || s == "over") {
        return Sampling::oversample;
    }
    if (s == "undersample" || s == "under") {
        return Sampling::undersample;
    }
    throw ArgumentError("unknown sampling '" + s + "' (expected none, oversample or undersample)");
}

std::vector<std::size_t> balance(const Manifest& m, std::span<const std::size_t> indices,
                                 Sampling s, std::uint64_t seed)
{
    if (s == Sampling::none) {
        return {indices.begin(), indices.end()};
    }
    const std::vector<int> labels = labels_of(m, indices);
    const std::vector<std::size_t> pos =
        s == Sampling::oversample ? oversample(labels, seed) : undersample(labels, seed);
    std::vector<std::size_t> out;
    out.reserve(pos.size());
    for (const std::size_t p : pos) {
        out.push_back(indices[p]);
    }
    return out;
}

// --- k-fold -----------------------------------------------------------------

std::vector<Fold> kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed)
{
    if (k < 2) {
        throw ArgumentError("k-fold needs k >= 2");
    }
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        groups[labels[i]].push_back(i);
    }
    if (groups.empty()) {
        throw DataError("k-fold on an empty set");
    }
    for (const auto& [label, idx] : groups) {
        if (idx.size() < k) {
            throw ArgumentError("k=" + std::to_string(k) + " exceeds the " +
                                std::to_string(idx.size()) + " entries of class " +
                                std::to_string(label));
        }
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> fold_of(labels.size());
    // Round-robin within each shuffled class; a running offset keeps fold
    // sizes within one of each other overall.
    std::size_t offset = 0;
    for (auto& [label, idx] : groups) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            fold_of[idx[j]] = (offset + j) % k;
        }
        offset = (offset + idx.size()) % k;
    }

    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t f = 0; f < k; ++f) {
            (f == fold_of[i] ? folds[f].val : folds[f].train).push_back(i);
        }
    }
    return folds;
}

std::vector<Fold> kfold(const Manifest& m, std::size_t k, std::uint64_t seed)
{
    const std::vector<int> labels = m.labels();
    return kfold(labels, k, seed);
}

} // namespace nli::dataset
