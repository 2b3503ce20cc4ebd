// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <climits>
#include <map>
#include <set>

#include "nli/audio_io.hpp"
#include "nli/dataset.hpp"
#include "nli/error.hpp"
#include "test_util.hpp"

using namespace nli;
using namespace nli::dataset;

namespace {

/// `per_class[c]` entries of class c, spread over `speakers` speakers each.
Manifest synthetic_manifest(const std::vector<std::size_t>& per_class, std::size_t speakers = 10)
{
    Manifest m;
    m.duration_s = 5.0;
    m.frames = 2;
    m.coeffs = 3;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        for (std::size_t i = 0; i < per_class[c]; ++i) {
            Entry e;
            e.label = static_cast<int>(c);
            e.speaker_id = "c" + std::to_string(c) + "_s" + std::to_string(i % speakers);
            e.source_path = e.speaker_id + ".wav";
            e.segment_index = i / speakers;
            e.mfcc.assign(6, static_cast<float>(i) * 0.5f + static_cast<float>(c));
            m.entries.push_back(std::move(e));
        }
    }
    return m;
}

std::vector<std::size_t> sorted_union(const Split& s)
{
    std::vector<std::size_t> all;
    for (const auto* v : {&s.final_test, &s.train, &s.val, &s.inner_test}) {
        all.insert(all.end(), v->begin(), v->end());
    }
    std::sort(all.begin(), all.end());
    return all;
}

std::vector<std::size_t> counts_of(std::span<const int> labels, std::span<const std::size_t> pos)
{
    std::vector<std::size_t> c(2, 0);
    for (std::size_t p : pos) {
        ++c[static_cast<std::size_t>(labels[p])];
    }
    return c;
}

} // namespace

TEST_CASE("split sizes")
{
    const Manifest m = synthetic_manifest({500, 500});
    SUBCASE("train/val scheme")
    {
        const Split s = split(m, {0.10, InnerScheme::train_val(), 1, false});
        CHECK(s.final_test.size() == 100);
        CHECK(s.train.size() == 720);
        CHECK(s.val.size() == 180);
        CHECK(s.inner_test.empty());
    }
    SUBCASE("train/val/test scheme")
    {
        const Split s = split(m, {0.10, InnerScheme::train_val_test(), 1, false});
        CHECK(s.final_test.size() == 100);
        CHECK(s.train.size() == 720);
        CHECK(s.val.size() == 90);
        CHECK(s.inner_test.size() == 90);
    }
}

TEST_CASE("splits partition the manifest and are seed-deterministic")
{
    const Manifest m = synthetic_manifest({137, 251});
    for (bool disjoint : {false, true}) {
        CAPTURE(disjoint);
        for (std::uint64_t seed : {0u, 1u, 99u}) {
            const SplitSpec spec{0.10, InnerScheme::train_val_test(), seed, disjoint};
            const Split a = split(m, spec);
            const Split b = split(m, spec);
            CHECK(a.train == b.train);
            CHECK(a.val == b.val);
            CHECK(a.final_test == b.final_test);
            std::vector<std::size_t> expected(m.size());
            std::iota(expected.begin(), expected.end(), std::size_t{0});
            CHECK(sorted_union(a) == expected);
        }
        const Split x = split(m, {0.10, InnerScheme::train_val_test(), 1, disjoint});
        const Split y = split(m, {0.10, InnerScheme::train_val_test(), 2, disjoint});
        CHECK(x.final_test != y.final_test);
    }
}

TEST_CASE("speaker-disjoint split keeps each speaker in one partition")
{
    const Manifest m = synthetic_manifest({300, 200}, 20);
    const Split s = split(m, {0.10, InnerScheme::train_val_test(), 5, true});
    std::map<std::string, int> where;
    int part = 0;
    for (const auto* v : {&s.final_test, &s.train, &s.val, &s.inner_test}) {
        for (std::size_t i : *v) {
            const auto& spk = m.entries[i].speaker_id;
            auto [it, fresh] = where.emplace(spk, part);
            CHECK(it->second == part);
        }
        CHECK_FALSE(v->empty());
        ++part;
    }
    // Proportions stay roughly on target.
    CHECK(static_cast<double>(s.train.size()) / 500.0 == doctest::Approx(0.72).epsilon(0.15));

    SUBCASE("too few speakers is reported")
    {
        const Manifest few = synthetic_manifest({30, 30}, 2);
        try {
            split(few, {0.10, InnerScheme::train_val(), 0, true});
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("infeasible") != std::string::npos);
        }
    }
}

TEST_CASE("split rejects bad fractions")
{
    const Manifest m = synthetic_manifest({10, 10});
    CHECK_THROWS_AS(split(m, {1.5, InnerScheme::train_val(), 0, false}), ArgumentError);
    CHECK_THROWS_AS(split(m, {0.1, {0.5, 0.1, 0.1}, 0, false}), ArgumentError);
    CHECK_THROWS_AS(split(Manifest{}, {0.1, InnerScheme::train_val(), 0, false}), DataError);
}

TEST_CASE("oversample")
{
    const std::vector<int> labels = {1, 0, 1, 1, 0, 1, 1, 0, 1, 1}; // 3 vs 7
    const auto out = oversample(labels, 42);
    REQUIRE(out.size() == 14);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(out[i] == i);
    }
    // Reference draw: uniform picks among the minority positions {1, 4, 7}.
    const std::vector<std::size_t> minority = {1, 4, 7};
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::size_t> pick(0, 2);
    for (std::size_t i = 10; i < 14; ++i) {
        CHECK(out[i] == minority[pick(rng)]);
    }
    const auto c = counts_of(labels, out);
    CHECK(c[0] == 7);
    CHECK(c[1] == 7);
    CHECK(oversample(labels, 42) == out);
}

TEST_CASE("undersample")
{
    std::vector<int> labels(14, 0); // 10 vs 4
    for (std::size_t i : {2u, 5u, 9u, 13u}) {
        labels[i] = 1;
    }
    const auto out = undersample(labels, 3);
    REQUIRE(out.size() == 8);
    CHECK(std::is_sorted(out.begin(), out.end()));
    CHECK(std::adjacent_find(out.begin(), out.end()) == out.end());
    const auto c = counts_of(labels, out);
    CHECK(c[0] == 4);
    CHECK(c[1] == 4);
    for (std::size_t i : {2u, 5u, 9u, 13u}) {
        CHECK(std::find(out.begin(), out.end(), i) != out.end());
    }
    CHECK(undersample(labels, 3) == out);
}

TEST_CASE("paper-scale balancing counts: 39,083 vs 45,340")
{
    std::vector<int> labels(39083, 0);
    labels.resize(39083 + 45340, 1);
    std::shuffle(labels.begin(), labels.end(), std::mt19937_64(1));
    const auto over = oversample(labels, 7);
    const auto oc = counts_of(labels, over);
    CHECK(oc[0] == 45340);
    CHECK(oc[1] == 45340);
    const auto under = undersample(labels, 7);
    const auto uc = counts_of(labels, under);
    CHECK(uc[0] == 39083);
    CHECK(uc[1] == 39083);
}

TEST_CASE("balancing property over randomized label sets")
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<std::size_t> size(1, 60);
        const std::size_t a = size(rng);
        const std::size_t b = size(rng);
        std::vector<int> labels(a, 0);
        labels.resize(a + b, 1);
        std::shuffle(labels.begin(), labels.end(), rng);
        const auto over = counts_of(labels, oversample(labels, rng()));
        CHECK(over[0] == std::max(a, b));
        CHECK(over[1] == std::max(a, b));
        const auto under_pos = undersample(labels, rng());
        const auto under = counts_of(labels, under_pos);
        CHECK(under[0] == std::min(a, b));
        CHECK(under[1] == std::min(a, b));
        CHECK(std::set<std::size_t>(under_pos.begin(), under_pos.end()).size() == under_pos.size());
    }
}

TEST_CASE("balancing needs two classes")
{
    const std::vector<int> one = {0, 0, 0};
    CHECK_THROWS_AS(oversample(one, 0), DataError);
    CHECK_THROWS_AS(undersample(one, 0), DataError);
}

TEST_CASE("balance maps positions back to manifest indices")
{
    const Manifest m = synthetic_manifest({20, 50});
    const std::vector<std::size_t> subset = {0, 1, 2, 25, 30, 31, 40, 60};
    CHECK(balance(m, subset, Sampling::none, 0) == subset);
    const auto over = balance(m, subset, Sampling::oversample, 3);
    CHECK(over.size() == 10);
    for (std::size_t i : over) {
        CHECK(std::find(subset.begin(), subset.end(), i) != subset.end());
    }
    CHECK(balance(m, subset, Sampling::undersample, 3).size() == 6);
    CHECK(parse_sampling(to_string(Sampling::undersample)) == Sampling::undersample);
    CHECK_THROWS_AS(parse_sampling("smote"), ArgumentError);
}

TEST_CASE("stratified k-fold")
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<std::size_t> size(10, 80);
        const std::size_t k = 2 + static_cast<std::size_t>(trial % 5);
        std::vector<int> labels(size(rng), 0);
        labels.resize(labels.size() + size(rng), 1);
        std::shuffle(labels.begin(), labels.end(), rng);
        const std::size_t n0 = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
        const std::size_t n1 = labels.size() - n0;
        const auto folds = kfold(labels, k, 5);
        REQUIRE(folds.size() == k);

        std::vector<std::size_t> all_val;
        for (const auto& f : folds) {
            all_val.insert(all_val.end(), f.val.begin(), f.val.end());
            // train and val partition the data.
            std::vector<std::size_t> both(f.train);
            both.insert(both.end(), f.val.begin(), f.val.end());
            std::sort(both.begin(), both.end());
            CHECK(both.size() == labels.size());
            CHECK(std::adjacent_find(both.begin(), both.end()) == both.end());
            // stratification: per-class share within one of n_c / k.
            const auto c = counts_of(labels, f.val);
            CHECK(std::abs(static_cast<double>(c[0]) - static_cast<double>(n0) / static_cast<double>(k)) < 1.0);
            CHECK(std::abs(static_cast<double>(c[1]) - static_cast<double>(n1) / static_cast<double>(k)) < 1.0);
        }
        // validation folds are disjoint and cover everything.
        std::sort(all_val.begin(), all_val.end());
        std::vector<std::size_t> expected(labels.size());
        std::iota(expected.begin(), expected.end(), std::size_t{0});
        CHECK(all_val == expected);
        // fold sizes differ by at most one.
        std::size_t lo = SIZE_MAX;
        std::size_t hi = 0;
        for (const auto& f : folds) {
            lo = std::min(lo, f.val.size());
            hi = std::max(hi, f.val.size());
        }
        CHECK(hi - lo <= 1);
    }
    const std::vector<int> tiny = {0, 1, 1, 1};
    CHECK_THROWS_AS(kfold(tiny, 2, 0), ArgumentError);
    CHECK_THROWS_AS(kfold(tiny, 1, 0), ArgumentError);
}

TEST_CASE("manifest JSON round-trip")
{
    testing::TempDir dir("dataset");
    Manifest m = synthetic_manifest({3, 4});
    m.mfcc_config.fmax = 8000.0;
    m.entries[2].mfcc[1] = 1.0e-7f;
    write_manifest(m, dir / "m.json");
    const Manifest back = read_manifest(dir / "m.json");
    CHECK(back == m);
    CHECK(back.class_counts() == std::vector<std::size_t>{3, 4});

    SUBCASE("malformed files raise DataError")
    {
        std::ofstream(dir / "bad.json") << "{ not json";
        CHECK_THROWS_AS(read_manifest(dir / "bad.json"), DataError);
        std::ofstream(dir / "shape.json") << R"({"mapping":["a","b"],"duration_s":1,"mfcc_config":{},"entries":[{"mfcc":[[1,2]],"label":5,"speaker_id":"x","source_path":"x","segment_index":0}]})";
        CHECK_THROWS_AS(read_manifest(dir / "shape.json"), Error);
    }
}

TEST_CASE("build_manifest from WAV directories")
{
    testing::TempDir dir("dataset");
    std::filesystem::create_directories(dir / "native");
    std::filesystem::create_directories(dir / "non_native");
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 0.1);
    auto make = [&](const std::filesystem::path& p, double seconds) {
        std::vector<double> s(static_cast<std::size_t>(seconds * 22050));
        for (double& v : s) {
            v = g(rng);
        }
        audio::write_wav(p, s, 22050);
    };
    make(dir / "native" / "spk_a.wav", 11.0);
    make(dir / "non_native" / "spk_b.wav", 10.2);
    std::ofstream(dir / "non_native" / "broken.wav") << "garbage";

    BuildOptions opts;
    opts.duration_s = 5.0;
    const Manifest m = build_manifest({{"native", dir / "native"}, {"non_native", dir / "non_native"}}, opts);
    CHECK(m.size() == 4);
    CHECK(m.frames == 212);
    CHECK(m.coeffs == 13);
    CHECK(m.class_counts() == std::vector<std::size_t>{2, 2});
    CHECK(m.entries[0].speaker_id == "spk_a");
    CHECK(m.entries[1].segment_index == 1);
    CHECK(m.entries[2].label == 1);

    SUBCASE("parallel build is identical")
    {
        BuildOptions par = opts;
        par.jobs = 4;
        CHECK(build_manifest({{"native", dir / "native"}, {"non_native", dir / "non_native"}}, par) == m);
    }
    SUBCASE("unknown class name")
    {
        CHECK_THROWS_AS(build_manifest({{"other", dir / "native"}}, opts), DataError);
    }
}
