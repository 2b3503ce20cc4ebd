// SPDX-License-Identifier: Apache-2.0
#include "nli/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nli/error.hpp"
#include "nli/parallel.hpp"
#include "nli/seeding.hpp"

namespace nli::experiments {

using nlohmann::json;
namespace fs = std::filesystem;

// --- configuration ----------------------------------------------------------

void GridConfig::validate() const
{
    if (durations.empty() || samplings.empty() || model_kinds.empty()) {
        throw ConfigError("grid axes must be non-empty");
    }
    for (const double d : durations) {
        if (!(d > 0.0)) {
            throw ConfigError("grid durations must be positive");
        }
    }
    std::set<std::string> ids;
    for (const CellId& c : enumerate_cells(*this)) {
        if (!ids.insert(c.str()).second) {
            throw ConfigError("duplicate grid cell " + c.str());
        }
    }
    if (cv.enabled && cv.k < 2) {
        throw ConfigError("cross-validation needs k >= 2");
    }
    run.train.validate();
    mfcc.validate(sample_rate);
}

namespace {

features::MfccConfig mfcc_from(const json& j, features::MfccConfig c)
{
    c.frame_len = j.value("frame_len", c.frame_len);
    c.hop = j.value("hop", c.hop);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.n_mfcc = j.value("n_mfcc", c.n_mfcc);
    c.fmin = j.value("fmin", c.fmin);
    if (j.contains("fmax") && !j.at("fmax").is_null()) {
        c.fmax = j.at("fmax").get<double>();
    }
    c.log_floor = j.value("log_floor", c.log_floor);
    return c;
}

json mfcc_to(const features::MfccConfig& c)
{
    return json{{"frame_len", c.frame_len}, {"hop", c.hop},   {"n_mels", c.n_mels},
                {"n_mfcc", c.n_mfcc},       {"fmin", c.fmin}, {"fmax", c.fmax ? json(*c.fmax) : json(nullptr)},
                {"log_floor", c.log_floor}};
}

} // namespace

GridConfig read_grid_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open grid config: " + path.string());
    }
    GridConfig cfg;
    try {
        const json j = json::parse(in);
        cfg.durations = j.value("durations", cfg.durations);
        if (j.contains("samplings")) {
            cfg.samplings.clear();
            for (const auto& s : j.at("samplings")) {
                cfg.samplings.push_back(dataset::parse_sampling(s.get<std::string>()));
            }
        }
        if (j.contains("models")) {
            cfg.model_kinds.clear();
            for (const auto& m : j.at("models")) {
                cfg.model_kinds.push_back(models::parse_model_kind(m.get<std::string>()));
            }
        }
        if (j.contains("cv")) {
            const json& cv = j.at("cv");
            cfg.cv.enabled = cv.value("enabled", cfg.cv.enabled);
            cfg.cv.k = cv.value("k", cfg.cv.k);
            cfg.cv.duration_s = cv.value("duration_s", cfg.cv.duration_s);
            if (cv.contains("sampling")) {
                cfg.cv.sampling = dataset::parse_sampling(cv.at("sampling").get<std::string>());
            }
        }
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
        cfg.data_root = j.value("data_root", std::string{});
        cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
        if (j.contains("mfcc")) {
            cfg.mfcc = mfcc_from(j.at("mfcc"), cfg.mfcc);
        }
        cfg.run.holdout_fraction = j.value("holdout_fraction", cfg.run.holdout_fraction);
        cfg.run.speaker_disjoint = j.value("speaker_disjoint", cfg.run.speaker_disjoint);
        cfg.run.balance_before_split = j.value("balance_before_split", cfg.run.balance_before_split);
        if (j.contains("train")) {
            const json& t = j.at("train");
            auto& tc = cfg.run.train;
            tc.batch_size = t.value("batch_size", tc.batch_size);
            tc.max_epochs = t.value("max_epochs", tc.max_epochs);
            tc.patience = t.value("patience", tc.patience);
            tc.adam.learning_rate = t.value("learning_rate", tc.adam.learning_rate);
        }
        if (j.contains("model")) {
            const json& m = j.at("model");
            auto& s = cfg.run.model_template;
            s.ann_hidden = m.value("ann_hidden", s.ann_hidden);
            s.dropout = m.value("dropout", s.dropout);
            s.cnn_filters = m.value("cnn_filters", s.cnn_filters);
            s.cnn_kernel = m.value("cnn_kernel", s.cnn_kernel);
            s.cnn_blocks = m.value("cnn_blocks", s.cnn_blocks);
            s.cnn_dense = m.value("cnn_dense", s.cnn_dense);
            s.lstm_units = m.value("lstm_units", s.lstm_units);
            s.rnn_dense = m.value("rnn_dense", s.rnn_dense);
        }
        cfg.jobs = j.value("jobs", cfg.jobs);
    } catch (const json::exception& ex) {
        throw ConfigError("malformed grid config " + path.string() + ": " + ex.what());
    }
    cfg.validate();
    return cfg;
}

void write_grid_config(const GridConfig& cfg, const fs::path& path)
{
    json samplings = json::array();
    for (const auto s : cfg.samplings) {
        samplings.push_back(dataset::to_string(s));
    }
    json kinds = json::array();
    for (const auto k : cfg.model_kinds) {
        kinds.push_back(models::to_string(k));
    }
    const auto& t = cfg.run.train;
    const auto& m = cfg.run.model_template;
    const json j{
        {"durations", cfg.durations},
        {"samplings", samplings},
        {"models", kinds},
        {"cv",
         {{"enabled", cfg.cv.enabled},
          {"k", cfg.cv.k},
          {"duration_s", cfg.cv.duration_s},
          {"sampling", dataset::to_string(cfg.cv.sampling)}}},
        {"master_seed", cfg.master_seed},
        {"data_root", cfg.data_root.string()},
        {"sample_rate", cfg.sample_rate},
        {"mfcc", mfcc_to(cfg.mfcc)},
        {"holdout_fraction", cfg.run.holdout_fraction},
        {"speaker_disjoint", cfg.run.speaker_disjoint},
        {"balance_before_split", cfg.run.balance_before_split},
        {"train",
         {{"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"learning_rate", t.adam.learning_rate}}},
        {"model",
         {{"ann_hidden", m.ann_hidden},
          {"dropout", m.dropout},
          {"cnn_filters", m.cnn_filters},
          {"cnn_kernel", m.cnn_kernel},
          {"cnn_blocks", m.cnn_blocks},
          {"cnn_dense", m.cnn_dense},
          {"lstm_units", m.lstm_units},
          {"rnn_dense", m.rnn_dense}}},
        {"jobs", cfg.jobs}};
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream(path) << j.dump(2) << '\n';
}

// --- cells ------------------------------------------------------------------

std::string format_duration(double seconds)
{
    std::ostringstream os;
    if (seconds == std::floor(seconds)) {
        os << static_cast<long long>(seconds);
    } else {
        os << seconds;
    }
    return os.str();
}

std::string CellId::str() const
{
    return models::to_string(model) + "_" + format_duration(duration_s) + "s_" +
           dataset::to_string(sampling);
}

std::vector<CellId> enumerate_cells(const GridConfig& cfg)
{
    std::vector<CellId> cells;
    for (const double d : cfg.durations) {
        for (const auto s : cfg.samplings) {
            for (const auto k : cfg.model_kinds) {
                cells.push_back({k, d, s});
            }
        }
    }
    return cells;
}

std::size_t experiment_count(const GridConfig& cfg)
{
    return enumerate_cells(cfg).size() + (cfg.cv.enabled ? cfg.model_kinds.size() : 0);
}

namespace {

dataset::Manifest balanced_copy(const dataset::Manifest& m, dataset::Sampling s, std::uint64_t seed)
{
    std::vector<std::size_t> all(m.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto keep = dataset::balance(m, all, s, seed);
    dataset::Manifest out = m;
    out.entries.clear();
    out.entries.reserve(keep.size());
    for (const std::size_t i : keep) {
        out.entries.push_back(m.entries[i]);
    }
    return out;
}

struct Prepared {
    std::optional<dataset::Manifest> balanced;
    dataset::Split split;

    const dataset::Manifest& manifest(const dataset::Manifest& original) const
    {
        return balanced ? *balanced : original;
    }
};

// Split (and, in the leak-compatible mode, pre-balance) for a cell.
Prepared prepare(const dataset::Manifest& manifest, const CellId& cell, const RunConfig& run,
                 std::uint64_t seed)
{
    Prepared p;
    if (run.balance_before_split && cell.sampling != dataset::Sampling::none) {
        p.balanced = balanced_copy(manifest, cell.sampling, derive_seed(seed, "balance"));
    }
    dataset::SplitSpec spec;
    spec.holdout_fraction = run.holdout_fraction;
    spec.inner = models::inner_scheme_for(cell.model);
    spec.seed = derive_seed(seed, "split");
    spec.speaker_disjoint = run.speaker_disjoint;
    p.split = dataset::split(p.manifest(manifest), spec);
    return p;
}

struct Fit {
    models::Classifier classifier;
    nn::TrainResult train;
    std::size_t train_count = 0;
};

Fit fit_model(const dataset::Manifest& m, std::span<const std::size_t> train_idx,
              std::span<const std::size_t> val_idx, models::ModelKind kind, const RunConfig& run,
              std::uint64_t seed)
{
    Fit f;
    auto& c = f.classifier;
    c.spec = run.model_template;
    c.spec.kind = kind;
    c.spec.frames = m.frames;
    c.spec.n_mfcc = m.coeffs;
    c.spec.n_classes = m.mapping.size();
    c.mfcc = m.mfcc_config;
    c.duration_s = m.duration_s;
    c.sample_rate = m.sample_rate;
    c.mapping = m.mapping;
    c.normalizer = models::fit_normalizer(m, train_idx);
    c.network = models::build(c.spec, derive_seed(seed, "model"));

    const nn::Samples train_set = models::make_samples(m, train_idx, c.normalizer);
    const nn::Samples val_set = models::make_samples(m, val_idx, c.normalizer);
    nn::TrainConfig tc = run.train;
    tc.seed = derive_seed(seed, "train");
    f.train = nn::train(*c.network, train_set, val_set, tc);
    f.train_count = train_idx.size();
    return f;
}

} // namespace

CellOutput run_cell(const dataset::Manifest& manifest, const CellId& cell, const RunConfig& run,
                    std::uint64_t seed)
{
    const auto start = std::chrono::steady_clock::now();
    Prepared p = prepare(manifest, cell, run, seed);
    const dataset::Manifest& m = p.manifest(manifest);

    const std::vector<std::size_t> train_idx =
        run.balance_before_split
            ? p.split.train
            : dataset::balance(m, p.split.train, cell.sampling, derive_seed(seed, "balance"));
    Fit fit = fit_model(m, train_idx, p.split.val, cell.model, run, seed);

    const nn::Samples test_set = models::make_samples(m, p.split.final_test, fit.classifier.normalizer);
    const nn::Evaluation ev = nn::evaluate(*fit.classifier.network, test_set, m.mapping.size());

    CellOutput out;
    auto& r = out.result;
    r.cell = cell;
    r.final_test_accuracy = ev.accuracy;
    r.best_val_loss = fit.train.best_val_loss;
    r.epochs_run = fit.train.history.size();
    r.epoch_curves = fit.train.history;
    r.seed = seed;
    r.train_count = fit.train_count;
    r.final_test_count = p.split.final_test.size();
    r.stop_reason = nn::to_string(fit.train.stop_reason);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.classifier = std::move(fit.classifier);
    out.split = std::move(p.split);
    return out;
}

CvResult run_cv(const dataset::Manifest& manifest, const CellId& cell, std::size_t k,
                const RunConfig& run, std::uint64_t seed, std::optional<double> holdout_accuracy)
{
    const auto start = std::chrono::steady_clock::now();
    Prepared p = prepare(manifest, cell, run, seed);
    const dataset::Manifest& m = p.manifest(manifest);

    std::vector<std::size_t> pool = p.split.train;
    pool.insert(pool.end(), p.split.val.begin(), p.split.val.end());
    pool.insert(pool.end(), p.split.inner_test.begin(), p.split.inner_test.end());
    std::sort(pool.begin(), pool.end());
    const std::vector<int> labels = dataset::labels_of(m, pool);
    const auto folds = dataset::kfold(labels, k, derive_seed(seed, "kfold"));

    CvResult r;
    r.cell = cell;
    r.k = k;
    r.seed = seed;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<std::size_t> train_idx;
        std::vector<std::size_t> val_idx;
        for (const std::size_t pos : folds[f].train) {
            train_idx.push_back(pool[pos]);
        }
        for (const std::size_t pos : folds[f].val) {
            val_idx.push_back(pool[pos]);
        }
        const std::uint64_t fold_seed = derive_seed(seed, "fold-" + std::to_string(f));
        if (!run.balance_before_split) {
            train_idx = dataset::balance(m, train_idx, cell.sampling, derive_seed(fold_seed, "balance"));
        }
        Fit fit = fit_model(m, train_idx, val_idx, cell.model, run, fold_seed);
        const nn::Samples test_set =
            models::make_samples(m, p.split.final_test, fit.classifier.normalizer);
        r.fold_accuracies.push_back(
            nn::evaluate(*fit.classifier.network, test_set, m.mapping.size()).accuracy);
    }
    const double n = static_cast<double>(r.fold_accuracies.size());
    r.mean = std::accumulate(r.fold_accuracies.begin(), r.fold_accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (const double a : r.fold_accuracies) {
        ss += (a - r.mean) * (a - r.mean);
    }
    r.stddev = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    r.holdout_accuracy = holdout_accuracy;
    if (holdout_accuracy) {
        r.delta_vs_holdout = r.mean - *holdout_accuracy;
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

// --- CSV --------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        out.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << std::setprecision(17);
    return out;
}

constexpr const char* kResultsHeader =
    "cell_id,model,duration_s,sampling,final_test_acc,best_val_loss,epochs,wall_seconds,seed";
constexpr const char* kCvHeader =
    "cell_id,model,duration_s,sampling,k,fold_accuracies,mean,std,holdout_acc,delta_vs_holdout,wall_seconds,seed";

void write_result_row(std::ostream& out, const ExperimentResult& r)
{
    out << r.cell.str() << ',' << models::to_string(r.cell.model) << ','
        << format_duration(r.cell.duration_s) << ',' << dataset::to_string(r.cell.sampling) << ','
        << r.final_test_accuracy << ',' << r.best_val_loss << ',' << r.epochs_run << ','
        << r.wall_seconds << ',' << r.seed << '\n';
}

void write_cv_row(std::ostream& out, const CvResult& r)
{
    out << r.cell.str() << ',' << models::to_string(r.cell.model) << ','
        << format_duration(r.cell.duration_s) << ',' << dataset::to_string(r.cell.sampling) << ','
        << r.k << ',';
    for (std::size_t i = 0; i < r.fold_accuracies.size(); ++i) {
        out << (i ? ";" : "") << r.fold_accuracies[i];
    }
    out << ',' << r.mean << ',' << r.stddev << ',';
    if (r.holdout_accuracy) {
        out << *r.holdout_accuracy;
    }
    out << ',';
    if (r.delta_vs_holdout) {
        out << *r.delta_vs_holdout;
    }
    out << ',' << r.wall_seconds << ',' << r.seed << '\n';
}

} // namespace

void write_results_csv(const std::vector<ExperimentResult>& results, const fs::path& path)
{
    auto out = open_out(path);
    out << kResultsHeader << '\n';
    for (const auto& r : results) {
        write_result_row(out, r);
    }
}

std::vector<ExperimentResult> read_results_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open results file: " + path.string());
    }
    std::vector<ExperimentResult> out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 9) {
            // A partially written trailing row from an interrupted run.
            continue;
        }
        try {
            ExperimentResult r;
            r.cell.model = models::parse_model_kind(f[1]);
            r.cell.duration_s = std::stod(f[2]);
            r.cell.sampling = dataset::parse_sampling(f[3]);
            r.final_test_accuracy = std::stod(f[4]);
            r.best_val_loss = std::stod(f[5]);
            r.epochs_run = std::stoul(f[6]);
            r.wall_seconds = std::stod(f[7]);
            r.seed = std::stoull(f[8]);
            out.push_back(std::move(r));
        } catch (const std::exception&) {
            continue;
        }
    }
    return out;
}

void write_cv_csv(const std::vector<CvResult>& results, const fs::path& path)
{
    auto out = open_out(path);
    out << kCvHeader << '\n';
    for (const auto& r : results) {
        write_cv_row(out, r);
    }
}

std::vector<CvResult> read_cv_csv(const fs::path& path)
{
    std::vector<CvResult> out;
    std::ifstream in(path);
    if (!in) {
        return out;
    }
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto f = split_csv_line(line);
        if (f.size() != 12) {
            continue;
        }
        try {
            CvResult r;
            r.cell.model = models::parse_model_kind(f[1]);
            r.cell.duration_s = std::stod(f[2]);
            r.cell.sampling = dataset::parse_sampling(f[3]);
            r.k = std::stoul(f[4]);
            std::istringstream folds(f[5]);
            std::string a;
            while (std::getline(folds, a, ';')) {
                r.fold_accuracies.push_back(std::stod(a));
            }
            r.mean = std::stod(f[6]);
            r.stddev = std::stod(f[7]);
            if (!f[8].empty()) {
                r.holdout_accuracy = std::stod(f[8]);
            }
            if (!f[9].empty()) {
                r.delta_vs_holdout = std::stod(f[9]);
            }
            r.wall_seconds = std::stod(f[10]);
            r.seed = std::stoull(f[11]);
            out.push_back(std::move(r));
        } catch (const std::exception&) {
            continue;
        }
    }
    return out;
}

// --- report -----------------------------------------------------------------

std::vector<BestCell> best_cells(const std::vector<ExperimentResult>& results)
{
    std::vector<BestCell> out;
    for (const models::ModelKind kind :
         {models::ModelKind::ann, models::ModelKind::cnn, models::ModelKind::rnn}) {
        const ExperimentResult* best = nullptr;
        for (const auto& r : results) {
            if (r.cell.model == kind && (best == nullptr || r.final_test_accuracy > best->final_test_accuracy)) {
                best = &r;
            }
        }
        if (best != nullptr) {
            out.push_back({kind, best->final_test_accuracy, best->cell.duration_s,
                           best->cell.sampling, best->cell.str(), best->wall_seconds});
        }
    }
    return out;
}

std::vector<SamplingEffect> sampling_effects(const std::vector<ExperimentResult>& results)
{
    std::map<std::pair<int, double>, std::pair<std::optional<double>, std::optional<double>>> table;
    for (const auto& r : results) {
        auto& slot = table[{static_cast<int>(r.cell.model), r.cell.duration_s}];
        if (r.cell.sampling == dataset::Sampling::oversample) {
            slot.first = r.final_test_accuracy;
        } else if (r.cell.sampling == dataset::Sampling::undersample) {
            slot.second = r.final_test_accuracy;
        }
    }
    std::vector<SamplingEffect> out;
    for (const auto& [key, accs] : table) {
        if (accs.first && accs.second) {
            out.push_back({static_cast<models::ModelKind>(key.first), key.second, *accs.first,
                           *accs.second, *accs.first - *accs.second});
        }
    }
    return out;
}

void emit_report(const std::vector<ExperimentResult>& results, const std::vector<CvResult>& cv,
                 const fs::path& out_dir, const std::map<double, std::vector<std::size_t>>& class_counts)
{
    fs::create_directories(out_dir);
    write_results_csv(results, out_dir / "results.csv");
    for (const auto& r : results) {
        if (!r.epoch_curves.empty()) {
            nn::write_metrics_csv(r.epoch_curves, (out_dir / "curves" / (r.cell.str() + ".csv")).string());
        }
    }
    if (!cv.empty()) {
        write_cv_csv(cv, out_dir / "cv.csv");
    }

    const auto best = best_cells(results);
    {
        auto out = open_out(out_dir / "best_by_model.csv");
        out << "model,best_accuracy,duration_s,sampling,cell_id\n";
        for (const auto& b : best) {
            out << models::to_string(b.model) << ',' << b.accuracy << ',' << format_duration(b.duration_s)
                << ',' << dataset::to_string(b.sampling) << ',' << b.cell_id << '\n';
        }
    }
    const auto effects = sampling_effects(results);
    {
        auto out = open_out(out_dir / "sampling_effect.csv");
        out << "model,duration_s,oversample_acc,undersample_acc,delta\n";
        for (const auto& e : effects) {
            out << models::to_string(e.model) << ',' << format_duration(e.duration_s) << ','
                << e.oversample_acc << ',' << e.undersample_acc << ',' << e.delta << '\n';
        }
    }
    {
        auto out = open_out(out_dir / "wall_time.csv");
        out << "model,best_accuracy,best_cell_seconds,total_seconds,cells,hardware\n";
        for (const auto& b : best) {
            double total = 0.0;
            std::size_t cells = 0;
            for (const auto& r : results) {
                if (r.cell.model == b.model) {
                    total += r.wall_seconds;
                    ++cells;
                }
            }
            out << models::to_string(b.model) << ',' << b.accuracy << ',' << b.wall_seconds << ','
                << total << ',' << cells << ",CPU\n";
        }
    }

    // Accuracy by duration for each (model, sampling).
    std::set<double> durations;
    for (const auto& r : results) {
        durations.insert(r.cell.duration_s);
    }
    {
        auto out = open_out(out_dir / "duration_table.csv");
        out << "model,sampling";
        for (const double d : durations) {
            out << ',' << format_duration(d) << 's';
        }
        out << '\n';
        std::map<std::pair<int, int>, std::map<double, double>> rows;
        for (const auto& r : results) {
            rows[{static_cast<int>(r.cell.model), static_cast<int>(r.cell.sampling)}][r.cell.duration_s] =
                r.final_test_accuracy;
        }
        for (const auto& [key, accs] : rows) {
            out << models::to_string(static_cast<models::ModelKind>(key.first)) << ','
                << dataset::to_string(static_cast<dataset::Sampling>(key.second));
            for (const double d : durations) {
                out << ',';
                if (const auto it = accs.find(d); it != accs.end()) {
                    out << it->second;
                }
            }
            out << '\n';
        }
    }
    if (!class_counts.empty()) {
        auto out = open_out(out_dir / "segments.csv");
        out << "duration_s,class_counts,total\n";
        for (const auto& [d, counts] : class_counts) {
            out << format_duration(d) << ',';
            for (std::size_t i = 0; i < counts.size(); ++i) {
                out << (i ? ";" : "") << counts[i];
            }
            out << ',' << std::accumulate(counts.begin(), counts.end(), std::size_t{0}) << '\n';
        }
    }

    auto md = open_out(out_dir / "report.md");
    md << std::setprecision(4);
    md << "# Experiment report\n\n";
    md << "Experiments: " << results.size() << " grid cells + " << cv.size()
       << " cross-validation runs = " << results.size() + cv.size()
       << ". The default grid is 7 durations x 3 samplings x 3 models = 63 cells, plus one "
          "cross-validation run per model, 66 in total.\n\n";
    md << "## Best cell per model\n\n| model | accuracy | duration (s) | sampling |\n|---|---|---|---|\n";
    for (const auto& b : best) {
        md << "| " << models::to_string(b.model) << " | " << 100.0 * b.accuracy << "% | "
           << format_duration(b.duration_s) << " | " << dataset::to_string(b.sampling) << " |\n";
    }
    if (!effects.empty()) {
        md << "\n## Oversampling minus undersampling\n\n| model | duration (s) | delta |\n|---|---|---|\n";
        for (const auto& e : effects) {
            md << "| " << models::to_string(e.model) << " | " << format_duration(e.duration_s) << " | "
               << 100.0 * e.delta << " pp |\n";
        }
    }
    if (!cv.empty()) {
        md << "\n## Cross-validation\n\n| cell | k | mean | std | hold-out | delta |\n|---|---|---|---|---|---|\n";
        for (const auto& c : cv) {
            md << "| " << c.cell.str() << " | " << c.k << " | " << 100.0 * c.mean << "% | "
               << 100.0 * c.stddev << " | "
               << (c.holdout_accuracy ? std::to_string(100.0 * *c.holdout_accuracy) + "%" : "-")
               << " | "
               << (c.delta_vs_holdout ? std::to_string(100.0 * *c.delta_vs_holdout) + " pp" : "-")
               << " |\n";
        }
    }
    md << "\nWall times are hardware dependent and listed in wall_time.csv for reference only.\n";
}

// --- grid runner ------------------------------------------------------------

GridOutcome run_grid(const GridConfig& cfg, const fs::path& out_dir)
{
    cfg.validate();
    fs::create_directories(out_dir / "manifests");
    fs::create_directories(out_dir / "curves");

    // One manifest per duration, cached for resumed runs.
    std::set<double> needed(cfg.durations.begin(), cfg.durations.end());
    if (cfg.cv.enabled) {
        needed.insert(cfg.cv.duration_s);
    }
    std::map<double, dataset::Manifest> manifests;
    GridOutcome outcome;
    for (const double d : needed) {
        const fs::path cache = out_dir / "manifests" / (format_duration(d) + "s.json");
        dataset::Manifest m;
        if (fs::exists(cache)) {
            m = dataset::read_manifest(cache);
        } else {
            dataset::BuildOptions opts;
            opts.duration_s = d;
            opts.sample_rate = cfg.sample_rate;
            opts.mfcc = cfg.mfcc;
            opts.jobs = cfg.jobs;
            std::map<std::string, fs::path> dirs;
            for (const auto& name : dataset::kDefaultMapping) {
                if (fs::is_directory(cfg.data_root / name)) {
                    dirs[name] = cfg.data_root / name;
                }
            }
            m = dataset::build_manifest(dirs, opts);
            dataset::write_manifest(m, cache);
        }
        outcome.class_counts[d] = m.class_counts();
        manifests.emplace(d, std::move(m));
    }

    const auto cells = enumerate_cells(cfg);
    std::map<std::string, ExperimentResult> done;
    const fs::path results_path = out_dir / "results.csv";
    if (fs::exists(results_path)) {
        for (auto& r : read_results_csv(results_path)) {
            const std::string id = r.cell.str();
            done.emplace(id, std::move(r));
        }
    } else {
        write_results_csv({}, results_path);
    }

    std::vector<CellId> pending;
    for (const auto& c : cells) {
        if (done.find(c.str()) == done.end()) {
            pending.push_back(c);
        }
    }

    std::mutex mutex;
    parallel_for(pending.size(), cfg.jobs, [&](std::size_t i) {
        const CellId& cell = pending[i];
        const std::string id = cell.str();
        const std::uint64_t seed = derive_seed(cfg.master_seed, id);
        try {
            CellOutput out = run_cell(manifests.at(cell.duration_s), cell, cfg.run, seed);
            nn::write_metrics_csv(out.result.epoch_curves, (out_dir / "curves" / (id + ".csv")).string());
            std::lock_guard lock(mutex);
            std::ofstream append(results_path, std::ios::app);
            append << std::setprecision(17);
            write_result_row(append, out.result);
            append.flush();
            std::cerr << "cell " << id << ": accuracy " << out.result.final_test_accuracy << " ("
                      << out.result.epochs_run << " epochs, " << out.result.wall_seconds << " s)\n";
            done.emplace(id, std::move(out.result));
        } catch (const std::exception& ex) {
            std::lock_guard lock(mutex);
            std::cerr << "cell " << id << " failed: " << ex.what() << '\n';
            outcome.failures[id] = ex.what();
        }
    });

    for (const auto& c : cells) {
        if (auto it = done.find(c.str()); it != done.end()) {
            outcome.results.push_back(it->second);
        }
    }
    if (outcome.results.empty()) {
        throw DataError("every grid cell failed");
    }

    if (cfg.cv.enabled) {
        const fs::path cv_path = out_dir / "cv.csv";
        std::map<std::string, CvResult> cv_done;
        for (auto& r : read_cv_csv(cv_path)) {
            const std::string id = r.cell.str();
            cv_done.emplace(id, std::move(r));
        }
        std::vector<CellId> cv_cells;
        for (const auto kind : cfg.model_kinds) {
            cv_cells.push_back({kind, cfg.cv.duration_s, cfg.cv.sampling});
        }
        for (const auto& cell : cv_cells) {
            const std::string id = cell.str();
            if (cv_done.count(id) != 0) {
                continue;
            }
            std::optional<double> holdout;
            if (auto it = done.find(id); it != done.end()) {
                holdout = it->second.final_test_accuracy;
            }
            try {
                CvResult r = run_cv(manifests.at(cell.duration_s), cell, cfg.cv.k, cfg.run,
                                    derive_seed(cfg.master_seed, id), holdout);
                std::cerr << "cv " << id << ": mean " << r.mean << '\n';
                cv_done.emplace(id, std::move(r));
                std::vector<CvResult> ordered;
                for (const auto& c : cv_cells) {
                    if (auto it = cv_done.find(c.str()); it != cv_done.end()) {
                        ordered.push_back(it->second);
                    }
                }
                write_cv_csv(ordered, cv_path);
            } catch (const std::exception& ex) {
                std::cerr << "cv " << id << " failed: " << ex.what() << '\n';
                outcome.failures["CV_" + id] = ex.what();
            }
        }
        for (const auto& c : cv_cells) {
            if (auto it = cv_done.find(c.str()); it != cv_done.end()) {
                outcome.cv_results.push_back(it->second);
            }
        }
    }

    // Curves of resumed cells already sit on disk; only fresh ones carry data.
    emit_report(outcome.results, outcome.cv_results, out_dir, outcome.class_counts);
    return outcome;
}

} // namespace nli::experiments
