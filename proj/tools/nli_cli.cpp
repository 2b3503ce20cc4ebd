// SPDX-License-Identifier: Apache-2.0
// Command-line front end: one subcommand per pipeline stage.
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nli/audio_io.hpp"
#include "nli/dataset.hpp"
#include "nli/error.hpp"
#include "nli/experiments.hpp"
#include "nli/models.hpp"
#include "nli/seeding.hpp"
#include "nli/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nli;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out = ".";
    std::size_t jobs = 1;
};

/// Records produced files in <out>/artifacts.json, keyed by subcommand.
void record_artifacts(const fs::path& out, const std::string& command, const std::vector<fs::path>& files)
{
    const fs::path path = out / "artifacts.json";
    json j = json::object();
    if (fs::exists(path)) {
        try {
            std::ifstream in(path);
            j = json::parse(in);
        } catch (const json::exception&) {
            j = json::object();
        }
    }
    json list = json::array();
    for (const auto& f : files) {
        list.push_back(fs::relative(f, out).generic_string());
    }
    j[command] = list;
    std::ofstream(path) << j.dump(2) << '\n';
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& ex) {
        throw FormatError("malformed JSON in " + path.string() + ": " + ex.what());
    }
}

json split_to_json(const dataset::Split& s)
{
    return {{"final_test", s.final_test}, {"train", s.train}, {"val", s.val}, {"inner_test", s.inner_test}};
}

std::vector<std::size_t> split_part(const fs::path& path, const std::string& part)
{
    const json j = read_json(path);
    if (!j.contains(part)) {
        throw ArgumentError("split file has no partition '" + part + "'");
    }
    return j.at(part).get<std::vector<std::size_t>>();
}

/// Run settings: the grid config's when --config is given, then flag overrides.
struct RunFlags {
    double holdout = 0.10;
    bool speaker_disjoint = false;
    std::size_t epochs = 100;
    std::size_t patience = 10;
    std::size_t batch = 32;
    double lr = 1e-3;
    CLI::Option* holdout_opt = nullptr;
    CLI::Option* disjoint_opt = nullptr;
    CLI::Option* epochs_opt = nullptr;
    CLI::Option* patience_opt = nullptr;
    CLI::Option* batch_opt = nullptr;
    CLI::Option* lr_opt = nullptr;

    void add_to(CLI::App* app)
    {
        holdout_opt = app->add_option("--holdout", holdout, "Held-out final-test fraction")
                          ->capture_default_str()
                          ->check(CLI::Range(0.0, 0.99));
        disjoint_opt = app->add_flag("--speaker-disjoint", speaker_disjoint,
                                     "Keep every speaker inside one partition");
        epochs_opt = app->add_option("--epochs", epochs, "Maximum training epochs")->capture_default_str();
        patience_opt = app->add_option("--patience", patience, "Early-stopping patience")->capture_default_str();
        batch_opt = app->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
        lr_opt = app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    }

    experiments::RunConfig resolve(const std::optional<experiments::GridConfig>& cfg) const
    {
        experiments::RunConfig run = cfg ? cfg->run : experiments::RunConfig{};
        if (!cfg || holdout_opt->count() > 0) {
            run.holdout_fraction = holdout;
        }
        if (!cfg || disjoint_opt->count() > 0) {
            run.speaker_disjoint = speaker_disjoint;
        }
        if (!cfg || epochs_opt->count() > 0) {
            run.train.max_epochs = epochs;
        }
        if (!cfg || patience_opt->count() > 0) {
            run.train.patience = patience;
        }
        if (!cfg || batch_opt->count() > 0) {
            run.train.batch_size = batch;
        }
        if (!cfg || lr_opt->count() > 0) {
            run.train.adam.learning_rate = lr;
        }
        return run;
    }
};

std::optional<experiments::GridConfig> maybe_config(const Globals& g)
{
    if (g.config.empty()) {
        return std::nullopt;
    }
    return experiments::read_grid_config(g.config);
}

fs::path out_dir(const Globals& g)
{
    fs::create_directories(g.out);
    return g.out;
}

void print_class_counts(const dataset::Manifest& m, std::span<const std::size_t> indices)
{
    std::vector<std::size_t> counts(m.mapping.size(), 0);
    for (std::size_t i : indices) {
        ++counts[static_cast<std::size_t>(m.entries[i].label)];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << m.mapping[c] << ": " << counts[c] << '\n';
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Native-language identification from speech: data preparation, training and evaluation"};
    app.require_subcommand(1, 1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Master seed for every random choice")->capture_default_str();
    app.add_option("--config", g.config, "Grid/run configuration JSON");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic two-class corpus under --out");
    synth::SynthSpec sspec;
    synth_cmd->add_option("--speakers", sspec.speakers_per_class, "Speakers per class")->capture_default_str();
    synth_cmd->add_option("--minutes", sspec.minutes_per_speaker, "Minutes of audio per speaker")
        ->capture_default_str();
    synth_cmd->add_option("--rate", sspec.sample_rate, "Sample rate (Hz)")->capture_default_str();
    synth_cmd->add_option("--jitter", sspec.jitter, "Relative pitch wander")->capture_default_str();
    synth_cmd->add_option("--noise", sspec.noise_level, "Background noise RMS")->capture_default_str();
    synth_cmd->add_option("--prefix", sspec.speaker_prefix, "Prefix for every speaker id");

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Segment WAV directories and extract MFCC into a manifest");
    std::string native_dir;
    std::string nonnative_dir;
    std::string data_root;
    dataset::BuildOptions bopts;
    std::string manifest_name = "manifest.json";
    ingest_cmd->add_option("--native", native_dir, "Directory of native-speaker WAV files");
    ingest_cmd->add_option("--nonnative", nonnative_dir, "Directory of non-native-speaker WAV files");
    ingest_cmd->add_option("--data-root", data_root, "Directory holding native/ and non_native/");
    ingest_cmd->add_option("--duration", bopts.duration_s, "Segment length (s)")->capture_default_str();
    ingest_cmd->add_flag("--pad-tail", bopts.pad_tail, "Zero-pad the trailing partial segment instead of dropping it");
    ingest_cmd->add_option("--n-mfcc", bopts.mfcc.n_mfcc, "MFCC coefficients")->capture_default_str();
    ingest_cmd->add_option("--n-mels", bopts.mfcc.n_mels, "Mel bands")->capture_default_str();
    ingest_cmd->add_option("--frame", bopts.mfcc.frame_len, "Frame length (samples)")->capture_default_str();
    ingest_cmd->add_option("--hop", bopts.mfcc.hop, "Hop (samples)")->capture_default_str();
    ingest_cmd->add_option("--name", manifest_name, "Manifest file name under --out")->capture_default_str();

    // split
    auto* split_cmd = app.add_subcommand("split", "Partition a manifest into held-out/train/val(/test) index lists");
    std::string manifest_path;
    std::string model_name = "ANN";
    double holdout = 0.10;
    bool disjoint = false;
    split_cmd->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    split_cmd->add_option("--model", model_name, "Model family deciding the inner scheme (ANN, CNN, RNN)")
        ->capture_default_str();
    split_cmd->add_option("--holdout", holdout, "Held-out fraction")->capture_default_str()->check(CLI::Range(0.0, 0.99));
    split_cmd->add_flag("--speaker-disjoint", disjoint, "Keep every speaker inside one partition");

    // balance
    auto* balance_cmd = app.add_subcommand("balance", "Over- or undersample a manifest (or one split partition)");
    std::string sampling_name = "oversample";
    std::string split_path;
    std::string part = "train";
    balance_cmd->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    balance_cmd->add_option("--sampling", sampling_name, "none, oversample or undersample")->capture_default_str();
    balance_cmd->add_option("--split", split_path, "Split JSON; balance only one partition");
    balance_cmd->add_option("--part", part, "Partition of --split to balance")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train one model on a manifest and score it on held-out data");
    RunFlags train_flags;
    train_cmd->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    train_cmd->add_option("--model", model_name, "ANN, CNN or RNN")->capture_default_str();
    train_cmd->add_option("--sampling", sampling_name, "none, oversample or undersample")->capture_default_str();
    train_flags.add_to(train_cmd);
    bool verbose = false;
    train_cmd->add_flag("--verbose", verbose, "Print per-epoch metrics to stderr");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on manifest entries");
    std::string model_path;
    eval_cmd->add_option("--model", model_path, "Model file")->required();
    eval_cmd->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    eval_cmd->add_option("--split", split_path, "Split JSON; evaluate one partition only");
    eval_cmd->add_option("--part", part, "Partition of --split to evaluate")->capture_default_str();

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "Classify one WAV file by segment majority vote");
    std::string wav_path;
    predict_cmd->add_option("--model", model_path, "Model file")->required();
    predict_cmd->add_option("--wav", wav_path, "Input WAV")->required();

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "Run (or resume) the duration x sampling x model grid");
    grid_cmd->add_option("--data-root", data_root, "Directory holding native/ and non_native/ (overrides config)");

    // cv
    auto* cv_cmd = app.add_subcommand("cv", "Stratified k-fold cross-validation of one cell");
    RunFlags cv_flags;
    std::size_t k = 5;
    std::optional<double> holdout_acc;
    cv_cmd->add_option("--manifest", manifest_path, "Manifest JSON")->required();
    cv_cmd->add_option("--model", model_name, "ANN, CNN or RNN")->capture_default_str();
    cv_cmd->add_option("--sampling", sampling_name, "none, oversample or undersample")->capture_default_str();
    cv_cmd->add_option("--k", k, "Number of folds")->capture_default_str()->check(CLI::Range(2, 1000));
    cv_cmd->add_option("--holdout-acc", holdout_acc, "Hold-out accuracy of the matching grid cell");
    cv_flags.add_to(cv_cmd);

    // report
    auto* report_cmd = app.add_subcommand("report", "Rebuild the report tables from results.csv and cv.csv");
    std::string results_dir;
    report_cmd->add_option("--results", results_dir, "Directory containing results.csv (default: --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth_cmd) {
            sspec.seed = g.seed;
            const fs::path out = out_dir(g);
            const auto files = synth::generate(sspec, out, g.jobs);
            std::vector<fs::path> paths;
            for (const auto& f : files) {
                paths.push_back(f.path);
            }
            record_artifacts(out, "synth", paths);
            std::cout << "wrote " << files.size() << " files under " << out.string() << '\n';
        } else if (*ingest_cmd) {
            std::map<std::string, fs::path> dirs;
            if (!data_root.empty()) {
                for (const auto& name : dataset::kDefaultMapping) {
                    if (fs::is_directory(fs::path(data_root) / name)) {
                        dirs[name] = fs::path(data_root) / name;
                    }
                }
            }
            if (!native_dir.empty()) {
                dirs["native"] = native_dir;
            }
            if (!nonnative_dir.empty()) {
                dirs["non_native"] = nonnative_dir;
            }
            if (dirs.empty()) {
                throw ArgumentError("ingest needs --native/--nonnative or --data-root");
            }
            if (const auto cfg = maybe_config(g)) {
                if (ingest_cmd->get_option("--n-mfcc")->count() == 0 &&
                    ingest_cmd->get_option("--n-mels")->count() == 0 &&
                    ingest_cmd->get_option("--frame")->count() == 0 &&
                    ingest_cmd->get_option("--hop")->count() == 0) {
                    bopts.mfcc = cfg->mfcc;
                }
                bopts.sample_rate = cfg->sample_rate;
            }
            bopts.jobs = g.jobs;
            const auto m = dataset::build_manifest(dirs, bopts);
            const fs::path out = out_dir(g);
            dataset::write_manifest(m, out / manifest_name);
            record_artifacts(out, "ingest", {out / manifest_name});
            const auto counts = m.class_counts();
            std::cout << "entries: " << m.size() << " (";
            for (std::size_t c = 0; c < counts.size(); ++c) {
                std::cout << (c ? ", " : "") << m.mapping[c] << ' ' << counts[c];
            }
            std::cout << "), matrix " << m.frames << "x" << m.coeffs << '\n';
        } else if (*split_cmd) {
            const auto m = dataset::read_manifest(manifest_path);
            dataset::SplitSpec spec;
            spec.holdout_fraction = holdout;
            spec.inner = models::inner_scheme_for(models::parse_model_kind(model_name));
            spec.seed = derive_seed(g.seed, "split");
            spec.speaker_disjoint = disjoint;
            const auto s = dataset::split(m, spec);
            const fs::path out = out_dir(g);
            write_json(out / "split.json", split_to_json(s));
            record_artifacts(out, "split", {out / "split.json"});
            std::cout << "final_test " << s.final_test.size() << ", train " << s.train.size() << ", val "
                      << s.val.size() << ", inner_test " << s.inner_test.size() << '\n';
        } else if (*balance_cmd) {
            const auto m = dataset::read_manifest(manifest_path);
            std::vector<std::size_t> indices;
            if (split_path.empty()) {
                indices.resize(m.size());
                std::iota(indices.begin(), indices.end(), std::size_t{0});
            } else {
                indices = split_part(split_path, part);
            }
            const auto sampling = dataset::parse_sampling(sampling_name);
            const auto kept = dataset::balance(m, indices, sampling, derive_seed(g.seed, "balance"));
            dataset::Manifest bm = m;
            bm.entries.clear();
            for (std::size_t i : kept) {
                bm.entries.push_back(m.entries[i]);
            }
            const fs::path out = out_dir(g);
            dataset::write_manifest(bm, out / "balanced.json");
            write_json(out / "balanced_indices.json", json{{"sampling", sampling_name}, {"indices", kept}});
            record_artifacts(out, "balance", {out / "balanced.json", out / "balanced_indices.json"});
            print_class_counts(m, kept);
        } else if (*train_cmd) {
            const auto m = dataset::read_manifest(manifest_path);
            const auto cfg = maybe_config(g);
            experiments::RunConfig run = train_flags.resolve(cfg);
            run.train.verbose = verbose;
            const experiments::CellId cell{models::parse_model_kind(model_name), m.duration_s,
                                           dataset::parse_sampling(sampling_name)};
            const std::uint64_t seed = derive_seed(g.seed, cell.str());
            auto result = experiments::run_cell(m, cell, run, seed);
            const fs::path out = out_dir(g);
            models::save_classifier(result.classifier, out / "model.bin");
            nn::write_metrics_csv(result.result.epoch_curves, (out / "metrics.csv").string());
            write_json(out / "split.json", split_to_json(result.split));
            const auto& r = result.result;
            const json summary{{"cell_id", cell.str()},
                               {"final_test_acc", r.final_test_accuracy},
                               {"best_val_loss", r.best_val_loss},
                               {"epochs", r.epochs_run},
                               {"stop_reason", r.stop_reason},
                               {"train_count", r.train_count},
                               {"final_test_count", r.final_test_count},
                               {"wall_seconds", r.wall_seconds},
                               {"seed", r.seed}};
            write_json(out / "result.json", summary);
            record_artifacts(out, "train",
                             {out / "model.bin", out / "metrics.csv", out / "split.json", out / "result.json"});
            std::cout << summary.dump(2) << '\n';
        } else if (*eval_cmd) {
            auto c = models::load_classifier(model_path);
            const auto m = dataset::read_manifest(manifest_path);
            if (m.frames != c.spec.frames || m.coeffs != c.spec.n_mfcc) {
                throw ShapeError("manifest matrices are " + std::to_string(m.frames) + "x" +
                                 std::to_string(m.coeffs) + " but the model expects " +
                                 std::to_string(c.spec.frames) + "x" + std::to_string(c.spec.n_mfcc));
            }
            std::vector<std::size_t> indices;
            if (split_path.empty()) {
                indices.resize(m.size());
                std::iota(indices.begin(), indices.end(), std::size_t{0});
            } else {
                indices = split_part(split_path, part);
            }
            const auto samples = models::make_samples(m, indices, c.normalizer);
            const auto ev = nn::evaluate(*c.network, samples, c.spec.n_classes);
            const json j{{"accuracy", ev.accuracy},
                         {"mean_loss", ev.mean_loss},
                         {"confusion", ev.confusion},
                         {"count", indices.size()}};
            const fs::path out = out_dir(g);
            write_json(out / "eval.json", j);
            record_artifacts(out, "eval", {out / "eval.json"});
            std::cout << j.dump(2) << '\n';
        } else if (*predict_cmd) {
            auto c = models::load_classifier(model_path);
            const auto clip = audio::load_wav(wav_path);
            const auto p = models::predict_track(c, clip);
            const json j{{"class", p.class_name},
                         {"label", p.label},
                         {"per_segment", p.per_segment},
                         {"vote_counts", p.vote_counts},
                         {"mean_probs", p.mean_probs}};
            if (app.get_option("--out")->count() > 0) {
                const fs::path out = out_dir(g);
                write_json(out / "prediction.json", j);
                record_artifacts(out, "predict", {out / "prediction.json"});
            }
            std::cout << j.dump(2) << '\n';
        } else if (*grid_cmd) {
            if (g.config.empty()) {
                throw ArgumentError("grid needs --config <grid.json>");
            }
            auto cfg = experiments::read_grid_config(g.config);
            if (!data_root.empty()) {
                cfg.data_root = data_root;
            }
            if (app.get_option("--seed")->count() > 0) {
                cfg.master_seed = g.seed;
            }
            if (app.get_option("--jobs")->count() > 0) {
                cfg.jobs = g.jobs;
            }
            const fs::path out = out_dir(g);
            experiments::write_grid_config(cfg, out / "grid_config.json");
            const auto outcome = experiments::run_grid(cfg, out);
            std::vector<fs::path> files;
            for (const auto& entry : fs::recursive_directory_iterator(out)) {
                if (entry.is_regular_file() && entry.path().filename() != "artifacts.json") {
                    files.push_back(entry.path());
                }
            }
            std::sort(files.begin(), files.end());
            record_artifacts(out, "grid", files);
            std::cout << outcome.results.size() << " cells, " << outcome.cv_results.size() << " CV runs, "
                      << outcome.failures.size() << " failures\n";
        } else if (*cv_cmd) {
            const auto m = dataset::read_manifest(manifest_path);
            const auto cfg = maybe_config(g);
            const experiments::RunConfig run = cv_flags.resolve(cfg);
            const experiments::CellId cell{models::parse_model_kind(model_name), m.duration_s,
                                           dataset::parse_sampling(sampling_name)};
            const auto r = experiments::run_cv(m, cell, k, run, derive_seed(g.seed, cell.str()), holdout_acc);
            const fs::path out = out_dir(g);
            experiments::write_cv_csv({r}, out / "cv.csv");
            record_artifacts(out, "cv", {out / "cv.csv"});
            json j{{"cell_id", cell.str()}, {"k", r.k}, {"fold_accuracies", r.fold_accuracies},
                   {"mean", r.mean}, {"std", r.stddev}};
            if (r.delta_vs_holdout) {
                j["delta_vs_holdout"] = *r.delta_vs_holdout;
            }
            std::cout << j.dump(2) << '\n';
        } else if (*report_cmd) {
            const fs::path src = results_dir.empty() ? fs::path(g.out) : fs::path(results_dir);
            const auto results = experiments::read_results_csv(src / "results.csv");
            if (results.empty()) {
                throw DataError("no results in " + (src / "results.csv").string());
            }
            const auto cv = experiments::read_cv_csv(src / "cv.csv");
            const fs::path out = out_dir(g);
            experiments::emit_report(results, cv, out);
            std::vector<fs::path> files;
            for (const char* f : {"results.csv", "best_by_model.csv", "sampling_effect.csv", "wall_time.csv",
                                  "duration_table.csv", "report.md"}) {
                files.push_back(out / f);
            }
            if (!cv.empty()) {
                files.push_back(out / "cv.csv");
            }
            record_artifacts(out, "report", files);
            std::cout << "report written to " << (out / "report.md").string() << '\n';
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
