// Command-line front end: every pipeline stage as a subcommand, with
// deterministic outputs and stable exit codes (0 ok, 1 usage, 2 bad data,
// 3 I/O). Progress goes to stderr; machine output goes to files or stdout.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "xbdkit/dataset.hpp"
#include "xbdkit/error.hpp"
#include "xbdkit/labels.hpp"
#include "xbdkit/metrics.hpp"
#include "xbdkit/patcher.hpp"
#include "xbdkit/probe.hpp"
#include "xbdkit/synth.hpp"

namespace fs = std::filesystem;
using namespace xbdkit;

namespace {

unsigned default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n ? n : 1;
}

std::function<void(const std::string&)> progress_hook(bool quiet) {
    if (quiet) return {};
    return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

void note(bool quiet, const std::string& msg) {
    if (!quiet) std::cerr << msg << '\n';
}

// ---------------------------------------------------------------- stats ----
struct StatsArgs {
    fs::path corpus;
    fs::path json_out;
    bool include_pre = false;
    bool quiet = false;
    unsigned threads = default_threads();
};

void run_stats(const StatsArgs& a) {
    std::vector<dataset::SceneRef> refs = dataset::scan_corpus(a.corpus);
    if (!a.include_pre) {
        refs.erase(std::remove_if(refs.begin(), refs.end(),
                                  [](const dataset::SceneRef& r) { return r.pre_disaster; }),
                   refs.end());
    }
    std::vector<labels::ClassHistogram> partial(refs.size());
    std::vector<std::uint64_t> skipped(refs.size(), 0);
    parallel_for(refs.size(), a.threads, [&](std::size_t i) {
        labels::SceneLabels scene = dataset::load_scene(refs[i]);
        skipped[i] = static_cast<std::uint64_t>(scene.skipped_features);
        for (const auto& ann : scene.annotations) {
            ++partial[i].counts[static_cast<std::size_t>(ann.damage)];
        }
    });
    labels::ClassHistogram hist;
    std::uint64_t total_skipped = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        hist += partial[i];
        total_skipped += skipped[i];
    }

    char buf[64];
    for (int c = 0; c <= labels::kNumClasses; ++c) {
        std::snprintf(buf, sizeof(buf), "%-14s %10llu\n",
                      labels::class_name(static_cast<labels::DamageClass>(c)),
                      static_cast<unsigned long long>(hist.counts[static_cast<std::size_t>(c)]));
        std::cout << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %10llu\n", "total",
                  static_cast<unsigned long long>(hist.total()));
    std::cout << buf;
    note(a.quiet, std::to_string(refs.size()) + " scenes, " + std::to_string(total_skipped) +
                      " unparsable features skipped");

    if (!a.json_out.empty()) {
        nlohmann::ordered_json j;
        j["scenes"] = refs.size();
        j["class_counts"] = hist.counts;
        j["total"] = hist.total();
        j["skipped_features"] = total_skipped;
        std::ofstream out(a.json_out, std::ios::binary);
        if (!out) throw IoError("cannot open " + a.json_out.string() + " for writing");
        out << j.dump(2) << '\n';
    }
}

// -------------------------------------------------------------- extract ----
struct ExtractArgs {
    fs::path corpus;
    fs::path out;
    std::uint64_t seed = 0;
    int patch_size = 224;
    int search_radius = 100;
    double empty_threshold = 0.01;
    int max_attempts = 50;
    bool disk_offsets = false;
    bool exhaustive_fallback = false;
    bool per_building = false;
    bool include_pre = false;
    bool fixed_sampling = false;
    int pass_index = 0;
    std::string split = "train";
    unsigned threads = default_threads();
    bool quiet = false;
};

void run_extract(const ExtractArgs& a) {
    dataset::ExtractOptions opt;
    opt.patch.patch_size = a.patch_size;
    opt.patch.search_radius = a.search_radius;
    opt.patch.empty_threshold = a.empty_threshold;
    opt.patch.max_attempts = a.max_attempts;
    opt.patch.seed = a.seed;
    opt.patch.disk_offsets = a.disk_offsets;
    opt.patch.exhaustive_fallback = a.exhaustive_fallback;
    opt.per_building = a.per_building;
    opt.include_pre_disaster = a.include_pre;
    opt.fixed_sampling = a.fixed_sampling;
    opt.pass_index = a.pass_index;
    opt.threads = a.threads;
    opt.progress = progress_hook(a.quiet);
    if (a.split == "all") {
        opt.split_filter = std::nullopt;
    } else {
        opt.split_filter =
            a.split == "test" ? labels::SplitTag::test : labels::SplitTag::train;
    }

    dataset::ExtractResult res = dataset::extract_corpus(a.corpus, a.out, opt);
    note(a.quiet, std::to_string(res.manifest.entries.size()) + " patches from " +
                      std::to_string(res.scenes_scanned) + " scenes (" +
                      std::to_string(res.scenes_skipped) + " without trainable buildings, " +
                      std::to_string(res.features_skipped) + " features skipped) -> " +
                      (a.out / "manifest.jsonl").string());
}

// ---------------------------------------------------------------- split ----
struct SplitArgs {
    fs::path manifest;
    fs::path out;  // defaults to the input path
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    bool quiet = false;
};

void run_split(const SplitArgs& a) {
    dataset::Manifest m = dataset::read_manifest(a.manifest);
    if (m.entries.empty()) throw SchemaError(a.manifest.string() + ": no entries to split");
    m = dataset::apply_split(std::move(m), {a.train_fraction, a.seed});
    std::uint64_t n_train = 0, n_val = 0, n_test = 0;
    for (const auto& e : m.entries) {
        if (e.split == "train") ++n_train;
        else if (e.split == "val") ++n_val;
        else ++n_test;
    }
    const fs::path out = a.out.empty() ? a.manifest : a.out;
    dataset::ManifestStats stats =
        m.stats ? *m.stats : dataset::compute_stats(m.entries, patcher::PatchConfig{});
    dataset::write_manifest(out, m.entries, stats);
    note(a.quiet, "split " + std::to_string(m.entries.size()) + " entries: " +
                      std::to_string(n_train) + " train / " + std::to_string(n_val) + " val / " +
                      std::to_string(n_test) + " test -> " + out.string());
}

// ---------------------------------------------------------- train-probe ----
struct TrainArgs {
    fs::path data;
    fs::path out;
    double lr = 1e-3;
    std::uint64_t epochs = 10;
    std::uint64_t batch_size = 24;
    double weight_decay = 0.05;
    std::uint64_t devices = 1;
    std::uint64_t seed = 0;
    bool quiet = false;
};

void run_train(const TrainArgs& a) {
    dataset::Manifest m = dataset::read_manifest(a.data / "manifest.jsonl");
    std::vector<probe::Example> train_set = probe::load_examples(m, a.data, "train");
    std::vector<probe::Example> val_set = probe::load_examples(m, a.data, "val");
    if (train_set.empty()) throw SchemaError("manifest has no train-split entries");
    note(a.quiet, "loaded " + std::to_string(train_set.size()) + " train / " +
                      std::to_string(val_set.size()) + " val examples");

    const fs::path out_dir = a.out.empty() ? a.data / "probe" : a.out;
    probe::TrainConfig cfg;
    cfg.lr = a.lr;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.weight_decay = a.weight_decay;
    cfg.devices = a.devices;
    cfg.seed = a.seed;
    cfg.checkpoint_dir = out_dir;
    cfg.metric_log = out_dir / "metrics.jsonl";
    fs::create_directories(out_dir);

    probe::TrainOutcome outcome = probe::train(train_set, val_set, cfg);
    std::string line = "trained " + std::to_string(outcome.steps_run) + "/" +
                       std::to_string(outcome.steps_planned) + " steps, final train loss " +
                       std::to_string(outcome.final_train_loss);
    if (outcome.final_eval) {
        line += ", val accuracy " + std::to_string(outcome.final_eval->accuracy);
    }
    note(a.quiet, line + " -> " + out_dir.string());
}

// -------------------------------------------------------------- predict ----
struct PredictArgs {
    fs::path checkpoint;
    fs::path data;
    fs::path out;
    std::string split = "val";
    bool quiet = false;
};

void run_predict(const PredictArgs& a) {
    probe::LinearHead head = probe::load_checkpoint(a.checkpoint);
    dataset::Manifest m = dataset::read_manifest(a.data / "manifest.jsonl");
    const std::string filter = a.split == "all" ? "" : a.split;
    std::vector<probe::Example> set = probe::load_examples(m, a.data, filter);
    if (set.empty()) throw SchemaError("manifest has no '" + a.split + "' entries to predict");
    metrics::write_predictions(a.out, probe::predict(head, set));
    note(a.quiet,
         std::to_string(set.size()) + " predictions (" + a.split + ") -> " + a.out.string());
}

// ----------------------------------------------------------------- eval ----
struct EvalArgs {
    fs::path manifest;
    std::vector<fs::path> predictions;
    fs::path json_out;
    bool quiet = false;
};

void run_eval(const EvalArgs& a) {
    dataset::Manifest m = dataset::read_manifest(a.manifest);
    std::set<std::string> valid_ids;
    std::map<std::string, int> truth;
    for (const auto& e : m.entries) {
        valid_ids.insert(e.sample_id());
        truth[e.sample_id()] = e.label;
    }

    std::vector<metrics::ConfusionMatrix> runs;
    for (const auto& path : a.predictions) {
        std::vector<metrics::PredictionRecord> recs =
            metrics::ingest_predictions(path, &valid_ids);
        metrics::ConfusionMatrix cm;
        for (const auto& rec : recs) {
            const auto it = truth.find(rec.sample_id);
            if (it->second != rec.label) {
                throw SchemaError(path.string() + ": label for " + rec.sample_id +
                                  " disagrees with the manifest");
            }
            cm.accumulate(rec.label, metrics::argmax_class(rec.logits));
        }
        runs.push_back(cm);
        note(a.quiet, path.string() + ": " + std::to_string(recs.size()) + " predictions");
    }

    metrics::EvalReport rep = metrics::aggregate_runs(runs);
    std::cout << metrics::format_report(rep);
    if (!a.json_out.empty()) {
        std::ofstream out(a.json_out, std::ios::binary);
        if (!out) throw IoError("cannot open " + a.json_out.string() + " for writing");
        out << metrics::report_to_json(rep).dump(2) << '\n';
    }
}

// ---------------------------------------------------------------- synth ----
struct SynthArgs {
    fs::path out;
    int scenes = 100;
    int image_size = 128;
    int min_buildings = 2;
    int max_buildings = 4;
    std::vector<double> weights;
    double black_fraction = 0.0;
    double test_fraction = 0.0;
    bool with_pre = false;
    std::uint64_t seed = 0;
    unsigned threads = default_threads();
    bool quiet = false;
};

void run_synth(const SynthArgs& a) {
    synth::FixtureSpec spec;
    spec.n_scenes = a.scenes;
    spec.image_size = a.image_size;
    spec.min_buildings = a.min_buildings;
    spec.max_buildings = a.max_buildings;
    if (!a.weights.empty()) {
        if (a.weights.size() != 5) {
            throw Error("--weights takes exactly 5 values (4 classes + unclassified)");
        }
        std::copy(a.weights.begin(), a.weights.end(), spec.class_weights.begin());
    }
    spec.black_region_fraction = a.black_fraction;
    spec.test_fraction = a.test_fraction;
    spec.with_pre_disaster = a.with_pre;
    spec.seed = a.seed;
    spec.threads = a.threads;

    synth::GenerateResult res = synth::generate(spec, a.out);
    std::string counts;
    for (std::size_t c = 0; c < res.class_counts.size(); ++c) {
        counts += (c ? "/" : "") + std::to_string(res.class_counts[c]);
    }
    note(a.quiet, std::to_string(res.n_scenes) + " scenes, " + std::to_string(res.n_buildings) +
                      " buildings (" + counts + ") -> " + a.out.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Building-damage dataset toolkit: corpus statistics, patch "
                 "extraction, dataset splitting, linear-probe training, and evaluation."};
    app.require_subcommand(1);

    StatsArgs stats_args;
    auto* stats = app.add_subcommand("stats", "Class histogram over a corpus's label files");
    stats->add_option("--corpus", stats_args.corpus, "Corpus root directory")->required();
    stats->add_option("--json", stats_args.json_out, "Also write the histogram as JSON");
    stats->add_flag("--include-pre", stats_args.include_pre, "Count pre-disaster label files too");
    stats->add_option("--threads", stats_args.threads, "Worker threads");
    stats->add_flag("--quiet", stats_args.quiet, "Suppress progress output");
    stats->callback([&] { run_stats(stats_args); });

    ExtractArgs extract_args;
    auto* extract = app.add_subcommand("extract", "Extract centroid-centered patches into shards");
    extract->add_option("--corpus", extract_args.corpus, "Corpus root directory")->required();
    extract->add_option("--out", extract_args.out, "Output dataset directory")->required();
    extract->add_option("--seed", extract_args.seed, "Random seed");
    extract->add_option("--patch-size", extract_args.patch_size, "Patch side in pixels")
        ->check(CLI::IsMember({224, 518}));
    extract->add_option("--search-radius", extract_args.search_radius,
                        "Max per-axis recrop offset in pixels");
    extract->add_option("--empty-threshold", extract_args.empty_threshold,
                        "Max acceptable empty-pixel fraction");
    extract->add_option("--max-attempts", extract_args.max_attempts, "Window attempts per building");
    extract->add_flag("--disk-offsets", extract_args.disk_offsets,
                      "Sample offsets from a disk instead of a square");
    extract->add_flag("--exhaustive-fallback", extract_args.exhaustive_fallback,
                      "Scan every window for the true minimum on fallback");
    extract->add_flag("--per-building", extract_args.per_building,
                      "Emit every trainable building instead of one per scene");
    extract->add_flag("--include-pre", extract_args.include_pre, "Include pre-disaster scenes");
    extract->add_flag("--fixed-sampling", extract_args.fixed_sampling,
                      "Keep the same sampled building across passes");
    extract->add_option("--pass", extract_args.pass_index, "Sampling pass index");
    extract->add_option("--split", extract_args.split, "Which corpus split to extract")
        ->check(CLI::IsMember({"train", "test", "all"}));
    extract->add_option("--threads", extract_args.threads, "Worker threads");
    extract->add_flag("--quiet", extract_args.quiet, "Suppress progress output");
    extract->callback([&] { run_extract(extract_args); });

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "Assign train/val splits by scene in a manifest");
    split->add_option("--manifest", split_args.manifest, "Manifest to re-split")->required();
    split->add_option("--out", split_args.out, "Output path (default: rewrite in place)");
    split->add_option("--seed", split_args.seed, "Random seed");
    split->add_option("--train-fraction", split_args.train_fraction,
                      "Fraction of scenes kept for training");
    split->add_flag("--quiet", split_args.quiet, "Suppress progress output");
    split->callback([&] { run_split(split_args); });

    TrainArgs train_args;
    auto* train = app.add_subcommand("train-probe", "Train the linear probe on extracted patches");
    train->add_option("--data", train_args.data, "Dataset directory (manifest.jsonl + patches/)")
        ->required();
    train->add_option("--out", train_args.out, "Checkpoint/metrics directory (default DATA/probe)");
    train->add_option("--lr", train_args.lr, "Learning rate");
    train->add_option("--epochs", train_args.epochs, "Training epochs");
    train->add_option("--batch-size", train_args.batch_size, "Batch size");
    train->add_option("--weight-decay", train_args.weight_decay, "L2 penalty on weights");
    train->add_option("--devices", train_args.devices, "Device count in the step-budget rule");
    train->add_option("--seed", train_args.seed, "Random seed");
    train->add_flag("--quiet", train_args.quiet, "Suppress progress output");
    train->callback([&] { run_train(train_args); });

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "Write logits for a manifest split");
    predict->add_option("--checkpoint", predict_args.checkpoint, "Probe checkpoint file")
        ->required();
    predict->add_option("--data", predict_args.data, "Dataset directory")->required();
    predict->add_option("--out", predict_args.out, "Predictions output file")->required();
    predict->add_option("--split", predict_args.split, "Manifest split to predict")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    predict->add_flag("--quiet", predict_args.quiet, "Suppress progress output");
    predict->callback([&] { run_predict(predict_args); });

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score prediction files against a manifest");
    eval->add_option("--manifest", eval_args.manifest, "Manifest with ground-truth labels")
        ->required();
    eval->add_option("--predictions", eval_args.predictions,
                     "Prediction files (repeat to pool runs)")
        ->required();
    eval->add_option("--json", eval_args.json_out, "Also write the report as JSON");
    eval->add_flag("--quiet", eval_args.quiet, "Suppress progress output");
    eval->callback([&] { run_eval(eval_args); });

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic fixture corpus");
    synth_cmd->add_option("--out", synth_args.out, "Corpus output directory")->required();
    synth_cmd->add_option("--scenes", synth_args.scenes, "Number of scenes");
    synth_cmd->add_option("--image-size", synth_args.image_size, "Scene image side in pixels");
    synth_cmd->add_option("--min-buildings", synth_args.min_buildings, "Min buildings per scene");
    synth_cmd->add_option("--max-buildings", synth_args.max_buildings, "Max buildings per scene");
    synth_cmd->add_option("--weights", synth_args.weights,
                          "Five class weights (4 damage classes + unclassified)")
        ->expected(5);
    synth_cmd->add_option("--black-fraction", synth_args.black_fraction,
                          "Fraction of scenes given a black nodata band");
    synth_cmd->add_option("--test-fraction", synth_args.test_fraction,
                          "Fraction of scenes placed in the test split");
    synth_cmd->add_flag("--with-pre", synth_args.with_pre, "Also emit pre-disaster twins");
    synth_cmd->add_option("--seed", synth_args.seed, "Random seed");
    synth_cmd->add_option("--threads", synth_args.threads, "Worker threads");
    synth_cmd->add_flag("--quiet", synth_args.quiet, "Suppress progress output");
    synth_cmd->callback([&] { run_synth(synth_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
