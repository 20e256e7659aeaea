#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xbdkit/error.hpp"
#include "xbdkit/labels.hpp"
#include "xbdkit/patcher.hpp"
#include "xbdkit/png_io.hpp"
#include "xbdkit/util.hpp"

namespace xbdkit::dataset {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Corpus discovery. Layout convention: any directory pair <X>/labels and
// <X>/images, label files *.json with image <stem>.png. A path component
// named "test" (or "hold") marks the test split; everything else is train.
// Stems ending in _pre_disaster are indexed but excluded from extraction
// unless explicitly requested.
// ---------------------------------------------------------------------------
struct SceneRef {
    std::string scene_id;
    fs::path label_path;
    fs::path image_path;
    labels::SplitTag split_tag = labels::SplitTag::train;
    bool pre_disaster = false;
};

inline std::vector<SceneRef> scan_corpus(const fs::path& root) {
    if (!fs::exists(root)) throw IoError("corpus root does not exist: " + root.string());
    std::vector<SceneRef> refs;
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        const fs::path& p = it->path();
        if (p.extension() != ".json") continue;
        if (p.parent_path().filename() != "labels") continue;

        SceneRef ref;
        ref.scene_id = p.stem().string();
        ref.label_path = p;
        ref.image_path = p.parent_path().parent_path() / "images" / (ref.scene_id + ".png");
        ref.pre_disaster = ref.scene_id.ends_with("_pre_disaster");
        for (const auto& part : fs::relative(p, root)) {
            if (part == "test" || part == "hold") {
                ref.split_tag = labels::SplitTag::test;
                break;
            }
        }
        refs.push_back(std::move(ref));
    }
    std::sort(refs.begin(), refs.end(), [](const SceneRef& a, const SceneRef& b) {
        if (a.split_tag != b.split_tag) return a.split_tag < b.split_tag;
        return a.scene_id < b.scene_id;
    });
    return refs;
}

inline labels::SceneLabels load_scene(const SceneRef& ref) {
    labels::SceneLabels scene = labels::parse_label_file(ref.label_path);
    scene.image_path = ref.image_path;
    scene.split_tag = ref.split_tag;
    return scene;
}

// ---------------------------------------------------------------------------
// Sampling and batching.
// ---------------------------------------------------------------------------

// Uniform pick among the scene's trainable buildings; nullopt is the skip
// sentinel for scenes where nothing is trainable.
inline std::optional<labels::BuildingAnnotation> sample_building(const labels::SceneLabels& scene,
                                                                 std::mt19937_64& rng) {
    std::vector<labels::BuildingAnnotation> pool = labels::trainable_buildings(scene);
    if (pool.empty()) return std::nullopt;
    return pool[static_cast<std::size_t>(uniform_below(rng, pool.size()))];
}

// Drops skip sentinels, then groups into batches; every batch is full except
// possibly the last.
template <class T>
std::vector<std::vector<T>> assemble_batches(const std::vector<std::optional<T>>& stream,
                                             std::size_t batch_size) {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    std::vector<std::vector<T>> batches;
    for (const auto& item : stream) {
        if (!item) continue;
        if (batches.empty() || batches.back().size() == batch_size) batches.emplace_back();
        batches.back().push_back(*item);
    }
    return batches;
}

// ---------------------------------------------------------------------------
// 80/20 split.
// ---------------------------------------------------------------------------
struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

// Seeded shuffle, floor(n * fraction) to train, remainder to val. Inputs are
// sorted first so the partition depends only on the id set and the seed.
inline std::pair<std::vector<std::string>, std::vector<std::string>> split_scenes(
    std::vector<std::string> scene_ids, const SplitSpec& spec) {
    if (scene_ids.empty()) throw Error("split_scenes needs a nonempty scene list");
    if (spec.train_fraction < 0.0 || spec.train_fraction > 1.0) {
        throw Error("train_fraction must be in [0,1]");
    }
    std::sort(scene_ids.begin(), scene_ids.end());
    std::mt19937_64 rng = make_rng(spec.seed, "split");
    shuffle_vec(scene_ids, rng);
    const std::size_t n_train =
        static_cast<std::size_t>(spec.train_fraction * static_cast<double>(scene_ids.size()));
    std::vector<std::string> train(scene_ids.begin(), scene_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::string> val(scene_ids.begin() + static_cast<std::ptrdiff_t>(n_train), scene_ids.end());
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Manifest: one JSON record per line, sorted by (scene_id, building_id),
// with a distinctly tagged stats footer as the last line.
// ---------------------------------------------------------------------------
struct ManifestEntry {
    std::string path;  // patch file, relative to the manifest directory
    std::string scene_id;
    std::string building_id;
    int label = 0;
    double empty_ratio = 0.0;
    bool fallback = false;
    std::string split = "train";

    std::string sample_id() const { return scene_id + "__" + building_id; }

    bool operator==(const ManifestEntry&) const = default;
};

struct ManifestStats {
    std::uint64_t total = 0;
    std::array<std::uint64_t, labels::kNumClasses> class_counts{};
    std::uint64_t fallback_count = 0;
    double fallback_rate = 0.0;
    double mean_empty_ratio = 0.0;
    int patch_size = 0;
    std::uint64_t seed = 0;
    double empty_threshold = 0.0;
    int search_radius = 0;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    std::optional<ManifestStats> stats;
};

inline ManifestStats compute_stats(const std::vector<ManifestEntry>& entries,
                                   const patcher::PatchConfig& cfg) {
    ManifestStats st;
    st.total = entries.size();
    st.patch_size = cfg.patch_size;
    st.seed = cfg.seed;
    st.empty_threshold = cfg.empty_threshold;
    st.search_radius = cfg.search_radius;
    double ratio_sum = 0.0;
    for (const auto& e : entries) {
        ++st.class_counts[static_cast<std::size_t>(e.label)];
        if (e.fallback) ++st.fallback_count;
        ratio_sum += e.empty_ratio;
    }
    if (st.total > 0) {
        st.fallback_rate = static_cast<double>(st.fallback_count) / static_cast<double>(st.total);
        st.mean_empty_ratio = ratio_sum / static_cast<double>(st.total);
    }
    return st;
}

inline void sort_entries(std::vector<ManifestEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
        if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
        return a.building_id < b.building_id;
    });
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries,
                           const ManifestStats& stats) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["type"] = "patch";
        j["path"] = e.path;
        j["scene_id"] = e.scene_id;
        j["building_id"] = e.building_id;
        j["label"] = e.label;
        j["empty_ratio"] = e.empty_ratio;
        j["fallback"] = e.fallback;
        j["split"] = e.split;
        out << j.dump() << '\n';
    }
    nlohmann::ordered_json j;
    j["type"] = "stats";
    j["total"] = stats.total;
    j["class_counts"] = stats.class_counts;
    j["fallback_count"] = stats.fallback_count;
    j["fallback_rate"] = stats.fallback_rate;
    j["mean_empty_ratio"] = stats.mean_empty_ratio;
    j["patch_size"] = stats.patch_size;
    j["seed"] = stats.seed;
    j["empty_threshold"] = stats.empty_threshold;
    j["search_radius"] = stats.search_radius;
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline Manifest read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string type = j.value("type", "patch");
        if (type == "stats") {
            ManifestStats st;
            st.total = j.at("total").get<std::uint64_t>();
            auto cc = j.at("class_counts");
            for (int i = 0; i < labels::kNumClasses; ++i) {
                st.class_counts[static_cast<std::size_t>(i)] = cc.at(static_cast<std::size_t>(i)).get<std::uint64_t>();
            }
            st.fallback_count = j.at("fallback_count").get<std::uint64_t>();
            st.fallback_rate = j.at("fallback_rate").get<double>();
            st.mean_empty_ratio = j.at("mean_empty_ratio").get<double>();
            st.patch_size = j.value("patch_size", 0);
            st.seed = j.value("seed", std::uint64_t{0});
            st.empty_threshold = j.value("empty_threshold", 0.0);
            st.search_radius = j.value("search_radius", 0);
            m.stats = st;
            continue;
        }
        try {
            ManifestEntry e;
            e.path = j.at("path").get<std::string>();
            e.scene_id = j.at("scene_id").get<std::string>();
            e.building_id = j.at("building_id").get<std::string>();
            e.label = j.at("label").get<int>();
            e.empty_ratio = j.at("empty_ratio").get<double>();
            e.fallback = j.at("fallback").get<bool>();
            e.split = j.at("split").get<std::string>();
            if (e.label < 0 || e.label >= labels::kNumClasses) {
                throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": label out of range");
            }
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

inline std::string sanitize_filename(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '-');
    }
    return out;
}

// Writes patch PNGs (RGB, alpha dropped) plus the sorted manifest with its
// stats footer. Used directly by tests; the corpus pipeline below streams
// pixels through temp files instead of holding them all.
inline Manifest emit_shards(std::vector<patcher::PatchRecord> records,
                            const std::vector<std::string>& splits, const fs::path& out_dir,
                            const patcher::PatchConfig& cfg) {
    if (!splits.empty() && splits.size() != records.size()) {
        throw Error("emit_shards: splits size mismatch");
    }
    fs::create_directories(out_dir / "patches");

    std::vector<ManifestEntry> entries;
    entries.reserve(records.size());
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].scene_id != records[b].scene_id) return records[a].scene_id < records[b].scene_id;
        return records[a].building_id < records[b].building_id;
    });

    for (std::size_t i : order) {
        const patcher::PatchRecord& rec = records[i];
        if (!labels::is_trainable(rec.label)) {
            throw Error("emit_shards: unclassified building in record stream");
        }
        ManifestEntry e;
        e.path = "patches/" + sanitize_filename(rec.scene_id) + "__" +
                 sanitize_filename(rec.building_id) + ".png";
        e.scene_id = rec.scene_id;
        e.building_id = rec.building_id;
        e.label = static_cast<int>(rec.label);
        e.empty_ratio = rec.empty_ratio;
        e.fallback = rec.fallback_used;
        e.split = splits.empty() ? "train" : splits[i];
        raster::save_png(out_dir / e.path, rec.pixels, /*drop_alpha=*/true);
        entries.push_back(std::move(e));
    }

    ManifestStats stats = compute_stats(entries, cfg);
    write_manifest(out_dir / "manifest.jsonl", entries, stats);
    return Manifest{std::move(entries), stats};
}

// ---------------------------------------------------------------------------
// Full extraction pipeline: scan, parse, pick buildings, extract, emit.
// Scene work runs on --threads workers; determinism holds because every
// random stream is keyed by (seed, scene, building), never by worker order.
// ---------------------------------------------------------------------------
struct ExtractOptions {
    patcher::PatchConfig patch;
    bool per_building = false;       // emit every trainable building once
    bool include_pre_disaster = false;
    bool fixed_sampling = false;     // same building every pass
    int pass_index = 0;              // varies the sampled building per pass
    std::optional<labels::SplitTag> split_filter = labels::SplitTag::train;
    unsigned threads = 1;
    std::function<void(const std::string&)> progress;  // optional logging hook
};

struct ExtractResult {
    Manifest manifest;
    std::uint64_t scenes_scanned = 0;
    std::uint64_t scenes_skipped = 0;  // no trainable buildings
    std::uint64_t features_skipped = 0;
};

inline ExtractResult extract_corpus(const fs::path& corpus_root, const fs::path& out_dir,
                                    const ExtractOptions& opt) {
    opt.patch.validate();
    std::vector<SceneRef> refs = scan_corpus(corpus_root);
    refs.erase(std::remove_if(refs.begin(), refs.end(),
                              [&](const SceneRef& r) {
                                  if (!opt.include_pre_disaster && r.pre_disaster) return true;
                                  return opt.split_filter && r.split_tag != *opt.split_filter;
                              }),
               refs.end());

    fs::create_directories(out_dir / "patches");

    struct SceneOutput {
        std::vector<ManifestEntry> entries;
        std::vector<fs::path> tmp_files;  // parallel to entries
        bool skipped = false;
        std::uint64_t features_skipped = 0;
    };
    std::vector<SceneOutput> outputs(refs.size());

    parallel_for(refs.size(), opt.threads, [&](std::size_t i) {
        const SceneRef& ref = refs[i];
        SceneOutput& out = outputs[i];
        labels::SceneLabels scene = load_scene(ref);
        out.features_skipped = static_cast<std::uint64_t>(scene.skipped_features);

        std::vector<labels::BuildingAnnotation> targets;
        if (opt.per_building) {
            targets = labels::trainable_buildings(scene);
        } else {
            std::mt19937_64 rng =
                opt.fixed_sampling
                    ? make_rng(opt.patch.seed, "sample", scene.scene_id)
                    : make_rng(opt.patch.seed, "sample", scene.scene_id, std::to_string(opt.pass_index));
            if (auto pick = sample_building(scene, rng)) targets.push_back(*pick);
        }
        if (targets.empty()) {
            out.skipped = true;
            if (opt.progress) opt.progress("skip " + scene.scene_id + " (no trainable buildings)");
            return;
        }

        raster::RgbaRaster img = raster::load_png(scene.image_path);
        for (const auto& building : targets) {
            patcher::PatchRecord rec = patcher::extract_patch(img, scene.scene_id, building, opt.patch);
            ManifestEntry e;
            e.path = "patches/" + sanitize_filename(rec.scene_id) + "__" +
                     sanitize_filename(rec.building_id) + ".png";
            e.scene_id = rec.scene_id;
            e.building_id = rec.building_id;
            e.label = static_cast<int>(rec.label);
            e.empty_ratio = rec.empty_ratio;
            e.fallback = rec.fallback_used;
            e.split = labels::split_name(ref.split_tag);
            // Pixels go to disk now under a temp name; renamed at commit.
            fs::path tmp = out_dir / "patches" / (".tmp-" + std::to_string(i) + "-" +
                                                  std::to_string(out.entries.size()) + ".png");
            raster::save_png(tmp, rec.pixels, /*drop_alpha=*/true);
            out.entries.push_back(std::move(e));
            out.tmp_files.push_back(std::move(tmp));
        }
        if (opt.progress) opt.progress("extracted " + scene.scene_id);
    });

    ExtractResult result;
    result.scenes_scanned = refs.size();
    std::vector<ManifestEntry> entries;
    std::vector<fs::path> tmp_files;
    for (auto& out : outputs) {
        result.scenes_skipped += out.skipped ? 1 : 0;
        result.features_skipped += out.features_skipped;
        for (std::size_t k = 0; k < out.entries.size(); ++k) {
            entries.push_back(std::move(out.entries[k]));
            tmp_files.push_back(std::move(out.tmp_files[k]));
        }
    }

    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (entries[a].scene_id != entries[b].scene_id) return entries[a].scene_id < entries[b].scene_id;
        return entries[a].building_id < entries[b].building_id;
    });

    std::vector<ManifestEntry> sorted;
    sorted.reserve(entries.size());
    for (std::size_t i : order) {
        fs::rename(tmp_files[i], out_dir / entries[i].path);
        sorted.push_back(std::move(entries[i]));
    }

    ManifestStats stats = compute_stats(sorted, opt.patch);
    write_manifest(out_dir / "manifest.jsonl", sorted, stats);
    result.manifest = Manifest{std::move(sorted), stats};
    return result;
}

// Re-splits the train portion of a manifest into train/val by scene.
// Test-tagged entries are left untouched.
inline Manifest apply_split(Manifest manifest, const SplitSpec& spec) {
    std::set<std::string> train_scenes;
    for (const auto& e : manifest.entries) {
        if (e.split == "train" || e.split == "val") train_scenes.insert(e.scene_id);
    }
    if (train_scenes.empty()) return manifest;
    auto [train_ids, val_ids] =
        split_scenes(std::vector<std::string>(train_scenes.begin(), train_scenes.end()), spec);
    std::set<std::string> val_set(val_ids.begin(), val_ids.end());
    for (auto& e : manifest.entries) {
        if (e.split == "test") continue;
        e.split = val_set.count(e.scene_id) ? "val" : "train";
    }
    return manifest;
}

}  // namespace xbdkit::dataset
