#include "xbdkit/dataset.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "helpers.hpp"
#include "xbdkit/png_io.hpp"

using namespace xbdkit;

namespace {

void write_scene(const testutil::TempDir& tmp, const std::string& subdir,
                 const std::string& scene_id, const std::string& features_xy) {
    testutil::write_text(tmp.path / subdir / "labels" / (scene_id + ".json"),
                         std::string(R"({"features": {"xy": [)") + features_xy + "]}}");
    std::filesystem::create_directories(tmp.path / subdir / "images");
    raster::save_png(tmp.path / subdir / "images" / (scene_id + ".png"),
                     raster::RgbaRaster(64, 64, 160, 150, 140), /*drop_alpha=*/true);
}

std::string feature(const std::string& uid, const std::string& subtype, int x, int y, int side) {
    std::string wkt = "POLYGON ((" + std::to_string(x) + " " + std::to_string(y) + ", " +
                      std::to_string(x + side) + " " + std::to_string(y) + ", " +
                      std::to_string(x + side) + " " + std::to_string(y + side) + ", " +
                      std::to_string(x) + " " + std::to_string(y + side) + "))";
    std::string props = R"("uid": ")" + uid + "\"";
    if (!subtype.empty()) props += R"(, "subtype": ")" + subtype + "\"";
    return "{\"properties\": {" + props + "}, \"wkt\": \"" + wkt + "\"}";
}

// Two train scenes (one with no trainable buildings), one pre-disaster twin,
// one test scene.
void make_corpus(const testutil::TempDir& tmp) {
    write_scene(tmp, "train", "alpha_post_disaster",
                feature("a1", "no-damage", 10, 10, 12) + "," +
                    feature("a2", "destroyed", 40, 40, 12) + "," +
                    feature("a3", "un-classified", 24, 24, 8));
    write_scene(tmp, "train", "beta_post_disaster", feature("b1", "un-classified", 20, 20, 10));
    write_scene(tmp, "train", "alpha_pre_disaster", feature("a1", "", 10, 10, 12));
    write_scene(tmp, "test", "delta_post_disaster", feature("d1", "minor-damage", 30, 30, 14));
}

}  // namespace

TEST(ScanCorpus, FindsScenesWithSplitAndPreFlags) {
    testutil::TempDir tmp;
    make_corpus(tmp);

    const auto refs = dataset::scan_corpus(tmp.path);
    ASSERT_EQ(refs.size(), 4u);
    // Train refs sort before test, alphabetically within the split.
    EXPECT_EQ(refs[0].scene_id, "alpha_post_disaster");
    EXPECT_EQ(refs[1].scene_id, "alpha_pre_disaster");
    EXPECT_EQ(refs[2].scene_id, "beta_post_disaster");
    EXPECT_EQ(refs[3].scene_id, "delta_post_disaster");
    EXPECT_TRUE(refs[1].pre_disaster);
    EXPECT_FALSE(refs[0].pre_disaster);
    EXPECT_EQ(refs[3].split_tag, labels::SplitTag::test);
    EXPECT_EQ(refs[0].split_tag, labels::SplitTag::train);
    for (const auto& r : refs) EXPECT_TRUE(std::filesystem::exists(r.image_path));

    EXPECT_THROW(dataset::scan_corpus(tmp.path / "no_such_dir"), IoError);
}

TEST(SampleBuilding, SkipsScenesWithNothingTrainable) {
    testutil::TempDir tmp;
    make_corpus(tmp);
    const auto refs = dataset::scan_corpus(tmp.path);

    const labels::SceneLabels beta = dataset::load_scene(refs[2]);
    auto rng = make_rng(1, "sample");
    EXPECT_FALSE(dataset::sample_building(beta, rng).has_value());
}

TEST(SampleBuilding, UniformOverTrainableBuildings) {
    testutil::TempDir tmp;
    make_corpus(tmp);
    const auto refs = dataset::scan_corpus(tmp.path);
    const labels::SceneLabels alpha = dataset::load_scene(refs[0]);

    std::map<std::string, int> picks;
    auto rng = make_rng(2, "sample");
    for (int i = 0; i < 2000; ++i) {
        const auto pick = dataset::sample_building(alpha, rng);
        ASSERT_TRUE(pick.has_value());
        ASSERT_NE(pick->building_id, "a3");  // unclassified is never sampled
        ++picks[pick->building_id];
    }
    EXPECT_GT(picks["a1"], 850);
    EXPECT_GT(picks["a2"], 850);
}

TEST(AssembleBatches, DropsSkipsAndGroups) {
    std::vector<std::optional<int>> stream{1, std::nullopt, 2, 3, std::nullopt, 4, 5};
    const auto batches = dataset::assemble_batches(stream, 2);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[0], (std::vector<int>{1, 2}));
    EXPECT_EQ(batches[1], (std::vector<int>{3, 4}));
    EXPECT_EQ(batches[2], (std::vector<int>{5}));
    EXPECT_THROW(dataset::assemble_batches(stream, 0), Error);
}

TEST(SplitScenes, FloorRuleAndDeterminism) {
    std::vector<std::string> ids;
    for (int i = 0; i < 5598; ++i) ids.push_back("scene-" + std::to_string(i));

    const auto [train, val] = dataset::split_scenes(ids, {0.8, 123});
    EXPECT_EQ(train.size(), 4478u);
    EXPECT_EQ(val.size(), 1120u);

    // Disjoint and exhaustive.
    std::set<std::string> all(train.begin(), train.end());
    all.insert(val.begin(), val.end());
    EXPECT_EQ(all.size(), ids.size());

    // Same seed, shuffled input order: identical partition.
    std::vector<std::string> reordered(ids.rbegin(), ids.rend());
    const auto [train2, val2] = dataset::split_scenes(reordered, {0.8, 123});
    EXPECT_EQ(train, train2);
    EXPECT_EQ(val, val2);

    const auto [train3, val3] = dataset::split_scenes(ids, {0.8, 124});
    EXPECT_NE(train, train3);

    EXPECT_THROW(dataset::split_scenes({}, {0.8, 1}), Error);
    EXPECT_THROW(dataset::split_scenes(ids, {1.5, 1}), Error);
}

TEST(Manifest, WriteReadRoundTrip) {
    testutil::TempDir tmp;
    std::vector<dataset::ManifestEntry> entries{
        {"patches/s1__b1.png", "s1", "b1", 0, 0.0, false, "train"},
        {"patches/s1__b2.png", "s1", "b2", 3, 0.25, true, "val"},
    };
    patcher::PatchConfig cfg;
    cfg.seed = 77;
    const dataset::ManifestStats stats = dataset::compute_stats(entries, cfg);
    EXPECT_EQ(stats.total, 2u);
    EXPECT_EQ(stats.class_counts[0], 1u);
    EXPECT_EQ(stats.class_counts[3], 1u);
    EXPECT_DOUBLE_EQ(stats.fallback_rate, 0.5);
    EXPECT_DOUBLE_EQ(stats.mean_empty_ratio, 0.125);

    const auto path = tmp / "manifest.jsonl";
    dataset::write_manifest(path, entries, stats);
    const dataset::Manifest back = dataset::read_manifest(path);
    ASSERT_EQ(back.entries.size(), 2u);
    EXPECT_EQ(back.entries[0], entries[0]);
    EXPECT_EQ(back.entries[1], entries[1]);
    ASSERT_TRUE(back.stats.has_value());
    EXPECT_EQ(back.stats->total, 2u);
    EXPECT_EQ(back.stats->seed, 77u);
    EXPECT_EQ(back.stats->patch_size, cfg.patch_size);

    // Re-serialization is byte-stable.
    dataset::write_manifest(tmp / "again.jsonl", back.entries, *back.stats);
    EXPECT_EQ(testutil::read_bytes(path), testutil::read_bytes(tmp / "again.jsonl"));
}

TEST(Manifest, SchemaErrorsNameTheLine) {
    testutil::TempDir tmp;
    const auto bad_json = tmp / "bad.jsonl";
    testutil::write_text(bad_json, "{\"type\":\"patch\"}\nnot json\n");
    try {
        dataset::read_manifest(bad_json);
        FAIL() << "expected SchemaError";
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos);
    }

    const auto bad_label = tmp / "label.jsonl";
    testutil::write_text(bad_label,
                         R"({"type":"patch","path":"p.png","scene_id":"s","building_id":"b",)"
                         R"("label":9,"empty_ratio":0.0,"fallback":false,"split":"train"})"
                         "\n");
    EXPECT_THROW(dataset::read_manifest(bad_label), SchemaError);

    EXPECT_THROW(dataset::read_manifest(tmp / "missing.jsonl"), IoError);
}

TEST(EmitShards, WritesSortedManifestAndPatches) {
    testutil::TempDir tmp;
    std::vector<patcher::PatchRecord> records(3);
    records[0].scene_id = "zeta";
    records[0].building_id = "b1";
    records[0].label = labels::DamageClass::destroyed;
    records[0].empty_ratio = 0.5;
    records[0].fallback_used = true;
    records[0].pixels = raster::RgbaRaster(8, 8, 100, 100, 100);
    records[1].scene_id = "alpha";
    records[1].building_id = "b2";
    records[1].label = labels::DamageClass::no_damage;
    records[1].pixels = raster::RgbaRaster(8, 8, 120, 120, 120);
    records[2].scene_id = "alpha";
    records[2].building_id = "b1";
    records[2].label = labels::DamageClass::minor_damage;
    records[2].pixels = raster::RgbaRaster(8, 8, 130, 130, 130);

    const dataset::Manifest m =
        dataset::emit_shards(records, {"train", "train", "val"}, tmp.path, {});
    ASSERT_EQ(m.entries.size(), 3u);
    EXPECT_EQ(m.entries[0].scene_id, "alpha");
    EXPECT_EQ(m.entries[0].building_id, "b1");
    EXPECT_EQ(m.entries[0].split, "val");  // splits follow their records
    EXPECT_EQ(m.entries[1].building_id, "b2");
    EXPECT_EQ(m.entries[2].scene_id, "zeta");
    for (const auto& e : m.entries) {
        EXPECT_TRUE(std::filesystem::exists(tmp.path / e.path)) << e.path;
    }
    ASSERT_TRUE(m.stats.has_value());
    EXPECT_EQ(m.stats->class_counts[0], 1u);
    EXPECT_EQ(m.stats->fallback_count, 1u);

    std::vector<patcher::PatchRecord> bad(1);
    bad[0].scene_id = "s";
    bad[0].building_id = "b";
    bad[0].label = labels::DamageClass::unclassified;
    bad[0].pixels = raster::RgbaRaster(4, 4, 50, 50, 50);
    EXPECT_THROW(dataset::emit_shards(bad, {"train"}, tmp.path, {}), Error);
}

TEST(ExtractCorpus, DeterministicAcrossRunsAndThreadCounts) {
    testutil::TempDir tmp;
    make_corpus(tmp);

    dataset::ExtractOptions opt;
    opt.patch.patch_size = 32;
    opt.patch.seed = 9;
    opt.threads = 1;

    testutil::TempDir out_a;
    testutil::TempDir out_b;
    const auto res_a = dataset::extract_corpus(tmp.path, out_a.path, opt);
    opt.threads = 3;
    const auto res_b = dataset::extract_corpus(tmp.path, out_b.path, opt);

    EXPECT_EQ(testutil::read_bytes(out_a.path / "manifest.jsonl"),
              testutil::read_bytes(out_b.path / "manifest.jsonl"));
    ASSERT_EQ(res_a.manifest.entries.size(), res_b.manifest.entries.size());
    for (std::size_t i = 0; i < res_a.manifest.entries.size(); ++i) {
        const auto& e = res_a.manifest.entries[i];
        EXPECT_EQ(testutil::read_bytes(out_a.path / e.path), testutil::read_bytes(out_b.path / e.path));
    }

    // One sampled building per trainable train scene; beta has none, and the
    // pre-disaster twin is excluded by default.
    EXPECT_EQ(res_a.manifest.entries.size(), 1u);
    EXPECT_EQ(res_a.manifest.entries[0].scene_id, "alpha_post_disaster");
    EXPECT_EQ(res_a.scenes_skipped, 1u);
}

TEST(ExtractCorpus, PerBuildingEmitsEveryTrainableBuilding) {
    testutil::TempDir tmp;
    make_corpus(tmp);

    dataset::ExtractOptions opt;
    opt.patch.patch_size = 32;
    opt.per_building = true;
    opt.split_filter = std::nullopt;  // train and test both

    testutil::TempDir out;
    const auto res = dataset::extract_corpus(tmp.path, out.path, opt);
    // alpha: a1 + a2 (a3 unclassified), beta: none, delta: d1.
    ASSERT_EQ(res.manifest.entries.size(), 3u);
    EXPECT_EQ(res.manifest.entries[0].sample_id(), "alpha_post_disaster__a1");
    EXPECT_EQ(res.manifest.entries[1].sample_id(), "alpha_post_disaster__a2");
    EXPECT_EQ(res.manifest.entries[2].sample_id(), "delta_post_disaster__d1");
    EXPECT_EQ(res.manifest.entries[2].split, "test");
}

TEST(ApplySplit, ResplitsTrainScenesOnly) {
    dataset::Manifest m;
    for (int s = 0; s < 10; ++s) {
        for (int b = 0; b < 3; ++b) {
            dataset::ManifestEntry e;
            e.scene_id = "scene-" + std::to_string(s);
            e.building_id = "b" + std::to_string(b);
            e.path = "patches/x.png";
            e.split = s < 8 ? "train" : "test";
            m.entries.push_back(e);
        }
    }
    const dataset::Manifest out = dataset::apply_split(m, {0.75, 42});

    std::map<std::string, std::set<std::string>> split_by_scene;
    for (const auto& e : out.entries) split_by_scene[e.scene_id].insert(e.split);
    std::size_t train_scenes = 0, val_scenes = 0;
    for (const auto& [scene, splits] : split_by_scene) {
        ASSERT_EQ(splits.size(), 1u) << scene << " straddles splits";
        if (splits.count("train")) ++train_scenes;
        if (splits.count("val")) ++val_scenes;
    }
    EXPECT_EQ(train_scenes, 6u);  // floor(8 * 0.75)
    EXPECT_EQ(val_scenes, 2u);
    EXPECT_EQ(split_by_scene["scene-8"], std::set<std::string>{"test"});
    EXPECT_EQ(split_by_scene["scene-9"], std::set<std::string>{"test"});
}
