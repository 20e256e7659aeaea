#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbdkit/error.hpp"
#include "xbdkit/geom.hpp"
#include "xbdkit/labels.hpp"
#include "xbdkit/png_io.hpp"
#include "xbdkit/raster.hpp"
#include "xbdkit/util.hpp"

namespace xbdkit::synth {

namespace fs = std::filesystem;

struct Color {
    std::uint8_t r = 0, g = 0, b = 0;
};

// Fill colors keep every channel above the black cutoff so building interiors
// never read as empty; only planted bands do.
inline constexpr Color kBackground{96, 96, 96};
inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kPreDisasterFill{180, 180, 180};
inline constexpr std::array<Color, 5> kClassFill{{
    {80, 200, 80},    // no-damage
    {230, 230, 60},   // minor
    {240, 150, 50},   // major
    {220, 60, 60},    // destroyed
    {150, 150, 230},  // unclassified
}};

struct FixtureSpec {
    int n_scenes = 100;
    int image_size = 128;
    int min_buildings = 2;
    int max_buildings = 4;
    // Four trainable classes plus unclassified; any nonnegative weights work,
    // only the proportions matter.
    std::array<double, 5> class_weights{313033.0, 36860.0, 29904.0, 31560.0, 0.0};
    double black_region_fraction = 0.0;  // share of scenes given a nodata band
    double test_fraction = 0.0;          // share of scenes under test/
    bool with_pre_disaster = false;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (n_scenes < 0) throw Error("n_scenes must be >= 0");
        if (min_buildings < 1 || max_buildings < min_buildings) {
            throw Error("building count range must satisfy 1 <= min <= max");
        }
        if (max_buildings > 16) throw Error("max_buildings must be <= 16");
        const int grid = grid_side(max_buildings);
        if (image_size < 16 * grid) {
            throw Error("image_size too small for " + std::to_string(max_buildings) + " buildings");
        }
        double wsum = 0.0;
        for (double w : class_weights) {
            if (w < 0.0 || !std::isfinite(w)) throw Error("class weights must be finite and >= 0");
            wsum += w;
        }
        if (wsum <= 0.0) throw Error("class weights must not all be zero");
        if (black_region_fraction < 0.0 || black_region_fraction > 1.0) {
            throw Error("black_region_fraction must be in [0,1]");
        }
        if (test_fraction < 0.0 || test_fraction > 1.0) {
            throw Error("test_fraction must be in [0,1]");
        }
    }

    static int grid_side(int n_buildings) {
        int g = 1;
        while (g * g < n_buildings) ++g;
        return g;
    }
};

// Largest-remainder apportionment: counts sum to total and each sits within
// one unit of its exact quota. Ties go to the lower class index.
inline std::array<std::uint64_t, 5> apportion(std::uint64_t total,
                                              const std::array<double, 5>& weights) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (wsum <= 0.0) throw Error("apportion: weights must not all be zero");
    std::array<std::uint64_t, 5> counts{};
    std::array<double, 5> frac{};
    std::uint64_t assigned = 0;
    for (std::size_t c = 0; c < 5; ++c) {
        const double quota = static_cast<double>(total) * weights[c] / wsum;
        counts[c] = static_cast<std::uint64_t>(std::floor(quota));
        frac[c] = quota - std::floor(quota);
        assigned += counts[c];
    }
    std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % 5]];
    return counts;
}

struct PlantedBuilding {
    std::string building_id;
    int label = 0;  // 0..4, 4 = unclassified
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double cx() const { return (x1 + x2) / 2.0; }
    double cy() const { return (y1 + y2) / 2.0; }
};

struct PlantedScene {
    std::string scene_id;
    bool in_test_split = false;
    std::vector<PlantedBuilding> buildings;
    bool has_black_band = false;
    int band_x2 = 0;  // band covers x in [0, band_x2) at full height
};

struct GenerateResult {
    std::uint64_t n_scenes = 0;
    std::uint64_t n_buildings = 0;
    std::array<std::uint64_t, 5> class_counts{};
    fs::path sidecar_path;
};

namespace detail {

inline std::string scene_name(int index, bool pre) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "synth_%06d_%s_disaster", index, pre ? "pre" : "post");
    return buf;
}

inline geom::PolygonRing rect_ring(const PlantedBuilding& b) {
    geom::PolygonRing ring;
    ring.vertices = {{b.x1, b.y1}, {b.x2, b.y1}, {b.x2, b.y2}, {b.x1, b.y2}, {b.x1, b.y1}};
    return ring;
}

inline void fill_rect(raster::RgbaRaster& img, int x1, int y1, int x2, int y2, Color c) {
    x1 = std::max(0, x1);
    y1 = std::max(0, y1);
    x2 = std::min(img.width, x2);
    y2 = std::min(img.height, y2);
    for (int y = y1; y < y2; ++y) {
        for (int x = x1; x < x2; ++x) img.set_pixel(x, y, c.r, c.g, c.b);
    }
}

inline nlohmann::ordered_json label_document(const PlantedScene& scene, bool pre) {
    nlohmann::ordered_json xy = nlohmann::ordered_json::array();
    for (const auto& b : scene.buildings) {
        nlohmann::ordered_json props;
        props["feature_type"] = "building";
        if (!pre) {
            props["subtype"] =
                labels::class_name(static_cast<labels::DamageClass>(b.label));
        }
        props["uid"] = b.building_id;
        nlohmann::ordered_json feat;
        feat["properties"] = std::move(props);
        feat["wkt"] = geom::serialize_wkt(rect_ring(b));
        xy.push_back(std::move(feat));
    }
    nlohmann::ordered_json doc;
    doc["features"] = nlohmann::ordered_json::object();
    doc["features"]["xy"] = std::move(xy);
    doc["metadata"] = {{"width", 0}, {"height", 0}};  // filled by caller
    return doc;
}

inline raster::RgbaRaster render_scene(const PlantedScene& scene, int image_size, bool pre) {
    raster::RgbaRaster img(image_size, image_size, kBackground.r, kBackground.g, kBackground.b);
    if (scene.has_black_band) {
        fill_rect(img, 0, 0, scene.band_x2, image_size, kBlack);
    }
    for (const auto& b : scene.buildings) {
        const Color fill =
            pre ? kPreDisasterFill : kClassFill[static_cast<std::size_t>(b.label)];
        fill_rect(img, static_cast<int>(b.x1), static_cast<int>(b.y1), static_cast<int>(b.x2),
                  static_cast<int>(b.y2), fill);
    }
    return img;
}

}  // namespace detail

// Lays out the whole corpus in memory: per-scene building counts, exact
// class apportionment over the total, seeded deal, geometry placement.
inline std::vector<PlantedScene> plan_scenes(const FixtureSpec& spec) {
    spec.validate();
    std::vector<PlantedScene> scenes(static_cast<std::size_t>(spec.n_scenes));

    // Per-scene building counts, then one global label multiset dealt in
    // scene order so planted class totals are exact.
    std::uint64_t total = 0;
    for (int i = 0; i < spec.n_scenes; ++i) {
        auto& s = scenes[static_cast<std::size_t>(i)];
        s.scene_id = detail::scene_name(i, false);
        std::mt19937_64 rng = make_rng(spec.seed, "counts", s.scene_id);
        const auto span = static_cast<std::uint64_t>(spec.max_buildings - spec.min_buildings + 1);
        const auto n = spec.min_buildings + static_cast<int>(uniform_below(rng, span));
        s.buildings.resize(static_cast<std::size_t>(n));
        total += static_cast<std::uint64_t>(n);
    }

    const std::array<std::uint64_t, 5> counts = apportion(total, spec.class_weights);
    std::vector<int> deck;
    deck.reserve(total);
    for (int c = 0; c < 5; ++c) {
        for (std::uint64_t k = 0; k < counts[static_cast<std::size_t>(c)]; ++k) deck.push_back(c);
    }
    std::mt19937_64 mix_rng = make_rng(spec.seed, "mix");
    shuffle_vec(deck, mix_rng);

    // Test split = the tail of the index range; black bands = seeded pick of
    // an exact scene count.
    const auto n_test = static_cast<int>(
        std::llround(spec.test_fraction * static_cast<double>(spec.n_scenes)));
    const auto n_black = static_cast<int>(
        std::llround(spec.black_region_fraction * static_cast<double>(spec.n_scenes)));
    std::vector<int> band_pick(static_cast<std::size_t>(spec.n_scenes));
    std::iota(band_pick.begin(), band_pick.end(), 0);
    std::mt19937_64 band_rng = make_rng(spec.seed, "bands");
    shuffle_vec(band_pick, band_rng);
    std::vector<bool> banded(static_cast<std::size_t>(spec.n_scenes), false);
    for (int k = 0; k < n_black; ++k) banded[static_cast<std::size_t>(band_pick[static_cast<std::size_t>(k)])] = true;

    std::size_t deck_pos = 0;
    for (int i = 0; i < spec.n_scenes; ++i) {
        auto& s = scenes[static_cast<std::size_t>(i)];
        s.in_test_split = i >= spec.n_scenes - n_test;
        s.has_black_band = banded[static_cast<std::size_t>(i)];
        s.band_x2 = s.has_black_band ? spec.image_size / 4 : 0;

        std::mt19937_64 rng = make_rng(spec.seed, "scene", s.scene_id);
        const int n = static_cast<int>(s.buildings.size());
        const int g = FixtureSpec::grid_side(n);
        const int cs = spec.image_size / g;
        std::vector<int> cells(static_cast<std::size_t>(g) * static_cast<std::size_t>(g));
        std::iota(cells.begin(), cells.end(), 0);
        shuffle_vec(cells, rng);

        for (int k = 0; k < n; ++k) {
            auto& b = s.buildings[static_cast<std::size_t>(k)];
            char id[16];
            std::snprintf(id, sizeof(id), "b%02d", k);
            b.building_id = id;
            b.label = deck[deck_pos++];

            const int cell = cells[static_cast<std::size_t>(k)];
            const int cx0 = (cell % g) * cs;
            const int cy0 = (cell / g) * cs;
            const int margin = cs / 8;
            const auto jitter = static_cast<std::uint64_t>(std::max(1, cs / 8));
            const int x1 = cx0 + margin + static_cast<int>(uniform_below(rng, jitter));
            const int y1 = cy0 + margin + static_cast<int>(uniform_below(rng, jitter));
            const auto wjit = static_cast<std::uint64_t>(std::max(1, cs / 4));
            const int w = cs / 2 + static_cast<int>(uniform_below(rng, wjit));
            const int h = cs / 2 + static_cast<int>(uniform_below(rng, wjit));
            b.x1 = x1;
            b.y1 = y1;
            b.x2 = std::min(x1 + w, cx0 + cs - margin);
            b.y2 = std::min(y1 + h, cy0 + cs - margin);
        }
    }
    return scenes;
}

// Writes the corpus (train/ and, when used, test/ subtrees in the standard
// images+labels layout) plus a ground-truth sidecar at the root recording
// every planted fact. Same spec and seed give a byte-identical tree.
inline GenerateResult generate(const FixtureSpec& spec, const fs::path& out_dir) {
    std::vector<PlantedScene> scenes = plan_scenes(spec);

    const fs::path train_dir = out_dir / "train";
    fs::create_directories(train_dir / "images");
    fs::create_directories(train_dir / "labels");
    bool any_test = false;
    for (const auto& s : scenes) any_test |= s.in_test_split;
    if (any_test) {
        fs::create_directories(out_dir / "test" / "images");
        fs::create_directories(out_dir / "test" / "labels");
    }

    parallel_for(scenes.size(), spec.threads, [&](std::size_t i) {
        const PlantedScene& s = scenes[i];
        const fs::path base = out_dir / (s.in_test_split ? "test" : "train");

        nlohmann::ordered_json doc = detail::label_document(s, /*pre=*/false);
        doc["metadata"] = {{"width", spec.image_size}, {"height", spec.image_size}};
        std::ofstream lbl(base / "labels" / (s.scene_id + ".json"), std::ios::binary);
        if (!lbl) throw IoError("cannot write label file for " + s.scene_id);
        lbl << doc.dump() << '\n';

        raster::save_png(base / "images" / (s.scene_id + ".png"),
                         detail::render_scene(s, spec.image_size, /*pre=*/false),
                         /*drop_alpha=*/true);

        if (spec.with_pre_disaster) {
            const std::string pre_id =
                detail::scene_name(static_cast<int>(i), true);
            nlohmann::ordered_json pre_doc = detail::label_document(s, /*pre=*/true);
            pre_doc["metadata"] = {{"width", spec.image_size}, {"height", spec.image_size}};
            std::ofstream pre_lbl(base / "labels" / (pre_id + ".json"), std::ios::binary);
            if (!pre_lbl) throw IoError("cannot write label file for " + pre_id);
            pre_lbl << pre_doc.dump() << '\n';
            raster::save_png(base / "images" / (pre_id + ".png"),
                             detail::render_scene(s, spec.image_size, /*pre=*/true),
                             /*drop_alpha=*/true);
        }
    });

    GenerateResult result;
    result.n_scenes = scenes.size();
    result.sidecar_path = out_dir / "ground_truth.jsonl";
    std::ofstream side(result.sidecar_path, std::ios::binary);
    if (!side) throw IoError("cannot write " + result.sidecar_path.string());
    for (const auto& s : scenes) {
        if (s.has_black_band) {
            nlohmann::ordered_json j;
            j["type"] = "black_region";
            j["scene_id"] = s.scene_id;
            j["x1"] = 0;
            j["y1"] = 0;
            j["x2"] = s.band_x2;
            j["y2"] = spec.image_size;
            side << j.dump() << '\n';
        }
        for (const auto& b : s.buildings) {
            nlohmann::ordered_json j;
            j["type"] = "building";
            j["scene_id"] = s.scene_id;
            j["building_id"] = b.building_id;
            j["label"] = b.label;
            j["cx"] = b.cx();
            j["cy"] = b.cy();
            j["split"] = s.in_test_split ? "test" : "train";
            side << j.dump() << '\n';
            ++result.n_buildings;
            ++result.class_counts[static_cast<std::size_t>(b.label)];
        }
    }
    nlohmann::ordered_json foot;
    foot["type"] = "counts";
    foot["n_scenes"] = result.n_scenes;
    foot["n_buildings"] = result.n_buildings;
    foot["class_counts"] = result.class_counts;
    side << foot.dump() << '\n';
    if (!side) throw IoError("write failed: " + result.sidecar_path.string());
    return result;
}

}  // namespace xbdkit::synth
