#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "xbdkit/geom.hpp"
#include "xbdkit/labels.hpp"
#include "xbdkit/raster.hpp"
#include "xbdkit/util.hpp"

namespace xbdkit::patcher {

struct PatchConfig {
    int patch_size = 224;          // 224 and 518 are the model-facing presets
    int search_radius = 100;       // max per-axis offset for re-crops
    double empty_threshold = 0.01; // accept when empty_ratio <= threshold
    int max_attempts = 50;         // total candidate windows before fallback
    std::uint64_t seed = 0;
    // Offsets are drawn from the square [-r, r]^2 by default. Disk mode
    // rejects draws outside the radius for the stricter circular reading.
    bool disk_offsets = false;
    // When no candidate passes, scan every offset in the search square for
    // the true minimum instead of keeping the best sampled candidate.
    bool exhaustive_fallback = false;

    void validate() const {
        if (patch_size <= 0) throw Error("patch_size must be positive");
        if (search_radius < 0) throw Error("search_radius must be >= 0");
        if (empty_threshold < 0.0 || empty_threshold > 1.0) throw Error("empty_threshold must be in [0,1]");
        if (max_attempts < 1) throw Error("max_attempts must be >= 1");
    }
};

struct PatchRecord {
    std::string scene_id;
    std::string building_id;
    labels::DamageClass label = labels::DamageClass::unclassified;
    raster::CropWindow window;
    double empty_ratio = 0.0;
    int attempts_used = 0;
    bool fallback_used = false;
    raster::RgbaRaster pixels;  // RGBA in memory; alpha is dropped on emission
};

namespace detail {

// Round half away from zero, the rule applied to centroids at crop time.
inline int round_coord(double v) {
    return static_cast<int>(std::lround(v));
}

// Clamp so the window stays inside the raster when it fits, and fully covers
// the raster (pad on the far side) when the raster is smaller than the patch.
inline int clamp_origin(int origin, int extent, int size) {
    const int lo = std::min(0, extent - size);
    const int hi = std::max(0, extent - size);
    return std::clamp(origin, lo, hi);
}

inline raster::CropWindow window_at(int cx, int cy, const PatchConfig& cfg, int width, int height) {
    const int half = cfg.patch_size / 2;
    return raster::CropWindow{
        clamp_origin(cx - half, width, cfg.patch_size),
        clamp_origin(cy - half, height, cfg.patch_size),
        cfg.patch_size,
    };
}

}  // namespace detail

// Window centered on the rounded centroid, clamped to the raster.
inline raster::CropWindow initial_window(geom::Point centroid, const PatchConfig& cfg,
                                         int width, int height) {
    return detail::window_at(detail::round_coord(centroid.x), detail::round_coord(centroid.y),
                             cfg, width, height);
}

// Centroid shifted by an integer offset drawn uniformly per axis from
// [-search_radius, +search_radius], then clamped like the initial window.
inline raster::CropWindow perturbed_window(geom::Point centroid, const PatchConfig& cfg,
                                           int width, int height, std::mt19937_64& rng) {
    const int r = cfg.search_radius;
    int dx = 0;
    int dy = 0;
    if (r > 0) {
        for (;;) {
            dx = static_cast<int>(uniform_int(rng, -r, r));
            dy = static_cast<int>(uniform_int(rng, -r, r));
            if (!cfg.disk_offsets) break;
            if (static_cast<std::int64_t>(dx) * dx + static_cast<std::int64_t>(dy) * dy <=
                static_cast<std::int64_t>(r) * r) {
                break;
            }
        }
    }
    return detail::window_at(detail::round_coord(centroid.x) + dx,
                             detail::round_coord(centroid.y) + dy, cfg, width, height);
}

// The per-building RNG stream. Seeding from (seed, scene, building) rather
// than a shared sequential stream keeps scene-parallel extraction
// deterministic.
inline std::mt19937_64 building_rng(const PatchConfig& cfg, std::string_view scene_id,
                                    std::string_view building_id) {
    return make_rng(cfg.seed, "extract", scene_id, building_id);
}

// Minimum-empty-ratio window over every integer offset in the search square,
// scanned row-major with first-seen tie breaking. Uses the summed-area table
// so the full 201x201 grid stays affordable.
inline raster::CropWindow min_ratio_window_exhaustive(const raster::RgbaRaster& img,
                                                      geom::Point centroid,
                                                      const PatchConfig& cfg) {
    const raster::BlackIntegral integral(img);
    const int cx = detail::round_coord(centroid.x);
    const int cy = detail::round_coord(centroid.y);
    raster::CropWindow best{};
    std::uint64_t best_count = ~0ull;
    for (int dy = -cfg.search_radius; dy <= cfg.search_radius; ++dy) {
        for (int dx = -cfg.search_radius; dx <= cfg.search_radius; ++dx) {
            raster::CropWindow w = detail::window_at(cx + dx, cy + dy, cfg, img.width, img.height);
            std::uint64_t count = integral.window_empty_count(w);
            if (count < best_count) {
                best_count = count;
                best = w;
            }
        }
    }
    return best;
}

// The extraction procedure: try the centroid-centered window, then up to
// max_attempts-1 perturbed windows, accepting the first whose empty ratio is
// at or below the threshold. If nothing qualifies the best candidate seen
// (lowest ratio, earliest attempt on ties) is emitted with fallback_used set.
inline PatchRecord extract_patch(const raster::RgbaRaster& img,
                                 const labels::BuildingAnnotation& building,
                                 const PatchConfig& cfg, std::mt19937_64& rng,
                                 std::string_view scene_id = "") {
    const geom::Point c = geom::centroid(building.ring);

    PatchRecord rec;
    rec.scene_id = std::string(scene_id);
    rec.building_id = building.building_id;
    rec.label = building.damage;

    raster::CropWindow best_window{};
    raster::RgbaRaster best_pixels;
    double best_ratio = 2.0;  // above any reachable ratio

    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        raster::CropWindow w = attempt == 1
                                   ? initial_window(c, cfg, img.width, img.height)
                                   : perturbed_window(c, cfg, img.width, img.height, rng);
        raster::RgbaRaster patch = raster::crop(img, w);
        const double ratio = raster::empty_ratio(patch);
        if (ratio <= cfg.empty_threshold) {
            rec.window = w;
            rec.empty_ratio = ratio;
            rec.attempts_used = attempt;
            rec.fallback_used = false;
            rec.pixels = std::move(patch);
            return rec;
        }
        if (ratio < best_ratio) {
            best_ratio = ratio;
            best_window = w;
            best_pixels = std::move(patch);
        }
    }

    rec.attempts_used = cfg.max_attempts;
    rec.fallback_used = true;
    if (cfg.exhaustive_fallback) {
        best_window = min_ratio_window_exhaustive(img, c, cfg);
        best_pixels = raster::crop(img, best_window);
        best_ratio = raster::empty_ratio(best_pixels);
    }
    rec.window = best_window;
    rec.empty_ratio = best_ratio;
    rec.pixels = std::move(best_pixels);
    return rec;
}

// Convenience entry that owns the seeded per-building stream.
inline PatchRecord extract_patch(const raster::RgbaRaster& img, std::string_view scene_id,
                                 const labels::BuildingAnnotation& building,
                                 const PatchConfig& cfg) {
    std::mt19937_64 rng = building_rng(cfg, scene_id, building.building_id);
    return extract_patch(img, building, cfg, rng, scene_id);
}

}  // namespace xbdkit::patcher
