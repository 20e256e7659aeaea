#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xbdkit/error.hpp"
#include "xbdkit/geom.hpp"

namespace xbdkit::labels {

// Fixed 4-way label space used for training. Unclassified is a real state in
// the corpus but never trainable.
enum class DamageClass : std::uint8_t {
    no_damage = 0,
    minor_damage = 1,
    major_damage = 2,
    destroyed = 3,
    unclassified = 4,
};

inline constexpr int kNumClasses = 4;

inline bool is_trainable(DamageClass c) {
    return static_cast<int>(c) < kNumClasses;
}

inline const char* class_name(DamageClass c) {
    switch (c) {
        case DamageClass::no_damage: return "no-damage";
        case DamageClass::minor_damage: return "minor-damage";
        case DamageClass::major_damage: return "major-damage";
        case DamageClass::destroyed: return "destroyed";
        case DamageClass::unclassified: return "un-classified";
    }
    return "?";
}

// Case-insensitive subtype match with hyphen/space/underscore collapsing, so
// "minor-damage", "Minor Damage" and "minor_damage" are the same label.
// Unknown strings map to unclassified; corpus labels are known to be noisy.
inline DamageClass parse_subtype(std::string_view raw) {
    std::string norm;
    norm.reserve(raw.size());
    for (char ch : raw) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (c == '-' || c == '_' || std::isspace(c)) continue;
        norm.push_back(static_cast<char>(std::tolower(c)));
    }
    if (norm == "nodamage") return DamageClass::no_damage;
    if (norm == "minordamage") return DamageClass::minor_damage;
    if (norm == "majordamage") return DamageClass::major_damage;
    if (norm == "destroyed") return DamageClass::destroyed;
    return DamageClass::unclassified;
}

struct BuildingAnnotation {
    std::string building_id;
    geom::PolygonRing ring;
    DamageClass damage = DamageClass::unclassified;
};

enum class SplitTag { train, test };

inline const char* split_name(SplitTag s) {
    return s == SplitTag::train ? "train" : "test";
}

struct SceneLabels {
    std::string scene_id;
    std::filesystem::path image_path;
    std::vector<BuildingAnnotation> annotations;
    SplitTag split_tag = SplitTag::train;
    // Features whose polygon text failed to parse; skipped, not fatal.
    int skipped_features = 0;
};

// Parses one label document: a JSON object whose features.xy array carries
// per-building {wkt, properties.subtype, properties.uid}. Features without a
// subtype become unclassified; features with broken polygons are counted in
// skipped_features and dropped. Anything structurally off at the document
// level is a LabelParseError.
inline SceneLabels parse_label_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw LabelParseError(path.string() + ": " + e.what());
    }

    SceneLabels scene;
    scene.scene_id = path.stem().string();

    if (!doc.is_object() || !doc.contains("features")) {
        throw LabelParseError(path.string() + ": missing features object");
    }
    const auto& features = doc["features"];
    if (!features.is_object() || !features.contains("xy")) {
        throw LabelParseError(path.string() + ": missing features.xy array");
    }
    const auto& xy = features["xy"];
    if (!xy.is_array()) {
        throw LabelParseError(path.string() + ": features.xy is not an array");
    }

    int auto_id = 0;
    for (const auto& feat : xy) {
        if (!feat.is_object() || !feat.contains("wkt") || !feat["wkt"].is_string()) {
            throw LabelParseError(path.string() + ": feature without wkt string");
        }
        BuildingAnnotation ann;
        if (feat.contains("properties") && feat["properties"].is_object()) {
            const auto& props = feat["properties"];
            if (props.contains("uid") && props["uid"].is_string()) {
                ann.building_id = props["uid"].get<std::string>();
            }
            if (props.contains("subtype") && props["subtype"].is_string()) {
                ann.damage = parse_subtype(props["subtype"].get<std::string>());
            }
        }
        if (ann.building_id.empty()) {
            ann.building_id = "feature-" + std::to_string(auto_id);
        }
        ++auto_id;
        try {
            ann.ring = geom::parse_wkt_polygon(feat["wkt"].get<std::string>());
        } catch (const Error&) {
            ++scene.skipped_features;
            continue;
        }
        scene.annotations.push_back(std::move(ann));
    }
    return scene;
}

// The dataloader rule: only the four mapped classes survive; unclassified
// buildings are dropped. Input order is preserved.
inline std::vector<BuildingAnnotation> trainable_buildings(const SceneLabels& scene) {
    std::vector<BuildingAnnotation> out;
    for (const auto& ann : scene.annotations) {
        if (is_trainable(ann.damage)) out.push_back(ann);
    }
    return out;
}

struct ClassHistogram {
    // Index 0..3 = trainable classes, index 4 = unclassified.
    std::array<std::uint64_t, kNumClasses + 1> counts{};

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }

    ClassHistogram& operator+=(const ClassHistogram& other) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
        return *this;
    }
};

inline ClassHistogram class_histogram(const std::vector<SceneLabels>& scenes) {
    ClassHistogram hist;
    for (const auto& scene : scenes) {
        for (const auto& ann : scene.annotations) {
            ++hist.counts[static_cast<std::size_t>(ann.damage)];
        }
    }
    return hist;
}

}  // namespace xbdkit::labels
