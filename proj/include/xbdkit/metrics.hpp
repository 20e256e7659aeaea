#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbdkit/error.hpp"
#include "xbdkit/labels.hpp"

namespace xbdkit::metrics {

inline constexpr int kNumClasses = labels::kNumClasses;

// Index of the maximum logit; ties resolve to the lowest index.
inline int argmax_class(const std::array<double, kNumClasses>& logits) {
    int best = 0;
    for (int i = 1; i < kNumClasses; ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

// 4x4 counts, rows = ground truth, columns = prediction. Matrices merge by
// addition, so parallel scorers can each hold a partial and sum at the end.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

    void accumulate(int label, int pred) {
        if (label < 0 || label >= kNumClasses || pred < 0 || pred >= kNumClasses) {
            throw Error("class code out of range: label=" + std::to_string(label) +
                        " pred=" + std::to_string(pred));
        }
        ++counts[static_cast<std::size_t>(label)][static_cast<std::size_t>(pred)];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }

    std::uint64_t trace() const {
        std::uint64_t t = 0;
        for (int i = 0; i < kNumClasses; ++i) t += counts[i][i];
        return t;
    }

    std::uint64_t row_sum(int i) const {
        std::uint64_t t = 0;
        for (auto c : counts[static_cast<std::size_t>(i)]) t += c;
        return t;
    }

    std::uint64_t col_sum(int j) const {
        std::uint64_t t = 0;
        for (int i = 0; i < kNumClasses; ++i) t += counts[i][static_cast<std::size_t>(j)];
        return t;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        for (int i = 0; i < kNumClasses; ++i)
            for (int j = 0; j < kNumClasses; ++j) counts[i][j] += other.counts[i][j];
        return *this;
    }

    bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct AverageScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    ConfusionMatrix confusion;
    std::array<ClassScores, kNumClasses> per_class;
    double accuracy = 0.0;
    AverageScores macro;     // unweighted mean over the four classes
    AverageScores weighted;  // support-weighted mean
    int n_runs = 1;
};

// Derives every metric from the matrix. Classes with zero denominator score
// zero and still count toward the macro average, which keeps the report
// defined on degenerate evaluation samples.
inline EvalReport report(const ConfusionMatrix& conf) {
    const std::uint64_t total = conf.total();
    if (total == 0) throw EmptyMatrix("confusion matrix has no samples");

    EvalReport rep;
    rep.confusion = conf;
    rep.accuracy = static_cast<double>(conf.trace()) / static_cast<double>(total);

    for (int c = 0; c < kNumClasses; ++c) {
        const std::uint64_t tp = conf.counts[c][c];
        const std::uint64_t row = conf.row_sum(c);
        const std::uint64_t col = conf.col_sum(c);
        ClassScores& s = rep.per_class[static_cast<std::size_t>(c)];
        s.support = row;
        s.precision = col == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col);
        s.recall = row == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(row);
        s.f1 = (s.precision + s.recall) == 0.0
                   ? 0.0
                   : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }

    for (const ClassScores& s : rep.per_class) {
        rep.macro.precision += s.precision / kNumClasses;
        rep.macro.recall += s.recall / kNumClasses;
        rep.macro.f1 += s.f1 / kNumClasses;
        const double w = static_cast<double>(s.support) / static_cast<double>(total);
        rep.weighted.precision += w * s.precision;
        rep.weighted.recall += w * s.recall;
        rep.weighted.f1 += w * s.f1;
    }
    return rep;
}

// Mean of the last min(window, t) values at step t.
class RunningAverage {
  public:
    explicit RunningAverage(std::size_t window) : window_(window) {
        if (window_ < 1) throw Error("running average window must be >= 1");
    }

    double push(double value) {
        buf_.push_back(value);
        if (buf_.size() > window_) buf_.pop_front();
        double sum = 0.0;
        for (double v : buf_) sum += v;
        return sum / static_cast<double>(buf_.size());
    }

  private:
    std::size_t window_;
    std::deque<double> buf_;
};

inline std::vector<double> running_average(const std::vector<double>& values, std::size_t window) {
    RunningAverage avg(window);
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(avg.push(v));
    return out;
}

// Multi-run evaluation pools the raw (label, pred) pairs of every run into
// one matrix and reports once; metrics are never averaged across runs.
inline EvalReport aggregate_runs(const std::vector<ConfusionMatrix>& runs) {
    if (runs.empty()) throw Error("aggregate_runs needs at least one run");
    ConfusionMatrix pooled;
    for (const auto& run : runs) pooled += run;
    EvalReport rep = report(pooled);
    rep.n_runs = static_cast<int>(runs.size());
    return rep;
}

struct PredictionRecord {
    std::string sample_id;
    std::array<double, kNumClasses> logits{};
    int label = 0;
};

// Line-delimited predictions: {"sample_id": ..., "logits": [4 floats],
// "label": 0-3} per line. Malformed lines raise SchemaError naming the line;
// ids absent from valid_ids (when given) raise UnknownSampleId.
inline std::vector<PredictionRecord> ingest_predictions(
    const std::filesystem::path& path, const std::set<std::string>* valid_ids = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());

    std::vector<PredictionRecord> records;
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
        auto fail = [&](const std::string& why) -> SchemaError {
            return SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + why);
        };
        if (!j.is_object() || !j.contains("sample_id") || !j["sample_id"].is_string()) {
            throw fail("missing sample_id");
        }
        if (!j.contains("logits") || !j["logits"].is_array() || j["logits"].size() != kNumClasses) {
            throw fail("logits must be an array of " + std::to_string(kNumClasses) + " numbers");
        }
        if (!j.contains("label") || !j["label"].is_number_integer()) {
            throw fail("missing integer label");
        }
        PredictionRecord rec;
        rec.sample_id = j["sample_id"].get<std::string>();
        for (int i = 0; i < kNumClasses; ++i) {
            if (!j["logits"][static_cast<std::size_t>(i)].is_number()) throw fail("non-numeric logit");
            rec.logits[static_cast<std::size_t>(i)] = j["logits"][static_cast<std::size_t>(i)].get<double>();
            if (!std::isfinite(rec.logits[static_cast<std::size_t>(i)])) throw fail("non-finite logit");
        }
        rec.label = j["label"].get<int>();
        if (rec.label < 0 || rec.label >= kNumClasses) throw fail("label out of range");
        if (valid_ids && !valid_ids->count(rec.sample_id)) {
            throw UnknownSampleId(path.string() + ":" + std::to_string(line_no) +
                                  ": unknown sample_id '" + rec.sample_id + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline void write_predictions(const std::filesystem::path& path,
                              const std::vector<PredictionRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["sample_id"] = rec.sample_id;
        j["logits"] = rec.logits;
        j["label"] = rec.label;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline ConfusionMatrix score_predictions(const std::vector<PredictionRecord>& records) {
    ConfusionMatrix conf;
    for (const auto& rec : records) conf.accumulate(rec.label, argmax_class(rec.logits));
    return conf;
}

// Human-readable report block: confusion matrix with rows = ground truth,
// then per-class and averaged scores. Both macro and weighted rows are
// always shown.
inline std::string format_report(const EvalReport& rep) {
    char buf[160];
    std::string out;
    out += "confusion matrix (rows = truth, cols = prediction)\n";
    std::snprintf(buf, sizeof(buf), "%-14s %12s %12s %12s %12s\n", "", "no-damage", "minor", "major",
                  "destroyed");
    out += buf;
    static const char* names[kNumClasses] = {"no-damage", "minor", "major", "destroyed"};
    for (int i = 0; i < kNumClasses; ++i) {
        std::snprintf(buf, sizeof(buf), "%-14s %12llu %12llu %12llu %12llu\n", names[i],
                      static_cast<unsigned long long>(rep.confusion.counts[i][0]),
                      static_cast<unsigned long long>(rep.confusion.counts[i][1]),
                      static_cast<unsigned long long>(rep.confusion.counts[i][2]),
                      static_cast<unsigned long long>(rep.confusion.counts[i][3]));
        out += buf;
    }
    out += "\n";
    std::snprintf(buf, sizeof(buf), "%-14s %10s %10s %10s %10s\n", "class", "precision", "recall",
                  "f1", "support");
    out += buf;
    for (int i = 0; i < kNumClasses; ++i) {
        const ClassScores& s = rep.per_class[static_cast<std::size_t>(i)];
        std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %10.4f %10llu\n", names[i], s.precision,
                      s.recall, s.f1, static_cast<unsigned long long>(s.support));
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %10.4f\n", "macro", rep.macro.precision,
                  rep.macro.recall, rep.macro.f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-14s %10.4f %10.4f %10.4f\n", "weighted", rep.weighted.precision,
                  rep.weighted.recall, rep.weighted.f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "accuracy %.4f over %llu samples, %d run(s)\n", rep.accuracy,
                  static_cast<unsigned long long>(rep.confusion.total()), rep.n_runs);
    out += buf;
    return out;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    j["n_runs"] = rep.n_runs;
    j["total"] = rep.confusion.total();
    j["accuracy"] = rep.accuracy;
    auto rows = nlohmann::ordered_json::array();
    for (int i = 0; i < kNumClasses; ++i) {
        rows.push_back(rep.confusion.counts[static_cast<std::size_t>(i)]);
    }
    j["confusion"] = rows;
    auto per_class = nlohmann::ordered_json::array();
    for (int i = 0; i < kNumClasses; ++i) {
        const ClassScores& s = rep.per_class[static_cast<std::size_t>(i)];
        per_class.push_back({{"class", labels::class_name(static_cast<labels::DamageClass>(i))},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1},
                             {"support", s.support}});
    }
    j["per_class"] = per_class;
    j["macro"] = {{"precision", rep.macro.precision}, {"recall", rep.macro.recall}, {"f1", rep.macro.f1}};
    j["weighted"] = {{"precision", rep.weighted.precision},
                     {"recall", rep.weighted.recall},
                     {"f1", rep.weighted.f1}};
    return j;
}

}  // namespace xbdkit::metrics
