#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iterator>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbdkit/dataset.hpp"
#include "xbdkit/error.hpp"
#include "xbdkit/labels.hpp"
#include "xbdkit/metrics.hpp"
#include "xbdkit/png_io.hpp"
#include "xbdkit/raster.hpp"
#include "xbdkit/util.hpp"

namespace xbdkit::probe {

namespace fs = std::filesystem;

inline constexpr int kGrid = 4;
inline constexpr int kFeatureDim = kGrid * kGrid * 3;  // RGB mean per grid cell

// ---------------------------------------------------------------------------
// Featurization: mean R,G,B per cell of a 4x4 grid, cell boundaries at
// floor(k * size / 4). Values stay in [0,255]; training scales by 1/255.
// ---------------------------------------------------------------------------
inline std::array<double, kFeatureDim> featurize(const raster::RgbaRaster& img) {
    if (img.width != img.height || img.width < kGrid) {
        throw Error("featurize expects a square image with side >= 4");
    }
    const int size = img.width;
    std::array<double, kFeatureDim> out{};
    for (int gy = 0; gy < kGrid; ++gy) {
        const int y0 = gy * size / kGrid;
        const int y1 = (gy + 1) * size / kGrid;
        for (int gx = 0; gx < kGrid; ++gx) {
            const int x0 = gx * size / kGrid;
            const int x1 = (gx + 1) * size / kGrid;
            double sum[3] = {0.0, 0.0, 0.0};
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const std::uint8_t* px = img.pixel(x, y);
                    sum[0] += px[0];
                    sum[1] += px[1];
                    sum[2] += px[2];
                }
            }
            const double n = static_cast<double>((y1 - y0) * (x1 - x0));
            const int base = (gy * kGrid + gx) * 3;
            out[static_cast<std::size_t>(base + 0)] = sum[0] / n;
            out[static_cast<std::size_t>(base + 1)] = sum[1] / n;
            out[static_cast<std::size_t>(base + 2)] = sum[2] / n;
        }
    }
    return out;
}

struct Example {
    std::string sample_id;
    std::array<double, kFeatureDim> features{};  // raw [0,255] cell means
    labels::DamageClass label = labels::DamageClass::no_damage;
};

// Reads every manifest entry matching `split` (empty string = all), loads its
// patch and featurizes it.
inline std::vector<Example> load_examples(const dataset::Manifest& manifest,
                                          const fs::path& manifest_dir, const std::string& split) {
    std::vector<Example> out;
    for (const auto& e : manifest.entries) {
        if (!split.empty() && e.split != split) continue;
        Example ex;
        ex.sample_id = e.sample_id();
        ex.features = featurize(raster::load_png(manifest_dir / e.path));
        ex.label = static_cast<labels::DamageClass>(e.label);
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear head: logits = W x + b with x the 1/255-scaled feature vector.
// ---------------------------------------------------------------------------
struct LinearHead {
    std::vector<double> W;  // kNumClasses x kFeatureDim, row-major
    std::array<double, labels::kNumClasses> b{};

    LinearHead() : W(static_cast<std::size_t>(labels::kNumClasses) * kFeatureDim, 0.0) {}

    std::array<double, labels::kNumClasses> forward(const std::array<double, kFeatureDim>& raw) const {
        std::array<double, labels::kNumClasses> z{};
        for (int c = 0; c < labels::kNumClasses; ++c) {
            const double* row = W.data() + static_cast<std::size_t>(c) * kFeatureDim;
            double acc = b[static_cast<std::size_t>(c)];
            for (int j = 0; j < kFeatureDim; ++j) {
                acc += row[j] * (raw[static_cast<std::size_t>(j)] / 255.0);
            }
            z[static_cast<std::size_t>(c)] = acc;
        }
        return z;
    }
};

inline std::array<double, labels::kNumClasses> softmax(std::array<double, labels::kNumClasses> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        denom += v;
    }
    for (double& v : z) v /= denom;
    return z;
}

struct LossGrad {
    double data_loss = 0.0;  // mean cross-entropy over the batch
    double reg_loss = 0.0;   // (wd/2)*||W||^2, so grads match d(total)/dparam
    std::uint64_t correct = 0;
    std::uint64_t count = 0;
    std::vector<double> gW;
    std::array<double, labels::kNumClasses> gb{};

    double total() const { return data_loss + reg_loss; }
    double accuracy() const {
        return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
    }
};

// Softmax cross-entropy over a batch, with L2 decay on W only (b is exempt).
template <class It>
LossGrad loss_and_grad(const LinearHead& head, It first, It last, double weight_decay) {
    LossGrad out;
    out.gW.assign(head.W.size(), 0.0);
    const auto n = static_cast<double>(std::distance(first, last));
    if (n == 0) throw Error("loss_and_grad: empty batch");

    for (It it = first; it != last; ++it) {
        const Example& ex = *it;
        if (!labels::is_trainable(ex.label)) throw Error("loss_and_grad: unclassified example");
        const auto y = static_cast<std::size_t>(ex.label);
        const std::array<double, labels::kNumClasses> z = head.forward(ex.features);
        std::array<double, labels::kNumClasses> p = softmax(z);
        out.data_loss += -std::log(std::max(p[y], 1e-300)) / n;
        if (metrics::argmax_class(z) == static_cast<int>(y)) ++out.correct;
        ++out.count;
        for (int c = 0; c < labels::kNumClasses; ++c) {
            const double delta = (p[static_cast<std::size_t>(c)] -
                                  (static_cast<std::size_t>(c) == y ? 1.0 : 0.0)) / n;
            out.gb[static_cast<std::size_t>(c)] += delta;
            double* grow = out.gW.data() + static_cast<std::size_t>(c) * kFeatureDim;
            for (int j = 0; j < kFeatureDim; ++j) {
                grow[j] += delta * (ex.features[static_cast<std::size_t>(j)] / 255.0);
            }
        }
    }
    for (std::size_t k = 0; k < head.W.size(); ++k) {
        out.reg_loss += 0.5 * weight_decay * head.W[k] * head.W[k];
        out.gW[k] += weight_decay * head.W[k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Step budget: ceil(examples * epochs / (batch * devices)).
// ---------------------------------------------------------------------------
inline std::uint64_t max_steps(std::uint64_t n_examples, std::uint64_t epochs,
                               std::uint64_t batch_size, std::uint64_t devices = 1) {
    if (batch_size == 0 || devices == 0) throw Error("batch_size and devices must be positive");
    const std::uint64_t denom = batch_size * devices;
    return (n_examples * epochs + denom - 1) / denom;
}

// ---------------------------------------------------------------------------
// Checkpoints: "XBPROBE1" magic, u64 classes, u64 features, then W and b as
// little-endian float64.
// ---------------------------------------------------------------------------
inline constexpr char kCheckpointMagic[8] = {'X', 'B', 'P', 'R', 'O', 'B', 'E', '1'};

inline void save_checkpoint(const fs::path& path, const LinearHead& head) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    std::vector<unsigned char> buf(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
    put_le64(buf, labels::kNumClasses);
    put_le64(buf, kFeatureDim);
    for (double w : head.W) put_f64(buf, w);
    for (double v : head.b) put_f64(buf, v);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline LinearHead load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    const std::size_t expected = sizeof(kCheckpointMagic) + 16 +
                                 8 * (static_cast<std::size_t>(labels::kNumClasses) * kFeatureDim +
                                      labels::kNumClasses);
    if (buf.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw SchemaError(path.string() + ": not a probe checkpoint");
    }
    if (buf.size() != expected) throw SchemaError(path.string() + ": truncated checkpoint");
    const unsigned char* p = buf.data() + sizeof(kCheckpointMagic);
    const std::uint64_t n_classes = get_le64(p);
    const std::uint64_t n_features = get_le64(p + 8);
    if (n_classes != labels::kNumClasses || n_features != kFeatureDim) {
        throw SchemaError(path.string() + ": dimension mismatch");
    }
    p += 16;
    LinearHead head;
    for (double& w : head.W) {
        w = get_f64(p);
        p += 8;
    }
    for (double& v : head.b) {
        v = get_f64(p);
        p += 8;
    }
    return head;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------
struct TrainConfig {
    double lr = 1e-3;
    std::uint64_t epochs = 10;
    std::uint64_t batch_size = 24;
    double weight_decay = 0.05;
    std::uint64_t devices = 1;
    std::uint64_t seed = 0;
    std::uint64_t eval_every = 20;   // steps between validation passes
    std::uint64_t eval_batch = 64;
    std::size_t avg_window = 10;     // trailing window for smoothed train accuracy
    std::optional<fs::path> checkpoint_dir;  // per-epoch + final checkpoints
    std::optional<fs::path> metric_log;      // JSONL, one line per eval

    void validate() const {
        if (lr <= 0.0) throw Error("lr must be positive");
        if (epochs < 1) throw Error("epochs must be >= 1");
        if (batch_size < 1) throw Error("batch_size must be >= 1");
        if (weight_decay < 0.0) throw Error("weight_decay must be >= 0");
        if (eval_every < 1) throw Error("eval_every must be >= 1");
        if (eval_batch < 1) throw Error("eval_batch must be >= 1");
        if (avg_window < 1) throw Error("avg_window must be >= 1");
    }
};

struct EvalSnapshot {
    double loss = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;  // macro over the four classes
    double f1 = 0.0;         // macro over the four classes
};

struct TrainOutcome {
    LinearHead head;
    std::uint64_t steps_planned = 0;
    std::uint64_t steps_run = 0;
    double final_train_loss = 0.0;
    std::optional<EvalSnapshot> final_eval;
    std::vector<fs::path> checkpoints;
};

// Cross-entropy plus confusion-derived accuracy / macro precision / macro F1
// over a fixed set, walked in eval-sized batches.
inline EvalSnapshot evaluate(const LinearHead& head, const std::vector<Example>& set,
                             std::uint64_t eval_batch) {
    if (set.empty()) return {};
    double loss_sum = 0.0;
    metrics::ConfusionMatrix cm;
    for (std::size_t start = 0; start < set.size(); start += eval_batch) {
        const std::size_t stop = std::min(set.size(), start + eval_batch);
        for (std::size_t i = start; i < stop; ++i) {
            const auto z = head.forward(set[i].features);
            const auto p = softmax(z);
            loss_sum += -std::log(std::max(p[static_cast<std::size_t>(set[i].label)], 1e-300));
            cm.accumulate(static_cast<int>(set[i].label), metrics::argmax_class(z));
        }
    }
    const metrics::EvalReport rep = metrics::report(cm);
    EvalSnapshot snap;
    snap.loss = loss_sum / static_cast<double>(set.size());
    snap.accuracy = rep.accuracy;
    snap.precision = rep.macro.precision;
    snap.f1 = rep.macro.f1;
    return snap;
}

inline TrainOutcome train(const std::vector<Example>& train_set,
                          const std::vector<Example>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw Error("train: empty training set");

    TrainOutcome out;
    out.steps_planned = max_steps(train_set.size(), cfg.epochs, cfg.batch_size, cfg.devices);

    std::ofstream log;
    if (cfg.metric_log) {
        log.open(*cfg.metric_log, std::ios::binary);
        if (!log) throw IoError("cannot open " + cfg.metric_log->string() + " for writing");
    }
    if (cfg.checkpoint_dir) fs::create_directories(*cfg.checkpoint_dir);

    metrics::RunningAverage train_acc_avg(cfg.avg_window);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Example> batch;
    batch.reserve(cfg.batch_size);
    std::uint64_t step = 0;
    double last_train_loss = 0.0;

    for (std::uint64_t epoch = 0; epoch < cfg.epochs && step < out.steps_planned; ++epoch) {
        std::mt19937_64 rng = make_rng(cfg.seed, "shuffle", std::to_string(epoch));
        shuffle_vec(order, rng);
        for (std::size_t start = 0; start < order.size() && step < out.steps_planned;
             start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);

            LossGrad lg = loss_and_grad(out.head, batch.begin(), batch.end(), cfg.weight_decay);
            if (!std::isfinite(lg.total())) {
                throw NonFiniteLoss("training diverged at step " + std::to_string(step + 1));
            }
            for (std::size_t k = 0; k < out.head.W.size(); ++k) out.head.W[k] -= cfg.lr * lg.gW[k];
            for (std::size_t c = 0; c < out.head.b.size(); ++c) out.head.b[c] -= cfg.lr * lg.gb[c];
            last_train_loss = lg.data_loss;
            const double smoothed = train_acc_avg.push(lg.accuracy());
            ++step;

            // One record per step; validation metrics join every eval_every
            // steps and on the final step.
            const bool do_eval =
                !val_set.empty() && (step % cfg.eval_every == 0 || step == out.steps_planned);
            if (do_eval) out.final_eval = evaluate(out.head, val_set, cfg.eval_batch);
            if (log) {
                nlohmann::ordered_json j;
                j["step"] = step;
                j["epoch"] = epoch;
                j["loss"] = lg.data_loss;
                j["train_acc_raw"] = lg.accuracy();
                j["train_acc_smoothed"] = smoothed;
                if (do_eval) {
                    j["val_loss"] = out.final_eval->loss;
                    j["val_accuracy"] = out.final_eval->accuracy;
                    j["val_precision"] = out.final_eval->precision;
                    j["val_f1"] = out.final_eval->f1;
                }
                log << j.dump() << '\n';
            }
        }
        if (cfg.checkpoint_dir) {
            char name[32];
            std::snprintf(name, sizeof(name), "probe-epoch-%03llu.ckpt",
                          static_cast<unsigned long long>(epoch + 1));
            fs::path ckpt = *cfg.checkpoint_dir / name;
            save_checkpoint(ckpt, out.head);
            out.checkpoints.push_back(std::move(ckpt));
        }
    }
    out.steps_run = step;
    out.final_train_loss = last_train_loss;
    if (cfg.checkpoint_dir) {
        fs::path ckpt = *cfg.checkpoint_dir / "probe-final.ckpt";
        save_checkpoint(ckpt, out.head);
        out.checkpoints.push_back(std::move(ckpt));
    }
    return out;
}

inline std::vector<metrics::PredictionRecord> predict(const LinearHead& head,
                                                      const std::vector<Example>& set) {
    std::vector<metrics::PredictionRecord> out;
    out.reserve(set.size());
    for (const auto& ex : set) {
        metrics::PredictionRecord rec;
        rec.sample_id = ex.sample_id;
        rec.logits = head.forward(ex.features);
        rec.label = static_cast<int>(ex.label);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace xbdkit::probe
