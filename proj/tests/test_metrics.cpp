#include "xbdkit/metrics.hpp"

#include <gtest/gtest.h>

#include <random>
#include <utility>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace xbdkit;

TEST(ConfusionMatrix, RejectsOutOfRangeCodes) {
    metrics::ConfusionMatrix m;
    EXPECT_THROW(m.accumulate(-1, 0), Error);
    EXPECT_THROW(m.accumulate(4, 0), Error);
    EXPECT_THROW(m.accumulate(0, -1), Error);
    EXPECT_THROW(m.accumulate(0, 4), Error);
    m.accumulate(0, 3);
    EXPECT_EQ(m.total(), 1u);
}

TEST(ConfusionMatrix, MergeByAddition) {
    metrics::ConfusionMatrix a, b;
    a.accumulate(0, 0);
    a.accumulate(1, 2);
    b.accumulate(1, 2);
    b.accumulate(3, 3);
    a += b;
    EXPECT_EQ(a.counts[1][2], 2u);
    EXPECT_EQ(a.total(), 4u);
    EXPECT_EQ(a.trace(), 2u);
}

TEST(Report, EmptyMatrixThrows) {
    EXPECT_THROW(metrics::report(metrics::ConfusionMatrix{}), EmptyMatrix);
}

TEST(Report, HandCheckedMatrix) {
    metrics::ConfusionMatrix m;
    m.counts = {{{5, 1, 0, 0}, {2, 3, 1, 0}, {0, 0, 4, 2}, {1, 0, 1, 6}}};
    const metrics::EvalReport rep = metrics::report(m);

    EXPECT_DOUBLE_EQ(rep.accuracy, 18.0 / 26.0);
    EXPECT_DOUBLE_EQ(rep.per_class[0].precision, 5.0 / 8.0);
    EXPECT_DOUBLE_EQ(rep.per_class[0].recall, 5.0 / 6.0);
    EXPECT_NEAR(rep.per_class[0].f1, 5.0 / 7.0, 1e-15);
    EXPECT_DOUBLE_EQ(rep.per_class[1].precision, 3.0 / 4.0);
    EXPECT_DOUBLE_EQ(rep.per_class[1].recall, 1.0 / 2.0);
    EXPECT_NEAR(rep.per_class[1].f1, 3.0 / 5.0, 1e-15);
    EXPECT_DOUBLE_EQ(rep.per_class[2].precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(rep.per_class[2].recall, 2.0 / 3.0);
    EXPECT_NEAR(rep.per_class[2].f1, 2.0 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(rep.per_class[3].precision, 3.0 / 4.0);
    EXPECT_DOUBLE_EQ(rep.per_class[3].recall, 3.0 / 4.0);
    EXPECT_NEAR(rep.per_class[3].f1, 3.0 / 4.0, 1e-15);
    EXPECT_EQ(rep.per_class[0].support, 6u);
    EXPECT_EQ(rep.per_class[3].support, 8u);
    EXPECT_NEAR(rep.macro.f1, (5.0 / 7.0 + 3.0 / 5.0 + 2.0 / 3.0 + 3.0 / 4.0) / 4.0, 1e-15);
}

TEST(Report, AbsentClassesScoreZeroButStayInTheMacro) {
    metrics::ConfusionMatrix m;
    for (int i = 0; i < 10; ++i) m.accumulate(0, 0);
    const metrics::EvalReport rep = metrics::report(m);
    EXPECT_DOUBLE_EQ(rep.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(rep.per_class[0].precision, 1.0);
    for (int c = 1; c < 4; ++c) {
        EXPECT_DOUBLE_EQ(rep.per_class[c].precision, 0.0);
        EXPECT_DOUBLE_EQ(rep.per_class[c].recall, 0.0);
        EXPECT_DOUBLE_EQ(rep.per_class[c].f1, 0.0);
        EXPECT_EQ(rep.per_class[c].support, 0u);
    }
    EXPECT_DOUBLE_EQ(rep.macro.precision, 0.25);
    EXPECT_DOUBLE_EQ(rep.weighted.precision, 1.0);
}

TEST(Report, MatchesNaiveRecomputationOnRandomStreams) {
    std::mt19937_64 rng(404);
    std::uniform_int_distribution<int> cls(0, 3);
    std::uniform_int_distribution<int> len(1, 300);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::pair<int, int>> pairs;
        metrics::ConfusionMatrix m;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            const int label = cls(rng);
            // Bias toward the diagonal so the stream looks like a real run.
            const int pred = (rng() % 3 == 0) ? cls(rng) : label;
            pairs.emplace_back(label, pred);
            m.accumulate(label, pred);
        }
        const metrics::EvalReport rep = metrics::report(m);
        const oracle::NaiveReport ref = oracle::naive_report(pairs);

        EXPECT_NEAR(rep.accuracy, ref.accuracy, 1e-12);
        for (int c = 0; c < 4; ++c) {
            EXPECT_NEAR(rep.per_class[c].precision, ref.per_class[c].precision, 1e-12);
            EXPECT_NEAR(rep.per_class[c].recall, ref.per_class[c].recall, 1e-12);
            EXPECT_NEAR(rep.per_class[c].f1, ref.per_class[c].f1, 1e-12);
            EXPECT_EQ(rep.per_class[c].support, ref.per_class[c].support);
        }
        EXPECT_NEAR(rep.macro.precision, ref.macro_precision, 1e-12);
        EXPECT_NEAR(rep.macro.recall, ref.macro_recall, 1e-12);
        EXPECT_NEAR(rep.macro.f1, ref.macro_f1, 1e-12);
        EXPECT_NEAR(rep.weighted.precision, ref.weighted_precision, 1e-12);
        EXPECT_NEAR(rep.weighted.recall, ref.weighted_recall, 1e-12);
        EXPECT_NEAR(rep.weighted.f1, ref.weighted_f1, 1e-12);

        // Support-weighted recall telescopes back to plain accuracy.
        EXPECT_NEAR(rep.weighted.recall, rep.accuracy, 1e-12);
    }
}

// Reference scores reproduced from integer matrices: a class with precision
// 0.87 and recall 0.93 must land on f1 0.899, and so on for each class. The
// expected f1 values are frozen from the harmonic mean worked out by hand.
TEST(Report, FrozenHarmonicMeans) {
    struct Case {
        int cls;
        double precision, recall, f1;
    };
    const Case cases[] = {
        {0, 0.87, 0.93, 0.899},
        {1, 0.34, 0.09, 0.14232558139534884},
        {2, 0.76, 0.71, 0.7341496598639456},
        {3, 0.71, 0.74, 0.7246896551724138},
    };
    for (const Case& k : cases) {
        const auto tp = static_cast<std::uint64_t>(std::llround(k.precision * k.recall * 10000.0));
        const auto row = static_cast<std::uint64_t>(std::llround(k.precision * 10000.0));
        const auto col = static_cast<std::uint64_t>(std::llround(k.recall * 10000.0));
        metrics::ConfusionMatrix m;
        const auto c = static_cast<std::size_t>(k.cls);
        m.counts[c][c] = tp;
        m.counts[c][(c + 1) % 4] = row - tp;   // false negatives
        m.counts[(c + 2) % 4][c] = col - tp;   // false positives
        const metrics::EvalReport rep = metrics::report(m);
        EXPECT_DOUBLE_EQ(rep.per_class[c].precision, k.precision) << "class " << k.cls;
        EXPECT_DOUBLE_EQ(rep.per_class[c].recall, k.recall) << "class " << k.cls;
        EXPECT_NEAR(rep.per_class[c].f1, k.f1, 1e-12) << "class " << k.cls;
    }
}

TEST(ArgmaxClass, TiesResolveToTheLowestIndex) {
    EXPECT_EQ(metrics::argmax_class({1.0, 1.0, 1.0, 1.0}), 0);
    EXPECT_EQ(metrics::argmax_class({0.0, 2.0, 2.0, 0.0}), 1);
    EXPECT_EQ(metrics::argmax_class({-5.0, -1.0, -2.0, -1.0}), 1);
    EXPECT_EQ(metrics::argmax_class({0.0, 0.0, 0.0, 0.5}), 3);
}

TEST(RunningAverage, MatchesNaiveWindowMeans) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> values(200);
    for (double& v : values) v = unif(rng);

    for (std::size_t window : {1u, 3u, 10u, 500u}) {
        const std::vector<double> ref = oracle::naive_running_average(values, window);
        metrics::RunningAverage avg(window);
        for (std::size_t i = 0; i < values.size(); ++i) {
            EXPECT_DOUBLE_EQ(avg.push(values[i]), ref[i]) << "window " << window << " step " << i;
        }
        EXPECT_EQ(metrics::running_average(values, window), ref);
    }
    EXPECT_THROW(metrics::RunningAverage(0), Error);
}

TEST(AggregateRuns, PoolsPairsInsteadOfAveragingMetrics) {
    metrics::ConfusionMatrix a, b;
    // Run A: perfect on two samples. Run B: wrong on four. Pooled accuracy is
    // 2/6, not the mean of 1.0 and 0.0.
    a.accumulate(0, 0);
    a.accumulate(1, 1);
    for (int i = 0; i < 4; ++i) b.accumulate(2, 3);
    const metrics::EvalReport rep = metrics::aggregate_runs({a, b});
    EXPECT_EQ(rep.n_runs, 2);
    EXPECT_NEAR(rep.accuracy, 2.0 / 6.0, 1e-15);

    metrics::ConfusionMatrix pooled = a;
    pooled += b;
    const metrics::EvalReport direct = metrics::report(pooled);
    EXPECT_EQ(rep.confusion, direct.confusion);
    EXPECT_DOUBLE_EQ(rep.macro.f1, direct.macro.f1);

    EXPECT_THROW(metrics::aggregate_runs({}), Error);
}

TEST(Predictions, WriteIngestRoundTrip) {
    testutil::TempDir tmp;
    std::vector<metrics::PredictionRecord> records{
        {"scene_a__b1", {0.25, -1.5, 3.0625, 0.0}, 2},
        {"scene_a__b2", {-0.1, 0.1, 0.0, 1e-3}, 0},
    };
    const auto path = tmp / "preds.jsonl";
    metrics::write_predictions(path, records);
    const auto back = metrics::ingest_predictions(path);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].sample_id, records[i].sample_id);
        EXPECT_EQ(back[i].label, records[i].label);
        for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(back[i].logits[c], records[i].logits[c]);
    }
}

TEST(Predictions, ScoreAppliesArgmax) {
    std::vector<metrics::PredictionRecord> records{
        {"a", {5.0, 0.0, 0.0, 0.0}, 0},  // correct
        {"b", {0.0, 0.0, 9.0, 0.0}, 1},  // predicted major, truth minor
    };
    const metrics::ConfusionMatrix m = metrics::score_predictions(records);
    EXPECT_EQ(m.counts[0][0], 1u);
    EXPECT_EQ(m.counts[1][2], 1u);
    EXPECT_EQ(m.total(), 2u);
}

TEST(Predictions, MalformedLinesNameTheirLineNumber) {
    testutil::TempDir tmp;
    const auto check = [&](const std::string& line, const std::string& name) {
        const auto path = tmp / (name + ".jsonl");
        testutil::write_text(path, R"({"sample_id":"ok","logits":[0,0,0,0],"label":0})"
                                   "\n" +
                                       line + "\n");
        try {
            metrics::ingest_predictions(path);
            ADD_FAILURE() << name << ": expected SchemaError";
        } catch (const SchemaError& e) {
            EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
        }
    };
    check("{\"logits\":[0,0,0,0],\"label\":0}", "missing_id");
    check("{\"sample_id\":\"x\",\"logits\":[0,0,0],\"label\":0}", "three_logits");
    check("{\"sample_id\":\"x\",\"logits\":[0,0,0,0,0],\"label\":0}", "five_logits");
    check("{\"sample_id\":\"x\",\"logits\":[0,\"y\",0,0],\"label\":0}", "non_numeric");
    check("{\"sample_id\":\"x\",\"logits\":[0,null,0,0],\"label\":0}", "null_logit");
    check("{\"sample_id\":\"x\",\"logits\":[0,0,0,0],\"label\":4}", "label_high");
    check("{\"sample_id\":\"x\",\"logits\":[0,0,0,0],\"label\":-1}", "label_low");
    check("{\"sample_id\":\"x\",\"logits\":[0,0,0,0]}", "no_label");
    check("not json at all", "garbage");

    EXPECT_THROW(metrics::ingest_predictions(tmp / "absent.jsonl"), IoError);
}

TEST(Predictions, UnknownIdsAreRejectedWhenValidated) {
    testutil::TempDir tmp;
    const auto path = tmp / "preds.jsonl";
    metrics::write_predictions(path, {{"known", {1.0, 0.0, 0.0, 0.0}, 0},
                                      {"imposter", {0.0, 1.0, 0.0, 0.0}, 1}});
    const std::set<std::string> valid{"known"};
    EXPECT_THROW(metrics::ingest_predictions(path, &valid), UnknownSampleId);

    const std::set<std::string> both{"known", "imposter"};
    EXPECT_EQ(metrics::ingest_predictions(path, &both).size(), 2u);
    EXPECT_EQ(metrics::ingest_predictions(path).size(), 2u);  // no validation set
}

TEST(FormatReport, CarriesEveryScoreBlock) {
    metrics::ConfusionMatrix m;
    m.accumulate(0, 0);
    m.accumulate(1, 2);
    m.accumulate(3, 3);
    const std::string text = metrics::format_report(metrics::report(m));
    EXPECT_NE(text.find("rows = truth"), std::string::npos);
    EXPECT_NE(text.find("no-damage"), std::string::npos);
    EXPECT_NE(text.find("destroyed"), std::string::npos);
    EXPECT_NE(text.find("macro"), std::string::npos);
    EXPECT_NE(text.find("weighted"), std::string::npos);
    EXPECT_NE(text.find("accuracy 0.6667 over 3 samples"), std::string::npos);
}

TEST(ReportToJson, RoundTripsTheNumbers) {
    metrics::ConfusionMatrix m;
    m.accumulate(0, 0);
    m.accumulate(0, 1);
    m.accumulate(2, 2);
    const metrics::EvalReport rep = metrics::report(m);
    const nlohmann::ordered_json j = metrics::report_to_json(rep);
    EXPECT_EQ(j["total"].get<std::uint64_t>(), 3u);
    EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), rep.accuracy);
    EXPECT_EQ(j["confusion"][0][0].get<std::uint64_t>(), 1u);
    EXPECT_EQ(j["confusion"][0][1].get<std::uint64_t>(), 1u);
    EXPECT_EQ(j["per_class"].size(), 4u);
    EXPECT_EQ(j["per_class"][0]["class"].get<std::string>(), "no-damage");
    EXPECT_DOUBLE_EQ(j["macro"]["f1"].get<double>(), rep.macro.f1);
    EXPECT_DOUBLE_EQ(j["weighted"]["recall"].get<double>(), rep.weighted.recall);
}
