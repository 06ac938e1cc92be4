#include <algorithm>
#include <thread>

#include <gtest/gtest.h>

#include "docdet/error.hpp"
#include "docdet/evaluation.hpp"
#include "docdet/random.hpp"
#include "oracles.hpp"

using namespace docdet;

TEST(DetectionF1, HandComputed) {
    // One prediction matching one of two ground truths at IoU 0.6.
    const std::vector<std::vector<Box>> preds{{{0, 0, 6, 10}}};
    const std::vector<std::vector<Box>> gts{{{0, 0, 10, 10}, {50, 50, 60, 60}}};
    const EvalReport r = detection_f1(preds, gts);
    EXPECT_EQ(r.true_positives, 1u);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 0.5);
    EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
    EXPECT_EQ(r.unmatched_ground_truths(), 1u);
}

TEST(DetectionF1, ThresholdIsInclusive) {
    const std::vector<std::vector<Box>> preds{{{0, 0, 5, 10}}}, gts{{{0, 0, 10, 10}}};
    EXPECT_EQ(detection_f1(preds, gts, 0.5).true_positives, 1u);
    EXPECT_EQ(detection_f1(preds, gts, 0.51).true_positives, 0u);
}

TEST(DetectionF1, EmptyCases) {
    EXPECT_EQ(detection_f1(std::vector<std::vector<Box>>{}, std::vector<std::vector<Box>>{}).f1, 0.0);
    const std::vector<std::vector<Box>> none{{}}, one{{{0, 0, 1, 1}}};
    EXPECT_EQ(detection_f1(none, one).recall, 0.0);
    EXPECT_EQ(detection_f1(one, none).precision, 0.0);
    EXPECT_THROW(detection_f1(one, std::vector<std::vector<Box>>{}), Error);
}

TEST(DetectionF1, OneToOne) {
    // Two duplicates of one ground truth: only one counts.
    const std::vector<std::vector<Box>> preds{{{0, 0, 10, 10}, {0, 0, 10, 10}}}, gts{{{0, 0, 10, 10}}};
    const EvalReport r = detection_f1(preds, gts);
    EXPECT_EQ(r.true_positives, 1u);
    EXPECT_EQ(r.precision, 0.5);
}

TEST(GreedyMatch, HighestIouWinsAndTieBreak) {
    const std::vector<Box> gts{{0, 0, 10, 10}};
    const std::vector<Box> preds{{0, 0, 8, 10}, {0, 0, 10, 10}};
    const auto m = greedy_match(preds, gts);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].pred, 1u);
    const std::vector<Box> twins{{0, 0, 10, 10}, {0, 0, 10, 10}};
    EXPECT_EQ(greedy_match(twins, gts)[0].pred, 0u);
}

TEST(DetectionF1, EqualsExhaustiveOracle) {
    Rng rng(20);
    for (int trial = 0; trial < 300; ++trial) {
        const oracle::MatchInstance inst = oracle::random_instance(rng);
        size_t tp = 0, np = 0, ng = 0;
        for (size_t i = 0; i < inst.preds.size(); ++i) {
            tp += oracle::max_matching(inst.preds[i], inst.gts[i], 0.5);
            np += inst.preds[i].size();
            ng += inst.gts[i].size();
        }
        const EvalReport r = detection_f1(inst.preds, inst.gts);
        ASSERT_EQ(r.true_positives, tp) << "trial " << trial;
        EXPECT_EQ(r.predictions, np);
        EXPECT_EQ(r.ground_truths, ng);
        const double f1 = np + ng ? 2.0 * double(tp) / double(np + ng) : 0.0;
        EXPECT_NEAR(r.f1, f1, 1e-12);
    }
}

TEST(DetectionF1, PermutationInvariant) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        oracle::MatchInstance inst = oracle::random_instance(rng);
        const EvalReport a = detection_f1(inst.preds, inst.gts);
        for (auto& page : inst.preds)
            for (size_t i = page.size(); i > 1; --i)
                std::swap(page[i - 1], page[static_cast<size_t>(rng.uniform_int(0, int(i) - 1))]);
        const EvalReport b = detection_f1(inst.preds, inst.gts);
        EXPECT_EQ(a.true_positives, b.true_positives);
        EXPECT_EQ(a.f1, b.f1);
    }
}

TEST(DetectionF1, SwappingRolesSwapsPrecisionAndRecall) {
    Rng rng(22);
    for (int trial = 0; trial < 100; ++trial) {
        const oracle::MatchInstance inst = oracle::random_instance(rng);
        const EvalReport a = detection_f1(inst.preds, inst.gts), b = detection_f1(inst.gts, inst.preds);
        EXPECT_EQ(a.true_positives, b.true_positives);
        EXPECT_DOUBLE_EQ(a.precision, b.recall);
        EXPECT_DOUBLE_EQ(a.f1, b.f1);
    }
}

TEST(DetectionF1, PageResultOverload) {
    DetectionResult d;
    d.boxes = {{0, 0, 10, 10}};
    d.scores = {1.0};
    GroundTruthPage g;
    g.boxes = {{0, 0, 10, 10}, {20, 20, 30, 30}};
    EXPECT_DOUBLE_EQ(detection_f1(std::vector{d}, std::vector{g}).f1, 2.0 / 3.0);
}

TEST(EditScore, HandValues) {
    EXPECT_EQ(levenshtein(U"kitten", U"sitting"), 3u);
    EXPECT_DOUBLE_EQ(edit_similarity("kitten", "sitting"), 4.0 / 7.0);
    EXPECT_EQ(edit_similarity("", ""), 1.0);
    EXPECT_EQ(edit_similarity("abc", ""), 0.0);
    EXPECT_EQ(edit_similarity("Total", "TOTAL"), 1.0);
    EXPECT_DOUBLE_EQ(edit_similarity("café", "cafe"), 0.75);
    EXPECT_EQ(edit_score({}, {}), 1.0);
    EXPECT_DOUBLE_EQ(edit_score({"kitten", "a"}, {"sitting", "a"}), (4.0 / 7.0 + 1.0) / 2.0);
    EXPECT_THROW(edit_score({"a"}, {}), Error);
}

TEST(EditScore, MetricProperties) {
    Rng rng(23);
    auto word = [&] {
        std::u32string s;
        const int n = rng.uniform_int(0, 8);
        for (int i = 0; i < n; ++i) s.push_back(U'a' + static_cast<char32_t>(rng.uniform_int(0, 3)));
        return s;
    };
    for (int i = 0; i < 500; ++i) {
        const std::u32string a = word(), b = word(), c = word();
        EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
        EXPECT_EQ(levenshtein(a, a), 0u);
        EXPECT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
        EXPECT_LE(levenshtein(a, b), std::max(a.size(), b.size()));
        EXPECT_GE(levenshtein(a, b), a.size() > b.size() ? a.size() - b.size() : b.size() - a.size());
    }
}

TEST(Latency, Stats) {
    const LatencyStats s = LatencyStats::from_samples({1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_DOUBLE_EQ(s.total, 10);
    EXPECT_DOUBLE_EQ(s.p95, 4);
    EXPECT_NEAR(s.stddev, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_NEAR(s.coefficient_of_variation(), std::sqrt(5.0 / 3.0) / 2.5, 1e-12);
    const LatencyStats empty = LatencyStats::from_samples({});
    EXPECT_EQ(empty.mean, 0.0);
    EXPECT_EQ(empty.coefficient_of_variation(), 0.0);
}

TEST(Latency, TimePages) {
    EXPECT_TRUE(time_pages(0, [](size_t) { FAIL(); }).seconds.empty());
    std::vector<size_t> calls;
    const LatencyStats s = time_pages(3, [&](size_t i) {
        calls.push_back(i);
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }, 2);
    EXPECT_EQ(calls, (std::vector<size_t>{0, 0, 0, 1, 2}));
    ASSERT_EQ(s.seconds.size(), 3u);
    for (double v : s.seconds) EXPECT_GE(v, 0.0015);
}

TEST(Report, JsonAndTable) {
    EvalReport r;
    r.true_positives = 3;
    r.predictions = 4;
    r.ground_truths = 5;
    r.precision = 0.75;
    r.recall = 0.6;
    r.f1 = 2 * 0.75 * 0.6 / 1.35;
    const nlohmann::json j = report_to_json(r);
    EXPECT_EQ(j["unmatched_predictions"], 1);
    EXPECT_EQ(j["unmatched_ground_truths"], 2);
    EXPECT_FALSE(j.contains("edit_score"));
    EXPECT_FALSE(j.contains("latency"));
    r.edit_score = 0.5;
    EXPECT_EQ(report_to_json(r)["edit_score"], 0.5);
    EXPECT_NE(report_table(r).find("0.5"), std::string::npos);
}
