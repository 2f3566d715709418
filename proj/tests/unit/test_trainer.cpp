#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracle.hpp"

using namespace rada;

namespace {

DatasetBundle small_bundle(std::uint64_t seed) {
    SynthOptions o;
    o.classes = 5;
    o.dim = 16;
    o.shots = 8;
    o.test_per_class = 20;
    o.seed = seed;
    return synth_gaussian(o);
}

// AdamW at logit scale 10: the configuration under which the mask moves on
// the small synthetic bundles.
RunConfig protocol(std::uint64_t seed, std::size_t epochs = 5) {
    RunConfig c;
    c.optimizer = OptimizerKind::adamw;
    c.learning_rate = 0.003;
    c.logit_scale = 10.0;
    c.epochs = epochs;
    c.seed = seed;
    return c;
}

AdapterParams fresh(std::uint64_t seed) { return make_adapter({Variant::multi_query, 16, 8, 1, seed}); }

}  // namespace

TEST(Metrics, HarmonicMean) {
    EXPECT_DOUBLE_EQ(harmonic_mean(80.0, 60.0), 2.0 * 80.0 * 60.0 / 140.0);
    EXPECT_DOUBLE_EQ(harmonic_mean(50.0, 50.0), 50.0);
    EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
    EXPECT_EQ(harmonic_mean(90.0, 0.0), 0.0);
}

TEST(Evaluate, ZeroInitAdapterMatchesZeroShotExactly) {
    const DatasetBundle b = small_bundle(4);
    const AdapterParams p = fresh(4);
    for (const auto* split : {&b.base_test, &b.new_test}) {
        const ClassMatrix& h = split == &b.base_test ? b.base_classes : b.new_classes;
        const SplitEval a = evaluate(*split, h, &p), z = evaluate(*split, h, nullptr);
        EXPECT_EQ(a.predictions, z.predictions);
        EXPECT_EQ(a.accuracy, z.accuracy);
        EXPECT_EQ(a.mask.mean, 1.0);
        EXPECT_EQ(a.mask.stddev, 0.0);
    }
}

TEST(Evaluate, PerClassAccuracyAveragesToTotal) {
    const DatasetBundle b = small_bundle(5);
    const SplitEval e = evaluate(b.base_test, b.base_classes, nullptr);
    double mean = 0.0;
    for (double a : e.per_class) mean += a / 5.0;
    EXPECT_NEAR(mean, e.accuracy, 1e-12);  // balanced test split
    EXPECT_THROW(evaluate(b.base_test, b.base_classes, nullptr, 0.0), ConfigError);
    EXPECT_THROW(evaluate(EmbeddingBatch{}, b.base_classes, nullptr), DegenerateInputError);
}

TEST(TrainEft, ZeroEpochsLeavesParametersUnchanged) {
    const DatasetBundle b = small_bundle(1);
    const AdapterParams p = fresh(1);
    const TrainResult r = train_eft(b, p, protocol(1, 0));
    EXPECT_EQ(encode(r.params), encode(p));
    ASSERT_EQ(r.history.size(), 1u);
    EXPECT_EQ(r.final.base_acc, r.initial.base_acc);
}

TEST(TrainEft, DeterministicForFixedSeed) {
    const DatasetBundle b = small_bundle(2);
    const TrainResult a = train_eft(b, fresh(2), protocol(2, 2));
    const TrainResult c = train_eft(b, fresh(2), protocol(2, 2));
    EXPECT_EQ(encode(a.params), encode(c.params));
    EXPECT_NE(fingerprint(a.params), fingerprint(fresh(2)));
}

// Frozen from the first oracle run of the small protocol (seed 2).
TEST(TrainEft, ProtocolImprovesBaseAndLowersLoss) {
    const DatasetBundle b = small_bundle(2);
    const TrainResult r = train_eft(b, fresh(2), protocol(2));
    EXPECT_DOUBLE_EQ(r.initial.base_acc, 78.0);
    EXPECT_DOUBLE_EQ(r.final.base_acc, 79.0);
    EXPECT_GT(r.final.base_acc, r.initial.base_acc);
    EXPECT_GE(r.final.new_acc, r.initial.new_acc - 3.0);
    ASSERT_EQ(r.history.size(), 6u);
    EXPECT_EQ(r.history[0].reg, 0.0);
    EXPECT_TRUE(std::isfinite(r.history[0].loss));
    for (std::size_t e = 2; e < r.history.size(); ++e) EXPECT_LT(r.history[e].loss, r.history[e - 1].loss);
    EXPECT_NE(r.final.mask.stddev, 0.0);
}

TEST(TrainEft, RejectsLearnableClassesAndBadDims) {
    DatasetBundle b = small_bundle(3);
    EXPECT_THROW(train_eft(b, make_adapter({Variant::multi_query, 8, 8, 1, 0}), protocol(3)), DimensionError);
    b.base_classes.learnable = true;
    EXPECT_THROW(train_eft(b, fresh(3), protocol(3)), ContractError);
    RunConfig bad = protocol(3);
    bad.batch_size = 0;
    EXPECT_THROW(train_eft(small_bundle(3), fresh(3), bad), ConfigError);
}

TEST(TrainEft, NonFiniteParametersRaiseNumericError) {
    AdapterParams p = fresh(4);
    p.get("W_out").data()[0] = std::nan("");
    EXPECT_THROW(train_eft(small_bundle(4), p, protocol(4, 1)), NumericError);
}

TEST(TrainFftLite, BeatsEftOnBaseUnderProtocol) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const DatasetBundle b = small_bundle(seed);
        const TrainResult e = train_eft(b, fresh(seed), protocol(seed));
        RunConfig f = RunConfig::fft_lite_defaults();
        f.logit_scale = 10.0;
        f.stage1_epochs = 3;
        f.stage2_epochs = 3;
        f.stage1_lr = 0.003;
        f.stage2_lr = 0.003;
        f.seed = seed;
        const TrainResult ff = train_fft_lite(b, fresh(seed), f);
        EXPECT_GE(ff.final.base_acc, e.final.base_acc) << seed;
        ASSERT_TRUE(ff.classifier.has_value());
        EXPECT_TRUE(ff.classifier->learnable);
        EXPECT_EQ(ff.history.size(), 7u);
    }
}

TEST(TrainFftLite, ZeroStageTwoRateKeepsClassifierAtClassEmbeddings) {
    const DatasetBundle b = small_bundle(5);
    RunConfig f = RunConfig::fft_lite_defaults();
    f.stage1_epochs = 1;
    f.stage2_epochs = 2;
    f.stage2_lr = 0.0;
    f.weight_decay = 0.0;
    const TrainResult r = train_fft_lite(b, fresh(5), f);
    EXPECT_TRUE(r.classifier->weights == b.base_classes.weights);

    RunConfig only1 = f;
    only1.stage2_epochs = 0;
    const TrainResult s1 = train_fft_lite(b, fresh(5), only1);
    EXPECT_EQ(encode(r.params), encode(s1.params));
}

TEST(Outputs, HistoryCsvAndReportFormat) {
    const TrainResult r = train_eft(small_bundle(1), fresh(1), protocol(1, 1));
    std::ostringstream h;
    write_history_csv(h, r.history);
    std::istringstream in(h.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,loss,reg,base_acc,new_acc");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
        ++rows;
    }
    EXPECT_EQ(rows, 2u);
    std::ostringstream rep;
    write_report(rep, r.final, "final_");
    EXPECT_NE(rep.str().find("final_base_acc="), std::string::npos);
    EXPECT_NE(rep.str().find("final_harmonic_mean="), std::string::npos);
    EXPECT_NE(rep.str().find("final_new_class_4_acc="), std::string::npos);
}

TEST(MaskDistribution, ZeroInitIsASpikeAtOne) {
    const DatasetBundle b = small_bundle(6);
    const auto v = collect_mask_values(b.base_test, b.base_classes, fresh(6));
    EXPECT_EQ(v.size(), 100u * 5 * 16);
    const MaskStats s = summarize(v);
    EXPECT_EQ(s.mean, 1.0);
    EXPECT_EQ(s.min, 1.0);
    EXPECT_EQ(s.max, 1.0);
    const MaskHistogram h = histogram(v, 64);
    EXPECT_EQ(h.counts[32], v.size());
    EXPECT_TRUE(is_unimodal(h));
    EXPECT_THROW(collect_mask_values(b.base_test, b.base_classes, make_adapter({Variant::mlp, 8, 8, 1, 0})),
                 DimensionError);
}

TEST(MaskDistribution, HistogramConservesCountsAndDetectsModes) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(1.0, 0.01);
    std::vector<double> v(5000);
    for (double& x : v) x = n(rng);
    const MaskHistogram h = histogram(v, 32);
    EXPECT_EQ(h.total(), v.size());
    EXPECT_EQ(h.bin_lo(0), h.lo);
    EXPECT_DOUBLE_EQ(h.bin_hi(31), h.hi);
    EXPECT_TRUE(is_unimodal(h));
    std::vector<double> two(v);
    for (std::size_t i = 0; i < 2500; ++i) two[i] += 0.2;
    EXPECT_FALSE(is_unimodal(histogram(two, 32)));
    EXPECT_THROW(histogram(std::vector<double>{}), DegenerateInputError);
    EXPECT_THROW(histogram(v, 0), ConfigError);
}

TEST(MaskDistribution, TrainedMaskStaysNearOne) {
    const DatasetBundle b = small_bundle(2);
    const TrainResult r = train_eft(b, fresh(2), protocol(2));
    const auto v = collect_mask_values(b.base_test, b.base_classes, r.params);
    const MaskStats s = summarize(v);
    EXPECT_NEAR(s.mean, 1.0, 0.05);
    EXPECT_TRUE(is_unimodal(histogram(v)));
    std::ostringstream csv;
    write_histogram_csv(csv, histogram(v, 8));
    const std::string text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}
