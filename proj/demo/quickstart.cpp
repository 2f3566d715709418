// Generate a small synthetic bundle, train a mask, compare against zero-shot,
// then adapt a few drifted samples at test time.

#include <cstdio>

#include "rada/rada.hpp"

int main() {
    rada::SynthOptions so;
    so.classes = 5;
    so.dim = 16;
    so.shots = 8;
    so.test_per_class = 20;
    so.stream_size = 20;
    so.seed = 3;
    const rada::DatasetBundle bundle = rada::synth_gaussian(so);

    rada::RunConfig cfg = rada::RunConfig::eft_defaults();
    cfg.epochs = 3;
    const rada::TrainResult res =
        rada::train_eft(bundle, rada::make_adapter({rada::Variant::multi_query, so.dim, 8, 1, 0}), cfg);
    std::printf("zero-shot  base %.1f  new %.1f  HM %.2f\n", res.initial.base_acc, res.initial.new_acc,
                res.initial.harmonic_mean);
    std::printf("adapted    base %.1f  new %.1f  HM %.2f\n", res.final.base_acc, res.final.new_acc,
                res.final.harmonic_mean);
    std::printf("mask       mean %.6f  std %.2e\n", res.final.mask.mean, res.final.mask.stddev);

    rada::TttConfig tc;
    tc.n_views = 15;
    tc.lr = 1e-4;
    const rada::TttReport ttt = rada::run_stream(*bundle.ttt_stream, bundle.base_classes, res.params, tc);
    std::printf("ttt        zero-shot %.1f  adapted %.1f  entropy down on %zu/%zu\n", ttt.zero_shot_acc,
                ttt.adapted_acc, ttt.entropy_decreased, ttt.samples.size());
    return 0;
}
