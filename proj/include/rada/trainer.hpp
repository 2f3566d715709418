#pragma once

// Source-data training loops and base-to-new evaluation.
//
// EFT: only the mask generator learns; embeddings and class rows are frozen
// and the objective is cross-entropy over masked rationals plus α·reg.
// FFT-lite: stage 1 trains the mask generator against a frozen copy W of
// the class rows (CE + α·reg); stage 2 trains mask generator and W jointly
// with CE only. W rows are renormalized before every rational computation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rada/adapter.hpp"
#include "rada/autodiff.hpp"
#include "rada/embedio.hpp"
#include "rada/errors.hpp"
#include "rada/losses.hpp"
#include "rada/optim.hpp"
#include "rada/parallel.hpp"
#include "rada/rational.hpp"

namespace rada {

struct RunConfig {
    Regime regime = Regime::eft;
    double learning_rate = 0.0009;
    std::size_t epochs = 13;
    std::size_t batch_size = 1;
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double momentum = 0.9;
    double weight_decay = 0.0;
    bool cosine = true;
    std::uint64_t seed = 0;
    double logit_scale = kDefaultLogitScale;
    LossConfig loss = LossConfig::for_regime(Regime::eft);

    // FFT-lite schedule; learning_rate and epochs above are EFT-only.
    double stage1_lr = 0.004;
    double stage2_lr = 0.000004;
    std::size_t stage1_epochs = 5;
    std::size_t stage2_epochs = 5;

    bool eval_each_epoch = true;

    static RunConfig eft_defaults() { return RunConfig{}; }

    static RunConfig fft_lite_defaults() {
        RunConfig c;
        c.regime = Regime::fft_lite_stage1;
        c.optimizer = OptimizerKind::adamw;
        c.weight_decay = 0.1;
        c.batch_size = 1;
        c.loss = LossConfig::for_regime(Regime::fft_lite_stage1);
        return c;
    }

    void validate() const {
        loss.validate();
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
        if (!(learning_rate >= 0.0) || !(stage1_lr >= 0.0) || !(stage2_lr >= 0.0)) {
            throw ConfigError("learning rates must be >= 0");
        }
    }
};

struct MaskStats {
    double mean = 1.0;
    double stddev = 0.0;
    double min = 1.0;
    double max = 1.0;
    std::size_t count = 0;
};

struct SplitEval {
    double accuracy = 0.0;  // percent
    std::vector<double> per_class;
    std::vector<std::uint32_t> predictions;
    MaskStats mask;
};

struct EvalReport {
    double base_acc = 0.0;
    double new_acc = 0.0;
    double harmonic_mean = 0.0;
    std::vector<double> per_class_base;
    std::vector<double> per_class_new;
    MaskStats mask;  // over base-test and new-test together
};

inline double harmonic_mean(double base, double novel) {
    return (base + novel) > 0.0 ? 2.0 * base * novel / (base + novel) : 0.0;
}

namespace detail {

struct MaskAccumulator {
    double sum = 0.0, sumsq = 0.0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    std::size_t count = 0;

    void add(std::span<const double> values) {
        for (double v : values) {
            sum += v;
            sumsq += v * v;
            min = std::min(min, v);
            max = std::max(max, v);
        }
        count += values.size();
    }
    void merge(const MaskAccumulator& o) {
        sum += o.sum;
        sumsq += o.sumsq;
        min = std::min(min, o.min);
        max = std::max(max, o.max);
        count += o.count;
    }
    MaskStats stats() const {
        MaskStats s;
        s.count = count;
        if (count == 0) return s;
        s.mean = sum / static_cast<double>(count);
        s.stddev = std::sqrt(std::max(0.0, sumsq / static_cast<double>(count) - s.mean * s.mean));
        s.min = min;
        s.max = max;
        return s;
    }
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

// Logits (length K) of one sample; the mask is written to mask_out if given.
inline std::vector<double> sample_logits(const AdapterParams* params, std::span<const double> image,
                                         const Tensor& classes, double logit_scale, Tensor* mask_out = nullptr) {
    const Tensor r = rational_of(image, classes);
    const std::size_t k = r.rows(), d = r.cols();
    std::vector<double> logits(k, 0.0);
    if (params) {
        Tensor m = sample_mask(*params, image, classes);
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += m(i, j) * r(i, j);
            logits[i] = logit_scale * s;
        }
        if (mask_out) *mask_out = std::move(m);
    } else {
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += 1.0 * r(i, j);
            logits[i] = logit_scale * s;
        }
        if (mask_out) *mask_out = Tensor({k, d}, 1.0);
    }
    return logits;
}

// Argmax-of-masked-logits accuracy; params == nullptr means M ≡ 1 (zero-shot).
inline SplitEval evaluate(const EmbeddingBatch& batch, const ClassMatrix& classes, const AdapterParams* params,
                          double logit_scale = kDefaultLogitScale) {
    if (batch.size() == 0) throw DegenerateInputError("cannot evaluate an empty batch");
    if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
    const EmbeddingBatch images = normalized(batch);
    const ClassMatrix h = normalized(classes);
    images.validate_against(h.num_classes());
    detail::require_normalized(images, h);
    if (params && params->dim != images.dim()) {
        throw DimensionError("adapter dim " + std::to_string(params->dim) + " differs from embedding dim " +
                             std::to_string(images.dim()));
    }
    const std::size_t n = images.size(), k = h.num_classes();
    SplitEval out;
    out.predictions.resize(n);
    std::vector<detail::MaskAccumulator> partial(n);
    parallel_for(n, [&](std::size_t s) {
        Tensor mask;
        const auto logits = sample_logits(params, images.features.row_span(s), h.weights, logit_scale, &mask);
        out.predictions[s] = static_cast<std::uint32_t>(detail::argmax(logits));
        partial[s].add(mask.data());
    });
    detail::MaskAccumulator acc;
    for (const auto& p : partial) acc.merge(p);
    out.mask = acc.stats();
    std::vector<std::size_t> hits(k, 0), totals(k, 0);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < n; ++s) {
        const auto y = images.labels[s];
        ++totals[y];
        if (out.predictions[s] == y) {
            ++hits[y];
            ++correct;
        }
    }
    out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    out.per_class.resize(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
        if (totals[c]) out.per_class[c] = 100.0 * static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    return out;
}

// Base accuracy on base_test (against `base_classifier` if given, else the
// bundle's base class rows) and new accuracy on new_test.
inline EvalReport evaluate_bundle(const DatasetBundle& bundle, const AdapterParams* params,
                                  double logit_scale = kDefaultLogitScale,
                                  const ClassMatrix* base_classifier = nullptr) {
    const ClassMatrix& base = base_classifier ? *base_classifier : bundle.base_classes;
    const SplitEval b = evaluate(bundle.base_test, base, params, logit_scale);
    const SplitEval n = evaluate(bundle.new_test, bundle.new_classes, params, logit_scale);
    EvalReport r;
    r.base_acc = b.accuracy;
    r.new_acc = n.accuracy;
    r.harmonic_mean = harmonic_mean(r.base_acc, r.new_acc);
    r.per_class_base = b.per_class;
    r.per_class_new = n.per_class;
    detail::MaskAccumulator all;
    auto fold = [&](const MaskStats& s) {
        if (s.count == 0) return;
        detail::MaskAccumulator a;
        a.count = s.count;
        a.sum = s.mean * static_cast<double>(s.count);
        a.sumsq = (s.stddev * s.stddev + s.mean * s.mean) * static_cast<double>(s.count);
        a.min = s.min;
        a.max = s.max;
        all.merge(a);
    };
    fold(b.mask);
    fold(n.mask);
    r.mask = all.stats();
    return r;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;  // mean total objective over the epoch's steps
    double reg = 0.0;   // mean unweighted regularizer
    double base_acc = 0.0;
    double new_acc = 0.0;
};

struct TrainResult {
    AdapterParams params;
    std::optional<ClassMatrix> classifier;  // FFT-lite learnable W
    std::vector<EpochRecord> history;
    EvalReport initial;
    EvalReport final;
};

namespace detail {

struct StepOutcome {
    double total = 0.0;
    LossParts parts;
};

// One optimizer step on `indices` of `train`. When `classifier` is non-null
// it is the raw learnable W (rows renormalized on the tape) and is updated.
inline StepOutcome train_step(AdapterParams& params, Tensor* classifier, const Tensor& frozen_classes,
                              const EmbeddingBatch& train, std::span<const std::size_t> indices, Regime regime,
                              const RunConfig& cfg, Optimizer& opt, std::size_t step_index) {
    Tape tape;
    auto w = ad::parameter_leaves(tape, params, true);
    Var w_leaf{};
    Var h{};
    if (classifier) {
        w_leaf = tape.leaf(*classifier, true);
        h = ad::l2_normalize_rows(w_leaf);
    } else {
        h = tape.constant(frozen_classes);
    }
    std::vector<Var> logits, masks;
    std::vector<std::size_t> labels;
    for (std::size_t idx : indices) {
        Var f = tape.constant(Tensor::row(train.features.row_span(idx)));
        Var r = ad::rational(f, h);
        Var m = ad::adapter_mask(params, w, f, h, r);
        logits.push_back(ad::masked_logits(m, r, cfg.logit_scale));
        masks.push_back(m);
        labels.push_back(train.labels[idx]);
    }
    Var all_logits = ad::concat_rows(logits);
    Var all_masks = ad::concat_rows(masks);
    Var main = ad::adapt_loss(all_logits, labels);
    Var total = ad::total_loss(regime, cfg.loss, main, all_masks);

    StepOutcome out;
    out.total = total.value()[0];
    out.parts.main = main.value()[0];
    out.parts.reg = mask_reg(all_masks.value(), cfg.loss.reg_norm);
    if (!std::isfinite(out.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step_index << " (main=" << out.parts.main << ", reg=" << out.parts.reg
           << ")";
        throw NumericError(os.str());
    }
    tape.backward(total);
    std::vector<Tensor*> targets;
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < w.size(); ++i) {
        targets.push_back(&params.weights[i]);
        grads.push_back(tape.grad(w[i]));
    }
    if (classifier) {
        targets.push_back(classifier);
        grads.push_back(tape.grad(w_leaf));
    }
    opt.step(targets, grads);
    if (!params.all_finite() || (classifier && !all_finite(*classifier))) {
        throw NumericError("non-finite parameters after step " + std::to_string(step_index));
    }
    return out;
}

struct LoopSpec {
    Regime regime;
    std::size_t epochs;
    OptimizerConfig opt;
    std::uint64_t shuffle_seed;
    std::size_t epoch_offset;  // for history numbering across stages
};

inline void run_epochs(AdapterParams& params, Tensor* classifier, const DatasetBundle& bundle, const RunConfig& cfg,
                       const LoopSpec& spec, std::vector<EpochRecord>& history) {
    const EmbeddingBatch& train = bundle.base_train;
    const std::size_t n = train.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    OptimizerConfig oc = spec.opt;
    oc.total_steps = steps_per_epoch * spec.epochs;
    Optimizer opt(oc);
    std::mt19937_64 rng(spec.shuffle_seed);
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t e = 0; e < spec.epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, reg_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            const std::size_t lo = s * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
            const auto out = train_step(params, classifier, bundle.base_classes.weights, train,
                                        std::span<const std::size_t>(order).subspan(lo, hi - lo), spec.regime, cfg,
                                        opt, step++);
            loss_sum += out.total;
            reg_sum += out.parts.reg;
        }
        EpochRecord rec;
        rec.epoch = spec.epoch_offset + e + 1;
        rec.loss = loss_sum / static_cast<double>(steps_per_epoch);
        rec.reg = reg_sum / static_cast<double>(steps_per_epoch);
        if (cfg.eval_each_epoch || e + 1 == spec.epochs) {
            ClassMatrix w_classes;
            const ClassMatrix* base = nullptr;
            if (classifier) {
                w_classes = bundle.base_classes;
                w_classes.weights = *classifier;
                w_classes.normalized = false;
                base = &w_classes;
            }
            const EvalReport r = evaluate_bundle(bundle, &params, cfg.logit_scale, base);
            rec.base_acc = r.base_acc;
            rec.new_acc = r.new_acc;
        } else {
            rec.base_acc = rec.new_acc = std::numeric_limits<double>::quiet_NaN();
        }
        history.push_back(rec);
    }
}

inline DatasetBundle normalized_bundle(const DatasetBundle& in) {
    DatasetBundle b = in;
    b.base_train = normalized(in.base_train);
    b.base_test = normalized(in.base_test);
    b.new_test = normalized(in.new_test);
    b.base_classes = normalized(in.base_classes);
    b.new_classes = normalized(in.new_classes);
    if (in.ttt_stream) b.ttt_stream = normalized(*in.ttt_stream);
    b.validate();
    return b;
}

// Training objective over the whole base_train split, without updates.
inline LossParts full_objective(const AdapterParams& params, const DatasetBundle& bundle, const RunConfig& cfg) {
    const EmbeddingBatch& train = bundle.base_train;
    const std::size_t k = bundle.base_classes.num_classes(), d = train.dim();
    Tensor logits({train.size(), k});
    Tensor masks({train.size() * k, d});
    std::vector<std::size_t> labels(train.labels.begin(), train.labels.end());
    parallel_for(train.size(), [&](std::size_t s) {
        Tensor m;
        const auto z = sample_logits(&params, train.features.row_span(s), bundle.base_classes.weights,
                                     cfg.logit_scale, &m);
        std::copy(z.begin(), z.end(), logits.data().begin() + static_cast<std::ptrdiff_t>(s * k));
        std::copy(m.data().begin(), m.data().end(), masks.data().begin() + static_cast<std::ptrdiff_t>(s * k * d));
    });
    return {adapt_loss(logits, labels), mask_reg(masks, cfg.loss.reg_norm)};
}

inline EpochRecord initial_record(const EvalReport& r, const AdapterParams& params, const DatasetBundle& bundle,
                                  const RunConfig& cfg, Regime regime) {
    EpochRecord rec;
    rec.base_acc = r.base_acc;
    rec.new_acc = r.new_acc;
    const LossParts parts = full_objective(params, bundle, cfg);
    rec.loss = total_loss(regime, cfg.loss, parts);
    rec.reg = parts.reg;
    return rec;
}

}  // namespace detail

// Efficient fine-tuning: θ_m only, objective CE + α·reg.
inline TrainResult train_eft(const DatasetBundle& input, AdapterParams params, const RunConfig& cfg) {
    cfg.validate();
    if (input.base_classes.learnable) throw ContractError("EFT requires frozen class embeddings");
    const DatasetBundle bundle = detail::normalized_bundle(input);
    if (params.dim != bundle.base_train.dim()) throw DimensionError("adapter dim differs from embedding dim");
    TrainResult res;
    res.initial = evaluate_bundle(bundle, &params, cfg.logit_scale);
    res.history.push_back(detail::initial_record(res.initial, params, bundle, cfg, Regime::eft));
    OptimizerConfig oc;
    oc.kind = cfg.optimizer;
    oc.lr = cfg.learning_rate;
    oc.momentum = cfg.momentum;
    oc.weight_decay = cfg.weight_decay;
    oc.cosine = cfg.cosine;
    detail::run_epochs(params, nullptr, bundle, cfg, {Regime::eft, cfg.epochs, oc, cfg.seed, 0}, res.history);
    res.final = evaluate_bundle(bundle, &params, cfg.logit_scale);
    res.params = std::move(params);
    return res;
}

// Two-stage schedule with a learnable classifier W initialized from h̄.
inline TrainResult train_fft_lite(const DatasetBundle& input, AdapterParams params, const RunConfig& cfg) {
    cfg.validate();
    const DatasetBundle bundle = detail::normalized_bundle(input);
    if (params.dim != bundle.base_train.dim()) throw DimensionError("adapter dim differs from embedding dim");
    TrainResult res;
    res.initial = evaluate_bundle(bundle, &params, cfg.logit_scale);
    res.history.push_back(detail::initial_record(res.initial, params, bundle, cfg, Regime::fft_lite_stage1));

    OptimizerConfig oc;
    oc.kind = cfg.optimizer;
    oc.momentum = cfg.momentum;
    oc.weight_decay = cfg.weight_decay;
    oc.cosine = cfg.cosine;

    // Stage 1: frozen W = h̄, CE + α·reg on θ_m.
    const RunConfig& s1 = cfg;
    oc.lr = cfg.stage1_lr;
    detail::run_epochs(params, nullptr, bundle, s1, {Regime::fft_lite_stage1, cfg.stage1_epochs, oc, cfg.seed, 0},
                       res.history);

    // Stage 2: CE only, θ_m and W jointly.
    Tensor w = bundle.base_classes.weights;
    RunConfig s2 = cfg;
    s2.loss.apply_reg = false;
    oc.lr = cfg.stage2_lr;
    detail::run_epochs(params, &w, bundle, s2,
                       {Regime::fft_lite_stage2, cfg.stage2_epochs, oc, cfg.seed + 1, cfg.stage1_epochs},
                       res.history);

    ClassMatrix classifier = bundle.base_classes;
    classifier.weights = std::move(w);
    classifier.learnable = true;
    classifier.normalized = rows_unit_norm(classifier.weights, kNormTolerance);
    res.final = evaluate_bundle(bundle, &params, cfg.logit_scale, &classifier);
    res.classifier = std::move(classifier);
    res.params = std::move(params);
    return res;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
    os << "epoch,loss,reg,base_acc,new_acc\n";
    os << std::setprecision(10);
    for (const auto& r : history) {
        os << r.epoch << ',' << r.loss << ',' << r.reg << ',' << r.base_acc << ',' << r.new_acc << '\n';
    }
}

inline void write_report(std::ostream& os, const EvalReport& r, const std::string& prefix = "") {
    os << std::setprecision(10);
    os << prefix << "base_acc=" << r.base_acc << '\n';
    os << prefix << "new_acc=" << r.new_acc << '\n';
    os << prefix << "harmonic_mean=" << r.harmonic_mean << '\n';
    os << prefix << "mask_mean=" << r.mask.mean << '\n';
    os << prefix << "mask_std=" << r.mask.stddev << '\n';
    os << prefix << "mask_min=" << r.mask.min << '\n';
    os << prefix << "mask_max=" << r.mask.max << '\n';
    for (std::size_t c = 0; c < r.per_class_base.size(); ++c)
        os << prefix << "base_class_" << c << "_acc=" << r.per_class_base[c] << '\n';
    for (std::size_t c = 0; c < r.per_class_new.size(); ++c)
        os << prefix << "new_class_" << c << "_acc=" << r.per_class_new[c] << '\n';
}

// ---------------------------------------------------------------------------
// Mask value distribution

struct MaskHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;

    double bin_lo(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(counts.size()); }
    double bin_hi(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(counts.size()); }
    std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }
};

// Every mask entry over a batch (B·K·D values, sample-major).
inline std::vector<double> collect_mask_values(const EmbeddingBatch& batch, const ClassMatrix& classes,
                                               const AdapterParams& params) {
    const EmbeddingBatch images = normalized(batch);
    const ClassMatrix h = normalized(classes);
    detail::require_normalized(images, h);
    if (params.dim != images.dim()) throw DimensionError("checkpoint dim differs from bundle dim");
    const std::size_t kd = h.num_classes() * h.dim();
    std::vector<double> values(images.size() * kd);
    parallel_for(images.size(), [&](std::size_t s) {
        const Tensor m = sample_mask(params, images.features.row_span(s), h.weights);
        std::copy(m.data().begin(), m.data().end(), values.begin() + static_cast<std::ptrdiff_t>(s * kd));
    });
    return values;
}

// Uniform bins over the observed range; a constant input is centred in a
// unit-width range so it lands in the middle bin.
inline MaskHistogram histogram(std::span<const double> values, std::size_t bins = 64) {
    if (values.empty()) throw DegenerateInputError("histogram of no values");
    if (bins == 0) throw ConfigError("histogram needs at least one bin");
    MaskHistogram h;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx;
    if (!(h.hi > h.lo)) {
        h.lo -= 0.5;
        h.hi += 0.5;
    }
    h.counts.assign(bins, 0);
    const double width = h.hi - h.lo;
    for (double v : values) {
        auto b = static_cast<std::size_t>((v - h.lo) / width * static_cast<double>(bins));
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

inline MaskStats summarize(std::span<const double> values) {
    detail::MaskAccumulator acc;
    acc.add(values);
    return acc.stats();
}

// True when the bins holding at least `frac` of the peak count form one
// contiguous run.
inline bool is_unimodal(const MaskHistogram& h, double frac = 0.5) {
    const std::size_t peak = *std::max_element(h.counts.begin(), h.counts.end());
    const double cut = frac * static_cast<double>(peak);
    std::size_t runs = 0;
    bool inside = false;
    for (std::size_t c : h.counts) {
        const bool high = static_cast<double>(c) >= cut && c > 0;
        if (high && !inside) ++runs;
        inside = high;
    }
    return runs == 1;
}

inline void write_histogram_csv(std::ostream& os, const MaskHistogram& h) {
    os << "bin,lo,hi,count\n" << std::setprecision(12);
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        os << b << ',' << h.bin_lo(b) << ',' << h.bin_hi(b) << ',' << h.counts[b] << '\n';
}

inline void write_matrix_csv(std::ostream& os, const Tensor& m) {
    require_matrix(m, "csv matrix");
    os << std::setprecision(12);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
        os << '\n';
    }
}

}  // namespace rada
