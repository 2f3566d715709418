#pragma once

// Offline test-time training. Every sample starts from the same pristine
// parameters, builds a batch of augmented views, and takes a few entropy
// steps on its most confident views before predicting on the original row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "rada/adapter.hpp"
#include "rada/autodiff.hpp"
#include "rada/binary_io.hpp"
#include "rada/embedio.hpp"
#include "rada/errors.hpp"
#include "rada/losses.hpp"
#include "rada/optim.hpp"
#include "rada/parallel.hpp"
#include "rada/rational.hpp"
#include "rada/trainer.hpp"

namespace rada {

enum class KeepRounding : std::uint8_t { ceil, floor };

struct TttConfig {
    std::size_t n_views = 63;  // batch = n_views + 1
    double jitter = 0.1;
    double drop_frac = 0.1;
    double keep_frac = 0.10;
    KeepRounding rounding = KeepRounding::ceil;
    std::size_t steps = 3;
    double lr = 0.0008;
    LossConfig loss = LossConfig::for_regime(Regime::ttt);
    double logit_scale = kDefaultLogitScale;
    std::uint64_t seed = 0;

    std::size_t batch() const { return n_views + 1; }

    std::size_t keep_count() const {
        const double raw = static_cast<double>(batch()) * keep_frac;
        // Guard against 64 * 0.1 landing a hair above an integer.
        const double snapped = std::round(raw);
        const double x = std::abs(raw - snapped) < 1e-9 ? snapped : raw;
        return static_cast<std::size_t>(rounding == KeepRounding::ceil ? std::ceil(x) : std::floor(x));
    }

    void validate() const {
        if (!(keep_frac > 0.0 && keep_frac <= 1.0)) throw ConfigError("keep_frac must be in (0, 1]");
        if (keep_count() < 1) throw ConfigError("keep fraction selects no views");
        if (!(lr >= 0.0)) throw ConfigError("ttt lr must be >= 0");
        if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
        check_regime_config(Regime::ttt, loss);
    }
};

// Indices of the `keep` rows with the smallest entropy; ties go to the lower index.
inline std::vector<std::size_t> select_confident(std::span<const double> entropies, std::size_t keep) {
    if (keep == 0 || keep > entropies.size()) throw ConfigError("invalid number of views to keep");
    std::vector<std::size_t> idx(entropies.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return entropies[a] < entropies[b]; });
    idx.resize(keep);
    return idx;
}

struct TttSample {
    std::size_t sample_id = 0;
    std::uint32_t zero_shot_pred = 0;  // prediction under params₀
    std::uint32_t adapted_pred = 0;
    std::uint32_t label = 0;
    double entropy_step0 = 0.0;  // objective on the selected views before any update
    double entropy_final = 0.0;  // same measurement after the last update
    std::size_t skipped_steps = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// View seed depends on the sample's bytes, never on its stream position.
inline std::uint64_t view_seed(std::uint64_t seed, std::span<const double> sample) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(sample.data());
    return splitmix64(seed ^ (std::uint64_t{bin::crc32({p, sample.size_bytes()})} << 17));
}

struct ViewPass {
    Var logits;                  // V x K
    std::vector<Var> masks;      // per view, K x D
    std::vector<double> entropies;
};

inline ViewPass view_pass(Tape& tape, const AdapterParams& p, const std::vector<Var>& w, const Tensor& views,
                          Var classes, double logit_scale) {
    ViewPass out;
    std::vector<Var> rows;
    for (std::size_t v = 0; v < views.rows(); ++v) {
        Var f = tape.constant(Tensor::row(views.row_span(v)));
        Var r = ad::rational(f, classes);
        Var m = ad::adapter_mask(p, w, f, classes, r);
        rows.push_back(ad::masked_logits(m, r, logit_scale));
        out.masks.push_back(m);
    }
    out.logits = ad::concat_rows(rows);
    out.entropies = row_entropies(out.logits.value());
    return out;
}

inline Var selected_objective(const ViewPass& pass, const std::vector<std::size_t>& keep, const TttConfig& cfg) {
    std::vector<Var> kept_masks;
    for (std::size_t i : keep) kept_masks.push_back(pass.masks[i]);
    Var main = ad::ttt_entropy(ad::select_rows(pass.logits, keep), cfg.loss.entropy_mode);
    return ad::total_loss(Regime::ttt, cfg.loss, main, ad::concat_rows(kept_masks));
}

inline double measure_entropy(const AdapterParams& p, const Tensor& views, const Tensor& classes,
                              const TttConfig& cfg) {
    Tape tape;
    auto w = ad::parameter_leaves(tape, p, false);
    const ViewPass pass = view_pass(tape, p, w, views, tape.constant(classes), cfg.logit_scale);
    const auto keep = select_confident(pass.entropies, cfg.keep_count());
    return ttt_entropy(ad::select_rows(pass.logits, keep).value(), cfg.loss.entropy_mode);
}

inline std::uint32_t predict(const AdapterParams& p, std::span<const double> image, const Tensor& classes,
                             double logit_scale) {
    const auto logits = sample_logits(&p, image, classes, logit_scale);
    return static_cast<std::uint32_t>(argmax(logits));
}

}  // namespace detail

// Adapts a private copy of params0 to one sample; params0 is never modified.
inline TttSample adapt_one(std::span<const double> sample, std::uint32_t label, const ClassMatrix& classes,
                           const AdapterParams& params0, const TttConfig& cfg, std::size_t sample_id = 0) {
    cfg.validate();
    if (!classes.normalized || !rows_unit_norm(classes.weights, kNormTolerance)) {
        throw ContractError("class embeddings must be l2-normalized for TTT");
    }
    if (sample.size() != params0.dim || classes.dim() != params0.dim) {
        throw DimensionError("sample/class dim does not match adapter dim " + std::to_string(params0.dim));
    }
    const Tensor& h = classes.weights;
    const Tensor views = ttt_views(sample, {cfg.n_views, cfg.jitter, cfg.drop_frac, detail::view_seed(cfg.seed, sample)});

    TttSample out;
    out.sample_id = sample_id;
    out.label = label;
    out.zero_shot_pred = detail::predict(params0, sample, h, cfg.logit_scale);

    AdapterParams p = params0;
    OptimizerConfig oc;
    oc.kind = OptimizerKind::adam;
    oc.lr = cfg.lr;
    oc.cosine = false;
    Optimizer opt(oc);
    const std::size_t keep_n = cfg.keep_count();

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tape tape;
        auto w = ad::parameter_leaves(tape, p, true);
        const detail::ViewPass pass = detail::view_pass(tape, p, w, views, tape.constant(h), cfg.logit_scale);
        const auto keep = select_confident(pass.entropies, keep_n);
        Var objective = detail::selected_objective(pass, keep, cfg);
        if (step == 0) out.entropy_step0 = ttt_entropy(ad::select_rows(pass.logits, keep).value(), cfg.loss.entropy_mode);
        if (!std::isfinite(objective.value()[0])) {
            ++out.skipped_steps;
            continue;
        }
        tape.backward(objective);
        std::vector<Tensor*> targets;
        std::vector<Tensor> grads;
        for (std::size_t i = 0; i < w.size(); ++i) {
            targets.push_back(&p.weights[i]);
            grads.push_back(tape.grad(w[i]));
        }
        opt.step(targets, grads);
    }
    if (cfg.steps == 0) out.entropy_step0 = detail::measure_entropy(p, views, h, cfg);
    out.entropy_final = cfg.steps == 0 ? out.entropy_step0 : detail::measure_entropy(p, views, h, cfg);
    out.adapted_pred = detail::predict(p, sample, h, cfg.logit_scale);
    return out;
}

struct TttReport {
    double zero_shot_acc = 0.0;  // percent
    double adapted_acc = 0.0;
    std::size_t entropy_decreased = 0;  // samples with entropy_final < entropy_step0
    std::vector<TttSample> samples;     // sorted by sample_id
};

// Adapts every sample independently. `ids` defaults to row positions.
inline TttReport run_stream(const EmbeddingBatch& stream, const ClassMatrix& classes, const AdapterParams& params0,
                            const TttConfig& cfg, std::optional<std::vector<std::size_t>> ids = std::nullopt) {
    if (stream.size() == 0) throw DegenerateInputError("TTT stream is empty");
    cfg.validate();
    const EmbeddingBatch images = normalized(stream);
    const ClassMatrix h = normalized(classes);
    images.validate_against(h.num_classes());
    if (ids && ids->size() != images.size()) throw DimensionError("one id per stream sample required");

    TttReport rep;
    rep.samples.resize(images.size());
    parallel_for(images.size(), [&](std::size_t s) {
        const std::size_t id = ids ? (*ids)[s] : s;
        rep.samples[s] = adapt_one(images.features.row_span(s), images.labels[s], h, params0, cfg, id);
    });
    std::sort(rep.samples.begin(), rep.samples.end(),
              [](const TttSample& a, const TttSample& b) { return a.sample_id < b.sample_id; });
    std::size_t zs = 0, ad = 0;
    for (const auto& s : rep.samples) {
        zs += s.zero_shot_pred == s.label;
        ad += s.adapted_pred == s.label;
        rep.entropy_decreased += s.entropy_final < s.entropy_step0;
    }
    const double n = static_cast<double>(rep.samples.size());
    rep.zero_shot_acc = 100.0 * static_cast<double>(zs) / n;
    rep.adapted_acc = 100.0 * static_cast<double>(ad) / n;
    return rep;
}

inline void write_ttt_log_csv(std::ostream& os, const TttReport& rep) {
    os << "sample_id,zero_shot_pred,adapted_pred,label,entropy_step0,entropy_step3\n";
    os << std::setprecision(12);
    for (const auto& s : rep.samples) {
        os << s.sample_id << ',' << s.zero_shot_pred << ',' << s.adapted_pred << ',' << s.label << ','
           << s.entropy_step0 << ',' << s.entropy_final << '\n';
    }
}

}  // namespace rada
