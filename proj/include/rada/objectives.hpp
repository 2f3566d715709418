#pragma once

// Full training objectives packaged for the finite-difference oracle.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <cmath>
#include <vector>

#include "rada/adapter.hpp"
#include "rada/autodiff.hpp"
#include "rada/gradcheck.hpp"
#include "rada/losses.hpp"
#include "rada/rational.hpp"
#include "rada/tensor.hpp"

namespace rada {

struct GradProblem {
    AdapterParams params;
    Tensor images;   // B x D, unit rows
    std::vector<std::size_t> labels;
    Tensor classes;  // K x D, unit rows (initial W for FFT-lite stage 2)
};

struct GradProblemOptions {
    std::size_t batch = 2;
    std::size_t classes = 3;
    std::size_t dim = 4;
    std::size_t inner = 4;
    std::size_t n_layers = 1;
    Variant variant = Variant::multi_query;
    std::uint64_t seed = 0;
    double weight_range = 2.0;  // every weight ~ U(-range, range)
};

inline constexpr double kGradcheckLogitScale = 3.0;

// Random instance with nonzero output projections and O(1) projectors, so
// attention is far from uniform and every coordinate carries a gradient well
// above central-difference round-off.
inline GradProblem make_grad_problem(const GradProblemOptions& o) {
    GradProblem g;
    g.params = make_adapter({o.variant, o.dim, o.inner, o.n_layers, o.seed});
    std::mt19937_64 rng(o.seed ^ 0x5DEECE66DULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (Tensor& w : g.params.weights)
        for (double& v : w.data()) v = o.weight_range * u(rng);
    auto unit_rows = [&](std::size_t n) {
        Tensor t({n, o.dim});
        for (double& v : t.data()) v = u(rng);
        return l2_normalize_rows(t);
    };
    g.images = unit_rows(o.batch);
    g.classes = unit_rows(o.classes);
    std::uniform_int_distribution<std::size_t> pick(0, o.classes - 1);
    for (std::size_t b = 0; b < o.batch; ++b) g.labels.push_back(pick(rng));
    return g;
}

// Objective over the adapter weights, plus W as the last parameter when the
// regime trains the classifier.
inline Objective regime_objective(const GradProblem& g, Regime regime, const LossConfig& cfg, double logit_scale) {
    check_regime_config(regime, cfg);
    return [&g, regime, cfg, logit_scale](Tape& tape, const std::vector<Var>& params) {
        const std::size_t n_adapter = g.params.weights.size();
        std::vector<Var> w(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(n_adapter));
        Var h = regime == Regime::fft_lite_stage2 ? ad::l2_normalize_rows(params.back()) : tape.constant(g.classes);
        std::vector<Var> logits, masks;
        for (std::size_t b = 0; b < g.images.rows(); ++b) {
            Var f = tape.constant(Tensor::row(g.images.row_span(b)));
            Var r = ad::rational(f, h);
            Var m = ad::adapter_mask(g.params, w, f, h, r);
            logits.push_back(ad::masked_logits(m, r, logit_scale));
            masks.push_back(m);
        }
        Var z = ad::concat_rows(logits);
        Var main = regime == Regime::ttt ? ad::ttt_entropy(z, cfg.entropy_mode) : ad::adapt_loss(z, g.labels);
        return ad::total_loss(regime, cfg, main, ad::concat_rows(masks));
    };
}

inline std::vector<Tensor> regime_parameters(const GradProblem& g, Regime regime) {
    std::vector<Tensor> p = g.params.weights;
    if (regime == Regime::fft_lite_stage2) p.push_back(g.classes);
    return p;
}

inline GradCheckReport check_regime(const GradProblem& g, Regime regime, const LossConfig& cfg, double logit_scale,
                                    double h = 1e-5) {
    return finite_diff_check(regime_objective(g, regime, cfg, logit_scale), regime_parameters(g, regime), h);
}

struct ConditionedProblem {
    GradProblem problem;
    std::uint64_t seed = 0;  // seed of the accepted draw
    std::size_t draws = 0;
};

namespace detail {

// Gap between the largest and second-largest |M - 1| over the batch.
inline double linf_gap(const GradProblem& g) {
    double first = -1.0, second = -1.0;
    for (std::size_t b = 0; b < g.images.rows(); ++b) {
        const Tensor m = sample_mask(g.params, g.images.row_span(b), g.classes);
        for (double v : m.data()) {
            const double a = std::abs(v - 1.0);
            if (a > first) {
                second = first;
                first = a;
            } else if (a > second) {
                second = a;
            }
        }
    }
    return first - second;
}

}  // namespace detail

// Relative error is only meaningful where the gradient is clearly nonzero,
// and the L∞ regularizer only away from ties. Draws instances from
// consecutive seeds until every analytic coordinate has |g| >= min_grad
// (and, for L∞, the top two |M - 1| differ by >= min_gap). The check never
// looks at finite differences.
inline ConditionedProblem conditioned_problem(GradProblemOptions o, Regime regime, const LossConfig& cfg,
                                              double logit_scale, double min_grad = 1e-5, double min_gap = 1e-3,
                                              std::size_t max_draws = 256) {
    const std::uint64_t base = o.seed;
    for (std::size_t t = 0; t < max_draws; ++t) {
        o.seed = base + t;
        GradProblem g = make_grad_problem(o);
        const auto grads = analytic_gradients(regime_objective(g, regime, cfg, logit_scale), regime_parameters(g, regime));
        bool ok = true;
        for (const Tensor& gr : grads)
            for (double v : gr.data()) ok = ok && std::abs(v) >= min_grad;
        if (ok && cfg.apply_reg && cfg.reg_norm == RegNorm::linf) ok = detail::linf_gap(g) >= min_gap;
        if (ok) return {std::move(g), o.seed, t + 1};
    }
    throw OracleError("no well-conditioned gradient instance within " + std::to_string(max_draws) + " draws");
}

}  // namespace rada
