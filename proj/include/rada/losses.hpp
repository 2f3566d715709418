#pragma once

// Training objectives. Every loss exists twice: an eager version on plain
// tensors (used for reporting and as a reference) and a tape version used
// for gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rada/autodiff.hpp"
#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada {

enum class RegNorm : std::uint8_t { l1, l2, linf };
enum class EntropyMode : std::uint8_t { marginal, mean_per_sample };
enum class Regime : std::uint8_t { eft, ttt, fft_lite_stage1, fft_lite_stage2 };

inline const char* to_string(RegNorm n) {
    switch (n) {
        case RegNorm::l1: return "L1";
        case RegNorm::l2: return "L2";
        case RegNorm::linf: return "Linf";
    }
    return "unknown";
}

inline RegNorm parse_reg_norm(std::string_view s) {
    if (s == "L1" || s == "l1") return RegNorm::l1;
    if (s == "L2" || s == "l2") return RegNorm::l2;
    if (s == "Linf" || s == "linf") return RegNorm::linf;
    throw ConfigError("unknown regularizer norm '" + std::string(s) + "'");
}

inline const char* to_string(EntropyMode m) {
    return m == EntropyMode::marginal ? "marginal" : "mean-per-sample";
}

inline EntropyMode parse_entropy_mode(std::string_view s) {
    if (s == "marginal") return EntropyMode::marginal;
    if (s == "mean-per-sample") return EntropyMode::mean_per_sample;
    throw ConfigError("unknown entropy mode '" + std::string(s) + "'");
}

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::eft: return "eft";
        case Regime::ttt: return "ttt";
        case Regime::fft_lite_stage1: return "fft-lite-stage1";
        case Regime::fft_lite_stage2: return "fft-lite-stage2";
    }
    return "unknown";
}

inline Regime parse_regime(std::string_view s) {
    if (s == "eft") return Regime::eft;
    if (s == "ttt") return Regime::ttt;
    if (s == "fft-lite-stage1") return Regime::fft_lite_stage1;
    if (s == "fft-lite-stage2") return Regime::fft_lite_stage2;
    throw ConfigError("unknown regime '" + std::string(s) + "'");
}

inline constexpr Regime kAllRegimes[] = {Regime::eft, Regime::ttt, Regime::fft_lite_stage1,
                                         Regime::fft_lite_stage2};
inline constexpr RegNorm kAllRegNorms[] = {RegNorm::l1, RegNorm::l2, RegNorm::linf};

struct LossConfig {
    double reg_weight = 1.5;  // α
    RegNorm reg_norm = RegNorm::l2;
    bool apply_reg = true;    // only valid while embeddings/classifier are frozen
    EntropyMode entropy_mode = EntropyMode::marginal;

    static LossConfig for_regime(Regime r) {
        LossConfig c;
        switch (r) {
            case Regime::eft: c.reg_weight = 1.5; break;
            case Regime::ttt:
            case Regime::fft_lite_stage1: c.reg_weight = 1.0; break;
            case Regime::fft_lite_stage2:
                c.reg_weight = 1.0;
                c.apply_reg = false;
                break;
        }
        return c;
    }

    void validate() const {
        if (!(reg_weight >= 0.0) || !std::isfinite(reg_weight)) throw ConfigError("reg weight must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Eager versions

inline double log_sum_exp(std::span<const double> z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return mx + std::log(s);
}

// Mean over rows of -log softmax(logits)[label].
template <typename Label>
double adapt_loss(const Tensor& logits, std::span<const Label> labels) {
    require_matrix(logits, "adapt_loss logits");
    if (labels.size() != logits.rows()) throw DimensionError("adapt_loss: one label per row required");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        if (y >= logits.cols()) throw ContractError("label " + std::to_string(y) + " out of range");
        total += log_sum_exp(logits.row_span(r)) - logits(r, y);
    }
    return total / static_cast<double>(logits.rows());
}

inline double adapt_loss(const Tensor& logits, const std::vector<std::size_t>& labels) {
    return adapt_loss<std::size_t>(logits, std::span<const std::size_t>(labels));
}

// Entropy of softmax for each row.
inline std::vector<double> row_entropies(const Tensor& logits) {
    const Tensor p = softmax_lastdim(logits);
    std::vector<double> h(p.rows(), 0.0);
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (double v : p.row_span(r))
            if (v > 0.0) h[r] -= v * std::log(v);
    return h;
}

// Marginal: H(mean_r softmax(z_r)). Mean-per-sample: mean_r H(softmax(z_r)).
inline double ttt_entropy(const Tensor& logits, EntropyMode mode = EntropyMode::marginal) {
    require_matrix(logits, "ttt_entropy logits");
    if (logits.rows() == 0) throw DegenerateInputError("ttt_entropy of an empty sub-batch");
    if (mode == EntropyMode::mean_per_sample) {
        double s = 0.0;
        for (double h : row_entropies(logits)) s += h;
        return s / static_cast<double>(logits.rows());
    }
    const Tensor p = softmax_lastdim(logits);
    std::vector<double> avg(p.cols(), 0.0);
    for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t j = 0; j < p.cols(); ++j) avg[j] += p(r, j) / static_cast<double>(p.rows());
    double h = 0.0;
    for (double v : avg)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

// L2: mean (M-1)²; L1: mean |M-1|; Linf: max |M-1|.
inline double mask_reg(const Tensor& mask, RegNorm norm) {
    if (mask.empty()) return 0.0;
    double acc = 0.0;
    for (double m : mask.data()) {
        const double e = m - 1.0;
        switch (norm) {
            case RegNorm::l2: acc += e * e; break;
            case RegNorm::l1: acc += std::abs(e); break;
            case RegNorm::linf: acc = std::max(acc, std::abs(e)); break;
        }
    }
    return norm == RegNorm::linf ? acc : acc / static_cast<double>(mask.size());
}

struct LossParts {
    double main = 0.0;  // cross-entropy or entropy
    double reg = 0.0;   // mask regularizer (unweighted)
};

inline void check_regime_config(Regime regime, const LossConfig& cfg) {
    cfg.validate();
    if (regime == Regime::fft_lite_stage2 && cfg.apply_reg) {
        throw ContractError("the mask regularizer cannot be applied while the classifier is learnable");
    }
}

inline double total_loss(Regime regime, const LossConfig& cfg, const LossParts& parts) {
    check_regime_config(regime, cfg);
    if (!cfg.apply_reg) return parts.main;
    return parts.main + cfg.reg_weight * parts.reg;
}

// ---------------------------------------------------------------------------
// Tape versions

namespace ad {

inline Var adapt_loss(Var logits, std::vector<std::size_t> labels) { return cross_entropy(logits, std::move(labels)); }

// Σ -p log p over every entry, with 0·log 0 = 0.
inline Var neg_plogp_sum(Var p) {
    static constexpr double tiny = 1e-300;
    double h = 0.0;
    for (double v : p.value().data())
        if (v > 0.0) h -= v * std::log(v);
    return p.tape->record(Tensor({1}, h), {p}, [p](Tape& t, const Tensor& g) {
        Tensor d(p.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = -g[0] * (std::log(std::max(p.value()[i], tiny)) + 1.0);
        t.accumulate(p, std::move(d));
    });
}

inline Var ttt_entropy(Var logits, EntropyMode mode) {
    Var p = softmax_lastdim(logits);
    if (mode == EntropyMode::mean_per_sample) {
        return scale(neg_plogp_sum(p), 1.0 / static_cast<double>(logits.value().rows()));
    }
    return neg_plogp_sum(mean_rows(p));
}

inline Var mask_reg(Var mask, RegNorm norm) {
    Var dev = add_scalar(mask, -1.0);
    switch (norm) {
        case RegNorm::l2: return mean(mul(dev, dev));
        case RegNorm::l1: return mean(abs(dev));
        case RegNorm::linf: return max_all(abs(dev));
    }
    throw ConfigError("unknown regularizer norm");
}

// main + α·reg when the regime permits the regularizer.
inline Var total_loss(Regime regime, const LossConfig& cfg, Var main, Var mask) {
    check_regime_config(regime, cfg);
    if (!cfg.apply_reg || cfg.reg_weight == 0.0) return main;
    return add(main, scale(mask_reg(mask, cfg.reg_norm), cfg.reg_weight));
}

}  // namespace ad

}  // namespace rada
