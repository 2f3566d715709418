#pragma once

// Rational matrix R[b,i,j] = f̄_b[j] · h̄_i[j] and the two logit forms built
// on it: zero-shot cosine logits and mask-calibrated logits Σ_j M∘R.
// With M ≡ 1 the two forms coincide.

#include <cstddef>
#include <string>

#include "rada/autodiff.hpp"
#include "rada/embedio.hpp"
#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada {

inline constexpr double kDefaultLogitScale = 100.0;

struct RationalTensor {
    Tensor values;  // B x K x D
    bool source_normalized = true;

    std::size_t batch() const { return values.extent(0); }
    std::size_t classes() const { return values.extent(1); }
    std::size_t dim() const { return values.extent(2); }
};

namespace detail {

inline void require_normalized(const EmbeddingBatch& images, const ClassMatrix& classes) {
    if (!images.normalized || !rows_unit_norm(images.features, kNormTolerance)) {
        throw ContractError("image embeddings must be l2-normalized before computing rationals");
    }
    if (!classes.normalized || !rows_unit_norm(classes.weights, kNormTolerance)) {
        throw ContractError("class embeddings must be l2-normalized before computing rationals");
    }
    if (images.dim() != classes.dim()) {
        throw DimensionError("embedding dim " + std::to_string(images.dim()) + " differs from class dim " +
                             std::to_string(classes.dim()));
    }
}

inline void require_scale(double logit_scale) {
    if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
}

}  // namespace detail

inline RationalTensor compute_rational(const EmbeddingBatch& images, const ClassMatrix& classes) {
    detail::require_normalized(images, classes);
    const std::size_t b = images.size(), k = classes.num_classes(), d = images.dim();
    RationalTensor r{Tensor({b, k, d})};
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < d; ++j) r.values(n, i, j) = images.features(n, j) * classes.weights(i, j);
    return r;
}

// Rational matrix of a single sample: K x D.
inline Tensor rational_of(std::span<const double> image, const Tensor& classes) {
    Tensor r({classes.rows(), classes.cols()});
    for (std::size_t i = 0; i < classes.rows(); ++i)
        for (std::size_t j = 0; j < classes.cols(); ++j) r(i, j) = image[j] * classes(i, j);
    return r;
}

// logits[b,i] = scale · ⟨f̄_b, h̄_i⟩
inline Tensor zeroshot_logits(const EmbeddingBatch& images, const ClassMatrix& classes,
                              double logit_scale = kDefaultLogitScale) {
    detail::require_scale(logit_scale);
    detail::require_normalized(images, classes);
    Tensor logits = matmul(images.features, transpose(classes.weights));
    for (double& v : logits.data()) v *= logit_scale;
    return logits;
}

// logits[b,i] = scale · Σ_j M[b,i,j] · R[b,i,j]
inline Tensor masked_logits(const RationalTensor& r, const Tensor& mask, double logit_scale = kDefaultLogitScale) {
    detail::require_scale(logit_scale);
    if (mask.shape() != r.values.shape()) {
        throw DimensionError("mask shape " + shape_string(mask.shape()) + " differs from rational shape " +
                             shape_string(r.values.shape()));
    }
    const std::size_t b = r.batch(), k = r.classes(), d = r.dim();
    Tensor logits({b, k});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += mask(n, i, j) * r.values(n, i, j);
            logits(n, i) = logit_scale * s;
        }
    return logits;
}

inline Tensor ones_like(const RationalTensor& r) { return Tensor(r.values.shape(), 1.0); }

namespace ad {

// f_row: 1 x D, classes: K x D  ->  K x D rational matrix.
inline Var rational(Var f_row, Var classes) { return mul(repeat_rows(f_row, classes.value().rows()), classes); }

// mask, rational: K x D  ->  1 x K logits.
inline Var masked_logits(Var mask, Var rational, double logit_scale) {
    return scale(row_sums(mul(mask, rational)), logit_scale);
}

}  // namespace ad

}  // namespace rada
