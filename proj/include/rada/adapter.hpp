#pragma once

// Mask generator: a single attention layer across the class axis that turns
// a sample's rational matrix R (K x D) into a calibration mask M = M' + 1.
//
// Multi-query form, per sample:
//   Key = R W_k, Val = R W_v                               (K x d)
//   Q_f = repeat(f̄) W_f, Q_h = h̄ W_h, Q_R = R W_R           (K x d)
//   M'  = mean_q softmax(Q_q Keyᵀ / √d) Val · W_out         (K x D)
// W_out starts at zero, so a fresh adapter yields M ≡ 1 exactly.
//
// Query-subset variants drop terms from the mean. The MLP variant replaces
// attention with tanh(R W_1) W_2, acting on each class row independently.
// Stacked layers t = 1..n-1 query the running mask M^{t-1} against
// key/value R and add their own zero-initialized residual.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rada/autodiff.hpp"
#include "rada/binary_io.hpp"
#include "rada/embedio.hpp"
#include "rada/errors.hpp"
#include "rada/rational.hpp"
#include "rada/tensor.hpp"

namespace rada {

enum class Variant : std::uint8_t { multi_query = 0, query_r = 1, query_hr = 2, query_fr = 3, mlp = 4 };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::multi_query: return "multi-query";
        case Variant::query_r: return "query-R";
        case Variant::query_hr: return "query-hR";
        case Variant::query_fr: return "query-fR";
        case Variant::mlp: return "mlp";
    }
    return "unknown";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "multi-query") return Variant::multi_query;
    if (s == "query-R") return Variant::query_r;
    if (s == "query-hR") return Variant::query_hr;
    if (s == "query-fR") return Variant::query_fr;
    if (s == "mlp") return Variant::mlp;
    throw ConfigError("unknown adapter variant '" + std::string(s) + "'");
}

inline constexpr Variant kAllVariants[] = {Variant::multi_query, Variant::query_r, Variant::query_hr,
                                           Variant::query_fr, Variant::mlp};

struct AdapterConfig {
    Variant variant = Variant::multi_query;
    std::size_t dim = 32;    // D
    std::size_t inner = 0;   // d; 0 -> D
    std::size_t n_layers = 1;
    std::uint64_t seed = 0;
};

struct ParamSpec {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    bool zero_init;
};

// Fixed parameter order; also the on-disk order of RDAM checkpoints.
inline std::vector<ParamSpec> parameter_layout(Variant variant, std::size_t dim, std::size_t inner,
                                               std::size_t n_layers) {
    if (inner == 0) throw ConfigError("adapter inner width must be positive");
    if (dim == 0) throw ConfigError("adapter dim must be positive");
    if (n_layers == 0) throw ConfigError("adapter needs at least one layer");
    if (variant == Variant::mlp && n_layers != 1) throw ConfigError("the mlp variant does not stack layers");
    std::vector<ParamSpec> specs;
    auto proj = [&](std::string name) { specs.push_back({std::move(name), dim, inner, false}); };
    switch (variant) {
        case Variant::multi_query:
            proj("W_f");
            proj("W_h");
            proj("W_R");
            break;
        case Variant::query_r: proj("W_R"); break;
        case Variant::query_hr:
            proj("W_h");
            proj("W_R");
            break;
        case Variant::query_fr:
            proj("W_f");
            proj("W_R");
            break;
        case Variant::mlp:
            proj("W_1");
            specs.push_back({"W_2", inner, dim, true});
            return specs;
        default: throw ConfigError("unknown adapter variant");
    }
    proj("W_k");
    proj("W_v");
    specs.push_back({"W_out", inner, dim, true});
    for (std::size_t t = 1; t < n_layers; ++t) {
        const std::string s = std::to_string(t);
        proj("W_q" + s);
        proj("W_k" + s);
        proj("W_v" + s);
        specs.push_back({"W_out" + s, inner, dim, true});
    }
    return specs;
}

struct AdapterParams {
    Variant variant = Variant::multi_query;
    std::size_t dim = 0;
    std::size_t inner = 0;
    std::size_t n_layers = 1;
    std::vector<ParamSpec> layout;
    std::vector<Tensor> weights;  // parallel to layout

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < layout.size(); ++i)
            if (layout[i].name == name) return i;
        throw ContractError("adapter has no parameter '" + std::string(name) + "'");
    }
    bool has(std::string_view name) const {
        for (const auto& s : layout)
            if (s.name == name) return true;
        return false;
    }
    const Tensor& get(std::string_view name) const { return weights[index_of(name)]; }
    Tensor& get(std::string_view name) { return weights[index_of(name)]; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& w : weights)
            if (!rada::all_finite(w)) return false;
        return true;
    }
};

// Projectors ~ U(-1/√D, 1/√D); output projections are exactly zero.
inline AdapterParams make_adapter(const AdapterConfig& cfg) {
    AdapterParams p;
    p.variant = cfg.variant;
    p.dim = cfg.dim;
    p.inner = cfg.inner ? cfg.inner : cfg.dim;
    p.n_layers = cfg.n_layers;
    p.layout = parameter_layout(p.variant, p.dim, p.inner, p.n_layers);
    std::mt19937_64 rng(cfg.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (const auto& spec : p.layout) {
        Tensor w({spec.rows, spec.cols});
        if (!spec.zero_init)
            for (double& v : w.data()) v = u(rng);
        p.weights.push_back(std::move(w));
    }
    return p;
}

struct AttentionOptions {
    // Layer-0 key mask over classes: keep[j] == false hides class j's key/value.
    std::vector<bool> key_keep;
};

namespace ad {

// softmax(Q Keyᵀ / √d)
inline Var attention_weights(Var queries, Var keys, std::size_t inner, const std::vector<bool>* key_keep) {
    Var scores = scale(matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(inner)));
    if (key_keep && !key_keep->empty()) scores = mask_columns(scores, *key_keep);
    return softmax_lastdim(scores);
}

// Builds M (K x D) for one sample. `w` holds one Var per layout entry.
inline Var adapter_mask(const AdapterParams& p, const std::vector<Var>& w, Var f_row, Var classes, Var rational,
                        const AttentionOptions* opts = nullptr) {
    const std::size_t k = classes.value().rows();
    if (rational.value().cols() != p.dim || classes.value().cols() != p.dim || f_row.value().cols() != p.dim) {
        throw DimensionError("adapter dim " + std::to_string(p.dim) + " does not match inputs " +
                             shape_string(rational.value().shape()));
    }
    if (w.size() != p.layout.size()) throw ContractError("parameter list does not match adapter layout");
    auto W = [&](std::string_view name) { return w[p.index_of(name)]; };

    if (p.variant == Variant::mlp) {
        Var hidden = tanh(matmul(rational, W("W_1")));
        return add_scalar(matmul(hidden, W("W_2")), 1.0);
    }

    const std::vector<bool>* keep = opts ? &opts->key_keep : nullptr;
    Var keys = matmul(rational, W("W_k"));
    Var vals = matmul(rational, W("W_v"));
    std::vector<Var> outputs;
    auto attend = [&](Var input, std::string_view proj) {
        Var q = matmul(input, W(proj));
        outputs.push_back(matmul(attention_weights(q, keys, p.inner, keep), vals));
    };
    if (p.has("W_f")) attend(repeat_rows(f_row, k), "W_f");
    if (p.has("W_h")) attend(classes, "W_h");
    attend(rational, "W_R");
    Var mixed = outputs.front();
    for (std::size_t i = 1; i < outputs.size(); ++i) mixed = add(mixed, outputs[i]);
    if (outputs.size() > 1) mixed = scale(mixed, 1.0 / static_cast<double>(outputs.size()));
    Var mask = add_scalar(matmul(mixed, W("W_out")), 1.0);

    for (std::size_t t = 1; t < p.n_layers; ++t) {
        const std::string s = std::to_string(t);
        Var q = matmul(mask, W("W_q" + s));
        Var kt = matmul(rational, W("W_k" + s));
        Var vt = matmul(rational, W("W_v" + s));
        Var residual = matmul(matmul(attention_weights(q, kt, p.inner, nullptr), vt), W("W_out" + s));
        mask = add(mask, residual);
    }
    return mask;
}

inline std::vector<Var> parameter_leaves(Tape& tape, const AdapterParams& p, bool requires_grad) {
    std::vector<Var> vars;
    vars.reserve(p.weights.size());
    for (const Tensor& t : p.weights) vars.push_back(tape.leaf(t, requires_grad));
    return vars;
}

}  // namespace ad

struct MaskTensor {
    Tensor values;  // B x K x D
};

// Mask for one sample (K x D) without gradient tracking.
inline Tensor sample_mask(const AdapterParams& p, std::span<const double> image, const Tensor& classes,
                          const AttentionOptions* opts = nullptr) {
    Tape tape;
    auto w = ad::parameter_leaves(tape, p, false);
    Var f = tape.constant(Tensor::row(image));
    Var h = tape.constant(classes);
    Var r = tape.constant(rational_of(image, classes));
    return ad::adapter_mask(p, w, f, h, r, opts).value();
}

inline MaskTensor compute_mask(const AdapterParams& p, const EmbeddingBatch& images, const ClassMatrix& classes,
                               const RationalTensor& r) {
    detail::require_normalized(images, classes);
    if (images.dim() != p.dim) {
        throw DimensionError("adapter dim " + std::to_string(p.dim) + " differs from embedding dim " +
                             std::to_string(images.dim()));
    }
    if (r.batch() != images.size() || r.classes() != classes.num_classes() || r.dim() != p.dim) {
        throw DimensionError("rational tensor does not match images/classes");
    }
    const std::size_t b = images.size(), k = classes.num_classes(), d = p.dim;
    MaskTensor m{Tensor({b, k, d})};
    for (std::size_t n = 0; n < b; ++n) {
        Tape tape;
        auto w = ad::parameter_leaves(tape, p, false);
        Var f = tape.constant(Tensor::row(images.features.row_span(n)));
        Var h = tape.constant(classes.weights);
        Var rv = tape.constant(r.values.slice(n));
        const Tensor mk = ad::adapter_mask(p, w, f, h, rv).value();
        std::copy(mk.data().begin(), mk.data().end(), m.values.data().begin() + static_cast<std::ptrdiff_t>(n * k * d));
    }
    return m;
}

// ---------------------------------------------------------------------------
// RDAM checkpoints:
//   "RDAM" | u8 version | u8 variant | u8 n_layers | u32 D | u32 d
//   weights in parameter_layout order, f64 little-endian | u32 CRC32

namespace rdam {
inline constexpr std::string_view kMagic = "RDAM";
inline constexpr std::uint8_t kVersion = 1;
}  // namespace rdam

inline std::vector<std::uint8_t> encode(const AdapterParams& p) {
    bin::Writer w;
    w.bytes(rdam::kMagic);
    w.u8(rdam::kVersion);
    w.u8(static_cast<std::uint8_t>(p.variant));
    w.u8(static_cast<std::uint8_t>(p.n_layers));
    w.u32(static_cast<std::uint32_t>(p.dim));
    w.u32(static_cast<std::uint32_t>(p.inner));
    for (const auto& t : p.weights)
        for (double v : t.data()) w.f64(v);
    w.seal();
    return w.buffer();
}

inline AdapterParams decode_adapter(std::span<const std::uint8_t> bytes) {
    bin::Reader r(bytes);
    if (r.remaining() < rdam::kMagic.size()) throw FormatError(FormatErrorKind::truncated, "file shorter than magic");
    if (r.bytes(rdam::kMagic.size()) != rdam::kMagic) throw FormatError(FormatErrorKind::bad_magic, "expected RDAM");
    const std::uint8_t version = r.u8();
    if (version != rdam::kVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, "checkpoint version " + std::to_string(version));
    }
    const std::uint8_t variant = r.u8();
    if (variant > static_cast<std::uint8_t>(Variant::mlp)) {
        throw FormatError(FormatErrorKind::malformed, "unknown variant " + std::to_string(variant));
    }
    AdapterParams p;
    p.variant = static_cast<Variant>(variant);
    p.n_layers = r.u8();
    p.dim = r.u32();
    p.inner = r.u32();
    try {
        p.layout = parameter_layout(p.variant, p.dim, p.inner, p.n_layers);
    } catch (const ConfigError& e) {
        throw FormatError(FormatErrorKind::malformed, e.what());
    }
    for (const auto& spec : p.layout) {
        r.need(spec.rows * spec.cols * 8);
        Tensor t({spec.rows, spec.cols});
        for (double& v : t.data()) v = r.f64();
        p.weights.push_back(std::move(t));
    }
    bin::check_trailer(r, bytes);
    return p;
}

inline void save(const AdapterParams& p, const std::filesystem::path& path) { bin::write_file(path, encode(p)); }
inline AdapterParams load_adapter(const std::filesystem::path& path) { return decode_adapter(bin::read_file(path)); }

// CRC32 of the checkpoint payload; the sealed trailer is excluded because the
// CRC of a message followed by its own CRC is a constant.
inline std::uint32_t fingerprint(const AdapterParams& p) {
    const auto bytes = encode(p);
    return bin::crc32(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4));
}

}  // namespace rada
