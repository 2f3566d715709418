#pragma once

// Embedding containers, the RDA1 on-disk format, TSV fixture import, and
// the synthetic Gaussian-cluster generator used for desk-scale runs.
//
// RDA1 layout (all integers and floats little-endian):
//   "RDA1" | u8 kind (0 embeddings, 1 classes) | u8 version = 1 | u16 reserved = 0
//   u32 rows | u32 cols | rows*cols f64
//   kind 0: rows u32 labels | u8 split_tag | u8 normalized
//   kind 1: rows x (u16 length | UTF-8 bytes) | u8 learnable | u8 normalized
//   u32 CRC32 of every preceding byte

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rada/binary_io.hpp"
#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada {

enum class SplitTag : std::uint8_t { base_train = 0, base_test = 1, new_test = 2, ttt_stream = 3 };

inline const char* to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::base_train: return "base-train";
        case SplitTag::base_test: return "base-test";
        case SplitTag::new_test: return "new-test";
        case SplitTag::ttt_stream: return "ttt-stream";
    }
    return "unknown";
}

inline constexpr double kNormTolerance = 1e-9;

struct EmbeddingBatch {
    Tensor features;  // B x D
    std::vector<std::uint32_t> labels;
    bool normalized = false;
    SplitTag split = SplitTag::base_train;

    std::size_t size() const { return features.empty() ? 0 : features.rows(); }
    std::size_t dim() const { return features.empty() ? 0 : features.cols(); }

    void validate() const {
        require_matrix(features, "embedding features");
        if (labels.size() != features.rows()) {
            throw DimensionError("embedding batch has " + std::to_string(features.rows()) + " rows but " +
                                 std::to_string(labels.size()) + " labels");
        }
        if (normalized && !rows_unit_norm(features, kNormTolerance)) {
            throw ContractError("embedding batch is flagged normalized but has non-unit rows");
        }
    }

    void validate_against(std::size_t num_classes) const {
        validate();
        for (std::uint32_t y : labels)
            if (y >= num_classes) {
                throw ContractError("label " + std::to_string(y) + " out of range for " +
                                    std::to_string(num_classes) + " classes");
            }
    }
};

struct ClassMatrix {
    Tensor weights;  // K x D
    std::vector<std::string> class_names;
    bool learnable = false;
    bool normalized = false;

    std::size_t num_classes() const { return weights.empty() ? 0 : weights.rows(); }
    std::size_t dim() const { return weights.empty() ? 0 : weights.cols(); }

    void validate() const {
        require_matrix(weights, "class weights");
        if (weights.rows() < 2) throw DegenerateInputError("a class matrix needs at least 2 classes");
        if (class_names.size() != weights.rows()) throw DimensionError("one class name per row required");
        std::set<std::string> seen;
        for (const auto& n : class_names)
            if (!seen.insert(n).second) throw ContractError("duplicate class name '" + n + "'");
        if (normalized && !rows_unit_norm(weights, kNormTolerance)) {
            throw ContractError("class matrix is flagged normalized but has non-unit rows");
        }
    }
};

struct DatasetBundle {
    EmbeddingBatch base_train;
    EmbeddingBatch base_test;
    EmbeddingBatch new_test;
    ClassMatrix base_classes;
    ClassMatrix new_classes;
    std::optional<EmbeddingBatch> ttt_stream;  // labelled over base_classes

    void validate() const {
        base_classes.validate();
        new_classes.validate();
        base_train.validate_against(base_classes.num_classes());
        base_test.validate_against(base_classes.num_classes());
        new_test.validate_against(new_classes.num_classes());
        if (ttt_stream) ttt_stream->validate_against(base_classes.num_classes());
        std::set<std::string> base(base_classes.class_names.begin(), base_classes.class_names.end());
        for (const auto& n : new_classes.class_names)
            if (base.count(n)) throw ContractError("class '" + n + "' is in both base and new sets");
    }
};

inline EmbeddingBatch normalized(EmbeddingBatch batch) {
    if (!batch.normalized) {
        batch.features = l2_normalize_rows(batch.features);
        batch.normalized = true;
    }
    return batch;
}

inline ClassMatrix normalized(ClassMatrix classes) {
    if (!classes.normalized) {
        classes.weights = l2_normalize_rows(classes.weights);
        classes.normalized = true;
    }
    return classes;
}

// ---------------------------------------------------------------------------
// RDA1 encoding

namespace rda1 {

inline constexpr std::string_view kMagic = "RDA1";
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kKindEmbeddings = 0;
inline constexpr std::uint8_t kKindClasses = 1;

inline void write_header(bin::Writer& w, std::uint8_t kind, const Tensor& m) {
    w.bytes(kMagic);
    w.u8(kind);
    w.u8(kVersion);
    w.u16(0);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (double v : m.data()) w.f64(v);
}

struct Header {
    std::uint8_t kind;
    std::uint32_t rows;
    std::uint32_t cols;
};

inline Header read_header(bin::Reader& r) {
    if (r.remaining() < kMagic.size()) throw FormatError(FormatErrorKind::truncated, "file shorter than magic");
    if (r.bytes(kMagic.size()) != kMagic) throw FormatError(FormatErrorKind::bad_magic, "expected RDA1");
    Header h{};
    h.kind = r.u8();
    const std::uint8_t version = r.u8();
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::version_mismatch, "file version " + std::to_string(version) +
                                                                 ", reader supports " + std::to_string(kVersion));
    }
    r.u16();
    h.rows = r.u32();
    h.cols = r.u32();
    if (h.kind != kKindEmbeddings && h.kind != kKindClasses) {
        throw FormatError(FormatErrorKind::malformed, "unknown record kind " + std::to_string(h.kind));
    }
    return h;
}

inline Tensor read_matrix(bin::Reader& r, const Header& h) {
    const std::uint64_t n = std::uint64_t{h.rows} * h.cols;
    if (n * 8 > r.remaining()) throw FormatError(FormatErrorKind::truncated, "matrix payload is cut short");
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = r.f64();
    return Tensor({h.rows, h.cols}, std::move(data));
}

inline bool read_flag(bin::Reader& r, const char* what) {
    const std::uint8_t v = r.u8();
    if (v > 1) throw FormatError(FormatErrorKind::malformed, std::string(what) + " flag must be 0 or 1");
    return v == 1;
}

}  // namespace rda1

inline std::vector<std::uint8_t> encode(const EmbeddingBatch& batch) {
    if (batch.size() == 0) throw DegenerateInputError("refusing to save an embedding batch with zero rows");
    batch.validate();
    bin::Writer w;
    rda1::write_header(w, rda1::kKindEmbeddings, batch.features);
    for (std::uint32_t y : batch.labels) w.u32(y);
    w.u8(static_cast<std::uint8_t>(batch.split));
    w.u8(batch.normalized ? 1 : 0);
    w.seal();
    return w.buffer();
}

inline std::vector<std::uint8_t> encode(const ClassMatrix& classes) {
    if (classes.num_classes() == 0) throw DegenerateInputError("refusing to save a class matrix with zero rows");
    classes.validate();
    bin::Writer w;
    rda1::write_header(w, rda1::kKindClasses, classes.weights);
    for (const auto& name : classes.class_names) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("class name too long");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
    }
    w.u8(classes.learnable ? 1 : 0);
    w.u8(classes.normalized ? 1 : 0);
    w.seal();
    return w.buffer();
}

using Rda1Record = std::variant<EmbeddingBatch, ClassMatrix>;

inline Rda1Record decode(std::span<const std::uint8_t> bytes) {
    bin::Reader r(bytes);
    const rda1::Header h = rda1::read_header(r);
    Tensor m = rda1::read_matrix(r, h);
    if (h.kind == rda1::kKindEmbeddings) {
        EmbeddingBatch batch;
        batch.features = std::move(m);
        batch.labels.resize(h.rows);
        for (auto& y : batch.labels) y = r.u32();
        const std::uint8_t tag = r.u8();
        if (tag > static_cast<std::uint8_t>(SplitTag::ttt_stream)) {
            throw FormatError(FormatErrorKind::malformed, "unknown split tag " + std::to_string(tag));
        }
        batch.split = static_cast<SplitTag>(tag);
        batch.normalized = rda1::read_flag(r, "normalized");
        bin::check_trailer(r, bytes);
        return batch;
    }
    ClassMatrix classes;
    classes.weights = std::move(m);
    classes.class_names.reserve(h.rows);
    for (std::uint32_t i = 0; i < h.rows; ++i) {
        const std::uint16_t len = r.u16();
        classes.class_names.push_back(r.bytes(len));
    }
    classes.learnable = rda1::read_flag(r, "learnable");
    classes.normalized = rda1::read_flag(r, "normalized");
    bin::check_trailer(r, bytes);
    return classes;
}

inline EmbeddingBatch decode_embeddings(std::span<const std::uint8_t> bytes) {
    auto rec = decode(bytes);
    if (auto* b = std::get_if<EmbeddingBatch>(&rec)) return std::move(*b);
    throw FormatError(FormatErrorKind::wrong_kind, "expected an embedding record, found classes");
}

inline ClassMatrix decode_classes(std::span<const std::uint8_t> bytes) {
    auto rec = decode(bytes);
    if (auto* c = std::get_if<ClassMatrix>(&rec)) return std::move(*c);
    throw FormatError(FormatErrorKind::wrong_kind, "expected a class record, found embeddings");
}

inline void save(const EmbeddingBatch& batch, const std::filesystem::path& path) {
    bin::write_file(path, encode(batch));
}
inline void save(const ClassMatrix& classes, const std::filesystem::path& path) {
    bin::write_file(path, encode(classes));
}
inline Rda1Record load(const std::filesystem::path& path) { return decode(bin::read_file(path)); }
inline EmbeddingBatch load_embeddings(const std::filesystem::path& path) {
    return decode_embeddings(bin::read_file(path));
}
inline ClassMatrix load_classes(const std::filesystem::path& path) { return decode_classes(bin::read_file(path)); }

// Bundle directory: one RDA1 file per member.
inline void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    save(bundle.base_train, dir / "base_train.rda");
    save(bundle.base_test, dir / "base_test.rda");
    save(bundle.new_test, dir / "new_test.rda");
    save(bundle.base_classes, dir / "base_classes.rda");
    save(bundle.new_classes, dir / "new_classes.rda");
    if (bundle.ttt_stream) save(*bundle.ttt_stream, dir / "ttt_stream.rda");
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
    DatasetBundle b;
    b.base_train = load_embeddings(dir / "base_train.rda");
    b.base_test = load_embeddings(dir / "base_test.rda");
    b.new_test = load_embeddings(dir / "new_test.rda");
    b.base_classes = load_classes(dir / "base_classes.rda");
    b.new_classes = load_classes(dir / "new_classes.rda");
    if (std::filesystem::exists(dir / "ttt_stream.rda")) b.ttt_stream = load_embeddings(dir / "ttt_stream.rda");
    b.validate();
    return b;
}

// Plain-text import: first line "dim=D", then "label v1 ... vD" per line
// (tab- or space-separated). Blank lines and lines starting with '#' are skipped.
inline EmbeddingBatch parse_tsv(std::istream& in, SplitTag split = SplitTag::base_test) {
    std::string line;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("dim=", 0) != 0) throw ContractError("TSV header must be 'dim=D'");
        try {
            dim = std::stoul(line.substr(4));
        } catch (const std::exception&) {
            throw ContractError("bad TSV header '" + line + "'");
        }
        break;
    }
    if (dim == 0) throw ContractError("TSV is missing a positive dim= header");
    std::vector<double> values;
    std::vector<std::uint32_t> labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        long long label = -1;
        if (!(row >> label) || label < 0) {
            throw ContractError("TSV line " + std::to_string(lineno) + ": bad label");
        }
        labels.push_back(static_cast<std::uint32_t>(label));
        for (std::size_t j = 0; j < dim; ++j) {
            double v = 0.0;
            if (!(row >> v)) {
                throw ContractError("TSV line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                                    " values");
            }
            values.push_back(v);
        }
        std::string extra;
        if (row >> extra) throw ContractError("TSV line " + std::to_string(lineno) + ": too many values");
    }
    if (labels.empty()) throw DegenerateInputError("TSV has no embedding rows");
    EmbeddingBatch batch;
    batch.features = Tensor({labels.size(), dim}, std::move(values));
    batch.labels = std::move(labels);
    batch.split = split;
    return batch;
}

inline EmbeddingBatch load_tsv(const std::filesystem::path& path, SplitTag split = SplitTag::base_test) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse_tsv(in, split);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthOptions {
    std::size_t classes = 10;       // base classes K
    std::size_t new_classes = 0;    // 0 -> same as classes
    std::size_t dim = 32;
    std::size_t shots = 16;
    double sigma = 0.35;
    std::uint64_t seed = 0;
    std::size_t test_per_class = 50;
    std::size_t stream_size = 0;    // drifted TTT stream over base classes
    double stream_sigma = 0.0;      // 0 -> 1.5 * sigma
};

namespace detail {

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(d);
    for (double& x : v) x = n01(rng);
    return v;
}

inline void normalize_in_place(std::span<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    if (!(s > 0.0)) throw DegenerateInputError("cannot normalize a zero vector");
    for (double& x : v) x /= s;
}

inline Tensor unit_prototypes(std::mt19937_64& rng, std::size_t k, std::size_t d) {
    Tensor p({k, d});
    for (std::size_t i = 0; i < k; ++i) {
        auto g = gaussian_vector(rng, d);
        normalize_in_place(g);
        std::copy(g.begin(), g.end(), p.row_span(i).begin());
    }
    return p;
}

inline Tensor perturbed_rows(std::mt19937_64& rng, const Tensor& centers, double sigma) {
    Tensor out = centers;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto g = gaussian_vector(rng, out.cols());
        auto row = out.row_span(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += sigma * g[j];
        normalize_in_place(row);
    }
    return out;
}

inline EmbeddingBatch sample_clusters(std::mt19937_64& rng, const Tensor& prototypes, std::size_t per_class,
                                      double sigma, SplitTag split) {
    const std::size_t k = prototypes.rows(), d = prototypes.cols();
    EmbeddingBatch b;
    b.features = Tensor({k * per_class, d});
    b.labels.resize(k * per_class);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t r = c * per_class + s;
            auto g = gaussian_vector(rng, d);
            auto row = b.features.row_span(r);
            for (std::size_t j = 0; j < d; ++j) row[j] = prototypes(c, j) + sigma * g[j];
            normalize_in_place(row);
            b.labels[r] = static_cast<std::uint32_t>(c);
        }
    }
    b.normalized = true;
    b.split = split;
    return b;
}

inline std::vector<std::string> class_names(std::string_view prefix, std::size_t k) {
    std::vector<std::string> names;
    names.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::string idx = std::to_string(i);
        names.push_back(std::string(prefix) + std::string(idx.size() < 3 ? 3 - idx.size() : 0, '0') + idx);
    }
    return names;
}

}  // namespace detail

// Gaussian clusters around uniform unit prototypes. Class rows are the
// prototypes perturbed by sigma/2 (modality gap) and renormalized.
inline DatasetBundle synth_gaussian(const SynthOptions& opt) {
    const std::size_t k_new = opt.new_classes ? opt.new_classes : opt.classes;
    if (opt.classes > (std::size_t{1} << 16) || k_new > (std::size_t{1} << 16)) {
        throw ConfigError("synthetic class count exceeds 2^16");
    }
    if (opt.classes < 2 || k_new < 2) throw ConfigError("synthetic data needs at least 2 classes per split");
    if (opt.dim < 2) throw ConfigError("synthetic dim must be at least 2");
    if (opt.shots < 1) throw ConfigError("shots must be at least 1");
    if (opt.test_per_class < 1) throw ConfigError("test_per_class must be at least 1");
    if (!(opt.sigma > 0.0)) throw ConfigError("sigma must be positive");

    std::mt19937_64 rng(opt.seed);
    const Tensor base_proto = detail::unit_prototypes(rng, opt.classes, opt.dim);
    const Tensor new_proto = detail::unit_prototypes(rng, k_new, opt.dim);

    DatasetBundle b;
    b.base_classes.weights = detail::perturbed_rows(rng, base_proto, opt.sigma / 2.0);
    b.base_classes.class_names = detail::class_names("base_", opt.classes);
    b.base_classes.normalized = true;
    b.new_classes.weights = detail::perturbed_rows(rng, new_proto, opt.sigma / 2.0);
    b.new_classes.class_names = detail::class_names("new_", k_new);
    b.new_classes.normalized = true;

    b.base_train = detail::sample_clusters(rng, base_proto, opt.shots, opt.sigma, SplitTag::base_train);
    b.base_test = detail::sample_clusters(rng, base_proto, opt.test_per_class, opt.sigma, SplitTag::base_test);
    b.new_test = detail::sample_clusters(rng, new_proto, opt.test_per_class, opt.sigma, SplitTag::new_test);

    if (opt.stream_size > 0) {
        const double s = opt.stream_sigma > 0.0 ? opt.stream_sigma : 1.5 * opt.sigma;
        const std::size_t per = (opt.stream_size + opt.classes - 1) / opt.classes;
        EmbeddingBatch all = detail::sample_clusters(rng, base_proto, per, s, SplitTag::ttt_stream);
        // Interleave classes, then truncate to the requested size.
        EmbeddingBatch stream;
        stream.features = Tensor({opt.stream_size, opt.dim});
        stream.labels.resize(opt.stream_size);
        for (std::size_t r = 0; r < opt.stream_size; ++r) {
            const std::size_t c = r % opt.classes, s_idx = r / opt.classes;
            const std::size_t src = c * per + s_idx;
            std::copy(all.features.row_span(src).begin(), all.features.row_span(src).end(),
                      stream.features.row_span(r).begin());
            stream.labels[r] = all.labels[src];
        }
        stream.normalized = true;
        stream.split = SplitTag::ttt_stream;
        b.ttt_stream = std::move(stream);
    }
    return b;
}

struct ViewOptions {
    std::size_t n_views = 63;
    double jitter = 0.1;
    double drop_frac = 0.1;
    std::uint64_t seed = 0;
};

// Row 0 is the sample itself; rows 1..n_views are
// normalize(dropout(sample, drop_frac) + jitter * N(0, I)).
inline Tensor ttt_views(std::span<const double> sample, const ViewOptions& opt) {
    if (!(opt.drop_frac >= 0.0 && opt.drop_frac < 1.0)) throw ConfigError("drop_frac must be in [0, 1)");
    if (opt.jitter < 0.0) throw ConfigError("jitter must be nonnegative");
    const std::size_t d = sample.size();
    Tensor views({opt.n_views + 1, d});
    std::copy(sample.begin(), sample.end(), views.row_span(0).begin());
    std::mt19937_64 rng(opt.seed);
    std::bernoulli_distribution drop(opt.drop_frac);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - opt.drop_frac);
    for (std::size_t v = 1; v <= opt.n_views; ++v) {
        auto row = views.row_span(v);
        if (opt.jitter == 0.0 && opt.drop_frac == 0.0) {
            std::copy(sample.begin(), sample.end(), row.begin());
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double kept = (opt.drop_frac > 0.0 && drop(rng)) ? 0.0 : sample[j] * keep_scale;
            row[j] = kept + opt.jitter * n01(rng);
        }
        double s = 0.0;
        for (double x : row) s += x * x;
        if (s > 0.0) {
            for (double& x : row) x /= std::sqrt(s);
        } else {
            std::copy(sample.begin(), sample.end(), row.begin());
        }
    }
    return views;
}

}  // namespace rada
