#pragma once

// Exact mutual-information checks on small discrete ensembles of (f, Y)
// with a fixed class matrix h. Statistics are quantized with a fine
// uniform grid and MI is the plug-in value over the enumerated joint.
//
// Two readouts of a masked head are supported:
//   representation: the masked tensors themselves (R∘M, f∘M_f, h∘M_h)
//   decision:       the class scores they induce (Σ_j M_ij R_ij, ...)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rada/errors.hpp"
#include "rada/tensor.hpp"

namespace rada::info {

struct Quantizer {
    double lo = -64.0;
    double hi = 64.0;
    std::size_t bins = std::size_t{1} << 26;

    std::int64_t bucket(double v) const {
        if (!std::isfinite(v)) throw NumericError("cannot quantize a non-finite statistic");
        const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
        const double c = std::clamp(std::floor(t), 0.0, static_cast<double>(bins - 1));
        return static_cast<std::int64_t>(c);
    }
};

struct DiscreteEnsemble {
    std::vector<std::vector<double>> f;  // support points, each of length D
    std::vector<std::uint32_t> y;
    std::vector<double> p;
    Tensor h;  // K x D, fixed across the ensemble

    std::size_t size() const { return f.size(); }
    std::size_t dim() const { return h.cols(); }
    std::size_t classes() const { return h.rows(); }

    void validate() const {
        if (f.empty()) throw DegenerateInputError("ensemble support is empty");
        if (y.size() != f.size() || p.size() != f.size()) throw DimensionError("ensemble arrays differ in length");
        require_matrix(h, "ensemble h");
        if (h.cols() > 4 || h.rows() > 3 || f.size() > 32) {
            throw ConfigError("ensemble exceeds the brute-force limits (D <= 4, K <= 3, support <= 32)");
        }
        double total = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (f[i].size() != h.cols()) throw DimensionError("support point dim differs from h");
            if (!(p[i] >= 0.0)) throw ConfigError("probabilities must be nonnegative");
            total += p[i];
        }
        if (std::abs(total - 1.0) > 1e-12) throw ConfigError("probabilities must sum to 1");
    }
};

// Cell id of every support entry, numbered by first appearance.
using Partition = std::vector<std::size_t>;

namespace detail {

inline Partition partition_of_keys(const std::vector<std::vector<std::int64_t>>& keys) {
    Partition cells(keys.size());
    std::vector<std::size_t> reps;  // first support index of each cell
    for (std::size_t i = 0; i < keys.size(); ++i) {
        std::size_t c = 0;
        while (c < reps.size() && keys[reps[c]] != keys[i]) ++c;
        if (c == reps.size()) reps.push_back(i);
        cells[i] = c;
    }
    return cells;
}

}  // namespace detail

// Plug-in I(Y; T) in nats for the partition T induces on the support.
inline double mutual_information(const DiscreteEnsemble& ens, const Partition& cells) {
    if (ens.size() == 0) throw DegenerateInputError("ensemble support is empty");
    if (cells.size() != ens.size()) throw DimensionError("partition length differs from support size");
    const std::size_t n_cells = *std::max_element(cells.begin(), cells.end()) + 1;
    const std::size_t n_labels = *std::max_element(ens.y.begin(), ens.y.end()) + 1;
    std::vector<double> joint(n_cells * n_labels, 0.0), pt(n_cells, 0.0), py(n_labels, 0.0);
    for (std::size_t i = 0; i < ens.size(); ++i) {
        joint[cells[i] * n_labels + ens.y[i]] += ens.p[i];
        pt[cells[i]] += ens.p[i];
        py[ens.y[i]] += ens.p[i];
    }
    double mi = 0.0;
    for (std::size_t t = 0; t < n_cells; ++t)
        for (std::size_t l = 0; l < n_labels; ++l) {
            const double pj = joint[t * n_labels + l];
            if (pj > 0.0) mi += pj * std::log(pj / (pt[t] * py[l]));
        }
    return std::max(0.0, mi);
}

// I(A; B) of an explicit joint table p[a][b].
inline double mutual_information(const std::vector<std::vector<double>>& joint) {
    if (joint.empty() || joint.front().empty()) throw DegenerateInputError("empty joint table");
    const std::size_t na = joint.size(), nb = joint.front().size();
    std::vector<double> pa(na, 0.0), pb(nb, 0.0);
    for (std::size_t a = 0; a < na; ++a) {
        if (joint[a].size() != nb) throw DimensionError("ragged joint table");
        for (std::size_t b = 0; b < nb; ++b) {
            pa[a] += joint[a][b];
            pb[b] += joint[a][b];
        }
    }
    double mi = 0.0;
    for (std::size_t a = 0; a < na; ++a)
        for (std::size_t b = 0; b < nb; ++b)
            if (joint[a][b] > 0.0) mi += joint[a][b] * std::log(joint[a][b] / (pa[a] * pb[b]));
    return std::max(0.0, mi);
}

using Statistic = std::function<std::vector<double>(std::span<const double> f)>;

inline Partition partition_of(const DiscreteEnsemble& ens, const Statistic& stat, const Quantizer& q = {}) {
    std::vector<std::vector<std::int64_t>> keys(ens.size());
    for (std::size_t i = 0; i < ens.size(); ++i) {
        for (double v : stat(ens.f[i])) keys[i].push_back(q.bucket(v));
    }
    return detail::partition_of_keys(keys);
}

inline double mutual_information(const DiscreteEnsemble& ens, const Statistic& stat, const Quantizer& q = {}) {
    ens.validate();
    return mutual_information(ens, partition_of(ens, stat, q));
}

inline double label_entropy(const DiscreteEnsemble& ens) {
    return mutual_information(ens, Partition(ens.y.begin(), ens.y.end()));
}

// ---------------------------------------------------------------------------
// Masking schemes

enum class Readout : std::uint8_t { representation, decision };
enum class Scheme : std::uint8_t { full, image, text, joint };

inline const char* to_string(Readout r) { return r == Readout::representation ? "representation" : "decision"; }

inline const char* to_string(Scheme s) {
    switch (s) {
        case Scheme::full: return "full";
        case Scheme::image: return "image";
        case Scheme::text: return "text";
        case Scheme::joint: return "joint";
    }
    return "unknown";
}

// Statistic of one support point under a scheme. `mf` has D entries (image
// side); `mk` has K·D entries (the full mask, or the text-side mask).
inline void scheme_values(Readout readout, Scheme scheme, std::span<const double> f, const Tensor& h,
                          std::span<const double> mf, std::span<const double> mk, std::vector<double>& out) {
    const std::size_t k = h.rows(), d = h.cols();
    out.clear();
    auto fm = [&](std::size_t j) { return (scheme == Scheme::image || scheme == Scheme::joint) ? f[j] * mf[j] : f[j]; };
    auto hm = [&](std::size_t i, std::size_t j) {
        return (scheme == Scheme::text || scheme == Scheme::joint) ? h(i, j) * mk[i * d + j] : h(i, j);
    };
    if (readout == Readout::representation) {
        if (scheme == Scheme::full) {
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j) out.push_back(f[j] * h(i, j) * mk[i * d + j]);
        } else {
            // h (masked or not) is constant over the support, so f∘M_f alone fixes the partition.
            for (std::size_t j = 0; j < d; ++j) out.push_back(fm(j));
        }
        return;
    }
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            s += scheme == Scheme::full ? mk[i * d + j] * (f[j] * h(i, j)) : fm(j) * hm(i, j);
        }
        out.push_back(s);
    }
}

inline double scheme_mi(const DiscreteEnsemble& ens, Readout readout, Scheme scheme, std::span<const double> mf,
                        std::span<const double> mk, const Quantizer& q = {}) {
    std::vector<std::vector<std::int64_t>> keys(ens.size());
    std::vector<double> vals;
    for (std::size_t i = 0; i < ens.size(); ++i) {
        scheme_values(readout, scheme, ens.f[i], ens.h, mf, mk, vals);
        keys[i].reserve(vals.size());
        for (double v : vals) keys[i].push_back(q.bucket(v));
    }
    return mutual_information(ens, detail::partition_of_keys(keys));
}

inline const std::vector<double>& default_grid() {
    static const std::vector<double> g{0.5, 1.0, 2.0};
    return g;
}

// Pairwise products of the grid; every joint mask M_f ⊗ 1 ∘ M_h lies on it.
inline std::vector<double> product_grid(const std::vector<double>& g) {
    std::set<double> s;
    for (double a : g)
        for (double b : g) s.insert(a * b);
    return {s.begin(), s.end()};
}

namespace detail {

inline double grid_size(std::size_t levels, std::size_t entries) {
    return std::pow(static_cast<double>(levels), static_cast<double>(entries));
}

// Visits every assignment of `n` entries to grid values.
template <typename Visit>
void for_each_mask(const std::vector<double>& grid, std::size_t n, Visit&& visit) {
    std::vector<std::size_t> idx(n, 0);
    std::vector<double> m(n, grid.front());
    while (true) {
        visit(std::span<const double>(m));
        std::size_t pos = 0;
        while (pos < n && ++idx[pos] == grid.size()) {
            idx[pos] = 0;
            m[pos] = grid.front();
            ++pos;
        }
        if (pos == n) return;
        m[pos] = grid[idx[pos]];
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reports

enum class Verdict : std::uint8_t { holds, equal, violated };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::holds: return "holds";
        case Verdict::equal: return "equal";
        case Verdict::violated: return "violated";
    }
    return "unknown";
}

struct LemmaLine {
    int lemma = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    Verdict verdict = Verdict::equal;
    std::string detail;  // extra key=value fields
};

struct LemmaReport {
    std::vector<LemmaLine> lines;
    std::vector<std::string> skipped;  // checks not run because of the budget
    bool collision = false;            // Lemma 1: R merges support points that f separates

    bool partial() const { return !skipped.empty(); }
    bool ok() const {
        return std::none_of(lines.begin(), lines.end(), [](const LemmaLine& l) { return l.verdict == Verdict::violated; });
    }
};

inline std::string format_line(const LemmaLine& l) {
    std::ostringstream os;
    os << std::setprecision(17) << "lemma=" << l.lemma << " lhs=" << l.lhs << " rhs=" << l.rhs
       << " verdict=" << to_string(l.verdict);
    if (!l.detail.empty()) os << ' ' << l.detail;
    return os.str();
}

inline void write_report(std::ostream& os, const LemmaReport& r) {
    for (const auto& l : r.lines) os << format_line(l) << '\n';
    for (const auto& s : r.skipped) os << "skipped " << s << '\n';
}

inline constexpr double kMiTolerance = 1e-12;

// lhs >= rhs: equal within tolerance, holds when strictly larger.
inline Verdict compare_at_least(double lhs, double rhs, double tol = kMiTolerance) {
    if (std::abs(lhs - rhs) <= tol) return Verdict::equal;
    return lhs > rhs ? Verdict::holds : Verdict::violated;
}

// ---------------------------------------------------------------------------
// Lemma 1: with h fixed, R is as informative about Y as (f, h).

inline LemmaReport verify_lemma1(const DiscreteEnsemble& ens, const Quantizer& q = {}) {
    ens.validate();
    const Tensor& h = ens.h;
    const Partition by_r = partition_of(ens, [&](std::span<const double> f) {
        std::vector<double> v;
        for (std::size_t i = 0; i < h.rows(); ++i)
            for (std::size_t j = 0; j < h.cols(); ++j) v.push_back(f[j] * h(i, j));
        return v;
    }, q);
    const Partition by_fh = partition_of(ens, [&](std::span<const double> f) {
        std::vector<double> v(f.begin(), f.end());
        v.insert(v.end(), h.data().begin(), h.data().end());
        return v;
    }, q);
    LemmaReport rep;
    rep.collision = by_r != by_fh;
    LemmaLine l;
    l.lemma = 1;
    l.lhs = mutual_information(ens, by_r);
    l.rhs = mutual_information(ens, by_fh);
    if (std::abs(l.lhs - l.rhs) <= kMiTolerance) {
        l.verdict = Verdict::equal;
    } else {
        // Without a collision the two sides induce one partition and must agree.
        l.verdict = (rep.collision && l.lhs < l.rhs) ? Verdict::holds : Verdict::violated;
    }
    l.detail = rep.collision ? "collision=yes" : "collision=no";
    rep.lines.push_back(l);
    return rep;
}

// ---------------------------------------------------------------------------
// Lemmas 2 and 3: masking R is at least as informative as masking f, h or both.

struct Lemma23Options {
    std::vector<double> grid = default_grid();
    double budget = 1e6;  // max mask assignments per exhaustive search
    Quantizer quantizer;
    std::vector<Readout> readouts{Readout::representation, Readout::decision};
};

inline LemmaReport verify_lemma23(const DiscreteEnsemble& ens, const Lemma23Options& opt = {}) {
    ens.validate();
    if (opt.grid.empty()) throw ConfigError("mask grid is empty");
    const std::size_t k = ens.classes(), d = ens.dim();
    const std::vector<double> pgrid = product_grid(opt.grid);
    const std::vector<double> ones_d(d, 1.0), ones_kd(k * d, 1.0);
    const Quantizer& q = opt.quantizer;
    LemmaReport rep;

    const double n_full = detail::grid_size(opt.grid.size(), k * d);
    const double n_full_product = detail::grid_size(pgrid.size(), k * d);
    const double n_image = detail::grid_size(opt.grid.size(), d);
    const double n_joint = n_image * n_full;

    for (Readout ro : opt.readouts) {
        const std::string tag = std::string(" readout=") + to_string(ro);
        auto max_over = [&](Scheme s, const std::vector<double>& grid, std::size_t n) {
            double best = 0.0;
            detail::for_each_mask(grid, n, [&](std::span<const double> m) {
                const double v = s == Scheme::image ? scheme_mi(ens, ro, s, m, ones_kd, q)
                                                    : scheme_mi(ens, ro, s, ones_d, m, q);
                best = std::max(best, v);
            });
            return best;
        };

        double full_max = std::numeric_limits<double>::quiet_NaN();
        if (n_full <= opt.budget) {
            full_max = max_over(Scheme::full, opt.grid, k * d);
            for (Scheme s : {Scheme::image, Scheme::text}) {
                const std::size_t n = s == Scheme::image ? d : k * d;
                LemmaLine l;
                l.lemma = 2;
                l.lhs = full_max;
                l.rhs = max_over(s, opt.grid, n);
                l.verdict = compare_at_least(l.lhs, l.rhs);
                l.detail = std::string("scheme=") + to_string(s) + tag;
                rep.lines.push_back(l);
            }
        } else {
            rep.skipped.push_back("lemma=2" + tag + " masks=" + std::to_string(n_full));
        }

        // M = M_f ⊗ 1ᵀ must reproduce the image-side scheme exactly.
        if (n_image <= opt.budget) {
            LemmaLine l;
            l.lemma = 2;
            l.verdict = Verdict::equal;
            double worst = -1.0;
            detail::for_each_mask(opt.grid, d, [&](std::span<const double> mf) {
                std::vector<double> tiled(k * d);
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t j = 0; j < d; ++j) tiled[i * d + j] = mf[j];
                const double a = scheme_mi(ens, ro, Scheme::full, ones_d, tiled, q);
                const double b = scheme_mi(ens, ro, Scheme::image, mf, ones_kd, q);
                if (std::abs(a - b) > worst) {
                    worst = std::abs(a - b);
                    l.lhs = a;
                    l.rhs = b;
                }
            });
            if (worst > kMiTolerance) l.verdict = Verdict::violated;
            l.detail = "scheme=constrained" + tag;
            rep.lines.push_back(l);
        }

        if (n_full_product <= opt.budget && n_joint <= opt.budget) {
            LemmaLine l;
            l.lemma = 3;
            l.lhs = max_over(Scheme::full, pgrid, k * d);
            double best = 0.0;
            detail::for_each_mask(opt.grid, d, [&](std::span<const double> mf) {
                detail::for_each_mask(opt.grid, k * d, [&](std::span<const double> mh) {
                    best = std::max(best, scheme_mi(ens, ro, Scheme::joint, mf, mh, q));
                });
            });
            l.rhs = best;
            l.verdict = compare_at_least(l.lhs, l.rhs);
            l.detail = "scheme=joint" + tag;
            rep.lines.push_back(l);
        } else {
            rep.skipped.push_back("lemma=3" + tag + " masks=" + std::to_string(std::max(n_full_product, n_joint)));
        }

        // With an invertible M_h the joint representation carries exactly the
        // image-side information.
        if (ro == Readout::representation && n_joint <= opt.budget) {
            LemmaLine l;
            l.lemma = 3;
            l.verdict = Verdict::equal;
            double worst = -1.0;
            detail::for_each_mask(opt.grid, d, [&](std::span<const double> mf) {
                const double b = scheme_mi(ens, ro, Scheme::image, mf, ones_kd, q);
                detail::for_each_mask(opt.grid, k * d, [&](std::span<const double> mh) {
                    const double a = scheme_mi(ens, ro, Scheme::joint, mf, mh, q);
                    if (std::abs(a - b) > worst) {
                        worst = std::abs(a - b);
                        l.lhs = a;
                        l.rhs = b;
                    }
                });
            });
            if (worst > kMiTolerance) l.verdict = Verdict::violated;
            l.detail = "scheme=invertible-joint" + tag;
            rep.lines.push_back(l);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Ensembles

struct RandomEnsembleOptions {
    std::size_t min_support = 4;
    std::size_t max_support = 12;
    std::size_t max_cells = 6;  // K·D cap keeping the product-grid search small
};

// Integer-lattice ensemble: f ∈ {-2..2}^D (distinct), h ∈ {±1, ±2}^{K×D}.
// Lattice values keep every tie exact in floating point.
inline DiscreteEnsemble random_ensemble(std::uint64_t seed, const RandomEnsembleOptions& opt = {}) {
    std::mt19937_64 rng(seed);
    std::size_t k = 0, d = 0;
    do {
        k = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
        d = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
    } while (k * d > opt.max_cells);
    const std::size_t lattice = d == 2 ? 25 : 125;
    const std::size_t n = std::min(lattice, std::uniform_int_distribution<std::size_t>(opt.min_support, opt.max_support)(rng));

    DiscreteEnsemble e;
    e.h = Tensor({k, d});
    const double hvals[] = {-2.0, -1.0, 1.0, 2.0};
    std::uniform_int_distribution<int> pick_h(0, 3), pick_f(-2, 2);
    for (double& v : e.h.data()) v = hvals[pick_h(rng)];
    std::set<std::vector<double>> seen;
    while (e.f.size() < n) {
        std::vector<double> f(d);
        for (double& v : f) v = static_cast<double>(pick_f(rng));
        if (seen.insert(f).second) e.f.push_back(f);
    }
    std::uniform_int_distribution<std::uint32_t> pick_y(0, static_cast<std::uint32_t>(k - 1));
    std::uniform_real_distribution<double> w(0.5, 1.5);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e.y.push_back(pick_y(rng));
        e.p.push_back(w(rng));
        total += e.p.back();
    }
    for (double& p : e.p) p /= total;
    e.validate();
    return e;
}

inline DiscreteEnsemble uniform_ensemble(std::vector<std::vector<double>> f, std::vector<std::uint32_t> y, Tensor h) {
    DiscreteEnsemble e;
    e.p.assign(f.size(), 1.0 / static_cast<double>(f.size()));
    e.f = std::move(f);
    e.y = std::move(y);
    e.h = std::move(h);
    e.validate();
    return e;
}

// Two points that differ only where h has a zero column: R cannot tell them apart.
inline DiscreteEnsemble lemma1_collision_fixture() {
    return uniform_ensemble({{1.0, 1.0}, {1.0, -1.0}}, {0, 1}, Tensor::matrix({{1.0, 0.0}, {2.0, 0.0}}));
}

// h_2 = -h_1, so image-side scores are one linear functional a·f_1 + b·f_2.
// For each ratio a/b reachable on the grid a pair of differently labeled
// points lies on one level set; a full mask with two distinct row ratios
// separates every point.
inline DiscreteEnsemble lemma2_strict_fixture() {
    const std::vector<std::pair<double, double>> dirs{{1, -1}, {1, -2}, {2, -1}, {1, -4}, {4, -1}};
    std::vector<std::vector<double>> f;
    std::vector<std::uint32_t> y;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const double x0 = 5.0 * static_cast<double>(i);
        f.push_back({x0 / 32.0, 0.0});
        f.push_back({(x0 + dirs[i].first) / 32.0, dirs[i].second / 32.0});
        y.push_back(0);
        y.push_back(1);
    }
    return uniform_ensemble(std::move(f), std::move(y), Tensor::matrix({{1.0, 1.0}, {-1.0, -1.0}}));
}

}  // namespace rada::info
