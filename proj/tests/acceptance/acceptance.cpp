// One PASS/FAIL line per acceptance criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "rada/rada.hpp"

using namespace rada;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    if (!ok) ++failures;
    std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
}

Tensor random_unit_rows(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t({r, c});
    for (double& v : t.data()) v = u(rng);
    return l2_normalize_rows(t);
}

// ---------------------------------------------------------------------------

void reformulation_identity() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240);
    std::uniform_int_distribution<std::size_t> pick_b(1, 8), pick_k(2, 12), pick_d(2, 64);
    std::uniform_real_distribution<double> pick_s(0.1, 200.0);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t b = pick_b(rng), k = pick_k(rng), d = pick_d(rng);
        EmbeddingBatch img;
        img.features = random_unit_rows(rng, b, d);
        img.labels.assign(b, 0);
        img.normalized = true;
        ClassMatrix h;
        h.weights = random_unit_rows(rng, k, d);
        h.class_names = detail::class_names("c", k);
        h.normalized = true;
        const double s = pick_s(rng);
        const RationalTensor r = compute_rational(img, h);
        const Tensor a = masked_logits(r, ones_like(r), s);
        const Tensor z = zeroshot_logits(img, h, s);
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - z[i]));
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "instances=1000 max_abs_err=" << worst << " tol=1e-10 time=" << std::setprecision(3) << secs << "s";
    report(worst <= 1e-10 && secs < 5.0, "reformulation_identity", os.str());
}

void zero_init_neutrality() {
    const auto t0 = Clock::now();
    SynthOptions o;
    o.seed = 0;
    const DatasetBundle b = synth_gaussian(o);
    const EvalReport z = evaluate_bundle(b, nullptr);
    const SplitEval zn = evaluate(b.new_test, b.new_classes, nullptr);
    bool ones = true, same = true;
    for (Variant v : kAllVariants)
        for (std::size_t layers : {1u, 2u}) {
            if (v == Variant::mlp && layers > 1) continue;
            const AdapterParams p = make_adapter({v, o.dim, 0, layers, 1});
            for (std::size_t s = 0; s < b.base_test.size(); s += 25) {
                const Tensor m = sample_mask(p, b.base_test.features.row_span(s), b.base_classes.weights);
                ones = ones && std::all_of(m.data().begin(), m.data().end(), [](double x) { return x == 1.0; });
            }
            if (layers > 1) continue;
            const EvalReport a = evaluate_bundle(b, &p);
            same = same && a.base_acc == z.base_acc && a.new_acc == z.new_acc &&
                   a.per_class_base == z.per_class_base && a.per_class_new == z.per_class_new;
            if (v == Variant::multi_query)
                same = same && evaluate(b.new_test, b.new_classes, &p).predictions == zn.predictions;
        }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "mask_exactly_one=" << (ones ? "yes" : "no") << " step0_equals_zero_shot=" << (same ? "yes" : "no")
       << " time=" << std::setprecision(3) << secs << "s";
    report(ones && same && secs < 1.0, "zero_init_neutrality", os.str());
}

void gradient_suite() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t cases = 0;
    std::string worst_case;
    for (Regime r : kAllRegimes)
        for (RegNorm n : kAllRegNorms)
            for (Variant v : kAllVariants)
                for (std::size_t layers : {1u, 2u}) {
                    if (v == Variant::mlp && layers > 1) continue;
                    for (EntropyMode em : {EntropyMode::marginal, EntropyMode::mean_per_sample}) {
                        if (r != Regime::ttt && em != EntropyMode::marginal) continue;
                        LossConfig lc = LossConfig::for_regime(r);
                        lc.reg_norm = n;
                        lc.entropy_mode = em;
                        GradProblemOptions o;
                        o.variant = v;
                        o.n_layers = layers;
                        const ConditionedProblem c = conditioned_problem(o, r, lc, kGradcheckLogitScale);
                        const double e = check_regime(c.problem, r, lc, kGradcheckLogitScale).max_rel_error;
                        ++cases;
                        if (e > worst) {
                            worst = e;
                            worst_case = std::string(to_string(r)) + "/" + to_string(n) + "/" + to_string(v);
                        }
                    }
                }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "cases=" << cases << " max_rel_err=" << worst << " at " << worst_case << " tol=1e-5 time="
       << std::setprecision(3) << secs << "s";
    report(worst < 1e-5 && secs < 60.0, "gradient_suite", os.str());
}

// ---------------------------------------------------------------------------
// Synthetic training protocol shared by the EFT, ablation and mask criteria.

RunConfig protocol(std::uint64_t seed) {
    RunConfig c;
    c.optimizer = OptimizerKind::adamw;
    c.learning_rate = 0.003;
    c.logit_scale = 10.0;
    c.epochs = 13;
    c.seed = seed;
    return c;
}

DatasetBundle spec_bundle(std::uint64_t seed) {
    SynthOptions o;
    o.classes = 10;
    o.dim = 32;
    o.shots = 16;
    o.sigma = 0.35;
    o.seed = seed;
    return synth_gaussian(o);
}

struct SeedRuns {
    DatasetBundle bundle;
    std::map<Variant, TrainResult> runs;
    double eft_seconds = 0.0;
};

std::vector<SeedRuns> train_all() {
    std::vector<SeedRuns> out;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SeedRuns s;
        s.bundle = spec_bundle(seed);
        for (Variant v : kAllVariants) {
            const auto t0 = Clock::now();
            s.runs.emplace(v, train_eft(s.bundle, make_adapter({v, 32, 0, 1, seed}), protocol(seed)));
            if (v == Variant::multi_query) s.eft_seconds = seconds_since(t0);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void eft_gain(const std::vector<SeedRuns>& all) {
    bool ok = true;
    double secs = 0.0;
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    for (std::size_t seed = 0; seed < all.size(); ++seed) {
        const TrainResult& r = all[seed].runs.at(Variant::multi_query);
        const double gain = r.final.base_acc - r.initial.base_acc;
        const double drift = r.final.new_acc - r.initial.new_acc;
        ok = ok && gain >= 5.0 && std::abs(drift) <= 3.0;
        secs += all[seed].eft_seconds;
        os << " seed" << seed << "=base" << (gain >= 0 ? "+" : "") << gain << "/new" << (drift >= 0 ? "+" : "")
           << drift;
    }
    os << " need=base>=+5.0,|new|<=3.0 time=" << secs << "s";
    report(ok && secs < 120.0, "eft_base_gain", os.str().substr(1));
}

void ablation_ordering(const std::vector<SeedRuns>& all) {
    std::size_t mq_wins = 0, attn_wins = 0;
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    for (std::size_t seed = 0; seed < all.size(); ++seed) {
        const auto& runs = all[seed].runs;
        const double mq = runs.at(Variant::multi_query).final.harmonic_mean;
        const double mlp = runs.at(Variant::mlp).final.harmonic_mean;
        bool mq_best = true, attn_best = true;
        for (Variant v : {Variant::query_r, Variant::query_hr, Variant::query_fr}) {
            const double hm = runs.at(v).final.harmonic_mean;
            mq_best = mq_best && mq >= hm;
        }
        for (Variant v : {Variant::multi_query, Variant::query_r, Variant::query_hr, Variant::query_fr})
            attn_best = attn_best && runs.at(v).final.harmonic_mean > mlp;
        mq_wins += mq_best;
        attn_wins += attn_best;
        os << " seed" << seed << "=mq" << mq;
        for (Variant v : {Variant::query_r, Variant::query_hr, Variant::query_fr, Variant::mlp})
            os << '/' << to_string(v) << runs.at(v).final.harmonic_mean;
    }
    std::ostringstream head;
    head << "multi_query_best=" << mq_wins << "/5 attention_over_mlp=" << attn_wins << "/5 need=4/5,4/5";
    report(mq_wins >= 4 && attn_wins >= 4, "ablation_ordering", head.str() + os.str());
}

void mask_statistics(const std::vector<SeedRuns>& all) {
    bool ok = true;
    std::ostringstream os;
    os << std::setprecision(5);
    for (std::size_t seed = 0; seed < all.size(); ++seed) {
        const auto& s = all[seed];
        const auto v = collect_mask_values(s.bundle.base_test, s.bundle.base_classes,
                                           s.runs.at(Variant::multi_query).params);
        const MaskStats st = summarize(v);
        const bool uni = is_unimodal(histogram(v));
        ok = ok && std::abs(st.mean - 1.0) <= 0.05 && uni;
        os << " seed" << seed << "=mean" << st.mean << (uni ? "/unimodal" : "/multimodal");
    }
    report(ok, "mask_statistics", "band=[0.95,1.05]" + os.str());
}

// ---------------------------------------------------------------------------

struct StreamSetup {
    DatasetBundle bundle;
    AdapterParams params0;
    TttConfig cfg;
};

StreamSetup stream_setup() {
    SynthOptions o;
    o.seed = 7;
    o.stream_size = 200;
    StreamSetup s{synth_gaussian(o), make_adapter({Variant::multi_query, o.dim, 0, 1, 7}), {}};
    s.cfg.lr = 1e-4;
    return s;
}

void ttt_criteria() {
    const StreamSetup s = stream_setup();
    const EmbeddingBatch& stream = *s.bundle.ttt_stream;
    const std::uint32_t hash0 = fingerprint(s.params0);

    const auto t0 = Clock::now();
    const TttReport a = run_stream(stream, s.bundle.base_classes, s.params0, s.cfg);
    std::vector<std::size_t> perm(stream.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(99);
    std::shuffle(perm.begin(), perm.end(), rng);
    EmbeddingBatch shuffled = stream;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const auto src = stream.features.row_span(perm[i]);
        std::copy(src.begin(), src.end(), shuffled.features.row_span(i).begin());
        shuffled.labels[i] = stream.labels[perm[i]];
    }
    const TttReport b = run_stream(shuffled, s.bundle.base_classes, s.params0, s.cfg, perm);
    const double secs = seconds_since(t0);

    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto &x = a.samples[i], &y = b.samples[i];
        mismatched += x.sample_id != y.sample_id || x.adapted_pred != y.adapted_pred ||
                      x.zero_shot_pred != y.zero_shot_pred || x.entropy_final != y.entropy_final;
    }
    const bool hash_ok = fingerprint(s.params0) == hash0;
    std::ostringstream os;
    os << "samples=" << a.samples.size() << " mismatched=" << mismatched << " params0_hash=" << std::hex << hash0
       << std::dec << (hash_ok ? " unchanged" : " CHANGED") << " time=" << std::setprecision(3) << secs << "s";
    report(mismatched == 0 && hash_ok && secs < 60.0, "ttt_order_invariance", os.str());

    const double frac = static_cast<double>(a.entropy_decreased) / static_cast<double>(a.samples.size());
    std::ostringstream im;
    im << "zero_shot_acc=" << a.zero_shot_acc << " adapted_acc=" << a.adapted_acc
       << " entropy_decreased=" << a.entropy_decreased << "/" << a.samples.size() << " need>=90%";
    report(a.adapted_acc >= a.zero_shot_acc && frac >= 0.9, "ttt_improvement", im.str());
}

void lemma_suite() {
    const auto t0 = Clock::now();
    std::size_t l1_bad = 0, l23_bad = 0, eq_bad = 0, partial = 0, lines = 0;
    double worst_eq = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const info::DiscreteEnsemble e = info::random_ensemble(seed);
        const info::LemmaReport l1 = info::verify_lemma1(e);
        const auto& line = l1.lines.front();
        l1_bad += l1.collision || line.verdict != info::Verdict::equal || std::abs(line.lhs - line.rhs) > 1e-12;
        const info::LemmaReport l23 = info::verify_lemma23(e);
        partial += l23.partial();
        for (const auto& l : l23.lines) {
            ++lines;
            l23_bad += l.verdict == info::Verdict::violated;
            if (l.detail.find("constrained") != std::string::npos || l.detail.find("invertible") != std::string::npos) {
                worst_eq = std::max(worst_eq, std::abs(l.lhs - l.rhs));
                eq_bad += std::abs(l.lhs - l.rhs) > 1e-12;
            }
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "ensembles=100 lemma1_not_equal=" << l1_bad << " lemma23_lines=" << lines << " violated=" << l23_bad
       << " equality_cases_max_err=" << worst_eq << " partial=" << partial << " time=" << std::setprecision(3) << secs
       << "s";
    report(l1_bad == 0 && l23_bad == 0 && eq_bad == 0 && partial == 0 && secs < 120.0, "lemma_suite", os.str());
}

void format_round_trips() {
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    std::uniform_int_distribution<std::uint64_t> bits;
    std::size_t mismatches = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t r = std::max<std::size_t>(2, dim(rng)), c = dim(rng);
        Tensor w({r, c});
        for (double& v : w.data()) {
            // Arbitrary bit patterns, finite only.
            do {
                const std::uint64_t b = bits(rng);
                std::memcpy(&v, &b, sizeof v);
            } while (!std::isfinite(v));
        }
        std::vector<std::uint8_t> bytes, again;
        if (t % 2 == 0) {
            EmbeddingBatch e;
            e.features = w;
            for (std::size_t i = 0; i < r; ++i) e.labels.push_back(static_cast<std::uint32_t>(bits(rng) % 1000));
            e.split = static_cast<SplitTag>(bits(rng) % 4);
            bytes = encode(e);
            const EmbeddingBatch back = decode_embeddings(bytes);
            mismatches += std::memcmp(back.features.data().data(), w.data().data(), w.size() * sizeof(double)) != 0 ||
                          back.labels != e.labels;
            again = encode(back);
        } else {
            ClassMatrix cm;
            cm.weights = w;
            cm.class_names = detail::class_names("class_", r);
            bytes = encode(cm);
            const ClassMatrix back = decode_classes(bytes);
            mismatches += std::memcmp(back.weights.data().data(), w.data().data(), w.size() * sizeof(double)) != 0 ||
                          back.class_names != cm.class_names;
            again = encode(back);
        }
        mismatches += again != bytes;
    }

    SynthOptions o;
    o.classes = 3;
    o.dim = 4;
    o.test_per_class = 2;
    const auto good = encode(synth_gaussian(o).base_test);
    auto kind_of = [](const std::vector<std::uint8_t>& b) -> std::string {
        try {
            decode(b);
        } catch (const FormatError& e) {
            return to_string(e.kind());
        }
        return "accepted";
    };
    auto magic = good, version = good, truncated = good, crc = good;
    magic[0] ^= 0xFF;
    version[5] = 99;
    truncated.resize(good.size() / 2);
    crc[good.size() - 9] ^= 0x01;
    const std::string km = kind_of(magic), kv = kind_of(version), kt = kind_of(truncated), kc = kind_of(crc);
    const bool kinds_ok = km == to_string(FormatErrorKind::bad_magic) &&
                          kv == to_string(FormatErrorKind::version_mismatch) &&
                          kt == to_string(FormatErrorKind::truncated) &&
                          kc == to_string(FormatErrorKind::checksum_mismatch);
    std::ostringstream os;
    os << "round_trips=10000 mismatches=" << mismatches << " magic=" << km << " version=" << kv << " truncation=" << kt
       << " crc=" << kc;
    report(mismatches == 0 && kinds_ok, "format", os.str());
}

}  // namespace

int main() {
    std::cout << std::setprecision(6);
    const auto t0 = Clock::now();
    reformulation_identity();
    zero_init_neutrality();
    gradient_suite();
    {
        const auto runs = train_all();
        eft_gain(runs);
        ablation_ordering(runs);
        mask_statistics(runs);
    }
    ttt_criteria();
    lemma_suite();
    format_round_trips();
    std::cout << "summary: " << (10 - failures) << "/10 passed, total time " << std::setprecision(3)
              << seconds_since(t0) << "s" << std::endl;
    return failures == 0 ? 0 : 1;
}
