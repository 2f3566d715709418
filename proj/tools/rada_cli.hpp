#pragma once

// Command-line front end. dispatch() is separate from main() so tests can
// drive every command in-process.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rada/rada.hpp"

namespace rada::cli {

enum ExitCode : int { kOk = 0, kContract = 1, kIo = 2 };

namespace detail {

namespace fs = std::filesystem;

inline void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) make_dir(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> v{"multi-query", "query-R", "query-hR", "query-fR", "mlp"};
    return v;
}

inline const std::vector<std::string>& norm_names() {
    static const std::vector<std::string> v{"L1", "L2", "Linf"};
    return v;
}

inline const EmbeddingBatch& pick_split(const DatasetBundle& b, const std::string& split) {
    if (split == "base-train") return b.base_train;
    if (split == "base-test") return b.base_test;
    if (split == "new-test") return b.new_test;
    if (split == "ttt-stream") {
        if (!b.ttt_stream) throw ContractError("bundle has no ttt_stream.rda");
        return *b.ttt_stream;
    }
    throw ConfigError("unknown split '" + split + "'");
}

inline const ClassMatrix& split_classes(const DatasetBundle& b, const std::string& split) {
    return split == "new-test" ? b.new_classes : b.base_classes;
}

struct AdapterFlags {
    std::string variant = "multi-query";
    std::size_t inner = 0;
    std::size_t layers = 1;
    std::string init;

    void add(CLI::App* app) {
        app->add_option("--variant", variant, "mask generator variant")
            ->check(CLI::IsMember(variant_names()));
        app->add_option("--inner", inner, "projection width d (0 means D)");
        app->add_option("--layers", layers, "stacked attention layers")->check(CLI::PositiveNumber);
        app->add_option("--init", init, "start from this RDAM checkpoint instead of zero-init");
    }

    AdapterParams build(std::size_t dim, std::uint64_t seed) const {
        if (!init.empty()) {
            AdapterParams p = load_adapter(init);
            if (p.dim != dim) throw DimensionError("checkpoint dim differs from bundle dim");
            return p;
        }
        return make_adapter({parse_variant(variant), dim, inner, layers, seed});
    }
};

struct TrainFlags {
    std::string bundle;
    std::string out;
    double lr = 0.0009;
    std::size_t epochs = 13;
    std::size_t batch = 1;
    double alpha = 1.5;
    std::string reg_norm = "L2";
    bool no_reg = false;
    std::string optimizer = "sgd-momentum";
    double momentum = 0.9;
    double weight_decay = 0.0;
    bool no_cosine = false;
    double logit_scale = kDefaultLogitScale;
    std::uint64_t seed = 0;
    AdapterFlags adapter;

    void add(CLI::App* app, bool single_stage) {
        app->add_option("--bundle", bundle, "bundle directory")->required();
        app->add_option("--out", out, "output directory")->required();
        if (single_stage) {
            app->add_option("--lr", lr, "learning rate");
            app->add_option("--epochs", epochs, "epochs");
        }
        app->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
        app->add_option("--alpha", alpha, "mask regularizer weight");
        app->add_option("--reg-norm", reg_norm, "mask regularizer norm")->check(CLI::IsMember(norm_names()));
        app->add_flag("--no-reg", no_reg, "drop the mask regularizer");
        app->add_option("--optimizer", optimizer, "optimizer")
            ->check(CLI::IsMember({"sgd-momentum", "adamw", "adam"}));
        app->add_option("--momentum", momentum, "SGD momentum");
        app->add_option("--weight-decay", weight_decay, "weight decay");
        app->add_flag("--no-cosine", no_cosine, "constant learning rate");
        app->add_option("--logit-scale", logit_scale, "logit scale")->check(CLI::PositiveNumber);
        app->add_option("--seed", seed, "random seed");
        adapter.add(app);
    }

    RunConfig config(RunConfig c, Regime regime) const {
        c.learning_rate = lr;
        c.epochs = epochs;
        c.batch_size = batch;
        c.optimizer = parse_optimizer(optimizer);
        c.momentum = momentum;
        c.weight_decay = weight_decay;
        c.cosine = !no_cosine;
        c.logit_scale = logit_scale;
        c.seed = seed;
        c.loss = LossConfig::for_regime(regime);
        c.loss.reg_weight = alpha;
        c.loss.reg_norm = parse_reg_norm(reg_norm);
        c.loss.apply_reg = !no_reg;
        return c;
    }
};

inline void finish_training(const TrainResult& res, const fs::path& out_dir, std::ostream& out) {
    make_dir(out_dir);
    {
        auto os = open_out(out_dir / "history.csv");
        write_history_csv(os, res.history);
    }
    save(res.params, out_dir / "adapter.rdam");
    if (res.classifier) save(*res.classifier, out_dir / "classifier.rda");
    auto os = open_out(out_dir / "report.txt");
    write_report(os, res.initial, "zero_shot_");
    write_report(os, res.final);
    write_report(out, res.initial, "zero_shot_");
    write_report(out, res.final);
}

}  // namespace detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Rational adaptation of vision-language classification heads", "rada"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", "rada 1.0.0");

    // gen-synth
    SynthOptions synth;
    std::string synth_out;
    auto* gen = app.add_subcommand("gen-synth", "write a synthetic Gaussian-cluster bundle");
    gen->add_option("--k", synth.classes, "base classes")->check(CLI::Range(2, 1 << 20));
    gen->add_option("--new-k", synth.new_classes, "new classes (0 means --k)");
    gen->add_option("--d", synth.dim, "embedding dim")->check(CLI::PositiveNumber);
    gen->add_option("--shots", synth.shots, "training shots per class")->check(CLI::PositiveNumber);
    gen->add_option("--sigma", synth.sigma, "cluster spread");
    gen->add_option("--test-per-class", synth.test_per_class, "test samples per class")->check(CLI::PositiveNumber);
    gen->add_option("--stream", synth.stream_size, "drifted TTT stream size (0 for none)");
    gen->add_option("--stream-sigma", synth.stream_sigma, "stream spread (0 means 1.5 x sigma)");
    gen->add_option("--seed", synth.seed, "random seed");
    gen->add_option("--out", synth_out, "bundle directory")->required();

    // train-eft
    detail::TrainFlags eft;
    auto* train_eft_cmd = app.add_subcommand("train-eft", "train the mask with frozen embeddings");
    eft.add(train_eft_cmd, true);

    // train-fft-lite
    detail::TrainFlags fft;
    fft.optimizer = "adamw";
    fft.weight_decay = 0.1;
    fft.alpha = 1.0;
    RunConfig fft_defaults = RunConfig::fft_lite_defaults();
    auto* train_fft_cmd = app.add_subcommand("train-fft-lite", "two-stage mask plus linear classifier training");
    train_fft_cmd->add_option("--lr1", fft_defaults.stage1_lr, "stage 1 learning rate");
    train_fft_cmd->add_option("--lr2", fft_defaults.stage2_lr, "stage 2 learning rate");
    train_fft_cmd->add_option("--epochs1", fft_defaults.stage1_epochs, "stage 1 epochs");
    train_fft_cmd->add_option("--epochs2", fft_defaults.stage2_epochs, "stage 2 epochs");
    fft.add(train_fft_cmd, false);

    // ttt
    TttConfig ttt_cfg;
    std::string ttt_bundle, ttt_checkpoint, ttt_split = "ttt-stream", ttt_log, ttt_rounding = "ceil";
    std::string ttt_norm = "L2", ttt_entropy = "marginal";
    detail::AdapterFlags ttt_adapter;
    auto* ttt_cmd = app.add_subcommand("ttt", "per-sample test-time training on one split");
    ttt_cmd->add_option("--bundle", ttt_bundle, "bundle directory")->required();
    ttt_cmd->add_option("--checkpoint", ttt_checkpoint, "starting RDAM checkpoint (default: zero-init)");
    ttt_cmd->add_option("--split", ttt_split, "split to adapt on")
        ->check(CLI::IsMember({"ttt-stream", "base-test", "new-test"}));
    ttt_cmd->add_option("--views", ttt_cfg.n_views, "augmented views per sample")->check(CLI::PositiveNumber);
    ttt_cmd->add_option("--jitter", ttt_cfg.jitter, "view jitter std");
    ttt_cmd->add_option("--drop", ttt_cfg.drop_frac, "fraction of coordinates dropped per view");
    ttt_cmd->add_option("--keep-frac", ttt_cfg.keep_frac, "fraction of confident views kept");
    ttt_cmd->add_option("--rounding", ttt_rounding, "rounding of the kept count")
        ->check(CLI::IsMember({"ceil", "floor"}));
    ttt_cmd->add_option("--steps", ttt_cfg.steps, "update steps per sample");
    ttt_cmd->add_option("--lr", ttt_cfg.lr, "Adam learning rate");
    ttt_cmd->add_option("--alpha", ttt_cfg.loss.reg_weight, "mask regularizer weight");
    ttt_cmd->add_option("--reg-norm", ttt_norm, "mask regularizer norm")->check(CLI::IsMember(detail::norm_names()));
    ttt_cmd->add_option("--entropy-mode", ttt_entropy, "entropy objective")
        ->check(CLI::IsMember({"marginal", "mean-per-sample"}));
    ttt_cmd->add_option("--logit-scale", ttt_cfg.logit_scale, "logit scale")->check(CLI::PositiveNumber);
    ttt_cmd->add_option("--seed", ttt_cfg.seed, "random seed");
    ttt_cmd->add_option("--log", ttt_log, "per-sample CSV log path");
    ttt_adapter.add(ttt_cmd);

    // eval
    std::string eval_bundle, eval_checkpoint, eval_classifier;
    double eval_scale = kDefaultLogitScale;
    auto* eval_cmd = app.add_subcommand("eval", "zero-shot or adapted accuracy on base/new test splits");
    eval_cmd->add_option("--bundle", eval_bundle, "bundle directory")->required();
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "RDAM checkpoint (default: zero-shot)");
    eval_cmd->add_option("--classifier", eval_classifier, "learned base classifier from train-fft-lite");
    eval_cmd->add_option("--logit-scale", eval_scale, "logit scale")->check(CLI::PositiveNumber);

    // gradcheck
    GradProblemOptions gp;
    std::string gc_regime = "eft", gc_variant = "multi-query", gc_norm = "L2", gc_entropy = "marginal";
    double gc_scale = kGradcheckLogitScale, gc_h = 1e-5, gc_tol = 1e-5;
    bool gc_raw = false;
    auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients against central differences");
    gc_cmd->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
    gc_cmd->add_option("--b", gp.batch, "batch size")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--k", gp.classes, "classes")->check(CLI::Range(2, 64));
    gc_cmd->add_option("--dim", gp.dim, "embedding dim")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--inner", gp.inner, "projection width")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--layers", gp.n_layers, "stacked attention layers")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--regime", gc_regime, "regime or all")
        ->check(CLI::IsMember({"eft", "ttt", "fft-lite-stage1", "fft-lite-stage2", "all"}));
    std::vector<std::string> variants_all = detail::variant_names();
    variants_all.push_back("all");
    gc_cmd->add_option("--variant", gc_variant, "variant or all")->check(CLI::IsMember(variants_all));
    std::vector<std::string> norms_all = detail::norm_names();
    norms_all.push_back("all");
    gc_cmd->add_option("--reg-norm", gc_norm, "regularizer norm or all")->check(CLI::IsMember(norms_all));
    gc_cmd->add_option("--entropy-mode", gc_entropy, "TTT entropy objective")
        ->check(CLI::IsMember({"marginal", "mean-per-sample"}));
    gc_cmd->add_option("--logit-scale", gc_scale, "logit scale")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--weight-range", gp.weight_range, "weights drawn from U(-r, r)");
    gc_cmd->add_option("--h", gc_h, "finite-difference step")->check(CLI::PositiveNumber);
    gc_cmd->add_option("--tol", gc_tol, "pass threshold on max relative error");
    gc_cmd->add_option("--seed", gp.seed, "first instance seed");
    gc_cmd->add_flag("--raw", gc_raw, "use the first draw even if some gradient is near zero");

    // mi-verify
    std::size_t mi_ensembles = 100;
    std::uint64_t mi_seed = 0;
    std::string mi_fixture = "none";
    info::Lemma23Options mi_opts;
    bool mi_verbose = false;
    auto* mi_cmd = app.add_subcommand("mi-verify", "brute-force check of the mutual-information lemmas");
    mi_cmd->add_option("--ensembles", mi_ensembles, "random ensembles to check");
    mi_cmd->add_option("--seed", mi_seed, "first ensemble seed");
    mi_cmd->add_option("--fixture", mi_fixture, "check a named fixture instead of random ensembles")
        ->check(CLI::IsMember({"none", "collision", "strict"}));
    mi_cmd->add_option("--budget", mi_opts.budget, "max mask assignments per exhaustive search");
    mi_cmd->add_flag("--verbose", mi_verbose, "print every lemma line");

    // mask-stats
    std::string ms_checkpoint, ms_bundle, ms_split = "base-test", ms_out = "mask_stats";
    std::size_t ms_bins = 64, ms_sample = 0;
    auto* ms_cmd = app.add_subcommand("mask-stats", "histogram of mask values plus one sample's M, R and M*R");
    ms_cmd->add_option("--checkpoint", ms_checkpoint, "RDAM checkpoint")->required();
    ms_cmd->add_option("--bundle", ms_bundle, "bundle directory")->required();
    ms_cmd->add_option("--split", ms_split, "evaluation split")
        ->check(CLI::IsMember({"base-train", "base-test", "new-test", "ttt-stream"}));
    ms_cmd->add_option("--bins", ms_bins, "uniform bins over the observed range")->check(CLI::PositiveNumber);
    ms_cmd->add_option("--sample", ms_sample, "row whose matrices are exported");
    ms_cmd->add_option("--out", ms_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return kOk;
        const auto used = app.get_subcommands();
        err << (used.empty() ? app.help() : used.front()->help());
        return kContract;
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        out << "# " << cmd->get_name() << '\n' << cmd->config_to_str(true, false);
        out << std::setprecision(10);

        if (cmd == gen) {
            const DatasetBundle b = synth_gaussian(synth);
            save_bundle(b, synth_out);
            out << "wrote " << synth_out << " base_train=" << b.base_train.size() << " base_test=" << b.base_test.size()
                << " new_test=" << b.new_test.size()
                << " ttt_stream=" << (b.ttt_stream ? b.ttt_stream->size() : 0) << '\n';
        } else if (cmd == train_eft_cmd) {
            const DatasetBundle b = load_bundle(eft.bundle);
            const RunConfig cfg = eft.config(RunConfig::eft_defaults(), Regime::eft);
            const TrainResult res = train_eft(b, eft.adapter.build(b.base_train.dim(), eft.seed), cfg);
            detail::finish_training(res, eft.out, out);
        } else if (cmd == train_fft_cmd) {
            const DatasetBundle b = load_bundle(fft.bundle);
            RunConfig cfg = fft.config(fft_defaults, Regime::fft_lite_stage1);
            cfg.regime = Regime::fft_lite_stage1;
            cfg.stage1_lr = fft_defaults.stage1_lr;
            cfg.stage2_lr = fft_defaults.stage2_lr;
            cfg.stage1_epochs = fft_defaults.stage1_epochs;
            cfg.stage2_epochs = fft_defaults.stage2_epochs;
            const TrainResult res = train_fft_lite(b, fft.adapter.build(b.base_train.dim(), fft.seed), cfg);
            detail::finish_training(res, fft.out, out);
        } else if (cmd == ttt_cmd) {
            const DatasetBundle b = load_bundle(ttt_bundle);
            ttt_cfg.rounding = ttt_rounding == "ceil" ? KeepRounding::ceil : KeepRounding::floor;
            ttt_cfg.loss.reg_norm = parse_reg_norm(ttt_norm);
            ttt_cfg.loss.entropy_mode = parse_entropy_mode(ttt_entropy);
            const EmbeddingBatch& stream = detail::pick_split(b, ttt_split);
            if (!ttt_checkpoint.empty()) ttt_adapter.init = ttt_checkpoint;
            const AdapterParams p0 = ttt_adapter.build(stream.dim(), ttt_cfg.seed);
            const TttReport rep = run_stream(stream, detail::split_classes(b, ttt_split), p0, ttt_cfg);
            if (!ttt_log.empty()) {
                auto os = detail::open_out(ttt_log);
                write_ttt_log_csv(os, rep);
            }
            out << "samples=" << rep.samples.size() << '\n'
                << "zero_shot_acc=" << rep.zero_shot_acc << '\n'
                << "adapted_acc=" << rep.adapted_acc << '\n'
                << "entropy_decreased=" << rep.entropy_decreased << '\n';
        } else if (cmd == eval_cmd) {
            const DatasetBundle b = load_bundle(eval_bundle);
            std::optional<AdapterParams> p;
            if (!eval_checkpoint.empty()) p = load_adapter(eval_checkpoint);
            std::optional<ClassMatrix> w;
            if (!eval_classifier.empty()) w = load_classes(eval_classifier);
            const EvalReport r = evaluate_bundle(b, p ? &*p : nullptr, eval_scale,
                                                 w ? &*w : nullptr);
            write_report(out, r);
        } else if (cmd == gc_cmd) {
            std::vector<Regime> regimes;
            if (gc_regime == "all") regimes.assign(std::begin(kAllRegimes), std::end(kAllRegimes));
            else regimes.push_back(parse_regime(gc_regime));
            std::vector<Variant> variants;
            if (gc_variant == "all") variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
            else variants.push_back(parse_variant(gc_variant));
            std::vector<RegNorm> norms;
            if (gc_norm == "all") norms.assign(std::begin(kAllRegNorms), std::end(kAllRegNorms));
            else norms.push_back(parse_reg_norm(gc_norm));

            double worst = 0.0;
            out << std::scientific << std::setprecision(3);
            for (Regime r : regimes)
                for (Variant v : variants)
                    for (RegNorm n : norms) {
                        LossConfig lc = LossConfig::for_regime(r);
                        lc.reg_norm = n;
                        lc.entropy_mode = parse_entropy_mode(gc_entropy);
                        GradProblemOptions o = gp;
                        o.variant = v;
                        GradProblem g = gc_raw ? make_grad_problem(o)
                                               : conditioned_problem(o, r, lc, gc_scale).problem;
                        const GradCheckReport rep = check_regime(g, r, lc, gc_scale, gc_h);
                        worst = std::max(worst, rep.max_rel_error);
                        out << "regime=" << to_string(r) << " variant=" << to_string(v) << " reg_norm=" << to_string(n)
                            << " coordinates=" << rep.coordinates << " max_rel_error=" << rep.max_rel_error << '\n';
                    }
            out << "max_rel_error=" << worst << '\n';
            const bool pass = worst < gc_tol;
            out << (pass ? "PASS" : "FAIL") << '\n';
            return pass ? kOk : kContract;
        } else if (cmd == mi_cmd) {
            std::vector<std::pair<std::string, info::DiscreteEnsemble>> cases;
            if (mi_fixture == "collision") cases.emplace_back("collision", info::lemma1_collision_fixture());
            else if (mi_fixture == "strict") cases.emplace_back("strict", info::lemma2_strict_fixture());
            else
                for (std::size_t i = 0; i < mi_ensembles; ++i)
                    cases.emplace_back("seed=" + std::to_string(mi_seed + i), info::random_ensemble(mi_seed + i));

            std::size_t failed = 0, partial = 0, strict = 0, collisions = 0;
            for (const auto& [name, ens] : cases) {
                info::LemmaReport l1 = info::verify_lemma1(ens, mi_opts.quantizer);
                info::LemmaReport l23 = info::verify_lemma23(ens, mi_opts);
                // Lemmas 2 and 3 build on R being sufficient; a collision voids that premise.
                const bool ok = l1.ok() && (l1.collision || l23.ok());
                failed += !ok;
                partial += l23.partial();
                collisions += l1.collision;
                for (const auto& l : l23.lines) strict += l.verdict == info::Verdict::holds;
                if (mi_verbose || !ok || cases.size() == 1) {
                    out << "ensemble " << name << " K=" << ens.classes() << " D=" << ens.dim()
                        << " support=" << ens.size() << '\n';
                    info::write_report(out, l1);
                    info::write_report(out, l23);
                }
            }
            out << "ensembles=" << cases.size() << " failed=" << failed << " partial=" << partial
                << " strict_lines=" << strict << " collisions=" << collisions << '\n';
            return failed == 0 ? kOk : kContract;
        } else if (cmd == ms_cmd) {
            const DatasetBundle b = load_bundle(ms_bundle);
            const AdapterParams p = load_adapter(ms_checkpoint);
            const EmbeddingBatch images = normalized(detail::pick_split(b, ms_split));
            const ClassMatrix h = normalized(detail::split_classes(b, ms_split));
            const std::vector<double> values = collect_mask_values(images, h, p);
            const MaskHistogram hist = histogram(values, ms_bins);
            const MaskStats s = summarize(values);
            if (ms_sample >= images.size()) throw ConfigError("--sample is past the end of the split");

            const detail::fs::path dir = ms_out;
            detail::make_dir(dir);
            {
                auto os = detail::open_out(dir / "histogram.csv");
                write_histogram_csv(os, hist);
            }
            const auto row = images.features.row_span(ms_sample);
            const Tensor m = sample_mask(p, row, h.weights);
            const Tensor r = rational_of(row, h.weights);
            Tensor mr = m;
            for (std::size_t i = 0; i < mr.size(); ++i) mr[i] *= r[i];
            for (const auto& [name, t] : {std::pair{"sample_M.csv", &m}, {"sample_R.csv", &r}, {"sample_MR.csv", &mr}}) {
                auto os = detail::open_out(dir / name);
                write_matrix_csv(os, *t);
            }
            out << "count=" << s.count << '\n'
                << "mean=" << s.mean << '\n'
                << "std=" << s.stddev << '\n'
                << "min=" << s.min << '\n'
                << "max=" << s.max << '\n'
                << "unimodal=" << (is_unimodal(hist) ? "yes" : "no") << '\n';
        }
        return kOk;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kContract;
    }
}

}  // namespace rada::cli
