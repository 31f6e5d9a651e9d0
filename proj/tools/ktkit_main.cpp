#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kt/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::optional<int> lmax;
    std::optional<std::string> align;
    std::optional<std::string> axis;
    std::optional<std::string> w0;
    std::optional<std::string> variant;
    std::optional<std::uint64_t> seed_split;
    std::optional<std::uint64_t> seed_fold;
    std::optional<std::uint64_t> seed_init;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "configuration file (key = value with [sections])");
    sub->add_option("--out", args.out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", args.overrides, "override a config entry as section.key=value")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option("--lmax", args.lmax, "maximum sequence length (50 or 100 in the standard settings)");
    sub->add_option("--align", args.align, "chronological alignment: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--axis", args.axis, "attention normalization axis: path|time")
        ->check(CLI::IsMember({"path", "time"}));
    sub->add_option("--w0", args.w0, "enable the per-path projection: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    sub->add_option("--variant", args.variant, "model variant: dkt|codedkt|eckt")
        ->check(CLI::IsMember({"dkt", "codedkt", "eckt"}));
    sub->add_option("--seed-split", args.seed_split, "train/test split seed");
    sub->add_option("--seed-fold", args.seed_fold, "fold partition seed");
    sub->add_option("--seed-init", args.seed_init, "model initialization seed");
}

kt::config::Config materialize(const CommonArgs& args) {
    auto cfg = args.config_path.empty() ? kt::config::Config{}
                                        : kt::config::Config::from_file(args.config_path);
    for (const auto& o : args.overrides) cfg.set_override(o);
    if (args.lmax) cfg.set("data", "lmax", std::to_string(*args.lmax));
    if (args.align) cfg.set("data", "align", *args.align);
    if (args.axis) cfg.set("model", "axis", *args.axis);
    if (args.w0) cfg.set("model", "w0", *args.w0);
    if (args.variant) cfg.set("model", "variant", *args.variant);
    if (args.seed_split) cfg.set("protocol", "seed_split", std::to_string(*args.seed_split));
    if (args.seed_fold) cfg.set("protocol", "seed_fold", std::to_string(*args.seed_fold));
    if (args.seed_init) cfg.set("train", "seed_init", std::to_string(*args.seed_init));
    kt::pipeline::validate_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ktkit: knowledge-tracing models under a causally valid, seeded evaluation protocol"};
    app.require_subcommand(1);

    CommonArgs gen_args, ingest_args, audit_args, stats_args, train_args, grid_args, cv_args, probe_args;
    std::string report_out = "out";

    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus with known ground truth");
    add_common(gen, gen_args);

    auto* ingest = app.add_subcommand("ingest", "parse, align and cache training sequences");
    add_common(ingest, ingest_args);

    auto* audit = app.add_subcommand("audit", "check a main table for storage-order/timestamp violations");
    add_common(audit, audit_args);

    auto* stats = app.add_subcommand("stats", "per-assignment sequence-length percentile table");
    add_common(stats, stats_args);
    double stats_p = 0.95;
    stats->add_option("--p", stats_p, "percentile fraction")->capture_default_str();

    auto* train = app.add_subcommand("train", "single training run (folds 1-4 train, fold 0 validates)");
    add_common(train, train_args);

    auto* grid = app.add_subcommand("grid", "hyperparameter grid search confined to fold 0");
    add_common(grid, grid_args);

    auto* cv = app.add_subcommand("cv", "five-fold cross-validation with a fixed theta*");
    add_common(cv, cv_args);
    std::string theta_file;
    std::optional<double> theta_lr, theta_dropout;
    std::optional<int> theta_demb;
    cv->add_option("--theta", theta_file, "theta* file produced by `grid`");
    cv->add_option("--theta-lr", theta_lr, "explicit theta*: learning rate");
    cv->add_option("--theta-demb", theta_demb, "explicit theta*: embedding size");
    cv->add_option("--theta-dropout", theta_dropout, "explicit theta*: dropout");

    auto* probe = app.add_subcommand("probe", "future-perturbation probe of a trained checkpoint");
    add_common(probe, probe_args);
    kt::pipeline::ProbeRequest probe_req;
    probe->add_option("--checkpoint", probe_req.checkpoint_path, "model checkpoint file")->required();
    probe->add_option("--subject", probe_req.subject, "subject id (default: longest sequence)");
    probe->add_option("--tstar", probe_req.t_star, "cut point t* (default: midpoint)");
    probe->add_option("--trials", probe_req.n_trials, "perturbation trials")->capture_default_str();
    probe->add_option("--seed-probe", probe_req.seed, "probe RNG seed")->capture_default_str();

    auto* report = app.add_subcommand("report", "combine cv runs into a delta table (first = baseline)");
    std::vector<std::string> report_dirs;
    report->add_option("--out", report_out, "output directory")->capture_default_str();
    report->add_option("runs", report_dirs, "run directories (each containing cv/manifest.json)")
        ->required()
        ->expected(-1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            const auto cfg = materialize(gen_args);
            const auto dir = kt::pipeline::run_gen(cfg, gen_args.out_dir);
            std::cout << "corpus written to " << dir << "\n";
        } else if (ingest->parsed()) {
            const auto cfg = materialize(ingest_args);
            const auto out = kt::pipeline::run_ingest(cfg, ingest_args.out_dir);
            std::cout << "cached " << out.n_sequences << " sequences (Q=" << out.n_problems << ") to "
                      << out.cache_path << "\n"
                      << "corpus hash " << out.corpus_hash << "\n";
        } else if (audit->parsed()) {
            const auto cfg = materialize(audit_args);
            const auto rep = kt::pipeline::run_audit(cfg, audit_args.out_dir);
            std::cout << "records: " << rep.total_records << ", violations: " << rep.total_violations
                      << ", verdict: "
                      << (rep.verdict == kt::probes::AuditVerdict::aligned ? "ALIGNED" : "MISALIGNED")
                      << "\n";
        } else if (stats->parsed()) {
            const auto cfg = materialize(stats_args);
            const auto rows = kt::pipeline::run_stats(cfg, stats_args.out_dir, stats_p);
            std::printf("%-16s %10s %12s\n", "assignment", "students", "p-length");
            for (const auto& row : rows) {
                std::printf("%-16s %10d %12d\n", row.assignment_id.c_str(), row.n_students,
                            row.percentile_length);
            }
        } else if (train->parsed()) {
            const auto cfg = materialize(train_args);
            const auto out = kt::pipeline::run_train(cfg, train_args.out_dir);
            std::cout << "val_auc " << out.val_auc << " test_auc " << out.test_auc << " best_epoch "
                      << out.best_epoch << "/" << out.epochs_run << " (" << out.stopped_reason << ")\n"
                      << "checkpoint " << out.checkpoint_path << "\n";
        } else if (grid->parsed()) {
            const auto cfg = materialize(grid_args);
            const auto out = kt::pipeline::run_grid(cfg, grid_args.out_dir);
            std::cout << "theta*: lr=" << out.theta_star.learning_rate << " d_emb=" << out.theta_star.d_emb
                      << " dropout=" << out.theta_star.dropout << " (point " << out.best_index << " of "
                      << out.n_points << ")\n"
                      << "written to " << out.theta_path << "\n";
        } else if (cv->parsed()) {
            const auto cfg = materialize(cv_args);
            std::optional<kt::evalproto::HyperParams> explicit_theta;
            if (theta_lr || theta_demb || theta_dropout) {
                if (!theta_lr) throw kt::UsageError("explicit theta* needs --theta-lr");
                kt::evalproto::HyperParams hp;
                hp.learning_rate = *theta_lr;
                hp.d_emb = theta_demb.value_or(hp.d_emb);
                hp.dropout = theta_dropout.value_or(hp.dropout);
                explicit_theta = hp;
            }
            const auto theta = kt::pipeline::resolve_theta(theta_file, explicit_theta, cv_args.out_dir);
            const auto out = kt::pipeline::run_cv(cfg, cv_args.out_dir, theta);
            std::cout << "cv mean_auc " << out.metrics.mean_auc << " +/- " << out.metrics.std_auc;
            if (std::isfinite(out.metrics.mean_test_auc)) {
                std::cout << " (test " << out.metrics.mean_test_auc << ")";
            }
            std::cout << "\nreport under " << cv_args.out_dir << "/cv\n";
        } else if (probe->parsed()) {
            const auto cfg = materialize(probe_args);
            const auto rep = kt::pipeline::run_probe(cfg, probe_args.out_dir, probe_req);
            std::cout << "t*=" << rep.cut_point << " trials=" << rep.n_trials << " max_prefix_delta="
                      << rep.max_prefix_delta << " verdict="
                      << (rep.verdict == kt::probes::ProbeVerdict::causal ? "CAUSAL" : "LEAKY") << "\n";
        } else if (report->parsed()) {
            const auto path = kt::pipeline::run_report(report_dirs, report_out);
            std::cout << "delta table written to " << path << "\n";
        }
        return 0;
    } catch (const kt::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const kt::ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
