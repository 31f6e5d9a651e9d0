#include "kt/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kt/errors.hpp"
#include "kt/rng.hpp"

namespace kt::evalproto {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Gathers sequence pointers for a subject set, in the set's order.
dataio::SeqRefs gather(const dataio::SequenceCorpus& corpus, const std::vector<std::string>& subjects) {
    std::map<std::string, const dataio::StudentSequence*> by_subject;
    for (const auto& seq : corpus.sequences) by_subject[seq.subject_id] = &seq;
    dataio::SeqRefs refs;
    for (const auto& s : subjects) {
        auto it = by_subject.find(s);
        if (it != by_subject.end()) refs.push_back(it->second);
    }
    return refs;
}

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

}  // namespace

FoldPlan make_fold_plan(std::vector<std::string> subjects, std::uint64_t split_seed, std::uint64_t fold_seed) {
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    const auto n = subjects.size();
    if (n < 10) {
        throw ProtocolError("fold plan needs at least 10 subjects, got " + std::to_string(n));
    }

    FoldPlan plan;
    plan.split_seed = split_seed;
    plan.fold_seed = fold_seed;

    rng::RngStream split(rng::CounterRng::from_seed(split_seed).derive("split"));
    split.shuffle(subjects);
    const auto n_test = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n)));
    plan.test_subjects.assign(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::string> training(subjects.begin() + static_cast<std::ptrdiff_t>(n_test), subjects.end());

    rng::RngStream fold(rng::CounterRng::from_seed(fold_seed).derive("fold"));
    fold.shuffle(training);
    for (std::size_t i = 0; i < training.size(); ++i) {
        plan.folds[i % 5].push_back(training[i]);
    }
    for (const auto& f : plan.folds) {
        if (f.empty()) throw ProtocolError("too few subjects for 5 nonempty folds");
    }
    return plan;
}

std::string serialize_plan(const FoldPlan& plan) {
    nlohmann::json j;
    j["split_seed"] = plan.split_seed;
    j["fold_seed"] = plan.fold_seed;
    j["test_subjects"] = plan.test_subjects;
    for (std::size_t i = 0; i < plan.folds.size(); ++i) {
        j["folds"][i] = plan.folds[i];
    }
    return j.dump(2) + "\n";
}

std::string plan_hash(const FoldPlan& plan) { return rng::hex64(rng::fnv1a(serialize_plan(plan))); }

GridResult grid_search_fold0(const std::vector<HyperParams>& grid, const FoldPlan& plan,
                             const dataio::SequenceCorpus& corpus, const TrainFn& train_fn) {
    if (grid.empty()) throw ProtocolError("grid search over an empty grid");
    const auto val = gather(corpus, plan.folds[0]);
    std::vector<std::string> train_subjects;
    for (std::size_t f = 1; f < plan.folds.size(); ++f) {
        train_subjects.insert(train_subjects.end(), plan.folds[f].begin(), plan.folds[f].end());
    }
    const auto train = gather(corpus, train_subjects);

    GridResult result;
    bool found = false;
    double best = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto outcome = train_fn(grid[i], train, val, nullptr);
        result.log.push_back({grid[i], outcome});
        if (outcome.diverged) continue;
        if (!found || outcome.val_auc > best) {
            found = true;
            best = outcome.val_auc;
            result.best_index = i;
            result.theta_star = grid[i];
        }
    }
    if (!found) throw ProtocolError("grid search: every point diverged");
    return result;
}

MetricsReport run_cv(const HyperParams& theta, const FoldPlan& plan, const dataio::SequenceCorpus& corpus,
                     const TrainFn& train_fn, bool eval_test) {
    MetricsReport report;
    const auto test = gather(corpus, plan.test_subjects);
    std::vector<double> aucs;
    std::vector<double> test_aucs;
    for (int i = 0; i < 5; ++i) {
        const auto val = gather(corpus, plan.folds[static_cast<std::size_t>(i)]);
        std::vector<std::string> train_subjects;
        for (int f = 0; f < 5; ++f) {
            if (f == i) continue;
            const auto& fold = plan.folds[static_cast<std::size_t>(f)];
            train_subjects.insert(train_subjects.end(), fold.begin(), fold.end());
        }
        const auto train = gather(corpus, train_subjects);
        const auto outcome = train_fn(theta, train, val, eval_test ? &test : nullptr);

        FoldMetric metric;
        metric.fold = i;
        metric.failed = outcome.diverged;
        metric.val_auc = outcome.val_auc;
        metric.stop_epoch = outcome.best_epoch;
        metric.test_auc = outcome.test_auc;
        report.folds.push_back(metric);
        if (outcome.diverged) {
            report.any_failed = true;
            continue;
        }
        aucs.push_back(outcome.val_auc);
        if (eval_test && std::isfinite(outcome.test_auc)) test_aucs.push_back(outcome.test_auc);
    }
    if (aucs.empty()) throw ProtocolError("cross-validation: every fold diverged");
    report.mean_auc = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(aucs.size());
    report.std_auc = sample_std(aucs, report.mean_auc);
    if (!test_aucs.empty()) {
        report.mean_test_auc =
            std::accumulate(test_aucs.begin(), test_aucs.end(), 0.0) / static_cast<double>(test_aucs.size());
        report.std_test_auc = sample_std(test_aucs, report.mean_test_auc);
    }
    return report;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
    const auto n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw DataError("auc: labels must be 0/1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("auc undefined: needs both classes, got " + std::to_string(n_pos) + " positives of " +
                        std::to_string(n));
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks across ties, summed over positives.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);  // 1-based
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::string manifest_json(const RunManifest& m, const MetricsReport& metrics) {
    nlohmann::json j;
    j["assignment"] = m.assignment_id;
    j["variant"] = m.variant;
    j["axis"] = m.axis;
    j["w0"] = m.w0;
    j["xt"] = m.xt;
    j["l_max"] = m.l_max;
    j["align"] = m.align;
    j["theta"]["learning_rate"] = m.theta.learning_rate;
    j["theta"]["d_emb"] = m.theta.d_emb;
    j["theta"]["dropout"] = m.theta.dropout;
    j["theta_provenance"] = m.theta_provenance;
    j["seeds"]["split"] = m.split_seed;
    j["seeds"]["fold"] = m.fold_seed;
    j["seeds"]["init"] = m.init_seed;
    j["seeds"]["shuffle"] = m.shuffle_seed;
    j["corpus_hash"] = m.corpus_hash;
    j["source_hash"] = m.source_hash;
    j["truncation"] = m.truncation;
    j["software_version"] = m.software_version;
    for (std::size_t i = 0; i < metrics.folds.size(); ++i) {
        const auto& f = metrics.folds[i];
        nlohmann::json jf;
        jf["fold"] = f.fold;
        // Every fold record carries theta: the fixation rule is checkable
        // from the artifact alone.
        jf["theta"]["learning_rate"] = m.theta.learning_rate;
        jf["theta"]["d_emb"] = m.theta.d_emb;
        jf["theta"]["dropout"] = m.theta.dropout;
        jf["val_auc"] = f.val_auc;
        jf["stop_epoch"] = f.stop_epoch;
        jf["failed"] = f.failed;
        if (std::isfinite(f.test_auc)) jf["test_auc"] = f.test_auc;
        j["folds"][i] = jf;
    }
    j["metrics"]["mean_auc"] = metrics.mean_auc;
    j["metrics"]["std_auc"] = metrics.std_auc;
    if (std::isfinite(metrics.mean_test_auc)) {
        j["metrics"]["mean_test_auc"] = metrics.mean_test_auc;
        j["metrics"]["std_test_auc"] = metrics.std_test_auc;
    }
    j["metrics"]["any_failed"] = metrics.any_failed;
    return j.dump(2) + "\n";
}

void emit_report(const RunManifest& manifest, const MetricsReport& metrics, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create report directory " + out_dir + ": " + ec.message());

    dataio::write_file(out_dir + "/manifest.json", manifest_json(manifest, metrics));

    std::ostringstream folds;
    folds << "fold,val_auc,stop_epoch,failed,test_auc,theta_lr,theta_demb,theta_dropout\n";
    for (const auto& f : metrics.folds) {
        folds << f.fold << "," << fmt(f.val_auc) << "," << f.stop_epoch << "," << (f.failed ? 1 : 0) << ","
              << (std::isfinite(f.test_auc) ? fmt(f.test_auc) : "") << "," << fmt(manifest.theta.learning_rate)
              << "," << manifest.theta.d_emb << "," << fmt(manifest.theta.dropout) << "\n";
    }
    dataio::write_file(out_dir + "/folds.csv", folds.str());

    std::ostringstream summary;
    summary << "model,setting,assignment,l_max,mean_auc,std_auc,mean_test_auc\n";
    summary << manifest.variant << ","
            << "align=" << (manifest.align ? "on" : "off") << " axis=" << manifest.axis
            << " w0=" << (manifest.w0 ? "on" : "off") << "," << manifest.assignment_id << "," << manifest.l_max
            << "," << fmt(metrics.mean_auc) << "," << fmt(metrics.std_auc) << ","
            << (std::isfinite(metrics.mean_test_auc) ? fmt(metrics.mean_test_auc) : "") << "\n";
    dataio::write_file(out_dir + "/summary.csv", summary.str());
}

std::string delta_table_csv(const std::vector<SummaryRow>& rows) {
    if (rows.empty()) throw DataError("delta table needs at least one run");
    std::ostringstream out;
    out << "label,assignment,setting,mean_auc,std_auc,test_auc,delta_vs_baseline\n";
    const double base = rows[0].mean_auc;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << r.label << "," << r.assignment_id << "," << r.setting << "," << fmt(r.mean_auc) << ","
            << fmt(r.std_auc) << "," << (std::isfinite(r.test_auc) ? fmt(r.test_auc) : "") << ",";
        if (i == 0) {
            out << "baseline";
        } else {
            const double d = r.mean_auc - base;
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%+.4f", d);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

std::vector<HyperParams> build_grid(const std::vector<double>& lrs, const std::vector<int>& dembs,
                                    const std::vector<double>& dropouts) {
    if (lrs.empty() || dembs.empty() || dropouts.empty()) throw ProtocolError("empty grid dimension");
    std::vector<HyperParams> grid;
    for (int d : dembs) {
        for (double p : dropouts) {
            for (double lr : lrs) {
                HyperParams hp;
                hp.learning_rate = lr;
                hp.d_emb = d;
                hp.dropout = p;
                grid.push_back(hp);
            }
        }
    }
    return grid;
}

std::vector<HyperParams> default_grid(bool code_features, const HyperParams& base) {
    const std::vector<double> lrs{5e-5, 1e-4, 5e-4};
    if (!code_features) {
        return build_grid(lrs, {base.d_emb}, {base.dropout});
    }
    return build_grid(lrs, {50, 100, 150, 300, 350}, {0.1, 0.2, 0.3, 0.4, 0.5});
}

}  // namespace kt::evalproto
