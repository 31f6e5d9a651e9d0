#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "kt/evalproto.hpp"
#include "kt/rng.hpp"

using namespace kt;
using evalproto::FoldPlan;
using evalproto::HyperParams;

namespace {

// O(n^2) pair-counting oracle: P(score_pos > score_neg) + 0.5 P(tie).
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

std::vector<std::string> subjects_n(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
    return out;
}

dataio::SequenceCorpus corpus_for(const FoldPlan& plan) {
    dataio::SequenceCorpus corpus;
    corpus.assignment_id = "A";
    corpus.n_problems = 2;
    auto add = [&](const std::string& subject) {
        dataio::StudentSequence seq;
        seq.subject_id = subject;
        seq.assignment_id = "A";
        seq.n_problems = 2;
        for (int t = 0; t < 3; ++t) {
            dataio::SequenceStep step;
            step.problem_index = t % 2;
            step.correct = t % 2;
            step.timestamp_ms = 1000 * (t + 1);
            seq.steps.push_back(step);
        }
        corpus.sequences.push_back(std::move(seq));
    };
    for (const auto& s : plan.test_subjects) add(s);
    for (const auto& f : plan.folds) {
        for (const auto& s : f) add(s);
    }
    return corpus;
}

}  // namespace

TEST_CASE("make_fold_plan: 100 subjects split 20/16x5") {
    const auto plan = evalproto::make_fold_plan(subjects_n(100), 1, 2);
    CHECK(plan.test_subjects.size() == 20);
    for (const auto& fold : plan.folds) CHECK(fold.size() == 16);
    CHECK(evalproto::plan_hash(plan) == evalproto::plan_hash(evalproto::make_fold_plan(subjects_n(100), 1, 2)));
    CHECK(evalproto::plan_hash(plan) != evalproto::plan_hash(evalproto::make_fold_plan(subjects_n(100), 1, 3)));
    CHECK(evalproto::plan_hash(plan) != evalproto::plan_hash(evalproto::make_fold_plan(subjects_n(100), 2, 2)));
}

TEST_CASE("make_fold_plan: 83 subjects, rounding and round-robin remainders") {
    const auto plan = evalproto::make_fold_plan(subjects_n(83), 7, 8);
    CHECK(plan.test_subjects.size() == 17);  // round(0.2 * 83)

    // Oracle: brute-force enumeration of the stated partition rule.
    const std::size_t n_train = 83 - 17;
    std::array<std::size_t, 5> expected_sizes{};
    for (std::size_t i = 0; i < n_train; ++i) expected_sizes[i % 5] += 1;
    for (std::size_t f = 0; f < 5; ++f) {
        CHECK(plan.folds[f].size() == expected_sizes[f]);
    }
    CHECK(expected_sizes == std::array<std::size_t, 5>{14, 13, 13, 13, 13});
}

TEST_CASE("fold plan partition axioms over 100 random sizes") {
    rng::RngStream sizes(rng::CounterRng::from_seed(31));
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(sizes.next_int(10, 400));
        const auto subjects = subjects_n(n);
        const auto plan = evalproto::make_fold_plan(subjects, sizes.next_bits(), sizes.next_bits());

        std::set<std::string> all(subjects.begin(), subjects.end());
        std::set<std::string> seen;
        for (const auto& s : plan.test_subjects) {
            CHECK(all.count(s) == 1);
            CHECK(seen.insert(s).second);
        }
        std::size_t train_total = 0;
        for (const auto& fold : plan.folds) {
            CHECK(!fold.empty());
            train_total += fold.size();
            for (const auto& s : fold) {
                CHECK(all.count(s) == 1);
                CHECK(seen.insert(s).second);  // disjoint from test and other folds
            }
        }
        CHECK(seen.size() == all.size());  // union covers everything
        CHECK(plan.test_subjects.size() ==
              static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
        CHECK(train_total + plan.test_subjects.size() == static_cast<std::size_t>(n));
    }
    CHECK_THROWS_AS(evalproto::make_fold_plan(subjects_n(9), 1, 2), ProtocolError);
}

TEST_CASE("auc: trivial cases") {
    CHECK(evalproto::auc({0.9, 0.1}, {1, 0}) == 1.0);
    CHECK(evalproto::auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
    CHECK_THROWS_AS(evalproto::auc({0.5, 0.6}, {1, 1}), DataError);
    CHECK_THROWS_AS(evalproto::auc({}, {}), DataError);
}

TEST_CASE("auc equals the pair-counting oracle on random and heavy-tie inputs") {
    rng::RngStream rs(rng::CounterRng::from_seed(17));
    for (int trial = 0; trial < 300; ++trial) {
        const int n = static_cast<int>(rs.next_int(2, 300));
        std::vector<double> scores;
        std::vector<int> labels;
        const bool heavy_ties = trial % 2 == 0;
        int n_pos = 0;
        for (int i = 0; i < n; ++i) {
            scores.push_back(heavy_ties ? static_cast<double>(rs.next_int(0, 3)) * 0.25
                                        : rs.next_uniform());
            const int label = rs.next_bernoulli(0.5) ? 1 : 0;
            labels.push_back(label);
            n_pos += label;
        }
        if (n_pos == 0 || n_pos == n) continue;
        CHECK(evalproto::auc(scores, labels) == auc_oracle(scores, labels));
    }
}

TEST_CASE("auc is exactly invariant under monotone transforms") {
    rng::RngStream rs(rng::CounterRng::from_seed(23));
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 120; ++i) {
        scores.push_back(static_cast<double>(rs.next_int(0, 9)) / 10.0);
        labels.push_back(i % 3 == 0 ? 1 : 0);
    }
    const double base = evalproto::auc(scores, labels);
    std::vector<double> affine = scores, expo = scores;
    for (auto& v : affine) v = 2.0 * v + 1.0;
    for (auto& v : expo) v = std::exp(v);
    CHECK(evalproto::auc(affine, labels) == base);
    CHECK(evalproto::auc(expo, labels) == base);
}

TEST_CASE("grid_search_fold0: singleton, ties, divergence handling") {
    const auto plan = evalproto::make_fold_plan(subjects_n(20), 3, 4);
    const auto corpus = corpus_for(plan);

    // Singleton grid wins regardless of score.
    {
        int calls = 0;
        auto fn = [&](const HyperParams&, const dataio::SeqRefs&, const dataio::SeqRefs&,
                      const dataio::SeqRefs*) {
            ++calls;
            evalproto::PointOutcome out;
            out.val_auc = 0.1;
            return out;
        };
        const auto result = evalproto::grid_search_fold0({HyperParams{1e-3, 64, 0.4}}, plan, corpus, fn);
        CHECK(calls == 1);
        CHECK(result.theta_star == HyperParams{1e-3, 64, 0.4});
    }

    // DKT-style lr-only grid: exactly three trainings; ties keep the first.
    {
        int calls = 0;
        auto fn = [&](const HyperParams&, const dataio::SeqRefs& train, const dataio::SeqRefs& val,
                      const dataio::SeqRefs*) {
            ++calls;
            CHECK(!train.empty());
            CHECK(!val.empty());
            evalproto::PointOutcome out;
            out.val_auc = 0.7;  // identical for all points
            return out;
        };
        const auto grid = evalproto::build_grid({5e-5, 1e-4, 5e-4}, {50}, {0.1});
        const auto result = evalproto::grid_search_fold0(grid, plan, corpus, fn);
        CHECK(calls == 3);
        CHECK(result.best_index == 0);
        CHECK(result.theta_star.learning_rate == 5e-5);
        CHECK(result.log.size() == 3);
    }

    // Diverged points are skipped; all-diverged is a protocol error.
    {
        auto fn = [&](const HyperParams& hp, const dataio::SeqRefs&, const dataio::SeqRefs&,
                      const dataio::SeqRefs*) {
            evalproto::PointOutcome out;
            out.diverged = hp.learning_rate > 1e-4;
            out.val_auc = hp.learning_rate;  // favors the biggest non-diverged lr
            return out;
        };
        const auto grid = evalproto::build_grid({5e-5, 1e-4, 5e-4}, {50}, {0.1});
        const auto result = evalproto::grid_search_fold0(grid, plan, corpus, fn);
        CHECK(result.theta_star.learning_rate == 1e-4);

        auto all_fail = [&](const HyperParams&, const dataio::SeqRefs&, const dataio::SeqRefs&,
                            const dataio::SeqRefs*) {
            evalproto::PointOutcome out;
            out.diverged = true;
            return out;
        };
        CHECK_THROWS_AS(evalproto::grid_search_fold0(grid, plan, corpus, all_fail), ProtocolError);
    }
}

TEST_CASE("default grids match the declared search spaces") {
    HyperParams base;
    base.d_emb = 32;
    base.dropout = 0.25;
    const auto dkt = evalproto::default_grid(false, base);
    CHECK(dkt.size() == 3);  // lr only
    for (const auto& hp : dkt) {
        CHECK(hp.d_emb == 32);
        CHECK(hp.dropout == 0.25);
    }
    const auto code = evalproto::default_grid(true, base);
    CHECK(code.size() == 5 * 5 * 3);
}

TEST_CASE("run_cv: constant-predictor stub gives mean 0.5 with zero spread") {
    const auto plan = evalproto::make_fold_plan(subjects_n(30), 5, 6);
    const auto corpus = corpus_for(plan);
    auto fn = [](const HyperParams&, const dataio::SeqRefs&, const dataio::SeqRefs&,
                 const dataio::SeqRefs* test) {
        evalproto::PointOutcome out;
        out.val_auc = 0.5;  // what auc() returns for an all-equal predictor
        out.best_epoch = 3;
        if (test != nullptr) out.test_auc = 0.5;
        return out;
    };
    const auto report = evalproto::run_cv(HyperParams{}, plan, corpus, fn, true);
    REQUIRE(report.folds.size() == 5);
    CHECK(report.mean_auc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(report.std_auc == 0.0);
    CHECK(report.mean_test_auc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(!report.any_failed);

    // Mean and std recompute from the per-fold values.
    double mean = 0.0;
    for (const auto& f : report.folds) mean += f.val_auc;
    mean /= 5.0;
    CHECK(std::abs(mean - report.mean_auc) <= 1e-12);
}

TEST_CASE("run_cv: failed folds are excluded and flagged") {
    const auto plan = evalproto::make_fold_plan(subjects_n(30), 5, 6);
    const auto corpus = corpus_for(plan);
    int call = 0;
    auto fn = [&](const HyperParams&, const dataio::SeqRefs&, const dataio::SeqRefs&,
                  const dataio::SeqRefs*) {
        evalproto::PointOutcome out;
        out.diverged = (call == 2);
        out.val_auc = 0.6 + 0.01 * call;
        ++call;
        return out;
    };
    const auto report = evalproto::run_cv(HyperParams{}, plan, corpus, fn, false);
    CHECK(report.any_failed);
    CHECK(report.folds[2].failed);
    const double expected_mean = (0.6 + 0.61 + 0.63 + 0.64) / 4.0;
    CHECK(report.mean_auc == doctest::Approx(expected_mean).epsilon(1e-12));

    double mean = 0.0;
    double acc = 0.0;
    int n = 0;
    for (const auto& f : report.folds) {
        if (f.failed) continue;
        mean += f.val_auc;
        ++n;
    }
    mean /= n;
    for (const auto& f : report.folds) {
        if (f.failed) continue;
        acc += (f.val_auc - mean) * (f.val_auc - mean);
    }
    CHECK(std::abs(report.mean_auc - mean) <= 1e-12);
    CHECK(std::abs(report.std_auc - std::sqrt(acc / (n - 1))) <= 1e-12);
}

TEST_CASE("emit_report writes deterministic files with theta on every fold") {
    evalproto::RunManifest manifest;
    manifest.assignment_id = "A1";
    manifest.variant = "codedkt";
    manifest.axis = "path";
    manifest.l_max = 50;
    manifest.theta = HyperParams{5e-4, 100, 0.2};
    manifest.theta_provenance = "grid/theta_star.json";
    manifest.corpus_hash = "deadbeef";

    evalproto::MetricsReport metrics;
    for (int i = 0; i < 5; ++i) {
        evalproto::FoldMetric f;
        f.fold = i;
        f.val_auc = 0.7 + 0.01 * i;
        f.stop_epoch = 10 + i;
        metrics.folds.push_back(f);
    }
    metrics.mean_auc = 0.72;
    metrics.std_auc = 0.0158;

    const auto dir = (std::filesystem::temp_directory_path() / "ktkit_report_test").string();
    evalproto::emit_report(manifest, metrics, dir);
    const auto manifest1 = dataio::read_file(dir + "/manifest.json");
    const auto folds1 = dataio::read_file(dir + "/folds.csv");
    const auto summary1 = dataio::read_file(dir + "/summary.csv");
    evalproto::emit_report(manifest, metrics, dir);  // re-emit without rerun
    CHECK(dataio::read_file(dir + "/manifest.json") == manifest1);
    CHECK(dataio::read_file(dir + "/folds.csv") == folds1);
    CHECK(dataio::read_file(dir + "/summary.csv") == summary1);

    // Each fold row repeats the fixed theta.
    CHECK(std::count(folds1.begin(), folds1.end(), '\n') == 6);
    std::size_t theta_rows = 0;
    for (std::size_t pos = folds1.find("0.0005"); pos != std::string::npos;
         pos = folds1.find("0.0005", pos + 1)) {
        ++theta_rows;
    }
    CHECK(theta_rows == 5);
    std::filesystem::remove_all(dir);
}

TEST_CASE("delta_table_csv computes deltas against the baseline row") {
    std::vector<evalproto::SummaryRow> rows(2);
    rows[0].label = "lmax50";
    rows[0].assignment_id = "A";
    rows[0].setting = "dkt";
    rows[0].mean_auc = 0.70;
    rows[1].label = "lmax100";
    rows[1].assignment_id = "A";
    rows[1].setting = "dkt";
    rows[1].mean_auc = 0.6878;
    const auto csv = evalproto::delta_table_csv(rows);
    CHECK(csv.find("baseline") != std::string::npos);
    CHECK(csv.find("-0.0122") != std::string::npos);
}
