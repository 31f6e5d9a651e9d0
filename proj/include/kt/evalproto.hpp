#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kt/dataio.hpp"

namespace kt::evalproto {

inline constexpr const char* kSoftwareVersion = "ktkit 0.1.0";

// One point in the hyperparameter grid. DKT grids vary the learning rate
// only; code-feature grids vary all three.
struct HyperParams {
    double learning_rate = 5e-4;
    int d_emb = 50;
    double dropout = 0.1;

    bool operator==(const HyperParams&) const = default;
};

// Seeded 80/20 subject split plus a five-fold partition of the training
// subjects. Subject-level by construction: splitting interactions would leak
// within-student temporal information.
struct FoldPlan {
    std::uint64_t split_seed = 0;
    std::uint64_t fold_seed = 0;
    std::vector<std::string> test_subjects;
    std::array<std::vector<std::string>, 5> folds;
};

FoldPlan make_fold_plan(std::vector<std::string> subjects, std::uint64_t split_seed, std::uint64_t fold_seed);
std::string serialize_plan(const FoldPlan& plan);
std::string plan_hash(const FoldPlan& plan);

struct PointOutcome {
    double val_auc = 0.0;
    int best_epoch = 0;
    bool diverged = false;
    double test_auc = std::numeric_limits<double>::quiet_NaN();
};

// Trains one model for one hyperparameter point; injected so the protocol
// stays model-agnostic (tests drive it with stubs).
using TrainFn = std::function<PointOutcome(const HyperParams&, const dataio::SeqRefs& train,
                                           const dataio::SeqRefs& val, const dataio::SeqRefs* test)>;

struct GridPointLog {
    HyperParams hp;
    PointOutcome outcome;
};

struct GridResult {
    HyperParams theta_star;
    std::size_t best_index = 0;
    std::vector<GridPointLog> log;
};

// Exhaustive search on fold 0 only: folds 1..4 train, fold 0 validates.
// Diverged points are logged and skipped; ties break by enumeration order.
GridResult grid_search_fold0(const std::vector<HyperParams>& grid, const FoldPlan& plan,
                             const dataio::SequenceCorpus& corpus, const TrainFn& train_fn);

struct FoldMetric {
    int fold = 0;
    double val_auc = 0.0;
    int stop_epoch = 0;
    bool failed = false;
    double test_auc = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsReport {
    std::vector<FoldMetric> folds;
    double mean_auc = 0.0;
    double std_auc = 0.0;  // sample (n-1) standard deviation
    double mean_test_auc = std::numeric_limits<double>::quiet_NaN();
    double std_test_auc = std::numeric_limits<double>::quiet_NaN();
    bool any_failed = false;
};

// Five trainings with theta fixed: fold i validates, the others train.
MetricsReport run_cv(const HyperParams& theta, const FoldPlan& plan, const dataio::SequenceCorpus& corpus,
                     const TrainFn& train_fn, bool eval_test = true);

// Exact rank-based AUC with average ranks for ties (Mann-Whitney U
// normalization). Throws on single-class input.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RunManifest {
    std::string assignment_id;
    std::string variant;   // dkt|codedkt|eckt
    std::string axis;      // path|time
    bool w0 = false;
    std::string xt = "correctness";
    int l_max = 50;
    bool align = true;
    HyperParams theta;
    std::string theta_provenance;  // grid result file or "explicit"
    std::uint64_t split_seed = 0;
    std::uint64_t fold_seed = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t shuffle_seed = 0;
    std::string corpus_hash;  // fingerprint of the built sequence cache
    std::string source_hash;  // fingerprint of the raw input files
    std::string truncation = "earliest";
    std::string software_version = kSoftwareVersion;
};

std::string manifest_json(const RunManifest& manifest, const MetricsReport& metrics);

// Writes manifest.json, folds.csv and summary.csv; rerunning over the same
// inputs reproduces the bytes.
void emit_report(const RunManifest& manifest, const MetricsReport& metrics, const std::string& out_dir);

// Side-by-side rows with a delta column against the first (baseline) row.
struct SummaryRow {
    std::string label;
    std::string assignment_id;
    std::string setting;
    double mean_auc = 0.0;
    double std_auc = 0.0;
    double test_auc = std::numeric_limits<double>::quiet_NaN();
};

std::string delta_table_csv(const std::vector<SummaryRow>& rows);

// Paper-style default grids: lr-only for dkt, full grid otherwise.
std::vector<HyperParams> default_grid(bool code_features, const HyperParams& base);
std::vector<HyperParams> build_grid(const std::vector<double>& lrs, const std::vector<int>& dembs,
                                    const std::vector<double>& dropouts);

}  // namespace kt::evalproto
