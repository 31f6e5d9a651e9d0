#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kt/config.hpp"
#include "kt/dataio.hpp"
#include "kt/evalproto.hpp"
#include "kt/models.hpp"
#include "kt/probes.hpp"
#include "kt/synthgen.hpp"
#include "kt/training.hpp"

namespace kt::pipeline {

// --- config materialization ---------------------------------------------------

// Rejects any configuration key outside the toolkit schema.
void validate_config(const config::Config& cfg);

synthgen::GeneratorConfig gen_config(const config::Config& cfg);

struct DataBundle {
    std::vector<dataio::InteractionRecord> records;  // storage order, one assignment
    dataio::SequenceCorpus corpus;
    int l_max = 50;
    bool align = true;
};

std::vector<dataio::InteractionRecord> load_records(const config::Config& cfg);
DataBundle build_bundle(const config::Config& cfg);

models::ModelVariant model_variant(const config::Config& cfg);
models::ModelDims model_dims(const config::Config& cfg, const dataio::SequenceCorpus& corpus,
                             const models::ModelVariant& variant);
training::TrainConfig train_config(const config::Config& cfg);

// Binds a concrete (variant, dims, train config) into the protocol's
// model-agnostic training hook.
evalproto::TrainFn make_train_fn(const models::ModelVariant& variant, const models::ModelDims& dims,
                                 const training::TrainConfig& cfg);

evalproto::RunManifest make_manifest(const config::Config& cfg, const DataBundle& bundle,
                                     const models::ModelVariant& variant, const training::TrainConfig& tcfg,
                                     const evalproto::HyperParams& theta, const std::string& provenance);

// --- subcommand drivers ----------------------------------------------------------

// gen: synthesize a corpus into <out>/corpus/.
std::string run_gen(const config::Config& cfg, const std::string& out_dir);

struct IngestOutcome {
    std::string cache_path;
    std::string corpus_hash;
    int n_sequences = 0;
    int n_problems = 0;
};
IngestOutcome run_ingest(const config::Config& cfg, const std::string& out_dir);

probes::AuditReport run_audit(const config::Config& cfg, const std::string& out_dir);

struct StatsRow {
    std::string assignment_id;
    int n_students = 0;
    int percentile_length = 0;
};
std::vector<StatsRow> run_stats(const config::Config& cfg, const std::string& out_dir, double p);

struct TrainOutcome {
    double val_auc = 0.0;   // best fold-0 validation AUC
    double test_auc = 0.0;  // held-out test subjects
    int best_epoch = 0;
    int epochs_run = 0;
    std::string stopped_reason;
    std::string checkpoint_path;
};
TrainOutcome run_train(const config::Config& cfg, const std::string& out_dir);

struct GridOutcome {
    evalproto::HyperParams theta_star;
    std::size_t best_index = 0;
    std::size_t n_points = 0;
    std::string theta_path;
};
GridOutcome run_grid(const config::Config& cfg, const std::string& out_dir);

struct ThetaSource {
    evalproto::HyperParams theta;
    std::string provenance;
};
// Fixation discipline: cv refuses to run without a theta* provenance.
ThetaSource resolve_theta(const std::string& theta_file_flag,
                          const std::optional<evalproto::HyperParams>& explicit_theta,
                          const std::string& out_dir);

struct CvOutcome {
    evalproto::MetricsReport metrics;
    evalproto::RunManifest manifest;
};
CvOutcome run_cv(const config::Config& cfg, const std::string& out_dir, const ThetaSource& theta);

struct ProbeRequest {
    std::string checkpoint_path;
    std::string subject;  // empty = longest sequence
    int t_star = 0;       // 0 = midpoint
    int n_trials = 20;
    std::uint64_t seed = 1;
};
probes::ProbeReport run_probe(const config::Config& cfg, const std::string& out_dir,
                              const ProbeRequest& request);

// report: combine cv summaries of several run directories into one delta
// table, first directory as baseline.
std::string run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace kt::pipeline
