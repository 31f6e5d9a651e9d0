#include "kt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kt::pipeline {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

dataio::ParseOptions parse_options(const config::Config& cfg) {
    dataio::ParseOptions opts;
    opts.columns.subject = cfg.get_str("data", "col_subject", opts.columns.subject);
    opts.columns.assignment = cfg.get_str("data", "col_assignment", opts.columns.assignment);
    opts.columns.problem = cfg.get_str("data", "col_problem", opts.columns.problem);
    opts.columns.attempt = cfg.get_str("data", "col_attempt", opts.columns.attempt);
    opts.columns.timestamp = cfg.get_str("data", "col_timestamp", opts.columns.timestamp);
    opts.columns.score = cfg.get_str("data", "col_score", opts.columns.score);
    opts.columns.code_ref = cfg.get_str("data", "col_code_ref", opts.columns.code_ref);
    opts.score_threshold = cfg.get_double("data", "score_threshold", 1.0);
    return opts;
}

dataio::MissingPolicy missing_policy(const config::Config& cfg) {
    const auto s = cfg.get_str("data", "missing_policy", "error");
    if (s == "error") return dataio::MissingPolicy::error;
    if (s == "zero") return dataio::MissingPolicy::zero;
    throw UsageError("data.missing_policy must be error|zero, got '" + s + "'");
}

dataio::TruncationPolicy truncation_policy(const config::Config& cfg) {
    const auto s = cfg.get_str("data", "truncation", "earliest");
    if (s == "earliest") return dataio::TruncationPolicy::earliest;
    if (s == "latest") return dataio::TruncationPolicy::latest;
    throw UsageError("data.truncation must be earliest|latest, got '" + s + "'");
}

}  // namespace

void validate_config(const config::Config& cfg) {
    static const std::set<std::string> known{
        "data.main_table", "data.path_contexts", "data.embeddings", "data.assignment", "data.lmax",
        "data.align", "data.truncation", "data.score_threshold", "data.missing_policy", "data.col_subject",
        "data.col_assignment", "data.col_problem", "data.col_attempt", "data.col_timestamp", "data.col_score",
        "data.col_code_ref",
        "gen.students", "gen.problems", "gen.p_init", "gen.p_learn", "gen.p_guess", "gen.p_slip",
        "gen.problem_spread", "gen.max_attempts", "gen.gap_min_ms", "gen.gap_max_ms", "gen.shuffle_rows", "gen.feature_signal",
        "gen.seed", "gen.tokens", "gen.paths", "gen.rmax", "gen.d_ext", "gen.assignment",
        "model.variant", "model.axis", "model.w0", "model.xt", "model.w0_place", "model.hidden",
        "model.d_emb",
        "train.lr", "train.batch", "train.max_epochs", "train.patience", "train.optimizer", "train.beta1",
        "train.beta2", "train.epsilon", "train.seed_init", "train.seed_shuffle", "train.dropout",
        "protocol.seed_split", "protocol.seed_fold", "protocol.eval_test",
        "grid.lr", "grid.d_emb", "grid.dropout",
    };
    cfg.reject_unknown(known);
}

synthgen::GeneratorConfig gen_config(const config::Config& cfg) {
    synthgen::GeneratorConfig g;
    g.n_students = cfg.get_int("gen", "students", g.n_students);
    g.n_problems = cfg.get_int("gen", "problems", g.n_problems);
    g.p_init = cfg.get_double("gen", "p_init", g.p_init);
    g.p_learn = cfg.get_double("gen", "p_learn", g.p_learn);
    g.p_guess = cfg.get_double("gen", "p_guess", g.p_guess);
    g.p_slip = cfg.get_double("gen", "p_slip", g.p_slip);
    g.problem_spread = cfg.get_double("gen", "problem_spread", g.problem_spread);
    g.max_attempts_per_problem = cfg.get_int("gen", "max_attempts", g.max_attempts_per_problem);
    g.gap_min_ms = cfg.get_i64("gen", "gap_min_ms", g.gap_min_ms);
    g.gap_max_ms = cfg.get_i64("gen", "gap_max_ms", g.gap_max_ms);
    g.shuffle_rows = cfg.get_bool("gen", "shuffle_rows", g.shuffle_rows);
    g.feature_signal = cfg.get_double("gen", "feature_signal", g.feature_signal);
    g.seed = cfg.get_u64("gen", "seed", g.seed);
    g.n_tokens = cfg.get_int("gen", "tokens", g.n_tokens);
    g.n_paths = cfg.get_int("gen", "paths", g.n_paths);
    g.r_max = cfg.get_int("gen", "rmax", g.r_max);
    g.d_ext = cfg.get_int("gen", "d_ext", g.d_ext);
    g.assignment_id = cfg.get_str("gen", "assignment", g.assignment_id);
    return g;
}

std::vector<dataio::InteractionRecord> load_records(const config::Config& cfg) {
    const auto path = cfg.get_str("data", "main_table", "");
    if (path.empty()) throw UsageError("config is missing data.main_table");
    return dataio::parse_main_table(path, parse_options(cfg));
}

DataBundle build_bundle(const config::Config& cfg) {
    DataBundle bundle;
    auto records = load_records(cfg);
    const auto assignments = dataio::assignments_in(records);
    auto wanted = cfg.get_str("data", "assignment", "");
    if (wanted.empty()) {
        if (assignments.size() != 1) {
            throw UsageError("corpus has " + std::to_string(assignments.size()) +
                             " assignments; set data.assignment to choose one");
        }
        wanted = assignments[0];
    }
    bundle.records = dataio::filter_assignment(records, wanted);
    if (bundle.records.empty()) throw DataError("assignment '" + wanted + "' has no records");

    bundle.l_max = cfg.get_int("data", "lmax", 50);
    bundle.align = cfg.get_bool("data", "align", true);
    bundle.corpus = dataio::build_sequences(bundle.records, bundle.l_max, bundle.align,
                                            truncation_policy(cfg));

    const auto paths_file = cfg.get_str("data", "path_contexts", "");
    if (!paths_file.empty()) {
        dataio::attach_path_contexts(bundle.corpus, dataio::load_path_context_file(paths_file),
                                     missing_policy(cfg));
    }
    const auto emb_file = cfg.get_str("data", "embeddings", "");
    if (!emb_file.empty()) {
        dataio::attach_dense_embeddings(bundle.corpus, dataio::load_dense_embedding_file(emb_file),
                                        missing_policy(cfg));
    }
    return bundle;
}

models::ModelVariant model_variant(const config::Config& cfg) {
    models::ModelVariant v;
    v.kind = models::variant_from_name(cfg.get_str("model", "variant", "dkt"));
    const auto axis = cfg.get_str("model", "axis", "path");
    if (axis == "path") {
        v.axis_mode = tensor::Axis::path;
    } else if (axis == "time") {
        v.axis_mode = tensor::Axis::time;
    } else {
        throw UsageError("model.axis must be path|time, got '" + axis + "'");
    }
    v.w0_enabled = cfg.get_bool("model", "w0", false);
    const auto xt = cfg.get_str("model", "xt", "correctness");
    if (xt == "correctness") {
        v.xt = models::XtEncoding::correctness;
    } else if (xt == "interaction") {
        v.xt = models::XtEncoding::interaction;
    } else {
        throw UsageError("model.xt must be correctness|interaction, got '" + xt + "'");
    }
    const auto place = cfg.get_str("model", "w0_place", "per_path");
    if (place == "per_path") {
        v.w0_place = models::W0Placement::per_path;
    } else if (place == "post_aggregation") {
        v.w0_place = models::W0Placement::post_aggregation;
    } else {
        throw UsageError("model.w0_place must be per_path|post_aggregation, got '" + place + "'");
    }
    return v;
}

models::ModelDims model_dims(const config::Config& cfg, const dataio::SequenceCorpus& corpus,
                             const models::ModelVariant& variant) {
    models::ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = cfg.get_int("model", "hidden", 32);
    d.d_emb = cfg.get_int("model", "d_emb", 32);
    if (variant.kind == models::VariantKind::codedkt) {
        if (!corpus.features.has_paths) {
            throw DataError("codedkt needs path-context features; set data.path_contexts");
        }
        d.n_tokens = corpus.features.n_tokens;
        d.n_paths = corpus.features.n_paths;
        d.r_max = corpus.features.r_max;
    }
    if (variant.kind == models::VariantKind::eckt_style) {
        if (!corpus.features.has_dense) {
            throw DataError("eckt needs dense embeddings; set data.embeddings");
        }
        d.d_ext = corpus.features.d_ext;
    }
    return d;
}

training::TrainConfig train_config(const config::Config& cfg) {
    training::TrainConfig t;
    t.learning_rate = cfg.get_double("train", "lr", t.learning_rate);
    t.batch_size = cfg.get_int("train", "batch", t.batch_size);
    t.max_epochs = cfg.get_int("train", "max_epochs", t.max_epochs);
    t.patience = cfg.get_int("train", "patience", t.patience);
    const auto opt = cfg.get_str("train", "optimizer", "adam");
    if (opt == "adam") {
        t.optimizer = training::Optimizer::adam;
    } else if (opt == "sgd") {
        t.optimizer = training::Optimizer::sgd;
    } else {
        throw UsageError("train.optimizer must be adam|sgd, got '" + opt + "'");
    }
    t.beta1 = cfg.get_double("train", "beta1", t.beta1);
    t.beta2 = cfg.get_double("train", "beta2", t.beta2);
    t.epsilon = cfg.get_double("train", "epsilon", t.epsilon);
    t.init_seed = cfg.get_u64("train", "seed_init", t.init_seed);
    t.shuffle_seed = cfg.get_u64("train", "seed_shuffle", t.shuffle_seed);
    t.dropout = cfg.get_double("train", "dropout", t.dropout);
    return t;
}

evalproto::TrainFn make_train_fn(const models::ModelVariant& variant, const models::ModelDims& dims,
                                 const training::TrainConfig& cfg) {
    return [variant, dims, cfg](const evalproto::HyperParams& hp, const dataio::SeqRefs& train,
                                const dataio::SeqRefs& val,
                                const dataio::SeqRefs* test) -> evalproto::PointOutcome {
        models::ModelDims d = dims;
        training::TrainConfig c = cfg;
        c.learning_rate = hp.learning_rate;
        if (variant.kind != models::VariantKind::dkt) {
            d.d_emb = hp.d_emb;
            c.dropout = hp.dropout;
        }
        evalproto::PointOutcome out;
        try {
            const auto result = training::train(variant, d, train, val, c);
            out.val_auc = result.val_auc[static_cast<std::size_t>(result.best_epoch - 1)];
            out.best_epoch = result.best_epoch;
            if (test != nullptr && !test->empty()) {
                out.test_auc = training::evaluate_auc(result.params, *test);
            }
        } catch (const NumericError&) {
            out.diverged = true;
        }
        return out;
    };
}

evalproto::RunManifest make_manifest(const config::Config& cfg, const DataBundle& bundle,
                                     const models::ModelVariant& variant, const training::TrainConfig& tcfg,
                                     const evalproto::HyperParams& theta, const std::string& provenance) {
    evalproto::RunManifest m;
    m.assignment_id = bundle.corpus.assignment_id;
    m.variant = models::variant_name(variant.kind);
    m.axis = variant.axis_mode == tensor::Axis::path ? "path" : "time";
    m.w0 = variant.w0_enabled;
    m.xt = variant.xt == models::XtEncoding::correctness ? "correctness" : "interaction";
    m.l_max = bundle.l_max;
    m.align = bundle.align;
    m.theta = theta;
    m.theta_provenance = provenance;
    m.split_seed = cfg.get_u64("protocol", "seed_split", 101);
    m.fold_seed = cfg.get_u64("protocol", "seed_fold", 202);
    m.init_seed = tcfg.init_seed;
    m.shuffle_seed = tcfg.shuffle_seed;
    m.corpus_hash = dataio::corpus_hash(bundle.corpus);
    std::string source_bytes = dataio::read_file(cfg.get_str("data", "main_table", ""));
    for (const char* key : {"path_contexts", "embeddings"}) {
        const auto path = cfg.get_str("data", key, "");
        if (!path.empty()) source_bytes += dataio::read_file(path);
    }
    m.source_hash = rng::hex64(rng::fnv1a(source_bytes));
    m.truncation = bundle.corpus.truncation == dataio::TruncationPolicy::earliest ? "earliest" : "latest";
    return m;
}

std::string run_gen(const config::Config& cfg, const std::string& out_dir) {
    const auto g = gen_config(cfg);
    const auto corpus = synthgen::generate_corpus(g);
    const auto dir = out_dir + "/corpus";
    synthgen::write_corpus(corpus, dir);
    return dir;
}

namespace {

std::vector<std::string> corpus_subjects(const dataio::SequenceCorpus& corpus) {
    std::vector<std::string> subjects;
    subjects.reserve(corpus.sequences.size());
    for (const auto& s : corpus.sequences) subjects.push_back(s.subject_id);
    return subjects;
}

evalproto::FoldPlan plan_from(const config::Config& cfg, const dataio::SequenceCorpus& corpus) {
    return evalproto::make_fold_plan(corpus_subjects(corpus), cfg.get_u64("protocol", "seed_split", 101),
                                     cfg.get_u64("protocol", "seed_fold", 202));
}

dataio::SeqRefs gather_subjects(const dataio::SequenceCorpus& corpus, const std::vector<std::string>& who) {
    std::set<std::string> wanted(who.begin(), who.end());
    dataio::SeqRefs refs;
    for (const auto& s : corpus.sequences) {
        if (wanted.count(s.subject_id)) refs.push_back(&s);
    }
    return refs;
}

}  // namespace

IngestOutcome run_ingest(const config::Config& cfg, const std::string& out_dir) {
    const auto bundle = build_bundle(cfg);
    const auto dir = out_dir + "/cache";
    ensure_dir(dir);
    IngestOutcome out;
    out.cache_path = dir + "/sequences_" + bundle.corpus.assignment_id + ".txt";
    dataio::save_corpus(bundle.corpus, out.cache_path);
    out.corpus_hash = dataio::corpus_hash(bundle.corpus);
    out.n_sequences = static_cast<int>(bundle.corpus.sequences.size());
    out.n_problems = bundle.corpus.n_problems;

    nlohmann::json j;
    j["assignment"] = bundle.corpus.assignment_id;
    j["aligned"] = bundle.corpus.aligned;
    j["l_max"] = bundle.l_max;
    j["n_sequences"] = out.n_sequences;
    j["n_problems"] = out.n_problems;
    j["corpus_hash"] = out.corpus_hash;
    j["truncated_steps"] = bundle.corpus.truncated_steps;
    j["truncated_sequences"] = bundle.corpus.truncated_sequences;
    j["truncated_triples"] = bundle.corpus.features.truncated_triples;
    j["missing_refs"] = bundle.corpus.features.missing_refs;
    if (!bundle.corpus.aligned) {
        j["warning"] = "sequences built in storage order (leakage-reproduction mode)";
    }
    dataio::write_file(dir + "/ingest.json", j.dump(2) + "\n");
    return out;
}

probes::AuditReport run_audit(const config::Config& cfg, const std::string& out_dir) {
    const auto records = load_records(cfg);
    const auto report = probes::timestamp_audit(records);
    ensure_dir(out_dir);
    dataio::write_file(out_dir + "/audit.json", probes::audit_json(report));
    return report;
}

std::vector<StatsRow> run_stats(const config::Config& cfg, const std::string& out_dir, double p) {
    const auto records = load_records(cfg);
    if (records.empty()) throw DataError("stats: empty corpus");
    std::vector<StatsRow> rows;
    std::ostringstream csv;
    csv << "assignment,n_students,p" << std::lround(p * 100) << "_length\n";
    for (const auto& assignment : dataio::assignments_in(records)) {
        const auto subset = dataio::align_chronologically(dataio::filter_assignment(records, assignment));
        std::set<std::string> students;
        for (const auto& r : subset) students.insert(r.subject_id);
        StatsRow row;
        row.assignment_id = assignment;
        row.n_students = static_cast<int>(students.size());
        row.percentile_length = dataio::sequence_length_percentile(subset, p);
        csv << row.assignment_id << "," << row.n_students << "," << row.percentile_length << "\n";
        rows.push_back(std::move(row));
    }
    ensure_dir(out_dir);
    dataio::write_file(out_dir + "/stats.csv", csv.str());
    return rows;
}

TrainOutcome run_train(const config::Config& cfg, const std::string& out_dir) {
    const auto bundle = build_bundle(cfg);
    const auto variant = model_variant(cfg);
    const auto dims = model_dims(cfg, bundle.corpus, variant);
    const auto tcfg = train_config(cfg);
    const auto plan = plan_from(cfg, bundle.corpus);

    std::vector<std::string> train_subjects;
    for (std::size_t f = 1; f < plan.folds.size(); ++f) {
        train_subjects.insert(train_subjects.end(), plan.folds[f].begin(), plan.folds[f].end());
    }
    const auto train_set = gather_subjects(bundle.corpus, train_subjects);
    const auto val_set = gather_subjects(bundle.corpus, plan.folds[0]);
    const auto test_set = gather_subjects(bundle.corpus, plan.test_subjects);

    const auto dir = out_dir + "/train";
    ensure_dir(dir);
    const auto result = training::train(variant, dims, train_set, val_set, tcfg, dir + "/train_log.csv");

    TrainOutcome out;
    out.val_auc = result.val_auc[static_cast<std::size_t>(result.best_epoch - 1)];
    out.best_epoch = result.best_epoch;
    out.epochs_run = result.epochs_run;
    out.stopped_reason = result.stopped_reason == training::StopReason::patience ? "PATIENCE" : "MAX_EPOCHS";
    out.test_auc = test_set.empty() ? 0.0 : training::evaluate_auc(result.params, test_set);
    out.checkpoint_path = dir + "/checkpoint.txt";
    models::save_checkpoint(result.params, out.checkpoint_path);

    evalproto::HyperParams theta;
    theta.learning_rate = tcfg.learning_rate;
    theta.d_emb = dims.d_emb;
    theta.dropout = tcfg.dropout;
    const auto manifest = make_manifest(cfg, bundle, variant, tcfg, theta, "config");

    nlohmann::json j;
    j["val_auc"] = out.val_auc;
    j["test_auc"] = out.test_auc;
    j["best_epoch"] = out.best_epoch;
    j["epochs_run"] = out.epochs_run;
    j["stopped_reason"] = out.stopped_reason;
    j["params_hash"] = models::params_hash(result.params);
    dataio::write_file(dir + "/result.json", j.dump(2) + "\n");
    dataio::write_file(dir + "/foldplan.json", evalproto::serialize_plan(plan));
    evalproto::MetricsReport empty;
    dataio::write_file(dir + "/manifest.json", evalproto::manifest_json(manifest, empty));
    return out;
}

GridOutcome run_grid(const config::Config& cfg, const std::string& out_dir) {
    const auto bundle = build_bundle(cfg);
    const auto variant = model_variant(cfg);
    const auto dims = model_dims(cfg, bundle.corpus, variant);
    const auto tcfg = train_config(cfg);
    const auto plan = plan_from(cfg, bundle.corpus);

    evalproto::HyperParams base;
    base.learning_rate = tcfg.learning_rate;
    base.d_emb = dims.d_emb;
    base.dropout = tcfg.dropout;
    const bool code_features = variant.kind != models::VariantKind::dkt;
    std::vector<evalproto::HyperParams> grid;
    if (cfg.has("grid", "lr") || cfg.has("grid", "d_emb") || cfg.has("grid", "dropout")) {
        grid = evalproto::build_grid(cfg.get_doubles("grid", "lr", {base.learning_rate}),
                                     cfg.get_ints("grid", "d_emb", {base.d_emb}),
                                     cfg.get_doubles("grid", "dropout", {base.dropout}));
    } else {
        grid = evalproto::default_grid(code_features, base);
    }

    const auto result = evalproto::grid_search_fold0(grid, plan, bundle.corpus,
                                                     make_train_fn(variant, dims, tcfg));

    const auto dir = out_dir + "/grid";
    ensure_dir(dir);

    std::ostringstream log;
    log << "index,lr,d_emb,dropout,val_auc,best_epoch,diverged\n";
    for (std::size_t i = 0; i < result.log.size(); ++i) {
        const auto& e = result.log[i];
        log << i << "," << e.hp.learning_rate << "," << e.hp.d_emb << "," << e.hp.dropout << ","
            << e.outcome.val_auc << "," << e.outcome.best_epoch << "," << (e.outcome.diverged ? 1 : 0)
            << "\n";
    }
    dataio::write_file(dir + "/grid_log.csv", log.str());
    dataio::write_file(dir + "/foldplan.json", evalproto::serialize_plan(plan));

    GridOutcome out;
    out.theta_star = result.theta_star;
    out.best_index = result.best_index;
    out.n_points = grid.size();
    out.theta_path = dir + "/theta_star.json";
    nlohmann::json j;
    j["learning_rate"] = result.theta_star.learning_rate;
    j["d_emb"] = result.theta_star.d_emb;
    j["dropout"] = result.theta_star.dropout;
    j["best_index"] = result.best_index;
    j["val_auc"] = result.log[result.best_index].outcome.val_auc;
    j["source"] = "grid_search_fold0";
    dataio::write_file(out.theta_path, j.dump(2) + "\n");
    return out;
}

ThetaSource resolve_theta(const std::string& theta_file_flag,
                          const std::optional<evalproto::HyperParams>& explicit_theta,
                          const std::string& out_dir) {
    if (explicit_theta) {
        return {*explicit_theta, "explicit"};
    }
    const auto path = theta_file_flag.empty() ? out_dir + "/grid/theta_star.json" : theta_file_flag;
    if (!fs::exists(path)) {
        throw ProtocolError("cv requires a fixed theta*: run `grid` first, pass --theta <file>, or give "
                            "--theta-lr/--theta-demb/--theta-dropout explicitly (" +
                            path + " not found)");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(dataio::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse theta file " + path + ": " + e.what());
    }
    ThetaSource src;
    src.theta.learning_rate = j.at("learning_rate").get<double>();
    src.theta.d_emb = j.at("d_emb").get<int>();
    src.theta.dropout = j.at("dropout").get<double>();
    src.provenance = path;
    return src;
}

CvOutcome run_cv(const config::Config& cfg, const std::string& out_dir, const ThetaSource& theta) {
    const auto bundle = build_bundle(cfg);
    const auto variant = model_variant(cfg);
    const auto dims = model_dims(cfg, bundle.corpus, variant);
    const auto tcfg = train_config(cfg);
    const auto plan = plan_from(cfg, bundle.corpus);
    const bool eval_test = cfg.get_bool("protocol", "eval_test", true);

    CvOutcome out;
    out.metrics = evalproto::run_cv(theta.theta, plan, bundle.corpus, make_train_fn(variant, dims, tcfg),
                                    eval_test);
    out.manifest = make_manifest(cfg, bundle, variant, tcfg, theta.theta, theta.provenance);

    const auto dir = out_dir + "/cv";
    evalproto::emit_report(out.manifest, out.metrics, dir);
    dataio::write_file(dir + "/foldplan.json", evalproto::serialize_plan(plan));
    return out;
}

probes::ProbeReport run_probe(const config::Config& cfg, const std::string& out_dir,
                              const ProbeRequest& request) {
    if (request.checkpoint_path.empty()) throw UsageError("probe requires --checkpoint");
    const auto params = models::load_checkpoint(request.checkpoint_path);
    const auto bundle = build_bundle(cfg);

    const dataio::StudentSequence* seq = nullptr;
    if (!request.subject.empty()) {
        for (const auto& s : bundle.corpus.sequences) {
            if (s.subject_id == request.subject) {
                seq = &s;
                break;
            }
        }
        if (seq == nullptr) throw DataError("probe: subject '" + request.subject + "' not in corpus");
    } else {
        for (const auto& s : bundle.corpus.sequences) {
            if (s.steps.size() < 2) continue;
            if (seq == nullptr || s.steps.size() > seq->steps.size()) seq = &s;
        }
        if (seq == nullptr) throw DataError("probe: no sequence of length >= 2 in corpus");
    }

    const int T = static_cast<int>(seq->steps.size());
    const int t_star = request.t_star > 0 ? request.t_star : std::max(1, T / 2);
    const auto report = probes::future_perturbation_probe(
        params, *seq, t_star, request.n_trials, rng::CounterRng::from_seed(request.seed).derive("probe"));
    ensure_dir(out_dir);
    dataio::write_file(out_dir + "/probe.json", probes::probe_json(report));
    return report;
}

std::string run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw UsageError("report needs at least one run directory");
    std::vector<evalproto::SummaryRow> rows;
    for (const auto& dir : run_dirs) {
        const auto manifest_path = dir + "/cv/manifest.json";
        if (!fs::exists(manifest_path)) {
            throw DataError("no cv manifest under " + dir + " (expected " + manifest_path + ")");
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(dataio::read_file(manifest_path));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("cannot parse " + manifest_path + ": " + e.what());
        }
        evalproto::SummaryRow row;
        row.label = fs::path(dir).filename().string();
        if (row.label.empty()) row.label = dir;
        row.assignment_id = j.at("assignment").get<std::string>();
        std::ostringstream setting;
        setting << j.at("variant").get<std::string>() << " align=" << (j.at("align").get<bool>() ? "on" : "off")
                << " axis=" << j.at("axis").get<std::string>() << " lmax=" << j.at("l_max").get<int>();
        row.setting = setting.str();
        row.mean_auc = j.at("metrics").at("mean_auc").get<double>();
        row.std_auc = j.at("metrics").at("std_auc").get<double>();
        if (j.at("metrics").contains("mean_test_auc")) {
            row.test_auc = j.at("metrics").at("mean_test_auc").get<double>();
        }
        rows.push_back(std::move(row));
    }
    const auto dir = out_dir + "/report";
    ensure_dir(dir);
    const auto path = dir + "/summary_delta.csv";
    dataio::write_file(path, evalproto::delta_table_csv(rows));
    return path;
}

}  // namespace kt::pipeline
