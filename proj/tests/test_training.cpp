#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "kt/dataio.hpp"
#include "kt/synthgen.hpp"
#include "kt/training.hpp"

using namespace kt;
using dataio::StudentSequence;
using models::ModelDims;
using models::ModelVariant;
using tensor::Tensor;

namespace {

StudentSequence seq_of(const std::vector<int>& problems, const std::vector<int>& correct, int q) {
    StudentSequence seq;
    seq.subject_id = "s";
    seq.assignment_id = "A";
    seq.n_problems = q;
    for (std::size_t t = 0; t < problems.size(); ++t) {
        dataio::SequenceStep step;
        step.problem_index = problems[t];
        step.correct = correct[t];
        step.timestamp_ms = static_cast<std::int64_t>(t + 1) * 1000;
        seq.steps.push_back(step);
    }
    return seq;
}

// Small learnable corpus for integration-flavored training tests.
dataio::SequenceCorpus small_corpus(int n_students, std::uint64_t seed, double feature_signal = 0.8) {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = n_students;
    cfg.n_problems = 4;
    cfg.max_attempts_per_problem = 4;
    cfg.seed = seed;
    cfg.feature_signal = feature_signal;
    cfg.n_tokens = 12;
    cfg.n_paths = 8;
    cfg.r_max = 4;
    cfg.d_ext = 6;
    const auto gen = synthgen::generate_corpus(cfg);
    auto corpus = dataio::build_sequences(dataio::parse_main_table_text(gen.main_table_csv, {}, "syn"), 50, true);
    dataio::attach_path_contexts(corpus, dataio::parse_path_context_text(gen.path_contexts, "pc"),
                                 dataio::MissingPolicy::error);
    dataio::attach_dense_embeddings(corpus, dataio::parse_dense_embedding_text(gen.embeddings, "em"),
                                    dataio::MissingPolicy::error);
    return corpus;
}

}  // namespace

TEST_CASE("next_step_loss: analytic values") {
    const auto seq = seq_of({0, 1, 0}, {1, 0, 1}, 2);

    // Constant 0.5 predictions: loss is exactly ln 2.
    const auto half = Tensor::full({3, 2}, 0.5);
    CHECK(training::next_step_loss(half, seq) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Near-perfect predictions: loss collapses to ~1e-9.
    Tensor perfect = Tensor::full({3, 2}, 0.5);
    perfect.at2(0, 1) = 1.0 - 1e-9;  // step 2: problem 1 answered wrong... target 0
    perfect.at2(0, 1) = 1e-9;        // P(correct)=1e-9 and x=0: right call
    perfect.at2(1, 0) = 1.0 - 1e-9;  // step 3: problem 0 correct
    CHECK(training::next_step_loss(perfect, seq) <= 2e-9);

    // Hand-computed 3-step fixture: mean of the two target BCE terms.
    Tensor hand = Tensor::full({3, 2}, 0.5);
    hand.at2(0, 1) = 0.3;  // target x=0 -> -ln(0.7)
    hand.at2(1, 0) = 0.8;  // target x=1 -> -ln(0.8)
    const double expected = (-std::log(0.7) - std::log(0.8)) / 2.0;
    CHECK(training::next_step_loss(hand, seq) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(training::next_step_loss(Tensor::full({1, 2}, 0.5), seq_of({0}, {1}, 2)), DataError);
}

TEST_CASE("next_step_loss agrees with the graph loss node") {
    ModelVariant v;
    ModelDims d;
    d.n_problems = 3;
    d.hidden = 4;
    const auto params = models::init_params(v, d, 5);
    const auto seq = seq_of({0, 1, 2, 1, 0}, {1, 0, 1, 1, 0}, 3);
    auto sg = models::build_sequence_graph(seq, params);
    const double graph_loss = tensor::forward(sg.graph, params.bindings(), sg.loss).values[0];
    const auto preds = models::dkt_forward(seq, params);
    CHECK(training::next_step_loss(preds, seq) == doctest::Approx(graph_loss).epsilon(1e-14));
}

TEST_CASE("train: max_epochs=1 stops with MAX_EPOCHS") {
    const auto corpus = small_corpus(12, 3);
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 9);
    dataio::SeqRefs val_set(refs.begin() + 9, refs.end());
    training::TrainConfig cfg;
    cfg.max_epochs = 1;
    ModelVariant v;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 8;
    const auto result = training::train(v, d, train_set, val_set, cfg);
    CHECK(result.epochs_run == 1);
    CHECK(result.best_epoch == 1);
    CHECK(result.stopped_reason == training::StopReason::max_epochs);
    CHECK(result.train_loss.size() == 1);
    CHECK(result.val_auc.size() == 1);
}

TEST_CASE("train: scripted metrics drive early stopping") {
    const auto corpus = small_corpus(12, 4);
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 9);
    dataio::SeqRefs val_set(refs.begin() + 9, refs.end());
    ModelVariant v;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 4;

    // Strictly improving metric: best epoch is always the last one.
    {
        int epoch = 0;
        training::TrainConfig cfg;
        cfg.max_epochs = 6;
        cfg.patience = 2;
        const auto result = training::train(v, d, train_set, val_set, cfg, "",
                                            [&](const models::ModelParams&, const dataio::SeqRefs&) {
                                                return 0.1 * static_cast<double>(++epoch);
                                            });
        CHECK(result.stopped_reason == training::StopReason::max_epochs);
        CHECK(result.best_epoch == 6);
        CHECK(result.epochs_run == 6);
    }

    // Metric that peaks at epoch 2: patience expires 3 epochs later.
    {
        int epoch = 0;
        training::TrainConfig cfg;
        cfg.max_epochs = 50;
        cfg.patience = 3;
        const auto result = training::train(v, d, train_set, val_set, cfg, "",
                                            [&](const models::ModelParams&, const dataio::SeqRefs&) {
                                                ++epoch;
                                                return epoch == 2 ? 0.9 : 0.5;
                                            });
        CHECK(result.stopped_reason == training::StopReason::patience);
        CHECK(result.best_epoch == 2);
        CHECK(result.epochs_run == 5);
        // The last `patience` epochs never beat the best.
        for (int e = result.best_epoch; e < result.epochs_run; ++e) {
            CHECK(result.val_auc[static_cast<std::size_t>(e)] <=
                  result.val_auc[static_cast<std::size_t>(result.best_epoch - 1)]);
        }
    }
}

TEST_CASE("train is bitwise reproducible") {
    const auto corpus = small_corpus(14, 5);
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 10);
    dataio::SeqRefs val_set(refs.begin() + 10, refs.end());
    training::TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.dropout = 0.2;
    ModelVariant v;
    v.kind = models::VariantKind::codedkt;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 8;
    d.d_emb = 6;
    d.n_tokens = corpus.features.n_tokens;
    d.n_paths = corpus.features.n_paths;
    d.r_max = corpus.features.r_max;

    const auto a = training::train(v, d, train_set, val_set, cfg);
    const auto b = training::train(v, d, train_set, val_set, cfg);
    CHECK(models::params_hash(a.params) == models::params_hash(b.params));
    CHECK(a.train_loss == b.train_loss);
    CHECK(a.val_auc == b.val_auc);
    CHECK(a.best_epoch == b.best_epoch);

    training::TrainConfig other = cfg;
    other.shuffle_seed += 1;
    const auto c = training::train(v, d, train_set, val_set, other);
    CHECK(a.train_loss != c.train_loss);
}

TEST_CASE("train: loss decreases over the first 5 epochs at lr=1e-4") {
    const auto corpus = small_corpus(20, 6);
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 15);
    dataio::SeqRefs val_set(refs.begin() + 15, refs.end());
    training::TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.max_epochs = 5;
    ModelVariant v;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 16;
    const auto result = training::train(v, d, train_set, val_set, cfg);
    REQUIRE(result.train_loss.size() == 5);
    CHECK(result.train_loss.back() < result.train_loss.front());
}

TEST_CASE("train writes the per-epoch CSV log") {
    const auto corpus = small_corpus(12, 7);
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 9);
    dataio::SeqRefs val_set(refs.begin() + 9, refs.end());
    training::TrainConfig cfg;
    cfg.max_epochs = 2;
    ModelVariant v;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 4;
    const auto log_path = (std::filesystem::temp_directory_path() / "ktkit_train_log_test.csv").string();
    training::train(v, d, train_set, val_set, cfg, log_path);
    const auto text = dataio::read_file(log_path);
    CHECK(text.rfind("epoch,train_loss,val_auc,best_so_far\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);  // header + 2 epochs
    std::filesystem::remove(log_path);
}

TEST_CASE("train aborts with epoch diagnostics when values blow up") {
    // A non-finite feature is the cheapest honest trigger for the NaN guard.
    auto corpus = small_corpus(12, 8);
    ModelVariant v;
    v.kind = models::VariantKind::eckt_style;
    ModelDims d;
    d.n_problems = corpus.n_problems;
    d.hidden = 4;
    d.d_ext = corpus.features.d_ext;
    corpus.sequences[2].steps[1].embedding->vector[0] = std::numeric_limits<double>::quiet_NaN();
    const auto refs = training::refs_of(corpus.sequences);
    dataio::SeqRefs train_set(refs.begin(), refs.begin() + 9);
    dataio::SeqRefs val_set(refs.begin() + 9, refs.end());
    training::TrainConfig cfg;
    cfg.max_epochs = 3;
    CHECK_THROWS_WITH_AS(training::train(v, d, train_set, val_set, cfg), doctest::Contains("epoch 1"),
                         NumericError);
}

TEST_CASE("train requires nonempty sets and length >= 2") {
    training::TrainConfig cfg;
    ModelVariant v;
    ModelDims d;
    d.n_problems = 2;
    d.hidden = 2;
    CHECK_THROWS_AS(training::train(v, d, {}, {}, cfg), DataError);

    const auto s1 = seq_of({0}, {1}, 2);
    dataio::SeqRefs shorties{&s1};
    CHECK_THROWS_AS(training::train(v, d, shorties, shorties, cfg), DataError);
}
