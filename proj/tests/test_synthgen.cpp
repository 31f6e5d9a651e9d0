#include <map>
#include <random>
#include <sstream>

#include <doctest.h>

#include "kt/dataio.hpp"
#include "kt/probes.hpp"
#include "kt/synthgen.hpp"

using namespace kt;

namespace {

// Independent Monte-Carlo of the same guess/slip/learn process, written
// against std::mt19937_64 so it shares no code with the generator.
double mc_correct_rate(const synthgen::GeneratorConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    long correct = 0, total = 0;
    for (int s = 0; s < cfg.n_students; ++s) {
        for (int q = 0; q < cfg.n_problems; ++q) {
            bool mastered = u(rng) < cfg.p_init;
            for (int a = 0; a < cfg.max_attempts_per_problem; ++a) {
                const bool hit = u(rng) < (mastered ? 1.0 - cfg.p_slip : cfg.p_guess);
                ++total;
                correct += hit ? 1 : 0;
                if (!mastered && u(rng) < cfg.p_learn) mastered = true;
                if (hit) break;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double corpus_correct_rate(const std::vector<dataio::InteractionRecord>& recs) {
    long correct = 0;
    for (const auto& r : recs) correct += r.correct;
    return static_cast<double>(correct) / static_cast<double>(recs.size());
}

}  // namespace

TEST_CASE("generate_corpus is bitwise deterministic per seed") {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = 20;
    cfg.seed = 1234;
    cfg.feature_signal = 0.5;
    const auto a = synthgen::generate_corpus(cfg);
    const auto b = synthgen::generate_corpus(cfg);
    CHECK(a.main_table_csv == b.main_table_csv);
    CHECK(a.path_contexts == b.path_contexts);
    CHECK(a.embeddings == b.embeddings);
    CHECK(a.ground_truth == b.ground_truth);

    cfg.seed = 1235;
    const auto c = synthgen::generate_corpus(cfg);
    CHECK(a.main_table_csv != c.main_table_csv);
}

TEST_CASE("generator rejects label-degenerate probability configs") {
    synthgen::GeneratorConfig cfg;
    cfg.p_guess = 0.5;
    cfg.p_slip = 0.5;
    CHECK_THROWS_AS(synthgen::generate_corpus(cfg), DataError);
    cfg.p_guess = 0.49;
    CHECK_NOTHROW(synthgen::generate_corpus(cfg));
}

TEST_CASE("shuffle_rows plants timestamp violations; unshuffled corpora have none") {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = 15;
    cfg.seed = 7;

    const auto clean = synthgen::generate_corpus(cfg);
    const auto clean_recs = dataio::parse_main_table_text(clean.main_table_csv, {}, "syn");
    const auto clean_audit = probes::timestamp_audit(clean_recs);
    CHECK(clean_audit.total_violations == 0);
    CHECK(clean_audit.verdict == probes::AuditVerdict::aligned);

    cfg.shuffle_rows = true;
    const auto shuffled = synthgen::generate_corpus(cfg);
    const auto recs = dataio::parse_main_table_text(shuffled.main_table_csv, {}, "syn");
    const auto audit = probes::timestamp_audit(recs);
    CHECK(audit.total_violations > 0);
    CHECK(audit.verdict == probes::AuditVerdict::misaligned);

    // Shuffling permutes rows, never content: aligned views agree.
    auto a = dataio::align_chronologically(clean_recs);
    auto b = dataio::align_chronologically(recs);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].subject_id == b[i].subject_id);
        CHECK(a[i].server_timestamp_ms == b[i].server_timestamp_ms);
        CHECK(a[i].correct == b[i].correct);
    }
}

TEST_CASE("generated corpus flows through dataio cleanly") {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = 25;
    cfg.seed = 99;
    cfg.feature_signal = 0.8;
    const auto corpus = synthgen::generate_corpus(cfg);
    const auto recs = dataio::parse_main_table_text(corpus.main_table_csv, {}, "syn");
    auto built = dataio::build_sequences(recs, 50, true);
    CHECK(built.n_problems == cfg.n_problems);
    CHECK(static_cast<int>(built.sequences.size()) == cfg.n_students);

    const auto pc = dataio::parse_path_context_text(corpus.path_contexts, "syn-pc");
    dataio::attach_path_contexts(built, pc, dataio::MissingPolicy::error);
    const auto emb = dataio::parse_dense_embedding_text(corpus.embeddings, "syn-emb");
    dataio::attach_dense_embeddings(built, emb, dataio::MissingPolicy::error);
    CHECK(built.features.missing_refs == 0);
    CHECK(built.features.has_paths);
    CHECK(built.features.has_dense);

    // Per-student timestamps strictly increase by construction.
    for (const auto& seq : built.sequences) {
        for (std::size_t t = 1; t < seq.steps.size(); ++t) {
            CHECK(seq.steps[t - 1].timestamp_ms < seq.steps[t].timestamp_ms);
        }
    }
}

TEST_CASE("ground-truth mastery is monotone per (student, problem)") {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = 30;
    cfg.seed = 5;
    const auto corpus = synthgen::generate_corpus(cfg);
    std::istringstream in(corpus.ground_truth);
    std::string line;
    std::getline(in, line);  // header
    std::map<std::pair<std::string, std::string>, int> last;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string subj, prob;
        int attempt, before, after, correct;
        REQUIRE((ls >> subj >> prob >> attempt >> before >> after >> correct));
        CHECK(before <= after);
        auto key = std::make_pair(subj, prob);
        auto it = last.find(key);
        if (it != last.end() && attempt > 1) CHECK(it->second <= before);
        last[key] = after;
    }
}

TEST_CASE("correctness rate matches the closed form and an independent Monte-Carlo") {
    synthgen::GeneratorConfig cfg;
    cfg.n_students = 1000;
    cfg.n_problems = 10;
    cfg.problem_spread = 0.0;  // oracle and closed form assume the base chain
    cfg.seed = 2024;
    const auto corpus = synthgen::generate_corpus(cfg);
    const auto recs = dataio::parse_main_table_text(corpus.main_table_csv, {}, "syn");
    REQUIRE(recs.size() >= 10'000);

    // Closed form for first attempts: p_init(1-p_slip) + (1-p_init)p_guess.
    const double expected_first = cfg.p_init * (1.0 - cfg.p_slip) + (1.0 - cfg.p_init) * cfg.p_guess;
    long first_correct = 0, first_total = 0;
    for (const auto& r : recs) {
        if (r.attempt_index == 1) {
            ++first_total;
            first_correct += r.correct;
        }
    }
    const double first_rate = static_cast<double>(first_correct) / static_cast<double>(first_total);
    CHECK(std::abs(first_rate - expected_first) <= 0.02);

    const double mc = mc_correct_rate(cfg, 777);
    CHECK(std::abs(corpus_correct_rate(recs) - mc) <= 0.02);
}
