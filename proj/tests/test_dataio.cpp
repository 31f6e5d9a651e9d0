#include <algorithm>
#include <string>
#include <vector>

#include <doctest.h>

#include "kt/dataio.hpp"

using namespace kt;
using dataio::InteractionRecord;

namespace {

// Storage order shows attempt 6 before attempt 5, but the timestamps say
// attempt 6 (a failure) actually happened first.
const char* kMisalignedCsv =
    "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
    "106,A,P1,1,1000,0.0\n"
    "106,A,P1,2,2000,0.0\n"
    "106,A,P1,3,3000,0.0\n"
    "106,A,P1,4,4000,0.0\n"
    "106,A,P1,5,6000,1.0\n"
    "106,A,P1,6,5000,0.0\n"
    "106,A,P1,7,7000,1.0\n";

std::vector<InteractionRecord> misaligned_fixture() {
    return dataio::parse_main_table_text(kMisalignedCsv, {}, "fig1");
}

}  // namespace

TEST_CASE("parse_main_table preserves file order and row indices") {
    const auto recs = dataio::parse_main_table_text(
        "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
        "s1,A,P1,1,5000,1.0\n"
        "s2,A,P2,1,1000,0.0\n"
        "s1,A,P1,2,3000,0.5\n",
        {}, "t");
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].subject_id == "s1");
    CHECK(recs[1].subject_id == "s2");
    CHECK(recs[2].attempt_index == 2);
    CHECK(recs[0].storage_order == 0);
    CHECK(recs[2].storage_order == 2);
    CHECK(recs[0].correct == 1);   // score 1.0 >= threshold
    CHECK(recs[2].correct == 0);   // partial credit binarizes to 0
    CHECK(recs[1].server_timestamp_ms == 1000);
}

TEST_CASE("parse_main_table keeps storage order when it disagrees with time") {
    const auto recs = misaligned_fixture();
    REQUIRE(recs.size() == 7);
    // Attempt 6 sits at row index 5, before attempt 5's timestamp would allow.
    CHECK(recs[4].attempt_index == 5);
    CHECK(recs[5].attempt_index == 6);
    CHECK(recs[5].server_timestamp_ms < recs[4].server_timestamp_ms);
}

TEST_CASE("parse_main_table: empty data section is empty, not an error") {
    const auto recs = dataio::parse_main_table_text(
        "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n", {}, "t");
    CHECK(recs.empty());
}

TEST_CASE("parse_main_table schema and row errors") {
    CHECK_THROWS_WITH_AS(dataio::parse_main_table_text("SubjectID,ProblemID\n", {}, "t"),
                         doctest::Contains("AssignmentID"), SchemaError);
    CHECK_THROWS_WITH_AS(dataio::parse_main_table_text(
                             "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
                             "s1,A,P1,1,notatime,1.0\n",
                             {}, "t"),
                         doctest::Contains("row 2"), RowError);
    CHECK_THROWS_WITH_AS(dataio::parse_main_table_text(
                             "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
                             "s1,A,P1,1,1000,good\n",
                             {}, "t"),
                         doctest::Contains("score"), RowError);
}

TEST_CASE("parse_main_table accepts datetime timestamps and column remapping") {
    dataio::ParseOptions opts;
    opts.columns.subject = "Student";
    const auto recs = dataio::parse_main_table_text(
        "Student,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
        "s1,A,P1,1,2019-01-18 13:21:23,1.0\n"
        "s1,A,P1,2,2019-01-18T13:21:24,0.0\n",
        opts, "t");
    REQUIRE(recs.size() == 2);
    CHECK(recs[1].server_timestamp_ms - recs[0].server_timestamp_ms == 1000);
    CHECK(recs[0].server_timestamp_ms > 1'500'000'000'000LL);  // sane epoch range
}

TEST_CASE("align_chronologically repairs the misaligned fixture") {
    const auto aligned = dataio::align_chronologically(misaligned_fixture());
    std::vector<int> attempts;
    for (const auto& r : aligned) attempts.push_back(r.attempt_index);
    CHECK(attempts == std::vector<int>{1, 2, 3, 4, 6, 5, 7});
    for (std::size_t i = 1; i < aligned.size(); ++i) {
        CHECK(aligned[i - 1].server_timestamp_ms <= aligned[i].server_timestamp_ms);
    }
}

TEST_CASE("align_chronologically is idempotent") {
    const auto once = dataio::align_chronologically(misaligned_fixture());
    const auto twice = dataio::align_chronologically(once);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(once[i].storage_order == twice[i].storage_order);
        CHECK(once[i].server_timestamp_ms == twice[i].server_timestamp_ms);
    }
}

TEST_CASE("align_chronologically ties: exhaustive permutations against the stated key") {
    // Equal timestamps; order must fall back to attempt_index then storage.
    std::vector<InteractionRecord> base(3);
    base[0].subject_id = base[1].subject_id = base[2].subject_id = "s";
    base[0].assignment_id = base[1].assignment_id = base[2].assignment_id = "A";
    base[0].problem_id = "P1";
    base[1].problem_id = "P2";
    base[2].problem_id = "P3";
    base[0].attempt_index = 1;
    base[1].attempt_index = 1;
    base[2].attempt_index = 2;
    for (auto& r : base) r.server_timestamp_ms = 5000;

    std::vector<std::size_t> perm{0, 1, 2};
    do {
        std::vector<InteractionRecord> stored;
        for (std::size_t i = 0; i < 3; ++i) {
            auto r = base[perm[i]];
            r.storage_order = static_cast<std::int64_t>(i);
            stored.push_back(r);
        }
        const auto aligned = dataio::align_chronologically(stored);

        // Independent oracle: brute-force sort of (attempt, storage) tuples.
        auto expected = stored;
        std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
            if (a.attempt_index != b.attempt_index) return a.attempt_index < b.attempt_index;
            return a.storage_order < b.storage_order;
        });
        REQUIRE(aligned.size() == expected.size());
        for (std::size_t i = 0; i < aligned.size(); ++i) {
            CHECK(aligned[i].problem_id == expected[i].problem_id);
            CHECK(aligned[i].storage_order == expected[i].storage_order);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("build_sequences: no truncation below the cap") {
    const auto corpus = dataio::build_sequences(misaligned_fixture(), 50, true);
    REQUIRE(corpus.sequences.size() == 1);
    CHECK(corpus.sequences[0].steps.size() == 7);
    CHECK(corpus.truncated_steps == 0);
    CHECK(corpus.n_problems == 1);
}

TEST_CASE("build_sequences: 135 attempts truncate to the earliest 100") {
    std::vector<InteractionRecord> recs;
    for (int i = 0; i < 135; ++i) {
        InteractionRecord r;
        r.subject_id = "s";
        r.assignment_id = "A";
        r.problem_id = "P" + std::to_string(i % 3);
        r.attempt_index = i + 1;
        r.server_timestamp_ms = 1000 * (i + 1);
        r.correct = i % 2;
        r.storage_order = i;
        recs.push_back(r);
    }
    const auto corpus = dataio::build_sequences(recs, 100, true);
    REQUIRE(corpus.sequences.size() == 1);
    const auto& steps = corpus.sequences[0].steps;
    REQUIRE(steps.size() == 100);
    CHECK(steps.front().timestamp_ms == 1000);
    CHECK(steps.back().timestamp_ms == 100'000);
    CHECK(corpus.truncated_steps == 35);
    CHECK(corpus.truncated_sequences == 1);

    const auto latest = dataio::build_sequences(recs, 100, true, dataio::TruncationPolicy::latest);
    CHECK(latest.sequences[0].steps.front().timestamp_ms == 36'000);
    CHECK(latest.sequences[0].steps.back().timestamp_ms == 135'000);
}

TEST_CASE("build_sequences: align=false reproduces storage order") {
    const auto on = dataio::build_sequences(misaligned_fixture(), 50, true);
    const auto off = dataio::build_sequences(misaligned_fixture(), 50, false);
    REQUIRE(on.sequences.size() == 1);
    REQUIRE(off.sequences.size() == 1);
    CHECK(on.aligned);
    CHECK(!off.aligned);
    // Positions 5 and 6 (1-based) swap between the two modes.
    CHECK(on.sequences[0].steps[4].timestamp_ms == 5000);
    CHECK(on.sequences[0].steps[5].timestamp_ms == 6000);
    CHECK(off.sequences[0].steps[4].timestamp_ms == 6000);
    CHECK(off.sequences[0].steps[5].timestamp_ms == 5000);
    // Same problem-index mapping in both modes.
    CHECK(on.problem_ids == off.problem_ids);
}

TEST_CASE("build_sequences rejects bad l_max and mixed assignments") {
    CHECK_THROWS_AS(dataio::build_sequences(misaligned_fixture(), 1, true), DataError);
    auto recs = misaligned_fixture();
    recs[3].assignment_id = "B";
    CHECK_THROWS_AS(dataio::build_sequences(recs, 50, true), DataError);
}

TEST_CASE("build_sequences problem mapping is a bijection by first appearance") {
    const auto recs = dataio::parse_main_table_text(
        "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score\n"
        "s1,A,Pz,1,1000,1.0\n"
        "s1,A,Pa,1,2000,1.0\n"
        "s2,A,Pm,1,500,1.0\n"
        "s2,A,Pz,1,800,1.0\n",
        {}, "t");
    const auto corpus = dataio::build_sequences(recs, 50, true);
    // Aligned order: s1 before s2? No: subjects sort lexically, s1 < s2, so
    // first appearance runs over s1's steps first.
    CHECK(corpus.problem_ids == std::vector<std::string>{"Pz", "Pa", "Pm"});
    CHECK(corpus.n_problems == 3);
    std::vector<int> seen;
    for (const auto& seq : corpus.sequences) {
        for (const auto& step : seq.steps) seen.push_back(step.problem_index);
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    CHECK(seen == std::vector<int>{0, 1, 2});
}

TEST_CASE("attach_path_contexts: caps, missing policy, vocabulary checks") {
    const std::string pc_text =
        "tokens 10\n"
        "paths 5\n"
        "rmax 3\n"
        "ref_small 1,2,3 4,0,5\n"
        "ref_big 0,0,0 1,1,1 2,2,2 3,3,3 4,4,4\n";
    const auto file = dataio::parse_path_context_text(pc_text, "pc");
    CHECK(file.n_tokens == 10);
    CHECK(file.r_max == 3);

    // Independent count of the fixture: ref_big carries 5 triples, cap is 3.
    std::size_t fixture_big_triples = 0;
    for (std::size_t pos = pc_text.find("ref_big"); pos != std::string::npos && pos < pc_text.size(); ++pos) {
        if (pc_text[pos] == ',') ++fixture_big_triples;
        if (pc_text[pos] == '\n') break;
    }
    fixture_big_triples /= 2;  // two commas per triple
    CHECK(fixture_big_triples == 5);

    const auto recs = dataio::parse_main_table_text(
        "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score,CodeStateID\n"
        "s1,A,P1,1,1000,0.0,ref_small\n"
        "s1,A,P1,2,2000,0.0,ref_big\n"
        "s1,A,P1,3,3000,1.0,ref_missing\n",
        {}, "t");
    auto corpus = dataio::build_sequences(recs, 50, true);

    auto strict = corpus;
    CHECK_THROWS_AS(dataio::attach_path_contexts(strict, file, dataio::MissingPolicy::error), DataError);

    dataio::attach_path_contexts(corpus, file, dataio::MissingPolicy::zero);
    const auto& steps = corpus.sequences[0].steps;
    REQUIRE(steps[0].paths.has_value());
    CHECK(steps[0].paths->triples.size() == 2);  // under the cap, kept as-is
    CHECK(steps[1].paths->triples.size() == 3);  // first r_max kept
    CHECK(steps[1].paths->triples[0] == dataio::PathTriple{0, 0, 0});
    CHECK(steps[1].paths->triples[2] == dataio::PathTriple{2, 2, 2});
    CHECK(corpus.features.truncated_triples ==
          static_cast<std::int64_t>(fixture_big_triples) - file.r_max);
    REQUIRE(steps[2].paths.has_value());
    CHECK(steps[2].paths->triples == std::vector<dataio::PathTriple>{{0, 0, 0}});
    CHECK(corpus.features.missing_refs == 1);

    CHECK_THROWS_WITH_AS(dataio::parse_path_context_text("tokens 4\npaths 2\nrmax 2\nr 9,0,1\n", "pc"),
                         doctest::Contains("out of vocabulary"), RowError);
}

TEST_CASE("dense embedding file: header dim enforced per row") {
    const auto file = dataio::parse_dense_embedding_text("dim 3\nr1 0.5,-0.25,0.125\n", "empc");
    CHECK(file.dim == 3);
    CHECK(file.by_ref.at("r1") == std::vector<double>{0.5, -0.25, 0.125});
    CHECK_THROWS_WITH_AS(dataio::parse_dense_embedding_text("dim 3\nr1 1.0,2.0\n", "em"),
                         doctest::Contains("width"), RowError);
}

TEST_CASE("sequence_length_percentile: nearest rank") {
    std::vector<InteractionRecord> recs;
    std::int64_t row = 0;
    for (int student = 1; student <= 20; ++student) {
        for (int k = 0; k < student; ++k) {  // lengths 1..20
            InteractionRecord r;
            r.subject_id = "s" + std::to_string(student);
            r.assignment_id = "A";
            r.problem_id = "P";
            r.attempt_index = k + 1;
            r.server_timestamp_ms = 1000 * (row + 1);
            r.storage_order = row++;
            recs.push_back(r);
        }
    }
    CHECK(dataio::sequence_length_percentile(recs, 0.95) == 19);

    std::vector<InteractionRecord> constant;
    row = 0;
    for (int student = 1; student <= 5; ++student) {
        for (int k = 0; k < 7; ++k) {
            InteractionRecord r;
            r.subject_id = "s" + std::to_string(student);
            r.assignment_id = "A";
            r.problem_id = "P";
            r.attempt_index = k + 1;
            r.server_timestamp_ms = 1000 * (row + 1);
            r.storage_order = row++;
            constant.push_back(r);
        }
    }
    CHECK(dataio::sequence_length_percentile(constant, 0.95) == 7);

    CHECK_THROWS_AS(dataio::sequence_length_percentile({}, 0.95), DataError);
    CHECK_THROWS_AS(dataio::sequence_length_percentile(recs, 1.0), DataError);
}

TEST_CASE("sequence cache round-trips exactly") {
    const auto recs = dataio::parse_main_table_text(
        "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score,CodeStateID\n"
        "s one,A,P1,1,1000,0.0,r1\n"
        "s one,A,P1,2,2000,1.0,r2\n",
        {}, "t");
    auto corpus = dataio::build_sequences(recs, 50, true);
    const auto pc = dataio::parse_path_context_text("tokens 4\npaths 3\nrmax 2\nr1 1,2,3 0,0,1\nr2 3,1,0\n", "pc");
    dataio::attach_path_contexts(corpus, pc, dataio::MissingPolicy::error);
    const auto emb = dataio::parse_dense_embedding_text("dim 2\nr1 0.125,-3.5\nr2 1e-7,42.0\n", "em");
    dataio::attach_dense_embeddings(corpus, emb, dataio::MissingPolicy::error);

    const auto text = dataio::serialize_corpus(corpus);
    const auto back = dataio::deserialize_corpus(text, "cache");
    CHECK(dataio::serialize_corpus(back) == text);
    CHECK(dataio::corpus_hash(back) == dataio::corpus_hash(corpus));
    CHECK(back.sequences[0].subject_id == "s one");
    CHECK(back.sequences[0].steps[0].embedding->vector == std::vector<double>{0.125, -3.5});
    CHECK(back.sequences[0].steps[0].paths->triples.size() == 2);
}

TEST_CASE("parse-align-build is a pure function of bytes and config") {
    const auto a = dataio::serialize_corpus(dataio::build_sequences(misaligned_fixture(), 50, true));
    const auto b = dataio::serialize_corpus(dataio::build_sequences(misaligned_fixture(), 50, true));
    CHECK(a == b);
}
