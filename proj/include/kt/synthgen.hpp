#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kt/errors.hpp"

namespace kt::synthgen {

// Two-state learner simulator: each (student, problem) pair runs a
// guess/slip/learn chain, attempting until first success or the cap. Token
// and embedding features are mixed toward the latent mastery state with
// weight feature_signal, so code-aware models can beat the history-only
// baseline exactly when feature_signal > 0.
struct GeneratorConfig {
    int n_students = 300;
    int n_problems = 10;
    double p_init = 0.2;
    double p_learn = 0.25;
    double p_guess = 0.15;
    double p_slip = 0.10;
    // Seeded per-problem jitter around the base probabilities; 0 makes every
    // problem identical (the null corpora use that).
    double problem_spread = 0.8;
    int max_attempts_per_problem = 6;
    std::int64_t gap_min_ms = 30'000;
    std::int64_t gap_max_ms = 600'000;
    bool shuffle_rows = false;
    double feature_signal = 0.0;  // in [0,1]
    std::uint64_t seed = 1;
    int n_tokens = 50;
    int n_paths = 40;
    int r_max = 8;
    int d_ext = 16;
    std::string assignment_id = "A1";

    void validate() const;
};

struct SyntheticCorpus {
    std::string main_table_csv;
    std::string path_contexts;
    std::string embeddings;
    std::string ground_truth;  // sidecar for test assertions only
};

struct ProblemParams {
    double p_init, p_learn, p_guess, p_slip;
};

// The per-problem chain parameters actually used for a config (base values
// plus the seeded spread).
std::vector<ProblemParams> problem_params(const GeneratorConfig& cfg);

SyntheticCorpus generate_corpus(const GeneratorConfig& cfg);

// Writes main_table.csv, path_contexts.txt, embeddings.txt, ground_truth.txt.
void write_corpus(const SyntheticCorpus& corpus, const std::string& dir);

}  // namespace kt::synthgen
