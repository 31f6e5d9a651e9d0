#include "kt/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <vector>

#include "kt/dataio.hpp"
#include "kt/rng.hpp"

namespace kt::synthgen {

namespace {

struct Row {
    int student;
    int problem;
    int attempt;
    std::int64_t ts;
    int correct;
    std::string code_ref;
};

std::string subject_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%04d", i);
    return buf;
}

std::string problem_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%02d", i);
    return buf;
}

}  // namespace

void GeneratorConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0) throw DataError(std::string("generator: ") + name + " must be in [0,1]");
    };
    prob(p_init, "p_init");
    prob(p_learn, "p_learn");
    prob(p_guess, "p_guess");
    prob(p_slip, "p_slip");
    prob(feature_signal, "feature_signal");
    prob(problem_spread, "problem_spread");
    if (p_guess >= 1.0 - p_slip) {
        throw DataError("generator: p_guess must be < 1 - p_slip, otherwise labels carry no mastery signal");
    }
    if (n_students <= 0 || n_problems <= 0) throw DataError("generator: need positive students and problems");
    if (max_attempts_per_problem < 1) throw DataError("generator: max_attempts_per_problem must be >= 1");
    if (gap_min_ms < 1 || gap_max_ms < gap_min_ms) throw DataError("generator: bad timestamp gap range");
    if (n_tokens < 2 || n_paths < 1 || r_max < 1) throw DataError("generator: vocabulary too small");
    if (d_ext < 1) throw DataError("generator: d_ext must be >= 1");
}

std::vector<ProblemParams> problem_params(const GeneratorConfig& cfg) {
    const auto root = rng::CounterRng::from_seed(cfg.seed).derive("problem_params");
    std::vector<ProblemParams> out;
    auto clamp01 = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
    for (int q = 0; q < cfg.n_problems; ++q) {
        rng::RngStream stream(root.derive(static_cast<std::uint64_t>(q)));
        ProblemParams p;
        const double s = cfg.problem_spread;
        p.p_init = clamp01(cfg.p_init + s * 0.5 * stream.next_uniform(-1.0, 1.0), 0.02, 0.95);
        p.p_learn = clamp01(cfg.p_learn + s * 0.4 * stream.next_uniform(-1.0, 1.0), 0.05, 0.95);
        p.p_slip = clamp01(cfg.p_slip + s * 0.2 * stream.next_uniform(-1.0, 1.0), 0.02, 0.45);
        p.p_guess = clamp01(cfg.p_guess + s * 0.3 * stream.next_uniform(-1.0, 1.0), 0.02,
                            1.0 - p.p_slip - 0.05);
        out.push_back(p);
    }
    return out;
}

SyntheticCorpus generate_corpus(const GeneratorConfig& cfg) {
    cfg.validate();
    const auto root = rng::CounterRng::from_seed(cfg.seed);
    const auto per_problem = problem_params(cfg);

    std::vector<Row> rows;
    std::ostringstream truth;
    truth << "subject problem attempt mastery_before mastery_after correct\n";

    for (int s = 0; s < cfg.n_students; ++s) {
        rng::RngStream student(root.derive("student").derive(static_cast<std::uint64_t>(s)));
        std::int64_t ts = 1'500'000'000'000LL +
                          student.next_int(0, 30LL * 24 * 3600 * 1000);  // per-student start offset
        for (int q = 0; q < cfg.n_problems; ++q) {
            const auto& pp = per_problem[static_cast<std::size_t>(q)];
            bool mastered = student.next_bernoulli(pp.p_init);
            for (int attempt = 1; attempt <= cfg.max_attempts_per_problem; ++attempt) {
                const bool before = mastered;
                const double p_correct = mastered ? 1.0 - pp.p_slip : pp.p_guess;
                const int correct = student.next_bernoulli(p_correct) ? 1 : 0;
                if (!mastered && student.next_bernoulli(pp.p_learn)) mastered = true;

                ts += student.next_int(cfg.gap_min_ms, cfg.gap_max_ms);
                Row row;
                row.student = s;
                row.problem = q;
                row.attempt = attempt;
                row.ts = ts;
                row.correct = correct;
                row.code_ref = "c" + std::to_string(rows.size());
                rows.push_back(row);
                truth << subject_name(s) << " " << problem_name(q) << " " << attempt << " " << (before ? 1 : 0)
                      << " " << (mastered ? 1 : 0) << " " << correct << "\n";
                if (correct == 1) break;  // submit-and-fix loop ends at first success
            }
        }
    }

    // Features reflect the mastery state the submission leaves the student
    // in: code written while figuring a problem out carries the understanding
    // gained during the attempt. Reconstruct per-row mastery_after from the
    // truth trace order.
    std::vector<int> mastery_after(rows.size());
    {
        std::istringstream ts_in(truth.str());
        std::string line;
        std::getline(ts_in, line);  // header
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::getline(ts_in, line);
            std::istringstream ls(line);
            std::string subj, prob;
            int attempt, before, after, correct;
            ls >> subj >> prob >> attempt >> before >> after >> correct;
            mastery_after[i] = after;
        }
    }

    std::ostringstream paths_out;
    paths_out << "tokens " << cfg.n_tokens << "\npaths " << cfg.n_paths << "\nrmax " << cfg.r_max << "\n";
    std::ostringstream emb_out;
    emb_out << "dim " << cfg.d_ext << "\n";
    const int half = cfg.n_tokens / 2;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rng::RngStream feat(root.derive("features").derive(static_cast<std::uint64_t>(i)));
        const bool m = mastery_after[i] != 0;
        const int n_triples = static_cast<int>(feat.next_int(2, cfg.r_max));
        paths_out << rows[i].code_ref;
        for (int r = 0; r < n_triples; ++r) {
            int start, end;
            if (feat.next_bernoulli(cfg.feature_signal)) {
                // Signal triple: tokens drawn from the mastery-conditioned half.
                start = static_cast<int>(feat.next_int(0, half - 1)) + (m ? half : 0);
                end = static_cast<int>(feat.next_int(0, half - 1)) + (m ? half : 0);
            } else {
                start = static_cast<int>(feat.next_int(0, cfg.n_tokens - 1));
                end = static_cast<int>(feat.next_int(0, cfg.n_tokens - 1));
            }
            const int path = static_cast<int>(feat.next_int(0, cfg.n_paths - 1));
            paths_out << " " << start << "," << path << "," << end;
        }
        paths_out << "\n";

        emb_out << rows[i].code_ref << " ";
        for (int d = 0; d < cfg.d_ext; ++d) {
            double v;
            if (feat.next_bernoulli(cfg.feature_signal)) {
                v = (m ? 0.5 : -0.5) + feat.next_uniform(-0.1, 0.1);
            } else {
                v = feat.next_uniform(-0.5, 0.5);
            }
            if (d) emb_out << ",";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            emb_out << buf;
        }
        emb_out << "\n";
    }

    // Storage order: chronological per student unless shuffle_rows, in which
    // case a seeded permutation guaranteed to contain at least one
    // within-student inversion (re-drawn deterministically until it does).
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle_rows) {
        rng::RngStream shuf(root.derive("shuffle"));
        for (int tries = 0; tries < 100; ++tries) {
            shuf.shuffle(order);
            bool has_violation = false;
            std::map<int, std::size_t> last_by_student;
            for (std::size_t pos = 0; pos < order.size() && !has_violation; ++pos) {
                const auto& row = rows[order[pos]];
                auto it = last_by_student.find(row.student);
                if (it != last_by_student.end() && rows[it->second].ts > row.ts) has_violation = true;
                last_by_student[row.student] = order[pos];
            }
            if (has_violation) break;
        }
    }

    std::ostringstream csv;
    csv << "SubjectID,AssignmentID,ProblemID,Attempt,ServerTimestamp,Score,CodeStateID\n";
    for (const auto idx : order) {
        const auto& row = rows[idx];
        csv << subject_name(row.student) << "," << cfg.assignment_id << "," << problem_name(row.problem) << ","
            << row.attempt << "," << row.ts << "," << (row.correct ? "1.0" : "0.0") << "," << row.code_ref
            << "\n";
    }

    SyntheticCorpus out;
    out.main_table_csv = csv.str();
    out.path_contexts = paths_out.str();
    out.embeddings = emb_out.str();
    out.ground_truth = truth.str();
    return out;
}

void write_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
    std::filesystem::create_directories(dir);
    dataio::write_file(dir + "/main_table.csv", corpus.main_table_csv);
    dataio::write_file(dir + "/path_contexts.txt", corpus.path_contexts);
    dataio::write_file(dir + "/embeddings.txt", corpus.embeddings);
    dataio::write_file(dir + "/ground_truth.txt", corpus.ground_truth);
}

}  // namespace kt::synthgen
