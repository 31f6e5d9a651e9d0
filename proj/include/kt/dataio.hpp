#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kt/errors.hpp"

namespace kt::dataio {

// One submission row from a main interaction table. storage_order is the
// physical row index in the source file; alignment never rewrites it.
struct InteractionRecord {
    std::string subject_id;
    std::string assignment_id;
    std::string problem_id;
    int attempt_index = 1;
    std::int64_t server_timestamp_ms = 0;
    int correct = 0;
    std::string code_ref;  // empty = no code attached
    std::int64_t storage_order = 0;
};

struct PathTriple {
    int start_token = 0;
    int path = 0;
    int end_token = 0;
    bool operator==(const PathTriple&) const = default;
};

struct PathContextSet {
    std::vector<PathTriple> triples;
};

struct DenseEmbedding {
    std::vector<double> vector;
};

struct SequenceStep {
    int problem_index = 0;  // dense index in [0, Q)
    int correct = 0;
    std::int64_t timestamp_ms = 0;
    std::string code_ref;
    std::optional<PathContextSet> paths;
    std::optional<DenseEmbedding> embedding;
};

struct StudentSequence {
    std::string subject_id;
    std::string assignment_id;
    std::vector<SequenceStep> steps;
    int n_problems = 0;  // Q of the owning corpus
};

using SeqRefs = std::vector<const StudentSequence*>;

enum class TruncationPolicy { earliest, latest };
enum class MissingPolicy { error, zero };

struct FeatureMeta {
    bool has_paths = false;
    bool has_dense = false;
    int n_tokens = 0;
    int n_paths = 0;
    int r_max = 0;  // vocabulary fields valid when has_paths
    int d_ext = 0;  // valid when has_dense
    MissingPolicy missing = MissingPolicy::error;
    std::int64_t truncated_triples = 0;  // triples dropped by the R_max cap
    std::int64_t missing_refs = 0;       // steps filled by the missing-policy
};

struct SequenceCorpus {
    std::string assignment_id;
    std::vector<StudentSequence> sequences;
    std::vector<std::string> problem_ids;  // dense index -> original id
    int n_problems = 0;
    bool aligned = true;
    TruncationPolicy truncation = TruncationPolicy::earliest;
    std::int64_t truncated_steps = 0;
    std::int64_t truncated_sequences = 0;
    FeatureMeta features;
};

struct ColumnMap {
    std::string subject = "SubjectID";
    std::string assignment = "AssignmentID";
    std::string problem = "ProblemID";
    std::string attempt = "Attempt";
    std::string timestamp = "ServerTimestamp";
    std::string score = "Score";
    std::string code_ref = "CodeStateID";  // optional column
};

struct ParseOptions {
    ColumnMap columns;
    double score_threshold = 1.0;  // correct = score >= threshold
};

// --- main table ingestion ---------------------------------------------------

std::vector<InteractionRecord> parse_main_table(const std::string& path, const ParseOptions& opts = {});
std::vector<InteractionRecord> parse_main_table_text(std::string_view text, const ParseOptions& opts,
                                                     const std::string& origin);

// Stable sort by (subject, assignment, timestamp, attempt, storage_order).
// Idempotent; the composite key is total so ties cannot reorder.
std::vector<InteractionRecord> align_chronologically(std::vector<InteractionRecord> records);

// Groups records of a single assignment into per-student sequences. Problem
// ids map to dense indices by first appearance over the aligned corpus
// regardless of `align`, so aligned/misaligned runs stay comparable; `align`
// only decides the step order inside each sequence.
SequenceCorpus build_sequences(const std::vector<InteractionRecord>& records, int l_max, bool align,
                               TruncationPolicy truncation = TruncationPolicy::earliest);

// --- code features -----------------------------------------------------------

struct PathContextFile {
    int n_tokens = 0;
    int n_paths = 0;
    int r_max = 0;
    std::map<std::string, std::vector<PathTriple>> by_ref;
};

struct DenseEmbeddingFile {
    int dim = 0;
    std::map<std::string, std::vector<double>> by_ref;
};

PathContextFile load_path_context_file(const std::string& path);
PathContextFile parse_path_context_text(std::string_view text, const std::string& origin);
DenseEmbeddingFile load_dense_embedding_file(const std::string& path);
DenseEmbeddingFile parse_dense_embedding_text(std::string_view text, const std::string& origin);

void attach_path_contexts(SequenceCorpus& corpus, const PathContextFile& file,
                          MissingPolicy missing = MissingPolicy::error);
void attach_dense_embeddings(SequenceCorpus& corpus, const DenseEmbeddingFile& file,
                             MissingPolicy missing = MissingPolicy::error);

// --- statistics ---------------------------------------------------------------

// Nearest-rank percentile of per-student sequence lengths: the value at
// 1-based index ceil(p * n) of the sorted length list.
int sequence_length_percentile(const std::vector<InteractionRecord>& records, double p);

std::vector<std::string> assignments_in(const std::vector<InteractionRecord>& records);
std::vector<InteractionRecord> filter_assignment(const std::vector<InteractionRecord>& records,
                                                 const std::string& assignment_id);

// --- sequence cache ------------------------------------------------------------

std::string serialize_corpus(const SequenceCorpus& corpus);
SequenceCorpus deserialize_corpus(std::string_view text, const std::string& origin);
void save_corpus(const SequenceCorpus& corpus, const std::string& path);
SequenceCorpus load_corpus(const std::string& path);
std::string corpus_hash(const SequenceCorpus& corpus);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace kt::dataio
