#include "kt/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "kt/rng.hpp"

namespace kt::dataio {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// RFC4180-ish CSV: quoted fields, doubled quotes, embedded newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool row_started = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                row_started = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                row_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (row_started || !field.empty()) {
                    row.push_back(std::move(field));
                    field.clear();
                    rows.push_back(std::move(row));
                    row.clear();
                }
                row_started = false;
                break;
            default:
                field += c;
                row_started = true;
                break;
        }
    }
    if (row_started || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
std::int64_t days_from_civil(std::int64_t y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<std::uint64_t>(y - era * 400);
    const auto doy = static_cast<std::uint64_t>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const auto doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    std::size_t start = s[0] == '-' ? 1 : 0;
    if (start == s.size()) return false;
    for (std::size_t i = start; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

// Accepts integer milliseconds or "YYYY-MM-DD HH:MM:SS[.fff]" (T separator ok).
std::int64_t parse_timestamp(std::string_view raw, std::size_t row, const std::string& origin) {
    const auto s = trim(raw);
    if (all_digits(s)) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && p == s.data() + s.size()) return v;
    }
    int year, month, day, hour, minute, sec;
    int millis = 0;
    char sep;
    const std::string str(s);
    int consumed = 0;
    if (std::sscanf(str.c_str(), "%d-%d-%d%c%d:%d:%d%n", &year, &month, &day, &sep, &hour, &minute, &sec,
                    &consumed) == 7 &&
        (sep == ' ' || sep == 'T')) {
        if (consumed < static_cast<int>(str.size()) && str[static_cast<std::size_t>(consumed)] == '.') {
            double frac = 0.0;
            if (std::sscanf(str.c_str() + consumed, "%lf", &frac) == 1) {
                millis = static_cast<int>(std::lround(frac * 1000.0));
            }
        }
        const auto days = days_from_civil(year, month, day);
        return ((days * 24 + hour) * 60 + minute) * 60000 + static_cast<std::int64_t>(sec) * 1000 + millis;
    }
    throw RowError(origin + ": row " + std::to_string(row) + ": unparseable timestamp '" + str + "'");
}

double parse_double(std::string_view raw, std::size_t row, const std::string& origin, const char* what) {
    const auto s = trim(raw);
    const std::string str(s);
    char* end = nullptr;
    const double v = std::strtod(str.c_str(), &end);
    if (str.empty() || end != str.c_str() + str.size()) {
        throw RowError(origin + ": row " + std::to_string(row) + ": unparseable " + what + " '" + str + "'");
    }
    return v;
}

int parse_int(std::string_view raw, std::size_t row, const std::string& origin, const char* what) {
    const auto s = trim(raw);
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw RowError(origin + ": row " + std::to_string(row) + ": unparseable " + what + " '" +
                       std::string(s) + "'");
    }
    return v;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Cache fields are whitespace-delimited; percent-escape the separators.
std::string esc(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == ' ' || c == '%' || c == '\n' || c == '\t' || c == '\r') {
            static const char* hexd = "0123456789abcdef";
            out += '%';
            out += hexd[(static_cast<unsigned char>(c) >> 4) & 0xf];
            out += hexd[static_cast<unsigned char>(c) & 0xf];
        } else {
            out += c;
        }
    }
    return out.empty() ? std::string("-") : out;
}

std::string unesc(std::string_view s) {
    if (s == "-") return {};
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%') {
            if (i + 2 >= s.size()) throw DataError("bad escape in cache");
            const auto hv = [](char c) -> int {
                if (c >= '0' && c <= '9') return c - '0';
                if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                throw DataError("bad escape in cache");
            };
            out += static_cast<char>(hv(s[i + 1]) * 16 + hv(s[i + 2]));
            i += 2;
        } else {
            out += s[i];
        }
    }
    return out;
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path);
}

std::vector<InteractionRecord> parse_main_table(const std::string& path, const ParseOptions& opts) {
    return parse_main_table_text(read_file(path), opts, path);
}

std::vector<InteractionRecord> parse_main_table_text(std::string_view text, const ParseOptions& opts,
                                                     const std::string& origin) {
    const auto rows = parse_csv(text);
    if (rows.empty()) throw SchemaError(origin + ": missing header row");
    const auto& header = rows[0];

    auto find_col = [&](const std::string& name, bool required) -> int {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (std::string(trim(header[i])) == name) return static_cast<int>(i);
        }
        if (required) throw SchemaError(origin + ": missing required column '" + name + "'");
        return -1;
    };

    const int c_subject = find_col(opts.columns.subject, true);
    const int c_assignment = find_col(opts.columns.assignment, true);
    const int c_problem = find_col(opts.columns.problem, true);
    const int c_attempt = find_col(opts.columns.attempt, true);
    const int c_timestamp = find_col(opts.columns.timestamp, true);
    const int c_score = find_col(opts.columns.score, true);
    const int c_code = find_col(opts.columns.code_ref, false);

    std::vector<InteractionRecord> records;
    records.reserve(rows.size() - 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::size_t file_row = r + 1;  // 1-based, header is row 1
        auto cell = [&](int c) -> std::string_view {
            if (c < 0 || static_cast<std::size_t>(c) >= row.size()) {
                throw RowError(origin + ": row " + std::to_string(file_row) + ": too few columns");
            }
            return row[static_cast<std::size_t>(c)];
        };
        InteractionRecord rec;
        rec.subject_id = std::string(trim(cell(c_subject)));
        rec.assignment_id = std::string(trim(cell(c_assignment)));
        rec.problem_id = std::string(trim(cell(c_problem)));
        rec.attempt_index = parse_int(cell(c_attempt), file_row, origin, "attempt");
        rec.server_timestamp_ms = parse_timestamp(cell(c_timestamp), file_row, origin);
        const double score = parse_double(cell(c_score), file_row, origin, "score");
        rec.correct = score >= opts.score_threshold ? 1 : 0;
        if (c_code >= 0 && static_cast<std::size_t>(c_code) < row.size()) {
            rec.code_ref = std::string(trim(row[static_cast<std::size_t>(c_code)]));
        }
        rec.storage_order = static_cast<std::int64_t>(records.size());
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<InteractionRecord> align_chronologically(std::vector<InteractionRecord> records) {
    std::stable_sort(records.begin(), records.end(), [](const InteractionRecord& a, const InteractionRecord& b) {
        if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
        if (a.assignment_id != b.assignment_id) return a.assignment_id < b.assignment_id;
        if (a.server_timestamp_ms != b.server_timestamp_ms) return a.server_timestamp_ms < b.server_timestamp_ms;
        if (a.attempt_index != b.attempt_index) return a.attempt_index < b.attempt_index;
        return a.storage_order < b.storage_order;
    });
    return records;
}

SequenceCorpus build_sequences(const std::vector<InteractionRecord>& records, int l_max, bool align,
                               TruncationPolicy truncation) {
    if (l_max < 2) throw DataError("l_max must be >= 2, got " + std::to_string(l_max));
    const auto assignments = assignments_in(records);
    if (assignments.size() > 1) {
        throw DataError("build_sequences expects a single assignment, found " +
                        std::to_string(assignments.size()));
    }

    SequenceCorpus corpus;
    corpus.assignment_id = assignments.empty() ? std::string() : assignments[0];
    corpus.aligned = align;
    corpus.truncation = truncation;

    const auto aligned = align_chronologically(records);

    // Dense problem indices by first appearance in the aligned corpus; shared
    // by both orderings so aligned and misaligned runs see the same Q.
    std::map<std::string, int> problem_index;
    for (const auto& rec : aligned) {
        if (problem_index.emplace(rec.problem_id, static_cast<int>(corpus.problem_ids.size())).second) {
            corpus.problem_ids.push_back(rec.problem_id);
        }
    }
    corpus.n_problems = static_cast<int>(corpus.problem_ids.size());

    std::vector<InteractionRecord> ordered;
    if (align) {
        ordered = aligned;
    } else {
        ordered = records;
        std::stable_sort(ordered.begin(), ordered.end(),
                         [](const InteractionRecord& a, const InteractionRecord& b) {
                             if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
                             return a.storage_order < b.storage_order;
                         });
    }

    std::map<std::string, StudentSequence> by_subject;
    for (const auto& rec : ordered) {
        auto& seq = by_subject[rec.subject_id];
        if (seq.steps.empty()) {
            seq.subject_id = rec.subject_id;
            seq.assignment_id = rec.assignment_id;
        }
        SequenceStep step;
        step.problem_index = problem_index.at(rec.problem_id);
        step.correct = rec.correct;
        step.timestamp_ms = rec.server_timestamp_ms;
        step.code_ref = rec.code_ref;
        seq.steps.push_back(std::move(step));
    }

    for (auto& [subject, seq] : by_subject) {
        seq.n_problems = corpus.n_problems;
        if (static_cast<int>(seq.steps.size()) > l_max) {
            const auto extra = static_cast<std::int64_t>(seq.steps.size()) - l_max;
            corpus.truncated_steps += extra;
            corpus.truncated_sequences += 1;
            if (truncation == TruncationPolicy::earliest) {
                seq.steps.resize(static_cast<std::size_t>(l_max));
            } else {
                seq.steps.erase(seq.steps.begin(), seq.steps.begin() + static_cast<std::ptrdiff_t>(extra));
            }
        }
        corpus.sequences.push_back(std::move(seq));
    }
    return corpus;
}

PathContextFile load_path_context_file(const std::string& path) {
    return parse_path_context_text(read_file(path), path);
}

PathContextFile parse_path_context_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    PathContextFile file;
    std::string key;
    // 3-line header: tokens N / paths M / rmax R
    for (const char* expect : {"tokens", "paths", "rmax"}) {
        int value = 0;
        if (!(in >> key >> value) || key != expect || value <= 0) {
            throw SchemaError(origin + ": expected header line '" + expect + " <N>'");
        }
        if (key == "tokens") file.n_tokens = value;
        if (key == "paths") file.n_paths = value;
        if (key == "rmax") file.r_max = value;
    }
    std::string line;
    std::getline(in, line);  // rest of rmax line
    std::size_t row = 3;
    while (std::getline(in, line)) {
        ++row;
        const auto t = trim(line);
        if (t.empty()) continue;
        std::istringstream ls{std::string(t)};
        std::string ref;
        ls >> ref;
        std::vector<PathTriple> triples;
        std::string item;
        while (ls >> item) {
            PathTriple pt;
            if (std::sscanf(item.c_str(), "%d,%d,%d", &pt.start_token, &pt.path, &pt.end_token) != 3) {
                throw RowError(origin + ": row " + std::to_string(row) + ": bad triple '" + item + "'");
            }
            if (pt.start_token < 0 || pt.start_token >= file.n_tokens || pt.end_token < 0 ||
                pt.end_token >= file.n_tokens || pt.path < 0 || pt.path >= file.n_paths) {
                throw RowError(origin + ": row " + std::to_string(row) + ": id out of vocabulary in '" +
                               item + "'");
            }
            triples.push_back(pt);
        }
        if (triples.empty()) {
            throw RowError(origin + ": row " + std::to_string(row) + ": code_ref '" + ref + "' has no triples");
        }
        file.by_ref[ref] = std::move(triples);
    }
    return file;
}

DenseEmbeddingFile load_dense_embedding_file(const std::string& path) {
    return parse_dense_embedding_text(read_file(path), path);
}

DenseEmbeddingFile parse_dense_embedding_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    DenseEmbeddingFile file;
    std::string key;
    if (!(in >> key >> file.dim) || key != "dim" || file.dim <= 0) {
        throw SchemaError(origin + ": expected header line 'dim <D>'");
    }
    std::string line;
    std::getline(in, line);
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        const auto t = trim(line);
        if (t.empty()) continue;
        std::istringstream ls{std::string(t)};
        std::string ref, values;
        ls >> ref >> values;
        std::vector<double> v;
        std::size_t pos = 0;
        while (pos <= values.size() && !values.empty()) {
            auto next = values.find(',', pos);
            if (next == std::string::npos) next = values.size();
            const std::string tok = values.substr(pos, next - pos);
            char* end = nullptr;
            const double d = std::strtod(tok.c_str(), &end);
            if (tok.empty() || end != tok.c_str() + tok.size()) {
                throw RowError(origin + ": row " + std::to_string(row) + ": bad value '" + tok + "'");
            }
            v.push_back(d);
            pos = next + 1;
            if (next == values.size()) break;
        }
        if (static_cast<int>(v.size()) != file.dim) {
            throw RowError(origin + ": row " + std::to_string(row) + ": width " + std::to_string(v.size()) +
                           " does not match header dim " + std::to_string(file.dim));
        }
        file.by_ref[ref] = std::move(v);
    }
    return file;
}

void attach_path_contexts(SequenceCorpus& corpus, const PathContextFile& file, MissingPolicy missing) {
    corpus.features.has_paths = true;
    corpus.features.n_tokens = file.n_tokens;
    corpus.features.n_paths = file.n_paths;
    corpus.features.r_max = file.r_max;
    corpus.features.missing = missing;
    for (auto& seq : corpus.sequences) {
        for (auto& step : seq.steps) {
            auto it = step.code_ref.empty() ? file.by_ref.end() : file.by_ref.find(step.code_ref);
            if (it == file.by_ref.end()) {
                if (missing == MissingPolicy::error) {
                    throw DataError("code_ref '" + step.code_ref + "' (subject " + seq.subject_id +
                                    ") not present in path-context file and no missing-policy declared");
                }
                step.paths = PathContextSet{{PathTriple{0, 0, 0}}};
                corpus.features.missing_refs += 1;
                continue;
            }
            PathContextSet set;
            set.triples = it->second;
            if (static_cast<int>(set.triples.size()) > file.r_max) {
                corpus.features.truncated_triples +=
                    static_cast<std::int64_t>(set.triples.size()) - file.r_max;
                set.triples.resize(static_cast<std::size_t>(file.r_max));
            }
            step.paths = std::move(set);
        }
    }
}

void attach_dense_embeddings(SequenceCorpus& corpus, const DenseEmbeddingFile& file, MissingPolicy missing) {
    corpus.features.has_dense = true;
    corpus.features.d_ext = file.dim;
    corpus.features.missing = missing;
    for (auto& seq : corpus.sequences) {
        for (auto& step : seq.steps) {
            auto it = step.code_ref.empty() ? file.by_ref.end() : file.by_ref.find(step.code_ref);
            if (it == file.by_ref.end()) {
                if (missing == MissingPolicy::error) {
                    throw DataError("code_ref '" + step.code_ref + "' (subject " + seq.subject_id +
                                    ") not present in embedding file and no missing-policy declared");
                }
                step.embedding = DenseEmbedding{std::vector<double>(static_cast<std::size_t>(file.dim), 0.0)};
                corpus.features.missing_refs += 1;
                continue;
            }
            step.embedding = DenseEmbedding{it->second};
        }
    }
}

int sequence_length_percentile(const std::vector<InteractionRecord>& records, double p) {
    if (p <= 0.0 || p >= 1.0) throw DataError("percentile fraction must be in (0,1)");
    if (records.empty()) throw DataError("percentile of an empty corpus");
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& rec : records) {
        counts[{rec.subject_id, rec.assignment_id}] += 1;
    }
    std::vector<int> lengths;
    lengths.reserve(counts.size());
    for (const auto& [key, n] : counts) lengths.push_back(n);
    std::sort(lengths.begin(), lengths.end());
    const auto n = static_cast<double>(lengths.size());
    // 1e-9 slack keeps exact products like 0.95*20 from rounding up.
    auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    rank = std::min(std::max<std::size_t>(rank, 1), lengths.size());
    return lengths[rank - 1];
}

std::vector<std::string> assignments_in(const std::vector<InteractionRecord>& records) {
    std::set<std::string> ids;
    for (const auto& rec : records) ids.insert(rec.assignment_id);
    return {ids.begin(), ids.end()};
}

std::vector<InteractionRecord> filter_assignment(const std::vector<InteractionRecord>& records,
                                                 const std::string& assignment_id) {
    std::vector<InteractionRecord> out;
    for (const auto& rec : records) {
        if (rec.assignment_id == assignment_id) out.push_back(rec);
    }
    return out;
}

std::string serialize_corpus(const SequenceCorpus& corpus) {
    std::ostringstream out;
    out << "ktseq 1\n";
    out << "assignment " << esc(corpus.assignment_id) << "\n";
    out << "aligned " << (corpus.aligned ? 1 : 0) << "\n";
    out << "truncation " << (corpus.truncation == TruncationPolicy::earliest ? "earliest" : "latest") << "\n";
    out << "truncated_steps " << corpus.truncated_steps << "\n";
    out << "truncated_sequences " << corpus.truncated_sequences << "\n";
    out << "problems " << corpus.n_problems << "\n";
    for (const auto& pid : corpus.problem_ids) out << "problem " << esc(pid) << "\n";
    out << "features " << (corpus.features.has_paths ? 1 : 0) << " " << (corpus.features.has_dense ? 1 : 0)
        << " " << corpus.features.n_tokens << " " << corpus.features.n_paths << " " << corpus.features.r_max
        << " " << corpus.features.d_ext << " "
        << (corpus.features.missing == MissingPolicy::error ? "error" : "zero") << " "
        << corpus.features.truncated_triples << " " << corpus.features.missing_refs << "\n";
    out << "sequences " << corpus.sequences.size() << "\n";
    for (const auto& seq : corpus.sequences) {
        out << "seq " << esc(seq.subject_id) << " " << seq.steps.size() << "\n";
        for (const auto& step : seq.steps) {
            out << step.problem_index << " " << step.correct << " " << step.timestamp_ms << " "
                << esc(step.code_ref);
            if (step.paths) {
                out << " p";
                for (const auto& t : step.paths->triples) {
                    out << " " << t.start_token << "," << t.path << "," << t.end_token;
                }
            }
            if (step.embedding) {
                out << " e ";
                for (std::size_t i = 0; i < step.embedding->vector.size(); ++i) {
                    if (i) out << ",";
                    out << fmt_double(step.embedding->vector[i]);
                }
            }
            out << "\n";
        }
    }
    return out.str();
}

SequenceCorpus deserialize_corpus(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    auto fail = [&](const std::string& what) -> DataError {
        return DataError(origin + ": corrupt sequence cache: " + what);
    };
    std::string key, value;
    int version = 0;
    if (!(in >> key >> version) || key != "ktseq" || version != 1) throw fail("bad magic/version");

    SequenceCorpus corpus;
    if (!(in >> key >> value) || key != "assignment") throw fail("assignment");
    corpus.assignment_id = unesc(value);
    int aligned = 0;
    if (!(in >> key >> aligned) || key != "aligned") throw fail("aligned");
    corpus.aligned = aligned != 0;
    if (!(in >> key >> value) || key != "truncation") throw fail("truncation");
    corpus.truncation = value == "latest" ? TruncationPolicy::latest : TruncationPolicy::earliest;
    if (!(in >> key >> corpus.truncated_steps) || key != "truncated_steps") throw fail("truncated_steps");
    if (!(in >> key >> corpus.truncated_sequences) || key != "truncated_sequences") {
        throw fail("truncated_sequences");
    }
    if (!(in >> key >> corpus.n_problems) || key != "problems") throw fail("problems");
    for (int i = 0; i < corpus.n_problems; ++i) {
        if (!(in >> key >> value) || key != "problem") throw fail("problem list");
        corpus.problem_ids.push_back(unesc(value));
    }
    int has_paths = 0, has_dense = 0;
    std::string fmissing;
    if (!(in >> key >> has_paths >> has_dense >> corpus.features.n_tokens >> corpus.features.n_paths >>
          corpus.features.r_max >> corpus.features.d_ext >> fmissing >> corpus.features.truncated_triples >>
          corpus.features.missing_refs) ||
        key != "features") {
        throw fail("features");
    }
    corpus.features.has_paths = has_paths != 0;
    corpus.features.has_dense = has_dense != 0;
    corpus.features.missing = fmissing == "error" ? MissingPolicy::error : MissingPolicy::zero;
    std::size_t n_seqs = 0;
    if (!(in >> key >> n_seqs) || key != "sequences") throw fail("sequences");
    std::string line;
    std::getline(in, line);
    for (std::size_t s = 0; s < n_seqs; ++s) {
        if (!std::getline(in, line)) throw fail("missing sequence header");
        std::istringstream hs(line);
        std::string subject;
        std::size_t n_steps = 0;
        if (!(hs >> key >> subject >> n_steps) || key != "seq") throw fail("sequence header");
        StudentSequence seq;
        seq.subject_id = unesc(subject);
        seq.assignment_id = corpus.assignment_id;
        seq.n_problems = corpus.n_problems;
        for (std::size_t t = 0; t < n_steps; ++t) {
            if (!std::getline(in, line)) throw fail("missing step line");
            std::istringstream ls(line);
            SequenceStep step;
            std::string code_ref;
            if (!(ls >> step.problem_index >> step.correct >> step.timestamp_ms >> code_ref)) {
                throw fail("step line");
            }
            step.code_ref = unesc(code_ref);
            std::string tag;
            while (ls >> tag) {
                if (tag == "p") {
                    PathContextSet set;
                    std::string item;
                    while (ls >> item) {
                        if (item == "e") {
                            tag = "e";
                            break;
                        }
                        PathTriple pt;
                        if (std::sscanf(item.c_str(), "%d,%d,%d", &pt.start_token, &pt.path, &pt.end_token) != 3) {
                            throw fail("triple '" + item + "'");
                        }
                        set.triples.push_back(pt);
                    }
                    step.paths = std::move(set);
                    if (tag != "e") continue;
                }
                if (tag == "e") {
                    std::string values;
                    ls >> values;
                    DenseEmbedding emb;
                    std::size_t pos = 0;
                    while (pos < values.size()) {
                        auto next = values.find(',', pos);
                        if (next == std::string::npos) next = values.size();
                        emb.vector.push_back(std::strtod(values.substr(pos, next - pos).c_str(), nullptr));
                        pos = next + 1;
                        if (next == values.size()) break;
                    }
                    step.embedding = std::move(emb);
                } else {
                    throw fail("unknown step payload tag '" + tag + "'");
                }
            }
            seq.steps.push_back(std::move(step));
        }
        corpus.sequences.push_back(std::move(seq));
    }
    return corpus;
}

void save_corpus(const SequenceCorpus& corpus, const std::string& path) {
    write_file(path, serialize_corpus(corpus));
}

SequenceCorpus load_corpus(const std::string& path) {
    return deserialize_corpus(read_file(path), path);
}

std::string corpus_hash(const SequenceCorpus& corpus) {
    return rng::hex64(rng::fnv1a(serialize_corpus(corpus)));
}

}  // namespace kt::dataio
