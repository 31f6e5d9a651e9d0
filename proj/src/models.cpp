#include "kt/models.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace kt::models {

using tensor::Axis;
using tensor::Graph;
using tensor::Tensor;

int ModelDims::xt_width(const ModelVariant& v) const {
    return v.xt == XtEncoding::correctness ? 2 : 2 * n_problems;
}

int ModelDims::path_repr_width(const ModelVariant& v) const { return 3 * d_emb + xt_width(v); }

int ModelDims::code_width(const ModelVariant& v) const {
    switch (v.kind) {
        case VariantKind::dkt: return 0;
        case VariantKind::codedkt: return v.w0_enabled ? d_emb : path_repr_width(v);
        case VariantKind::eckt_style: return v.w0_enabled ? d_emb : d_ext;
    }
    return 0;
}

int ModelDims::input_width(const ModelVariant& v) const { return 2 * n_problems + code_width(v); }

const char* variant_name(VariantKind kind) {
    switch (kind) {
        case VariantKind::dkt: return "dkt";
        case VariantKind::codedkt: return "codedkt";
        case VariantKind::eckt_style: return "eckt";
    }
    return "?";
}

VariantKind variant_from_name(const std::string& name) {
    if (name == "dkt") return VariantKind::dkt;
    if (name == "codedkt") return VariantKind::codedkt;
    if (name == "eckt") return VariantKind::eckt_style;
    throw UsageError("unknown variant '" + name + "' (expected dkt|codedkt|eckt)");
}

namespace {

struct TensorSpec {
    std::string name;
    tensor::Shape shape;
    int fan_in;
};

std::vector<TensorSpec> tensor_specs(const ModelVariant& v, const ModelDims& d) {
    std::vector<TensorSpec> specs;
    const int din = d.input_width(v);
    const int h = d.hidden;
    const int q = d.n_problems;
    for (const char* gate : {"i", "f", "g", "o"}) {
        specs.push_back({std::string("lstm.w_x") + gate, {din, h}, din});
        specs.push_back({std::string("lstm.w_h") + gate, {h, h}, h});
        specs.push_back({std::string("lstm.b_") + gate, {1, h}, h});
    }
    specs.push_back({"out.w", {h, q}, h});
    specs.push_back({"out.b", {1, q}, h});
    if (v.kind == VariantKind::codedkt) {
        const int w = d.path_repr_width(v);
        specs.push_back({"attn.e_start", {d.n_tokens, d.d_emb}, d.d_emb});
        specs.push_back({"attn.e_path", {d.n_paths, d.d_emb}, d.d_emb});
        specs.push_back({"attn.e_end", {d.n_tokens, d.d_emb}, d.d_emb});
        specs.push_back({"attn.w_a", {w, 1}, w});
        if (v.w0_enabled) specs.push_back({"attn.w_0", {w, d.d_emb}, w});
    }
    if (v.kind == VariantKind::eckt_style && v.w0_enabled) {
        specs.push_back({"ext.w_0", {d.d_ext, d.d_emb}, d.d_ext});
    }
    return specs;
}

void validate_dims(const ModelVariant& v, const ModelDims& d) {
    if (d.n_problems <= 0) throw ShapeError("model needs n_problems > 0");
    if (d.hidden <= 0) throw ShapeError("model needs hidden > 0");
    if (v.kind == VariantKind::codedkt) {
        if (d.d_emb <= 0 || d.n_tokens <= 0 || d.n_paths <= 0 || d.r_max <= 0) {
            throw ShapeError("codedkt needs positive d_emb, n_tokens, n_paths, r_max");
        }
    }
    if (v.kind == VariantKind::eckt_style) {
        if (d.d_ext <= 0) throw ShapeError("eckt needs d_ext > 0");
        if (v.w0_enabled && d.d_emb <= 0) throw ShapeError("eckt with projection needs d_emb > 0");
    }
}

Tensor one_hot_row(int width, int index) {
    Tensor t = Tensor::zeros({1, width});
    t.values[static_cast<std::size_t>(index)] = 1.0;
    return t;
}

// Correctness (or interaction) vector appended to every path representation.
Tensor xt_row(const ModelVariant& v, const ModelDims& d, int correct, int problem_index) {
    if (v.xt == XtEncoding::correctness) {
        return one_hot_row(2, correct ? 1 : 0);
    }
    return one_hot_row(2 * d.n_problems, (correct ? d.n_problems : 0) + problem_index);
}

// Graph-side handles for every parameter tensor.
std::map<std::string, int> declare_params(Graph& g, const ModelParams& params) {
    std::map<std::string, int> ids;
    for (const auto& [name, t] : params.tensors) {
        ids.emplace(name, g.input(name));
    }
    return ids;
}

// [R,1] column -> [1,R] row, expressed as per-row lookups + concat so the
// whole encoder stays inside the fixed primitive set.
int transpose_column(Graph& g, int col, int rows) {
    std::vector<int> cells;
    cells.reserve(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        cells.push_back(g.lookup(col, {r}));
    }
    return cells.size() == 1 ? cells[0] : g.concat(cells, 1);
}

struct PathStep {
    std::vector<std::int64_t> starts, paths, ends;
    int r = 0;
};

PathStep path_step(const dataio::SequenceStep& step, const std::string& subject) {
    if (!step.paths || step.paths->triples.empty()) {
        throw DataError("codedkt requires a nonempty path-context set per step (subject " + subject + ")");
    }
    PathStep ps;
    for (const auto& t : step.paths->triples) {
        ps.starts.push_back(t.start_token);
        ps.paths.push_back(t.path);
        ps.ends.push_back(t.end_token);
    }
    ps.r = static_cast<int>(ps.starts.size());
    return ps;
}

// Path representations for one submission: e = [E_s; E_o; E_q; x_t] rows,
// plus the per-path score column e * w_a. Returns {e or projected e, scores}.
struct EncodedStep {
    int repr = -1;    // [R, W] path representations
    int proj = -1;    // [R, code_width] aggregation payload
    int scores = -1;  // [R, 1]
};

EncodedStep encode_step(Graph& g, const std::map<std::string, int>& pid, const ModelVariant& v,
                        const PathStep& ps, const Tensor& xt) {
    EncodedStep enc;
    const int es = g.lookup(pid.at("attn.e_start"), ps.starts);
    const int eo = g.lookup(pid.at("attn.e_path"), ps.paths);
    const int eq = g.lookup(pid.at("attn.e_end"), ps.ends);
    const int ones = g.constant(Tensor::full({ps.r, 1}, 1.0));
    const int xmat = g.matmul(ones, g.constant(xt));  // row-replicated correctness vector
    enc.repr = g.concat({es, eo, eq, xmat}, 1);
    enc.scores = g.matmul(enc.repr, pid.at("attn.w_a"));
    if (v.w0_enabled && v.w0_place == W0Placement::per_path) {
        enc.proj = g.matmul(enc.repr, pid.at("attn.w_0"));
    } else {
        enc.proj = enc.repr;
    }
    return enc;
}

}  // namespace

tensor::Bindings ModelParams::bindings() const {
    tensor::Bindings b;
    for (const auto& [name, t] : tensors) b.emplace(name, t);
    return b;
}

ModelParams init_params(const ModelVariant& variant, const ModelDims& dims, std::uint64_t seed) {
    validate_dims(variant, dims);
    ModelParams params;
    params.variant = variant;
    params.dims = dims;
    params.init_seed = seed;
    const auto root = rng::CounterRng::from_seed(seed).derive("init");
    for (const auto& spec : tensor_specs(variant, dims)) {
        if (spec.fan_in <= 0) throw ShapeError("zero-width layer for " + spec.name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        const auto stream = root.derive(spec.name);
        Tensor t = Tensor::zeros(spec.shape);
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            t.values[i] = -bound + 2.0 * bound * stream.uniform(i);
        }
        params.tensors.emplace(spec.name, std::move(t));
    }
    return params;
}

SequenceGraph build_sequence_graph(const dataio::StudentSequence& seq, const ModelParams& params,
                                   const ForwardOptions& opts) {
    const auto& v = params.variant;
    const auto& d = params.dims;
    validate_dims(v, d);
    const int T = static_cast<int>(seq.steps.size());
    if (T == 0) throw DataError("cannot build a graph over an empty sequence");
    const int Q = d.n_problems;
    for (const auto& step : seq.steps) {
        if (step.problem_index < 0 || step.problem_index >= Q) {
            throw ShapeError("problem index " + std::to_string(step.problem_index) + " outside [0," +
                             std::to_string(Q) + ")");
        }
    }

    SequenceGraph sg;
    Graph& g = sg.graph;
    auto pid = declare_params(g, params);

    Axis axis = v.axis_mode;
    if (v.kind == VariantKind::codedkt && axis == Axis::time && T == 1) {
        sg.warnings.push_back("time-axis attention on a single-step sequence degenerates to path-axis");
        axis = Axis::path;
    }

    // Code vectors per step.
    std::vector<int> code_nodes(static_cast<std::size_t>(T), -1);
    if (v.kind == VariantKind::codedkt) {
        std::vector<EncodedStep> encoded;
        std::vector<PathStep> psteps;
        encoded.reserve(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            const auto& step = seq.steps[static_cast<std::size_t>(t)];
            auto ps = path_step(step, seq.subject_id);
            if (ps.r > d.r_max) {
                throw ShapeError("path set of size " + std::to_string(ps.r) + " exceeds r_max " +
                                 std::to_string(d.r_max));
            }
            encoded.push_back(encode_step(g, pid, v, ps, xt_row(v, d, step.correct, step.problem_index)));
            psteps.push_back(std::move(ps));
        }
        if (axis == Axis::path) {
            // Normalize within each submission.
            for (int t = 0; t < T; ++t) {
                const int row = transpose_column(g, encoded[static_cast<std::size_t>(t)].scores,
                                                 psteps[static_cast<std::size_t>(t)].r);
                const int alpha = g.softmax_axis(row, Axis::path);
                sg.alpha_nodes.push_back(alpha);
                int vt = g.matmul(alpha, encoded[static_cast<std::size_t>(t)].proj);
                if (v.w0_enabled && v.w0_place == W0Placement::post_aggregation) {
                    vt = g.matmul(vt, pid.at("attn.w_0"));
                }
                code_nodes[static_cast<std::size_t>(t)] = vt;
            }
        } else {
            // Normalize each path slot across the whole sequence: scores are
            // padded to [T, r_max] and softmaxed down the step axis, so every
            // step's weights depend on every other step's submission.
            std::vector<int> padded_rows(static_cast<std::size_t>(T));
            std::vector<int> padded_proj(static_cast<std::size_t>(T));
            const int code_w = v.w0_enabled && v.w0_place == W0Placement::per_path ? d.d_emb
                                                                                   : d.path_repr_width(v);
            for (int t = 0; t < T; ++t) {
                const int r = psteps[static_cast<std::size_t>(t)].r;
                int row = transpose_column(g, encoded[static_cast<std::size_t>(t)].scores, r);
                int proj = encoded[static_cast<std::size_t>(t)].proj;
                if (r < d.r_max) {
                    const int pad = g.constant(Tensor::full({1, d.r_max - r}, -1e30));
                    row = g.concat({row, pad}, 1);
                    const int zero_rows = g.constant(Tensor::zeros({d.r_max - r, code_w}));
                    proj = g.concat({proj, zero_rows}, 0);
                }
                padded_rows[static_cast<std::size_t>(t)] = row;
                padded_proj[static_cast<std::size_t>(t)] = proj;
            }
            const int score_mat = T == 1 ? padded_rows[0] : g.concat(padded_rows, 0);  // [T, r_max]
            const int alpha = g.softmax_axis(score_mat, Axis::time);
            sg.alpha_nodes.push_back(alpha);
            for (int t = 0; t < T; ++t) {
                const int arow = g.lookup(alpha, {t});
                int vt = g.matmul(arow, padded_proj[static_cast<std::size_t>(t)]);
                if (v.w0_enabled && v.w0_place == W0Placement::post_aggregation) {
                    vt = g.matmul(vt, pid.at("attn.w_0"));
                }
                code_nodes[static_cast<std::size_t>(t)] = vt;
            }
        }
    } else if (v.kind == VariantKind::eckt_style) {
        for (int t = 0; t < T; ++t) {
            const auto& step = seq.steps[static_cast<std::size_t>(t)];
            if (!step.embedding) {
                throw DataError("eckt requires dense embeddings per step (subject " + seq.subject_id + ")");
            }
            if (static_cast<int>(step.embedding->vector.size()) != d.d_ext) {
                throw ShapeError("embedding width " + std::to_string(step.embedding->vector.size()) +
                                 " does not match d_ext " + std::to_string(d.d_ext));
            }
            int vt = g.constant(Tensor::row(step.embedding->vector));
            if (v.w0_enabled) vt = g.matmul(vt, pid.at("ext.w_0"));
            code_nodes[static_cast<std::size_t>(t)] = vt;
        }
    }

    // LSTM over fused step inputs.
    int h_prev = g.constant(Tensor::zeros({1, d.hidden}));
    int c_prev = g.constant(Tensor::zeros({1, d.hidden}));
    std::vector<int> pred_rows(static_cast<std::size_t>(T));
    const bool use_dropout = opts.training && opts.has_dropout_rng && d.dropout > 0.0;
    for (int t = 0; t < T; ++t) {
        const auto& step = seq.steps[static_cast<std::size_t>(t)];
        const int u = g.constant(one_hot_row(2 * Q, (step.correct ? Q : 0) + step.problem_index));
        const int in_t = code_nodes[static_cast<std::size_t>(t)] >= 0
                             ? g.concat({u, code_nodes[static_cast<std::size_t>(t)]}, 1)
                             : u;
        auto gate = [&](const char* wx, const char* wh, const char* b) {
            return g.add(g.add(g.matmul(in_t, pid.at(wx)), g.matmul(h_prev, pid.at(wh))), pid.at(b));
        };
        const int i_t = g.sigmoid(gate("lstm.w_xi", "lstm.w_hi", "lstm.b_i"));
        const int f_t = g.sigmoid(gate("lstm.w_xf", "lstm.w_hf", "lstm.b_f"));
        const int g_t = g.tanh_fn(gate("lstm.w_xg", "lstm.w_hg", "lstm.b_g"));
        const int o_t = g.sigmoid(gate("lstm.w_xo", "lstm.w_ho", "lstm.b_o"));
        c_prev = g.add(g.mul(f_t, c_prev), g.mul(i_t, g_t));
        h_prev = g.mul(o_t, g.tanh_fn(c_prev));
        int h_out = h_prev;
        if (use_dropout) {
            h_out = g.dropout(h_out, d.dropout, static_cast<std::uint64_t>(t));
        }
        pred_rows[static_cast<std::size_t>(t)] = g.sigmoid(g.add(g.matmul(h_out, pid.at("out.w")), pid.at("out.b")));
    }
    sg.predictions = T == 1 ? pred_rows[0] : g.concat(pred_rows, 0);

    // Next-step targets: row t is scored against step t+1.
    if (T >= 2) {
        Tensor target = Tensor::zeros({T, Q});
        Tensor mask = Tensor::zeros({T, Q});
        for (int t = 0; t + 1 < T; ++t) {
            const auto& next = seq.steps[static_cast<std::size_t>(t + 1)];
            target.at2(t, next.problem_index) = next.correct;
            mask.at2(t, next.problem_index) = 1.0;
        }
        sg.loss = sg.graph.bce_mask(sg.predictions, sg.graph.constant(std::move(target)),
                                    sg.graph.constant(std::move(mask)));
        sg.valid_steps = T - 1;
    }
    return sg;
}

tensor::Tensor dkt_forward(const dataio::StudentSequence& seq, const ModelParams& params,
                           const ForwardOptions& opts) {
    auto sg = build_sequence_graph(seq, params, opts);
    const rng::CounterRng* rng = opts.training && opts.has_dropout_rng ? &opts.dropout_rng : nullptr;
    return tensor::forward(sg.graph, params.bindings(), sg.predictions, rng);
}

tensor::Tensor encode_paths(const dataio::PathContextSet& paths, int correct, int problem_index,
                            const ModelParams& params) {
    if (params.variant.kind != VariantKind::codedkt) {
        throw ShapeError("encode_paths needs a codedkt parameter set");
    }
    if (paths.triples.empty()) throw DataError("encode_paths: empty path set and no missing-policy");
    Graph g;
    auto pid = declare_params(g, params);
    dataio::SequenceStep step;
    step.paths = paths;
    step.correct = correct;
    step.problem_index = problem_index;
    auto ps = path_step(step, "<encode_paths>");
    auto enc = encode_step(g, pid, params.variant, ps,
                           xt_row(params.variant, params.dims, correct, problem_index));
    const int row = transpose_column(g, enc.scores, ps.r);
    const int alpha = g.softmax_axis(row, Axis::path);
    int vt = g.matmul(alpha, enc.proj);
    if (params.variant.w0_enabled && params.variant.w0_place == W0Placement::post_aggregation) {
        vt = g.matmul(vt, pid.at("attn.w_0"));
    }
    return tensor::forward(g, params.bindings(), vt);
}

namespace {

std::string hex_double(double v) {
    return rng::hex64(std::bit_cast<std::uint64_t>(v));
}

double double_from_hex(const std::string& s, const std::string& origin) {
    if (s.size() != 16) throw DataError(origin + ": bad double payload '" + s + "'");
    std::uint64_t bits = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else throw DataError(origin + ": bad hex digit in payload");
        bits = (bits << 4) | static_cast<std::uint64_t>(d);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
    std::ostringstream out;
    const auto& v = params.variant;
    const auto& d = params.dims;
    out << "ktckpt 1\n";
    out << "variant " << variant_name(v.kind) << "\n";
    out << "axis " << (v.axis_mode == Axis::path ? "path" : "time") << "\n";
    out << "w0 " << (v.w0_enabled ? 1 : 0) << "\n";
    out << "xt " << (v.xt == XtEncoding::correctness ? "correctness" : "interaction") << "\n";
    out << "w0_place " << (v.w0_place == W0Placement::per_path ? "per_path" : "post_aggregation") << "\n";
    out << "seed " << params.init_seed << "\n";
    char drop[40];
    std::snprintf(drop, sizeof(drop), "%.17g", d.dropout);
    out << "dims " << d.n_problems << " " << d.hidden << " " << d.d_emb << " " << d.n_tokens << " "
        << d.n_paths << " " << d.r_max << " " << d.d_ext << " " << drop << "\n";
    out << "tensors " << params.tensors.size() << "\n";
    for (const auto& [name, t] : params.tensors) {
        out << "tensor " << name << " " << t.rank();
        for (auto e : t.shape) out << " " << e;
        out << "\n";
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            if (i) out << " ";
            out << hex_double(t.values[i]);
        }
        out << "\n";
    }
    return out.str();
}

ModelParams deserialize_checkpoint(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    auto fail = [&](const std::string& what) -> DataError {
        return DataError(origin + ": corrupt checkpoint: " + what);
    };
    std::string key, value;
    int version = 0;
    if (!(in >> key >> version) || key != "ktckpt" || version != 1) throw fail("bad magic/version");
    ModelParams params;
    if (!(in >> key >> value) || key != "variant") throw fail("variant");
    params.variant.kind = variant_from_name(value);
    if (!(in >> key >> value) || key != "axis") throw fail("axis");
    params.variant.axis_mode = value == "time" ? Axis::time : Axis::path;
    int w0 = 0;
    if (!(in >> key >> w0) || key != "w0") throw fail("w0");
    params.variant.w0_enabled = w0 != 0;
    if (!(in >> key >> value) || key != "xt") throw fail("xt");
    params.variant.xt = value == "interaction" ? XtEncoding::interaction : XtEncoding::correctness;
    if (!(in >> key >> value) || key != "w0_place") throw fail("w0_place");
    params.variant.w0_place =
        value == "post_aggregation" ? W0Placement::post_aggregation : W0Placement::per_path;
    if (!(in >> key >> params.init_seed) || key != "seed") throw fail("seed");
    auto& d = params.dims;
    if (!(in >> key >> d.n_problems >> d.hidden >> d.d_emb >> d.n_tokens >> d.n_paths >> d.r_max >> d.d_ext >>
          d.dropout) ||
        key != "dims") {
        throw fail("dims");
    }
    std::size_t n_tensors = 0;
    if (!(in >> key >> n_tensors) || key != "tensors") throw fail("tensor count");
    for (std::size_t i = 0; i < n_tensors; ++i) {
        std::string name;
        int rank = 0;
        if (!(in >> key >> name >> rank) || key != "tensor" || rank < 1 || rank > 3) throw fail("tensor header");
        tensor::Shape shape;
        for (int r = 0; r < rank; ++r) {
            std::int64_t e = 0;
            if (!(in >> e) || e <= 0) throw fail("tensor shape");
            shape.push_back(e);
        }
        const auto n = tensor::numel(shape);
        std::vector<double> values(static_cast<std::size_t>(n));
        for (auto& vref : values) {
            std::string hex;
            if (!(in >> hex)) throw fail("tensor payload");
            vref = double_from_hex(hex, origin);
        }
        params.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
    // Shape check against the declared variant/dims.
    for (const auto& spec : tensor_specs(params.variant, params.dims)) {
        auto it = params.tensors.find(spec.name);
        if (it == params.tensors.end()) throw fail("missing tensor " + spec.name);
        if (it->second.shape != spec.shape) throw fail("shape mismatch for " + spec.name);
    }
    return params;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
    dataio::write_file(path, serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(dataio::read_file(path), path);
}

std::string params_hash(const ModelParams& params) {
    return rng::hex64(rng::fnv1a(serialize_checkpoint(params)));
}

}  // namespace kt::models
