#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kt/dataio.hpp"
#include "kt/graph.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt::models {

enum class VariantKind { dkt, codedkt, eckt_style };

// Width of the correctness vector concatenated into each path representation:
// the 2-wide current-step correctness one-hot, or the full 2Q interaction
// one-hot. Both readings of the ambiguous original are supported.
enum class XtEncoding { correctness, interaction };

// Where the optional projection applies: to each path representation before
// attention-weighted aggregation, or to the aggregated code vector.
enum class W0Placement { per_path, post_aggregation };

struct ModelVariant {
    VariantKind kind = VariantKind::dkt;
    tensor::Axis axis_mode = tensor::Axis::path;
    bool w0_enabled = false;
    XtEncoding xt = XtEncoding::correctness;
    W0Placement w0_place = W0Placement::per_path;
};

struct ModelDims {
    int n_problems = 0;  // Q
    int hidden = 32;     // LSTM width
    int d_emb = 32;      // token/path embedding width
    int n_tokens = 0;
    int n_paths = 0;
    int r_max = 8;
    int d_ext = 0;       // dense embedding width (eckt_style)
    double dropout = 0.0;

    int xt_width(const ModelVariant& v) const;
    int path_repr_width(const ModelVariant& v) const;  // 3*d_emb + xt_width
    int code_width(const ModelVariant& v) const;       // width of v_t after optional projection
    int input_width(const ModelVariant& v) const;      // LSTM step input width
};

struct ModelParams {
    ModelVariant variant;
    ModelDims dims;
    std::uint64_t init_seed = 0;
    std::map<std::string, tensor::Tensor> tensors;

    tensor::Bindings bindings() const;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a counter RNG
// streamed per tensor name: same seed, same bits, regardless of build order.
ModelParams init_params(const ModelVariant& variant, const ModelDims& dims, std::uint64_t seed);

std::string params_hash(const ModelParams& params);

struct ForwardOptions {
    bool training = false;  // enables dropout when a rng is supplied
    rng::CounterRng dropout_rng{};
    bool has_dropout_rng = false;
};

// A fully built per-sequence graph: predictions is the [T, Q] node, loss the
// scalar masked next-step BCE node (-1 when T < 2).
struct SequenceGraph {
    tensor::Graph graph;
    int predictions = -1;
    int loss = -1;
    int valid_steps = 0;             // number of next-step targets
    std::vector<int> alpha_nodes;    // PATH: one [1,R] node per step; TIME: single [T,R_max] node
    std::vector<std::string> warnings;
};

SequenceGraph build_sequence_graph(const dataio::StudentSequence& seq, const ModelParams& params,
                                   const ForwardOptions& opts = {});

// Runs the sequence through the model; rows are per-step predictions over all
// problems, where row t scores correctness at step t+1.
tensor::Tensor dkt_forward(const dataio::StudentSequence& seq, const ModelParams& params,
                           const ForwardOptions& opts = {});

// Score-attended path aggregation for one submission, always normalized over
// the path axis (the per-step op; the TIME variant exists only at sequence
// level inside build_sequence_graph).
tensor::Tensor encode_paths(const dataio::PathContextSet& paths, int correct, int problem_index,
                            const ModelParams& params);

// Checkpoint container: dims, variant flags, seed, raw tensor payloads.
// Doubles are stored as hex bit patterns, so round-trips are exact.
std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::string_view text, const std::string& origin);
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

const char* variant_name(VariantKind kind);
VariantKind variant_from_name(const std::string& name);

}  // namespace kt::models
