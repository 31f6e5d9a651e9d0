#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kt/dataio.hpp"
#include "kt/models.hpp"
#include "kt/tensor.hpp"

namespace kt::training {

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double learning_rate = 5e-4;
    int batch_size = 32;
    int max_epochs = 150;
    int patience = 10;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t init_seed = 7;
    std::uint64_t shuffle_seed = 11;
    double dropout = 0.0;

    void validate() const;
};

enum class StopReason { patience, max_epochs };

struct TrainResult {
    models::ModelParams params;  // snapshot at the best validation epoch
    int best_epoch = 0;          // 1-based
    std::vector<double> train_loss;
    std::vector<double> val_auc;
    StopReason stopped_reason = StopReason::max_epochs;
    int epochs_run = 0;
};

// Mean next-step binary cross-entropy: BCE(y_t[q_{t+1}], x_{t+1}) averaged
// over t in [1, T-1]. Matches the graph loss node bit for bit.
double next_step_loss(const tensor::Tensor& predictions, const dataio::StudentSequence& seq);

// Validation metric hook; defaults to pooled next-step AUC. Injectable so the
// early-stopping logic is testable against a scripted metric.
using EvalFn = std::function<double(const models::ModelParams&, const dataio::SeqRefs&)>;

// Seeded mini-batch training with early stopping on validation AUC. Bitwise
// reproducible given (init_seed, shuffle_seed, data, cfg). Throws
// NumericError naming the epoch if the loss diverges.
TrainResult train(const models::ModelVariant& variant, models::ModelDims dims,
                  const dataio::SeqRefs& train_set, const dataio::SeqRefs& val_set, const TrainConfig& cfg,
                  const std::string& log_path = "", const EvalFn& eval_metric = {});

// Pooled next-step (score, label) pairs over all sequences, dropout off.
void collect_predictions(const models::ModelParams& params, const dataio::SeqRefs& seqs,
                         std::vector<double>& scores, std::vector<int>& labels);

double evaluate_auc(const models::ModelParams& params, const dataio::SeqRefs& seqs);

dataio::SeqRefs refs_of(const std::vector<dataio::StudentSequence>& seqs);

}  // namespace kt::training
