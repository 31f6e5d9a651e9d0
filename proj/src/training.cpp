#include "kt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kt/evalproto.hpp"
#include "kt/graph.hpp"

namespace kt::training {

using models::ModelParams;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw DataError("learning_rate must be > 0");
    if (patience < 1) throw DataError("patience must be >= 1");
    if (max_epochs < 1) throw DataError("max_epochs must be >= 1");
    if (batch_size < 1) throw DataError("batch_size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0,1)");
}

double next_step_loss(const tensor::Tensor& predictions, const dataio::StudentSequence& seq) {
    const auto T = static_cast<std::int64_t>(seq.steps.size());
    if (T < 2) throw DataError("next_step_loss needs a sequence of length >= 2");
    if (predictions.rank() != 2 || predictions.shape[0] != T) {
        throw ShapeError("predictions shape " + tensor::shape_str(predictions.shape) +
                         " does not cover " + std::to_string(T) + " steps");
    }
    double sum = 0.0;
    for (std::int64_t t = 0; t + 1 < T; ++t) {
        const auto& next = seq.steps[static_cast<std::size_t>(t + 1)];
        const double p = std::clamp(predictions.at2(t, next.problem_index), 1e-12, 1.0 - 1e-12);
        sum += next.correct ? -std::log(p) : -std::log(1.0 - p);
    }
    return sum / static_cast<double>(T - 1);
}

void collect_predictions(const ModelParams& params, const dataio::SeqRefs& seqs,
                         std::vector<double>& scores, std::vector<int>& labels) {
    for (const auto* seq : seqs) {
        if (seq->steps.size() < 2) continue;
        const auto preds = models::dkt_forward(*seq, params);
        for (std::size_t t = 0; t + 1 < seq->steps.size(); ++t) {
            const auto& next = seq->steps[t + 1];
            scores.push_back(preds.at2(static_cast<std::int64_t>(t), next.problem_index));
            labels.push_back(next.correct);
        }
    }
}

double evaluate_auc(const ModelParams& params, const dataio::SeqRefs& seqs) {
    std::vector<double> scores;
    std::vector<int> labels;
    collect_predictions(params, seqs, scores, labels);
    return evalproto::auc(scores, labels);
}

dataio::SeqRefs refs_of(const std::vector<dataio::StudentSequence>& seqs) {
    dataio::SeqRefs refs;
    refs.reserve(seqs.size());
    for (const auto& s : seqs) refs.push_back(&s);
    return refs;
}

namespace {

struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    std::int64_t step = 0;
};

void apply_update(ModelParams& params, const std::map<std::string, std::vector<double>>& grads,
                  const TrainConfig& cfg, AdamState& adam) {
    if (cfg.optimizer == Optimizer::sgd) {
        for (auto& [name, t] : params.tensors) {
            const auto& g = grads.at(name);
            for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= cfg.learning_rate * g[i];
        }
        return;
    }
    adam.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
    for (auto& [name, t] : params.tensors) {
        const auto& g = grads.at(name);
        auto& m = adam.m[name];
        auto& v = adam.v[name];
        if (m.empty()) m.assign(t.values.size(), 0.0);
        if (v.empty()) v.assign(t.values.size(), 0.0);
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

}  // namespace

TrainResult train(const models::ModelVariant& variant, models::ModelDims dims,
                  const dataio::SeqRefs& train_set, const dataio::SeqRefs& val_set, const TrainConfig& cfg,
                  const std::string& log_path, const EvalFn& eval_metric) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw DataError("train() needs nonempty train and validation sets");
    }
    dims.dropout = cfg.dropout;

    // Only sequences with a next step carry a training signal.
    dataio::SeqRefs trainable;
    for (const auto* s : train_set) {
        if (s->steps.size() >= 2) trainable.push_back(s);
    }
    if (trainable.empty()) throw DataError("train(): no training sequence has length >= 2");

    TrainResult result;
    result.params = models::init_params(variant, dims, cfg.init_seed);
    ModelParams current = result.params;
    AdamState adam;
    const auto shuffle_root = rng::CounterRng::from_seed(cfg.shuffle_seed);

    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        log << "epoch,train_loss,val_auc,best_so_far\n";
    }

    double best_auc = -1.0;
    int bad_epochs = 0;
    std::vector<std::size_t> order(trainable.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng::RngStream shuffle(shuffle_root.derive("epoch").derive(static_cast<std::uint64_t>(epoch)));
        shuffle.shuffle(order);

        double epoch_loss_sum = 0.0;
        double epoch_weight = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::map<std::string, std::vector<double>> grad_acc;
            for (const auto& [name, t] : current.tensors) grad_acc[name].assign(t.values.size(), 0.0);

            double batch_weight = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                batch_weight += static_cast<double>(trainable[order[k]]->steps.size() - 1);
            }

            for (std::size_t k = start; k < end; ++k) {
                const auto* seq = trainable[order[k]];
                models::ForwardOptions opts;
                opts.training = true;
                opts.has_dropout_rng = cfg.dropout > 0.0;
                opts.dropout_rng = shuffle_root.derive("dropout")
                                       .derive(static_cast<std::uint64_t>(epoch))
                                       .derive(order[k]);
                auto sg = models::build_sequence_graph(*seq, current, opts);
                const rng::CounterRng* rng = opts.has_dropout_rng ? &opts.dropout_rng : nullptr;
                double loss;
                try {
                    loss = tensor::forward(sg.graph, current.bindings(), sg.loss, rng).values[0];
                } catch (const NumericError& e) {
                    throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (subject " +
                                       seq->subject_id + "): " + e.what());
                }
                const double w = static_cast<double>(sg.valid_steps);
                epoch_loss_sum += loss * w;
                epoch_weight += w;

                auto grads = tensor::backward(sg.graph, sg.loss);
                // Batch loss is the valid-step-weighted mean of per-sequence
                // mean losses, i.e. total BCE over the batch / total targets.
                const double scale = w / batch_weight;
                for (auto& [name, gt] : grads) {
                    auto& acc = grad_acc[name];
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * gt.values[i];
                }
            }
            apply_update(current, grad_acc, cfg, adam);
        }

        const double train_loss = epoch_loss_sum / epoch_weight;
        if (!std::isfinite(train_loss)) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
        }
        const double auc = eval_metric ? eval_metric(current, val_set) : evaluate_auc(current, val_set);
        result.train_loss.push_back(train_loss);
        result.val_auc.push_back(auc);
        result.epochs_run = epoch;

        if (auc > best_auc) {
            best_auc = auc;
            result.best_epoch = epoch;
            result.params = current;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }
        if (log.is_open()) {
            log << epoch << "," << train_loss << "," << auc << "," << best_auc << "\n";
        }
        if (bad_epochs >= cfg.patience) {
            result.stopped_reason = StopReason::patience;
            return result;
        }
    }
    result.stopped_reason = StopReason::max_epochs;
    return result;
}

}  // namespace kt::training
