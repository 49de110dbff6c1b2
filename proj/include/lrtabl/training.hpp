#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lrtabl/data.hpp"
#include "lrtabl/model.hpp"
#include "lrtabl/random.hpp"

namespace lrtabl {

class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

enum class OptimizerKind { adam, sgd };

OptimizerKind parse_optimizer(std::string_view s);
std::string_view optimizer_name(OptimizerKind k);

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t batch_size = 256;
    int max_epochs = 200;
    int patience = 20;
    std::uint64_t seed = 1;
    bool shuffle = true;
    double validation_fraction = 0.1;

    void validate() const;
};

template <typename T>
struct OptimizerState {
    std::vector<std::vector<T>> m;  // one entry per trainable tensor, network order
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const Network<T>& net);

// One Adam or SGD update followed by constraint projection. Throws
// NumericalError naming the first parameter with a non-finite gradient;
// parameters are left untouched in that case.
template <typename T>
void optimizer_step(Network<T>& net, const std::vector<LayerParams<T>>& grads, OptimizerState<T>& state,
                    const TrainConfig& config);

// Number of constraint violations (lambda outside [0,1], TABL diagonal not 1/T).
template <typename T>
std::size_t audit_constraints(const Network<T>& net);

struct BatchGradient {
    double loss = 0.0;  // batch mean weighted loss
    std::vector<LayerParams<float>> grads;
};

// Loss and summed parameter gradients over `batch`.
BatchGradient batch_gradient(const Network<float>& net, std::span<const Sample* const> batch,
                             const std::array<std::size_t, kNumClasses>& class_counts);

template <typename T>
Metrics evaluate(const Network<T>& net, const Dataset& data);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    Metrics val;
};

struct TrainState {
    Network<float> net;
    OptimizerState<float> opt;
    Rng rng;
    int epoch = 0;  // completed epochs
    Network<float> best;
    double best_f1 = -1.0;
    int best_epoch = 0;
    int stale_epochs = 0;
    bool stopped = false;
    std::vector<EpochRecord> history;
};

struct TrainHooks {
    // Called after every optimizer step with (state, epoch, batch index).
    std::function<void(const TrainState&, int, std::size_t)> after_step;
    std::function<void(const TrainState&)> after_epoch;
};

TrainState start_training(Network<float> net, const TrainConfig& config);

// Runs epochs until `until_epoch` epochs are complete, max_epochs is hit or
// patience runs out. `class_counts` weight the loss.
void run_epochs(TrainState& state, const Dataset& train, const Dataset& validation,
                const std::array<std::size_t, kNumClasses>& class_counts, const TrainConfig& config,
                int until_epoch, const TrainHooks& hooks = {});

struct TrainResult {
    Network<float> net;  // best-validation parameters
    std::vector<EpochRecord> history;
    TrainState state;
};

// Holds out the trailing validation_fraction of `data` for early stopping.
TrainResult train(Network<float> net, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks = {});

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace lrtabl
