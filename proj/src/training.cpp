#include "lrtabl/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "lrtabl/csv.hpp"

namespace lrtabl {

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must lie in [0,1)");
    if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (!(validation_fraction >= 0 && validation_fraction < 1)) {
        throw std::invalid_argument("validation_fraction must lie in [0,1)");
    }
}

template <typename T>
OptimizerState<T> make_optimizer_state(const Network<T>& net) {
    OptimizerState<T> st;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        for_each_tensor(net.spec.layers[i], net.params[i], [&](std::string_view, std::span<const T> v) {
            st.m.emplace_back(v.size(), T{0});
            st.v.emplace_back(v.size(), T{0});
        });
    }
    return st;
}

template <typename T>
void optimizer_step(Network<T>& net, const std::vector<LayerParams<T>>& grads, OptimizerState<T>& state,
                    const TrainConfig& config) {
    if (grads.size() != net.params.size()) throw ShapeError("optimizer_step: gradient count mismatch");

    std::vector<std::span<const T>> g;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for_each_tensor(net.spec.layers[i], grads[i], [&](std::string_view name, std::span<const T> v) {
            for (T x : v) {
                if (!std::isfinite(x)) {
                    throw NumericalError("non-finite gradient in layer " + std::to_string(i + 1) + " parameter " +
                                         std::string(name));
                }
            }
            g.push_back(v);
        });
    }
    if (state.m.size() != g.size()) state = make_optimizer_state(net);

    ++state.step;
    const double lr = config.learning_rate;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    std::size_t t = 0;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        for_each_tensor(net.spec.layers[i], net.params[i], [&](std::string_view, std::span<T> p) {
            const auto& gt = g[t];
            if (gt.size() != p.size()) throw ShapeError("optimizer_step: gradient shape mismatch");
            auto& m = state.m[t];
            auto& v = state.v[t];
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (config.optimizer == OptimizerKind::sgd) {
                    p[k] = static_cast<T>(p[k] - lr * gt[k]);
                    continue;
                }
                m[k] = static_cast<T>(config.beta1 * m[k] + (1.0 - config.beta1) * gt[k]);
                v[k] = static_cast<T>(config.beta2 * v[k] + (1.0 - config.beta2) * gt[k] * gt[k]);
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                p[k] = static_cast<T>(p[k] - lr * mhat / (std::sqrt(vhat) + config.eps_adam));
            }
            ++t;
        });
        project_constraints(net.spec.layers[i], net.params[i]);
    }
}

template <typename T>
std::size_t audit_constraints(const Network<T>& net) {
    std::size_t violations = 0;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        const auto& spec = net.spec.layers[i];
        const auto& p = net.params[i];
        if (!spec.has_attention()) continue;
        if (!(p.lambda >= T(0) && p.lambda <= T(1))) ++violations;
        if (spec.kind == LayerKind::TABL) {
            const T target = T(1) / static_cast<T>(spec.t_in);
            for (std::size_t j = 0; j < spec.t_in; ++j)
                if (p.w(j, j) != target) ++violations;
        }
    }
    return violations;
}

template <typename T>
Metrics evaluate(const Network<T>& net, const Dataset& data) {
    std::vector<int> preds, truths;
    preds.reserve(data.size());
    truths.reserve(data.size());
    for (const auto& s : data.samples) {
        const auto fwd = [&] {
            if constexpr (std::is_same_v<T, float>) return network_forward(net, s.window);
            else return network_forward(net, s.window.template cast<T>());
        }();
        preds.push_back(predict_class<T>(fwd.probs));
        truths.push_back(s.label);
    }
    return compute_metrics(preds, truths);
}

namespace {

template <typename T>
void accumulate(const LayerSpec& spec, LayerParams<T>& dst, const LayerParams<T>& src) {
    std::vector<std::span<const T>> parts;
    for_each_tensor(spec, src, [&](std::string_view, std::span<const T> v) { parts.push_back(v); });
    std::size_t i = 0;
    for_each_tensor(spec, dst, [&](std::string_view, std::span<T> v) {
        const auto& s = parts[i++];
        for (std::size_t k = 0; k < v.size(); ++k) v[k] += s[k];
    });
}

}  // namespace

BatchGradient batch_gradient(const Network<float>& net, std::span<const Sample* const> batch,
                             const std::array<std::size_t, kNumClasses>& class_counts) {
    std::vector<NetworkForward<float>> fwds;
    std::vector<std::vector<float>> probs;
    std::vector<int> truths;
    for (const Sample* s : batch) {
        fwds.push_back(network_forward(net, s->window));
        probs.push_back(fwds.back().probs);
        truths.push_back(s->label);
    }
    const auto loss = weighted_entropy_loss<float>(probs, truths, class_counts);
    BatchGradient out;
    out.loss = loss.loss;
    const auto& layers = net.spec.layers;
    for (const auto& l : layers) out.grads.push_back(zero_params<float>(l));
    for (std::size_t k = 0; k < fwds.size(); ++k) {
        const auto g = network_backward<float>(net, fwds[k], loss.dprobs[k]);
        for (std::size_t i = 0; i < layers.size(); ++i) accumulate(layers[i], out.grads[i], g[i]);
    }
    return out;
}

TrainState start_training(Network<float> net, const TrainConfig& config) {
    config.validate();
    TrainState st;
    st.opt = make_optimizer_state(net);
    st.rng = Rng(config.seed);
    st.best = net;
    st.net = std::move(net);
    return st;
}

void run_epochs(TrainState& st, const Dataset& train, const Dataset& validation,
                const std::array<std::size_t, kNumClasses>& class_counts, const TrainConfig& config,
                int until_epoch, const TrainHooks& hooks) {
    config.validate();
    if (train.samples.empty()) throw DataError("training set is empty");
    const auto& first = train.samples.front().window;
    const auto& in = st.net.spec.layers.front();
    if (first.rows() != in.d_in || first.cols() != in.t_in) {
        throw ShapeError("training windows " + first.shape_string() + " do not match network input");
    }
    std::array<std::size_t, kNumClasses> counts = class_counts;
    for (auto& c : counts) c = std::max<std::size_t>(c, 1);

    const Dataset& monitor = validation.samples.empty() ? train : validation;
    const int last = std::min(until_epoch, config.max_epochs);

    while (st.epoch < last && !st.stopped) {
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (config.shuffle) st.rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            std::vector<const Sample*> batch;
            for (std::size_t k = begin; k < end; ++k) batch.push_back(&train.samples[order[k]]);
            BatchGradient bg;
            try {
                bg = batch_gradient(st.net, batch, counts);
            } catch (const NumericalError& e) {
                throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(st.epoch + 1) +
                                      ", batch " + std::to_string(batch_index + 1));
            }
            if (!std::isfinite(bg.loss)) {
                throw DivergenceError("non-finite loss at epoch " + std::to_string(st.epoch + 1) + ", batch " +
                                      std::to_string(batch_index + 1));
            }
            loss_sum += bg.loss * static_cast<double>(end - begin);
            const auto& grads = bg.grads;
            try {
                optimizer_step(st.net, grads, st.opt, config);
            } catch (const NumericalError& e) {
                throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(st.epoch + 1) +
                                      ", batch " + std::to_string(batch_index + 1));
            }
            if (hooks.after_step) hooks.after_step(st, st.epoch + 1, batch_index);
        }

        ++st.epoch;
        EpochRecord rec;
        rec.epoch = st.epoch;
        rec.train_loss = loss_sum / static_cast<double>(train.size());
        rec.val = evaluate(st.net, monitor);
        if (rec.val.macro_f1 > st.best_f1) {
            st.best_f1 = rec.val.macro_f1;
            st.best_epoch = st.epoch;
            st.best = st.net;
            st.stale_epochs = 0;
        } else if (++st.stale_epochs >= config.patience) {
            st.stopped = true;
        }
        st.history.push_back(rec);
        if (hooks.after_epoch) hooks.after_epoch(st);
    }
}

TrainResult train(Network<float> net, const Dataset& data, const TrainConfig& config, const TrainHooks& hooks) {
    auto parts = holdout_tail(data, config.validation_fraction);
    TrainResult result;
    result.state = start_training(std::move(net), config);
    run_epochs(result.state, parts.train, parts.test, data.class_counts, config, config.max_epochs, hooks);
    result.net = result.state.best;
    result.history = result.state.history;
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    CsvWriter csv({"epoch", "train_loss", "val_acc", "val_p", "val_r", "val_f1"});
    for (const auto& r : history) {
        csv.row({std::to_string(r.epoch), format_real(r.train_loss), format_real(r.val.accuracy),
                 format_real(r.val.macro_precision), format_real(r.val.macro_recall), format_real(r.val.macro_f1)});
    }
    return csv.str();
}

template OptimizerState<float> make_optimizer_state<float>(const Network<float>&);
template OptimizerState<double> make_optimizer_state<double>(const Network<double>&);
template void optimizer_step<float>(Network<float>&, const std::vector<LayerParams<float>>&, OptimizerState<float>&,
                                    const TrainConfig&);
template void optimizer_step<double>(Network<double>&, const std::vector<LayerParams<double>>&,
                                     OptimizerState<double>&, const TrainConfig&);
template std::size_t audit_constraints<float>(const Network<float>&);
template std::size_t audit_constraints<double>(const Network<double>&);
template Metrics evaluate<float>(const Network<float>&, const Dataset&);
template Metrics evaluate<double>(const Network<double>&, const Dataset&);

}  // namespace lrtabl
