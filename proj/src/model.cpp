#include "lrtabl/model.hpp"

#include <cmath>
#include <sstream>

namespace lrtabl {

StructureId parse_structure(std::string_view s) {
    if (s == "A" || s == "a") return StructureId::A;
    if (s == "B" || s == "b") return StructureId::B;
    if (s == "C" || s == "c") return StructureId::C;
    throw std::invalid_argument("unknown structure '" + std::string(s) + "' (expected A, B or C)");
}

std::string_view structure_name(StructureId s) {
    switch (s) {
        case StructureId::A: return "A";
        case StructureId::B: return "B";
        case StructureId::C: return "C";
        case StructureId::custom: return "custom";
    }
    return "unknown";
}

Variant parse_variant(std::string_view s) {
    if (s == "full") return Variant::full;
    if (s == "lowrank") return Variant::lowrank;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected full or lowrank)");
}

std::string_view variant_name(Variant v) { return v == Variant::full ? "full" : "lowrank"; }

void NetworkSpec::validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].validate();
        if (i + 1 < layers.size()) {
            const auto& a = layers[i];
            const auto& b = layers[i + 1];
            if (a.d_out != b.d_in || a.t_out != b.t_in) {
                throw ShapeError("layer " + std::to_string(i + 1) + " output does not feed layer " +
                                 std::to_string(i + 2));
            }
        }
    }
    if (layers.back().d_out != kNumClasses || layers.back().t_out != 1) {
        throw ShapeError("final layer must produce a " + std::to_string(kNumClasses) + "x1 output");
    }
}

std::string NetworkSpec::to_string() const {
    std::ostringstream os;
    os << "structure=" << structure_name(structure) << ";variant=" << variant_name(variant) << ";rank=" << rank;
    for (const auto& l : layers) os << ";" << l.to_string();
    return os.str();
}

NetworkSpec structure_spec(StructureId id, Variant variant, std::size_t rank) {
    if (variant == Variant::lowrank && rank == 0) throw std::invalid_argument("lowrank variant requires rank >= 1");
    const bool lr = variant == Variant::lowrank;
    const LayerKind hidden = lr ? LayerKind::LRBL : LayerKind::BL;
    const LayerKind head = lr ? LayerKind::LRTABL : LayerKind::TABL;
    const std::size_t k = lr ? rank : 0;

    NetworkSpec spec;
    spec.structure = id;
    spec.variant = variant;
    spec.rank = k;
    auto add = [&](LayerKind kind, std::size_t d_out, std::size_t t_out, Activation act) {
        const std::size_t d_in = spec.layers.empty() ? 40 : spec.layers.back().d_out;
        const std::size_t t_in = spec.layers.empty() ? 10 : spec.layers.back().t_out;
        spec.layers.push_back(LayerSpec{kind, d_in, t_in, d_out, t_out, k, act, true});
    };
    switch (id) {
        case StructureId::A:
            break;
        case StructureId::B:
            add(hidden, 120, 5, Activation::relu);
            break;
        case StructureId::C:
            add(hidden, 60, 10, Activation::relu);
            add(hidden, 120, 5, Activation::relu);
            break;
        default:
            throw std::invalid_argument("unknown structure id");
    }
    add(head, kNumClasses, 1, Activation::identity);
    spec.validate();
    return spec;
}

std::uint64_t network_param_count(const NetworkSpec& spec) {
    std::uint64_t n = 0;
    for (const auto& l : spec.layers) n += param_count(l);
    return n;
}

template <typename T>
std::uint64_t Network<T>::param_count() const {
    return network_param_count(spec);
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network<T> net;
    net.spec = spec;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        net.params.push_back(init_params<T>(spec.layers[i], seed * 1000003ULL + i));
    }
    return net;
}

template <typename T>
Network<T> build_structure(StructureId id, Variant variant, std::size_t rank, std::uint64_t seed) {
    return build_network<T>(structure_spec(id, variant, rank), seed);
}

template <typename T>
NetworkForward<T> network_forward(const Network<T>& net, const Matrix<T>& x) {
    NetworkForward<T> out;
    out.caches.reserve(net.spec.layers.size());
    Matrix<T> h = x;
    for (std::size_t i = 0; i < net.spec.layers.size(); ++i) {
        auto f = forward(net.spec.layers[i], net.params[i], h);
        h = std::move(f.y);
        out.caches.push_back(std::move(f.cache));
    }
    out.logits.assign(h.values().begin(), h.values().end());
    T mx = out.logits[0];
    for (T v : out.logits) mx = std::max(mx, v);
    T sum{0};
    out.probs.resize(out.logits.size());
    for (std::size_t c = 0; c < out.logits.size(); ++c) {
        out.probs[c] = std::exp(out.logits[c] - mx);
        sum += out.probs[c];
    }
    for (auto& p : out.probs) p /= sum;
    return out;
}

template <typename T>
std::vector<LayerParams<T>> network_backward(const Network<T>& net, const NetworkForward<T>& fwd,
                                             std::span<const T> dprobs) {
    const std::size_t n = fwd.probs.size();
    if (dprobs.size() != n) throw ShapeError("network_backward: gradient length mismatch");
    T dot{0};
    for (std::size_t c = 0; c < n; ++c) dot += dprobs[c] * fwd.probs[c];
    Matrix<T> grad(n, 1);
    for (std::size_t c = 0; c < n; ++c) grad(c, 0) = fwd.probs[c] * (dprobs[c] - dot);

    std::vector<LayerParams<T>> grads(net.spec.layers.size());
    for (std::size_t i = net.spec.layers.size(); i-- > 0;) {
        auto b = backward(net.spec.layers[i], net.params[i], fwd.caches[i], grad);
        grads[i] = std::move(b.grads);
        grad = std::move(b.dx);
    }
    return grads;
}

template <typename T>
int predict_class(std::span<const T> probs) {
    int best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
        if (probs[c] > probs[best]) best = static_cast<int>(c);
    }
    return best;
}

template <typename T>
LossResult<T> weighted_entropy_loss(std::span<const std::vector<T>> probs, std::span<const int> truths,
                                    const std::array<std::size_t, kNumClasses>& class_counts, double epsilon) {
    if (probs.empty()) throw std::invalid_argument("weighted_entropy_loss: empty batch");
    if (probs.size() != truths.size()) throw std::invalid_argument("weighted_entropy_loss: batch size mismatch");
    for (auto n : class_counts) {
        if (n == 0) throw std::invalid_argument("weighted_entropy_loss: class count must be >= 1");
    }
    LossResult<T> out;
    out.dprobs.assign(probs.size(), std::vector<T>(kNumClasses, T{0}));
    const double inv_batch = 1.0 / static_cast<double>(probs.size());
    double total = 0.0;
    for (std::size_t s = 0; s < probs.size(); ++s) {
        const int c = truths[s];
        if (c < 0 || c >= static_cast<int>(kNumClasses) || probs[s].size() != kNumClasses) {
            throw std::out_of_range("weighted_entropy_loss: class index " + std::to_string(c) + " out of range");
        }
        const double weight = epsilon / static_cast<double>(class_counts[c]);
        const double p = std::max(static_cast<double>(probs[s][c]), kProbabilityFloor);
        total += -weight * std::log(p);
        out.dprobs[s][c] = static_cast<T>(-weight / p * inv_batch);
    }
    out.loss = total * inv_batch;
    return out;
}

std::uint64_t Metrics::total() const {
    std::uint64_t n = 0;
    for (const auto& row : confusion)
        for (auto v : row) n += v;
    return n;
}

void Metrics::recompute() {
    const std::uint64_t n = total();
    std::uint64_t correct = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) correct += confusion[c][c];
    accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    macro_precision = macro_recall = macro_f1 = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::uint64_t predicted = 0, actual = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            predicted += confusion[k][c];
            actual += confusion[c][k];
        }
        const double tp = static_cast<double>(confusion[c][c]);
        precision[c] = predicted ? tp / static_cast<double>(predicted) : 0.0;
        recall[c] = actual ? tp / static_cast<double>(actual) : 0.0;
        const double pr = precision[c] + recall[c];
        f1[c] = pr > 0 ? 2.0 * precision[c] * recall[c] / pr : 0.0;
        macro_precision += precision[c];
        macro_recall += recall[c];
        macro_f1 += f1[c];
    }
    macro_precision /= kNumClasses;
    macro_recall /= kNumClasses;
    macro_f1 /= kNumClasses;
}

void Metrics::merge(const Metrics& other) {
    for (std::size_t i = 0; i < kNumClasses; ++i)
        for (std::size_t j = 0; j < kNumClasses; ++j) confusion[i][j] += other.confusion[i][j];
    recompute();
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths) {
    if (predictions.empty()) throw std::invalid_argument("compute_metrics: empty input");
    if (predictions.size() != truths.size()) throw std::invalid_argument("compute_metrics: length mismatch");
    Metrics m;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], t = truths[i];
        if (p < 0 || t < 0 || p >= static_cast<int>(kNumClasses) || t >= static_cast<int>(kNumClasses)) {
            throw std::out_of_range("compute_metrics: label out of range at position " + std::to_string(i));
        }
        ++m.confusion[t][p];
    }
    m.recompute();
    return m;
}

#define LRTABL_INSTANTIATE(T)                                                                                  \
    template struct Network<T>;                                                                               \
    template Network<T> build_network<T>(const NetworkSpec&, std::uint64_t);                                  \
    template Network<T> build_structure<T>(StructureId, Variant, std::size_t, std::uint64_t);                 \
    template NetworkForward<T> network_forward<T>(const Network<T>&, const Matrix<T>&);                       \
    template std::vector<LayerParams<T>> network_backward<T>(const Network<T>&, const NetworkForward<T>&,     \
                                                             std::span<const T>);                             \
    template int predict_class<T>(std::span<const T>);                                                        \
    template LossResult<T> weighted_entropy_loss<T>(std::span<const std::vector<T>>, std::span<const int>,    \
                                                    const std::array<std::size_t, kNumClasses>&, double);

LRTABL_INSTANTIATE(float)
LRTABL_INSTANTIATE(double)

#undef LRTABL_INSTANTIATE

}  // namespace lrtabl
