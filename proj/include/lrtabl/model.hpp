#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrtabl/layers.hpp"

namespace lrtabl {

inline constexpr std::size_t kNumClasses = 3;

// Class order used everywhere, including confusion-matrix axes.
enum class Direction : int { up = 0, stationary = 1, down = 2 };

enum class StructureId { A, B, C, custom };
enum class Variant { full, lowrank };

StructureId parse_structure(std::string_view s);
std::string_view structure_name(StructureId s);
Variant parse_variant(std::string_view s);
std::string_view variant_name(Variant v);

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    StructureId structure = StructureId::custom;
    Variant variant = Variant::full;
    std::size_t rank = 0;

    // Throws ShapeError when adjacent layers do not chain or the head is not C x 1.
    void validate() const;
    std::string to_string() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

NetworkSpec structure_spec(StructureId id, Variant variant, std::size_t rank);

template <typename T>
struct Network {
    NetworkSpec spec;
    std::vector<LayerParams<T>> params;

    std::uint64_t param_count() const;

    friend bool operator==(const Network&, const Network&) = default;
};

template <typename T>
Network<T> build_structure(StructureId id, Variant variant, std::size_t rank, std::uint64_t seed);

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t seed);

std::uint64_t network_param_count(const NetworkSpec& spec);

template <typename T>
struct NetworkForward {
    std::vector<T> probs;
    std::vector<T> logits;
    std::vector<LayerCache<T>> caches;
};

template <typename T>
NetworkForward<T> network_forward(const Network<T>& net, const Matrix<T>& x);

// Reverse pass from a gradient w.r.t. the softmax probabilities.
template <typename T>
std::vector<LayerParams<T>> network_backward(const Network<T>& net, const NetworkForward<T>& fwd,
                                             std::span<const T> dprobs);

// argmax with ties resolved toward the lowest index.
template <typename T>
int predict_class(std::span<const T> probs);

template <typename T>
struct LossResult {
    double loss = 0.0;
    std::vector<std::vector<T>> dprobs;
};

inline constexpr double kLossEpsilon = 1e6;
inline constexpr double kProbabilityFloor = 1e-12;

// Batch mean of -(eps / N_c) log y_c for the true class c of each sample.
template <typename T>
LossResult<T> weighted_entropy_loss(std::span<const std::vector<T>> probs, std::span<const int> truths,
                                    const std::array<std::size_t, kNumClasses>& class_counts,
                                    double epsilon = kLossEpsilon);

struct Metrics {
    std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
    double accuracy = 0.0;
    std::array<double, kNumClasses> precision{};
    std::array<double, kNumClasses> recall{};
    std::array<double, kNumClasses> f1{};
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;

    std::uint64_t total() const;
    void merge(const Metrics& other);  // adds confusion counts and refreshes derived values
    void recompute();
};

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truths);

}  // namespace lrtabl
