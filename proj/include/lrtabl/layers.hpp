#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "lrtabl/matrix.hpp"

namespace lrtabl {

// BL: bilinear map. TABL: bilinear map with temporal attention.
// LRBL / LRTABL: the same layers with every weight matrix stored as a
// product of two rank-K factors.
enum class LayerKind { BL, TABL, LRBL, LRTABL };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
    LayerKind kind = LayerKind::BL;
    std::size_t d_in = 1;
    std::size_t t_in = 1;
    std::size_t d_out = 1;
    std::size_t t_out = 1;
    std::size_t rank = 0;  // only meaningful for LRBL / LRTABL
    Activation activation = Activation::identity;
    bool enforce_diag = true;  // LRTABL only

    bool low_rank() const { return kind == LayerKind::LRBL || kind == LayerKind::LRTABL; }
    bool has_attention() const { return kind == LayerKind::TABL || kind == LayerKind::LRTABL; }

    // Throws std::invalid_argument on zero dimensions or a missing rank.
    void validate() const;

    // Effective ranks of the three factorized matrices.
    std::size_t rank_w1() const;
    std::size_t rank_w2() const;
    std::size_t rank_w() const;

    std::string to_string() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Largest rank a rows x cols factorization can carry when K is requested.
std::size_t effective_rank(std::size_t requested, std::size_t rows, std::size_t cols);

template <typename T>
struct LayerParams {
    // Full variant.
    Matrix<T> w1;  // D' x D
    Matrix<T> w2;  // T x T'
    Matrix<T> w;   // T x T, diagonal held at 1/T (TABL)
    // Low-rank variant.
    Matrix<T> l1;  // D' x K1
    Matrix<T> r1;  // K1 x D
    Matrix<T> l2;  // T x K2
    Matrix<T> r2;  // K2 x T'
    Matrix<T> l;   // T x Kw
    Matrix<T> r;   // Kw x T
    Matrix<T> b;   // D' x T'
    T lambda{0};

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

// Visits every trainable tensor of the layer in a fixed order. Matrices
// absent for the layer kind are skipped; lambda is reported as a span of
// length one for attention kinds.
template <typename T, typename Fn>
void for_each_tensor(const LayerSpec& spec, LayerParams<T>& p, Fn&& fn) {
    if (spec.low_rank()) {
        fn("L1", p.l1.values());
        fn("R1", p.r1.values());
        fn("L2", p.l2.values());
        fn("R2", p.r2.values());
        if (spec.has_attention()) {
            fn("L", p.l.values());
            fn("R", p.r.values());
        }
    } else {
        fn("W1", p.w1.values());
        fn("W2", p.w2.values());
        if (spec.has_attention()) fn("W", p.w.values());
    }
    fn("B", p.b.values());
    if (spec.has_attention()) fn("lambda", std::span<T>(&p.lambda, 1));
}

template <typename T, typename Fn>
void for_each_tensor(const LayerSpec& spec, const LayerParams<T>& p, Fn&& fn) {
    auto& mp = const_cast<LayerParams<T>&>(p);
    for_each_tensor(spec, mp, [&](std::string_view name, std::span<T> v) {
        fn(name, std::span<const T>(v.data(), v.size()));
    });
}

// Intermediates of one forward pass.
template <typename T>
struct LayerCache {
    bool filled = false;
    Matrix<T> x;      // input
    Matrix<T> r1x;    // R1 X            (low-rank)
    Matrix<T> xbar;   // W1 X
    Matrix<T> xbar_l; // Xbar L          (LRTABL)
    Matrix<T> e;      // attention logits
    Matrix<T> a;      // attention mask
    Matrix<T> xt;     // attended representation
    Matrix<T> xt_l2;  // Xt L2           (low-rank)
    Matrix<T> z;      // pre-activation output
};

template <typename T>
struct LayerForward {
    Matrix<T> y;
    LayerCache<T> cache;
};

template <typename T>
struct LayerBackward {
    Matrix<T> dx;
    LayerParams<T> grads;
};

template <typename T>
LayerParams<T> init_params(const LayerSpec& spec, std::uint64_t seed);

// Zero-valued parameters with the spec's shapes.
template <typename T>
LayerParams<T> zero_params(const LayerSpec& spec);

// Checks every stored matrix has the shape the spec requires.
template <typename T>
void check_params(const LayerSpec& spec, const LayerParams<T>& p);

template <typename T>
LayerForward<T> forward(const LayerSpec& spec, const LayerParams<T>& p, const Matrix<T>& x);

template <typename T>
LayerBackward<T> backward(const LayerSpec& spec, const LayerParams<T>& p, const LayerCache<T>& cache,
                          const Matrix<T>& dy);

// Clamps lambda to [0,1] and rewrites the fixed 1/T diagonal of W.
template <typename T>
void project_constraints(const LayerSpec& spec, LayerParams<T>& p);

// Mixing matrix the attention step effectively uses: W, or L R with the
// diagonal correction applied when enforce_diag is set.
template <typename T>
Matrix<T> effective_mixing_matrix(const LayerSpec& spec, const LayerParams<T>& p);

std::uint64_t param_count(const LayerSpec& spec);

// Multiply-accumulate counts of the three processing steps.
struct FlopCounts {
    std::uint64_t xbar = 0;
    std::uint64_t e = 0;
    std::uint64_t y = 0;
    std::uint64_t total() const { return xbar + e + y; }
    friend bool operator==(const FlopCounts&, const FlopCounts&) = default;
};

FlopCounts flop_count(const LayerSpec& spec);

template <typename T>
Matrix<T> materialize_lowrank(const Matrix<T>& left, const Matrix<T>& right);

template <typename T>
struct Factorization {
    Matrix<T> left;   // rows x k, columns scaled by singular values
    Matrix<T> right;  // k x cols, orthonormal rows
    std::vector<T> singular_values;
};

// Best rank-k approximation via one-sided Jacobi SVD. k is capped at
// min(rows, cols).
template <typename T>
Factorization<T> factor_from_full(const Matrix<T>& w, std::size_t k);

}  // namespace lrtabl
