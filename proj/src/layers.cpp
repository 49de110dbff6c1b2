#include "lrtabl/layers.hpp"

#include <algorithm>
#include <sstream>

#include "lrtabl/random.hpp"

namespace lrtabl {

std::string_view layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::BL: return "BL";
        case LayerKind::TABL: return "TABL";
        case LayerKind::LRBL: return "LRBL";
        case LayerKind::LRTABL: return "LRTABL";
    }
    return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
    if (name == "BL") return LayerKind::BL;
    if (name == "TABL") return LayerKind::TABL;
    if (name == "LRBL") return LayerKind::LRBL;
    if (name == "LRTABL") return LayerKind::LRTABL;
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

std::size_t effective_rank(std::size_t requested, std::size_t rows, std::size_t cols) {
    return std::min({requested, rows, cols});
}

void LayerSpec::validate() const {
    if (d_in == 0 || t_in == 0 || d_out == 0 || t_out == 0) {
        throw std::invalid_argument("layer dimensions must be positive: " + to_string());
    }
    if (low_rank() && rank == 0) throw std::invalid_argument("low-rank layer requires rank >= 1");
    if (activation != Activation::identity && activation != Activation::relu) {
        throw std::invalid_argument("unknown activation id");
    }
}

std::size_t LayerSpec::rank_w1() const { return effective_rank(rank, d_out, d_in); }
std::size_t LayerSpec::rank_w2() const { return effective_rank(rank, t_in, t_out); }
std::size_t LayerSpec::rank_w() const { return effective_rank(rank, t_in, t_in); }

std::string LayerSpec::to_string() const {
    std::ostringstream os;
    os << layer_kind_name(kind) << ' ' << d_in << 'x' << t_in << "->" << d_out << 'x' << t_out;
    if (low_rank()) os << " K=" << rank;
    os << ' ' << activation_name(activation);
    if (kind == LayerKind::LRTABL) os << " diag=" << (enforce_diag ? 1 : 0);
    return os.str();
}

namespace {

template <typename T>
Matrix<T> uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix<T> m(rows, cols);
    for (auto& v : m.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return m;
}

template <typename T>
Matrix<T> xavier(Rng& rng, std::size_t rows, std::size_t cols) {
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return uniform_matrix<T>(rng, rows, cols, -s, s);
}

template <typename T>
void require_shape(const char* name, const Matrix<T>& m, std::size_t rows, std::size_t cols) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError(std::string("parameter ") + name + " has shape " + m.shape_string() + ", expected (" +
                         std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
}

// (L R)_{jj} for every j, without forming L R.
template <typename T>
std::vector<T> lowrank_diagonal(const Matrix<T>& l, const Matrix<T>& r) {
    std::vector<T> d(l.rows(), T{0});
    for (std::size_t j = 0; j < l.rows(); ++j)
        for (std::size_t k = 0; k < l.cols(); ++k) d[j] += l(j, k) * r(k, j);
    return d;
}

}  // namespace

template <typename T>
LayerParams<T> zero_params(const LayerSpec& spec) {
    spec.validate();
    LayerParams<T> p;
    if (spec.low_rank()) {
        p.l1 = Matrix<T>(spec.d_out, spec.rank_w1());
        p.r1 = Matrix<T>(spec.rank_w1(), spec.d_in);
        p.l2 = Matrix<T>(spec.t_in, spec.rank_w2());
        p.r2 = Matrix<T>(spec.rank_w2(), spec.t_out);
        if (spec.has_attention()) {
            p.l = Matrix<T>(spec.t_in, spec.rank_w());
            p.r = Matrix<T>(spec.rank_w(), spec.t_in);
        }
    } else {
        p.w1 = Matrix<T>(spec.d_out, spec.d_in);
        p.w2 = Matrix<T>(spec.t_in, spec.t_out);
        if (spec.has_attention()) p.w = Matrix<T>(spec.t_in, spec.t_in);
    }
    p.b = Matrix<T>(spec.d_out, spec.t_out);
    return p;
}

template <typename T>
LayerParams<T> init_params(const LayerSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    LayerParams<T> p;
    const auto tin = static_cast<double>(spec.t_in);
    if (spec.low_rank()) {
        p.l1 = xavier<T>(rng, spec.d_out, spec.rank_w1());
        p.r1 = xavier<T>(rng, spec.rank_w1(), spec.d_in);
        p.l2 = xavier<T>(rng, spec.t_in, spec.rank_w2());
        p.r2 = xavier<T>(rng, spec.rank_w2(), spec.t_out);
        if (spec.has_attention()) {
            // Nonnegative factors whose product has expected entries 1/T.
            const double hi = 2.0 * std::sqrt(1.0 / (tin * static_cast<double>(spec.rank_w())));
            p.l = uniform_matrix<T>(rng, spec.t_in, spec.rank_w(), 0.0, hi);
            p.r = uniform_matrix<T>(rng, spec.rank_w(), spec.t_in, 0.0, hi);
        }
    } else {
        p.w1 = xavier<T>(rng, spec.d_out, spec.d_in);
        p.w2 = xavier<T>(rng, spec.t_in, spec.t_out);
        if (spec.has_attention()) p.w = Matrix<T>(spec.t_in, spec.t_in, static_cast<T>(1.0 / tin));
    }
    p.b = Matrix<T>(spec.d_out, spec.t_out);
    p.lambda = spec.has_attention() ? T(0.5) : T(0);
    return p;
}

template <typename T>
void check_params(const LayerSpec& spec, const LayerParams<T>& p) {
    if (spec.low_rank()) {
        require_shape("L1", p.l1, spec.d_out, spec.rank_w1());
        require_shape("R1", p.r1, spec.rank_w1(), spec.d_in);
        require_shape("L2", p.l2, spec.t_in, spec.rank_w2());
        require_shape("R2", p.r2, spec.rank_w2(), spec.t_out);
        if (spec.has_attention()) {
            require_shape("L", p.l, spec.t_in, spec.rank_w());
            require_shape("R", p.r, spec.rank_w(), spec.t_in);
        }
    } else {
        require_shape("W1", p.w1, spec.d_out, spec.d_in);
        require_shape("W2", p.w2, spec.t_in, spec.t_out);
        if (spec.has_attention()) require_shape("W", p.w, spec.t_in, spec.t_in);
    }
    require_shape("B", p.b, spec.d_out, spec.t_out);
}

template <typename T>
LayerForward<T> forward(const LayerSpec& spec, const LayerParams<T>& p, const Matrix<T>& x) {
    if (x.rows() != spec.d_in || x.cols() != spec.t_in) {
        throw ShapeError("layer input " + x.shape_string() + " does not match " + spec.to_string());
    }
    if (!all_finite(x)) throw NumericalError("layer input contains non-finite values");
    check_params(spec, p);

    LayerForward<T> out;
    auto& c = out.cache;
    c.x = x;
    if (spec.low_rank()) {
        c.r1x = matmul(p.r1, x);
        c.xbar = matmul(p.l1, c.r1x);
    } else {
        c.xbar = matmul(p.w1, x);
    }

    if (spec.has_attention()) {
        if (spec.low_rank()) {
            c.xbar_l = matmul(c.xbar, p.l);
            c.e = matmul(c.xbar_l, p.r);
            if (spec.enforce_diag) {
                const auto diag = lowrank_diagonal(p.l, p.r);
                const T target = T(1) / static_cast<T>(spec.t_in);
                for (std::size_t j = 0; j < spec.t_in; ++j) {
                    const T corr = target - diag[j];
                    for (std::size_t i = 0; i < c.e.rows(); ++i) c.e(i, j) += c.xbar(i, j) * corr;
                }
            }
        } else {
            c.e = matmul(c.xbar, p.w);
        }
        c.a = row_softmax(c.e);
        const T lam = p.lambda;
        c.xt = Matrix<T>(c.xbar.rows(), c.xbar.cols());
        for (std::size_t i = 0; i < c.xt.size(); ++i) {
            const T xb = c.xbar.data()[i];
            c.xt.data()[i] = lam * (xb * c.a.data()[i]) + (T(1) - lam) * xb;
        }
    } else {
        c.xt = c.xbar;
    }

    if (spec.low_rank()) {
        c.xt_l2 = matmul(c.xt, p.l2);
        c.z = add(matmul(c.xt_l2, p.r2), p.b);
    } else {
        c.z = add(matmul(c.xt, p.w2), p.b);
    }
    out.y = apply_elementwise(c.z, spec.activation);
    c.filled = true;
    return out;
}

template <typename T>
LayerBackward<T> backward(const LayerSpec& spec, const LayerParams<T>& p, const LayerCache<T>& c,
                          const Matrix<T>& dy) {
    if (!c.filled) throw std::logic_error("backward called without a matching forward cache");
    if (c.x.rows() != spec.d_in || c.x.cols() != spec.t_in || c.z.rows() != spec.d_out ||
        c.z.cols() != spec.t_out) {
        throw std::logic_error("stale cache: shapes do not match " + spec.to_string());
    }
    if (dy.rows() != spec.d_out || dy.cols() != spec.t_out) {
        throw ShapeError("upstream gradient " + dy.shape_string() + " does not match " + spec.to_string());
    }

    LayerBackward<T> out;
    auto& g = out.grads;
    g = zero_params<T>(spec);

    Matrix<T> dz(dy.rows(), dy.cols());
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dz.data()[i] = dy.data()[i] * activation_derivative(spec.activation, c.z.data()[i]);
    }
    g.b = dz;

    Matrix<T> dxt;
    if (spec.low_rank()) {
        g.r2 = matmul(transpose(c.xt_l2), dz);
        const Matrix<T> dxt_l2 = matmul(dz, transpose(p.r2));
        g.l2 = matmul(transpose(c.xt), dxt_l2);
        dxt = matmul(dxt_l2, transpose(p.l2));
    } else {
        g.w2 = matmul(transpose(c.xt), dz);
        dxt = matmul(dz, transpose(p.w2));
    }

    Matrix<T> dxbar;
    if (spec.has_attention()) {
        const T lam = p.lambda;
        dxbar = Matrix<T>(dxt.rows(), dxt.cols());
        Matrix<T> da(dxt.rows(), dxt.cols());
        T dlam{0};
        for (std::size_t i = 0; i < dxt.size(); ++i) {
            const T xb = c.xbar.data()[i], a = c.a.data()[i], d = dxt.data()[i];
            dlam += d * (xb * a - xb);
            dxbar.data()[i] = d * (lam * a + (T(1) - lam));
            da.data()[i] = lam * d * xb;
        }
        g.lambda = dlam;

        // Softmax Jacobian per row: dE_ij = A_ij (dA_ij - sum_k dA_ik A_ik).
        Matrix<T> de(da.rows(), da.cols());
        for (std::size_t i = 0; i < da.rows(); ++i) {
            T dot{0};
            for (std::size_t k = 0; k < da.cols(); ++k) dot += da(i, k) * c.a(i, k);
            for (std::size_t j = 0; j < da.cols(); ++j) de(i, j) = c.a(i, j) * (da(i, j) - dot);
        }

        if (spec.low_rank()) {
            g.r = matmul(transpose(c.xbar_l), de);
            const Matrix<T> dxbar_l = matmul(de, transpose(p.r));
            g.l = matmul(transpose(c.xbar), dxbar_l);
            dxbar = add(dxbar, matmul(dxbar_l, transpose(p.l)));
            if (spec.enforce_diag) {
                const auto diag = lowrank_diagonal(p.l, p.r);
                const T target = T(1) / static_cast<T>(spec.t_in);
                for (std::size_t j = 0; j < spec.t_in; ++j) {
                    const T corr = target - diag[j];
                    T dcorr{0};
                    for (std::size_t i = 0; i < de.rows(); ++i) {
                        dxbar(i, j) += de(i, j) * corr;
                        dcorr += de(i, j) * c.xbar(i, j);
                    }
                    for (std::size_t k = 0; k < p.l.cols(); ++k) {
                        g.l(j, k) -= dcorr * p.r(k, j);
                        g.r(k, j) -= dcorr * p.l(j, k);
                    }
                }
            }
        } else {
            g.w = matmul(transpose(c.xbar), de);
            for (std::size_t j = 0; j < spec.t_in; ++j) g.w(j, j) = T{0};
            dxbar = add(dxbar, matmul(de, transpose(p.w)));
        }
    } else {
        dxbar = std::move(dxt);
    }

    if (spec.low_rank()) {
        g.l1 = matmul(dxbar, transpose(c.r1x));
        const Matrix<T> dr1x = matmul(transpose(p.l1), dxbar);
        g.r1 = matmul(dr1x, transpose(c.x));
        out.dx = matmul(transpose(p.r1), dr1x);
    } else {
        g.w1 = matmul(dxbar, transpose(c.x));
        out.dx = matmul(transpose(p.w1), dxbar);
    }
    return out;
}

template <typename T>
void project_constraints(const LayerSpec& spec, LayerParams<T>& p) {
    if (!spec.has_attention()) return;
    p.lambda = std::clamp(p.lambda, T(0), T(1));
    if (spec.kind == LayerKind::TABL) {
        const T target = T(1) / static_cast<T>(spec.t_in);
        for (std::size_t j = 0; j < spec.t_in; ++j) p.w(j, j) = target;
    }
}

template <typename T>
Matrix<T> effective_mixing_matrix(const LayerSpec& spec, const LayerParams<T>& p) {
    if (!spec.has_attention()) throw std::invalid_argument("layer has no attention mixing matrix");
    if (spec.kind == LayerKind::TABL) return p.w;
    Matrix<T> m = matmul(p.l, p.r);
    if (spec.enforce_diag) {
        const auto diag = lowrank_diagonal(p.l, p.r);
        const T target = T(1) / static_cast<T>(spec.t_in);
        for (std::size_t j = 0; j < spec.t_in; ++j) m(j, j) += target - diag[j];
    }
    return m;
}

std::uint64_t param_count(const LayerSpec& spec) {
    spec.validate();
    const std::uint64_t d = spec.d_in, t = spec.t_in, dp = spec.d_out, tp = spec.t_out;
    std::uint64_t n = dp * tp;  // B
    if (spec.low_rank()) {
        n += (d + dp) * spec.rank_w1();
        n += (t + tp) * spec.rank_w2();
        if (spec.has_attention()) n += 2 * t * spec.rank_w();
    } else {
        n += d * dp + t * tp;
        if (spec.has_attention()) n += t * t;
    }
    if (spec.has_attention()) n += 1;  // lambda
    return n;
}

FlopCounts flop_count(const LayerSpec& spec) {
    spec.validate();
    const std::uint64_t d = spec.d_in, t = spec.t_in, dp = spec.d_out, tp = spec.t_out;
    FlopCounts f;
    if (spec.low_rank()) {
        f.xbar = (d + dp) * spec.rank_w1() * t;
        if (spec.has_attention()) f.e = 2 * dp * spec.rank_w() * t;
        f.y = (t + tp) * spec.rank_w2() * dp + dp * tp;
    } else {
        f.xbar = dp * d * t;
        if (spec.has_attention()) f.e = dp * t * t;
        f.y = dp * tp * t;
    }
    return f;
}

template <typename T>
Matrix<T> materialize_lowrank(const Matrix<T>& left, const Matrix<T>& right) {
    if (left.cols() != right.rows()) {
        throw ShapeError("materialize_lowrank: inner dimensions differ, " + left.shape_string() + " and " +
                         right.shape_string());
    }
    return matmul(left, right);
}

template <typename T>
Factorization<T> factor_from_full(const Matrix<T>& w, std::size_t k) {
    if (k == 0) throw std::invalid_argument("factor_from_full: k must be >= 1");
    const bool flip = w.rows() < w.cols();
    // One-sided Jacobi works on the columns of a tall matrix.
    Matrix<double> u = flip ? transpose(w).template cast<double>() : w.template cast<double>();
    const std::size_t m = u.rows(), n = u.cols();
    Matrix<double> v = Matrix<double>::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += u(i, p) * u(i, p);
                    beta += u(i, q) * u(i, q);
                    gamma += u(i, p) * u(i, q);
                }
                if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double tt = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + tt * tt);
                const double sn = cs * tt;
                for (std::size_t i = 0; i < m; ++i) {
                    const double up = u(i, p), uq = u(i, q);
                    u(i, p) = cs * up - sn * uq;
                    u(i, q) = sn * up + cs * uq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = cs * vp - sn * vq;
                    v(i, q) = sn * vp + cs * vq;
                }
            }
        }
        if (off < 1e-15) break;
    }

    // Columns of u are now U_j * sigma_j.
    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += u(i, j) * u(i, j);
        sigma[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const std::size_t kk = std::min({k, w.rows(), w.cols()});
    Factorization<T> f;
    f.left = Matrix<T>(w.rows(), kk);
    f.right = Matrix<T>(kk, w.cols());
    for (std::size_t r = 0; r < kk; ++r) {
        const std::size_t j = order[r];
        f.singular_values.push_back(static_cast<T>(sigma[j]));
        const double inv = sigma[j] > 0 ? 1.0 / sigma[j] : 0.0;
        if (!flip) {
            // w = (U sigma) V^T: left takes u's column, right takes V's column.
            for (std::size_t i = 0; i < m; ++i) f.left(i, r) = static_cast<T>(u(i, j));
            for (std::size_t i = 0; i < n; ++i) f.right(r, i) = static_cast<T>(v(i, j));
        } else {
            // w^T = (U sigma) V^T, so w = V (sigma U^T).
            for (std::size_t i = 0; i < n; ++i) f.left(i, r) = static_cast<T>(v(i, j) * sigma[j]);
            for (std::size_t i = 0; i < m; ++i) f.right(r, i) = static_cast<T>(u(i, j) * inv);
        }
    }
    return f;
}

#define LRTABL_INSTANTIATE(T)                                                                                \
    template LayerParams<T> zero_params<T>(const LayerSpec&);                                                \
    template LayerParams<T> init_params<T>(const LayerSpec&, std::uint64_t);                                 \
    template void check_params<T>(const LayerSpec&, const LayerParams<T>&);                                 \
    template LayerForward<T> forward<T>(const LayerSpec&, const LayerParams<T>&, const Matrix<T>&);          \
    template LayerBackward<T> backward<T>(const LayerSpec&, const LayerParams<T>&, const LayerCache<T>&,     \
                                          const Matrix<T>&);                                                 \
    template void project_constraints<T>(const LayerSpec&, LayerParams<T>&);                                 \
    template Matrix<T> effective_mixing_matrix<T>(const LayerSpec&, const LayerParams<T>&);                  \
    template Matrix<T> materialize_lowrank<T>(const Matrix<T>&, const Matrix<T>&);                           \
    template Factorization<T> factor_from_full<T>(const Matrix<T>&, std::size_t);

LRTABL_INSTANTIATE(float)
LRTABL_INSTANTIATE(double)

#undef LRTABL_INSTANTIATE

}  // namespace lrtabl
