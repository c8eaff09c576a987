#ifndef SEPSTAT_TENSOR_HPP
#define SEPSTAT_TENSOR_HPP

#include <atomic>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sepstat/errors.hpp"

namespace sepstat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline std::atomic<std::size_t>& element_budget_slot() {
    static std::atomic<std::size_t> budget{std::size_t{1} << 28};
    return budget;
}

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (d > 0) os << ",";
        os << shape[d];
    }
    os << ")";
    return os.str();
}

} // namespace detail

/// Maximum element count a single tensor may hold. Guards accidental
/// order-8 allocations; K and J selection upstream keeps real sizes small.
inline std::size_t element_budget() {
    return detail::element_budget_slot().load(std::memory_order_relaxed);
}

inline void set_element_budget(std::size_t elements) {
    detail::element_budget_slot().store(elements, std::memory_order_relaxed);
}

/// Dense real multiway array in row-major linearization: the last index
/// varies fastest. Every flattening in this library uses this order.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)) {
        data_.assign(checked_size(shape_), 0.0);
        init_strides();
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (checked_size(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + detail::shape_to_string(shape_));
        }
        init_strides();
    }

    [[nodiscard]] std::size_t order() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    [[nodiscard]] const std::vector<std::size_t>& strides() const noexcept { return strides_; }

    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }

    template <typename... Ix>
    double& operator()(Ix... ix) {
        static_assert((std::is_integral_v<Ix> && ...), "tensor indices must be integers");
        return data_[offset_of({static_cast<std::size_t>(ix)...})];
    }

    template <typename... Ix>
    double operator()(Ix... ix) const {
        static_assert((std::is_integral_v<Ix> && ...), "tensor indices must be integers");
        return data_[offset_of({static_cast<std::size_t>(ix)...})];
    }

    [[nodiscard]] double frobenius_norm() const {
        double acc = 0.0;
        for (double v : data_) acc += v * v;
        return std::sqrt(acc);
    }

    [[nodiscard]] bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& shape) {
        if (shape.empty()) {
            throw DimensionError("tensor shape must have at least one extent");
        }
        std::size_t n = 1;
        for (std::size_t ext : shape) {
            if (ext == 0) {
                throw DimensionError("tensor extents must be positive, got shape " +
                                     detail::shape_to_string(shape));
            }
            if (ext > element_budget() / n) {
                throw CapacityError("tensor of shape " + detail::shape_to_string(shape) +
                                    " exceeds the element budget of " +
                                    std::to_string(element_budget()));
            }
            n *= ext;
        }
        return n;
    }

    void init_strides() {
        strides_.assign(shape_.size(), 1);
        for (std::size_t d = shape_.size(); d-- > 1;) {
            strides_[d - 1] = strides_[d] * shape_[d];
        }
    }

    std::size_t offset_of(std::initializer_list<std::size_t> ix) const {
        if (ix.size() != shape_.size()) {
            throw DimensionError("tensor of order " + std::to_string(shape_.size()) +
                                 " indexed with " + std::to_string(ix.size()) + " indices");
        }
        std::size_t off = 0;
        std::size_t d = 0;
        for (std::size_t i : ix) {
            if (i >= shape_[d]) {
                throw DimensionError("index " + std::to_string(i) + " out of range for extent " +
                                     std::to_string(shape_[d]) + " in dimension " + std::to_string(d));
            }
            off += i * strides_[d];
            ++d;
        }
        return off;
    }

    std::vector<std::size_t> shape_;
    std::vector<std::size_t> strides_;
    std::vector<double> data_;
};

/// Outer product: result shape is the concatenation of the operand shapes,
/// entry (i...,j...) = a(i...) * b(j...).
[[nodiscard]] inline Tensor outer(const Tensor& a, const Tensor& b) {
    if (a.size() > 0 && b.size() > element_budget() / a.size()) {
        throw CapacityError("outer product of " + std::to_string(a.size()) + " x " +
                            std::to_string(b.size()) +
                            " elements exceeds the element budget");
    }
    std::vector<std::size_t> shape = a.shape();
    shape.insert(shape.end(), b.shape().begin(), b.shape().end());
    Tensor out(std::move(shape));
    double* o = out.data();
    const double* pa = a.data();
    const double* pb = b.data();
    const std::size_t na = a.size();
    const std::size_t nb = b.size();
    for (std::size_t p = 0; p < na; ++p) {
        const double av = pa[p];
        double* row = o + p * nb;
        for (std::size_t q = 0; q < nb; ++q) {
            row[q] = av * pb[q];
        }
    }
    return out;
}

namespace detail {

inline void require_cov4(const Tensor& c, const char* who) {
    if (c.order() != 4) {
        throw DimensionError(std::string(who) + " requires an order-4 tensor, got order " +
                             std::to_string(c.order()));
    }
    const auto& s = c.shape();
    if (s[0] != s[2] || s[1] != s[3]) {
        throw DimensionError(std::string(who) + " requires shape (K,J,K,J), got " +
                             shape_to_string(s));
    }
}

} // namespace detail

/// Trace over the first index pair of a (K,J,K,J) tensor:
/// out(j,l) = sum_i c(i,j,i,l).
[[nodiscard]] inline Matrix partial_trace_over_first(const Tensor& c) {
    detail::require_cov4(c, "partial_trace_over_first");
    const std::size_t K = c.shape()[0];
    const std::size_t J = c.shape()[1];
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(J));
    const double* d = c.data();
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t l = 0; l < J; ++l) {
            double acc = 0.0;
            for (std::size_t i = 0; i < K; ++i) {
                acc += d[((i * J + j) * K + i) * J + l];
            }
            out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = acc;
        }
    }
    return out;
}

/// Trace over the second index pair of a (K,J,K,J) tensor:
/// out(i,k) = sum_j c(i,j,k,j).
[[nodiscard]] inline Matrix partial_trace_over_second(const Tensor& c) {
    detail::require_cov4(c, "partial_trace_over_second");
    const std::size_t K = c.shape()[0];
    const std::size_t J = c.shape()[1];
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    const double* d = c.data();
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < J; ++j) {
                acc += d[((i * J + j) * K + k) * J + j];
            }
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = acc;
        }
    }
    return out;
}

/// Full trace of a (K,J,K,J) tensor: sum_{ij} c(i,j,i,j).
[[nodiscard]] inline double full_trace(const Tensor& c) {
    detail::require_cov4(c, "full_trace");
    const std::size_t K = c.shape()[0];
    const std::size_t J = c.shape()[1];
    const double* d = c.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < J; ++j) {
            acc += d[((i * J + j) * K + i) * J + j];
        }
    }
    return acc;
}

/// Separable order-4 tensor: out(i,j,k,l) = a(i,k) * b(j,l). This is the
/// tensor-product covariance built from a K x K panel part and a J x J
/// temporal part.
[[nodiscard]] inline Tensor separable_product(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols() || b.rows() != b.cols()) {
        throw DimensionError("separable_product requires square factors");
    }
    const std::size_t K = static_cast<std::size_t>(a.rows());
    const std::size_t J = static_cast<std::size_t>(b.rows());
    Tensor out({K, J, K, J});
    double* d = out.data();
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t k = 0; k < K; ++k) {
                const double aik = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
                for (std::size_t l = 0; l < J; ++l) {
                    d[((i * J + j) * K + k) * J + l] =
                        aik * b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
                }
            }
        }
    }
    return out;
}

/// Flatten to a matrix: rows linearize the first `split` indices, columns
/// the remaining ones, both row-major.
[[nodiscard]] inline Matrix flatten(const Tensor& c, std::size_t split) {
    if (split == 0 || split >= c.order()) {
        throw DimensionError("flatten split " + std::to_string(split) +
                             " out of range for order " + std::to_string(c.order()));
    }
    std::size_t rows = 1;
    for (std::size_t d = 0; d < split; ++d) rows *= c.shape()[d];
    const std::size_t cols = c.size() / rows;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
        c.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return Matrix(view);
}

/// Inverse of flatten: rebuild a tensor of the given shape from a matrix
/// whose rows linearize the first `split` indices.
[[nodiscard]] inline Tensor reshape(const Matrix& m, std::vector<std::size_t> shape,
                                    std::size_t split) {
    if (split == 0 || split >= shape.size()) {
        throw DimensionError("reshape split " + std::to_string(split) +
                             " out of range for order " + std::to_string(shape.size()));
    }
    std::size_t rows = 1;
    for (std::size_t d = 0; d < split; ++d) rows *= shape[d];
    std::size_t cols = 1;
    for (std::size_t d = split; d < shape.size(); ++d) cols *= shape[d];
    if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
        throw DimensionError("reshape target " + detail::shape_to_string(shape) +
                             " does not match a " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + " matrix at split " +
                             std::to_string(split));
    }
    Tensor out(std::move(shape));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> view(
        out.data(), m.rows(), m.cols());
    view = m;
    return out;
}

/// Triple product mA * gamma * mB^T, the matrix realization of an operator
/// sandwich on flattened representations.
[[nodiscard]] inline Matrix compose(const Matrix& mA, const Matrix& gamma, const Matrix& mB) {
    if (mA.cols() != gamma.rows() || gamma.cols() != mB.cols()) {
        throw DimensionError("compose dimension mismatch: " + std::to_string(mA.rows()) + "x" +
                             std::to_string(mA.cols()) + " * " + std::to_string(gamma.rows()) +
                             "x" + std::to_string(gamma.cols()) + " * (" +
                             std::to_string(mB.rows()) + "x" + std::to_string(mB.cols()) + ")^T");
    }
    return mA * gamma * mB.transpose();
}

struct SymEigen {
    Vector eigenvalues;  // non-increasing
    Matrix eigenvectors; // orthonormal columns, aligned with eigenvalues
};

/// Eigendecomposition of (m + m^T)/2. Eigenvalues come back sorted
/// non-increasing; each eigenvector is sign-fixed so its entry of largest
/// magnitude (first such entry on ties) is positive.
[[nodiscard]] inline SymEigen sym_eigen(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw DimensionError("sym_eigen requires a square matrix, got " +
                             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    if (!m.allFinite()) {
        throw NumericError("sym_eigen input has non-finite entries");
    }
    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success) {
        throw NumericError("symmetric eigendecomposition did not converge");
    }
    const Eigen::Index n = m.rows();
    SymEigen out;
    out.eigenvalues.resize(n);
    out.eigenvectors.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Eigen::Index src = n - 1 - r; // Eigen sorts ascending
        out.eigenvalues(r) = solver.eigenvalues()(src);
        Vector v = solver.eigenvectors().col(src);
        Eigen::Index arg = 0;
        double best = std::abs(v(0));
        for (Eigen::Index i = 1; i < n; ++i) {
            const double mag = std::abs(v(i));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (v(arg) < 0.0) v = -v;
        out.eigenvectors.col(r) = v;
    }
    return out;
}

} // namespace sepstat

#endif // SEPSTAT_TENSOR_HPP
