#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nlt {

/**
 * @brief Square banded matrix with equal lower and upper bandwidth.
 *
 * Entry (i, i + d) for |d| <= half_bandwidth is stored at
 * data[i * (2 * half_bandwidth + 1) + d + half_bandwidth]. Entries whose
 * column falls outside [0, n) are kept as zeros.
 */
class BandedMatrix {
public:
    BandedMatrix() = default;
    BandedMatrix(std::size_t n, std::size_t half_bandwidth);

    std::size_t size() const { return n_; }
    std::size_t half_bandwidth() const { return hb_; }

    double& at(std::size_t row, std::ptrdiff_t offset);
    double at(std::size_t row, std::ptrdiff_t offset) const;
    /// Dense-style lookup; zero outside the band.
    double operator()(std::size_t row, std::size_t col) const;

    void multiply(std::span<const double> x, std::span<double> y) const;

private:
    std::size_t n_ = 0;
    std::size_t hb_ = 0;
    std::vector<double> data_;
};

/**
 * @brief LU factorization without pivoting.
 *
 * Only for matrices where elimination without pivoting is stable, e.g.
 * strictly row diagonally dominant systems such as I - dt A with A a
 * nonlocal diffusion operator with nonnegative kernel.
 */
class BandedLU {
public:
    BandedLU() = default;
    explicit BandedLU(BandedMatrix m);

    /// x := A^{-1} x
    void solve(std::span<double> x) const;
    /// x := A^{-T} x
    void solve_transposed(std::span<double> x) const;

private:
    BandedMatrix lu_;
};

}  // namespace nlt
