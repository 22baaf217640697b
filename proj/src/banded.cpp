#include "nlt/banded.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nlt/error.hpp"

namespace nlt {

BandedMatrix::BandedMatrix(std::size_t n, std::size_t half_bandwidth)
    : n_(n), hb_(half_bandwidth), data_(n * (2 * half_bandwidth + 1), 0.0)
{
}

double& BandedMatrix::at(std::size_t row, std::ptrdiff_t offset)
{
    return data_[row * (2 * hb_ + 1) + static_cast<std::size_t>(offset + static_cast<std::ptrdiff_t>(hb_))];
}

double BandedMatrix::at(std::size_t row, std::ptrdiff_t offset) const
{
    return data_[row * (2 * hb_ + 1) + static_cast<std::size_t>(offset + static_cast<std::ptrdiff_t>(hb_))];
}

double BandedMatrix::operator()(std::size_t row, std::size_t col) const
{
    const auto d = static_cast<std::ptrdiff_t>(col) - static_cast<std::ptrdiff_t>(row);
    if (std::abs(d) > static_cast<std::ptrdiff_t>(hb_)) return 0.0;
    return at(row, d);
}

void BandedMatrix::multiply(std::span<const double> x, std::span<double> y) const
{
    const auto hb = static_cast<std::ptrdiff_t>(hb_);
    const auto n = static_cast<std::ptrdiff_t>(n_);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double sum = 0.0;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-hb, -i);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(hb, n - 1 - i);
        for (std::ptrdiff_t d = lo; d <= hi; ++d)
            sum += at(static_cast<std::size_t>(i), d) * x[static_cast<std::size_t>(i + d)];
        y[static_cast<std::size_t>(i)] = sum;
    }
}

BandedLU::BandedLU(BandedMatrix m) : lu_(std::move(m))
{
    const auto n = static_cast<std::ptrdiff_t>(lu_.size());
    const auto hb = static_cast<std::ptrdiff_t>(lu_.half_bandwidth());
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const double pivot = lu_.at(static_cast<std::size_t>(k), 0);
        if (pivot == 0.0 || !std::isfinite(pivot))
            throw NumericalError("singular banded system at row " + std::to_string(k));
        const std::ptrdiff_t last = std::min(n - 1, k + hb);
        for (std::ptrdiff_t r = k + 1; r <= last; ++r) {
            double& l = lu_.at(static_cast<std::size_t>(r), k - r);
            if (l == 0.0) continue;
            l /= pivot;
            for (std::ptrdiff_t c = k + 1; c <= last; ++c)
                lu_.at(static_cast<std::size_t>(r), c - r) -= l * lu_.at(static_cast<std::size_t>(k), c - k);
        }
    }
}

void BandedLU::solve(std::span<double> x) const
{
    const auto n = static_cast<std::ptrdiff_t>(lu_.size());
    const auto hb = static_cast<std::ptrdiff_t>(lu_.half_bandwidth());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double s = x[static_cast<std::size_t>(i)];
        for (std::ptrdiff_t c = std::max<std::ptrdiff_t>(0, i - hb); c < i; ++c)
            s -= lu_.at(static_cast<std::size_t>(i), c - i) * x[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(i)] = s;
    }
    for (std::ptrdiff_t i = n - 1; i >= 0; --i) {
        double s = x[static_cast<std::size_t>(i)];
        for (std::ptrdiff_t c = i + 1; c <= std::min(n - 1, i + hb); ++c)
            s -= lu_.at(static_cast<std::size_t>(i), c - i) * x[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(i)] = s / lu_.at(static_cast<std::size_t>(i), 0);
    }
}

void BandedLU::solve_transposed(std::span<double> x) const
{
    // A^T = U^T L^T: forward with U^T, then backward with unit L^T.
    const auto n = static_cast<std::ptrdiff_t>(lu_.size());
    const auto hb = static_cast<std::ptrdiff_t>(lu_.half_bandwidth());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double s = x[static_cast<std::size_t>(i)];
        for (std::ptrdiff_t r = std::max<std::ptrdiff_t>(0, i - hb); r < i; ++r)
            s -= lu_.at(static_cast<std::size_t>(r), i - r) * x[static_cast<std::size_t>(r)];
        x[static_cast<std::size_t>(i)] = s / lu_.at(static_cast<std::size_t>(i), 0);
    }
    for (std::ptrdiff_t i = n - 1; i >= 0; --i) {
        double s = x[static_cast<std::size_t>(i)];
        for (std::ptrdiff_t r = i + 1; r <= std::min(n - 1, i + hb); ++r)
            s -= lu_.at(static_cast<std::size_t>(r), i - r) * x[static_cast<std::size_t>(r)];
        x[static_cast<std::size_t>(i)] = s;
    }
}

}  // namespace nlt
