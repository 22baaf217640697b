#pragma once

#include <cstddef>
#include <vector>

namespace nlt {

/**
 * @brief Dense 2D array on a structured grid.
 *
 * Indexed as (i, j) with i along x and j along y. Storage is row-major with
 * one row per j, i.e. element (i, j) lives at data[j * nx + i].
 */
class Field2D {
public:
    Field2D() = default;
    Field2D(std::size_t nx, std::size_t ny, double value = 0.0)
        : nx_(nx), ny_(ny), data_(nx * ny, value) {}

    std::size_t nx() const { return nx_; }
    std::size_t ny() const { return ny_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[j * nx_ + i]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[j * nx_ + i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Field2D&) const = default;

private:
    std::size_t nx_ = 0;
    std::size_t ny_ = 0;
    std::vector<double> data_;
};

}  // namespace nlt
