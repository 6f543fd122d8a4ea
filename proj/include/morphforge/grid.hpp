// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/vec3.hpp"

namespace morphforge {

using Index3 = std::array<std::int64_t, 3>;

/// Regular axis-aligned grid. `origin` is the center of voxel (0,0,0); storage is x-fastest.
struct GridGeometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin;

    std::int64_t voxel_count() const noexcept { return dims[0] * dims[1] * dims[2]; }

    std::int64_t linear(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
        return i + dims[0] * (j + dims[1] * k);
    }

    Index3 unravel(std::int64_t idx) const noexcept {
        const std::int64_t i = idx % dims[0];
        const std::int64_t jk = idx / dims[0];
        return {i, jk % dims[1], jk / dims[1]};
    }

    bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    Vec3 position(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
        return {origin.x + static_cast<double>(i) * spacing.x, origin.y + static_cast<double>(j) * spacing.y,
                origin.z + static_cast<double>(k) * spacing.z};
    }

    /// Physical point (mm) to continuous voxel index.
    Vec3 continuous_index(const Vec3 &p) const noexcept { return cwise_div(p - origin, spacing); }

    double min_spacing() const noexcept { return std::min({spacing.x, spacing.y, spacing.z}); }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[static_cast<std::size_t>(a)] < 1) throw ValidationError("grid dimension must be >= 1");
            if (!(spacing[static_cast<std::size_t>(a)] > 0.0) || !std::isfinite(spacing[static_cast<std::size_t>(a)]))
                throw ValidationError("grid spacing must be positive and finite");
        }
    }

    std::string describe() const {
        std::ostringstream os;
        os << "dims " << dims[0] << 'x' << dims[1] << 'x' << dims[2] << ", spacing " << spacing << ", origin "
           << origin;
        return os.str();
    }

    friend bool operator==(const GridGeometry &, const GridGeometry &) = default;
};

inline void require_same_grid(const GridGeometry &a, const GridGeometry &b, const char *what) {
    if (a != b)
        throw GridMismatchError(std::string(what) + ": grid mismatch (" + a.describe() + " vs " + b.describe() + ")");
}

/// Dense voxel container over a GridGeometry.
template <class T>
struct Volume {
    GridGeometry grid;
    std::vector<T> data;

    Volume() = default;
    explicit Volume(const GridGeometry &g, T fill = T{})
        : grid(g), data(static_cast<std::size_t>(g.voxel_count()), fill) {
        grid.validate();
    }

    T &at(std::int64_t i, std::int64_t j, std::int64_t k) { return data[static_cast<std::size_t>(grid.linear(i, j, k))]; }
    const T &at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return data[static_cast<std::size_t>(grid.linear(i, j, k))];
    }

    /// Clamp-to-edge access.
    const T &clamped(std::int64_t i, std::int64_t j, std::int64_t k) const {
        i = std::clamp<std::int64_t>(i, 0, grid.dims[0] - 1);
        j = std::clamp<std::int64_t>(j, 0, grid.dims[1] - 1);
        k = std::clamp<std::int64_t>(k, 0, grid.dims[2] - 1);
        return at(i, j, k);
    }

    std::size_t size() const noexcept { return data.size(); }

    friend bool operator==(const Volume &, const Volume &) = default;
};

/// One byte per voxel, 0 or 1.
using BinaryImage3D = Volume<std::uint8_t>;
using ScalarImage3D = Volume<double>;
/// Vectors in mm, one per voxel of the fixed grid.
using DisplacementField = Volume<Vec3>;

inline std::int64_t count_occupied(const BinaryImage3D &img) {
    std::int64_t n = 0;
    for (auto v : img.data) n += v != 0;
    return n;
}

enum class OutOfBounds { clamp, zero };

/// Interpolated value type: arithmetic voxels interpolate as double.
template <class T>
using interp_t = std::conditional_t<std::is_arithmetic_v<T>, double, T>;

/// Trilinear interpolation at continuous index `ci`. With OutOfBounds::zero, corner samples
/// outside the grid read as T{}; with clamp, the query point is clamped into the grid first.
template <class T>
interp_t<T> sample_trilinear(const Volume<T> &vol, Vec3 ci, OutOfBounds mode = OutOfBounds::clamp) {
    const auto &d = vol.grid.dims;
    if (mode == OutOfBounds::clamp) {
        ci.x = std::clamp(ci.x, 0.0, static_cast<double>(d[0] - 1));
        ci.y = std::clamp(ci.y, 0.0, static_cast<double>(d[1] - 1));
        ci.z = std::clamp(ci.z, 0.0, static_cast<double>(d[2] - 1));
    }
    const double fx = std::floor(ci.x), fy = std::floor(ci.y), fz = std::floor(ci.z);
    const auto i0 = static_cast<std::int64_t>(fx), j0 = static_cast<std::int64_t>(fy), k0 = static_cast<std::int64_t>(fz);
    const double tx = ci.x - fx, ty = ci.y - fy, tz = ci.z - fz;

    using R = interp_t<T>;
    auto fetch = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> R {
        if (mode == OutOfBounds::zero) {
            if (!vol.grid.contains(i, j, k)) return R{};
            return static_cast<R>(vol.at(i, j, k));
        }
        return static_cast<R>(vol.clamped(i, j, k));
    };

    // Zero-weight corners are skipped so that exact voxel hits reproduce the stored value bitwise.
    R acc{};
    bool any = false;
    for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
        if (w == 0.0) continue;
        const R v = fetch(i0 + dx, j0 + dy, k0 + dz);
        if (!any) {
            acc = v * w;
            any = true;
        } else {
            acc += v * w;
        }
    }
    return acc;
}

/// Trilinear sample at a physical point (mm).
template <class T>
interp_t<T> sample_at(const Volume<T> &vol, const Vec3 &p, OutOfBounds mode = OutOfBounds::clamp) {
    return sample_trilinear(vol, vol.grid.continuous_index(p), mode);
}

} // namespace morphforge
