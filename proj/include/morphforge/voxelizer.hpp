// SPDX-License-Identifier: Apache-2.0
#pragma once

// Solid voxelization by axis-parallel ray parity with a three-axis majority vote.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/grid.hpp"
#include "morphforge/mesh.hpp"
#include "morphforge/parallel.hpp"

namespace morphforge {

struct VoxelizeOptions {
    Vec3 spacing{2.0, 2.0, 2.0};
    int padding = 4;
    std::uint64_t seed = 0; ///< drives the jitter of rays that graze edges or vertices
};

struct Aabb {
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
            -std::numeric_limits<double>::infinity()};

    void extend(const Vec3 &p) {
        for (std::size_t a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    void extend(const Aabb &b) {
        extend(b.lo);
        extend(b.hi);
    }
    bool valid() const { return lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z; }
};

inline Aabb bounds(const TriangleMesh &mesh) {
    Aabb box;
    for (const auto &v : mesh.vertices) box.extend(v);
    return box;
}

/// Grid whose voxel cells tile `box` (when the extent is a multiple of spacing) plus `padding`
/// voxels on every side.
inline GridGeometry grid_for_bounds(const Aabb &box, const Vec3 &spacing, int padding) {
    if (!box.valid()) throw EmptyMeshError("cannot build a grid around empty bounds");
    if (padding < 0) throw ValidationError("padding must be >= 0");
    GridGeometry g;
    g.spacing = spacing;
    g.validate();
    for (std::size_t a = 0; a < 3; ++a) {
        const double extent = box.hi[a] - box.lo[a];
        const auto core = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(extent / spacing[a] - 1e-9)));
        g.dims[a] = core + 2 * padding;
        const double center = 0.5 * (box.lo[a] + box.hi[a]);
        g.origin[a] = center - 0.5 * static_cast<double>(g.dims[a] - 1) * spacing[a];
    }
    return g;
}

struct EdgeCheck {
    std::size_t boundary = 0;    ///< edges used by one triangle
    std::size_t nonmanifold = 0; ///< edges used by more than two
};

inline EdgeCheck check_edges(const TriangleMesh &mesh) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> use;
    for (const auto &t : mesh.triangles)
        for (int e = 0; e < 3; ++e) ++use[std::minmax(t[static_cast<std::size_t>(e)], t[static_cast<std::size_t>((e + 1) % 3)])];
    EdgeCheck out;
    for (const auto &[edge, n] : use) {
        if (n == 1) ++out.boundary;
        else if (n > 2) ++out.nonmanifold;
    }
    return out;
}

inline void require_closed(const TriangleMesh &mesh) {
    const auto ec = check_edges(mesh);
    if (ec.boundary || ec.nonmanifold) throw OpenSurfaceError(ec.boundary, ec.nonmanifold);
}

/// Enclosed volume by the divergence theorem; positive for outward winding.
inline double signed_volume(const TriangleMesh &mesh) {
    double v = 0.0;
    for (const auto &t : mesh.triangles)
        v += det3(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    return v / 6.0;
}

namespace detail {

struct RayCaster {
    const TriangleMesh &mesh;
    const GridGeometry &grid;
    std::size_t axis, u, v;
    std::vector<std::vector<std::uint32_t>> candidates; // per ray, triangles whose footprint covers it
    double margin_u, margin_v;

    RayCaster(const TriangleMesh &m, const GridGeometry &g, std::size_t a)
        : mesh(m), grid(g), axis(a), u((a + 1) % 3), v((a + 2) % 3) {
        margin_u = 4e-6 * grid.spacing[u];
        margin_v = 4e-6 * grid.spacing[v];
        const auto nu = grid.dims[u], nv = grid.dims[v];
        candidates.resize(static_cast<std::size_t>(nu * nv));
        for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
            const auto &tri = mesh.triangles[t];
            double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u, lo_v = lo_u, hi_v = -lo_u;
            for (auto vi : tri) {
                const Vec3 &p = mesh.vertices[vi];
                lo_u = std::min(lo_u, p[u]);
                hi_u = std::max(hi_u, p[u]);
                lo_v = std::min(lo_v, p[v]);
                hi_v = std::max(hi_v, p[v]);
            }
            const auto iu0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil((lo_u - margin_u - grid.origin[u]) / grid.spacing[u])));
            const auto iu1 = std::min<std::int64_t>(nu - 1, static_cast<std::int64_t>(std::floor((hi_u + margin_u - grid.origin[u]) / grid.spacing[u])));
            const auto iv0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil((lo_v - margin_v - grid.origin[v]) / grid.spacing[v])));
            const auto iv1 = std::min<std::int64_t>(nv - 1, static_cast<std::int64_t>(std::floor((hi_v + margin_v - grid.origin[v]) / grid.spacing[v])));
            for (auto iv = iv0; iv <= iv1; ++iv)
                for (auto iu = iu0; iu <= iu1; ++iu) candidates[static_cast<std::size_t>(iu + nu * iv)].push_back(t);
        }
    }

    /// Axis coordinates of the crossings of the ray at (pu, pv). Returns false on a tie
    /// (the ray passes within rounding distance of a triangle edge or vertex).
    bool cast(const std::vector<std::uint32_t> &tris, double pu, double pv, std::vector<double> &hits) const {
        hits.clear();
        for (auto t : tris) {
            const auto &tri = mesh.triangles[t];
            const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
            const double au = a[u] - pu, av = a[v] - pv;
            const double bu = b[u] - pu, bv = b[v] - pv;
            const double cu = c[u] - pu, cv = c[v] - pv;
            const double area = (b[u] - a[u]) * (c[v] - a[v]) - (b[v] - a[v]) * (c[u] - a[u]);
            const double w0 = bu * cv - bv * cu; // opposite a
            const double w1 = cu * av - cv * au; // opposite b
            const double w2 = au * bv - av * bu; // opposite c
            const double scale = (std::abs(bu) + std::abs(cu) + std::abs(au)) * (std::abs(bv) + std::abs(cv) + std::abs(av));
            const double eps = 1e-12 * scale;
            if (std::abs(area) <= eps) {
                // Triangle seen edge-on; it only matters if the ray touches it.
                if (std::abs(w0) <= eps && std::abs(w1) <= eps && std::abs(w2) <= eps && scale > 0.0) {
                    const bool touches = std::min({au, bu, cu}) <= 0.0 && std::max({au, bu, cu}) >= 0.0 &&
                                         std::min({av, bv, cv}) <= 0.0 && std::max({av, bv, cv}) >= 0.0;
                    if (touches) return false;
                }
                continue;
            }
            const bool pos = w0 > eps && w1 > eps && w2 > eps;
            const bool neg = w0 < -eps && w1 < -eps && w2 < -eps;
            if (pos || neg) {
                hits.push_back((w0 * a[axis] + w1 * b[axis] + w2 * c[axis]) / (w0 + w1 + w2));
                continue;
            }
            const bool all_nonneg = w0 >= -eps && w1 >= -eps && w2 >= -eps;
            const bool all_nonpos = w0 <= eps && w1 <= eps && w2 <= eps;
            if (all_nonneg || all_nonpos) return false; // on an edge or vertex
        }
        std::sort(hits.begin(), hits.end());
        return true;
    }
};

inline double unit_random(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace detail

/// Voxelizes a closed mesh onto an existing grid. A voxel is occupied when at least two
/// of the three axis-parallel rays through its center report odd crossing parity.
inline BinaryImage3D voxelize(const TriangleMesh &mesh, const GridGeometry &grid, std::uint64_t seed = 0) {
    if (mesh.empty()) throw EmptyMeshError("cannot voxelize an empty mesh");
    mesh.validate();
    grid.validate();
    require_closed(mesh);
    const Aabb box = bounds(mesh);
    const double extent = std::max({box.hi.x - box.lo.x, box.hi.y - box.lo.y, box.hi.z - box.lo.z});
    if (!(std::abs(signed_volume(mesh)) > 1e-12 * extent * extent * extent))
        throw DegenerateError("mesh encloses zero volume");

    std::vector<std::uint8_t> votes(static_cast<std::size_t>(grid.voxel_count()), 0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const detail::RayCaster caster(mesh, grid, axis);
        const auto nu = grid.dims[caster.u], nv = grid.dims[caster.v], na = grid.dims[axis];
        // Rays are independent and each writes a disjoint set of voxels.
        parallel_for(0, nv, [&](std::int64_t iv) {
            std::vector<double> hits;
            for (std::int64_t iu = 0; iu < nu; ++iu) {
                const auto ray = static_cast<std::size_t>(iu + nu * iv);
                const auto &tris = caster.candidates[ray];
                if (tris.empty()) continue;
                double pu = grid.origin[caster.u] + static_cast<double>(iu) * grid.spacing[caster.u];
                double pv = grid.origin[caster.v] + static_cast<double>(iv) * grid.spacing[caster.v];
                const double base_u = pu, base_v = pv;
                std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (axis + 1)) ^ (static_cast<std::uint64_t>(ray) << 20));
                int attempt = 0;
                while (!caster.cast(tris, pu, pv, hits)) {
                    if (++attempt > 64) throw NumericalError("ray jitter failed to resolve a parity tie");
                    pu = base_u + 1e-6 * grid.spacing[caster.u] * (2.0 * detail::unit_random(rng) - 1.0);
                    pv = base_v + 1e-6 * grid.spacing[caster.v] * (2.0 * detail::unit_random(rng) - 1.0);
                }
                std::size_t below = 0;
                for (std::int64_t ia = 0; ia < na; ++ia) {
                    const double c = grid.origin[axis] + static_cast<double>(ia) * grid.spacing[axis];
                    while (below < hits.size() && hits[below] < c) ++below;
                    if (below % 2 == 1) {
                        Index3 idx{};
                        idx[axis] = ia;
                        idx[caster.u] = iu;
                        idx[caster.v] = iv;
                        ++votes[static_cast<std::size_t>(grid.linear(idx[0], idx[1], idx[2]))];
                    }
                }
            }
        });
    }

    BinaryImage3D img(grid);
    for (std::size_t i = 0; i < votes.size(); ++i) img.data[i] = votes[i] >= 2 ? 1 : 0;
    return img;
}

/// Voxelizes onto the mesh bounding box expanded by `padding` voxels each side.
inline BinaryImage3D voxelize(const TriangleMesh &mesh, const VoxelizeOptions &opt) {
    if (mesh.empty()) throw EmptyMeshError("cannot voxelize an empty mesh");
    return voxelize(mesh, grid_for_bounds(bounds(mesh), opt.spacing, opt.padding), opt.seed);
}

/// Occupied voxels with at least one six-neighbour that is empty or outside the image,
/// as linear indices in ascending order.
inline std::vector<std::int64_t> boundary_voxels(const BinaryImage3D &img) {
    const auto &g = img.grid;
    std::vector<std::int64_t> out;
    auto empty_at = [&](std::int64_t i, std::int64_t j, std::int64_t k) { return !g.contains(i, j, k) || !img.at(i, j, k); };
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                if (!img.at(i, j, k)) continue;
                if (empty_at(i - 1, j, k) || empty_at(i + 1, j, k) || empty_at(i, j - 1, k) ||
                    empty_at(i, j + 1, k) || empty_at(i, j, k - 1) || empty_at(i, j, k + 1))
                    out.push_back(g.linear(i, j, k));
            }
    return out;
}

inline BinaryImage3D image_union(const BinaryImage3D &a, const BinaryImage3D &b) {
    require_same_grid(a.grid, b.grid, "image_union");
    BinaryImage3D out(a.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
    return out;
}

} // namespace morphforge
