// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed synthetic shapes used by tests, fixtures and the CLI `generate` helpers.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>

#include "morphforge/mesh.hpp"

namespace morphforge {

/// Axis-aligned box with outward-facing triangles (8 vertices, 12 facets).
inline TriangleMesh make_box(const Vec3 &lo, const Vec3 &hi) {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({(i & 1) ? hi.x : lo.x, (i & 2) ? hi.y : lo.y, (i & 4) ? hi.z : lo.z});
    m.triangles = {{0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}, {0, 1, 5}, {0, 5, 4},
                   {2, 6, 7}, {2, 7, 3}, {0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}};
    return m;
}

/// Ellipsoid from a subdivided icosahedron, outward winding. subdivisions = 4 gives 5120 facets.
inline TriangleMesh make_ellipsoid(const Vec3 &center, const Vec3 &radii, int subdivisions = 4) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> unit = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                              {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto &v : unit) v = v / norm(v);
    std::vector<std::array<std::uint32_t, 3>> tris = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
        {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
        {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
        auto mid = [&](std::uint32_t a, std::uint32_t b) {
            const auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const Vec3 p = (unit[a] + unit[b]) * 0.5;
            unit.push_back(p / norm(p));
            const auto idx = static_cast<std::uint32_t>(unit.size() - 1);
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<std::array<std::uint32_t, 3>> next;
        next.reserve(tris.size() * 4);
        for (const auto &tr : tris) {
            const auto a = mid(tr[0], tr[1]), b = mid(tr[1], tr[2]), c = mid(tr[2], tr[0]);
            next.push_back({tr[0], a, c});
            next.push_back({tr[1], b, a});
            next.push_back({tr[2], c, b});
            next.push_back({a, b, c});
        }
        tris = std::move(next);
    }

    TriangleMesh m;
    m.vertices.reserve(unit.size());
    for (const auto &u : unit) m.vertices.push_back(center + cwise_mul(u, radii));
    m.triangles = std::move(tris);
    return m;
}

inline TriangleMesh make_sphere(const Vec3 &center, double radius, int subdivisions = 4) {
    return make_ellipsoid(center, {radius, radius, radius}, subdivisions);
}

/// Structured block of hex8 elements; node ids start at 1, element ids at 1.
inline FEMesh make_hex_block(const Vec3 &lo, const Vec3 &cell, std::array<int, 3> counts,
                             const std::string &part = "body") {
    FEMesh m;
    auto node_id = [&](int i, int j, int k) {
        return static_cast<std::int64_t>(1 + i + (counts[0] + 1) * (j + (counts[1] + 1) * k));
    };
    for (int k = 0; k <= counts[2]; ++k)
        for (int j = 0; j <= counts[1]; ++j)
            for (int i = 0; i <= counts[0]; ++i)
                m.nodes.emplace(node_id(i, j, k), lo + Vec3{i * cell.x, j * cell.y, k * cell.z});
    std::int64_t eid = 1;
    for (int k = 0; k < counts[2]; ++k)
        for (int j = 0; j < counts[1]; ++j)
            for (int i = 0; i < counts[0]; ++i) {
                Element e;
                e.id = eid++;
                e.kind = ElementKind::hex8;
                e.part = part;
                e.nodes = {node_id(i, j, k),         node_id(i + 1, j, k),     node_id(i + 1, j + 1, k),
                           node_id(i, j + 1, k),     node_id(i, j, k + 1),     node_id(i + 1, j, k + 1),
                           node_id(i + 1, j + 1, k + 1), node_id(i, j + 1, k + 1)};
                m.elements.push_back(std::move(e));
            }
    return m;
}

} // namespace morphforge
