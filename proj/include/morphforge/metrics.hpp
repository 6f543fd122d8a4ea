// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/grid.hpp"
#include "morphforge/mesh.hpp"
#include "morphforge/parallel.hpp"
#include "morphforge/spatial_index.hpp"
#include "morphforge/statistics.hpp"
#include "morphforge/voxelizer.hpp"

namespace morphforge {

// ---------------------------------------------------------------------------
// Overlap and surface distance

struct OverlapCounts {
    std::int64_t a = 0, b = 0, both = 0;
};

inline OverlapCounts overlap_counts(const BinaryImage3D &a, const BinaryImage3D &b) {
    require_same_grid(a.grid, b.grid, "dice");
    OverlapCounts c;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool ia = a.data[i] != 0, ib = b.data[i] != 0;
        c.a += ia;
        c.b += ib;
        c.both += ia && ib;
    }
    return c;
}

/// 2|A n B| / (|A| + |B|); 1.0 when both are empty.
inline double dice(const BinaryImage3D &a, const BinaryImage3D &b) {
    const auto c = overlap_counts(a, b);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

/// Centers (mm) of the six-connected boundary voxels.
inline std::vector<Vec3> boundary_points(const BinaryImage3D &img) {
    std::vector<Vec3> pts;
    for (auto idx : boundary_voxels(img)) {
        const auto ijk = img.grid.unravel(idx);
        pts.push_back(img.grid.position(ijk[0], ijk[1], ijk[2]));
    }
    return pts;
}

/// Distance from each point of `from` to its nearest neighbour in `to`.
inline std::vector<double> nearest_distances(const std::vector<Vec3> &from, const std::vector<Vec3> &to) {
    const KdTree index(to);
    std::vector<double> out(from.size());
    parallel_for(0, static_cast<std::int64_t>(from.size()), [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] = std::sqrt(index.nearest(from[static_cast<std::size_t>(i)]).dist2);
    });
    return out;
}

struct HausdorffResult {
    double hd95 = 0.0;     ///< max(forward, backward), mm
    double forward = 0.0;  ///< a -> b
    double backward = 0.0; ///< b -> a
};

/// 95th-percentile (nearest rank) symmetric Hausdorff distance between the boundary voxel
/// sets of two images with equal spacing.
inline HausdorffResult hd95(const BinaryImage3D &a, const BinaryImage3D &b) {
    if (a.grid.spacing != b.grid.spacing) throw GridMismatchError("hd95: images must share voxel spacing");
    const auto pa = boundary_points(a);
    const auto pb = boundary_points(b);
    if (pa.empty() || pb.empty()) throw UndefinedMetricError("hd95 is undefined for an empty image");
    HausdorffResult r;
    r.forward = nearest_rank_percentile(nearest_distances(pa, pb), 95.0);
    r.backward = nearest_rank_percentile(nearest_distances(pb, pa), 95.0);
    r.hd95 = std::max(r.forward, r.backward);
    return r;
}

struct AccuracyReport {
    double dice = 0.0;
    std::optional<HausdorffResult> hausdorff; ///< absent when either image is empty
    OverlapCounts counts;
    bool both_empty = false;
};

inline AccuracyReport evaluate_accuracy(const BinaryImage3D &a, const BinaryImage3D &b) {
    AccuracyReport r;
    r.counts = overlap_counts(a, b);
    r.both_empty = r.counts.a + r.counts.b == 0;
    r.dice = dice(a, b);
    if (r.counts.a > 0 && r.counts.b > 0) r.hausdorff = hd95(a, b);
    return r;
}

/// Per-vertex distance (mm) from `morphed` to the closest point on any `target` triangle.
inline std::vector<double> distance_map(const TriangleMesh &morphed, const TriangleMesh &target) {
    if (target.empty()) throw EmptyMeshError("distance_map: target mesh is empty");
    if (morphed.vertices.empty()) throw EmptyMeshError("distance_map: morphed mesh is empty");
    const TriangleBvh bvh(target);
    std::vector<double> out(morphed.vertices.size());
    parallel_for(0, static_cast<std::int64_t>(out.size()), [&](std::int64_t i) {
        out[static_cast<std::size_t>(i)] = bvh.distance(morphed.vertices[static_cast<std::size_t>(i)]);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Element quality

/// Corner-based scaled Jacobian of a hex8 with VTK node order (0-3 bottom, 4-7 top).
/// At each corner: det[e1 e2 e3] / (|e1||e2||e3|) of the three emanating edges, ordered so
/// an undistorted right-handed hex gives +1. Element value is the minimum over corners; a
/// zero-length edge gives 0.
inline double hex_scaled_jacobian(const std::array<Vec3, 8> &p) {
    static constexpr std::array<std::array<int, 3>, 8> nbr{{{1, 3, 4}, {2, 0, 5}, {3, 1, 6}, {0, 2, 7},
                                                            {7, 5, 0}, {4, 6, 1}, {5, 7, 2}, {6, 4, 3}}};
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < 8; ++c) {
        const Vec3 e1 = p[static_cast<std::size_t>(nbr[c][0])] - p[c];
        const Vec3 e2 = p[static_cast<std::size_t>(nbr[c][1])] - p[c];
        const Vec3 e3 = p[static_cast<std::size_t>(nbr[c][2])] - p[c];
        const double len = norm(e1) * norm(e2) * norm(e3);
        if (len == 0.0) return 0.0;
        worst = std::min(worst, det3(e1, e2, e3) / len);
    }
    return worst;
}

/// Tet4 value taken at node 0: 6 V / (|e01||e02||e03|) = det[e01 e02 e03] / product of
/// lengths. A right-corner tet gives 1, the regular tet sqrt(2)/2.
inline double tet_scaled_jacobian(const std::array<Vec3, 4> &p) {
    const Vec3 e1 = p[1] - p[0], e2 = p[2] - p[0], e3 = p[3] - p[0];
    const double len = norm(e1) * norm(e2) * norm(e3);
    if (len == 0.0) return 0.0;
    return det3(e1, e2, e3) / len;
}

struct JacobianReport {
    std::vector<std::pair<std::int64_t, double>> values; ///< (element id, scaled Jacobian)
    double minimum = 0.0; ///< 0 when no solid element was evaluated
    double mean = 0.0;
    std::int64_t minimum_element = 0;
    std::size_t skipped_shells = 0;
    std::string notice;
};

inline JacobianReport scaled_jacobian(const FEMesh &mesh) {
    JacobianReport r;
    for (const auto &e : mesh.elements) {
        double v = 0.0;
        if (e.kind == ElementKind::hex8) {
            std::array<Vec3, 8> p;
            for (std::size_t i = 0; i < 8; ++i) p[i] = mesh.node(e.nodes[i]);
            v = hex_scaled_jacobian(p);
        } else if (e.kind == ElementKind::tet4) {
            std::array<Vec3, 4> p;
            for (std::size_t i = 0; i < 4; ++i) p[i] = mesh.node(e.nodes[i]);
            v = tet_scaled_jacobian(p);
        } else {
            ++r.skipped_shells;
            continue;
        }
        r.values.emplace_back(e.id, v);
    }
    if (!r.values.empty()) {
        r.minimum = std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (const auto &[id, v] : r.values) {
            sum += v;
            if (v < r.minimum) {
                r.minimum = v;
                r.minimum_element = id;
            }
        }
        r.mean = sum / static_cast<double>(r.values.size());
    }
    if (r.skipped_shells) r.notice = std::to_string(r.skipped_shells) + " shell element(s) skipped";
    return r;
}

} // namespace morphforge
