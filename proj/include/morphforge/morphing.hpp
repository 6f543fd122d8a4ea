// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/grid.hpp"
#include "morphforge/mesh.hpp"
#include "morphforge/metrics.hpp"
#include "morphforge/spatial_index.hpp"

namespace morphforge {

/// Parts whose nodes stay fixed, with a linear blend over `blend_band` mm around them.
struct MorphMask {
    std::set<std::string> excluded_parts;
    double blend_band = 30.0;

    void validate() const {
        if (!(blend_band >= 0.0)) throw ValidationError("blend_band must be >= 0");
    }
};

/// Trilinear field value at a physical point; outside points use the clamped position.
inline Vec3 sample_field(const DisplacementField &d, const Vec3 &p) { return sample_at(d, p, OutOfBounds::clamp); }

inline bool inside_grid(const GridGeometry &g, const Vec3 &p) {
    const Vec3 ci = g.continuous_index(p);
    for (std::size_t a = 0; a < 3; ++a)
        if (ci[a] < 0.0 || ci[a] > static_cast<double>(g.dims[a] - 1)) return false;
    return true;
}

template <class MeshT>
struct MorphResult {
    MeshT mesh;
    std::vector<std::int64_t> outside_nodes; ///< node ids (FE) or vertex indices sampled by clamping
    std::string warning;
};

namespace detail {

inline std::string outside_warning(const std::vector<std::int64_t> &ids) {
    if (ids.empty()) return {};
    std::string w = std::to_string(ids.size()) + " node(s) outside the displacement grid used clamped sampling:";
    const std::size_t shown = std::min<std::size_t>(ids.size(), 20);
    for (std::size_t i = 0; i < shown; ++i) w += " " + std::to_string(ids[i]);
    if (shown < ids.size()) w += " ...";
    return w;
}

} // namespace detail

/// p -> p + w(p) d(p). w = 0 on nodes of excluded parts, 1 beyond blend_band of every such
/// node and linear in the distance to the nearest one in between.
inline MorphResult<FEMesh> morph_mesh(const FEMesh &mesh, const DisplacementField &d, const MorphMask &mask = {}) {
    mask.validate();
    mesh.validate();
    std::set<std::int64_t> frozen;
    for (const auto &e : mesh.elements)
        if (mask.excluded_parts.contains(e.part)) frozen.insert(e.nodes.begin(), e.nodes.end());

    std::vector<Vec3> frozen_pts;
    frozen_pts.reserve(frozen.size());
    for (auto id : frozen) frozen_pts.push_back(mesh.nodes.at(id));
    const KdTree frozen_index(frozen_pts);

    MorphResult<FEMesh> out{mesh, {}, {}};
    for (auto &[id, p] : out.mesh.nodes) {
        if (frozen.contains(id)) continue;
        double w = 1.0;
        if (!frozen_index.empty() && mask.blend_band > 0.0) {
            const double dist = std::sqrt(frozen_index.nearest(p).dist2);
            w = std::min(1.0, dist / mask.blend_band);
        }
        if (!inside_grid(d.grid, p)) out.outside_nodes.push_back(id);
        p += sample_field(d, p) * w;
    }
    out.warning = detail::outside_warning(out.outside_nodes);
    return out;
}

/// Surface meshes carry no part labels, so every vertex moves with full weight.
inline MorphResult<TriangleMesh> morph_mesh(const TriangleMesh &mesh, const DisplacementField &d) {
    MorphResult<TriangleMesh> out{mesh, {}, {}};
    for (std::size_t i = 0; i < out.mesh.vertices.size(); ++i) {
        Vec3 &p = out.mesh.vertices[i];
        if (!inside_grid(d.grid, p)) out.outside_nodes.push_back(static_cast<std::int64_t>(i));
        p += sample_field(d, p);
    }
    out.warning = detail::outside_warning(out.outside_nodes);
    return out;
}

struct QualityReport {
    double min_jacobian_before = 0.0;
    double mean_jacobian_before = 0.0;
    double min_jacobian_after = 0.0;
    double mean_jacobian_after = 0.0;
    double max_node_displacement = 0.0; ///< mm
    std::int64_t max_displacement_node = 0;
    double threshold = 0.1;
    std::size_t elements_below_threshold = 0; ///< after morphing
    std::size_t elements_evaluated = 0;
    std::vector<std::int64_t> flagged_elements;
};

inline QualityReport morph_report(const FEMesh &before, const FEMesh &after, double threshold = 0.1) {
    if (!before.same_connectivity(after))
        throw ValidationError("morph_report: meshes differ in connectivity");
    const auto jb = scaled_jacobian(before);
    const auto ja = scaled_jacobian(after);
    QualityReport r;
    r.threshold = threshold;
    r.min_jacobian_before = jb.minimum;
    r.mean_jacobian_before = jb.mean;
    r.min_jacobian_after = ja.minimum;
    r.mean_jacobian_after = ja.mean;
    r.elements_evaluated = ja.values.size();
    for (const auto &[id, value] : ja.values)
        if (value < threshold) {
            ++r.elements_below_threshold;
            r.flagged_elements.push_back(id);
        }
    auto a = after.nodes.begin();
    for (auto b = before.nodes.begin(); b != before.nodes.end(); ++b, ++a) {
        const double disp = norm(a->second - b->second);
        if (disp > r.max_node_displacement) {
            r.max_node_displacement = disp;
            r.max_displacement_node = b->first;
        }
    }
    return r;
}

} // namespace morphforge
