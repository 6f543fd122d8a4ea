// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "morphforge/mesh.hpp"
#include "morphforge/vec3.hpp"

namespace morphforge {

/// Static k-d tree over a point set for exact nearest-neighbour queries.
class KdTree {
public:
    explicit KdTree(std::vector<Vec3> points) : pts_(std::move(points)), order_(pts_.size()), axis_(pts_.size()) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        build(0, order_.size());
    }

    bool empty() const noexcept { return pts_.empty(); }

    struct Hit {
        std::size_t index = 0; ///< index into the original point list
        double dist2 = std::numeric_limits<double>::infinity();
    };

    Hit nearest(const Vec3 &q) const {
        Hit best;
        if (!pts_.empty()) search(0, order_.size(), q, best);
        return best;
    }

private:
    void build(std::size_t lo, std::size_t hi) {
        if (hi - lo <= 1) return;
        Vec3 mn = pts_[order_[lo]], mx = mn;
        for (std::size_t i = lo; i < hi; ++i) {
            const Vec3 &p = pts_[order_[i]];
            for (std::size_t a = 0; a < 3; ++a) {
                mn[a] = std::min(mn[a], p[a]);
                mx[a] = std::max(mx[a], p[a]);
            }
        }
        const Vec3 ext = mx - mn;
        const std::size_t ax = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
        const std::size_t mid = lo + (hi - lo) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t a, std::size_t b) {
                             const double pa = pts_[a][ax], pb = pts_[b][ax];
                             return pa < pb || (pa == pb && a < b);
                         });
        axis_[mid] = static_cast<std::uint8_t>(ax);
        build(lo, mid);
        build(mid + 1, hi);
    }

    void search(std::size_t lo, std::size_t hi, const Vec3 &q, Hit &best) const {
        if (lo >= hi) return;
        const std::size_t mid = lo + (hi - lo) / 2;
        const std::size_t idx = order_[mid];
        const double d2 = norm2(pts_[idx] - q);
        if (d2 < best.dist2 || (d2 == best.dist2 && idx < best.index)) best = {idx, d2};
        if (hi - lo == 1) return;
        const std::size_t ax = axis_[mid];
        const double delta = q[ax] - pts_[idx][ax];
        if (delta < 0.0) {
            search(lo, mid, q, best);
            if (delta * delta <= best.dist2) search(mid + 1, hi, q, best);
        } else {
            search(mid + 1, hi, q, best);
            if (delta * delta <= best.dist2) search(lo, mid, q, best);
        }
    }

    std::vector<Vec3> pts_;
    std::vector<std::size_t> order_;
    std::vector<std::uint8_t> axis_;
};

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;
    const Vec3 bp = p - b;
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
    const Vec3 cp = p - c;
    const double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Bounding volume hierarchy over triangles for point-to-surface distance.
class TriangleBvh {
public:
    explicit TriangleBvh(const TriangleMesh &mesh) : mesh_(mesh), tris_(mesh.triangles.size()) {
        std::iota(tris_.begin(), tris_.end(), std::uint32_t{0});
        if (!tris_.empty()) build(0, tris_.size());
    }

    /// Unsigned distance from p to the nearest point on any triangle.
    double distance(const Vec3 &p) const {
        double best = std::numeric_limits<double>::infinity();
        if (!nodes_.empty()) search(0, p, best);
        return std::sqrt(best);
    }

private:
    struct Node {
        Vec3 lo, hi;
        std::size_t begin = 0, end = 0; // triangle range for leaves
        std::int64_t left = -1, right = -1;
    };

    Vec3 centroid(std::uint32_t t) const {
        const auto &tr = mesh_.triangles[t];
        return (mesh_.vertices[tr[0]] + mesh_.vertices[tr[1]] + mesh_.vertices[tr[2]]) / 3.0;
    }

    std::int64_t build(std::size_t begin, std::size_t end) {
        Node node;
        node.lo = node.hi = mesh_.vertices[mesh_.triangles[tris_[begin]][0]];
        for (std::size_t i = begin; i < end; ++i)
            for (auto v : mesh_.triangles[tris_[i]])
                for (std::size_t a = 0; a < 3; ++a) {
                    node.lo[a] = std::min(node.lo[a], mesh_.vertices[v][a]);
                    node.hi[a] = std::max(node.hi[a], mesh_.vertices[v][a]);
                }
        node.begin = begin;
        node.end = end;
        const auto id = static_cast<std::int64_t>(nodes_.size());
        nodes_.push_back(node);
        if (end - begin <= 4) return id;
        const Vec3 ext = node.hi - node.lo;
        const std::size_t ax = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(tris_.begin() + static_cast<std::ptrdiff_t>(begin), tris_.begin() + static_cast<std::ptrdiff_t>(mid),
                         tris_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                             const double ca = centroid(a)[ax], cb = centroid(b)[ax];
                             return ca < cb || (ca == cb && a < b);
                         });
        const auto l = build(begin, mid);
        const auto r = build(mid, end);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    static double box_dist2(const Node &n, const Vec3 &p) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            const double d = p[a] < n.lo[a] ? n.lo[a] - p[a] : (p[a] > n.hi[a] ? p[a] - n.hi[a] : 0.0);
            d2 += d * d;
        }
        return d2;
    }

    void search(std::int64_t id, const Vec3 &p, double &best) const {
        const Node &n = nodes_[static_cast<std::size_t>(id)];
        if (box_dist2(n, p) >= best) return;
        if (n.left < 0) {
            for (std::size_t i = n.begin; i < n.end; ++i) {
                const auto &tr = mesh_.triangles[tris_[i]];
                const Vec3 q = closest_point_on_triangle(p, mesh_.vertices[tr[0]], mesh_.vertices[tr[1]], mesh_.vertices[tr[2]]);
                best = std::min(best, norm2(q - p));
            }
            return;
        }
        const double dl = box_dist2(nodes_[static_cast<std::size_t>(n.left)], p);
        const double dr = box_dist2(nodes_[static_cast<std::size_t>(n.right)], p);
        if (dl <= dr) {
            search(n.left, p, best);
            search(n.right, p, best);
        } else {
            search(n.right, p, best);
            search(n.left, p, best);
        }
    }

    const TriangleMesh &mesh_;
    std::vector<std::uint32_t> tris_;
    std::vector<Node> nodes_;
};

} // namespace morphforge
