// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "morphforge/errors.hpp"
#include "morphforge/vec3.hpp"

namespace morphforge {

/// Surface mesh in mm. Triangles index into `vertices`.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;

    bool empty() const noexcept { return triangles.empty(); }

    void validate() const {
        if (!triangles.empty() && vertices.size() < 3)
            throw ValidationError("triangle mesh has fewer than 3 vertices");
        for (std::size_t t = 0; t < triangles.size(); ++t) {
            const auto &tri = triangles[t];
            for (auto v : tri) {
                if (v >= vertices.size())
                    throw ValidationError("triangle " + std::to_string(t) + " references vertex " +
                                          std::to_string(v) + " out of range");
            }
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
                throw ValidationError("triangle " + std::to_string(t) + " repeats a vertex");
        }
    }
};

enum class ElementKind { hex8, tet4, tri3, quad4 };

constexpr std::size_t arity(ElementKind k) {
    switch (k) {
    case ElementKind::hex8: return 8;
    case ElementKind::tet4: return 4;
    case ElementKind::tri3: return 3;
    case ElementKind::quad4: return 4;
    }
    return 0;
}

constexpr std::string_view to_string(ElementKind k) {
    switch (k) {
    case ElementKind::hex8: return "hex8";
    case ElementKind::tet4: return "tet4";
    case ElementKind::tri3: return "tri3";
    case ElementKind::quad4: return "quad4";
    }
    return "?";
}

inline ElementKind parse_element_kind(std::string_view s) {
    if (s == "hex8") return ElementKind::hex8;
    if (s == "tet4") return ElementKind::tet4;
    if (s == "tri3") return ElementKind::tri3;
    if (s == "quad4") return ElementKind::quad4;
    throw ValidationError("unknown element kind '" + std::string(s) + "'");
}

struct Element {
    std::int64_t id = 0;
    ElementKind kind = ElementKind::hex8;
    std::string part;
    std::vector<std::int64_t> nodes;

    friend bool operator==(const Element &, const Element &) = default;
};

/// Volumetric FE mesh. Nodes are keyed by id; ordering is by id.
struct FEMesh {
    std::map<std::int64_t, Vec3> nodes;
    std::vector<Element> elements;

    const Vec3 &node(std::int64_t id) const {
        auto it = nodes.find(id);
        if (it == nodes.end()) throw ValidationError("node " + std::to_string(id) + " does not exist");
        return it->second;
    }

    void validate() const {
        for (const auto &e : elements) {
            if (e.nodes.size() != arity(e.kind))
                throw ValidationError("element " + std::to_string(e.id) + " of kind " +
                                      std::string(to_string(e.kind)) + " has " + std::to_string(e.nodes.size()) +
                                      " nodes, expected " + std::to_string(arity(e.kind)));
            for (auto n : e.nodes) {
                if (!nodes.contains(n))
                    throw ValidationError("element " + std::to_string(e.id) + " references missing node " +
                                          std::to_string(n));
            }
        }
    }

    /// True when both meshes have the same element ids, kinds, parts and node tuples.
    bool same_connectivity(const FEMesh &other) const {
        if (elements != other.elements || nodes.size() != other.nodes.size()) return false;
        auto a = nodes.begin();
        auto b = other.nodes.begin();
        for (; a != nodes.end(); ++a, ++b)
            if (a->first != b->first) return false;
        return true;
    }
};

/// Proper rigid motion p -> R p + t.
struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation;

    Vec3 apply(const Vec3 &p) const { return rotation * p + translation; }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transposed();
        return {rt, -(rt * translation)};
    }

    void validate(double tol = 1e-9) const {
        const Mat3 should_be_id = rotation.transposed() * rotation;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                if (std::abs(should_be_id(r, c) - (r == c ? 1.0 : 0.0)) > tol)
                    throw ValidationError("rotation matrix is not orthonormal");
        if (std::abs(rotation.determinant() - 1.0) > tol)
            throw ValidationError("rotation matrix determinant is not +1");
    }

    /// Rotation of `angle_rad` about a (not necessarily unit) axis, Rodrigues form.
    static RigidTransform from_axis_angle(Vec3 axis, double angle_rad, Vec3 translation = {}) {
        axis = axis / norm(axis);
        const double c = std::cos(angle_rad), s = std::sin(angle_rad), C = 1.0 - c;
        RigidTransform t;
        t.rotation.m = {c + axis.x * axis.x * C,          axis.x * axis.y * C - axis.z * s, axis.x * axis.z * C + axis.y * s,
                        axis.y * axis.x * C + axis.z * s, c + axis.y * axis.y * C,          axis.y * axis.z * C - axis.x * s,
                        axis.z * axis.x * C - axis.y * s, axis.z * axis.y * C + axis.x * s, c + axis.z * axis.z * C};
        t.translation = translation;
        return t;
    }
};

inline TriangleMesh apply_rigid(const TriangleMesh &mesh, const RigidTransform &t) {
    t.validate();
    TriangleMesh out = mesh;
    for (auto &v : out.vertices) v = t.apply(v);
    return out;
}

inline FEMesh apply_rigid(const FEMesh &mesh, const RigidTransform &t) {
    t.validate();
    FEMesh out = mesh;
    for (auto &[id, p] : out.nodes) p = t.apply(p);
    return out;
}

/// Least-squares rigid fit (Kabsch): argmin sum |R s_i + t - g_i|^2 with det R = +1.
inline RigidTransform fit_rigid(std::span<const Vec3> source, std::span<const Vec3> target) {
    if (source.size() != target.size())
        throw DegenerateError("landmark count mismatch: " + std::to_string(source.size()) + " vs " +
                              std::to_string(target.size()));
    if (source.size() < 3)
        throw DegenerateError("rigid fit needs at least 3 landmark pairs, got " + std::to_string(source.size()));

    const auto n = static_cast<double>(source.size());
    Vec3 cs, ct;
    for (std::size_t i = 0; i < source.size(); ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs = cs / n;
    ct = ct / n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d spread_s = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d spread_t = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Vec3 a = source[i] - cs;
        const Vec3 b = target[i] - ct;
        const Eigen::Vector3d ea(a.x, a.y, a.z), eb(b.x, b.y, b.z);
        cov += ea * eb.transpose();
        spread_s += ea * ea.transpose();
        spread_t += eb * eb.transpose();
    }

    // Collinear (or coincident) landmarks leave the rotation about the line undetermined.
    auto rank_deficient = [](const Eigen::Matrix3d &s) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s);
        const auto ev = es.eigenvalues(); // ascending
        return ev(2) <= 0.0 || ev(1) <= 1e-12 * ev(2);
    };
    if (rank_deficient(spread_s) || rank_deficient(spread_t))
        throw DegenerateError("landmarks are collinear or coincident; rigid fit is undetermined");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Eigen::Matrix3d r = v * d * u.transpose();

    RigidTransform out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out.rotation(i, j) = r(i, j);
    out.translation = ct - out.rotation * cs;
    return out;
}

} // namespace morphforge
