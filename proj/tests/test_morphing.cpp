// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "morphforge/json_io.hpp"
#include "morphforge/morphing.hpp"
#include "morphforge/primitives.hpp"
#include "test_util.hpp"

using namespace morphforge;
using morphforge::testing::cube_grid;

namespace {

/// Field whose value at position p is A p + b.
DisplacementField affine_field(const GridGeometry &g, const Mat3 &a, const Vec3 &b) {
    DisplacementField d(g);
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) d.at(i, j, k) = a * g.position(i, j, k) + b;
    return d;
}

GridGeometry field_grid() {
    GridGeometry g = cube_grid(12, 0.5, {-2, -2, -2});
    g.spacing = {0.5, 0.75, 0.6};
    return g;
}

/// Two stacked hex columns: "leg" at the bottom, "head" on top.
FEMesh two_part_mesh() {
    FEMesh m = make_hex_block({0, 0, 0}, {1, 1, 1}, {1, 1, 4}, "leg");
    for (auto &e : m.elements)
        if (e.id > 2) e.part = "head";
    return m;
}

} // namespace

TEST(SampleField, VoxelCenterAndCellCenter) {
    const auto g = cube_grid(4, 2.0, {1, 1, 1});
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    DisplacementField d(g);
    for (auto &v : d.data) v = {u(rng), u(rng), u(rng)};
    EXPECT_EQ(sample_field(d, g.position(2, 1, 3)), d.at(2, 1, 3));
    Vec3 mean{};
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) mean += d.at(1 + dx, 0 + dy, 2 + dz);
    mean *= 0.125;
    EXPECT_LE(norm(sample_field(d, g.position(1, 0, 2) + Vec3{1, 1, 1}) - mean), 1e-15);
}

TEST(SampleField, ReproducesLinearFields) {
    const auto g = field_grid();
    Mat3 a;
    a.m = {0.1, -0.2, 0.05, 0.3, 0.0, 0.07, -0.4, 0.11, 0.2};
    const Vec3 b{0.5, -1.0, 2.0};
    const auto d = affine_field(g, a, b);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ux(-2.0, 3.5), uy(-2.0, 6.25), uz(-2.0, 4.6);
    for (int n = 0; n < 20; ++n) {
        const Vec3 p{ux(rng), uy(rng), uz(rng)};
        EXPECT_LE(norm(sample_field(d, p) - (a * p + b)), 1e-9);
    }
}

TEST(SampleField, OutsideUsesClampedPosition) {
    const auto g = cube_grid(3);
    DisplacementField d(g);
    d.at(2, 1, 0) = {1, 2, 3};
    EXPECT_EQ(sample_field(d, {50, 1, -7}), (Vec3{1, 2, 3}));
}

TEST(MorphMesh, ZeroFieldIsIdentity) {
    const auto m = two_part_mesh();
    const auto r = morph_mesh(m, DisplacementField(field_grid()), MorphMask{{"head"}, 2.0});
    EXPECT_EQ(r.mesh.nodes, m.nodes);
    EXPECT_TRUE(r.mesh.same_connectivity(m));
}

TEST(MorphMesh, ConstantFieldTranslates) {
    const auto m = two_part_mesh();
    const Vec3 c{0.25, -0.5, 1.0};
    const auto r = morph_mesh(m, DisplacementField(cube_grid(10, 1.0, {-2, -2, -2}), c));
    for (const auto &[id, p] : m.nodes) EXPECT_EQ(r.mesh.node(id), p + c);
}

TEST(MorphMesh, LinearRampStretchesHexAndKeepsRightAngles) {
    const FEMesh cube = make_hex_block({0, 0, 0}, {1, 1, 1}, {1, 1, 1});
    Mat3 a;
    a.m = {0.1, 0, 0, 0, 0, 0, 0, 0, 0};
    const auto r = morph_mesh(cube, affine_field(cube_grid(6, 0.5, {-0.5, -0.5, -0.5}), a, {}));
    for (const auto &[id, p] : cube.nodes) {
        EXPECT_NEAR(r.mesh.node(id).x, 1.1 * p.x, 1e-12);
        EXPECT_EQ(r.mesh.node(id).y, p.y);
    }
    EXPECT_NEAR(scaled_jacobian(r.mesh).minimum, 1.0, 1e-9);
}

TEST(MorphMesh, ExcludedNodesAreBitwiseUnchanged) {
    const auto m = two_part_mesh();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    DisplacementField d(field_grid());
    for (auto &v : d.data) v = {u(rng), u(rng), u(rng)};
    const auto r = morph_mesh(m, d, MorphMask{{"head"}, 1.5});
    for (const auto &e : m.elements) {
        if (e.part != "head") continue;
        for (auto id : e.nodes) EXPECT_EQ(r.mesh.node(id), m.node(id));
    }
    EXPECT_TRUE(r.mesh.same_connectivity(m));
    for (std::size_t i = 0; i < m.elements.size(); ++i) {
        EXPECT_EQ(r.mesh.elements[i].part, m.elements[i].part);
        EXPECT_EQ(r.mesh.elements[i].kind, m.elements[i].kind);
    }
}

TEST(MorphMesh, BlendWeightIsLinearAndContinuous) {
    FEMesh m;
    m.nodes = {{1, {0, 0, 0}}, {2, {1, 0, 0}}, {3, {0, 1, 0}}, {4, {0, 0, 1}}};
    m.elements = {{1, ElementKind::tet4, "head", {1, 2, 3, 4}}};
    // Probe nodes at distances from the frozen set along -x.
    const std::vector<double> dist{0.5, 1.0, 1.999999999, 2.000000001, 3.0};
    for (std::size_t n = 0; n < dist.size(); ++n) m.nodes.emplace(10 + n, Vec3{-dist[n], 0, 0});
    const Vec3 c{0, 0, 1};
    const auto r = morph_mesh(m, DisplacementField(cube_grid(8, 1.0, {-4, -4, -4}), c), MorphMask{{"head"}, 2.0});
    for (std::size_t n = 0; n < dist.size(); ++n) {
        const double w = r.mesh.node(static_cast<std::int64_t>(10 + n)).z;
        EXPECT_NEAR(w, std::min(1.0, dist[n] / 2.0), 1e-12);
    }
    EXPECT_NEAR(r.mesh.node(12).z, r.mesh.node(13).z, 1e-6);
}

TEST(MorphMesh, OutsideNodesWarn) {
    const auto m = make_hex_block({0, 0, 0}, {1, 1, 1}, {3, 1, 1});
    const auto r = morph_mesh(m, DisplacementField(cube_grid(2, 1.0, {0, 0, 0})));
    EXPECT_FALSE(r.outside_nodes.empty());
    EXPECT_NE(r.warning.find("outside"), std::string::npos);
}

TEST(MorphMesh, TriangleMeshMovesEveryVertex) {
    const auto box = make_box({0, 0, 0}, {1, 1, 1});
    const auto r = morph_mesh(box, DisplacementField(cube_grid(4, 1.0, {-1, -1, -1}), Vec3{2, 0, 0}));
    for (std::size_t i = 0; i < box.vertices.size(); ++i) EXPECT_EQ(r.mesh.vertices[i], (box.vertices[i] + Vec3{2, 0, 0}));
    EXPECT_EQ(r.mesh.triangles, box.triangles);
}

TEST(MorphReport, IdenticalMeshes) {
    const auto m = two_part_mesh();
    const auto q = morph_report(m, m);
    EXPECT_EQ(q.max_node_displacement, 0.0);
    EXPECT_EQ(q.min_jacobian_before, q.min_jacobian_after);
    EXPECT_EQ(q.mean_jacobian_before, q.mean_jacobian_after);
    EXPECT_EQ(q.elements_below_threshold, 0u);
}

TEST(MorphReport, TranslationKeepsJacobians) {
    const auto m = two_part_mesh();
    RigidTransform t;
    t.translation = {3, 4, 0};
    const auto q = morph_report(m, apply_rigid(m, t));
    EXPECT_NEAR(q.max_node_displacement, 5.0, 1e-12);
    EXPECT_NEAR(q.min_jacobian_after, q.min_jacobian_before, 1e-12);
}

TEST(MorphReport, StrongShearIsFlagged) {
    const FEMesh before = make_hex_block({0, 0, 0}, {1, 1, 1}, {1, 1, 1});
    FEMesh after = before;
    for (auto &[id, p] : after.nodes)
        if (p.z > 0.5) p.x += 10.0;
    // Each corner determinant is 1 with edge lengths 1, 1, sqrt(101).
    const auto q = morph_report(before, after);
    EXPECT_NEAR(q.min_jacobian_after, 1.0 / std::sqrt(101.0), 1e-12);
    EXPECT_EQ(q.flagged_elements, (std::vector<std::int64_t>{1}));

    FEMesh mild = before;
    for (auto &[id, p] : mild.nodes)
        if (p.z > 0.5) p.x += 0.5;
    EXPECT_EQ(morph_report(before, mild).elements_below_threshold, 0u);
}

TEST(MorphReport, ConnectivityMismatchRejected) {
    const auto a = make_hex_block({0, 0, 0}, {1, 1, 1}, {1, 1, 1});
    const auto b = make_hex_block({0, 0, 0}, {1, 1, 1}, {2, 1, 1});
    EXPECT_THROW(morph_report(a, b), ValidationError);
}

TEST(MorphReport, TextAndJsonCarrySameKeys) {
    const auto m = two_part_mesh();
    const auto q = morph_report(m, m);
    const auto j = to_json(q);
    const auto text = to_text(q);
    for (const auto &[k, v] : j.items()) EXPECT_NE(text.find(k + ": "), std::string::npos);
}
