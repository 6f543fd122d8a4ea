// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "morphforge/morphforge.hpp"
#include "test_util.hpp"

using namespace morphforge;
using morphforge::testing::slurp;
using morphforge::testing::spit;
using morphforge::testing::TempDir;

namespace {

struct CliRun {
    int code = -1;
    std::string out, err;
};

CliRun cli(const TempDir &dir, const std::string &args) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + MORPHFORGE_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string q(const std::filesystem::path &p) { return "\"" + p.string() + "\""; }

void write_csv(const std::filesystem::path &p, const std::vector<std::vector<double>> &channels, double dt) {
    std::vector<TimeSeries> ts;
    for (std::size_t c = 0; c < channels.size(); ++c) {
        TimeSeries s;
        s.dt = dt;
        s.samples = channels[c];
        s.label = "ch" + std::to_string(c);
        ts.push_back(s);
    }
    write_timeseries_csv(ts, p);
}

std::vector<double> pulse(std::size_t n, double dt, double amp, double width) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt - 0.05;
        v[i] = amp * std::exp(-t * t / (2 * width * width));
    }
    return v;
}

/// Manifest whose template and target are the same sphere, with a hex block inside it.
std::filesystem::path self_manifest(const TempDir &dir, bool with_landmarks) {
    write_stl(make_sphere({0, 0, 0}, 12.0, 3), dir / "sphere.stl", StlFormat::binary);
    write_femesh(make_hex_block({-4, -4, -4}, {2, 2, 2}, {4, 4, 4}, "body"), dir / "block.mesh");
    if (with_landmarks) spit(dir / "lm.txt", "# target  template\n12 0 0 12 0 0\n0 12 0 0 12 0\n0 0 12 0 0 12\n-12 0 0 -12 0 0\n");
    const json m = {{"template", {{"skin", "sphere.stl"}, {"fe_mesh", "block.mesh"}}},
                    {"target", {{"skin", "sphere.stl"}}},
                    {"landmarks", "lm.txt"},
                    {"output_dir", "out"},
                    {"spacing_mm", 2.0}};
    spit(dir / "manifest.json", m.dump(2));
    return dir / "manifest.json";
}

} // namespace

TEST(Cli, VoxelizeCubeMatchesOracle) {
    TempDir dir;
    const auto cube = make_box({0, 0, 0}, {3, 2, 2.5});
    write_stl(cube, dir / "cube.stl", StlFormat::ascii);
    const CliRun r = cli(dir, "voxelize " + q(dir / "cube.stl") + " --spacing 0.5 -o " + q(dir / "cube.mhd"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto img = read_binary_image(dir / "cube.mhd");
    std::size_t expected = 0;
    for (std::int64_t k = 0; k < img.grid.dims[2]; ++k)
        for (std::int64_t j = 0; j < img.grid.dims[1]; ++j)
            for (std::int64_t i = 0; i < img.grid.dims[0]; ++i) {
                const bool inside = std::abs(morphforge::testing::winding_number(cube, img.grid.position(i, j, k))) > 0.5;
                expected += inside;
                ASSERT_EQ(img.at(i, j, k) != 0, inside);
            }
    EXPECT_EQ(expected, 6u * 4u * 5u);
    EXPECT_NE(r.out.find("occupied " + std::to_string(expected)), std::string::npos) << r.out;
}

TEST(Cli, MissingFileNamesPath) {
    TempDir dir;
    const auto missing = dir / "nowhere.stl";
    const CliRun r = cli(dir, "voxelize " + q(missing) + " -o " + q(dir / "x.mhd"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing.string()), std::string::npos) << r.err;
}

TEST(Cli, ZeroSpacingIsValidationError) {
    TempDir dir;
    write_stl(make_box({0, 0, 0}, {1, 1, 1}), dir / "cube.stl", StlFormat::binary);
    const CliRun r = cli(dir, "voxelize " + q(dir / "cube.stl") + " --spacing 0 -o " + q(dir / "x.mhd"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("spacing"), std::string::npos) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "x.mhd"));
}

TEST(Cli, OpenSurfaceExitsNonZero) {
    TempDir dir;
    TriangleMesh m = make_box({0, 0, 0}, {1, 1, 1});
    m.triangles.pop_back();
    write_stl(m, dir / "open.stl", StlFormat::binary);
    const CliRun r = cli(dir, "voxelize " + q(dir / "open.stl") + " -o " + q(dir / "x.mhd"));
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, UnknownFlagIsUsageError) {
    TempDir dir;
    EXPECT_EQ(cli(dir, "evaluate --bogus").code, 2);
    EXPECT_EQ(cli(dir, "").code, 2);
}

TEST(Cli, EvaluateIdenticalAndTranslated) {
    TempDir dir;
    const auto g = morphforge::testing::cube_grid(16);
    const auto a = morphforge::testing::make_block(g, {3, 3, 3}, {9, 8, 10});
    const auto b = morphforge::testing::make_block(g, {5, 3, 3}, {11, 8, 10});
    write_image(a, dir / "a.mhd");
    write_image(b, dir / "b.mhd");

    CliRun r = cli(dir, "evaluate " + q(dir / "a.mhd") + " " + q(dir / "a.mhd") + " -o " + q(dir / "same.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    json j = json::parse(slurp(dir / "same.json"));
    EXPECT_EQ(j["dice"].get<double>(), 1.0);
    EXPECT_EQ(j["hd95_mm"].get<double>(), 0.0);
    EXPECT_EQ(json::parse(r.out), j);

    r = cli(dir, "evaluate " + q(dir / "a.mhd") + " " + q(dir / "b.mhd") + " -o " + q(dir / "shift.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    j = json::parse(slurp(dir / "shift.json"));
    // 6x5x7 blocks overlapping in 4x5x7.
    EXPECT_NEAR(j["dice"].get<double>(), 2.0 * 140 / 420, 1e-12);
    const auto lib = evaluate_accuracy(a, b);
    EXPECT_EQ(j["hd95_mm"].get<double>(), lib.hausdorff->hd95);
    EXPECT_EQ(j["hd95_mm"].get<double>(), 2.0);
}

TEST(Cli, EvaluateEmptyReportsDiceZeroAndFails) {
    TempDir dir;
    const auto g = morphforge::testing::cube_grid(8);
    write_image(BinaryImage3D(g), dir / "empty.mhd");
    write_image(morphforge::testing::make_block(g, {2, 2, 2}, {5, 5, 5}), dir / "b.mhd");
    const CliRun r = cli(dir, "evaluate " + q(dir / "empty.mhd") + " " + q(dir / "b.mhd"));
    EXPECT_EQ(r.code, 2);
    const json j = json::parse(r.out);
    EXPECT_EQ(j["dice"].get<double>(), 0.0);
    EXPECT_TRUE(j["hd95_mm"].is_null());
    EXPECT_NE(r.err.find("undefined"), std::string::npos);
}

TEST(Cli, EvaluateGridMismatch) {
    TempDir dir;
    write_image(BinaryImage3D(morphforge::testing::cube_grid(8)), dir / "a.mhd");
    write_image(BinaryImage3D(morphforge::testing::cube_grid(9)), dir / "b.mhd");
    const CliRun r = cli(dir, "evaluate " + q(dir / "a.mhd") + " " + q(dir / "b.mhd"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("grid"), std::string::npos) << r.err;
}

TEST(Cli, CoraIdenticalIsGood) {
    TempDir dir;
    write_csv(dir / "ref.csv", {pulse(400, 1e-3, 3.0, 0.01)}, 1e-3);
    const CliRun r = cli(dir, "cora " + q(dir / "ref.csv") + " " + q(dir / "ref.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(r.out);
    EXPECT_NEAR(j["average"].get<double>(), 1.0, 1e-9);
    EXPECT_EQ(j["classification"], "good");
    EXPECT_TRUE(j["cfc"].is_null());
}

TEST(Cli, CoraThreeChannelsAverage) {
    TempDir dir;
    const double dt = 1e-3;
    std::vector<std::vector<double>> ref, test;
    for (int c = 0; c < 3; ++c) {
        ref.push_back(pulse(400, dt, 1.0 + c, 0.01));
        test.push_back(pulse(400, dt, (1.0 + c) * (1.0 + 0.3 * c), 0.012));
    }
    write_csv(dir / "ref.csv", ref, dt);
    write_csv(dir / "test.csv", test, dt);
    const CliRun r = cli(dir, "cora " + q(dir / "ref.csv") + " " + q(dir / "test.csv") + " -o " + q(dir / "c.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(slurp(dir / "c.json"));
    ASSERT_EQ(j["channels"].size(), 3u);
    double mean = 0;
    for (const auto &c : j["channels"]) mean += c["total"].get<double>();
    EXPECT_NEAR(j["average"].get<double>(), mean / 3.0, 1e-12);
    EXPECT_EQ(j["channels"][1]["label"], "ch1");
}

TEST(Cli, CoraRecordsFilterClass) {
    TempDir dir;
    const double dt = 1e-4;
    write_csv(dir / "ref.csv", {pulse(2000, dt, 5.0, 0.01)}, dt);
    write_csv(dir / "test.csv", {pulse(2000, dt, 4.0, 0.011)}, dt);
    spit(dir / "p.json", R"({"a_0": 0.05, "b_0": 0.5})");
    const CliRun r = cli(dir, "cora " + q(dir / "ref.csv") + " " + q(dir / "test.csv") + " --params " + q(dir / "p.json") +
                               " --cfc 60");
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(r.out);
    EXPECT_EQ(j["cfc"], 60);
    EXPECT_EQ(j["params"]["a_0"].get<double>(), 0.05);
    EXPECT_EQ(cli(dir, "cora " + q(dir / "ref.csv") + " " + q(dir / "test.csv") + " --cfc 70").code, 2);
}

TEST(Cli, FilterWritesEveryChannel) {
    TempDir dir;
    const double dt = 1e-4;
    write_csv(dir / "in.csv", {std::vector<double>(1000, 2.5), pulse(1000, dt, 1.0, 0.005)}, dt);
    const CliRun r = cli(dir, "filter " + q(dir / "in.csv") + " --cfc 180 -o " + q(dir / "out.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ch = read_timeseries_csv(dir / "out.csv");
    ASSERT_EQ(ch.size(), 2u);
    for (double v : ch[0].samples) EXPECT_NEAR(v, 2.5, 1e-9);
}

TEST(Cli, RegisterInvertWarpRoundTrip) {
    TempDir dir;
    const auto g = morphforge::testing::cube_grid(24);
    write_image(morphforge::testing::make_ball(g, {11.5, 11.5, 11.5}, 6.0), dir / "f.mhd");
    write_image(morphforge::testing::make_ball(g, {13.5, 11.5, 11.5}, 6.0), dir / "m.mhd");
    CliRun r = cli(dir, "register --fixed " + q(dir / "f.mhd") + " --moving " + q(dir / "m.mhd") + " -o " +
                         q(dir / "d.mhd") + " --levels 2 --report " + q(dir / "reg.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    const json rep = json::parse(slurp(dir / "reg.json"));
    EXPECT_EQ(rep["params"]["pyramid_levels"], 2);
    EXPECT_LT(rep["final_mse"].get<double>(), rep["initial_mse"].get<double>());

    r = cli(dir, "warp-image " + q(dir / "m.mhd") + " " + q(dir / "d.mhd") + " -o " + q(dir / "w.mhd"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_GT(dice(read_binary_image(dir / "w.mhd"), read_binary_image(dir / "f.mhd")), 0.95);

    r = cli(dir, "invert-field " + q(dir / "d.mhd") + " -o " + q(dir / "inv.mhd"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(json::parse(r.out)["converged"].get<bool>());
}

TEST(Cli, MorphJacobianDistmap) {
    TempDir dir;
    const auto g = morphforge::testing::cube_grid(10, 1.0, {-1, -1, -1});
    write_image(DisplacementField(g, Vec3{0.5, 0, 0}), dir / "d.mhd");
    write_femesh(make_hex_block({0, 0, 0}, {1, 1, 1}, {2, 2, 2}, "body"), dir / "b.mesh");
    CliRun r = cli(dir, "morph " + q(dir / "b.mesh") + " --field " + q(dir / "d.mhd") + " -o " + q(dir / "m.mesh") +
                         " --report " + q(dir / "q.json"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(json::parse(slurp(dir / "q.json"))["max_node_displacement_mm"].get<double>(), 0.5, 1e-12);

    r = cli(dir, "jacobian " + q(dir / "m.mesh") + " --csv " + q(dir / "j.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["minimum"].get<double>(), 1.0);
    EXPECT_EQ(slurp(dir / "j.csv").rfind("element_id,scaled_jacobian\n", 0), 0u);

    write_stl(make_box({0, 0, 0}, {2, 2, 2}), dir / "box.stl", StlFormat::binary);
    r = cli(dir, "morph " + q(dir / "box.stl") + " --field " + q(dir / "d.mhd") + " -o " + q(dir / "moved.stl"));
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli(dir, "distmap " + q(dir / "moved.stl") + " " + q(dir / "box.stl") + " -o " + q(dir / "dist.csv"));
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(dir / "dist.csv");
    EXPECT_EQ(csv.rfind("vertex_id,distance_mm\n", 0), 0u);
    // Shifted by 0.5 along x: vertices on x = 2.5 lie 0.5 from the box, others on its surface.
    EXPECT_NE(csv.find(",0.5\n"), std::string::npos);
}

TEST(Cli, PersonalizeIdenticalShapes) {
    TempDir dir;
    const auto manifest = self_manifest(dir, true);
    const CliRun r = cli(dir, "personalize " + q(manifest));
    ASSERT_EQ(r.code, 0) << r.err;
    const json s = json::parse(slurp(dir / "out" / "summary.json"));
    EXPECT_GE(s["accuracy"]["dice"].get<double>(), 0.99);
    EXPECT_LT(s["quality"]["max_node_displacement_mm"].get<double>(), 2.0);
    EXPECT_EQ(s["parameters"]["spacing_mm"], json({2.0, 2.0, 2.0}));
    EXPECT_TRUE(s["parameters"].contains("demons"));
    EXPECT_TRUE(s["parameters"].contains("mask"));
    for (const auto &a : s["artifacts"]) EXPECT_TRUE(std::filesystem::exists(dir / "out" / a.get<std::string>())) << a;
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "morphed_skin.stl"));
    EXPECT_FALSE(std::filesystem::exists(dir / "out" / ".morphforge.lock"));
}

TEST(Cli, PersonalizeFlagsOverrideManifest) {
    TempDir dir;
    const auto manifest = self_manifest(dir, true);
    const CliRun r = cli(dir, "personalize " + q(manifest) + " --output-dir " + q(dir / "other") +
                               " --seed 7 --levels 1 --iterations 5");
    ASSERT_EQ(r.code, 0) << r.err;
    const json s = json::parse(slurp(dir / "other" / "summary.json"));
    EXPECT_EQ(s["parameters"]["seed"], 7);
    EXPECT_EQ(s["parameters"]["demons"]["pyramid_levels"], 1);
    EXPECT_EQ(s["parameters"]["demons"]["iterations_per_level"], json({5}));
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, PersonalizeMissingLandmarksFailsBeforeCompute) {
    TempDir dir;
    const auto manifest = self_manifest(dir, false);
    const CliRun r = cli(dir, "personalize " + q(manifest));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("lm.txt"), std::string::npos) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Cli, PersonalizeRefusesLockedDirectory) {
    TempDir dir;
    const auto manifest = self_manifest(dir, true);
    std::filesystem::create_directories(dir / "out");
    spit(dir / "out" / ".morphforge.lock", "");
    const CliRun r = cli(dir, "personalize " + q(manifest));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
}
