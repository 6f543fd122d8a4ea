// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "morphforge/morphforge.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace morphforge;
namespace mt = morphforge::testing;

namespace {

// Pinned tolerances.
constexpr double kSelfMeanField = 0.1;       // mm
constexpr double kSelfDice = 0.999;
constexpr double kSelfSeconds = 10.0;
constexpr double kShiftDice = 0.98;
constexpr double kShiftFieldError = 0.5;     // voxels
constexpr double kShiftSeconds = 30.0;
constexpr double kMorphDice = 0.95;
constexpr double kMorphHd95 = 2.0;           // mm
constexpr double kMorphSeconds = 120.0;
constexpr double kInverseP95 = 0.1;          // voxels
constexpr double kMetricTol = 1e-9;
constexpr std::size_t kMetricMaxBoundary = 500;
constexpr double kJacobianTol = 1e-9;
constexpr double kSphereVolumeRel = 0.02;
constexpr double kCoraIdentityTol = 1e-6;
constexpr double kCoraScalingTol = 1e-9;
constexpr double kCfcDcTol = 1e-9;
constexpr double kCfcLinearTol = 1e-9;
constexpr double kCfcGainRel = 0.01;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string &what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

/// Thresholded Gaussian: voxels where exp(-|(p-c)/s|^2 / 2) >= 1/2.
BinaryImage3D gaussian_blob(const GridGeometry &g, const Vec3 &c, const Vec3 &s) {
    BinaryImage3D img(g);
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const Vec3 u = cwise_div(g.position(i, j, k) - c, s);
                img.at(i, j, k) = std::exp(-0.5 * norm2(u)) >= 0.5 ? 1 : 0;
            }
    return img;
}

Outcome self_registration() {
    Outcome o;
    const auto g = mt::cube_grid(64, 1.0);
    const auto blob = gaussian_blob(g, {31.5, 31.5, 31.5}, {12, 10, 8});
    const auto t0 = Clock::now();
    const auto r = register_demons(blob, blob, DemonsParams::defaults_for(1.0));
    const auto warped = warp_image(blob, r.field);
    const double secs = seconds_since(t0);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < blob.data.size(); ++i)
        if (blob.data[i]) {
            sum += norm(r.field.data[i]);
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    const double d = dice(blob, warped);
    o.detail << "mean |D| " << mean << " mm, dice " << d << ", " << secs << " s";
    o.check(mean < kSelfMeanField, "mean |D|");
    o.check(d >= kSelfDice, "dice");
    o.check(secs < kSelfSeconds, "runtime");
    return o;
}

Outcome translation_recovery() {
    Outcome o;
    const auto g = mt::cube_grid(64, 1.0);
    const Vec3 s{10, 9, 8};
    const auto moving = gaussian_blob(g, {30.0, 31.5, 31.5}, s);
    const auto fixed = gaussian_blob(g, {33.0, 31.5, 31.5}, s); // moving shifted by +3 voxels along x
    const auto t0 = Clock::now();
    const auto r = register_demons(fixed, moving, DemonsParams::defaults_for(1.0));
    const auto warped = warp_image(moving, r.field);
    const double secs = seconds_since(t0);
    // Pull-back convention: fixed(x) = moving(x + D(x)), so D = -3 voxels along x.
    const Vec3 analytic{-3.0, 0.0, 0.0};
    const auto core = gaussian_blob(g, {33.0, 31.5, 31.5}, s * 0.6);
    Vec3 mean{};
    std::size_t n = 0;
    for (std::size_t i = 0; i < core.data.size(); ++i)
        if (core.data[i]) {
            mean += r.field.data[i];
            ++n;
        }
    mean *= 1.0 / static_cast<double>(n);
    const double err = norm(mean - analytic);
    const double d = dice(fixed, warped);
    o.detail << "dice " << d << ", mean interior D " << mean << " (error " << err << " voxel), " << secs << " s";
    o.check(d >= kShiftDice, "dice");
    o.check(err <= kShiftFieldError, "field");
    o.check(secs < kShiftSeconds, "runtime");
    return o;
}

/// Sphere r = 30 mm template and ellipsoid target stretched 1.2x along x, both centred at the origin.
struct ShapeFixture {
    TriangleMesh sphere = make_sphere({0, 0, 0}, 30.0, 5);
    TriangleMesh ellipsoid = make_ellipsoid({0, 0, 0}, {36.0, 30.0, 30.0}, 5);
    GridGeometry grid;

    ShapeFixture() {
        grid.dims = {128, 128, 128};
        grid.spacing = {1, 1, 1};
        grid.origin = {-63.5, -63.5, -63.5};
    }
};

struct MorphRun {
    RegistrationResult reg;
    InversionResult inv;
    AccuracyReport acc;
    double seconds = 0.0;
};

MorphRun run_shape_morph(const ShapeFixture &f) {
    MorphRun m;
    const auto t0 = Clock::now();
    const auto tpl = voxelize(f.sphere, f.grid, 0);
    const auto tgt = voxelize(f.ellipsoid, f.grid, 0);
    m.reg = register_demons(tpl, tgt, DemonsParams::defaults_for(1.0));
    m.inv = invert_field(m.reg.field, 50, 1e-3);
    m.acc = evaluate_accuracy(warp_image(tpl, m.inv.field), tgt);
    m.seconds = seconds_since(t0);
    return m;
}

Outcome shape_morph(const MorphRun &m) {
    Outcome o;
    const double hd = m.acc.hausdorff ? m.acc.hausdorff->hd95 : std::numeric_limits<double>::infinity();
    o.detail << "dice " << m.acc.dice << ", hd95 " << hd << " mm, " << m.seconds << " s on 128^3";
    o.check(m.acc.dice >= kMorphDice, "dice");
    o.check(hd <= kMorphHd95, "hd95");
    o.check(m.seconds < kMorphSeconds, "runtime");
    return o;
}

Outcome inverse_residual(const MorphRun &m) {
    Outcome o;
    // 1 mm spacing: residuals in mm equal residuals in voxels.
    const double p95 = m.inv.residual.p95;
    o.detail << "p95 residual " << p95 << " voxel, max " << m.inv.residual.max << ", " << m.inv.iterations
             << " iterations" << (m.inv.converged ? "" : " (not converged)");
    o.check(!m.inv.diverged, "diverged");
    o.check(p95 < kInverseP95, "p95");
    return o;
}

BinaryImage3D random_shape(const GridGeometry &g, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BinaryImage3D img(g);
    for (int blob = 0; blob < 2; ++blob) {
        const Vec3 c{5 + 8 * u(rng), 5 + 8 * u(rng), 5 + 8 * u(rng)};
        const Vec3 r{1.5 + 3 * u(rng), 1.5 + 3 * u(rng), 1.5 + 3 * u(rng)};
        for (std::int64_t k = 0; k < g.dims[2]; ++k)
            for (std::int64_t j = 0; j < g.dims[1]; ++j)
                for (std::int64_t i = 0; i < g.dims[0]; ++i)
                    if (norm2(cwise_div(g.position(i, j, k) - c, r)) <= 1.0) img.at(i, j, k) = 1;
    }
    return img;
}

Outcome metric_oracles() {
    Outcome o;
    std::mt19937_64 rng(20261018);
    double worst_dice = 0.0, worst_hd = 0.0;
    std::size_t max_boundary = 0;
    int instances = 0;
    while (instances < 10) {
        GridGeometry g = mt::cube_grid(18);
        g.spacing = {1.0, 1.25, 0.8};
        const auto a = random_shape(g, rng), b = random_shape(g, rng);
        const auto ba = mt::brute_boundary(a), bb = mt::brute_boundary(b);
        if (ba.empty() || bb.empty() || ba.size() > kMetricMaxBoundary || bb.size() > kMetricMaxBoundary) continue;
        ++instances;
        max_boundary = std::max({max_boundary, ba.size(), bb.size()});
        std::size_t na = 0, nb = 0, both = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            na += a.data[i] != 0;
            nb += b.data[i] != 0;
            both += a.data[i] && b.data[i];
        }
        const double ref_dice = 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
        const double ref_hd = std::max(mt::brute_directed(ba, bb, 95.0), mt::brute_directed(bb, ba, 95.0));
        worst_dice = std::max(worst_dice, std::abs(dice(a, b) - ref_dice));
        worst_hd = std::max(worst_hd, std::abs(hd95(a, b).hd95 - ref_hd));
    }
    o.detail << instances << " instances (<= " << max_boundary << " boundary voxels), max |dice err| " << worst_dice
             << ", max |hd95 err| " << worst_hd << " mm";
    o.check(worst_dice <= kMetricTol, "dice");
    o.check(worst_hd <= kMetricTol, "hd95");
    return o;
}

Outcome jacobian() {
    Outcome o;
    const std::array<Vec3, 8> unit{{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
    const double u = hex_scaled_jacobian(unit);

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    double rigid_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        auto p = unit;
        for (auto &v : p) v += Vec3{jitter(rng), jitter(rng), jitter(rng)};
        const auto rt = RigidTransform::from_axis_angle({jitter(rng), jitter(rng), 1.0}, 15.0 * jitter(rng), {4, -2, 7});
        auto q = p;
        for (auto &v : q) v = rt.apply(v);
        rigid_err = std::max(rigid_err, std::abs(hex_scaled_jacobian(q) - hex_scaled_jacobian(p)));
    }

    // Top face sheared 0.5 along x: every corner frame has unit edges and a (0.5, 0, 1) edge, determinant 1.
    auto sheared = unit;
    for (std::size_t i = 4; i < 8; ++i) sheared[i].x += 0.5;
    const double shear_expected = 1.0 / std::sqrt(1.0 + 0.25);
    const double shear = hex_scaled_jacobian(sheared);

    auto mirrored = unit;
    for (auto &v : mirrored) v.x = -v.x;
    const double inverted = hex_scaled_jacobian(mirrored);

    o.detail << "unit " << u << ", rigid max diff " << rigid_err << ", sheared " << shear << " vs " << shear_expected
             << ", mirrored " << inverted;
    o.check(u == 1.0, "unit");
    o.check(rigid_err <= kJacobianTol, "rigid");
    o.check(std::abs(shear - shear_expected) <= kJacobianTol, "shear");
    o.check(inverted < 0.0, "inverted");
    return o;
}

Outcome voxelizer() {
    Outcome o;
    const double r = 20.0, spacing = 1.0; // spacing = r / 20
    const auto sphere = voxelize(make_sphere({0.3, -0.2, 0.1}, r, 5), VoxelizeOptions{{spacing, spacing, spacing}, 4, 0});
    const double vol = static_cast<double>(count_occupied(sphere)) * spacing * spacing * spacing;
    const double analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
    const double rel = std::abs(vol - analytic) / analytic;

    const auto cube = make_box({0.1, 0.2, 0.3}, {4.6, 3.9, 5.2});
    const auto img = voxelize(cube, VoxelizeOptions{{0.5, 0.5, 0.5}, 3, 0});
    std::size_t mismatches = 0, inside = 0;
    const auto &g = img.grid;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const bool in = std::abs(mt::winding_number(cube, g.position(i, j, k))) > 0.5;
                inside += in;
                mismatches += (img.at(i, j, k) != 0) != in;
            }
    o.detail << "sphere volume error " << 100.0 * rel << " %, cube " << inside << " inside voxels, " << mismatches
             << " mismatches";
    o.check(rel <= kSphereVolumeRel, "volume");
    o.check(mismatches == 0, "cube");
    return o;
}

TimeSeries signal(std::size_t n, double dt, const std::function<double(double)> &fn) {
    TimeSeries s;
    s.dt = dt;
    s.label = "ch";
    for (std::size_t i = 0; i < n; ++i) s.samples.push_back(fn(static_cast<double>(i) * dt));
    return s;
}

Outcome cora() {
    Outcome o;
    const double pi = std::numbers::pi;
    const auto ref = signal(1001, 1e-4, [&](double t) {
        const double u = (t - 0.01) / 0.05;
        return u > 0.0 && u < 1.0 ? 2.0 * std::sin(pi * u) : 0.0;
    });
    const auto test = signal(1001, 1e-4, [&](double t) {
        const double u = (t - 0.013) / 0.055;
        return u > 0.0 && u < 1.0 ? 1.7 * std::sin(pi * u) + 0.1 * std::sin(3 * pi * u) : 0.0;
    });
    const double identity = cora_rate(ref, ref).total;
    const double base = cora_rate(ref, test).total;
    double scale_err = 0.0;
    for (double c : {0.01, 3.0, 250.0}) {
        TimeSeries rs = ref, ts = test;
        for (auto &v : rs.samples) v *= c;
        for (auto &v : ts.samples) v *= c;
        scale_err = std::max(scale_err, std::abs(cora_rate(rs, ts).total - base));
    }
    const auto up = [](double x) { return std::nextafter(x, 2.0); };
    const bool bounds = classify_biofidelity(0.44) == Biofidelity::poor &&
                        classify_biofidelity(up(0.44)) == Biofidelity::fair &&
                        classify_biofidelity(0.68) == Biofidelity::fair &&
                        classify_biofidelity(up(0.68)) == Biofidelity::good;
    o.detail << "identity " << identity << ", scaled total max diff " << scale_err << " (total " << base
             << "), thresholds " << (bounds ? "exact" : "wrong");
    o.check(std::abs(identity - 1.0) <= kCoraIdentityTol, "identity");
    o.check(scale_err <= kCoraScalingTol, "scaling");
    o.check(bounds, "thresholds");
    return o;
}

Outcome cfc() {
    Outcome o;
    const double pi = std::numbers::pi;
    double dc_err = 0.0;
    for (Cfc c : {Cfc::cfc60, Cfc::cfc180, Cfc::cfc600, Cfc::cfc1000})
        for (double v : cfc_filter(signal(3000, 1e-4, [](double) { return -4.25; }), c).samples)
            dc_err = std::max(dc_err, std::abs(v + 4.25));

    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0.0, 1.0);
    const auto x = signal(4000, 1e-4, [&](double) { return nd(rng); });
    const auto y = signal(4000, 1e-4, [&](double) { return 3.0 + nd(rng); });
    TimeSeries z = x;
    for (std::size_t i = 0; i < z.samples.size(); ++i) z.samples[i] = 1.5 * x.samples[i] - 2.0 * y.samples[i];
    const auto fx = cfc_filter(x, Cfc::cfc180).samples, fy = cfc_filter(y, Cfc::cfc180).samples,
               fz = cfc_filter(z, Cfc::cfc180).samples;
    double peak = 0.0, lin_err = 0.0;
    for (double v : fz) peak = std::max(peak, std::abs(v));
    for (std::size_t i = 0; i < fz.size(); ++i) lin_err = std::max(lin_err, std::abs(fz[i] - (1.5 * fx[i] - 2.0 * fy[i])));
    const double lin_rel = lin_err / peak;

    int worst_lag = 0;
    for (double f : {5.0, 20.0, 45.0}) {
        const auto s = signal(6000, 1e-4, [&](double t) { return std::sin(2 * pi * f * t); });
        worst_lag = std::max(worst_lag, std::abs(mt::best_lag(s.samples, cfc_filter(s, Cfc::cfc60).samples, 40, 1000, 5000)));
    }

    double gain_err = 0.0;
    const double dt = 1e-5;
    for (Cfc c : {Cfc::cfc60, Cfc::cfc180, Cfc::cfc600, Cfc::cfc1000}) {
        const double f = 0.1 * static_cast<double>(c);
        const auto s = signal(static_cast<std::size_t>(6.0 / f / dt), dt, [&](double t) { return std::sin(2 * pi * f * t); });
        const auto out = cfc_filter(s, c).samples;
        const double measured = mt::fitted_amplitude(out, dt, f, out.size() / 4, 3 * out.size() / 4);
        const double predicted = mt::impulse_response_gain(c, dt, f);
        gain_err = std::max(gain_err, std::abs(measured - predicted) / predicted);
    }
    o.detail << "dc max err " << dc_err << ", linearity rel err " << lin_rel << ", max lag " << worst_lag
             << " samples, gain rel err " << 100.0 * gain_err << " %";
    o.check(dc_err <= kCfcDcTol, "dc");
    o.check(lin_rel <= kCfcLinearTol, "linearity");
    o.check(worst_lag == 0, "phase");
    o.check(gain_err <= kCfcGainRel, "gain");
    return o;
}

int run_cli(const std::string &args, const std::filesystem::path &log) {
    const std::string cmd = std::string("\"") + MORPHFORGE_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism(const ShapeFixture &f) {
    Outcome o;
    mt::TempDir dir("mf_accept");
    write_stl(f.sphere, dir / "sphere.stl", StlFormat::binary);
    write_stl(f.ellipsoid, dir / "ellipsoid.stl", StlFormat::binary);
    write_femesh(make_hex_block({-15, -15, -15}, {5, 5, 5}, {6, 6, 6}, "torso"), dir / "block.mesh");
    mt::spit(dir / "landmarks.txt", "36 0 0 30 0 0\n-36 0 0 -30 0 0\n0 30 0 0 30 0\n0 0 30 0 0 30\n0 0 -30 0 0 -30\n");
    const json manifest = {{"template", {{"skin", "sphere.stl"}, {"fe_mesh", "block.mesh"}}},
                           {"target", {{"skin", "ellipsoid.stl"}}},
                           {"landmarks", "landmarks.txt"},
                           {"output_dir", "run"},
                           {"spacing_mm", 1.0},
                           {"padding_voxels", 28},
                           {"seed", 0}};
    mt::spit(dir / "manifest.json", manifest.dump(2));

    const auto t0 = Clock::now();
    const int rc1 = run_cli("personalize \"" + (dir / "manifest.json").string() + "\" --output-dir \"" +
                                (dir / "a").string() + "\"",
                            dir / "a.log");
    const int rc2 = run_cli("personalize \"" + (dir / "manifest.json").string() + "\" --output-dir \"" +
                                (dir / "b").string() + "\"",
                            dir / "b.log");
    const double secs = seconds_since(t0);
    o.check(rc1 == 0 && rc2 == 0, "exit codes " + std::to_string(rc1) + "/" + std::to_string(rc2) + ": " +
                                      mt::slurp(dir / "a.log"));
    if (!o.pass) return o;

    std::size_t raw = 0, files = 0, differing = 0;
    for (const auto &e : std::filesystem::directory_iterator(dir / "a")) {
        const auto name = e.path().filename();
        ++files;
        raw += name.extension() == ".raw";
        if (!std::filesystem::exists(dir / "b" / name) || mt::slurp(e.path()) != mt::slurp(dir / "b" / name)) {
            ++differing;
            o.detail << " differs: " << name.string();
        }
    }
    const json summary = json::parse(mt::slurp(dir / "a" / "summary.json"));
    o.detail << files << " artifacts (" << raw << " raw) compared, " << differing << " differ; run dice "
             << summary["accuracy"]["dice"].get<double>() << ", two runs " << secs << " s";
    o.check(raw >= 5, "raw artifact count");
    o.check(differing == 0, "byte identity");
    return o;
}

template <class Fn>
bool report(int id, const char *name, Fn &&fn) {
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception &e) {
        o.pass = false;
        o.detail << "exception: " << e.what();
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail.str() << std::endl;
    return o.pass;
}

} // namespace

int main() {
    bool ok = true;
    ok &= report(1, "self-registration", self_registration);
    ok &= report(2, "translation recovery", translation_recovery);

    const ShapeFixture shapes;
    std::optional<MorphRun> morph;
    ok &= report(3, "shape morph", [&] {
        morph = run_shape_morph(shapes);
        return shape_morph(*morph);
    });
    ok &= report(4, "inverse-field residual", [&] {
        if (!morph) throw std::runtime_error("criterion 3 did not produce a field");
        return inverse_residual(*morph);
    });
    ok &= report(5, "metric oracles", metric_oracles);
    ok &= report(6, "scaled Jacobian", jacobian);
    ok &= report(7, "voxelizer", voxelizer);
    ok &= report(8, "CORA", cora);
    ok &= report(9, "CFC filter", cfc);
    ok &= report(10, "end-to-end determinism", [&] { return determinism(shapes); });
    std::cout << (ok ? "all criteria passed" : "some criteria failed") << std::endl;
    return ok ? 0 : 1;
}
