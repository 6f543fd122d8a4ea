// SPDX-License-Identifier: Apache-2.0
// morphforge command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "morphforge/morphforge.hpp"

namespace fs = std::filesystem;
using namespace morphforge;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

Vec3 spacing_from(const std::vector<double> &v) {
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw ValidationError("--spacing takes 1 or 3 values");
}

json read_json_file(const fs::path &p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        throw ParseError("'" + p.string() + "': " + e.what(), e.byte);
    }
}

void write_json_file(const json &j, const fs::path &p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw InputError("cannot write '" + p.string() + "'");
    out << j.dump(2) << "\n";
}

/// Prints `j` and optionally writes it to `path`.
void emit(const json &j, const std::string &path) {
    std::cout << j.dump(2) << "\n";
    if (!path.empty()) write_json_file(j, path);
}

/// Demons settings shared by `register` and `personalize`; flags override the JSON file.
struct DemonsFlags {
    std::string params_file;
    std::optional<int> levels;
    std::vector<int> iterations;
    std::optional<double> sigma_fluid, sigma_diffusion, sigma_presmooth, max_step, tol, alpha;

    void add(CLI::App *cmd) {
        cmd->add_option("--params", params_file, "JSON file with demons parameters")->check(CLI::ExistingFile);
        cmd->add_option("--levels", levels, "pyramid levels");
        cmd->add_option("--iterations", iterations, "iterations per level, coarse to fine");
        cmd->add_option("--sigma-fluid", sigma_fluid, "update smoothing (mm)");
        cmd->add_option("--sigma-diffusion", sigma_diffusion, "field smoothing (mm)");
        cmd->add_option("--sigma-presmooth", sigma_presmooth, "image pre-smoothing (mm)");
        cmd->add_option("--max-step", max_step, "step clamp (voxels)");
        cmd->add_option("--tol", tol, "relative MSE improvement over 5 iterations");
        cmd->add_option("--alpha", alpha, "force normalization");
    }

    void apply(DemonsParams &p) const {
        if (!params_file.empty()) update_from_json(p, read_json_file(params_file));
        if (levels) {
            p.pyramid_levels = *levels;
            if (iterations.empty()) {
                const DemonsParams d;
                p.iterations_per_level.resize(static_cast<std::size_t>(std::max(*levels, 0)), d.iterations_per_level.back());
            }
        }
        if (!iterations.empty()) p.iterations_per_level = iterations;
        if (sigma_fluid) p.sigma_fluid = *sigma_fluid;
        if (sigma_diffusion) p.sigma_diffusion = *sigma_diffusion;
        if (sigma_presmooth) p.sigma_presmooth = *sigma_presmooth;
        if (max_step) p.max_step = *max_step;
        if (tol) p.convergence_tol = *tol;
        if (alpha) p.alpha = *alpha;
        p.validate();
    }
};

std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"morphforge: template mesh personalization by image registration"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "morphforge 1.0.0");
    std::function<int()> run;

    // voxelize ----------------------------------------------------------------
    struct {
        std::string input, output;
        std::vector<double> spacing{2.0};
        int padding = 4;
        std::uint64_t seed = 0;
    } vox;
    auto *c_vox = app.add_subcommand("voxelize", "voxelize a closed STL surface into a binary image");
    c_vox->add_option("mesh", vox.input, "input STL")->required();
    c_vox->add_option("-o,--output", vox.output, "output image header (.mhd)")->required();
    c_vox->add_option("--spacing", vox.spacing, "voxel size in mm (1 or 3 values)")->expected(1, 3);
    c_vox->add_option("--padding", vox.padding, "empty voxels around the bounding box");
    c_vox->add_option("--seed", vox.seed, "seed for tie-breaking ray jitter");
    c_vox->callback([&] {
        run = [&] {
            const TriangleMesh mesh = read_stl(vox.input);
            const VoxelizeOptions opt{spacing_from(vox.spacing), vox.padding, vox.seed};
            opt.spacing.x > 0 && opt.spacing.y > 0 && opt.spacing.z > 0
                ? void()
                : throw ValidationError("--spacing must be > 0");
            const BinaryImage3D img = voxelize(mesh, opt);
            write_image(img, vox.output);
            const Aabb box = bounds(mesh);
            std::cout << "occupied " << count_occupied(img) << " voxels\n"
                      << "mesh bounds " << box.lo << " .. " << box.hi << " mm\n"
                      << "grid " << img.grid.describe() << "\n";
            return 0;
        };
    });

    // register ----------------------------------------------------------------
    struct {
        std::string fixed, moving, output, report;
        DemonsFlags demons;
    } reg;
    auto *c_reg = app.add_subcommand("register", "diffeomorphic demons registration of two binary images");
    c_reg->add_option("--fixed", reg.fixed, "fixed image (field lives on its grid)")->required();
    c_reg->add_option("--moving", reg.moving, "moving image")->required();
    c_reg->add_option("-o,--output", reg.output, "output displacement field (.mhd)")->required();
    c_reg->add_option("--report", reg.report, "write a JSON registration report");
    reg.demons.add(c_reg);
    c_reg->callback([&] {
        run = [&] {
            const auto fixed = read_binary_image(reg.fixed);
            const auto moving = read_binary_image(reg.moving);
            DemonsParams p = DemonsParams::defaults_for(fixed.grid.min_spacing());
            reg.demons.apply(p);
            const auto result = register_demons(fixed, moving, p);
            write_image(result.field, reg.output);
            json j = to_json(result);
            j["params"] = to_json(p);
            std::cout << "mse " << result.initial_mse << " -> " << result.final_mse << "\n";
            if (!reg.report.empty()) write_json_file(j, reg.report);
            return 0;
        };
    });

    // invert-field ------------------------------------------------------------
    struct {
        std::string input, output, report;
        int iterations = 50;
        double tol = 1e-3;
    } inv;
    auto *c_inv = app.add_subcommand("invert-field", "fixed-point inversion of a displacement field");
    c_inv->add_option("field", inv.input, "displacement field")->required();
    c_inv->add_option("-o,--output", inv.output, "output inverse field")->required();
    c_inv->add_option("--iterations", inv.iterations, "iteration cap");
    c_inv->add_option("--tol", inv.tol, "stopping update size (voxels)");
    c_inv->add_option("--report", inv.report, "write residual statistics as JSON");
    c_inv->callback([&] {
        run = [&] {
            const auto d = read_field(inv.input);
            const auto r = invert_field(d, inv.iterations, inv.tol);
            write_image(r.field, inv.output);
            emit(to_json(r), inv.report);
            if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
            return r.diverged ? kExitNumerical : 0;
        };
    });

    // warp-image --------------------------------------------------------------
    struct {
        std::string image, field, output;
    } warp;
    auto *c_warp = app.add_subcommand("warp-image", "pull an image back through a displacement field");
    c_warp->add_option("image", warp.image, "binary (UINT8) or scalar (FLOAT32) image")->required();
    c_warp->add_option("field", warp.field, "displacement field on the same grid")->required();
    c_warp->add_option("-o,--output", warp.output, "output image")->required();
    c_warp->callback([&] {
        run = [&] {
            const ImageFile f = read_image_file(warp.image);
            const auto d = read_field(warp.field);
            if (f.type == ElementType::uint8) write_image(warp_image(to_binary(f), d), warp.output);
            else write_image(warp_image(to_scalar(f), d), warp.output);
            return 0;
        };
    });

    // morph -------------------------------------------------------------------
    struct {
        std::string mesh, field, output, report, exclude;
        std::optional<double> band;
        double threshold = 0.1;
    } mor;
    auto *c_mor = app.add_subcommand("morph", "apply a template-space field to an FE mesh or STL surface");
    c_mor->add_option("mesh", mor.mesh, "template mesh (.stl or neutral FE mesh)")->required();
    c_mor->add_option("--field", mor.field, "displacement field")->required();
    c_mor->add_option("-o,--output", mor.output, "morphed mesh")->required();
    c_mor->add_option("--exclude", mor.exclude, "comma-separated part labels kept fixed");
    c_mor->add_option("--blend-band", mor.band, "transition width around excluded parts (mm)");
    c_mor->add_option("--threshold", mor.threshold, "scaled Jacobian flag threshold");
    c_mor->add_option("--report", mor.report, "quality report path (.json, or key: value text otherwise)");
    c_mor->callback([&] {
        run = [&] {
            const auto d = read_field(mor.field);
            std::string warning;
            if (fs::path(mor.mesh).extension() == ".stl" || fs::path(mor.mesh).extension() == ".STL") {
                if (!mor.exclude.empty()) throw ValidationError("--exclude needs an FE mesh with part labels");
                const auto r = morph_mesh(read_stl(mor.mesh), d);
                write_stl(r.mesh, mor.output, StlFormat::binary);
                warning = r.warning;
            } else {
                MorphMask mask;
                for (const auto &p : split_list(mor.exclude)) mask.excluded_parts.insert(p);
                if (mor.band) mask.blend_band = *mor.band;
                const FEMesh before = read_femesh(mor.mesh);
                const auto r = morph_mesh(before, d, mask);
                write_femesh(r.mesh, mor.output);
                warning = r.warning;
                const QualityReport q = morph_report(before, r.mesh, mor.threshold);
                std::cout << to_text(q);
                if (!mor.report.empty()) {
                    if (fs::path(mor.report).extension() == ".json") write_json_file(to_json(q), mor.report);
                    else std::ofstream(mor.report, std::ios::binary) << to_text(q);
                }
            }
            if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
            return 0;
        };
    });

    // evaluate ----------------------------------------------------------------
    struct {
        std::string a, b, output;
    } ev;
    auto *c_ev = app.add_subcommand("evaluate", "Dice and HD95 between two binary images");
    c_ev->add_option("a", ev.a, "first image (e.g. warped template)")->required();
    c_ev->add_option("b", ev.b, "second image (e.g. target)")->required();
    c_ev->add_option("-o,--output", ev.output, "write the report as JSON");
    c_ev->callback([&] {
        run = [&] {
            const auto r = evaluate_accuracy(read_binary_image(ev.a), read_binary_image(ev.b));
            emit(to_json(r), ev.output);
            if (!r.hausdorff && !r.both_empty) {
                std::cerr << "error: hd95 is undefined for an empty image\n";
                return kExitInput;
            }
            if (r.both_empty) {
                std::cerr << "error: both images are empty; dice reported as 1 by convention, hd95 undefined\n";
                return kExitInput;
            }
            return 0;
        };
    });

    // distmap -----------------------------------------------------------------
    struct {
        std::string morphed, target, output;
    } dm;
    auto *c_dm = app.add_subcommand("distmap", "per-vertex distance from a morphed surface to a target surface");
    c_dm->add_option("morphed", dm.morphed, "morphed STL")->required();
    c_dm->add_option("target", dm.target, "target STL")->required();
    c_dm->add_option("-o,--output", dm.output, "CSV output (vertex_id,distance_mm)")->required();
    c_dm->callback([&] {
        run = [&] {
            const auto morphed = read_stl(dm.morphed);
            const auto d = distance_map(morphed, read_stl(dm.target));
            std::ofstream out(dm.output, std::ios::binary);
            if (!out) throw InputError("cannot write '" + dm.output + "'");
            out << "vertex_id,distance_mm\n";
            char buf[64];
            double mx = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, d[i]);
                out << buf;
                mx = std::max(mx, d[i]);
            }
            std::cout << d.size() << " vertices, max distance " << mx << " mm\n";
            return 0;
        };
    });

    // jacobian ----------------------------------------------------------------
    struct {
        std::string mesh, output, csv;
    } jac;
    auto *c_jac = app.add_subcommand("jacobian", "scaled Jacobian of every solid element");
    c_jac->add_option("mesh", jac.mesh, "neutral FE mesh")->required();
    c_jac->add_option("-o,--output", jac.output, "write summary JSON");
    c_jac->add_option("--csv", jac.csv, "write element_id,scaled_jacobian");
    c_jac->callback([&] {
        run = [&] {
            const auto r = scaled_jacobian(read_femesh(jac.mesh));
            json j = {{"elements_evaluated", r.values.size()},
                      {"minimum", r.minimum},
                      {"minimum_element", r.minimum_element},
                      {"mean", r.mean},
                      {"skipped_shells", r.skipped_shells}};
            emit(j, jac.output);
            if (!r.notice.empty()) std::cerr << "note: " << r.notice << "\n";
            if (!jac.csv.empty()) {
                std::ofstream out(jac.csv, std::ios::binary);
                out << "element_id,scaled_jacobian\n";
                char buf[64];
                for (const auto &[id, v] : r.values) {
                    std::snprintf(buf, sizeof buf, "%lld,%.17g\n", static_cast<long long>(id), v);
                    out << buf;
                }
            }
            return 0;
        };
    });

    // filter ------------------------------------------------------------------
    struct {
        std::string input, output;
        int cfc = 60;
    } flt;
    auto *c_flt = app.add_subcommand("filter", "phaseless channel-class low-pass filter of every CSV channel");
    c_flt->add_option("csv", flt.input, "time series CSV (time_s,<label>...)")->required();
    c_flt->add_option("--cfc", flt.cfc, "channel class: 60, 180, 600 or 1000");
    c_flt->add_option("-o,--output", flt.output, "filtered CSV")->required();
    c_flt->callback([&] {
        run = [&] {
            const Cfc cfc = parse_cfc(flt.cfc);
            auto channels = read_timeseries_csv(flt.input);
            for (auto &c : channels) {
                if (auto w = cfc_sampling_warning(c, cfc)) std::cerr << "warning: " << c.label << ": " << *w << "\n";
                c = cfc_filter(c, cfc);
            }
            write_timeseries_csv(channels, flt.output);
            return 0;
        };
    });

    // cora --------------------------------------------------------------------
    struct {
        std::string reference, test, params, output;
        std::optional<int> cfc;
    } cor;
    auto *c_cor = app.add_subcommand("cora", "CORA rating of test channels against reference channels");
    c_cor->add_option("reference", cor.reference, "reference CSV")->required();
    c_cor->add_option("test", cor.test, "test CSV with the same channel order")->required();
    c_cor->add_option("--params", cor.params, "JSON with CORA parameter overrides");
    c_cor->add_option("--cfc", cor.cfc, "filter both signals with this channel class first");
    c_cor->add_option("-o,--output", cor.output, "write the result JSON");
    c_cor->callback([&] {
        run = [&] {
            CoraParams p;
            if (!cor.params.empty()) update_from_json(p, read_json_file(cor.params));
            p.validate();
            auto ref = read_timeseries_csv(cor.reference);
            auto test = read_timeseries_csv(cor.test);
            if (ref.size() != test.size())
                throw ValidationError("reference has " + std::to_string(ref.size()) + " channel(s), test has " +
                                      std::to_string(test.size()));
            std::optional<Cfc> cfc;
            if (cor.cfc) cfc = parse_cfc(*cor.cfc);
            json channels = json::array();
            std::vector<CoraResult> results;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (cfc) {
                    for (auto *s : {&ref[i], &test[i]})
                        if (auto w = cfc_sampling_warning(*s, *cfc)) std::cerr << "warning: " << s->label << ": " << *w << "\n";
                    ref[i] = cfc_filter(ref[i], *cfc);
                    test[i] = cfc_filter(test[i], *cfc);
                }
                results.push_back(cora_rate(ref[i], test[i], p));
                json c = to_json(results.back());
                c["label"] = ref[i].label;
                channels.push_back(c);
            }
            json j;
            j["params"] = to_json(p);
            j["cfc"] = cfc ? json(static_cast<int>(*cfc)) : json(nullptr);
            j["channels"] = channels;
            double mean = 0.0;
            for (const auto &r : results) mean += r.total;
            mean /= static_cast<double>(results.size());
            if (results.size() == 3) mean = average_components(results[0], results[1], results[2]);
            j["average"] = mean;
            j["classification"] = to_string(classify_biofidelity(mean));
            emit(j, cor.output);
            return 0;
        };
    });

    // personalize -------------------------------------------------------------
    struct {
        std::string manifest, output_dir;
        std::vector<double> spacing;
        std::optional<int> padding;
        std::optional<std::uint64_t> seed;
        std::string exclude;
        std::optional<double> band;
        DemonsFlags demons;
    } per;
    auto *c_per = app.add_subcommand("personalize", "run the full morphing pipeline from a JSON manifest");
    c_per->add_option("manifest", per.manifest, "pipeline manifest (JSON)")->required();
    c_per->add_option("--output-dir", per.output_dir, "override the manifest output directory");
    c_per->add_option("--spacing", per.spacing, "voxel size in mm (1 or 3 values)")->expected(1, 3);
    c_per->add_option("--padding", per.padding, "grid padding in voxels");
    c_per->add_option("--seed", per.seed, "voxelizer jitter seed");
    c_per->add_option("--exclude", per.exclude, "comma-separated FE parts kept fixed");
    c_per->add_option("--blend-band", per.band, "transition width around excluded parts (mm)");
    per.demons.add(c_per);
    c_per->callback([&] {
        run = [&] {
            Manifest m = read_manifest(per.manifest);
            if (!per.output_dir.empty()) m.output_dir = per.output_dir;
            if (!per.spacing.empty()) {
                const Vec3 old = m.spacing;
                m.spacing = spacing_from(per.spacing);
                // Sigmas that still sit at spacing-derived defaults follow the new spacing.
                const auto was = DemonsParams::defaults_for(std::min({old.x, old.y, old.z}));
                const auto now = DemonsParams::defaults_for(std::min({m.spacing.x, m.spacing.y, m.spacing.z}));
                if (m.demons.sigma_fluid == was.sigma_fluid) m.demons.sigma_fluid = now.sigma_fluid;
                if (m.demons.sigma_diffusion == was.sigma_diffusion) m.demons.sigma_diffusion = now.sigma_diffusion;
                if (m.demons.sigma_presmooth == was.sigma_presmooth) m.demons.sigma_presmooth = now.sigma_presmooth;
            }
            if (per.padding) m.padding = *per.padding;
            if (per.seed) m.seed = *per.seed;
            if (!per.exclude.empty()) {
                m.mask.excluded_parts.clear();
                for (const auto &part : split_list(per.exclude)) m.mask.excluded_parts.insert(part);
            }
            if (per.band) m.mask.blend_band = *per.band;
            per.demons.apply(m.demons);
            const json summary = run_personalize(m, std::cerr);
            std::cout << "wrote " << (m.output_dir / "summary.json").string() << "\n";
            if (summary.contains("accuracy")) std::cout << summary["accuracy"].dump() << "\n";
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    }

    try {
        return run();
    } catch (const NumericalError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const InputError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const fs::filesystem_error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
