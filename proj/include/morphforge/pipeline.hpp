// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end personalization: align, voxelize, register, morph, invert, evaluate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "morphforge/femesh_io.hpp"
#include "morphforge/image_io.hpp"
#include "morphforge/json_io.hpp"
#include "morphforge/metrics.hpp"
#include "morphforge/morphing.hpp"
#include "morphforge/registration.hpp"
#include "morphforge/stl_io.hpp"
#include "morphforge/voxelizer.hpp"

namespace morphforge {

struct Manifest {
    std::filesystem::path template_skin;
    std::optional<std::filesystem::path> template_skeleton;
    std::optional<std::filesystem::path> template_fe;
    std::filesystem::path target_skin;
    std::optional<std::filesystem::path> target_skeleton;
    std::filesystem::path landmarks;
    std::filesystem::path output_dir;
    Vec3 spacing{2.0, 2.0, 2.0};
    int padding = 4;
    std::uint64_t seed = 0;
    DemonsParams demons = DemonsParams::defaults_for(2.0);
    MorphMask mask;
    int inverse_iterations = 50;
    double inverse_tol = 1e-3; ///< voxels
    double jacobian_threshold = 0.1;

    /// Checks parameters and that every referenced input exists.
    void validate() const {
        auto need = [](const std::filesystem::path &p, const char *what) {
            if (p.empty()) throw ValidationError(std::string("manifest: ") + what + " is required");
            if (!std::filesystem::is_regular_file(p))
                throw ValidationError(std::string("manifest: ") + what + " '" + p.string() + "' does not exist");
        };
        need(template_skin, "template skin");
        need(target_skin, "target skin");
        need(landmarks, "landmark file");
        if (template_skeleton) need(*template_skeleton, "template skeleton");
        if (target_skeleton) need(*target_skeleton, "target skeleton");
        if (template_fe) need(*template_fe, "template FE mesh");
        if (output_dir.empty()) throw ValidationError("manifest: output_dir is required");
        for (std::size_t a = 0; a < 3; ++a)
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw ValidationError("manifest: spacing must be > 0");
        if (padding < 0) throw ValidationError("manifest: padding must be >= 0");
        if (inverse_iterations < 1) throw ValidationError("manifest: inverse iterations must be >= 1");
        if (!(inverse_tol > 0.0)) throw ValidationError("manifest: inverse tolerance must be > 0");
        demons.validate();
        mask.validate();
    }
};

inline Vec3 parse_spacing(const json &j) {
    if (j.is_number()) {
        const double s = j.get<double>();
        return {s, s, s};
    }
    const auto v = j.get<std::vector<double>>();
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() != 3) throw ValidationError("spacing needs 1 or 3 values");
    return {v[0], v[1], v[2]};
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
/// Demons sigmas left unset default to multiples of the smallest spacing.
inline Manifest parse_manifest(const json &j, const std::filesystem::path &base) {
    auto path_at = [&](const json &obj, const char *key) -> std::optional<std::filesystem::path> {
        if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
        const std::filesystem::path p = obj.at(key).get<std::string>();
        return p.is_absolute() ? p : base / p;
    };
    Manifest m;
    try {
        const json &tpl = j.at("template");
        const json &tgt = j.at("target");
        m.template_skin = path_at(tpl, "skin").value_or("");
        m.template_skeleton = path_at(tpl, "skeleton");
        m.template_fe = path_at(tpl, "fe_mesh");
        m.target_skin = path_at(tgt, "skin").value_or("");
        m.target_skeleton = path_at(tgt, "skeleton");
        m.landmarks = path_at(j, "landmarks").value_or("");
        m.output_dir = path_at(j, "output_dir").value_or("");
        if (j.contains("spacing_mm")) m.spacing = parse_spacing(j.at("spacing_mm"));
        if (j.contains("padding_voxels")) m.padding = j.at("padding_voxels").get<int>();
        if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
        m.demons = DemonsParams::defaults_for(std::min({m.spacing.x, m.spacing.y, m.spacing.z}));
        if (j.contains("demons")) update_from_json(m.demons, j.at("demons"));
        if (j.contains("mask")) update_from_json(m.mask, j.at("mask"));
        if (j.contains("inverse")) {
            const json &inv = j.at("inverse");
            if (inv.contains("iterations")) m.inverse_iterations = inv.at("iterations").get<int>();
            if (inv.contains("tol_voxels")) m.inverse_tol = inv.at("tol_voxels").get<double>();
        }
        if (j.contains("jacobian_threshold")) m.jacobian_threshold = j.at("jacobian_threshold").get<double>();
    } catch (const json::exception &e) {
        throw ValidationError(std::string("manifest: ") + e.what());
    }
    return m;
}

inline Manifest read_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ParseError("manifest '" + path.string() + "': " + e.what(), e.byte);
    }
    return parse_manifest(j, path.parent_path());
}

struct LandmarkPairs {
    std::vector<Vec3> target;   ///< points on the target
    std::vector<Vec3> templ;    ///< corresponding template points
};

/// One pair per line: `tx ty tz  sx sy sz` (target point, then template point); `#` comments.
inline LandmarkPairs read_landmarks(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open landmark file '" + path.string() + "'");
    LandmarkPairs out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ss(line);
        double v[6];
        int n = 0;
        while (n < 6 && ss >> v[n]) ++n;
        if (n == 0 && ss.eof()) continue;
        std::string extra;
        if (n != 6 || (ss >> extra))
            throw ValidationError("landmark file '" + path.string() + "' line " + std::to_string(lineno) +
                                  ": expected 6 numbers");
        out.target.push_back({v[0], v[1], v[2]});
        out.templ.push_back({v[3], v[4], v[5]});
    }
    return out;
}

/// Exclusive marker file guarding an output directory against concurrent runs.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path &dir) : path_(dir / ".morphforge.lock") {
        std::FILE *f = std::fopen(path_.c_str(), "wx");
        if (!f) throw InputError("output directory '" + dir.string() + "' is locked by another run (" + path_.string() + ")");
        std::fclose(f);
    }
    ~DirectoryLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    DirectoryLock(const DirectoryLock &) = delete;
    DirectoryLock &operator=(const DirectoryLock &) = delete;

private:
    std::filesystem::path path_;
};

inline json to_json(const RigidTransform &t) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back({t.rotation(i, 0), t.rotation(i, 1), t.rotation(i, 2)});
    return {{"rotation", r}, {"translation_mm", to_json(t.translation)}};
}

inline json to_json(const Manifest &m) {
    auto opt = [](const std::optional<std::filesystem::path> &p) { return p ? json(p->string()) : json(nullptr); };
    return {{"template", {{"skin", m.template_skin.string()}, {"skeleton", opt(m.template_skeleton)}, {"fe_mesh", opt(m.template_fe)}}},
            {"target", {{"skin", m.target_skin.string()}, {"skeleton", opt(m.target_skeleton)}}},
            {"landmarks", m.landmarks.string()},
            {"spacing_mm", to_json(m.spacing)},
            {"padding_voxels", m.padding},
            {"seed", m.seed},
            {"demons", to_json(m.demons)},
            {"mask", to_json(m.mask)},
            {"inverse", {{"iterations", m.inverse_iterations}, {"tol_voxels", m.inverse_tol}}},
            {"jacobian_threshold", m.jacobian_threshold}};
}

/// Runs the pipeline and writes every artifact plus summary.json into `m.output_dir`.
/// Progress lines go to `log`. A failing stage is rethrown with its name and the
/// artifacts written so far; the exception class (input vs numerical) is preserved.
inline json run_personalize(const Manifest &m, std::ostream &log) {
    m.validate();
    std::filesystem::create_directories(m.output_dir);
    const DirectoryLock lock(m.output_dir);

    std::string stage = "load";
    std::vector<std::string> artifacts;
    const auto out = [&](const std::string &name) {
        artifacts.push_back(name);
        return m.output_dir / name;
    };
    json summary;
    std::vector<std::string> warnings;

    auto context = [&](const char *what) {
        std::string s = "stage '" + stage + "' failed: " + what + "; completed artifacts:";
        if (artifacts.empty()) s += " none";
        for (const auto &a : artifacts) s += " " + (m.output_dir / a).string();
        return s;
    };

    try {
        TriangleMesh tpl_skin = read_stl(m.template_skin);
        std::optional<TriangleMesh> tpl_skel, tgt_skel;
        if (m.template_skeleton) tpl_skel = read_stl(*m.template_skeleton);
        TriangleMesh tgt_skin = read_stl(m.target_skin);
        if (m.target_skeleton) tgt_skel = read_stl(*m.target_skeleton);
        std::optional<FEMesh> fe;
        if (m.template_fe) fe = read_femesh(*m.template_fe);
        const LandmarkPairs lm = read_landmarks(m.landmarks);

        stage = "align";
        log << "[align] " << lm.target.size() << " landmark pairs\n";
        const RigidTransform align = fit_rigid(lm.target, lm.templ);
        double rms = 0.0;
        for (std::size_t i = 0; i < lm.target.size(); ++i) rms += norm2(align.apply(lm.target[i]) - lm.templ[i]);
        rms = std::sqrt(rms / static_cast<double>(lm.target.size()));
        tgt_skin = apply_rigid(tgt_skin, align);
        if (tgt_skel) tgt_skel = apply_rigid(*tgt_skel, align);
        write_stl(tgt_skin, out("target_skin_aligned.stl"), StlFormat::binary);
        summary["alignment"] = to_json(align);
        summary["alignment"]["landmark_pairs"] = lm.target.size();
        summary["alignment"]["rms_residual_mm"] = rms;

        stage = "voxelize";
        Aabb box = bounds(tpl_skin);
        box.extend(bounds(tgt_skin));
        if (tpl_skel) box.extend(bounds(*tpl_skel));
        if (tgt_skel) box.extend(bounds(*tgt_skel));
        const GridGeometry grid = grid_for_bounds(box, m.spacing, m.padding);
        log << "[voxelize] grid " << grid.describe() << "\n";
        BinaryImage3D tpl_img = voxelize(tpl_skin, grid, m.seed);
        if (tpl_skel) tpl_img = image_union(tpl_img, voxelize(*tpl_skel, grid, m.seed));
        BinaryImage3D tgt_img = voxelize(tgt_skin, grid, m.seed);
        if (tgt_skel) tgt_img = image_union(tgt_img, voxelize(*tgt_skel, grid, m.seed));
        write_image(tpl_img, out("template_image.mhd"));
        artifacts.push_back("template_image.raw");
        write_image(tgt_img, out("target_image.mhd"));
        artifacts.push_back("target_image.raw");
        summary["grid"] = to_json(grid);
        summary["occupied_voxels"] = {{"template", count_occupied(tpl_img)}, {"target", count_occupied(tgt_img)}};

        stage = "register";
        log << "[register] fixed = template, moving = target\n";
        const RegistrationResult reg = register_demons(tpl_img, tgt_img, m.demons);
        write_image(reg.field, out("displacement_field.mhd"));
        artifacts.push_back("displacement_field.raw");
        summary["registration"] = to_json(reg);

        stage = "morph";
        const auto skin_morph = morph_mesh(tpl_skin, reg.field);
        if (!skin_morph.warning.empty()) warnings.push_back("skin: " + skin_morph.warning);
        write_stl(skin_morph.mesh, out("morphed_skin.stl"), StlFormat::binary);
        if (fe) {
            const auto fe_morph = morph_mesh(*fe, reg.field, m.mask);
            if (!fe_morph.warning.empty()) warnings.push_back("fe mesh: " + fe_morph.warning);
            write_femesh(fe_morph.mesh, out("morphed.mesh"));
            const QualityReport q = morph_report(*fe, fe_morph.mesh, m.jacobian_threshold);
            {
                std::ofstream txt(out("quality_report.txt"), std::ios::binary);
                txt << to_text(q);
            }
            summary["quality"] = to_json(q);
        }

        stage = "invert";
        const InversionResult inv = invert_field(reg.field, m.inverse_iterations, m.inverse_tol);
        if (inv.diverged) throw NumericalError(inv.warning);
        if (!inv.warning.empty()) warnings.push_back("inverse: " + inv.warning);
        write_image(inv.field, out("inverse_field.mhd"));
        artifacts.push_back("inverse_field.raw");
        summary["inversion"] = to_json(inv);

        stage = "evaluate";
        const BinaryImage3D warped = warp_image(tpl_img, inv.field);
        write_image(warped, out("warped_template.mhd"));
        artifacts.push_back("warped_template.raw");
        const AccuracyReport acc = evaluate_accuracy(warped, tgt_img);
        summary["accuracy"] = to_json(acc);
        log << "[evaluate] dice " << acc.dice;
        if (acc.hausdorff) log << ", hd95 " << acc.hausdorff->hd95 << " mm";
        log << "\n";

        stage = "summary";
        summary["parameters"] = to_json(m);
        summary["warnings"] = warnings;
        artifacts.push_back("summary.json");
        summary["artifacts"] = artifacts;
        json ordered;
        for (const char *key : {"parameters", "alignment", "grid", "occupied_voxels", "registration", "quality",
                                "inversion", "accuracy", "warnings", "artifacts"})
            if (summary.contains(key)) ordered[key] = summary[key];
        std::ofstream(m.output_dir / "summary.json", std::ios::binary) << ordered.dump(2) << "\n";
        return ordered;
    } catch (const NumericalError &e) {
        throw NumericalError(context(e.what()));
    } catch (const InputError &e) {
        throw InputError(context(e.what()));
    } catch (const std::filesystem::filesystem_error &e) {
        throw InputError(context(e.what()));
    }
}

} // namespace morphforge
