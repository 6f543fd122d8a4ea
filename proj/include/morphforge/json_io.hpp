// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON views of reports and parameter sets.

#include <set>
#include <string>

#include <json.hpp>

#include "morphforge/grid.hpp"
#include "morphforge/metrics.hpp"
#include "morphforge/morphing.hpp"
#include "morphforge/registration.hpp"
#include "morphforge/signals.hpp"

namespace morphforge {

using json = nlohmann::ordered_json;

inline json to_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }

inline json to_json(const GridGeometry &g) {
    return {{"dims", {g.dims[0], g.dims[1], g.dims[2]}}, {"spacing_mm", to_json(g.spacing)}, {"origin_mm", to_json(g.origin)}};
}

inline json to_json(const DemonsParams &p) {
    return {{"pyramid_levels", p.pyramid_levels},
            {"iterations_per_level", p.iterations_per_level},
            {"sigma_fluid_mm", p.sigma_fluid},
            {"sigma_diffusion_mm", p.sigma_diffusion},
            {"sigma_presmooth_mm", p.sigma_presmooth},
            {"max_step_voxels", p.max_step},
            {"convergence_tol", p.convergence_tol},
            {"alpha", p.alpha}};
}

/// Overlays keys present in `j` onto `p`.
inline void update_from_json(DemonsParams &p, const json &j) {
    if (j.contains("pyramid_levels")) p.pyramid_levels = j.at("pyramid_levels").get<int>();
    if (j.contains("iterations_per_level")) p.iterations_per_level = j.at("iterations_per_level").get<std::vector<int>>();
    if (j.contains("sigma_fluid_mm")) p.sigma_fluid = j.at("sigma_fluid_mm").get<double>();
    if (j.contains("sigma_diffusion_mm")) p.sigma_diffusion = j.at("sigma_diffusion_mm").get<double>();
    if (j.contains("sigma_presmooth_mm")) p.sigma_presmooth = j.at("sigma_presmooth_mm").get<double>();
    if (j.contains("max_step_voxels")) p.max_step = j.at("max_step_voxels").get<double>();
    if (j.contains("convergence_tol")) p.convergence_tol = j.at("convergence_tol").get<double>();
    if (j.contains("alpha")) p.alpha = j.at("alpha").get<double>();
}

inline json to_json(const RegistrationResult &r) {
    json levels = json::array();
    for (const auto &l : r.levels)
        levels.push_back({{"level", l.level},
                          {"grid", to_json(l.grid)},
                          {"iterations", l.iterations},
                          {"converged", l.converged},
                          {"accepted", l.accepted},
                          {"start_mse", l.start_mse},
                          {"best_mse", l.best_mse},
                          {"full_resolution_mse", l.full_resolution_mse}});
    return {{"initial_mse", r.initial_mse}, {"final_mse", r.final_mse}, {"levels", levels}};
}

inline json to_json(const ResidualStats &s) {
    return {{"max_mm", s.max},
            {"mean_mm", s.mean},
            {"p95_mm", s.p95},
            {"worst_voxel", {s.worst_voxel[0], s.worst_voxel[1], s.worst_voxel[2]}}};
}

inline json to_json(const InversionResult &r) {
    return {{"iterations", r.iterations},
            {"converged", r.converged},
            {"diverged", r.diverged},
            {"residual", to_json(r.residual)},
            {"warning", r.warning}};
}

inline json to_json(const MorphMask &m) {
    return {{"excluded_parts", m.excluded_parts}, {"blend_band_mm", m.blend_band}};
}

inline void update_from_json(MorphMask &m, const json &j) {
    if (j.contains("excluded_parts")) m.excluded_parts = j.at("excluded_parts").get<std::set<std::string>>();
    if (j.contains("blend_band_mm")) m.blend_band = j.at("blend_band_mm").get<double>();
}

inline json to_json(const AccuracyReport &r) {
    json j = {{"dice", r.dice},
              {"count_a", r.counts.a},
              {"count_b", r.counts.b},
              {"count_intersection", r.counts.both},
              {"both_empty", r.both_empty}};
    if (r.hausdorff) {
        j["hd95_mm"] = r.hausdorff->hd95;
        j["directed_hd95_forward_mm"] = r.hausdorff->forward;
        j["directed_hd95_backward_mm"] = r.hausdorff->backward;
    } else {
        j["hd95_mm"] = nullptr;
        j["hd95_error"] = "hd95 is undefined for an empty image";
    }
    return j;
}

inline json to_json(const QualityReport &q) {
    return {{"min_scaled_jacobian_before", q.min_jacobian_before},
            {"mean_scaled_jacobian_before", q.mean_jacobian_before},
            {"min_scaled_jacobian_after", q.min_jacobian_after},
            {"mean_scaled_jacobian_after", q.mean_jacobian_after},
            {"max_node_displacement_mm", q.max_node_displacement},
            {"max_displacement_node", q.max_displacement_node},
            {"jacobian_threshold", q.threshold},
            {"elements_evaluated", q.elements_evaluated},
            {"elements_below_threshold", q.elements_below_threshold},
            {"flagged_elements", q.flagged_elements}};
}

/// `key: value` lines of the same report.
inline std::string to_text(const QualityReport &q) {
    const json j = to_json(q);
    std::string s;
    for (const auto &[k, v] : j.items()) s += k + ": " + v.dump() + "\n";
    return s;
}

inline json to_json(const CoraParams &p) {
    return {{"a_0", p.a_0},     {"b_0", p.b_0},     {"a_eval", p.a_eval},         {"b_eval", p.b_eval},
            {"k", p.k},         {"d_min", p.d_min}, {"d_max", p.d_max},           {"w_corridor", p.w_corridor},
            {"w_phase", p.w_phase}, {"w_size", p.w_size}, {"w_shape", p.w_shape}};
}

inline void update_from_json(CoraParams &p, const json &j) {
    auto take = [&](const char *key, double &dst) {
        if (j.contains(key)) dst = j.at(key).get<double>();
    };
    take("a_0", p.a_0);
    take("b_0", p.b_0);
    take("a_eval", p.a_eval);
    take("b_eval", p.b_eval);
    take("k", p.k);
    take("d_min", p.d_min);
    take("d_max", p.d_max);
    take("w_corridor", p.w_corridor);
    take("w_phase", p.w_phase);
    take("w_size", p.w_size);
    take("w_shape", p.w_shape);
}

inline json to_json(const CoraResult &r) {
    return {{"total", r.total},
            {"corridor_rating", r.corridor_rating},
            {"phase_rating", r.phase_rating},
            {"size_rating", r.size_rating},
            {"shape_rating", r.shape_rating},
            {"t_start_s", r.t_start},
            {"t_end_s", r.t_end},
            {"shift_samples", r.shift_samples},
            {"correlation", r.correlation},
            {"resampled", r.resampled},
            {"classification", to_string(classify_biofidelity(r.total))}};
}

} // namespace morphforge
