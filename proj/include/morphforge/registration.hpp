// SPDX-License-Identifier: Apache-2.0
#pragma once

// Diffeomorphic demons registration of binary images.
//
// Convention: a DisplacementField D lives on the fixed grid and x + D(x) is the
// corresponding point in moving-image space, so the warped moving image is
// moving(x + D(x)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "morphforge/errors.hpp"
#include "morphforge/grid.hpp"
#include "morphforge/parallel.hpp"
#include "morphforge/statistics.hpp"

namespace morphforge {

struct DemonsParams {
    int pyramid_levels = 3;
    std::vector<int> iterations_per_level{100, 50, 25}; ///< coarse to fine
    double sigma_fluid = 1.0;      ///< mm at the finest level
    double sigma_diffusion = 1.5;  ///< mm at the finest level
    double sigma_presmooth = 1.5;  ///< mm at the finest level
    double max_step = 1.25;        ///< voxels
    double convergence_tol = 1e-4; ///< relative MSE improvement over 5 iterations
    double alpha = 1.0;

    /// Conventional defaults with sigmas expressed as multiples of `spacing` (mm).
    static DemonsParams defaults_for(double spacing) {
        DemonsParams p;
        p.sigma_fluid = 1.0 * spacing;
        p.sigma_diffusion = 1.5 * spacing;
        p.sigma_presmooth = 1.5 * spacing;
        return p;
    }

    void validate() const {
        if (pyramid_levels < 1) throw ValidationError("pyramid_levels must be >= 1");
        if (iterations_per_level.size() != static_cast<std::size_t>(pyramid_levels))
            throw ValidationError("iterations_per_level needs one entry per pyramid level");
        for (int it : iterations_per_level)
            if (it < 0) throw ValidationError("iteration counts must be >= 0");
        if (sigma_fluid < 0 || sigma_diffusion < 0 || sigma_presmooth < 0)
            throw ValidationError("smoothing sigmas must be >= 0");
        if (!(max_step > 0)) throw ValidationError("max_step must be > 0");
        if (convergence_tol < 0) throw ValidationError("convergence_tol must be >= 0");
        if (alpha < 0) throw ValidationError("alpha must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Smoothing

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma, double spacing) {
    const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma / spacing));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double x = static_cast<double>(i) * spacing;
        const double w = std::exp(-x * x / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        sum += w;
    }
    for (auto &w : k) w /= sum;
    return k;
}

template <class T>
void convolve_axis(Volume<T> &vol, std::size_t axis, const std::vector<double> &kernel) {
    const auto &g = vol.grid;
    const auto n = g.dims[axis];
    const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
    const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? g.dims[0] : g.dims[0] * g.dims[1]);
    const std::size_t a1 = axis == 0 ? 1 : 0;
    const std::size_t a2 = axis == 2 ? 1 : 2;
    const auto n1 = g.dims[a1], n2 = g.dims[a2];
    parallel_for(0, n2, [&](std::int64_t i2) {
        std::vector<T> line(static_cast<std::size_t>(n));
        for (std::int64_t i1 = 0; i1 < n1; ++i1) {
            Index3 idx{};
            idx[a1] = i1;
            idx[a2] = i2;
            idx[axis] = 0;
            const std::int64_t base = g.linear(idx[0], idx[1], idx[2]);
            for (std::int64_t t = 0; t < n; ++t) line[static_cast<std::size_t>(t)] = vol.data[static_cast<std::size_t>(base + t * stride)];
            for (std::int64_t t = 0; t < n; ++t) {
                T acc{};
                for (std::int64_t r = -radius; r <= radius; ++r) {
                    const auto s = std::clamp<std::int64_t>(t + r, 0, n - 1);
                    acc += line[static_cast<std::size_t>(s)] * kernel[static_cast<std::size_t>(r + radius)];
                }
                vol.data[static_cast<std::size_t>(base + t * stride)] = acc;
            }
        }
    });
}

} // namespace detail

/// Separable Gaussian smoothing with a normalized kernel of radius ceil(3 sigma / spacing)
/// per axis and clamp-to-edge boundaries. sigma is in mm; sigma = 0 returns the input.
template <class T>
Volume<T> gaussian_smooth(const Volume<T> &in, double sigma) {
    if (sigma < 0) throw ValidationError("sigma must be >= 0");
    Volume<T> out = in;
    if (sigma == 0.0) return out;
    for (std::size_t a = 0; a < 3; ++a) {
        if (in.grid.dims[a] == 1) continue;
        detail::convolve_axis(out, a, detail::gaussian_kernel(sigma, in.grid.spacing[a]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Field algebra and warping

/// Central-difference gradient in mm^-1 with clamped neighbours at the border.
inline DisplacementField image_gradient(const ScalarImage3D &img) {
    const auto &g = img.grid;
    DisplacementField grad(g);
    parallel_for(0, g.dims[2], [&](std::int64_t k) {
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                grad.at(i, j, k) = {(img.clamped(i + 1, j, k) - img.clamped(i - 1, j, k)) / (2.0 * g.spacing.x),
                                    (img.clamped(i, j + 1, k) - img.clamped(i, j - 1, k)) / (2.0 * g.spacing.y),
                                    (img.clamped(i, j, k + 1) - img.clamped(i, j, k - 1)) / (2.0 * g.spacing.z)};
            }
    });
    return grad;
}

/// result(x) = inner(x) + outer(x + inner(x)); trilinear sampling, clamped boundaries.
inline DisplacementField compose_fields(const DisplacementField &outer, const DisplacementField &inner) {
    require_same_grid(outer.grid, inner.grid, "compose_fields");
    const auto &g = inner.grid;
    DisplacementField out(g);
    parallel_for(0, g.dims[2], [&](std::int64_t k) {
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const Vec3 u = inner.at(i, j, k);
                const Vec3 ci{static_cast<double>(i) + u.x / g.spacing.x, static_cast<double>(j) + u.y / g.spacing.y,
                              static_cast<double>(k) + u.z / g.spacing.z};
                out.at(i, j, k) = u + sample_trilinear(outer, ci, OutOfBounds::clamp);
            }
    });
    return out;
}

inline double max_magnitude(const DisplacementField &d) {
    double m = 0.0;
    for (const auto &v : d.data) m = std::max(m, norm2(v));
    return std::sqrt(m);
}

/// Scaling and squaring: exp(v) = (exp(v / 2^N))^(2^N) with N the smallest integer such
/// that max|v| / 2^N <= 0.5 * min spacing.
inline DisplacementField exp_field(const DisplacementField &velocity) {
    const double limit = 0.5 * velocity.grid.min_spacing();
    double mag = max_magnitude(velocity);
    if (!std::isfinite(mag)) throw NumericalError("exp_field: non-finite velocity");
    int n = 0;
    while (mag > limit) {
        mag *= 0.5;
        ++n;
    }
    DisplacementField phi = velocity;
    const double scale = std::ldexp(1.0, -n);
    for (auto &v : phi.data) v *= scale;
    for (int s = 0; s < n; ++s) phi = compose_fields(phi, phi);
    return phi;
}

/// out(x) = in(x + d(x)), trilinear, samples outside the image read as 0.
inline ScalarImage3D warp_image(const ScalarImage3D &img, const DisplacementField &d) {
    require_same_grid(img.grid, d.grid, "warp_image");
    const auto &g = img.grid;
    ScalarImage3D out(g);
    parallel_for(0, g.dims[2], [&](std::int64_t k) {
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const Vec3 u = d.at(i, j, k);
                const Vec3 ci{static_cast<double>(i) + u.x / g.spacing.x, static_cast<double>(j) + u.y / g.spacing.y,
                              static_cast<double>(k) + u.z / g.spacing.z};
                out.at(i, j, k) = sample_trilinear(img, ci, OutOfBounds::zero);
            }
    });
    return out;
}

inline ScalarImage3D to_scalar(const BinaryImage3D &img) {
    ScalarImage3D out(img.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = img.data[i] ? 1.0 : 0.0;
    return out;
}

/// Binary warp: the interpolated value is thresholded at 0.5.
inline BinaryImage3D warp_image(const BinaryImage3D &img, const DisplacementField &d) {
    const ScalarImage3D w = warp_image(to_scalar(img), d);
    BinaryImage3D out(img.grid);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = w.data[i] >= 0.5 ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Demons

/// Mean squared intensity difference, summed sequentially in voxel order.
inline double mean_squared_error(const ScalarImage3D &a, const ScalarImage3D &b) {
    require_same_grid(a.grid, b.grid, "mean_squared_error");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

/// Demons update with a precomputed fixed-image gradient.
/// u = (f - m) grad f / (|grad f|^2 + alpha^2 (m - f)^2), zero where the denominator is
/// below 1e-12, magnitude clamped to max_step voxels (of the smallest spacing).
inline DisplacementField demons_step(const ScalarImage3D &fixed, const DisplacementField &fixed_gradient,
                                     const ScalarImage3D &warped_moving, double alpha, double max_step) {
    require_same_grid(fixed.grid, warped_moving.grid, "demons_step");
    require_same_grid(fixed.grid, fixed_gradient.grid, "demons_step");
    const double cap = max_step * fixed.grid.min_spacing();
    const double a2 = alpha * alpha;
    DisplacementField u(fixed.grid);
    parallel_for(0, static_cast<std::int64_t>(u.data.size()), [&](std::int64_t n) {
        const auto i = static_cast<std::size_t>(n);
        const double diff = fixed.data[i] - warped_moving.data[i];
        const Vec3 &gf = fixed_gradient.data[i];
        const double denom = norm2(gf) + a2 * diff * diff;
        if (denom < 1e-12) return;
        Vec3 step = gf * (diff / denom);
        const double len = norm(step);
        if (len > cap) step *= cap / len;
        u.data[i] = step;
    });
    return u;
}

inline DisplacementField demons_step(const ScalarImage3D &fixed, const ScalarImage3D &warped_moving, double alpha,
                                     double max_step) {
    return demons_step(fixed, image_gradient(fixed), warped_moving, alpha, max_step);
}

/// 2x2x2 mean downsampling followed by a >= 0.5 threshold. Coarse voxel centers sit at the
/// centroid of their fine block.
inline BinaryImage3D downsample_binary(const BinaryImage3D &img) {
    const auto &g = img.grid;
    GridGeometry c;
    for (std::size_t a = 0; a < 3; ++a) {
        c.dims[a] = (g.dims[a] + 1) / 2;
        c.spacing[a] = 2.0 * g.spacing[a];
        c.origin[a] = g.origin[a] + 0.5 * g.spacing[a];
    }
    BinaryImage3D out(c);
    for (std::int64_t k = 0; k < c.dims[2]; ++k)
        for (std::int64_t j = 0; j < c.dims[1]; ++j)
            for (std::int64_t i = 0; i < c.dims[0]; ++i) {
                int occupied = 0, total = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const auto fi = 2 * i + dx, fj = 2 * j + dy, fk = 2 * k + dz;
                            if (!g.contains(fi, fj, fk)) continue;
                            ++total;
                            occupied += img.at(fi, fj, fk) != 0;
                        }
                out.at(i, j, k) = 2 * occupied >= total ? 1 : 0;
            }
    return out;
}

/// Resamples a field onto another grid by trilinear interpolation at physical positions.
/// Vectors are in mm and are not rescaled.
inline DisplacementField resample_field(const DisplacementField &d, const GridGeometry &target) {
    DisplacementField out(target);
    parallel_for(0, target.dims[2], [&](std::int64_t k) {
        for (std::int64_t j = 0; j < target.dims[1]; ++j)
            for (std::int64_t i = 0; i < target.dims[0]; ++i)
                out.at(i, j, k) = sample_at(d, target.position(i, j, k), OutOfBounds::clamp);
    });
    return out;
}

struct LevelReport {
    int level = 0; ///< 0 = finest
    GridGeometry grid;
    int iterations = 0;
    bool converged = false;
    bool accepted = true;
    double start_mse = 0.0; ///< at this level's resolution
    double best_mse = 0.0;
    double full_resolution_mse = 0.0; ///< energy of the accepted field at full resolution
};

struct RegistrationResult {
    DisplacementField field;
    double initial_mse = 0.0; ///< full resolution, zero field
    double final_mse = 0.0;   ///< full resolution, returned field
    std::vector<LevelReport> levels;
};

/// Multi-resolution diffeomorphic demons. Returns a field on the fixed grid such that
/// moving(x + D(x)) approximates fixed(x). Sigmas apply at the finest level and scale
/// with the level spacing.
inline RegistrationResult register_demons(const BinaryImage3D &fixed, const BinaryImage3D &moving,
                                          const DemonsParams &params) {
    params.validate();
    if (fixed.grid.spacing != moving.grid.spacing)
        throw GridMismatchError("register_demons: spacing mismatch (" + fixed.grid.describe() + " vs " +
                                moving.grid.describe() + ")");
    require_same_grid(fixed.grid, moving.grid, "register_demons");
    if (count_occupied(fixed) == 0 || count_occupied(moving) == 0)
        throw ValidationError("register_demons: fixed and moving images must be non-empty");

    const int levels = params.pyramid_levels;
    std::vector<BinaryImage3D> fixed_pyr{fixed}, moving_pyr{moving};
    for (int l = 1; l < levels; ++l) {
        fixed_pyr.push_back(downsample_binary(fixed_pyr.back()));
        moving_pyr.push_back(downsample_binary(moving_pyr.back()));
    }

    const ScalarImage3D fixed_full = gaussian_smooth(to_scalar(fixed), params.sigma_presmooth);
    const ScalarImage3D moving_full = gaussian_smooth(to_scalar(moving), params.sigma_presmooth);
    auto full_energy = [&](const DisplacementField &d_full) {
        return mean_squared_error(fixed_full, warp_image(moving_full, d_full));
    };

    RegistrationResult result;
    DisplacementField accepted_full(fixed.grid);
    result.initial_mse = full_energy(accepted_full);
    double accepted_energy = result.initial_mse;
    DisplacementField current; // at the current level's grid

    for (int l = levels - 1; l >= 0; --l) {
        const auto lu = static_cast<std::size_t>(l);
        const double scale = std::ldexp(1.0, l);
        const auto &grid = fixed_pyr[lu].grid;
        const ScalarImage3D f = l == 0 ? fixed_full : gaussian_smooth(to_scalar(fixed_pyr[lu]), params.sigma_presmooth * scale);
        const ScalarImage3D m = l == 0 ? moving_full : gaussian_smooth(to_scalar(moving_pyr[lu]), params.sigma_presmooth * scale);
        const DisplacementField grad = image_gradient(f);

        current = resample_field(accepted_full, grid);
        DisplacementField best = current;
        double best_mse = std::numeric_limits<double>::infinity();
        std::vector<double> history;

        LevelReport report;
        report.level = l;
        report.grid = grid;
        const int cap = params.iterations_per_level[static_cast<std::size_t>(levels - 1 - l)];
        for (int it = 0; it <= cap; ++it) {
            const ScalarImage3D warped = warp_image(m, current);
            const double mse = mean_squared_error(f, warped);
            if (it == 0) report.start_mse = mse;
            history.push_back(mse);
            if (mse < best_mse) {
                best_mse = mse;
                best = current;
            }
            if (it == cap || mse == 0.0) break;
            const std::size_t h = history.size();
            if (h > 5 && history[h - 6] > 0.0 && (history[h - 6] - mse) / history[h - 6] < params.convergence_tol) {
                report.converged = true;
                break;
            }
            DisplacementField update = demons_step(f, grad, warped, params.alpha, params.max_step);
            update = gaussian_smooth(update, params.sigma_fluid * scale);
            update = exp_field(update);
            current = compose_fields(current, update);
            current = gaussian_smooth(current, params.sigma_diffusion * scale);
            ++report.iterations;
        }
        report.best_mse = best_mse;

        // Accept the level only if it lowers the full-resolution energy.
        DisplacementField candidate = l == 0 ? best : resample_field(best, fixed.grid);
        const double energy = full_energy(candidate);
        if (energy <= accepted_energy) {
            accepted_full = std::move(candidate);
            accepted_energy = energy;
        } else {
            report.accepted = false;
        }
        report.full_resolution_mse = accepted_energy;
        result.levels.push_back(report);
    }

    result.field = std::move(accepted_full);
    result.final_mse = accepted_energy;
    return result;
}

// ---------------------------------------------------------------------------
// Inversion

struct ResidualStats {
    double max = 0.0;  ///< mm
    double mean = 0.0; ///< mm
    double p95 = 0.0;  ///< mm, nearest rank
    Index3 worst_voxel{0, 0, 0};
};

/// |inv(x) + d(x + inv(x))| over every voxel of the grid.
inline ResidualStats inverse_residual(const DisplacementField &d, const DisplacementField &inv) {
    require_same_grid(d.grid, inv.grid, "inverse_residual");
    const DisplacementField comp = compose_fields(d, inv);
    std::vector<double> r(comp.data.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = norm(comp.data[i]);
    ResidualStats s;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < r.size(); ++i)
        if (r[i] > r[worst]) worst = i;
    s.max = r[worst];
    s.worst_voxel = d.grid.unravel(static_cast<std::int64_t>(worst));
    s.mean = sequential_sum(r) / static_cast<double>(r.size());
    s.p95 = nearest_rank_percentile(std::move(r), 95.0);
    return s;
}

struct InversionResult {
    DisplacementField field;
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
    ResidualStats residual; ///< recomputable via inverse_residual(d, field)
    std::string warning;
};

/// Fixed-point inversion inv <- -d(x + inv(x)). Stops when the largest update drops below
/// `tol` voxels or after `iterations`; flags divergence when the maximum residual grows for
/// three consecutive iterations.
inline InversionResult invert_field(const DisplacementField &d, int iterations = 50, double tol = 1e-3) {
    for (const auto &v : d.data)
        if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
            throw NumericalError("invert_field: non-finite displacement");
    const double tol_mm = tol * d.grid.min_spacing();
    InversionResult res;
    DisplacementField inv(d.grid);
    for (std::size_t i = 0; i < inv.data.size(); ++i) inv.data[i] = -d.data[i];

    double prev_residual = std::numeric_limits<double>::infinity();
    int growth = 0;
    for (int it = 0; it < iterations; ++it) {
        // -(inv + d(x + inv)) is the correction; its magnitude equals the current residual.
        const DisplacementField comp = compose_fields(d, inv);
        double max_update = 0.0;
        for (std::size_t i = 0; i < inv.data.size(); ++i) {
            const Vec3 next = inv.data[i] - comp.data[i];
            max_update = std::max(max_update, norm(comp.data[i]));
            inv.data[i] = next;
        }
        ++res.iterations;
        if (max_update < tol_mm) {
            res.converged = true;
            break;
        }
        growth = max_update > prev_residual ? growth + 1 : 0;
        prev_residual = max_update;
        if (growth >= 3) {
            res.diverged = true;
            break;
        }
    }
    res.field = std::move(inv);
    res.residual = inverse_residual(d, res.field);
    if (!res.converged) {
        const auto &w = res.residual.worst_voxel;
        res.warning = std::string(res.diverged ? "field is not invertible by fixed-point iteration"
                                               : "inversion did not reach tolerance") +
                      "; worst residual " + std::to_string(res.residual.max) + " mm at voxel (" +
                      std::to_string(w[0]) + ", " + std::to_string(w[1]) + ", " + std::to_string(w[2]) + ")";
    }
    return res;
}

} // namespace morphforge
