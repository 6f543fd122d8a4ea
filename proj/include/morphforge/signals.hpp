// SPDX-License-Identifier: Apache-2.0
#pragma once

// Channel-class low-pass filtering and CORA correlation rating of time histories.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "morphforge/errors.hpp"

namespace morphforge {

struct TimeSeries {
    double dt = 1.0; ///< s
    double t0 = 0.0; ///< time of the first sample, s
    std::vector<double> samples;
    std::string label;
    std::string unit;

    double time(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("time series '" + label + "': dt must be > 0");
        if (samples.size() < 2) throw ValidationError("time series '" + label + "': needs at least 2 samples");
        for (double v : samples)
            if (!std::isfinite(v)) throw ValidationError("time series '" + label + "': non-finite sample");
    }
};

// ---------------------------------------------------------------------------
// CFC filtering

enum class Cfc { cfc60 = 60, cfc180 = 180, cfc600 = 600, cfc1000 = 1000 };

inline Cfc parse_cfc(int value) {
    switch (value) {
    case 60: return Cfc::cfc60;
    case 180: return Cfc::cfc180;
    case 600: return Cfc::cfc600;
    case 1000: return Cfc::cfc1000;
    default: throw ValidationError("unsupported CFC class " + std::to_string(value) + " (use 60, 180, 600 or 1000)");
    }
}

/// Two-pole section y[n] = a0 x[n] + a1 x[n-1] + a2 x[n-2] + b1 y[n-1] + b2 y[n-2].
struct CfcCoefficients {
    double a0, a1, a2, b1, b2;
};

inline CfcCoefficients cfc_coefficients(Cfc cfc, double dt) {
    const double wd = 2.0 * std::numbers::pi * static_cast<double>(cfc) * 2.0775;
    const double wa = std::sin(wd * dt / 2.0) / std::cos(wd * dt / 2.0);
    const double s2 = std::numbers::sqrt2;
    const double den = 1.0 + s2 * wa + wa * wa;
    CfcCoefficients c{};
    c.a0 = wa * wa / den;
    c.a1 = 2.0 * c.a0;
    c.a2 = c.a0;
    c.b1 = -2.0 * (wa * wa - 1.0) / den;
    c.b2 = (-1.0 + s2 * wa - wa * wa) / den;
    return c;
}

/// Samples of odd-reflection padding at each end: 10 time constants, tau = 1 / (2 pi CFC).
inline std::size_t cfc_pad_samples(Cfc cfc, double dt) {
    const double tau = 1.0 / (2.0 * std::numbers::pi * static_cast<double>(cfc));
    return static_cast<std::size_t>(std::ceil(10.0 * tau / dt));
}

/// Returns a message when the sampling rate is below 10x the class value.
inline std::optional<std::string> cfc_sampling_warning(const TimeSeries &s, Cfc cfc) {
    const double rate = 1.0 / s.dt;
    if (rate < 10.0 * static_cast<double>(cfc))
        return "sampling rate " + std::to_string(rate) + " Hz is below 10x CFC " +
               std::to_string(static_cast<int>(cfc));
    return std::nullopt;
}

namespace detail {

/// One pass with the state initialised to the steady state of the first input sample.
inline void cfc_pass(std::vector<double> &x, const CfcCoefficients &c) {
    double x1 = x.front(), x2 = x.front(), y1 = x.front(), y2 = x.front();
    for (double &v : x) {
        const double y = c.a0 * v + c.a1 * x1 + c.a2 * x2 + c.b1 * y1 + c.b2 * y2;
        x2 = x1;
        x1 = v;
        y2 = y1;
        y1 = y;
        v = y;
    }
}

} // namespace detail

/// Phaseless channel-class filter: the two-pole section runs forward then backward over the
/// signal padded by odd reflection at both ends; the padding is trimmed afterwards.
inline TimeSeries cfc_filter(const TimeSeries &s, Cfc cfc) {
    s.validate();
    const std::size_t pad = cfc_pad_samples(cfc, s.dt);
    const std::size_t n = s.samples.size();
    if (n < 2 * pad)
        throw ValidationError("signal '" + s.label + "' has " + std::to_string(n) + " samples; CFC " +
                              std::to_string(static_cast<int>(cfc)) + " needs at least " + std::to_string(2 * pad));
    std::vector<double> buf;
    buf.reserve(n + 2 * pad);
    const double first = s.samples.front(), last = s.samples.back();
    for (std::size_t i = pad; i >= 1; --i) buf.push_back(2.0 * first - s.samples[i]);
    buf.insert(buf.end(), s.samples.begin(), s.samples.end());
    for (std::size_t i = 1; i <= pad; ++i) buf.push_back(2.0 * last - s.samples[n - 1 - i]);

    const auto c = cfc_coefficients(cfc, s.dt);
    detail::cfc_pass(buf, c);
    std::reverse(buf.begin(), buf.end());
    detail::cfc_pass(buf, c);
    std::reverse(buf.begin(), buf.end());

    TimeSeries out = s;
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(pad), buf.begin() + static_cast<std::ptrdiff_t>(pad + n),
              out.samples.begin());
    return out;
}

// ---------------------------------------------------------------------------
// CORA

struct CoraParams {
    double a_0 = 0.05;   ///< inner corridor half-width, fraction of reference peak
    double b_0 = 0.5;    ///< outer corridor half-width
    double a_eval = 0.03; ///< interval start: first |ref| >= a_eval * peak
    double b_eval = 0.03; ///< interval end: last |ref| >= b_eval * peak
    double k = 2.0;      ///< corridor transition exponent
    double d_min = 0.01; ///< shift (fraction of interval) still rated as full phase agreement
    double d_max = 0.12; ///< largest shift searched; rated zero
    double w_corridor = 0.5;
    double w_phase = 0.125;
    double w_size = 0.125;
    double w_shape = 0.25;

    void validate() const {
        if (!(a_0 > 0.0 && a_0 < b_0)) throw ValidationError("CORA: need 0 < a_0 < b_0");
        if (a_eval < 0.0 || a_eval >= 1.0 || b_eval < 0.0 || b_eval >= 1.0)
            throw ValidationError("CORA: evaluation thresholds must be in [0, 1)");
        if (k <= 0.0) throw ValidationError("CORA: k must be > 0");
        if (!(d_min >= 0.0 && d_min < d_max && d_max <= 1.0)) throw ValidationError("CORA: need 0 <= d_min < d_max <= 1");
        if (w_corridor < 0 || w_phase < 0 || w_size < 0 || w_shape < 0)
            throw ValidationError("CORA: weights must be >= 0");
        if (std::abs(w_corridor + w_phase + w_size + w_shape - 1.0) > 1e-9)
            throw ValidationError("CORA: weights must sum to 1");
    }
};

struct CoraResult {
    double total = 0.0;
    double corridor_rating = 0.0;
    double phase_rating = 0.0;
    double size_rating = 0.0;
    double shape_rating = 0.0;
    double t_start = 0.0, t_end = 0.0;
    int shift_samples = 0;        ///< optimal test shift
    double correlation = 0.0;     ///< normalized cross-correlation at that shift
    bool resampled = false;       ///< test was linearly interpolated onto the reference grid
};

/// Linear interpolation of `s` onto the sample times of `ref`; ends hold their values.
inline TimeSeries resample_like(const TimeSeries &s, const TimeSeries &ref) {
    TimeSeries out = ref;
    out.label = s.label;
    out.unit = s.unit;
    for (std::size_t i = 0; i < ref.samples.size(); ++i) {
        const double pos = (ref.time(i) - s.t0) / s.dt;
        if (pos <= 0.0) {
            out.samples[i] = s.samples.front();
            continue;
        }
        const double last = static_cast<double>(s.samples.size() - 1);
        if (pos >= last) {
            out.samples[i] = s.samples.back();
            continue;
        }
        const auto j = static_cast<std::size_t>(std::floor(pos));
        const double t = pos - static_cast<double>(j);
        out.samples[i] = t == 0.0 ? s.samples[j] : (1.0 - t) * s.samples[j] + t * s.samples[j + 1];
    }
    return out;
}

/// Corridor plus cross-correlation rating of `test` against `reference`, in [0, 1].
inline CoraResult cora_rate(const TimeSeries &reference, const TimeSeries &test, const CoraParams &params = {}) {
    params.validate();
    reference.validate();
    test.validate();
    const double ratio = std::max(reference.dt, test.dt) / std::min(reference.dt, test.dt);
    if (ratio > 10.0) throw ValidationError("CORA: sample intervals differ by more than 10x");
    const double ref_end = reference.time(reference.samples.size() - 1);
    const double test_end = test.time(test.samples.size() - 1);
    if (test.t0 > ref_end || reference.t0 > test_end) throw ValidationError("CORA: signals do not overlap in time");

    CoraResult r;
    const bool aligned = reference.dt == test.dt && reference.t0 == test.t0 && reference.samples.size() == test.samples.size();
    const TimeSeries t = aligned ? test : resample_like(test, reference);
    r.resampled = !aligned;
    const auto &x = reference.samples;
    const auto &y = t.samples;

    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) throw UndefinedMetricError("CORA: reference signal is identically zero");

    std::size_t s = 0, e = x.size() - 1;
    while (s < x.size() && std::abs(x[s]) < params.a_eval * peak) ++s;
    while (e > s && std::abs(x[e]) < params.b_eval * peak) --e;
    r.t_start = reference.time(s);
    r.t_end = reference.time(e);

    // Corridor rating.
    const double inner = params.a_0 * peak, outer = params.b_0 * peak;
    double corridor = 0.0;
    for (std::size_t i = s; i <= e; ++i) {
        const double err = std::abs(y[i] - x[i]);
        if (err <= inner) corridor += 1.0;
        else if (err < outer) corridor += std::pow((outer - err) / (outer - inner), params.k);
    }
    r.corridor_rating = corridor / static_cast<double>(e - s + 1);

    // Cross-correlation: test shifted by d samples is paired as (x[i], y[i + d]).
    const auto len = static_cast<double>(e - s);
    const auto max_shift = static_cast<int>(std::floor(params.d_max * len));
    const double min_shift = params.d_min * len;
    struct Sums {
        double xy = 0, xx = 0, yy = 0;
    };
    auto sums_at = [&](int d) {
        Sums acc;
        for (std::size_t i = s; i <= e; ++i) {
            const auto j = static_cast<std::ptrdiff_t>(i) + d;
            if (j < 0 || j >= static_cast<std::ptrdiff_t>(y.size())) continue;
            const double yj = y[static_cast<std::size_t>(j)];
            acc.xy += x[i] * yj;
            acc.xx += x[i] * x[i];
            acc.yy += yj * yj;
        }
        return acc;
    };
    auto corr = [](const Sums &a) { return a.xx > 0 && a.yy > 0 ? a.xy / std::sqrt(a.xx * a.yy) : 0.0; };

    int best_shift = 0;
    Sums best = sums_at(0);
    double best_corr = corr(best);
    for (int m = 1; m <= max_shift; ++m) {
        for (int d : {-m, m}) {
            const Sums cand = sums_at(d);
            const double c = corr(cand);
            if (c > best_corr) {
                best_corr = c;
                best = cand;
                best_shift = d;
            }
        }
    }
    r.shift_samples = best_shift;
    r.correlation = best_corr;

    const double shift = std::abs(static_cast<double>(best_shift));
    if (shift <= min_shift) r.phase_rating = 1.0;
    else if (max_shift == 0 || shift >= static_cast<double>(max_shift)) r.phase_rating = 0.0;
    else r.phase_rating = (static_cast<double>(max_shift) - shift) / (static_cast<double>(max_shift) - min_shift);

    if (best.xx == 0.0 && best.yy == 0.0) r.size_rating = 1.0;
    else if (best.xx == 0.0 || best.yy == 0.0) r.size_rating = 0.0;
    else r.size_rating = std::min(best.yy / best.xx, best.xx / best.yy);

    r.shape_rating = std::max(0.0, std::min(1.0, best_corr));

    r.total = params.w_corridor * r.corridor_rating + params.w_phase * r.phase_rating +
              params.w_size * r.size_rating + params.w_shape * r.shape_rating;
    return r;
}

/// Mean of the component totals, e.g. X, Y and Z of one kinematic quantity.
inline double average_components(const CoraResult &x, const CoraResult &y, const CoraResult &z) {
    return (x.total + y.total + z.total) / 3.0;
}

enum class Biofidelity { poor, fair, good };

inline const char *to_string(Biofidelity b) {
    switch (b) {
    case Biofidelity::poor: return "poor";
    case Biofidelity::fair: return "fair";
    case Biofidelity::good: return "good";
    }
    return "?";
}

/// good above 0.68, fair above 0.44, otherwise poor.
inline Biofidelity classify_biofidelity(double score) {
    if (!(score >= 0.0 && score <= 1.0)) throw ValidationError("CORA score must be in [0, 1]");
    if (score > 0.68) return Biofidelity::good;
    if (score > 0.44) return Biofidelity::fair;
    return Biofidelity::poor;
}

// ---------------------------------------------------------------------------
// CSV: header `time_s,<label>[,<label>...]`, one sample per row

inline std::vector<TimeSeries> read_timeseries_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("'" + path.string() + "' is empty");
    auto split = [](const std::string &l) {
        std::vector<std::string> cells;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
            cells.push_back(cell);
        }
        return cells;
    };
    const auto header = split(line);
    if (header.size() < 2 || header[0] != "time_s")
        throw ValidationError("'" + path.string() + "': header must be time_s,<label>...");

    std::vector<double> times;
    std::vector<TimeSeries> out(header.size() - 1);
    for (std::size_t c = 1; c < header.size(); ++c) out[c - 1].label = header[c];
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split(line);
        if (cells.size() != header.size())
            throw ValidationError("'" + path.string() + "' row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) + " columns");
        try {
            times.push_back(std::stod(cells[0]));
            for (std::size_t c = 1; c < cells.size(); ++c) out[c - 1].samples.push_back(std::stod(cells[c]));
        } catch (const std::exception &) {
            throw ValidationError("'" + path.string() + "' row " + std::to_string(row) + ": not a number");
        }
    }
    if (times.size() < 2) throw ValidationError("'" + path.string() + "' needs at least 2 samples");
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    for (std::size_t i = 1; i < times.size(); ++i)
        if (std::abs((times[i] - times[i - 1]) - dt) > 1e-6 * std::abs(dt))
            throw ValidationError("'" + path.string() + "': time column is not uniformly sampled");
    for (auto &ts : out) {
        ts.dt = dt;
        ts.t0 = times.front();
        ts.validate();
    }
    return out;
}

inline void write_timeseries_csv(const std::vector<TimeSeries> &channels, const std::filesystem::path &path) {
    if (channels.empty()) throw ValidationError("no channels to write");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out << "time_s";
    for (const auto &c : channels) out << ',' << c.label;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < channels.front().samples.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", channels.front().time(i));
        out << buf;
        for (const auto &c : channels) {
            std::snprintf(buf, sizeof buf, "%.17g", c.samples[i]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

} // namespace morphforge
