#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tryon/errors.hpp"

namespace tryon {

enum class ScheduleKind { LinearBeta, Cosine };

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::LinearBeta ? "linear-beta" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear-beta") return ScheduleKind::LinearBeta;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw InvalidArgument("unknown schedule kind: " + s);
}

// Cumulative signal coefficients. alpha_bar has T_train+1 entries with
// alpha_bar[0] = 1, strictly decreasing, and alpha_bar[T_train] < 0.01.
struct NoiseSchedule {
    int T_train = 0;
    std::vector<double> alpha_bar;
    ScheduleKind kind = ScheduleKind::LinearBeta;

    double at(int t) const { return alpha_bar[static_cast<size_t>(t)]; }
};

// The linear-beta range 1e-4..2e-2 is calibrated for 1000 steps; for other
// step counts the range is rescaled by 1000/T so the terminal signal fraction
// stays far below the 0.01 bound.
inline NoiseSchedule build_schedule(ScheduleKind kind, int T_train) {
    if (T_train < 2) throw InvalidArgument("build_schedule: T_train must be >= 2");
    NoiseSchedule s;
    s.T_train = T_train;
    s.kind = kind;
    s.alpha_bar.resize(static_cast<size_t>(T_train) + 1);
    s.alpha_bar[0] = 1.0;
    if (kind == ScheduleKind::LinearBeta) {
        const double scale = 1000.0 / double(T_train);
        const double b0 = 1e-4 * scale, b1 = 2e-2 * scale;
        double prod = 1.0;
        for (int t = 1; t <= T_train; ++t) {
            double beta = b0 + (b1 - b0) * double(t - 1) / double(T_train - 1);
            if (beta > 0.999) beta = 0.999;
            prod *= 1.0 - beta;
            s.alpha_bar[static_cast<size_t>(t)] = prod;
        }
    } else {
        const double offset = 0.008;
        auto f = [&](double t) {
            double a = (t / double(T_train) + offset) / (1.0 + offset) * 1.5707963267948966;
            double c = std::cos(a);
            return c * c;
        };
        const double f0 = f(0.0);
        double prod = 1.0;
        for (int t = 1; t <= T_train; ++t) {
            double ratio = f(double(t)) / f(double(t - 1));
            double beta = 1.0 - ratio;
            if (beta > 0.999) beta = 0.999;
            if (beta < 1e-8) beta = 1e-8;
            prod *= 1.0 - beta;
            s.alpha_bar[static_cast<size_t>(t)] = prod;
        }
        (void)f0;
    }
    return s;
}

// Ascending denoising timesteps: S_num values evenly spaced over [1, T_train],
// rounded half-up, deduplicated.
struct StepList {
    std::vector<int> steps;
    int count() const { return static_cast<int>(steps.size()); }
};

inline StepList build_step_list(int S_num, int T_train) {
    if (S_num < 1) throw InvalidArgument("build_step_list: S_num must be >= 1");
    if (T_train < 2) throw InvalidArgument("build_step_list: T_train must be >= 2");
    StepList sl;
    if (S_num == 1) {
        sl.steps.push_back(T_train);
        return sl;
    }
    int prev = 0;
    for (int i = 0; i < S_num; ++i) {
        double v = 1.0 + double(T_train - 1) * double(i) / double(S_num - 1);
        int t = static_cast<int>(std::floor(v + 0.5));
        if (t > T_train) t = T_train;
        if (t > prev) {
            sl.steps.push_back(t);
            prev = t;
        }
    }
    return sl;
}

}  // namespace tryon
