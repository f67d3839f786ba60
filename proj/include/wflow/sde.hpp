#pragma once

// Euler-Maruyama integration of the forward diffusion
//   dX = (div Sigma - Sigma grad V) dt + sqrt(2 Sigma) dB
// and of its time reversal
//   dXbar = (div Sigma - Sigma grad V + 2 Sigma score) ds + sqrt(2 Sigma) dBbar.
//
// Noise is drawn from counter-based streams indexed by
// (master seed, particle, step), so trajectories are bit-reproducible for any
// worker count.

#include <atomic>
#include <cmath>
#include <limits>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/model.hpp"
#include "wflow/parallel.hpp"
#include "wflow/rng.hpp"

namespace wflow {

class SdeError : public std::runtime_error {
  public:
    explicit SdeError(const std::string& what) : std::runtime_error(what) {}
};

struct StepConfig {
    double dt = 1e-3;
    int store_every = 0;  // 0: only explicit snapshot times
    // scheme: euler_maruyama; boundary: reflect (the only options)
};

struct ParticleSnapshot {
    double time = 0;
    std::vector<Vec> positions;
};

struct ParticleEnsemble {
    std::vector<Vec> positions;
    double time = 0;
    uint64_t master_seed = 0;
    uint64_t step_index = 0;  // global step counter feeding the RNG
    std::vector<ParticleSnapshot> history;
    uint64_t reflection_count = 0;
    uint64_t total_steps_taken = 0;

    int size() const { return static_cast<int>(positions.size()); }

    double empirical_mean(int axis = 0) const {
        double m = 0;
        for (const auto& x : positions) m += x[axis];
        return m / size();
    }
    double empirical_variance(int axis = 0) const {
        const double m = empirical_mean(axis);
        double s = 0;
        for (const auto& x : positions) {
            const double d = x[axis] - m;
            s += d * d;
        }
        return s / (size() - 1);
    }
};

// Per-(particle, step) standard normal pair from one Philox block.
inline Vec step_noise(uint64_t seed, uint64_t particle, uint64_t step,
                      int dim) {
    const std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed),
                                         static_cast<uint32_t>(seed >> 32)};
    const auto block = detail::Philox4x32::block(
        {static_cast<uint32_t>(step), static_cast<uint32_t>(step >> 32),
         static_cast<uint32_t>(particle), static_cast<uint32_t>(particle >> 32)},
        key);
    const auto to_unit = [](uint32_t hi, uint32_t lo) {
        const uint64_t bits = (static_cast<uint64_t>(hi) << 32) | lo;
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    };
    const double u1 = to_unit(block[0], block[1]);
    const double u2 = to_unit(block[2], block[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    Vec z = Vec::zero(dim);
    z[0] = r * std::cos(2.0 * M_PI * u2);
    if (dim == 2) z[1] = r * std::sin(2.0 * M_PI * u2);
    return z;
}

inline ParticleEnsemble sample_initial_ensemble(const DiffusionProblem& problem,
                                                int count,
                                                uint64_t master_seed) {
    ParticleEnsemble ens;
    ens.master_seed = master_seed;
    ens.positions.resize(count);
    parallel_for(0, count, [&](int64_t i) {
        CounterRng rng(master_seed ^ 0x494e4954ull, static_cast<uint64_t>(i));
        ens.positions[i] = problem.initial_law.sample(rng, problem.dimension);
    });
    return ens;
}

namespace detail {

inline Vec reflect_into_box(Vec x, const Box& box, uint64_t* reflections) {
    for (int i = 0; i < x.n; ++i) {
        const double lo = box.lo[i], hi = box.hi[i];
        double v = x[i];
        int folds = 0;
        while ((v < lo || v > hi) && folds < 64) {
            if (v < lo) v = 2 * lo - v;
            if (v > hi) v = 2 * hi - v;
            ++folds;
        }
        if (folds > 0 && reflections)
            std::atomic_ref<uint64_t>(*reflections).fetch_add(
                folds, std::memory_order_relaxed);
        x[i] = v;
    }
    return x;
}

template <typename DriftFn>
inline void em_step(ParticleEnsemble& ens, const DiffusionProblem& problem,
                    DriftFn&& drift_at, double dt, const char* what) {
    const int dim = problem.dimension;
    const uint64_t step = ens.step_index;
    const double sq_dt = std::sqrt(dt);
    std::vector<std::string> errors(1);
    std::atomic<bool> failed{false};
    auto report = [&](const std::string& msg) {
        bool expected = false;
        if (failed.compare_exchange_strong(expected, true)) errors[0] = msg;
    };
    parallel_for(0, ens.size(), [&](int64_t i) {
        if (failed.load(std::memory_order_relaxed)) return;
        const Vec x = ens.positions[i];
        try {
            const Vec b = drift_at(x);
            if (!b.finite()) {
                report(std::string(what) + ": non-finite drift for particle " +
                       std::to_string(i) + " at (" + std::to_string(x[0]) +
                       (dim == 2 ? ", " + std::to_string(x[1]) : "") + ")");
                return;
            }
            const Mat root = sqrt_spd(problem.sigma.eval(x).scaled(2.0));
            const Vec z = step_noise(ens.master_seed, static_cast<uint64_t>(i),
                                     step, dim);
            Vec next = x + dt * b + sq_dt * root.apply(z);
            if (!next.finite()) {
                report(std::string(what) + ": non-finite update for particle " +
                       std::to_string(i) + " at (" + std::to_string(x[0]) +
                       (dim == 2 ? ", " + std::to_string(x[1]) : "") + ")");
                return;
            }
            ens.positions[i] = reflect_into_box(next, problem.domain_box,
                                                &ens.reflection_count);
        } catch (const std::exception& e) {
            report(std::string(what) + ": particle " + std::to_string(i) +
                   ": " + e.what());
        }
    });
    if (failed.load()) throw SdeError(errors[0]);
    ens.time += dt;
    ens.step_index += 1;
    ens.total_steps_taken += 1;
}

}  // namespace detail

// One forward Euler-Maruyama step; advances the ensemble in place.
inline void step_forward(ParticleEnsemble& ens, const DiffusionProblem& problem,
                         const StepConfig& cfg) {
    if (ens.time + cfg.dt > problem.horizon + 1e-12)
        throw SdeError("step_forward: step would exceed the horizon");
    detail::em_step(
        ens, problem, [&](const Vec& x) { return drift(problem, x); }, cfg.dt,
        "step_forward");
}

// One reversed-time step; `score(s, x)` supplies grad log lbar_s(x).
inline void step_reversed(
    ParticleEnsemble& ens, const DiffusionProblem& problem,
    const std::function<Vec(double, const Vec&)>& score,
    const StepConfig& cfg) {
    const double s = ens.time;
    std::atomic<bool> score_bad{false};
    std::string score_msg;
    try {
        detail::em_step(
            ens, problem,
            [&](const Vec& x) {
                const Vec sc = score(s, x);
                if (!sc.finite()) {
                    bool expected = false;
                    if (score_bad.compare_exchange_strong(expected, true))
                        score_msg =
                            "step_reversed: score returned a non-finite value "
                            "at (" + std::to_string(x[0]) +
                            (x.n == 2 ? ", " + std::to_string(x[1]) : "") +
                            "), s = " + std::to_string(s);
                    Vec bad = Vec::zero(x.n);
                    bad[0] = std::numeric_limits<double>::quiet_NaN();
                    return bad;
                }
                return drift(problem, x) +
                       2.0 * problem.sigma.eval(x).apply(sc);
            },
            cfg.dt, "step_reversed");
    } catch (const SdeError&) {
        if (score_bad.load()) throw SdeError(score_msg);
        throw;
    }
}

// Advance to t_end, storing position snapshots at the given times (sorted;
// include 0 to record the initial state). Steps between snapshots are uniform
// with dt <= cfg.dt so all particles follow the same schedule.
inline void simulate_forward(ParticleEnsemble& ens,
                             const DiffusionProblem& problem,
                             const StepConfig& cfg, double t_end,
                             const std::vector<double>& snapshot_times) {
    size_t next = 0;
    auto record = [&](double t) {
        ens.history.push_back({t, ens.positions});
    };
    while (next < snapshot_times.size() &&
           snapshot_times[next] <= ens.time + 1e-14) {
        record(snapshot_times[next]);
        ++next;
    }
    while (ens.time < t_end - 1e-14) {
        double target = t_end;
        if (next < snapshot_times.size())
            target = std::min(target, snapshot_times[next]);
        const double span = target - ens.time;
        const int steps =
            std::max(1, static_cast<int>(std::ceil(span / cfg.dt - 1e-12)));
        StepConfig sub = cfg;
        sub.dt = span / steps;
        for (int k = 0; k < steps; ++k) step_forward(ens, problem, sub);
        ens.time = target;
        if (next < snapshot_times.size() &&
            ens.time >= snapshot_times[next] - 1e-12) {
            record(snapshot_times[next]);
            ++next;
        }
    }
}

// Same schedule, reversed dynamics on [0, s_end] in reversed time.
inline void simulate_reversed(
    ParticleEnsemble& ens, const DiffusionProblem& problem,
    const std::function<Vec(double, const Vec&)>& score, const StepConfig& cfg,
    double s_end, const std::vector<double>& snapshot_times) {
    size_t next = 0;
    while (next < snapshot_times.size() &&
           snapshot_times[next] <= ens.time + 1e-14) {
        ens.history.push_back({snapshot_times[next], ens.positions});
        ++next;
    }
    while (ens.time < s_end - 1e-14) {
        double target = s_end;
        if (next < snapshot_times.size())
            target = std::min(target, snapshot_times[next]);
        const double span = target - ens.time;
        const int steps =
            std::max(1, static_cast<int>(std::ceil(span / cfg.dt - 1e-12)));
        StepConfig sub = cfg;
        sub.dt = span / steps;
        for (int k = 0; k < steps; ++k) step_reversed(ens, problem, score, sub);
        ens.time = target;
        if (next < snapshot_times.size() &&
            ens.time >= snapshot_times[next] - 1e-12) {
            ens.history.push_back({snapshot_times[next], ens.positions});
            ++next;
        }
    }
}

inline void write_particles_csv(const std::string& path,
                                const ParticleEnsemble& ens) {
    std::ofstream os(path);
    if (!os) throw SdeError("cannot open '" + path + "' for writing");
    os.precision(17);
    const int dim = ens.positions.empty() ? 1 : ens.positions.front().n;
    os << (dim == 1 ? "time,particle_id,x1\n" : "time,particle_id,x1,x2\n");
    for (const auto& snap : ens.history)
        for (size_t i = 0; i < snap.positions.size(); ++i) {
            os << snap.time << "," << i << "," << snap.positions[i][0];
            if (dim == 2) os << "," << snap.positions[i][1];
            os << "\n";
        }
}

}  // namespace wflow
