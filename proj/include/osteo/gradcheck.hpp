#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "osteo/ops.hpp"
#include "osteo/rng.hpp"
#include "osteo/tensor.hpp"

namespace osteo {

// Central finite differences against the tape's analytic gradients, always at
// 64-bit precision. Coordinates are subsampled deterministically per
// parameter from the seed, so reports are reproducible.
struct GradCheckOptions {
    double eps = 1e-3;
    double rel_tol = 1e-4;
    double abs_tol = 1e-6;
    std::size_t max_coords_per_param = 32;
    std::uint64_t seed = 0;
    // Test fixture: perturb the analytic gradient of the first checked
    // coordinate so the comparison must fail.
    bool inject_bug = false;
};

struct GradCheckParamReport {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_failed = 0;
};

struct GradCheckReport {
    std::vector<GradCheckParamReport> params;
    double max_rel_err = 0.0;
    std::size_t coords_failed = 0;

    bool pass() const { return coords_failed == 0; }
};

using NamedParam = std::pair<std::string, Tensor<double>>;

// loss_fn must rebuild the forward pass from the parameters' current values
// on the provided tape and return a scalar loss.
inline GradCheckReport grad_check(const std::function<Tensor<double>(Tape<double>&)>& loss_fn,
                                  const std::vector<NamedParam>& params,
                                  const GradCheckOptions& opt = {}) {
    // Loss evaluation without recording, for the perturbed passes.
    const auto eval_loss = [&]() {
        Tape<double> tape;
        tape.set_recording(false);
        return loss_fn(tape).data()[0];
    };

    GradCheckReport report;
    {
        Tape<double> tape;
        Tensor<double> loss = loss_fn(tape);
        backward(tape, loss);
    }

    bool bug_pending = opt.inject_bug;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, param] = params[pi];
        GradCheckParamReport pr;
        pr.name = name;

        std::vector<double> analytic(param.numel(), 0.0);
        if (param.has_grad()) analytic = param.grad();

        // Deterministic coordinate subsample.
        std::vector<std::size_t> coords(param.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > opt.max_coords_per_param) {
            Philox rng(opt.seed, 0x6c0de);
            Philox sub = rng.split(pi);
            sub.shuffle(coords);
            coords.resize(opt.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }

        auto& values = param.storage()->data;
        for (const std::size_t ci : coords) {
            const double saved = values[ci];
            values[ci] = saved + opt.eps;
            const double lp = eval_loss();
            values[ci] = saved - opt.eps;
            const double lm = eval_loss();
            values[ci] = saved;

            const double numeric = (lp - lm) / (2.0 * opt.eps);
            double a = analytic[ci];
            if (bug_pending) {
                a = a * 1.5 + 1.0;
                bug_pending = false;
            }
            const double diff = std::abs(a - numeric);
            const double denom = std::max(std::abs(a), std::abs(numeric));
            const double rel = diff / std::max(denom, 1e-12);
            const bool ok = diff <= opt.abs_tol || rel <= opt.rel_tol;

            ++pr.coords_checked;
            if (!ok) ++pr.coords_failed;
            if (diff > opt.abs_tol) pr.max_rel_err = std::max(pr.max_rel_err, rel);
        }

        report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
        report.coords_failed += pr.coords_failed;
        report.params.push_back(std::move(pr));
    }
    return report;
}

} // namespace osteo
