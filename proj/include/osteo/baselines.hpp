#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "osteo/data.hpp"
#include "osteo/error.hpp"
#include "osteo/rng.hpp"

namespace osteo {

// k-nearest-neighbor over stored features, Euclidean metric. Distance ties
// break toward the lower training index; with odd k and two classes the vote
// itself cannot tie.
struct KnnModel {
    std::vector<std::vector<double>> features;
    std::vector<Label> labels;
    int k = 5;
};

inline KnnModel knn_fit(std::vector<std::vector<double>> features, std::vector<Label> labels,
                        int k = 5) {
    if (features.empty()) throw InputError("knn: empty training set");
    if (features.size() != labels.size()) throw InputError("knn: feature/label count mismatch");
    if (k < 1 || k % 2 == 0) throw InputError("knn: k must be odd and positive");
    if (static_cast<std::size_t>(k) > features.size())
        throw InputError("knn: k = " + std::to_string(k) + " exceeds training size " +
                         std::to_string(features.size()));
    return {std::move(features), std::move(labels), k};
}

struct VotePrediction {
    Label label = Label::Normal;
    double p_op = 0; // share of votes for osteoporosis
};

inline VotePrediction knn_predict(const KnnModel& model, const std::vector<double>& query) {
    if (model.features.empty()) throw InputError("knn: empty model");
    if (static_cast<std::size_t>(model.k) > model.features.size())
        throw InputError("knn: k exceeds training size");

    std::vector<std::pair<double, std::size_t>> dist(model.features.size());
    for (std::size_t i = 0; i < model.features.size(); ++i) {
        const auto& f = model.features[i];
        if (f.size() != query.size()) throw DimensionError("knn: feature width mismatch");
        double d2 = 0;
        for (std::size_t j = 0; j < f.size(); ++j) {
            const double d = f[j] - query[j];
            d2 += d * d;
        }
        dist[i] = {d2, i};
    }
    std::sort(dist.begin(), dist.end()); // (distance, index) orders ties by index

    std::size_t op_votes = 0;
    for (int i = 0; i < model.k; ++i)
        if (model.labels[dist[static_cast<std::size_t>(i)].second] == Label::Osteoporosis)
            ++op_votes;
    const double p_op = static_cast<double>(op_votes) / static_cast<double>(model.k);
    return {op_votes * 2 > static_cast<std::size_t>(model.k) ? Label::Osteoporosis : Label::Normal,
            p_op};
}

// One axis-aligned decision stump: predicts osteoporosis when
// polarity * (x[feature] - threshold) >= 0. Degenerate resamples (every
// feature constant) fall back to a majority-class constant stump.
struct Stump {
    std::size_t feature = 0;
    double threshold = 0;
    int polarity = 1;
    bool constant = false;
    Label constant_label = Label::Normal;
};

struct EnsembleModel {
    std::vector<Stump> stumps;
};

namespace detail {

inline Label stump_apply(const Stump& s, const std::vector<double>& x) {
    if (s.constant) return s.constant_label;
    const double side = static_cast<double>(s.polarity) * (x[s.feature] - s.threshold);
    return side >= 0 ? Label::Osteoporosis : Label::Normal;
}

// Exhaustive minimization of resample error over (feature, observed
// threshold, polarity); ties break toward the lexicographically smallest
// triple so fitting is deterministic.
inline Stump fit_stump(const std::vector<const std::vector<double>*>& xs,
                       const std::vector<Label>& ys) {
    const std::size_t n = xs.size();
    const std::size_t width = xs[0]->size();

    bool any_varying = false;
    for (std::size_t f = 0; f < width && !any_varying; ++f)
        for (std::size_t i = 1; i < n; ++i)
            if ((*xs[i])[f] != (*xs[0])[f]) {
                any_varying = true;
                break;
            }
    if (!any_varying) {
        std::size_t op = 0;
        for (const auto y : ys)
            if (y == Label::Osteoporosis) ++op;
        Stump s;
        s.constant = true;
        s.constant_label = op * 2 > n ? Label::Osteoporosis : Label::Normal;
        return s;
    }

    Stump best;
    std::size_t best_err = n + 1;
    std::vector<double> values;
    for (std::size_t f = 0; f < width; ++f) {
        values.clear();
        for (const auto* x : xs) values.push_back((*x)[f]);
        std::vector<double> thresholds = values;
        std::sort(thresholds.begin(), thresholds.end());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        for (const double t : thresholds) {
            for (const int polarity : {1, -1}) {
                std::size_t err = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double side = polarity * (values[i] - t);
                    const Label pred = side >= 0 ? Label::Osteoporosis : Label::Normal;
                    if (pred != ys[i]) ++err;
                }
                if (err < best_err) {
                    best_err = err;
                    best = Stump{f, t, polarity, false, Label::Normal};
                }
            }
        }
    }
    return best;
}

} // namespace detail

// Bagged decision stumps: each of the B stumps is fit on its own bootstrap
// resample drawn from rng; prediction is the majority vote with exact ties
// resolving to Normal.
inline EnsembleModel ensemble_fit(const std::vector<std::vector<double>>& features,
                                  const std::vector<Label>& labels, std::size_t n_stumps,
                                  Philox& rng) {
    if (features.empty()) throw InputError("ensemble: empty training set");
    if (features.size() != labels.size())
        throw InputError("ensemble: feature/label count mismatch");
    if (n_stumps < 1) throw InputError("ensemble: need at least one stump");

    const std::size_t n = features.size();
    EnsembleModel model;
    model.stumps.reserve(n_stumps);
    std::vector<const std::vector<double>*> xs(n);
    std::vector<Label> ys(n);
    for (std::size_t b = 0; b < n_stumps; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto pick = static_cast<std::size_t>(rng.next_below(n));
            xs[i] = &features[pick];
            ys[i] = labels[pick];
        }
        model.stumps.push_back(detail::fit_stump(xs, ys));
    }
    return model;
}

inline VotePrediction ensemble_predict(const EnsembleModel& model,
                                       const std::vector<double>& query) {
    if (model.stumps.empty()) throw InputError("ensemble: empty model");
    std::size_t op_votes = 0;
    for (const auto& s : model.stumps)
        if (detail::stump_apply(s, query) == Label::Osteoporosis) ++op_votes;
    const double p_op = static_cast<double>(op_votes) / static_cast<double>(model.stumps.size());
    return {op_votes * 2 > model.stumps.size() ? Label::Osteoporosis : Label::Normal, p_op};
}

} // namespace osteo
