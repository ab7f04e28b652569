#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "osteo/baselines.hpp"
#include "osteo/data.hpp"
#include "osteo/lbp.hpp"
#include "osteo/metrics.hpp"
#include "osteo/network.hpp"
#include "osteo/optim.hpp"
#include "osteo/rng.hpp"

namespace osteo {

// Training recipe. Defaults follow the reference protocol: two learning
// rates (backbone vs. the newly added layers), momentum 0.9, weight decay
// 1e-4, batch size 32 subjects, 100 epochs.
struct Hyperparams {
    double lr_backbone = 0.0001;
    double lr_head = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    bool augment = true;
    bool class_weighted = false; // inverse-frequency weights in the loss

    void validate() const {
        if (!(lr_backbone > 0) || !(lr_head > 0))
            throw InputError("hyperparams: learning rates must be positive");
        if (batch_size < 1) throw InputError("hyperparams: batch size must be >= 1");
    }
};

struct Split {
    std::vector<std::size_t> train;
    std::size_t test;
};

// Fold i holds out exactly sample i and trains on the rest.
inline std::vector<Split> loocv_splits(std::size_t n) {
    if (n < 2) throw InputError("loocv: need at least 2 samples, got " + std::to_string(n));
    std::vector<Split> splits(n);
    for (std::size_t i = 0; i < n; ++i) {
        splits[i].test = i;
        splits[i].train.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) splits[i].train.push_back(j);
    }
    return splits;
}

template <typename S>
struct TrainResult {
    ModelParams<S> params;
    std::vector<double> loss_trace; // one mean loss per epoch
    double train_accuracy = 0;      // eval-mode accuracy on the training set
};

namespace detail {

// Derived stream salts, so fold / epoch / sample randomness never collides.
inline constexpr std::uint64_t kShuffleSalt = 0x5f0f;
inline constexpr std::uint64_t kAugmentSalt = 0xa0e6;

template <typename S>
double eval_accuracy(const ModelParams<S>& params, const std::vector<const Sample*>& samples,
                     Mode mode) {
    if (samples.empty()) return 0;
    Tape<S> tape;
    tape.set_recording(false);
    auto slots = batch_patches<S>(samples, params.config.input_side);
    auto preds = predictions(forward(tape, params, slots, mode));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (preds[i].label == samples[i]->label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

} // namespace detail

// Trains one fold from a fresh fold-seeded initialization. Runs epochs x
// ceil(n/batch) SGD steps with a per-epoch reshuffle, augmentation on (eval
// stays clean), backbone and head on their own learning rates. A non-finite
// loss aborts the fold.
template <typename S>
TrainResult<S> train_fold(const std::vector<const Sample*>& train, const BackboneConfig& config,
                          const Hyperparams& hp, Mode mode, std::uint64_t fold_seed,
                          std::string* warning = nullptr) {
    hp.validate();
    if (train.empty()) throw InputError("train_fold: empty training set");

    std::size_t op_count = 0;
    for (const auto* s : train)
        if (s->label == Label::Osteoporosis) ++op_count;
    if (warning && (op_count == 0 || op_count == train.size()))
        *warning = "training set has a single class (" +
                   std::string(op_count == 0 ? "normal" : "osteoporosis") + " only)";

    TrainResult<S> result;
    result.params = ModelParams<S>::init(config, fold_seed);

    std::vector<S> class_weights;
    const std::vector<S>* weights_ptr = nullptr;
    if (hp.class_weighted && op_count > 0 && op_count < train.size()) {
        const double n = static_cast<double>(train.size());
        class_weights = {static_cast<S>(n / (2.0 * static_cast<double>(op_count))),
                         static_cast<S>(n / (2.0 * static_cast<double>(train.size() - op_count)))};
        weights_ptr = &class_weights;
    }

    SgdState<S> sgd_backbone(static_cast<S>(hp.lr_backbone), static_cast<S>(hp.momentum),
                             static_cast<S>(hp.weight_decay));
    SgdState<S> sgd_head(static_cast<S>(hp.lr_head), static_cast<S>(hp.momentum),
                         static_cast<S>(hp.weight_decay));
    auto backbone_params = result.params.backbone_params();
    auto head_params = result.params.head_params(mode);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        Philox shuffle_rng = Philox(fold_seed, detail::kShuffleSalt).split(epoch);
        shuffle_rng.shuffle(order);

        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t stop = std::min(order.size(), start + hp.batch_size);
            std::vector<const Sample*> batch;
            batch.reserve(stop - start);
            std::vector<std::size_t> batch_ids;
            batch_ids.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(train[order[i]]);
                batch_ids.push_back(order[i]);
            }

            // Per-sample augmentation streams keyed by the sample's dataset
            // index, so batch composition does not change its draws.
            Tape<S> tape;
            std::vector<Tensor<S>> slots;
            if (hp.augment) {
                const std::size_t n = batch.size();
                const auto side = static_cast<std::size_t>(config.input_side);
                slots.reserve(8);
                for (std::size_t slot = 0; slot < 8; ++slot)
                    slots.push_back(Tensor<S>::zeros({n, 1, side, side}));
                Philox epoch_rng = Philox(fold_seed, detail::kAugmentSalt).split(epoch);
                for (std::size_t i = 0; i < n; ++i) {
                    Philox sample_rng = epoch_rng.split(batch_ids[i]);
                    for (std::size_t slot = 0; slot < 8; ++slot) {
                        const Image img = augment(batch[i]->patches[slot], sample_rng);
                        S* dst = slots[slot].data().data() + i * side * side;
                        for (std::size_t px = 0; px < side * side; ++px)
                            dst[px] = static_cast<S>(img.pixels[px]);
                    }
                }
            } else {
                slots = batch_patches<S>(batch, config.input_side);
            }

            auto out = forward(tape, result.params, slots, mode);
            auto loss = cross_entropy(tape, out.logits, batch_labels(batch), weights_ptr);
            const double loss_value = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(loss_value))
                throw NumericError("train_fold: non-finite loss at epoch " +
                                   std::to_string(epoch) + " (seed " + std::to_string(fold_seed) +
                                   ")");
            epoch_loss += loss_value * static_cast<double>(batch.size());

            backward(tape, loss);
            sgd_backbone.step(backbone_params);
            sgd_head.step(head_params);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(train.size()));
    }

    result.train_accuracy = detail::eval_accuracy(result.params, train, mode);
    return result;
}

// Deterministic, augmentation-free evaluation.
template <typename S>
std::vector<FoldReport> evaluate(const ModelParams<S>& params,
                                 const std::vector<const Sample*>& tests, Mode mode,
                                 std::size_t fold_index = 0) {
    std::vector<FoldReport> reports;
    if (tests.empty()) return reports;

    Tape<S> tape;
    tape.set_recording(false);
    auto slots = batch_patches<S>(tests, params.config.input_side);
    auto preds = predictions(forward(tape, params, slots, mode));
    reports.reserve(tests.size());
    for (std::size_t i = 0; i < tests.size(); ++i) {
        FoldReport r;
        r.fold = fold_index + i;
        r.image_id = tests[i]->image_id;
        r.truth = tests[i]->label;
        r.predicted = preds[i].label;
        r.p_op = preds[i].p_op;
        r.p_nop = preds[i].p_nop;
        r.attention = preds[i].attention;
        r.has_attention = mode == Mode::Attention;
        reports.push_back(std::move(r));
    }
    return reports;
}

enum class Method { Attention, NoAttention, Knn, Ensemble };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::Attention: return "attention";
        case Method::NoAttention: return "no-attention";
        case Method::Knn: return "knn";
        default: return "ensemble";
    }
}

inline Method parse_method(const std::string& s) {
    if (s == "attention") return Method::Attention;
    if (s == "no-attention") return Method::NoAttention;
    if (s == "knn") return Method::Knn;
    if (s == "ensemble") return Method::Ensemble;
    throw InputError("unknown method '" + s + "'");
}

struct LoocvOptions {
    Method method = Method::Attention;
    BackboneConfig config;
    Hyperparams hp;
    int jobs = 1;
    int knn_k = 5;
    std::size_t ensemble_size = 100;
};

struct LoocvResult {
    std::vector<FoldReport> reports; // ordered by fold index, aborted folds skipped
    MetricsReport metrics;           // over completed folds
    std::vector<std::size_t> aborted_folds;
    std::vector<std::string> abort_messages;
    std::vector<std::string> warnings;

    bool complete() const { return aborted_folds.empty(); }
};

namespace detail {

// Deep-model folds are independent: each worker owns its fold's parameters,
// tape and derived rng streams, so any job count yields identical reports.
template <typename S>
void run_deep_folds(const std::vector<Sample>& dataset, const std::vector<Split>& splits,
                    const LoocvOptions& opt, Mode mode,
                    std::vector<std::vector<FoldReport>>& fold_reports,
                    std::vector<std::string>& fold_errors) {
    std::atomic<std::size_t> next{0};
    const int jobs = std::max(1, opt.jobs);

    const auto worker = [&] {
        for (;;) {
            const std::size_t fold = next.fetch_add(1);
            if (fold >= splits.size()) return;
            try {
                std::vector<const Sample*> train;
                train.reserve(splits[fold].train.size());
                for (const auto idx : splits[fold].train) train.push_back(&dataset[idx]);
                const std::uint64_t fold_seed = Philox::mix(opt.hp.seed, fold);
                auto trained = train_fold<S>(train, opt.config, opt.hp, mode, fold_seed);
                fold_reports[fold] =
                    evaluate(trained.params, {&dataset[splits[fold].test]}, mode, fold);
            } catch (const std::exception& e) {
                fold_errors[fold] = e.what();
            }
        }
    };

    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
}

inline void run_baseline_folds(const std::vector<Sample>& dataset,
                               const std::vector<Split>& splits, const LoocvOptions& opt,
                               std::vector<std::vector<FoldReport>>& fold_reports,
                               std::vector<std::string>& fold_errors) {
    // LBP features do not depend on the fold; compute them once.
    std::vector<std::vector<double>> features(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) features[i] = lbp_feature(dataset[i]);

    for (std::size_t fold = 0; fold < splits.size(); ++fold) {
        try {
            std::vector<std::vector<double>> train_features;
            std::vector<Label> train_labels;
            train_features.reserve(splits[fold].train.size());
            for (const auto idx : splits[fold].train) {
                train_features.push_back(features[idx]);
                train_labels.push_back(dataset[idx].label);
            }
            const auto& query = features[splits[fold].test];

            VotePrediction pred;
            if (opt.method == Method::Knn) {
                pred = knn_predict(knn_fit(std::move(train_features), std::move(train_labels),
                                           opt.knn_k),
                                   query);
            } else {
                Philox rng(Philox::mix(opt.hp.seed, fold), 0xba6);
                pred = ensemble_predict(
                    ensemble_fit(train_features, train_labels, opt.ensemble_size, rng), query);
            }

            const auto& held_out = dataset[splits[fold].test];
            FoldReport r;
            r.fold = fold;
            r.image_id = held_out.image_id;
            r.truth = held_out.label;
            r.predicted = pred.label;
            r.p_op = pred.p_op;
            r.p_nop = 1.0 - pred.p_op;
            r.has_attention = false;
            fold_reports[fold] = {r};
        } catch (const std::exception& e) {
            fold_errors[fold] = e.what();
        }
    }
}

} // namespace detail

// Full leave-one-out protocol for the selected method. Folds reinitialize
// from hash(seed, fold), run independently (optionally in parallel), and
// aggregate in fold order. Aborted folds are reported, never dropped
// silently.
template <typename S>
LoocvResult run_loocv(const std::vector<Sample>& dataset, const LoocvOptions& opt) {
    const auto splits = loocv_splits(dataset.size());
    LoocvResult result;

    std::size_t op_total = 0;
    for (const auto& s : dataset)
        if (s.label == Label::Osteoporosis) ++op_total;
    if (op_total == 0 || op_total == dataset.size())
        result.warnings.push_back("dataset has a single class; per-class accuracy is undefined");

    std::vector<std::vector<FoldReport>> fold_reports(splits.size());
    std::vector<std::string> fold_errors(splits.size());

    if (opt.method == Method::Knn || opt.method == Method::Ensemble) {
        detail::run_baseline_folds(dataset, splits, opt, fold_reports, fold_errors);
    } else {
        const Mode mode = opt.method == Method::Attention ? Mode::Attention : Mode::NoAttention;
        detail::run_deep_folds<S>(dataset, splits, opt, mode, fold_reports, fold_errors);
    }

    for (std::size_t fold = 0; fold < splits.size(); ++fold) {
        if (!fold_errors[fold].empty()) {
            result.aborted_folds.push_back(fold);
            result.abort_messages.push_back("fold " + std::to_string(fold) + ": " +
                                            fold_errors[fold]);
            continue;
        }
        for (auto& r : fold_reports[fold]) result.reports.push_back(std::move(r));
    }

    if (!result.reports.empty()) result.metrics = compute_metrics(result.reports);
    return result;
}

} // namespace osteo
