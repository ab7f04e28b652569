#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "osteo/config.hpp"
#include "osteo/data.hpp"
#include "osteo/ops.hpp"
#include "osteo/rng.hpp"
#include "osteo/tensor.hpp"

namespace osteo {

enum class Mode { Attention, NoAttention };

inline const char* mode_name(Mode m) { return m == Mode::Attention ? "attention" : "no-attention"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "attention") return Mode::Attention;
    if (s == "no-attention") return Mode::NoAttention;
    throw InputError("unknown mode '" + s + "'");
}

struct ConvStage {
    int out_channels;
    int kernel;
    int stride;
    int padding;
    bool pool; // 2x2/stride-2 max pool after the activation
};

// Reduced AlexNet-style stack: conv stages, flatten, one fc to feature_dim.
struct BackboneConfig {
    int input_side = 224;
    std::vector<ConvStage> stages = {{16, 5, 1, 2, true}, {32, 3, 1, 1, true}, {64, 3, 1, 1, true}};
    int feature_dim = 128;

    static BackboneConfig tiny() {
        BackboneConfig cfg;
        cfg.input_side = 16;
        cfg.stages = {{8, 3, 1, 1, true}, {16, 3, 1, 1, true}};
        cfg.feature_dim = 8;
        return cfg;
    }

    int spatial_after_stages() const {
        int side = input_side;
        for (const auto& st : stages) {
            side = (side + 2 * st.padding - st.kernel) / st.stride + 1;
            if (side < 1) return side;
            if (st.pool) {
                side = (side - 2) / 2 + 1;
                if (side < 1) return side;
            }
        }
        return side;
    }

    int flat_dim() const {
        const int side = spatial_after_stages();
        const int channels = stages.empty() ? 1 : stages.back().out_channels;
        return channels * side * side;
    }

    void validate() const {
        if (input_side < 1) throw InputError("backbone: input side must be positive");
        if (feature_dim < 8) throw InputError("backbone: feature dim must be >= 8");
        for (const auto& st : stages) {
            if (st.out_channels < 1 || st.kernel < 1 || st.stride < 1 || st.padding < 0)
                throw InputError("backbone: invalid conv stage");
        }
        if (spatial_after_stages() < 1)
            throw InputError("backbone: conv stages collapse the spatial size below 1 for side " +
                             std::to_string(input_side));
    }
};

// Stage list grammar: "C,K,S,P[,pool]" per stage, stages joined by ';'.
inline std::string stages_to_string(const std::vector<ConvStage>& stages) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out += ";";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d%s", stages[i].out_channels, stages[i].kernel,
                      stages[i].stride, stages[i].padding, stages[i].pool ? ",pool" : "");
        out += buf;
    }
    return out;
}

inline std::vector<ConvStage> stages_from_string(const std::string& text) {
    std::vector<ConvStage> stages;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto semi = text.find(';', pos);
        const std::string part =
            text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
        if (!part.empty()) {
            ConvStage st{0, 0, 1, 0, false};
            int fields[4] = {0, 0, 0, 0};
            std::size_t fpos = 0;
            for (int f = 0; f < 4; ++f) {
                const auto comma = part.find(',', fpos);
                const std::string tok =
                    part.substr(fpos, comma == std::string::npos ? std::string::npos : comma - fpos);
                try {
                    std::size_t used = 0;
                    fields[f] = std::stoi(tok, &used);
                    if (used != tok.size()) throw std::invalid_argument(tok);
                } catch (const std::exception&) {
                    throw ParseError("stages: bad field '" + tok + "' in '" + part + "'");
                }
                if (comma == std::string::npos) {
                    if (f != 3) throw ParseError("stages: stage '" + part + "' needs C,K,S,P");
                    fpos = part.size();
                    break;
                }
                fpos = comma + 1;
            }
            st.out_channels = fields[0];
            st.kernel = fields[1];
            st.stride = fields[2];
            st.padding = fields[3];
            if (fpos < part.size()) {
                const std::string tail = part.substr(fpos);
                if (tail == "pool")
                    st.pool = true;
                else if (tail != "nopool")
                    throw ParseError("stages: unknown tail '" + tail + "' in '" + part + "'");
            }
            stages.push_back(st);
        }
        if (semi == std::string::npos) break;
        pos = semi + 1;
    }
    if (stages.empty()) throw ParseError("stages: empty stage list");
    return stages;
}

// All learnable weights. There is exactly one backbone weight set; the eight
// patch branches share it structurally rather than by copy.
template <typename S>
struct ModelParams {
    struct Dense {
        Tensor<S> weight;
        Tensor<S> bias;
    };

    BackboneConfig config;
    std::vector<Dense> conv;        // one per stage
    Dense fc;                       // backbone head: flat_dim -> feature_dim
    std::array<Dense, 4> group_fc;  // per-group transform: D -> D
    Dense attn1;                    // 4D -> D
    Dense attn2;                    // D -> 4, zero-initialized
    Dense classifier;               // 4D -> 2

    static ModelParams init(const BackboneConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        ModelParams p;
        p.config = cfg;
        Philox root(seed, 0x1417);
        std::uint64_t stream = 0;

        const auto he_uniform = [&](Shape shape, std::size_t fan_in) {
            Philox rng = root.split(stream++);
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            std::vector<S> data(shape_numel(shape));
            for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
            return Tensor<S>::from_data(std::move(shape), std::move(data), true);
        };
        const auto zeros = [](Shape shape) { return Tensor<S>::zeros(std::move(shape), true); };

        int in_ch = 1;
        for (const auto& st : cfg.stages) {
            const auto k = static_cast<std::size_t>(st.kernel);
            const auto out_ch = static_cast<std::size_t>(st.out_channels);
            p.conv.push_back({he_uniform({out_ch, static_cast<std::size_t>(in_ch), k, k},
                                         static_cast<std::size_t>(in_ch) * k * k),
                              zeros({out_ch})});
            in_ch = st.out_channels;
        }
        const auto flat = static_cast<std::size_t>(cfg.flat_dim());
        const auto d = static_cast<std::size_t>(cfg.feature_dim);
        p.fc = {he_uniform({flat, d}, flat), zeros({d})};
        for (auto& g : p.group_fc) g = {he_uniform({d, d}, d), zeros({d})};
        p.attn1 = {he_uniform({4 * d, d}, 4 * d), zeros({d})};
        // Zero start for the final attention layer: training begins at
        // uniform attention S = [1,1,1,1].
        p.attn2 = {zeros({d, 4}), zeros({4})};
        p.classifier = {he_uniform({4 * d, 2}, 4 * d), zeros({2})};
        return p;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (std::size_t i = 0; i < conv.size(); ++i) {
            out.emplace_back("backbone.conv" + std::to_string(i) + ".weight", conv[i].weight);
            out.emplace_back("backbone.conv" + std::to_string(i) + ".bias", conv[i].bias);
        }
        out.emplace_back("backbone.fc.weight", fc.weight);
        out.emplace_back("backbone.fc.bias", fc.bias);
        for (std::size_t g = 0; g < 4; ++g) {
            out.emplace_back("group_fc." + std::to_string(g) + ".weight", group_fc[g].weight);
            out.emplace_back("group_fc." + std::to_string(g) + ".bias", group_fc[g].bias);
        }
        out.emplace_back("attention.fc1.weight", attn1.weight);
        out.emplace_back("attention.fc1.bias", attn1.bias);
        out.emplace_back("attention.fc2.weight", attn2.weight);
        out.emplace_back("attention.fc2.bias", attn2.bias);
        out.emplace_back("classifier.weight", classifier.weight);
        out.emplace_back("classifier.bias", classifier.bias);
        return out;
    }

    std::vector<Tensor<S>> backbone_params() const {
        std::vector<Tensor<S>> out;
        for (const auto& c : conv) {
            out.push_back(c.weight);
            out.push_back(c.bias);
        }
        out.push_back(fc.weight);
        out.push_back(fc.bias);
        return out;
    }

    // Attention, group-transform and classifier weights; the attention branch
    // is excluded in NoAttention mode because it takes no part in the loss.
    std::vector<Tensor<S>> head_params(Mode mode) const {
        std::vector<Tensor<S>> out;
        if (mode == Mode::Attention) {
            for (const auto& g : group_fc) {
                out.push_back(g.weight);
                out.push_back(g.bias);
            }
            out.push_back(attn1.weight);
            out.push_back(attn1.bias);
            out.push_back(attn2.weight);
            out.push_back(attn2.bias);
        }
        out.push_back(classifier.weight);
        out.push_back(classifier.bias);
        return out;
    }

    Config architecture_config(Mode mode) const {
        Config cfg;
        cfg.set("input_side", static_cast<long long>(config.input_side));
        cfg.set("stages", stages_to_string(config.stages));
        cfg.set("feature_dim", static_cast<long long>(config.feature_dim));
        cfg.set("mode", mode_name(mode));
        cfg.set("scalar", sizeof(S) == 4 ? "f32" : "f64");
        return cfg;
    }
};

inline BackboneConfig backbone_from_config(const Config& cfg) {
    BackboneConfig bc;
    bc.input_side = static_cast<int>(cfg.require_int("input_side"));
    bc.stages = stages_from_string(cfg.require("stages"));
    bc.feature_dim = static_cast<int>(cfg.require_int("feature_dim"));
    bc.validate();
    return bc;
}

// Shared-weight feature extraction for one patch slot, [N,1,side,side] ->
// [N,feature_dim].
template <typename S>
Tensor<S> backbone_forward(Tape<S>& tape, const ModelParams<S>& params, const Tensor<S>& x) {
    Tensor<S> h = x;
    for (std::size_t i = 0; i < params.conv.size(); ++i) {
        const auto& st = params.config.stages[i];
        h = relu(tape, conv2d(tape, h, params.conv[i].weight, params.conv[i].bias, st.stride,
                              st.padding));
        if (st.pool) h = maxpool2d(tape, h, 2, 2);
    }
    h = reshape(tape, h, {h.dim(0), h.numel() / h.dim(0)});
    return relu(tape, affine(tape, h, params.fc.weight, params.fc.bias));
}

// f_i = backbone(P_i) with the identical shared weights for every slot.
template <typename S>
std::array<Tensor<S>, 8> extract_features(Tape<S>& tape, const ModelParams<S>& params,
                                          const std::vector<Tensor<S>>& patches) {
    if (patches.size() != 8)
        throw InputError("extract_features: expected 8 patches, got " +
                         std::to_string(patches.size()));
    const auto side = static_cast<std::size_t>(params.config.input_side);
    std::array<Tensor<S>, 8> out;
    for (std::size_t i = 0; i < 8; ++i) {
        const auto& p = patches[i];
        if (p.rank() != 4 || p.dim(0) != patches[0].dim(0) || p.dim(1) != 1 || p.dim(2) != side ||
            p.dim(3) != side)
            throw DimensionError("extract_features: patch " + std::to_string(i) + " has shape " +
                                 shape_str(p.shape()) + ", expected [N,1," + std::to_string(side) +
                                 "," + std::to_string(side) + "]");
        out[i] = backbone_forward(tape, params, p);
    }
    return out;
}

// F_g = f_{2g} + f_{2g+1}: bilateral pairs fuse by summation.
template <typename S>
std::array<Tensor<S>, 4> fuse_groups(Tape<S>& tape, const std::array<Tensor<S>, 8>& features) {
    std::array<Tensor<S>, 4> out;
    for (std::size_t g = 0; g < 4; ++g)
        out[g] = add(tape, features[2 * g], features[2 * g + 1]);
    return out;
}

// Learned group weights S, shape [N,4]: per-group fc transforms, concat, two
// fc layers with ReLU between, softmax scaled by 4 so uniform scores give
// exactly [1,1,1,1].
template <typename S>
Tensor<S> attention_weights(Tape<S>& tape, const ModelParams<S>& params,
                            const std::array<Tensor<S>, 4>& groups) {
    std::vector<Tensor<S>> transformed;
    transformed.reserve(4);
    for (std::size_t g = 0; g < 4; ++g)
        transformed.push_back(
            affine(tape, groups[g], params.group_fc[g].weight, params.group_fc[g].bias));
    auto joined = concat(tape, transformed);
    auto hidden = relu(tape, affine(tape, joined, params.attn1.weight, params.attn1.bias));
    auto scores = affine(tape, hidden, params.attn2.weight, params.attn2.bias);
    return scale(tape, softmax(tape, scores), S(4));
}

// Phi = cat(s_1*F_1, ..., s_4*F_4) in fixed group order.
template <typename S>
Tensor<S> weighted_concat(Tape<S>& tape, const std::array<Tensor<S>, 4>& groups,
                          const Tensor<S>& attention) {
    if (attention.rank() != 2 || attention.dim(1) != 4)
        throw DimensionError("weighted_concat: attention must be [N,4], got " +
                             shape_str(attention.shape()));
    std::vector<Tensor<S>> parts;
    parts.reserve(4);
    for (std::size_t g = 0; g < 4; ++g)
        parts.push_back(scale(tape, groups[g], slice_cols(tape, attention, g, 1)));
    return concat(tape, parts);
}

template <typename S>
Tensor<S> classify_logits(Tape<S>& tape, const ModelParams<S>& params, const Tensor<S>& phi) {
    return affine(tape, phi, params.classifier.weight, params.classifier.bias);
}

// Probability-ordered output: column 0 is p(osteoporosis), column 1 is
// p(normal). Exact ties resolve to Normal.
inline Label predict_label(double p_op, double p_nop) {
    return p_op > p_nop ? Label::Osteoporosis : Label::Normal;
}

struct Prediction {
    double p_op = 0;
    double p_nop = 0;
    Label label = Label::Normal;
    std::array<double, 4> attention{1, 1, 1, 1};
};

template <typename S>
struct ForwardResult {
    Tensor<S> logits;    // [N,2]
    Tensor<S> probs;     // [N,2]
    Tensor<S> attention; // [N,4]; all-ones in NoAttention mode
};

// Full pipeline. Attention mode: extract -> fuse -> attention -> weighted
// concat -> classify. NoAttention bypasses the per-group transforms and the
// attention head entirely and classifies the plain concatenation.
template <typename S>
ForwardResult<S> forward(Tape<S>& tape, const ModelParams<S>& params,
                         const std::vector<Tensor<S>>& patches, Mode mode) {
    auto features = extract_features(tape, params, patches);
    auto groups = fuse_groups(tape, features);

    ForwardResult<S> out;
    if (mode == Mode::Attention) {
        out.attention = attention_weights(tape, params, groups);
        auto phi = weighted_concat(tape, groups, out.attention);
        out.logits = classify_logits(tape, params, phi);
    } else {
        out.attention = Tensor<S>::full({patches[0].dim(0), 4}, S(1));
        std::vector<Tensor<S>> parts(groups.begin(), groups.end());
        out.logits = classify_logits(tape, params, concat(tape, parts));
    }
    out.probs = softmax(tape, out.logits);
    return out;
}

template <typename S>
std::vector<Prediction> predictions(const ForwardResult<S>& result) {
    const std::size_t n = result.probs.dim(0);
    std::vector<Prediction> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = out[i];
        p.p_op = static_cast<double>(result.probs.data()[i * 2]);
        p.p_nop = static_cast<double>(result.probs.data()[i * 2 + 1]);
        p.label = predict_label(p.p_op, p.p_nop);
        for (std::size_t g = 0; g < 4; ++g)
            p.attention[g] = static_cast<double>(result.attention.data()[i * 4 + g]);
    }
    return out;
}

// Batch conversion: one tensor of shape [n,1,side,side] per patch slot. The
// optional rng enables training-time augmentation, drawing per sample in
// patch order from a stream split per sample index.
template <typename S>
std::vector<Tensor<S>> batch_patches(const std::vector<const Sample*>& samples, int input_side,
                                     Philox* augment_rng = nullptr) {
    const std::size_t n = samples.size();
    const auto side = static_cast<std::size_t>(input_side);
    std::vector<Tensor<S>> slots;
    slots.reserve(8);
    for (std::size_t slot = 0; slot < 8; ++slot)
        slots.push_back(Tensor<S>::zeros({n, 1, side, side}));

    for (std::size_t i = 0; i < n; ++i) {
        Philox sample_rng = augment_rng ? augment_rng->split(i) : Philox(0);
        for (std::size_t slot = 0; slot < 8; ++slot) {
            const Image& base = samples[i]->patches[slot];
            if (base.width != side || base.height != side)
                throw DimensionError("batch: sample " + samples[i]->image_id + " patch side " +
                                     std::to_string(base.width) + " does not match input side " +
                                     std::to_string(side));
            const Image img = augment_rng ? augment(base, sample_rng) : base;
            S* dst = slots[slot].data().data() + i * side * side;
            for (std::size_t px = 0; px < side * side; ++px)
                dst[px] = static_cast<S>(img.pixels[px]);
        }
    }
    return slots;
}

inline std::vector<int> batch_labels(const std::vector<const Sample*>& samples) {
    std::vector<int> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out[i] = static_cast<int>(samples[i]->label);
    return out;
}

} // namespace osteo
