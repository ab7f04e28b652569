#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "osteo/error.hpp"

namespace osteo {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (const auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Backing store for one tensor value. Tensors are cheap handles onto this, so
// the handle a caller keeps and the handle an op recorded always agree on data
// and gradient content.
template <typename S>
struct TensorStorage {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad; // empty until backward touches this tensor
    bool requires_grad = false;
    long node_id = -1;            // identity on the tape that saw it last
    std::uint64_t tape_epoch = 0; // which tape generation node_id belongs to

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
};

// Value-semantics handle over shared storage. Copying a Tensor aliases its
// buffer; use clone() for a deep copy.
template <typename S>
class Tensor {
  public:
    using value_type = S;

    Tensor() : s_(std::make_shared<TensorStorage<S>>()) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(0), requires_grad);
    }

    static Tensor full(Shape shape, S value, bool requires_grad = false) {
        Tensor t;
        t.s_->data.assign(shape_numel(shape), value);
        t.s_->shape = std::move(shape);
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                                 std::to_string(data.size()) + " values");
        Tensor t;
        t.s_->shape = std::move(shape);
        t.s_->data = std::move(data);
        t.s_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    Tensor clone() const {
        Tensor t;
        t.s_->shape = s_->shape;
        t.s_->data = s_->data;
        t.s_->requires_grad = s_->requires_grad;
        return t;
    }

    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape[i]; }
    std::size_t numel() const { return s_->data.size(); }

    std::vector<S>& data() { return s_->data; }
    const std::vector<S>& data() const { return s_->data; }
    std::vector<S>& grad() { return s_->grad; }
    const std::vector<S>& grad() const { return s_->grad; }
    bool has_grad() const { return !s_->grad.empty(); }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool v) { s_->requires_grad = v; }

    long node_id() const { return s_->node_id; }
    const std::shared_ptr<TensorStorage<S>>& storage() const { return s_; }

    void zero_grad() {
        if (!s_->grad.empty()) s_->grad.assign(s_->data.size(), S(0));
    }

  private:
    std::shared_ptr<TensorStorage<S>> s_;
};

enum class OpKind {
    Conv2d,
    Relu,
    MaxPool2d,
    Affine,
    Softmax,
    CrossEntropy,
    Concat,
    Add,
    Mul,
    Scale,
    SliceCols,
    Reshape,
    Sum,
};

// Reverse-mode tape. Ops append nodes in execution order, which is already a
// topological order, so backward is a plain reverse sweep over the record.
// Single-writer: one training step owns its tape exclusively.
template <typename S>
class Tape {
  public:
    struct Node {
        OpKind kind;
        std::vector<long> inputs;
        long output;
        std::function<void()> backward;
    };

    Tape() { epoch_ = next_epoch(); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    void set_recording(bool v) { recording_ = v; }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    std::uint64_t epoch() const { return epoch_; }
    bool consumed() const { return consumed_; }

    void reset() {
        nodes_.clear();
        next_id_ = 0;
        consumed_ = false;
        epoch_ = next_epoch();
    }

    // Assigns this tape's node id to the tensor (idempotent per epoch).
    long register_tensor(const Tensor<S>& t) {
        auto& st = *t.storage();
        if (st.tape_epoch != epoch_) {
            st.tape_epoch = epoch_;
            st.node_id = next_id_++;
        }
        return st.node_id;
    }

    bool owns(const Tensor<S>& t) const {
        return t.storage()->tape_epoch == epoch_ && t.storage()->node_id >= 0;
    }

    // Records a node if recording is on and any input participates in
    // differentiation; otherwise the op result stays a plain value.
    void record(OpKind kind, std::initializer_list<Tensor<S>> inputs, Tensor<S>& output,
                std::function<void()> backward_fn) {
        record_range(kind, inputs.begin(), inputs.end(), output, std::move(backward_fn));
    }

    void record(OpKind kind, const std::vector<Tensor<S>>& inputs, Tensor<S>& output,
                std::function<void()> backward_fn) {
        record_range(kind, inputs.data(), inputs.data() + inputs.size(), output,
                     std::move(backward_fn));
    }

    void mark_consumed() { consumed_ = true; }

  private:
    void record_range(OpKind kind, const Tensor<S>* first, const Tensor<S>* last,
                      Tensor<S>& output, std::function<void()> backward_fn) {
        if (!recording_) return;
        bool needed = false;
        for (const Tensor<S>* it = first; it != last; ++it)
            needed = needed || it->requires_grad();
        if (!needed) return;

        Node node;
        node.kind = kind;
        node.inputs.reserve(static_cast<std::size_t>(last - first));
        for (const Tensor<S>* it = first; it != last; ++it)
            node.inputs.push_back(register_tensor(*it));
        output.set_requires_grad(true);
        node.output = register_tensor(output);
        node.backward = std::move(backward_fn);
        nodes_.push_back(std::move(node));
    }

    static std::uint64_t next_epoch() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::vector<Node> nodes_;
    long next_id_ = 0;
    std::uint64_t epoch_ = 0;
    bool recording_ = true;
    bool consumed_ = false;
};

// Seeds d(loss)/d(loss) = 1 and sweeps the tape in exact reverse recording
// order. Each requires_grad tensor reachable from the loss ends up holding
// its total derivative. A second sweep over the same record would silently
// double-count, so the tape must be reset before reuse.
template <typename S>
void backward(Tape<S>& tape, const Tensor<S>& loss) {
    if (tape.consumed())
        throw StateError("backward: tape already consumed, reset() before reusing it");
    if (tape.size() == 0) throw InputError("backward: tape is empty");
    if (loss.numel() != 1)
        throw InputError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!tape.owns(loss)) throw InputError("backward: loss was not produced on this tape");

    loss.storage()->ensure_grad();
    loss.storage()->grad[0] = S(1);
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) it->backward();
    tape.mark_consumed();
}

} // namespace osteo
