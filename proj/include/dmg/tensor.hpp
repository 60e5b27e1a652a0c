#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmg/common.hpp"

namespace dmg {

// Dense row-major value, detached from any tape.
template <typename T>
struct Array {
    Shape shape;
    std::vector<T> data;

    Array() = default;
    explicit Array(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), T(0)) {}
    Array(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            fail("Array: data length ", data.size(), " does not match shape ", shape_str(shape));
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }

    template <typename U>
    Array<U> cast() const {
        Array<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// Handle to a tape node.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Eager define-by-run tape with reverse-mode differentiation. Forward values
// are computed at op-creation time into a bump arena that persists across
// reset() calls; backward visits nodes reachable from the loss exactly once
// in reverse creation order.
//
// Single-threaded per tape (kernels may parallelize internally); independent
// tapes can run concurrently.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- graph entry -----------------------------------------------------
    Var leaf(const Array<T>& value, bool requires_grad = false);
    Var zeros(const Shape& shape, bool requires_grad = false);

    // ---- op catalogue ----------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var smul(Var a, T s);
    Var add_scalar(Var a, T s);
    Var exp(Var a);
    Var log(Var a);
    Var sqrt(Var a);
    Var matmul(Var a, Var b);                    // [M,K] @ [K,N]
    Var linear(Var x, Var w, Var b);             // x @ w + row-broadcast bias
    Var linear(Var x, Var w);
    Var bmm(Var a, Var b);                       // [B,M,K] @ [B,K,N]
    Var transpose(Var a);                        // 2-D
    Var permute(Var a, const std::vector<int>& perm);
    Var reshape(Var a, const Shape& shape);
    Var slice(Var a, int axis, int start, int len);
    Var concat(std::span<const Var> parts, int axis);
    Var sum(Var a);                              // -> scalar [1]
    Var mean(Var a);                             // -> scalar [1]
    Var mean_axis(Var a, int axis);
    Var softmax(Var a);                          // over last axis
    Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5));
    Var gelu(Var a);                             // tanh approximation
    Var mse(Var a, Var b);                       // mean squared error -> scalar
    Var smooth_l1(Var a, Var b, T beta = T(1));  // -> scalar
    Var embed(const std::vector<int>& ids, Var table);
    Var timestep_embed(std::span<const int64_t> ts, int dim); // constant
    Var cross_entropy_rows(Var logits, const std::vector<int>& targets); // -> scalar
    Var repeat_interleave_rows(Var v, int times); // [B,D] -> [B*times,D]
    Var tile_rows(Var m, int times);              // [R,C] -> [times*R,C]
    Var scale_rows(Var x, Var s);                 // y[r,c] = x[r,c] * s[r]
    Var im2col(Var x, int kernel, int stride, int pad); // [B,L,C] -> [B,Lout,k*C]
    Var upsample2(Var x);                         // [B,L,C] -> [B,2L,C]

    // ---- differentiation -------------------------------------------------
    void backward(Var loss);

    // ---- access ----------------------------------------------------------
    // By value: node storage reallocates as ops are added, so handing out
    // references into it would dangle across op creation.
    Shape shape(Var v) const { return node(v).shape; }
    std::span<const T> val(Var v) const;
    std::span<T> val_mut(Var v);
    std::span<const T> grad(Var v) const;
    Array<T> val_array(Var v) const;
    Array<T> grad_array(Var v) const;
    T scalar(Var v) const;

    // Clears nodes, keeps arena capacity.
    void reset();

    size_t num_nodes() const { return nodes_.size(); }

    // Per-op output finite checks (contract checks in tests; off by default
    // in the training hot loop, leaves are always validated).
    void set_debug_finite_checks(bool on) { debug_finite_ = on; }

private:
    struct Node {
        Shape shape;
        size_t off = 0;
        int64_t n = 0;
        bool needs_grad = false;
        std::function<void()> back; // empty for leaves / non-differentiable
        std::vector<int> inputs;
    };

    std::vector<Node> nodes_;
    std::vector<T> vals_;
    std::vector<T> grads_;
    std::vector<std::vector<T>> saved_; // per-node saved forward context
    bool debug_finite_ = false;

    const Node& node(Var v) const;
    Node& node(Var v);
    int new_node(Shape shape, std::span<const Var> inputs, const char* op);
    T* vptr(int id) { return vals_.data() + nodes_[static_cast<size_t>(id)].off; }
    const T* vptr(int id) const { return vals_.data() + nodes_[static_cast<size_t>(id)].off; }
    T* gptr(int id) { return grads_.data() + nodes_[static_cast<size_t>(id)].off; }
    void check_same_shape(const char* op, Var a, Var b) const;
    void maybe_check_finite(const char* op, int id) const;

    // elementwise helper
    template <typename FwdFn, typename BwdFn>
    Var unary_ew(const char* op, Var a, FwdFn fwd, BwdFn dfdx);
};

extern template class Tape<f32>;
extern template class Tape<f64>;

} // namespace dmg
