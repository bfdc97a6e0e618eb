#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace df {
class Rng;
}

namespace df::ad {

struct ShapeMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NonScalarLoss : std::logic_error {
    using std::logic_error::logic_error;
};
struct DisconnectedGraph : std::logic_error {
    using std::logic_error::logic_error;
};
struct DoubleBackward : std::logic_error {
    using std::logic_error::logic_error;
};

// Dense row-major float64 tensor. Gradient storage lives alongside the data
// and is only allocated for requires_grad tensors.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel() != std::int64_t(data.size()))
            throw ShapeMismatch("tensor: shape does not match data length");
    }

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(std::size_t(t.numel()), 0.0);
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int dim(int i) const { return shape.at(std::size_t(i)); }
    int ndim() const { return int(shape.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }
};

class Tape;

// One executed operation on the tape. Nodes keep whatever forward context
// their backward pass needs.
struct OpNode {
    std::vector<int> in;
    int out = -1;
    virtual ~OpNode() = default;
    virtual const char* name() const = 0;
    virtual void backward(Tape& t) = 0;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Names of every built-in differentiable op; the gradient test suite checks
// this list for coverage.
const std::vector<std::string>& builtin_op_names();

// Reverse-mode tape. Eager forward execution; backward() runs the recorded
// nodes in reverse. A tape constructed with record=false computes forward
// values only (inference mode).
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf referencing an external parameter; backward accumulates into
    // param.grad when param.requires_grad.
    Var leaf(Tensor& param);
    // On-tape constant (no gradient).
    Var value(Tensor v);

    const Tensor& val(Var v) const { return slot(v).value; }
    const std::vector<double>& grad(Var v) const { return slot(v).grad; }

    // ---- ops ----
    Var linear(Var x, Var W, Var b);                 // [n,in] x [in,out] + [out] -> [n,out]
    Var relu(Var x);
    Var sigmoid(Var x);
    Var clamp_min(Var x, double lo);
    Var concat(Var a, Var b, int axis);              // 2-D, axis 0 or 1
    Var mean_over_rows(Var x);                       // [n,d] -> [d]
    Var tile_rows(Var v, int n);                     // [d] -> [n,d]
    Var conv2d(Var x, Var k, int stride);            // [h,w,cin], [k,k,cin,cout] -> same-pad
    Var conv_bias(Var x, Var b);                     // [h,w,c] + [c]
    Var upsample_nearest(Var x, int factor);
    Var crop_spatial(Var x, int h, int w);           // top-left crop
    Var normalize_quaternion(Var x);                 // [n,4] row-wise unit norm
    Var gather_pixels(Var map, const std::vector<std::array<int, 2>>& rowcol);  // -> [P,c]
    Var select_rows(Var x, const std::vector<int>& rows);
    Var slice_cols(Var x, int c0, int c1);
    Var add(Var a, Var b);
    Var mul_const(Var x, Tensor w);
    Var scale(Var x, double s);
    Var sum_all(Var x);                              // -> scalar

    // Extension point for custom differentiable nodes (used by the loss
    // module). Takes ownership of the node; inputs/out must be filled by
    // this call.
    Var emplace(std::unique_ptr<OpNode> node, Tensor out_value, std::vector<int> inputs);

    void backward(Var loss);

    bool recording() const { return record_; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // internal access for OpNode::backward implementations
    struct Slot {
        Tensor value;
        std::vector<double> grad;
        Tensor* external = nullptr;
    };
    Slot& slot(Var v) {
        check(v);
        return slots_[std::size_t(v.id)];
    }
    const Slot& slot(Var v) const {
        check(v);
        return slots_[std::size_t(v.id)];
    }
    Slot& slot_by_id(int id) { return slots_[std::size_t(id)]; }
    void accumulate(int slot_id, const std::vector<double>& g);
    double* grad_ptr(int slot_id);
    const Tensor& value_of(int slot_id) const { return slots_[std::size_t(slot_id)].value; }

private:
    void check(Var v) const {
        if (v.id < 0 || std::size_t(v.id) >= slots_.size())
            throw DisconnectedGraph("variable does not belong to this tape");
    }
    Var push(Tensor value, Tensor* external = nullptr);

    std::vector<Slot> slots_;
    std::vector<std::unique_ptr<OpNode>> nodes_;
    bool record_ = true;
    bool backward_done_ = false;
};

// ---- optimizers ----

void sgd_step(const std::vector<Tensor*>& params, double lr);

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t t = 0;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->data.size(), 0.0);
            v.emplace_back(p->data.size(), 0.0);
        }
        t = 0;
    }
    bool initialized_for(const std::vector<Tensor*>& params) const {
        if (m.size() != params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (m[i].size() != params[i]->data.size()) return false;
        return true;
    }
};

void adam_step(const std::vector<Tensor*>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---- initialization ----

// Uniform in ±sqrt(6/(fan_in+fan_out)). Marks the tensor as trainable.
void glorot_init(Tensor& W, int fan_in, int fan_out, Rng& rng);

}  // namespace df::ad
