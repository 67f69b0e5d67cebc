#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sida/rng.hpp"

namespace sida {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int shape_numel(const Shape& s);

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of doubles with an optional gradient buffer.
// Tensor is a cheap value handle; copies alias the same storage. Gradients
// are accumulated by Tape::backward and read back through grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // Entries ~ N(0, stddev^2), drawn from the caller's generator.
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return d_ != nullptr; }
    const Shape& shape() const { return d().shape; }
    int numel() const { return static_cast<int>(d().value.size()); }
    int ndim() const { return static_cast<int>(d().shape.size()); }
    // 2-D conveniences; throw on other ranks.
    int rows() const;
    int cols() const;

    std::vector<double>& values() { return d().value; }
    const std::vector<double>& values() const { return d().value; }
    double& at(int i) { return d().value.at(i); }
    double at(int i) const { return d().value.at(i); }
    double& at(int i, int j);
    double at(int i, int j) const;
    // Scalar extraction; throws unless numel() == 1.
    double value() const;

    bool requires_grad() const { return d().requires_grad; }
    void set_requires_grad(bool v) { d().requires_grad = v; }

    bool has_grad() const { return defined() && !d().grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();
    // Allocate (zeroed) gradient storage if absent.
    void ensure_grad();

    // Deep copy of values (and requires_grad flag); no grad, no history.
    Tensor clone() const;

    // Stable identity of the underlying storage.
    const void* id() const { return d_.get(); }

private:
    struct Data {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // empty until needed
        bool requires_grad = false;
    };
    std::shared_ptr<Data> d_;

    Data& d();
    const Data& d() const;
    friend class Tape;
};

// Recording tape for reverse-mode differentiation. Ops append one node per
// primitive in forward order; backward() replays the nodes in exact reverse
// order, accumulating gradients additively into every operand. A tape is
// single-threaded; independent tapes may run concurrently.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise binary ops. Operands must have identical shapes, or either
    // side may be a 1-element scalar tensor. No other broadcasting.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor div(const Tensor& a, const Tensor& b);

    Tensor scale(const Tensor& a, double c);
    Tensor add_scalar(const Tensor& a, double c);
    Tensor neg(const Tensor& a) { return scale(a, -1.0); }

    // m: [r x c], v: [c]; adds v to every row of m.
    Tensor add_rowvec(const Tensor& m, const Tensor& v);

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);
    Tensor reshape(const Tensor& a, Shape shape);

    // Numerically stable (max-subtracted); slices along `axis` sum to 1.
    Tensor softmax(const Tensor& a, int axis);
    Tensor log_softmax(const Tensor& a, int axis);

    Tensor sigmoid(const Tensor& a);
    Tensor gelu(const Tensor& a);  // tanh approximation
    Tensor log(const Tensor& a);
    Tensor clamp(const Tensor& a, double lo, double hi);

    // Normalizes the last axis; eps = 1e-5. gain/bias have the last-axis extent.
    Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias);

    Tensor mean(const Tensor& a);  // -> [1]
    Tensor sum(const Tensor& a);   // -> [1]

    // table: [v x d]; returns [ids.size() x d]. Backward scatter-adds, so a
    // row used twice receives both contributions.
    Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
    // x: [t x v], ids: [t]; returns [t] with out[i] = x[i, ids[i]].
    Tensor take_per_row(const Tensor& x, const std::vector<int>& ids);
    Tensor slice_cols(const Tensor& x, int start, int len);
    Tensor concat_rows(const Tensor& a, const Tensor& b);
    Tensor concat_cols(const Tensor& a, const Tensor& b);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be
    // a 1-element tensor produced by ops recorded on this tape.
    void backward(const Tensor& loss);

private:
    struct Node {
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool recording_;

    // Records `fn` if the tape is recording and any input requires grad;
    // marks the output as requiring grad in that case.
    void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                std::function<void()> fn);
};

// Central finite differences: perturbs x in place coordinate by coordinate
// and re-evaluates f. Independent of the tape machinery by construction.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor x, double eps);

// Same, but only for the given flat coordinates (for large parameters).
std::vector<double> finite_diff_grad_at(const std::function<double()>& f, Tensor x, double eps,
                                        const std::vector<int>& coords);

// max over i of |analytic_i - fd_i| / max(1, |fd_i|).
double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& fd);

}  // namespace sida
