#include "sida/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sida {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int shape_numel(const Shape& s) {
    int n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Data& Tensor::d() {
    if (!d_) throw std::runtime_error("use of undefined tensor");
    return *d_;
}

const Tensor::Data& Tensor::d() const {
    if (!d_) throw std::runtime_error("use of undefined tensor");
    return *d_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int>(data.size())) {
        throw ShapeError("shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(data);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.normal() * stddev;
    return from(std::move(shape), std::move(data), requires_grad);
}

int Tensor::rows() const {
    if (ndim() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape()));
    return shape()[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape()));
    return shape()[1];
}

double& Tensor::at(int i, int j) { return d().value.at(static_cast<std::size_t>(i) * cols() + j); }
double Tensor::at(int i, int j) const {
    return d().value.at(static_cast<std::size_t>(i) * cols() + j);
}

double Tensor::value() const {
    if (numel() != 1) throw ShapeError("value() requires a scalar, got " + shape_str(shape()));
    return d().value[0];
}

std::vector<double>& Tensor::grad() {
    if (!has_grad()) throw std::runtime_error("tensor has no gradient");
    return d().grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::runtime_error("tensor has no gradient");
    return d().grad;
}

void Tensor::zero_grad() {
    if (defined() && !d().grad.empty()) std::fill(d().grad.begin(), d().grad.end(), 0.0);
}

void Tensor::ensure_grad() {
    if (d().grad.empty()) d().grad.assign(d().value.size(), 0.0);
}

Tensor Tensor::clone() const {
    return from(shape(), values(), requires_grad());
}

// ---------------------------------------------------------------------------
// Tape helpers

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

// Accumulate g into t's grad buffer; with broadcast_sum the 1-element operand
// receives the sum of all positions.
void accum(Tensor& t, const std::vector<double>& g) {
    t.ensure_grad();
    auto& dst = t.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

void Tape::record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                  std::function<void()> fn) {
    bool needs = false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) needs = true;
    }
    if (!recording_ || !needs) return;
    out.set_requires_grad(true);
    nodes_.push_back(Node{std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_scalar(a) && !is_scalar(b)) check_same_shape("add", a, b);
    const bool sa = is_scalar(a) && a.shape() != b.shape();
    const bool sb = is_scalar(b) && a.shape() != b.shape();
    const Tensor& big = sa ? b : a;
    std::vector<double> out(big.numel());
    for (int i = 0; i < big.numel(); ++i) {
        out[i] = (sa ? a.at(0) : a.at(i)) + (sb ? b.at(0) : b.at(i));
    }
    Tensor c = Tensor::from(big.shape(), std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, sa, sb]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            if (sa) {
                for (double gi : g) a.grad()[0] += gi;
            } else {
                accum(a, g);
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            if (sb) {
                for (double gi : g) b.grad()[0] += gi;
            } else {
                accum(b, g);
            }
        }
    });
    return c;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_scalar(a) && !is_scalar(b)) check_same_shape("sub", a, b);
    const bool sa = is_scalar(a) && a.shape() != b.shape();
    const bool sb = is_scalar(b) && a.shape() != b.shape();
    const Tensor& big = sa ? b : a;
    std::vector<double> out(big.numel());
    for (int i = 0; i < big.numel(); ++i) {
        out[i] = (sa ? a.at(0) : a.at(i)) - (sb ? b.at(0) : b.at(i));
    }
    Tensor c = Tensor::from(big.shape(), std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, sa, sb]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            if (sa) {
                for (double gi : g) a.grad()[0] += gi;
            } else {
                accum(a, g);
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            if (sb) {
                for (double gi : g) b.grad()[0] -= gi;
            } else {
                auto& dst = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
            }
        }
    });
    return c;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_scalar(a) && !is_scalar(b)) check_same_shape("mul", a, b);
    const bool sa = is_scalar(a) && a.shape() != b.shape();
    const bool sb = is_scalar(b) && a.shape() != b.shape();
    const Tensor& big = sa ? b : a;
    std::vector<double> out(big.numel());
    for (int i = 0; i < big.numel(); ++i) {
        out[i] = (sa ? a.at(0) : a.at(i)) * (sb ? b.at(0) : b.at(i));
    }
    Tensor c = Tensor::from(big.shape(), std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, sa, sb]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        const int n = static_cast<int>(g.size());
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < n; ++i) {
                double gi = g[i] * (sb ? b.at(0) : b.at(i));
                a.grad()[sa ? 0 : i] += gi;
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < n; ++i) {
                double gi = g[i] * (sa ? a.at(0) : a.at(i));
                b.grad()[sb ? 0 : i] += gi;
            }
        }
    });
    return c;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_scalar(a) && !is_scalar(b)) check_same_shape("div", a, b);
    const bool sa = is_scalar(a) && a.shape() != b.shape();
    const bool sb = is_scalar(b) && a.shape() != b.shape();
    const Tensor& big = sa ? b : a;
    std::vector<double> out(big.numel());
    for (int i = 0; i < big.numel(); ++i) {
        out[i] = (sa ? a.at(0) : a.at(i)) / (sb ? b.at(0) : b.at(i));
    }
    Tensor c = Tensor::from(big.shape(), std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, sa, sb]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        const int n = static_cast<int>(g.size());
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < n; ++i) {
                a.grad()[sa ? 0 : i] += g[i] / (sb ? b.at(0) : b.at(i));
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < n; ++i) {
                double bv = sb ? b.at(0) : b.at(i);
                double av = sa ? a.at(0) : a.at(i);
                b.grad()[sb ? 0 : i] += -g[i] * av / (bv * bv);
            }
        }
    });
    return c;
}

Tensor Tape::scale(const Tensor& a, double cst) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) out[i] = a.at(i) * cst;
    Tensor c = Tensor::from(a.shape(), std::move(out));
    record(c, {&a}, [a = a, c, cst]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += cst * g[i];
    });
    return c;
}

Tensor Tape::add_scalar(const Tensor& a, double cst) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) out[i] = a.at(i) + cst;
    Tensor c = Tensor::from(a.shape(), std::move(out));
    record(c, {&a}, [a = a, c]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        accum(a, c.grad());
    });
    return c;
}

Tensor Tape::add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.ndim() != 1 || v.shape()[0] != m.cols()) {
        throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
    }
    const int r = m.rows(), c = m.cols();
    std::vector<double> out(m.numel());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) + v.at(j);
    }
    Tensor o = Tensor::from(m.shape(), std::move(out));
    record(o, {&m, &v}, [m = m, v = v, o, r, c]() mutable {
        if (!o.has_grad()) return;
        const auto& g = o.grad();
        if (m.requires_grad()) accum(m, g);
        if (v.requires_grad()) {
            v.ensure_grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) v.grad()[j] += g[i * c + j];
            }
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// Matrix ops

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            const std::size_t crow = static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[crow + j] += aip * bv[brow + j];
        }
    }
    Tensor c = Tensor::from({m, n}, std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, m, k, n]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            auto& ga = a.grad();
            const auto& bv = b.values();
            // dA = g . B^T
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) {
                        s += g[static_cast<std::size_t>(i) * n + j] *
                             bv[static_cast<std::size_t>(p) * n + j];
                    }
                    ga[static_cast<std::size_t>(i) * k + p] += s;
                }
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            auto& gb = b.grad();
            const auto& av = a.values();
            // dB = A^T . g
            for (int p = 0; p < k; ++p) {
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) {
                        s += av[static_cast<std::size_t>(i) * k + p] *
                             g[static_cast<std::size_t>(i) * n + j];
                    }
                    gb[static_cast<std::size_t>(p) * n + j] += s;
                }
            }
        }
    });
    return c;
}

Tensor Tape::transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: need matrix, got " + shape_str(a.shape()));
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(a.numel());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
    }
    Tensor t = Tensor::from({c, r}, std::move(out));
    record(t, {&a}, [a = a, t, r, c]() mutable {
        if (!t.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = t.grad();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                a.grad()[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
            }
        }
    });
    return t;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    }
    Tensor c = Tensor::from(std::move(shape), a.values());
    record(c, {&a}, [a = a, c]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        accum(a, c.grad());
    });
    return c;
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

struct AxisIter {
    // Iterates all slices along `axis` of `shape`: outer runs over the
    // product of the other extents; stride steps within a slice.
    int extent;
    std::size_t stride;
    std::vector<std::size_t> bases;

    AxisIter(const Shape& shape, int axis) {
        if (axis < 0 || axis >= static_cast<int>(shape.size())) {
            throw ShapeError("axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
        }
        extent = shape[axis];
        stride = 1;
        for (std::size_t d = axis + 1; d < shape.size(); ++d) stride *= shape[d];
        std::size_t outer = 1;
        for (std::size_t d = 0; d < shape.size(); ++d) {
            if (static_cast<int>(d) != axis) outer *= shape[d];
        }
        bases.reserve(outer);
        std::size_t inner = stride;                    // positions below axis
        std::size_t block = stride * extent;           // one full axis block
        std::size_t total = block;
        for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) total *= shape[d];
        for (std::size_t hi = 0; hi < total / block; ++hi) {
            for (std::size_t lo = 0; lo < inner; ++lo) bases.push_back(hi * block + lo);
        }
    }
};

}  // namespace

Tensor Tape::softmax(const Tensor& a, int axis) {
    AxisIter it(a.shape(), axis);
    std::vector<double> out(a.numel());
    const auto& x = a.values();
    for (std::size_t base : it.bases) {
        double mx = x[base];
        for (int k = 1; k < it.extent; ++k) mx = std::max(mx, x[base + k * it.stride]);
        double denom = 0.0;
        for (int k = 0; k < it.extent; ++k) {
            double e = std::exp(x[base + k * it.stride] - mx);
            out[base + k * it.stride] = e;
            denom += e;
        }
        for (int k = 0; k < it.extent; ++k) out[base + k * it.stride] /= denom;
    }
    Tensor s = Tensor::from(a.shape(), std::move(out));
    record(s, {&a}, [a = a, s, it]() mutable {
        if (!s.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = s.grad();
        const auto& sv = s.values();
        for (std::size_t base : it.bases) {
            double dot = 0.0;
            for (int k = 0; k < it.extent; ++k) {
                std::size_t p = base + k * it.stride;
                dot += g[p] * sv[p];
            }
            for (int k = 0; k < it.extent; ++k) {
                std::size_t p = base + k * it.stride;
                a.grad()[p] += sv[p] * (g[p] - dot);
            }
        }
    });
    return s;
}

Tensor Tape::log_softmax(const Tensor& a, int axis) {
    AxisIter it(a.shape(), axis);
    std::vector<double> out(a.numel());
    const auto& x = a.values();
    for (std::size_t base : it.bases) {
        double mx = x[base];
        for (int k = 1; k < it.extent; ++k) mx = std::max(mx, x[base + k * it.stride]);
        double denom = 0.0;
        for (int k = 0; k < it.extent; ++k) denom += std::exp(x[base + k * it.stride] - mx);
        double lse = mx + std::log(denom);
        for (int k = 0; k < it.extent; ++k) {
            out[base + k * it.stride] = x[base + k * it.stride] - lse;
        }
    }
    Tensor l = Tensor::from(a.shape(), std::move(out));
    record(l, {&a}, [a = a, l, it]() mutable {
        if (!l.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = l.grad();
        const auto& lv = l.values();
        for (std::size_t base : it.bases) {
            double gsum = 0.0;
            for (int k = 0; k < it.extent; ++k) gsum += g[base + k * it.stride];
            for (int k = 0; k < it.extent; ++k) {
                std::size_t p = base + k * it.stride;
                a.grad()[p] += g[p] - std::exp(lv[p]) * gsum;
            }
        }
    });
    return l;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

Tensor Tape::sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) {
        double x = a.at(i);
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    Tensor s = Tensor::from(a.shape(), std::move(out));
    record(s, {&a}, [a = a, s]() mutable {
        if (!s.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = s.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double sv = s.at(static_cast<int>(i));
            a.grad()[i] += g[i] * sv * (1.0 - sv);
        }
    });
    return s;
}

namespace {
constexpr double kGeluC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor Tape::gelu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) {
        double x = a.at(i);
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
    }
    Tensor c = Tensor::from(a.shape(), std::move(out));
    record(c, {&a}, [a = a, c]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = a.at(static_cast<int>(i));
            double u = kGeluC * (x + kGeluA * x * x * x);
            double t = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            a.grad()[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
        }
    });
    return c;
}

Tensor Tape::log(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) out[i] = std::log(a.at(i));
    Tensor c = Tensor::from(a.shape(), std::move(out));
    record(c, {&a}, [a = a, c]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] / a.at(static_cast<int>(i));
    });
    return c;
}

Tensor Tape::clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.numel());
    for (int i = 0; i < a.numel(); ++i) out[i] = std::min(hi, std::max(lo, a.at(i)));
    Tensor c = Tensor::from(a.shape(), std::move(out));
    record(c, {&a}, [a = a, c, lo, hi]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double x = a.at(static_cast<int>(i));
            if (x >= lo && x <= hi) a.grad()[i] += g[i];
        }
    });
    return c;
}

// ---------------------------------------------------------------------------
// Layernorm

Tensor Tape::layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    constexpr double kEps = 1e-5;
    if (a.ndim() < 1) throw ShapeError("layernorm: rank-0 input");
    const int n = a.shape().back();
    if (gain.numel() != n || bias.numel() != n) {
        throw ShapeError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs last axis " + std::to_string(n));
    }
    const int rows = a.numel() / n;
    std::vector<double> out(a.numel());
    std::vector<double> xhat(a.numel());
    std::vector<double> inv_sd(rows);
    for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += a.at(static_cast<int>(off) + j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double dv = a.at(static_cast<int>(off) + j) - mu;
            var += dv * dv;
        }
        var /= n;
        inv_sd[r] = 1.0 / std::sqrt(var + kEps);
        for (int j = 0; j < n; ++j) {
            double xh = (a.at(static_cast<int>(off) + j) - mu) * inv_sd[r];
            xhat[off + j] = xh;
            out[off + j] = gain.at(j) * xh + bias.at(j);
        }
    }
    Tensor c = Tensor::from(a.shape(), std::move(out));
    auto xhat_p = std::make_shared<std::vector<double>>(std::move(xhat));
    auto inv_p = std::make_shared<std::vector<double>>(std::move(inv_sd));
    record(c, {&a, &gain, &bias}, [a = a, gain = gain, bias = bias, c, n, rows, xhat_p, inv_p]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        const auto& xh = *xhat_p;
        if (gain.requires_grad()) {
            gain.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < n; ++j) {
                    gain.grad()[j] += g[static_cast<std::size_t>(r) * n + j] * xh[static_cast<std::size_t>(r) * n + j];
                }
            }
        }
        if (bias.requires_grad()) {
            bias.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                for (int j = 0; j < n; ++j) bias.grad()[j] += g[static_cast<std::size_t>(r) * n + j];
            }
        }
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const std::size_t off = static_cast<std::size_t>(r) * n;
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < n; ++j) {
                    double dxh = g[off + j] * gain.at(j);
                    m1 += dxh;
                    m2 += dxh * xh[off + j];
                }
                m1 /= n;
                m2 /= n;
                for (int j = 0; j < n; ++j) {
                    double dxh = g[off + j] * gain.at(j);
                    a.grad()[off + j] += (*inv_p)[r] * (dxh - m1 - xh[off + j] * m2);
                }
            }
        }
    });
    return c;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Tape::mean(const Tensor& a) {
    double s = 0.0;
    for (int i = 0; i < a.numel(); ++i) s += a.at(i);
    const int n = a.numel();
    Tensor c = Tensor::scalar(s / n);
    record(c, {&a}, [a = a, c, n]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        double g = c.grad()[0] / n;
        for (auto& v : a.grad()) v += g;
    });
    return c;
}

Tensor Tape::sum(const Tensor& a) {
    double s = 0.0;
    for (int i = 0; i < a.numel(); ++i) s += a.at(i);
    Tensor c = Tensor::scalar(s);
    record(c, {&a}, [a = a, c]() mutable {
        if (!c.has_grad() || !a.requires_grad()) return;
        a.ensure_grad();
        double g = c.grad()[0];
        for (auto& v : a.grad()) v += g;
    });
    return c;
}

// ---------------------------------------------------------------------------
// Gather / scatter and layout ops

Tensor Tape::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) {
        throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
    }
    const int v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
    }
    const int k = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(k) * d);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = table.at(ids[i], j);
    }
    Tensor c = Tensor::from({k, d}, std::move(out));
    record(c, {&table}, [table = table, c, ids, d]() mutable {
        if (!c.has_grad() || !table.requires_grad()) return;
        table.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (int j = 0; j < d; ++j) {
                table.grad()[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
            }
        }
    });
    return c;
}

Tensor Tape::take_per_row(const Tensor& x, const std::vector<int>& ids) {
    if (x.ndim() != 2 || static_cast<int>(ids.size()) != x.rows()) {
        throw ShapeError("take_per_row: " + shape_str(x.shape()) + " with " +
                         std::to_string(ids.size()) + " indices");
    }
    const int t = x.rows(), v = x.cols();
    std::vector<double> out(t);
    for (int i = 0; i < t; ++i) {
        if (ids[i] < 0 || ids[i] >= v) {
            throw ShapeError("take_per_row: column " + std::to_string(ids[i]) + " out of range");
        }
        out[i] = x.at(i, ids[i]);
    }
    Tensor c = Tensor::from({t}, std::move(out));
    record(c, {&x}, [x = x, c, ids, v]() mutable {
        if (!c.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const auto& g = c.grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            x.grad()[i * v + ids[i]] += g[i];
        }
    });
    return c;
}

Tensor Tape::slice_cols(const Tensor& x, int start, int len) {
    if (x.ndim() != 2 || start < 0 || len <= 0 || start + len > x.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") of " + shape_str(x.shape()));
    }
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(static_cast<std::size_t>(r) * len);
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < len; ++j) out[static_cast<std::size_t>(i) * len + j] = x.at(i, start + j);
    }
    Tensor o = Tensor::from({r, len}, std::move(out));
    record(o, {&x}, [x = x, o, start, len, r, c]() mutable {
        if (!o.has_grad() || !x.requires_grad()) return;
        x.ensure_grad();
        const auto& g = o.grad();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < len; ++j) {
                x.grad()[static_cast<std::size_t>(i) * c + start + j] += g[static_cast<std::size_t>(i) * len + j];
            }
        }
    });
    return o;
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    Tensor c = Tensor::from({a.rows() + b.rows(), a.cols()}, std::move(out));
    const int na = a.numel();
    record(c, {&a, &b}, [a = a, b = b, c, na]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < na; ++i) a.grad()[i] += g[i];
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (std::size_t i = na; i < g.size(); ++i) b.grad()[i - na] += g[i];
        }
    });
    return c;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows()) {
        throw ShapeError("concat_cols: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(static_cast<std::size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) out[static_cast<std::size_t>(i) * (ca + cb) + j] = a.at(i, j);
        for (int j = 0; j < cb; ++j) out[static_cast<std::size_t>(i) * (ca + cb) + ca + j] = b.at(i, j);
    }
    Tensor c = Tensor::from({r, ca + cb}, std::move(out));
    record(c, {&a, &b}, [a = a, b = b, c, r, ca, cb]() mutable {
        if (!c.has_grad()) return;
        const auto& g = c.grad();
        if (a.requires_grad()) {
            a.ensure_grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < ca; ++j) {
                    a.grad()[static_cast<std::size_t>(i) * ca + j] += g[static_cast<std::size_t>(i) * (ca + cb) + j];
                }
            }
        }
        if (b.requires_grad()) {
            b.ensure_grad();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < cb; ++j) {
                    b.grad()[static_cast<std::size_t>(i) * cb + j] +=
                        g[static_cast<std::size_t>(i) * (ca + cb) + ca + j];
                }
            }
        }
    });
    return c;
}

// ---------------------------------------------------------------------------
// Finite differences

Tensor finite_diff_grad(const std::function<double()>& f, Tensor x, double eps) {
    if (eps <= 0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    std::vector<double> g(x.numel());
    auto& v = x.values();
    for (int i = 0; i < x.numel(); ++i) {
        const double orig = v[i];
        v[i] = orig + eps;
        const double fp = f();
        v[i] = orig - eps;
        const double fm = f();
        v[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return Tensor::from(x.shape(), std::move(g));
}

std::vector<double> finite_diff_grad_at(const std::function<double()>& f, Tensor x, double eps,
                                        const std::vector<int>& coords) {
    if (eps <= 0) throw std::invalid_argument("finite_diff_grad_at: eps must be positive");
    std::vector<double> g;
    g.reserve(coords.size());
    auto& v = x.values();
    for (int i : coords) {
        const double orig = v.at(i);
        v[i] = orig + eps;
        const double fp = f();
        v[i] = orig - eps;
        const double fm = f();
        v[i] = orig;
        g.push_back((fp - fm) / (2.0 * eps));
    }
    return g;
}

double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& fd) {
    if (analytic.size() != fd.size()) {
        throw std::invalid_argument("max_rel_error: length mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        double denom = std::max(1.0, std::abs(fd[i]));
        worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

}  // namespace sida
