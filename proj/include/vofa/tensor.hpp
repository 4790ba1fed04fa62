#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vofa {

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major n-d array. Copies share the underlying buffer; no primitive
// mutates its inputs, so sharing is safe. `node`/`owner` link a tensor to the
// tape that produced (or registered) it.
template <class R>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<R>> data;
    bool requires_grad = false;
    int node = -1;
    const void* owner = nullptr;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)) {
        data = std::make_shared<std::vector<R>>(static_cast<size_t>(shape_numel(shape)), R(0));
    }
    Tensor(Shape s, std::vector<R> values) : shape(std::move(s)) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape))
            throw TensorError("tensor data size " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(shape));
        data = std::make_shared<std::vector<R>>(std::move(values));
    }

    static Tensor scalar(R v) { return Tensor(Shape{}, std::vector<R>{v}); }
    static Tensor full(Shape s, R v) {
        Tensor t(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool defined() const { return static_cast<bool>(data); }

    R* ptr() { return data->data(); }
    const R* ptr() const { return data->data(); }

    R& operator()(int i) { return (*data)[static_cast<size_t>(i)]; }
    R operator()(int i) const { return (*data)[static_cast<size_t>(i)]; }
    R& operator()(int i, int j) { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }
    R operator()(int i, int j) const { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }

    R item() const {
        if (numel() != 1) throw TensorError("item() on tensor with " + std::to_string(numel()) + " elements");
        return (*data)[0];
    }

    Tensor& set_requires_grad(bool v = true) {
        requires_grad = v;
        return *this;
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        if (data) t.data = std::make_shared<std::vector<R>>(*data);
        t.requires_grad = requires_grad;
        return t;
    }
};

enum class OpKind {
    matmul,
    add,
    mul,
    concat,
    slice,
    transpose,
    embedding_gather,
    softmax,
    layer_norm,
    gelu,
    scale,
    masked_fill,
    cross_entropy_from_logits,
    sum,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::transpose: return "transpose";
        case OpKind::embedding_gather: return "embedding_gather";
        case OpKind::softmax: return "softmax";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::gelu: return "gelu";
        case OpKind::scale: return "scale";
        case OpKind::masked_fill: return "masked_fill";
        case OpKind::cross_entropy_from_logits: return "cross_entropy_from_logits";
        case OpKind::sum: return "sum";
    }
    return "?";
}

// Static (non-differentiable) arguments of a primitive.
struct Attrs {
    int axis = -1;                       // concat, slice, softmax
    int start = 0;                       // slice
    int len = 0;                         // slice
    double scalar = 1.0;                 // scale
    double eps = 1e-5;                   // layer_norm
    int ignore_index = -1;               // cross_entropy_from_logits
    std::vector<int> indices;            // embedding_gather ids / cross-entropy targets
    std::shared_ptr<const std::vector<uint8_t>> mask;  // masked_fill: nonzero = fill
    double fill = -1e9;                  // masked_fill value (finite stand-in for -inf)
};

namespace detail {

[[noreturn]] inline void shape_error(OpKind kind, const std::string& msg) {
    throw TensorError(std::string(op_name(kind)) + ": " + msg);
}

// C[m,n] += A[m,k] * B[k,n]; ikj loop order keeps the inner loop contiguous.
template <class R>
void matmul_acc(const R* a, const R* b, R* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R* arow = a + static_cast<size_t>(i) * k;
        R* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const R av = arow[p];
            if (av == R(0)) continue;
            const R* brow = b + static_cast<size_t>(p) * n;
            for (int x = 0; x < n; ++x) crow[x] += av * brow[x];
        }
    }
}

// C[m,n] += A[m,k] * B^T where Bt is [n,k]
template <class R>
void matmul_bt_acc(const R* a, const R* bt, R* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R* arow = a + static_cast<size_t>(i) * k;
        R* crow = c + static_cast<size_t>(i) * n;
        for (int x = 0; x < n; ++x) {
            const R* brow = bt + static_cast<size_t>(x) * k;
            R acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[x] += acc;
        }
    }
}

// C[k,n] += A^T[k,m] * B[m,n] given A as [m,k]
template <class R>
void matmul_at_acc(const R* a, const R* b, R* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const R* arow = a + static_cast<size_t>(i) * k;
        const R* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const R av = arow[p];
            if (av == R(0)) continue;
            R* crow = c + static_cast<size_t>(p) * n;
            for (int x = 0; x < n; ++x) crow[x] += av * brow[x];
        }
    }
}

// Decompose `shape` around `axis` as [outer, n, inner].
inline void axis_split(const Shape& shape, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    n = shape[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

template <class R>
R gelu_fwd(R x) {
    return R(0.5) * x * (R(1) + std::erf(x * R(std::numbers::sqrt2 / 2.0)));
}

template <class R>
R gelu_bwd(R x) {
    const R cdf = R(0.5) * (R(1) + std::erf(x * R(std::numbers::sqrt2 / 2.0)));
    const R pdf = std::exp(R(-0.5) * x * x) * R(1.0 / std::sqrt(2.0 * std::numbers::pi));
    return cdf + x * pdf;
}

}  // namespace detail

// Records primitive applications so a scalar loss can be backpropagated.
// Nodes are appended in execution order, which is already topological.
template <class R>
class Tape {
public:
    struct Node {
        OpKind kind = OpKind::add;
        Attrs attrs;
        std::vector<int> inputs;
        Shape shape;
        std::shared_ptr<std::vector<R>> value;
        bool requires_grad = false;
        bool leaf = false;
    };

    std::vector<Node> nodes;

    // Registers `t` as a leaf (idempotent per buffer) and returns its node id.
    int leaf(const Tensor<R>& t) {
        if (t.owner == this && t.node >= 0) return t.node;
        auto it = leaf_by_buffer_.find(t.data.get());
        if (it != leaf_by_buffer_.end()) return it->second;
        Node n;
        n.shape = t.shape;
        n.value = t.data;
        n.requires_grad = t.requires_grad;
        n.leaf = true;
        nodes.push_back(std::move(n));
        int id = static_cast<int>(nodes.size()) - 1;
        leaf_by_buffer_.emplace(t.data.get(), id);
        return id;
    }

    int node_of(const Tensor<R>& t) const {
        if (t.owner == this && t.node >= 0) return t.node;
        auto it = leaf_by_buffer_.find(t.data.get());
        return it == leaf_by_buffer_.end() ? -1 : it->second;
    }

    int record(OpKind kind, Attrs attrs, std::vector<int> inputs, const Tensor<R>& out, bool grad) {
        Node n;
        n.kind = kind;
        n.attrs = std::move(attrs);
        n.inputs = std::move(inputs);
        n.shape = out.shape;
        n.value = out.data;
        n.requires_grad = grad;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

private:
    std::unordered_map<const void*, int> leaf_by_buffer_;
};

namespace detail {

template <class R>
Tensor<R> forward(OpKind kind, std::span<const Tensor<R>> in, const Attrs& attrs) {
    switch (kind) {
        case OpKind::matmul: {
            if (in.size() != 2) shape_error(kind, "expects 2 inputs");
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
                shape_error(kind, "incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
            Tensor<R> out(Shape{a.dim(0), b.dim(1)});
            matmul_acc(a.ptr(), b.ptr(), out.ptr(), a.dim(0), a.dim(1), b.dim(1));
            return out;
        }
        case OpKind::add: {
            if (in.size() != 2) shape_error(kind, "expects 2 inputs");
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.shape == b.shape) {
                Tensor<R> out(a.shape);
                const R* pa = a.ptr();
                const R* pb = b.ptr();
                R* po = out.ptr();
                for (int64_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] + pb[i];
                return out;
            }
            // bias add: b spans the last axis of a
            if (a.rank() >= 1 && b.numel() == a.dim(a.rank() - 1)) {
                Tensor<R> out(a.shape);
                const int64_t cols = b.numel();
                const int64_t rows = a.numel() / cols;
                const R* pa = a.ptr();
                const R* pb = b.ptr();
                R* po = out.ptr();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = pa[r * cols + c] + pb[c];
                return out;
            }
            shape_error(kind, "incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                                  " (only same-shape or bias add)");
        }
        case OpKind::mul: {
            if (in.size() != 2) shape_error(kind, "expects 2 inputs");
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.shape != b.shape)
                shape_error(kind, "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
            Tensor<R> out(a.shape);
            const R* pa = a.ptr();
            const R* pb = b.ptr();
            R* po = out.ptr();
            for (int64_t i = 0, n = a.numel(); i < n; ++i) po[i] = pa[i] * pb[i];
            return out;
        }
        case OpKind::concat: {
            if (in.empty()) shape_error(kind, "expects at least 1 input");
            const int axis = attrs.axis;
            const auto& s0 = in[0].shape;
            if (axis < 0 || axis >= in[0].rank()) shape_error(kind, "axis out of range");
            int total = 0;
            for (const auto& t : in) {
                if (t.rank() != in[0].rank()) shape_error(kind, "rank mismatch");
                for (int d = 0; d < t.rank(); ++d)
                    if (d != axis && t.dim(d) != s0[static_cast<size_t>(d)])
                        shape_error(kind, "dim " + std::to_string(d) + " mismatch " + shape_str(t.shape) +
                                              " vs " + shape_str(s0));
                total += t.dim(axis);
            }
            Shape os = s0;
            os[static_cast<size_t>(axis)] = total;
            Tensor<R> out(os);
            int64_t outer, n0, inner;
            axis_split(os, axis, outer, n0, inner);
            R* po = out.ptr();
            int64_t off = 0;
            for (const auto& t : in) {
                const int64_t na = t.dim(axis);
                const R* pt = t.ptr();
                for (int64_t o = 0; o < outer; ++o)
                    std::copy_n(pt + o * na * inner, na * inner, po + (o * n0 + off) * inner);
                off += na;
            }
            return out;
        }
        case OpKind::slice: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            const auto& a = in[0];
            const int axis = attrs.axis;
            if (axis < 0 || axis >= a.rank()) shape_error(kind, "axis out of range");
            if (attrs.start < 0 || attrs.len <= 0 || attrs.start + attrs.len > a.dim(axis))
                shape_error(kind, "range [" + std::to_string(attrs.start) + ", " +
                                      std::to_string(attrs.start + attrs.len) + ") out of bounds for dim " +
                                      std::to_string(a.dim(axis)) + " in " + shape_str(a.shape));
            Shape os = a.shape;
            os[static_cast<size_t>(axis)] = attrs.len;
            Tensor<R> out(os);
            int64_t outer, n, inner;
            axis_split(a.shape, axis, outer, n, inner);
            const R* pa = a.ptr();
            R* po = out.ptr();
            for (int64_t o = 0; o < outer; ++o)
                std::copy_n(pa + (o * n + attrs.start) * inner, int64_t{attrs.len} * inner,
                            po + o * attrs.len * inner);
            return out;
        }
        case OpKind::transpose: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            const auto& a = in[0];
            if (a.rank() != 2) shape_error(kind, "expects a rank-2 tensor, got " + shape_str(a.shape));
            Tensor<R> out(Shape{a.dim(1), a.dim(0)});
            const int m = a.dim(0), n = a.dim(1);
            const R* pa = a.ptr();
            R* po = out.ptr();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) po[static_cast<size_t>(j) * m + i] = pa[static_cast<size_t>(i) * n + j];
            return out;
        }
        case OpKind::embedding_gather: {
            if (in.size() != 1) shape_error(kind, "expects 1 input (the table)");
            const auto& table = in[0];
            if (table.rank() != 2) shape_error(kind, "table must be rank-2, got " + shape_str(table.shape));
            const int v = table.dim(0), d = table.dim(1);
            Tensor<R> out(Shape{static_cast<int>(attrs.indices.size()), d});
            R* po = out.ptr();
            const R* pt = table.ptr();
            for (size_t i = 0; i < attrs.indices.size(); ++i) {
                const int id = attrs.indices[i];
                if (id < 0 || id >= v)
                    shape_error(kind, "index " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
                std::copy_n(pt + static_cast<size_t>(id) * d, d, po + i * d);
            }
            return out;
        }
        case OpKind::softmax: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            const auto& a = in[0];
            const int axis = attrs.axis;
            if (axis < 0 || axis >= a.rank()) shape_error(kind, "axis out of range for " + shape_str(a.shape));
            Tensor<R> out(a.shape);
            int64_t outer, n, inner;
            axis_split(a.shape, axis, outer, n, inner);
            const R* pa = a.ptr();
            R* po = out.ptr();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t ii = 0; ii < inner; ++ii) {
                    const int64_t base = o * n * inner + ii;
                    R mx = pa[base];
                    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, pa[base + j * inner]);
                    R denom = 0;
                    for (int64_t j = 0; j < n; ++j) {
                        const R e = std::exp(pa[base + j * inner] - mx);
                        po[base + j * inner] = e;
                        denom += e;
                    }
                    for (int64_t j = 0; j < n; ++j) po[base + j * inner] /= denom;
                }
            return out;
        }
        case OpKind::layer_norm: {
            if (in.size() != 3) shape_error(kind, "expects (x, gain, bias)");
            const auto& x = in[0];
            const auto& g = in[1];
            const auto& b = in[2];
            if (x.rank() < 1) shape_error(kind, "x must have rank >= 1");
            const int64_t d = x.dim(x.rank() - 1);
            if (g.numel() != d || b.numel() != d)
                shape_error(kind, "gain/bias must span the last axis (" + std::to_string(d) + "), got " +
                                      shape_str(g.shape) + " and " + shape_str(b.shape));
            Tensor<R> out(x.shape);
            const int64_t rows = x.numel() / d;
            const R* px = x.ptr();
            const R* pg = g.ptr();
            const R* pb = b.ptr();
            R* po = out.ptr();
            for (int64_t r = 0; r < rows; ++r) {
                const R* row = px + r * d;
                R mean = 0;
                for (int64_t j = 0; j < d; ++j) mean += row[j];
                mean /= R(d);
                R var = 0;
                for (int64_t j = 0; j < d; ++j) {
                    const R c = row[j] - mean;
                    var += c * c;
                }
                var /= R(d);
                const R inv = R(1) / std::sqrt(var + R(attrs.eps));
                R* orow = po + r * d;
                for (int64_t j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv * pg[j] + pb[j];
            }
            return out;
        }
        case OpKind::gelu: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            Tensor<R> out(in[0].shape);
            const R* pa = in[0].ptr();
            R* po = out.ptr();
            for (int64_t i = 0, n = in[0].numel(); i < n; ++i) po[i] = gelu_fwd(pa[i]);
            return out;
        }
        case OpKind::scale: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            Tensor<R> out(in[0].shape);
            const R* pa = in[0].ptr();
            R* po = out.ptr();
            const R c = R(attrs.scalar);
            for (int64_t i = 0, n = in[0].numel(); i < n; ++i) po[i] = pa[i] * c;
            return out;
        }
        case OpKind::masked_fill: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            const auto& a = in[0];
            if (!attrs.mask || static_cast<int64_t>(attrs.mask->size()) != a.numel())
                shape_error(kind, "mask size does not match tensor " + shape_str(a.shape));
            Tensor<R> out(a.shape);
            const R* pa = a.ptr();
            const uint8_t* pm = attrs.mask->data();
            R* po = out.ptr();
            const R f = R(attrs.fill);
            for (int64_t i = 0, n = a.numel(); i < n; ++i) po[i] = pm[i] ? f : pa[i];
            return out;
        }
        case OpKind::cross_entropy_from_logits: {
            if (in.size() != 1) shape_error(kind, "expects 1 input (logits)");
            const auto& logits = in[0];
            if (logits.rank() != 2) shape_error(kind, "logits must be [n, vocab], got " + shape_str(logits.shape));
            const int n = logits.dim(0), v = logits.dim(1);
            if (static_cast<int>(attrs.indices.size()) != n)
                shape_error(kind, std::to_string(attrs.indices.size()) + " targets for " + std::to_string(n) +
                                      " rows");
            const R* pl = logits.ptr();
            R total = 0;
            int valid = 0;
            for (int i = 0; i < n; ++i) {
                const int t = attrs.indices[static_cast<size_t>(i)];
                if (t == attrs.ignore_index) continue;
                if (t < 0 || t >= v)
                    shape_error(kind, "target " + std::to_string(t) + " out of range [0, " + std::to_string(v) + ")");
                const R* row = pl + static_cast<size_t>(i) * v;
                R mx = row[0];
                for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                R denom = 0;
                for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
                total += std::log(denom) + mx - row[t];
                ++valid;
            }
            if (valid == 0) shape_error(kind, "all targets ignored");
            return Tensor<R>::scalar(total / R(valid));
        }
        case OpKind::sum: {
            if (in.size() != 1) shape_error(kind, "expects 1 input");
            const R* pa = in[0].ptr();
            R total = 0;
            for (int64_t i = 0, n = in[0].numel(); i < n; ++i) total += pa[i];
            return Tensor<R>::scalar(total);
        }
    }
    throw TensorError("unknown primitive kind");
}

}  // namespace detail

// Applies a primitive, recording a tape node when any input requires a
// gradient. `tape == nullptr` runs forward-only.
template <class R>
Tensor<R> apply_primitive(Tape<R>* tape, OpKind kind, std::span<const Tensor<R>> inputs, Attrs attrs = {}) {
    Tensor<R> out = detail::forward<R>(kind, inputs, attrs);
    bool grad = false;
    for (const auto& t : inputs) grad = grad || t.requires_grad;
    out.requires_grad = grad;
    if (tape && grad) {
        std::vector<int> ids;
        ids.reserve(inputs.size());
        for (const auto& t : inputs) ids.push_back(tape->leaf(t));
        out.node = tape->record(kind, std::move(attrs), std::move(ids), out, grad);
        out.owner = tape;
    }
    return out;
}

// Gradient of every node, indexed by node id; undefined tensors mean
// "not reachable / not differentiable". requires_grad leaves always get a
// (possibly zero) gradient.
template <class R>
std::vector<Tensor<R>> backpropagate(Tape<R>& tape, const Tensor<R>& loss) {
    if (loss.numel() != 1) throw TensorError("backpropagate: loss must be scalar, got " + shape_str(loss.shape));
    const int root = tape.node_of(loss);
    if (root < 0) throw TensorError("backpropagate: loss is not connected to this tape");

    auto& nodes = tape.nodes;
    std::vector<std::vector<R>> grad(nodes.size());
    grad[static_cast<size_t>(root)] = {R(1)};

    auto ensure = [&](int id) -> std::vector<R>& {
        auto& g = grad[static_cast<size_t>(id)];
        if (g.empty()) g.assign(nodes[static_cast<size_t>(id)].value->size(), R(0));
        return g;
    };

    for (int id = root; id >= 0; --id) {
        auto& node = nodes[static_cast<size_t>(id)];
        if (grad[static_cast<size_t>(id)].empty() || node.leaf) continue;
        const std::vector<R>& gy = grad[static_cast<size_t>(id)];
        const auto& in = node.inputs;
        auto inval = [&](size_t i) -> const std::vector<R>& {
            return *nodes[static_cast<size_t>(in[i])].value;
        };
        auto inshape = [&](size_t i) -> const Shape& { return nodes[static_cast<size_t>(in[i])].shape; };
        auto wants = [&](size_t i) { return nodes[static_cast<size_t>(in[i])].requires_grad; };

        switch (node.kind) {
            case OpKind::matmul: {
                const Shape& sa = inshape(0);
                const Shape& sb = inshape(1);
                const int m = sa[0], k = sa[1], n = sb[1];
                if (wants(0)) detail::matmul_bt_acc(gy.data(), inval(1).data(), ensure(in[0]).data(), m, n, k);
                if (wants(1)) detail::matmul_at_acc(inval(0).data(), gy.data(), ensure(in[1]).data(), m, k, n);
                break;
            }
            case OpKind::add: {
                if (wants(0)) {
                    auto& ga = ensure(in[0]);
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
                }
                if (wants(1)) {
                    auto& gb = ensure(in[1]);
                    if (gb.size() == gy.size()) {
                        for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
                    } else {  // bias add: reduce over rows
                        const size_t cols = gb.size();
                        for (size_t i = 0; i < gy.size(); ++i) gb[i % cols] += gy[i];
                    }
                }
                break;
            }
            case OpKind::mul: {
                if (wants(0)) {
                    auto& ga = ensure(in[0]);
                    const auto& b = inval(1);
                    for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * b[i];
                }
                if (wants(1)) {
                    auto& gb = ensure(in[1]);
                    const auto& a = inval(0);
                    for (size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * a[i];
                }
                break;
            }
            case OpKind::concat: {
                int64_t outer, n0, inner;
                detail::axis_split(node.shape, node.attrs.axis, outer, n0, inner);
                int64_t off = 0;
                for (size_t i = 0; i < in.size(); ++i) {
                    const int64_t na = inshape(i)[static_cast<size_t>(node.attrs.axis)];
                    if (wants(i)) {
                        auto& gi = ensure(in[i]);
                        for (int64_t o = 0; o < outer; ++o)
                            for (int64_t j = 0; j < na * inner; ++j)
                                gi[static_cast<size_t>(o * na * inner + j)] +=
                                    gy[static_cast<size_t>((o * n0 + off) * inner + j)];
                    }
                    off += na;
                }
                break;
            }
            case OpKind::slice: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                int64_t outer, n, inner;
                detail::axis_split(inshape(0), node.attrs.axis, outer, n, inner);
                const int64_t len = node.attrs.len, start = node.attrs.start;
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t j = 0; j < len * inner; ++j)
                        ga[static_cast<size_t>((o * n + start) * inner + j)] +=
                            gy[static_cast<size_t>(o * len * inner + j)];
                break;
            }
            case OpKind::transpose: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                const int m = inshape(0)[0], n = inshape(0)[1];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        ga[static_cast<size_t>(i) * n + j] += gy[static_cast<size_t>(j) * m + i];
                break;
            }
            case OpKind::embedding_gather: {
                if (!wants(0)) break;
                auto& gt = ensure(in[0]);
                const int d = inshape(0)[1];
                for (size_t i = 0; i < node.attrs.indices.size(); ++i) {
                    const size_t row = static_cast<size_t>(node.attrs.indices[i]);
                    for (int j = 0; j < d; ++j) gt[row * d + j] += gy[i * d + j];
                }
                break;
            }
            case OpKind::softmax: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                const auto& p = *node.value;
                int64_t outer, n, inner;
                detail::axis_split(node.shape, node.attrs.axis, outer, n, inner);
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t ii = 0; ii < inner; ++ii) {
                        const int64_t base = o * n * inner + ii;
                        R dot = 0;
                        for (int64_t j = 0; j < n; ++j)
                            dot += gy[static_cast<size_t>(base + j * inner)] * p[static_cast<size_t>(base + j * inner)];
                        for (int64_t j = 0; j < n; ++j) {
                            const size_t ix = static_cast<size_t>(base + j * inner);
                            ga[ix] += p[ix] * (gy[ix] - dot);
                        }
                    }
                break;
            }
            case OpKind::layer_norm: {
                const auto& x = inval(0);
                const auto& g = inval(1);
                const int64_t d = inshape(0).back();
                const int64_t rows = static_cast<int64_t>(x.size()) / d;
                std::vector<R>* gx = wants(0) ? &ensure(in[0]) : nullptr;
                std::vector<R>* gg = wants(1) ? &ensure(in[1]) : nullptr;
                std::vector<R>* gb = wants(2) ? &ensure(in[2]) : nullptr;
                for (int64_t r = 0; r < rows; ++r) {
                    const R* row = x.data() + r * d;
                    const R* gyr = gy.data() + r * d;
                    R mean = 0;
                    for (int64_t j = 0; j < d; ++j) mean += row[j];
                    mean /= R(d);
                    R var = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const R c = row[j] - mean;
                        var += c * c;
                    }
                    var /= R(d);
                    const R inv = R(1) / std::sqrt(var + R(node.attrs.eps));
                    R sum_dyg = 0, sum_dygx = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const R xhat = (row[j] - mean) * inv;
                        const R dyg = gyr[j] * g[static_cast<size_t>(j)];
                        sum_dyg += dyg;
                        sum_dygx += dyg * xhat;
                        if (gg) (*gg)[static_cast<size_t>(j)] += gyr[j] * xhat;
                        if (gb) (*gb)[static_cast<size_t>(j)] += gyr[j];
                    }
                    if (gx) {
                        R* gxr = gx->data() + r * d;
                        for (int64_t j = 0; j < d; ++j) {
                            const R xhat = (row[j] - mean) * inv;
                            const R dyg = gyr[j] * g[static_cast<size_t>(j)];
                            gxr[j] += inv * (dyg - sum_dyg / R(d) - xhat * sum_dygx / R(d));
                        }
                    }
                }
                break;
            }
            case OpKind::gelu: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                const auto& x = inval(0);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * detail::gelu_bwd(x[i]);
                break;
            }
            case OpKind::scale: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                const R c = R(node.attrs.scalar);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * c;
                break;
            }
            case OpKind::masked_fill: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                const uint8_t* pm = node.attrs.mask->data();
                for (size_t i = 0; i < ga.size(); ++i)
                    if (!pm[i]) ga[i] += gy[i];
                break;
            }
            case OpKind::cross_entropy_from_logits: {
                if (!wants(0)) break;
                auto& gl = ensure(in[0]);
                const auto& logits = inval(0);
                const int n = inshape(0)[0], v = inshape(0)[1];
                int valid = 0;
                for (int i = 0; i < n; ++i)
                    if (node.attrs.indices[static_cast<size_t>(i)] != node.attrs.ignore_index) ++valid;
                const R up = gy[0] / R(valid);
                for (int i = 0; i < n; ++i) {
                    const int t = node.attrs.indices[static_cast<size_t>(i)];
                    if (t == node.attrs.ignore_index) continue;
                    const R* row = logits.data() + static_cast<size_t>(i) * v;
                    R mx = row[0];
                    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                    R denom = 0;
                    for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
                    R* grow = gl.data() + static_cast<size_t>(i) * v;
                    for (int j = 0; j < v; ++j) {
                        const R p = std::exp(row[j] - mx) / denom;
                        grow[j] += up * (p - (j == t ? R(1) : R(0)));
                    }
                }
                break;
            }
            case OpKind::sum: {
                if (!wants(0)) break;
                auto& ga = ensure(in[0]);
                for (auto& v : ga) v += gy[0];
                break;
            }
        }
    }

    std::vector<Tensor<R>> out(nodes.size());
    for (size_t id = 0; id < nodes.size(); ++id) {
        auto& n = nodes[id];
        if (!n.requires_grad) continue;
        if (grad[id].empty()) {
            if (n.leaf) out[id] = Tensor<R>(n.shape);  // unreachable leaf: zeros
            continue;
        }
        out[id] = Tensor<R>(n.shape, std::move(grad[id]));
    }
    return out;
}

// Gradient of `t` under a previous backpropagate result; zeros if absent.
template <class R>
Tensor<R> grad_of(const Tape<R>& tape, const std::vector<Tensor<R>>& grads, const Tensor<R>& t) {
    const int id = tape.node_of(t);
    if (id < 0 || !grads[static_cast<size_t>(id)].defined()) return Tensor<R>(t.shape);
    return grads[static_cast<size_t>(id)];
}

// ---- typed wrappers ----

namespace detail {
template <class R>
Tensor<R> apply2(Tape<R>* tape, OpKind kind, const Tensor<R>& a, const Tensor<R>& b, Attrs attrs = {}) {
    const std::vector<Tensor<R>> in = {a, b};
    return apply_primitive<R>(tape, kind, std::span<const Tensor<R>>(in.data(), in.size()), std::move(attrs));
}
template <class R>
Tensor<R> apply1(Tape<R>* tape, OpKind kind, const Tensor<R>& a, Attrs attrs = {}) {
    return apply_primitive<R>(tape, kind, std::span<const Tensor<R>>(&a, 1), std::move(attrs));
}
}  // namespace detail

template <class R>
Tensor<R> matmul(Tape<R>* tape, const Tensor<R>& a, const Tensor<R>& b) {
    return detail::apply2(tape, OpKind::matmul, a, b);
}

template <class R>
Tensor<R> add(Tape<R>* tape, const Tensor<R>& a, const Tensor<R>& b) {
    return detail::apply2(tape, OpKind::add, a, b);
}

template <class R>
Tensor<R> mul(Tape<R>* tape, const Tensor<R>& a, const Tensor<R>& b) {
    return detail::apply2(tape, OpKind::mul, a, b);
}

template <class R>
Tensor<R> concat(Tape<R>* tape, std::span<const Tensor<R>> parts, int axis) {
    Attrs attrs;
    attrs.axis = axis;
    return apply_primitive<R>(tape, OpKind::concat, parts, std::move(attrs));
}

template <class R>
Tensor<R> concat(Tape<R>* tape, const std::vector<Tensor<R>>& parts, int axis) {
    return concat<R>(tape, std::span<const Tensor<R>>(parts.data(), parts.size()), axis);
}

template <class R>
Tensor<R> slice(Tape<R>* tape, const Tensor<R>& a, int axis, int start, int len) {
    Attrs attrs;
    attrs.axis = axis;
    attrs.start = start;
    attrs.len = len;
    return detail::apply1(tape, OpKind::slice, a, std::move(attrs));
}

template <class R>
Tensor<R> transpose(Tape<R>* tape, const Tensor<R>& a) {
    return detail::apply1(tape, OpKind::transpose, a);
}

template <class R>
Tensor<R> embedding_gather(Tape<R>* tape, const Tensor<R>& table, std::vector<int> ids) {
    Attrs attrs;
    attrs.indices = std::move(ids);
    return detail::apply1(tape, OpKind::embedding_gather, table, std::move(attrs));
}

template <class R>
Tensor<R> softmax(Tape<R>* tape, const Tensor<R>& a, int axis) {
    Attrs attrs;
    attrs.axis = axis;
    return detail::apply1(tape, OpKind::softmax, a, std::move(attrs));
}

template <class R>
Tensor<R> layer_norm(Tape<R>* tape, const Tensor<R>& x, const Tensor<R>& gain, const Tensor<R>& bias,
                     double eps = 1e-5) {
    Attrs attrs;
    attrs.eps = eps;
    const std::vector<Tensor<R>> in = {x, gain, bias};
    return apply_primitive<R>(tape, OpKind::layer_norm, std::span<const Tensor<R>>(in.data(), in.size()),
                              std::move(attrs));
}

template <class R>
Tensor<R> gelu(Tape<R>* tape, const Tensor<R>& a) {
    return detail::apply1(tape, OpKind::gelu, a);
}

template <class R>
Tensor<R> scale(Tape<R>* tape, const Tensor<R>& a, double c) {
    Attrs attrs;
    attrs.scalar = c;
    return detail::apply1(tape, OpKind::scale, a, std::move(attrs));
}

template <class R>
Tensor<R> masked_fill(Tape<R>* tape, const Tensor<R>& a, std::shared_ptr<const std::vector<uint8_t>> mask,
                      double fill = -1e9) {
    Attrs attrs;
    attrs.mask = std::move(mask);
    attrs.fill = fill;
    return detail::apply1(tape, OpKind::masked_fill, a, std::move(attrs));
}

template <class R>
Tensor<R> cross_entropy_from_logits(Tape<R>* tape, const Tensor<R>& logits, std::vector<int> targets,
                                    int ignore_index = -1) {
    Attrs attrs;
    attrs.indices = std::move(targets);
    attrs.ignore_index = ignore_index;
    return detail::apply1(tape, OpKind::cross_entropy_from_logits, logits, std::move(attrs));
}

template <class R>
Tensor<R> sum(Tape<R>* tape, const Tensor<R>& a) {
    return detail::apply1(tape, OpKind::sum, a);
}

}  // namespace vofa
