#include "vffc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "vffc/errors.hpp"
#include "vffc/rng.hpp"

namespace vffc {

std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

static std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

static void validate_shape(const Shape& s) {
    for (auto d : s)
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dim in " + shape_str(s));
}

namespace detail {

static thread_local bool g_recording = true;

bool grad_recording() { return g_recording; }

void check_finite(std::span<const double> v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
}

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn, const char* op) {
    check_finite(data, op);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool track = g_recording;
    bool any_grad = false;
    if (track)
        for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
    if (track && any_grad) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

GradPause::GradPause() : prev_(detail::g_recording) { detail::g_recording = false; }
GradPause::~GradPause() { detail::g_recording = prev_; }

// --- Tensor basics -----------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->data.assign(shape_size(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (shape_size(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("from_data: " + shape_str(shape) + " needs " +
                                    std::to_string(shape_size(shape)) + " values, got " +
                                    std::to_string(data.size()));
    detail::check_finite(data, "from_data");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    validate_shape(shape);
    std::vector<double> d(shape_size(shape));
    for (auto& x : d) x = rng.uniform(lo, hi);
    return from_data(std::move(shape), std::move(d), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw std::invalid_argument("tensor: undefined");
    return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("dim: axis out of range");
    return s[axis];
}

std::int64_t Tensor::size() const { return shape_size(shape()); }

std::span<const double> Tensor::data() const {
    if (!node_) throw std::invalid_argument("tensor: undefined");
    return node_->data;
}

std::span<double> Tensor::mut_data() {
    if (!node_) throw std::invalid_argument("tensor: undefined");
    return node_->data;
}

double Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("value: tensor is not scalar");
    return node_->data[0];
}

double Tensor::at(std::span<const std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw std::invalid_argument("at: rank mismatch");
    auto st = strides_of(s);
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (index[i] < 0 || index[i] >= s[i]) throw std::invalid_argument("at: index out of range");
        flat += index[i] * st[i];
    }
    return node_->data[flat];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    return at(std::span<const std::int64_t>(index.begin(), index.size()));
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (!node_) throw std::invalid_argument("tensor: undefined");
    if (!node_->is_leaf()) throw std::invalid_argument("set_requires_grad: non-leaf tensor");
    node_->requires_grad = rg;
    if (!rg) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw std::invalid_argument("grad: no gradient present");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

void Tensor::backward() const {
    if (!node_) throw std::invalid_argument("backward: undefined tensor");
    if (size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!node_->requires_grad) throw std::invalid_argument("backward: root does not require grad");

    // Reverse postorder over the reachable subgraph (iterative DFS).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Non-leaf grads are per-sweep scratch; leaf grads accumulate across sweeps.
    for (detail::Node* n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    node_->ensure_grad()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
    }
}

// --- elementwise -------------------------------------------------------------

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    auto va = a.data(), vb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return detail::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            for (int k = 0; k < 2; ++k) {
                auto& p = *self.parents[k];
                if (!p.requires_grad) continue;
                auto& g = p.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        },
        "add");
}

Tensor add(const Tensor& a, double b) {
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + b;
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        },
        "add_scalar");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    auto va = a.data(), vb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return detail::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            if (self.parents[0]->requires_grad) {
                auto& g = self.parents[0]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& g = self.parents[1]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
            }
        },
        "sub");
}

Tensor sub(double a, const Tensor& b) {
    std::vector<double> out(b.size());
    auto vb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a - vb[i];
    return detail::make_op(
        b.shape(), std::move(out), {b},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        },
        "rsub_scalar");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    auto va = a.data(), vb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return detail::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
            }
        },
        "mul");
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * s;
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [s](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
        },
        "scale");
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    auto va = a.data(), vb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] / vb[i];
    return detail::make_op(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto& g = pa.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.data[i];
            }
            if (pb.requires_grad) {
                auto& g = pb.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] -= self.grad[i] * pa.data[i] / (pb.data[i] * pb.data[i]);
            }
        },
        "div");
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (p.data[i] > 0.0) g[i] += self.grad[i];
        },
        "relu");
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (va[i] <= 0.0) throw NumericError("log: non-positive input");
        out[i] = std::log(va[i]);
    }
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / p.data[i];
        },
        "log");
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        // Branch keeps exp() argument non-positive for stability at |x| large.
        double x = va[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
    }
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                double y = self.data[i];
                g[i] += self.grad[i] * y * (1.0 - y);
            }
        },
        "sigmoid");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    std::vector<double> out(a.size());
    auto va = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(va[i], lo), hi);
    return detail::make_op(
        a.shape(), std::move(out), {a},
        [lo, hi](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (p.data[i] > lo && p.data[i] < hi) g[i] += self.grad[i];
        },
        "clamp");
}

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return detail::make_op(
        {1}, {acc}, {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            double s = self.grad[0];
            for (auto& v : g) v += s;
        },
        "sum");
}

// Normalized, validated copy of a reduction axis list.
static std::vector<int> normalize_axes(std::span<const int> axes, int rank) {
    std::vector<int> ax(axes.begin(), axes.end());
    for (auto& a : ax) {
        if (a < 0) a += rank;
        if (a < 0 || a >= rank) throw std::invalid_argument("reduce: axis out of range");
    }
    std::sort(ax.begin(), ax.end());
    if (std::adjacent_find(ax.begin(), ax.end()) != ax.end())
        throw std::invalid_argument("reduce: duplicate axis");
    return ax;
}

// Per-input-element flat output index for a reduction that removes `ax`.
static std::vector<std::int64_t> reduce_index_map(const Shape& in, const std::vector<int>& ax) {
    Shape out;
    std::vector<bool> reduced(in.size(), false);
    for (int a : ax) reduced[a] = true;
    for (std::size_t i = 0; i < in.size(); ++i)
        if (!reduced[i]) out.push_back(in[i]);
    auto ist = strides_of(in);
    std::vector<std::int64_t> ost_full(in.size(), 0);
    {
        auto ost = strides_of(out);
        std::size_t j = 0;
        for (std::size_t i = 0; i < in.size(); ++i)
            if (!reduced[i]) ost_full[i] = out.empty() ? 0 : ost[j++];
    }
    std::int64_t n = shape_size(in);
    std::vector<std::int64_t> map(n);
    std::vector<std::int64_t> idx(in.size(), 0);
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t o = 0;
        for (std::size_t i = 0; i < in.size(); ++i) o += idx[i] * ost_full[i];
        map[flat] = o;
        for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
            if (++idx[i] < in[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

Tensor sum(const Tensor& a, std::span<const int> axes) {
    auto ax = normalize_axes(axes, a.rank());
    if (static_cast<int>(ax.size()) == a.rank()) return sum(a);
    Shape out_shape;
    {
        std::vector<bool> reduced(a.rank(), false);
        for (int x : ax) reduced[x] = true;
        for (int i = 0; i < a.rank(); ++i)
            if (!reduced[i]) out_shape.push_back(a.shape()[i]);
    }
    auto map = std::make_shared<std::vector<std::int64_t>>(reduce_index_map(a.shape(), ax));
    std::vector<double> out(shape_size(out_shape), 0.0);
    auto va = a.data();
    for (std::size_t i = 0; i < va.size(); ++i) out[(*map)[i]] += va[i];
    return detail::make_op(
        std::move(out_shape), std::move(out), {a},
        [map](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[(*map)[i]];
        },
        "sum_axes");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mean(const Tensor& a, std::span<const int> axes) {
    auto ax = normalize_axes(axes, a.rank());
    std::int64_t count = 1;
    for (int x : ax) count *= a.shape()[x];
    return scale(sum(a, axes), 1.0 / static_cast<double>(count));
}

// --- structure ------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int rank = static_cast<int>(s0.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (static_cast<int>(s.size()) != rank) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < rank; ++i)
            if (i != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch off-axis");
        out_shape[axis] += s[axis];
    }
    // Views as (outer, axis_extent, inner) slabs.
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s0[i];
    for (int i = axis + 1; i < rank; ++i) inner *= s0[i];
    std::int64_t total_axis = out_shape[axis];
    std::vector<double> out(shape_size(out_shape));
    std::vector<std::int64_t> offsets(parts.size() + 1, 0);
    for (std::size_t k = 0; k < parts.size(); ++k)
        offsets[k + 1] = offsets[k] + parts[k].shape()[axis];
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto v = parts[k].data();
        std::int64_t ext = parts[k].shape()[axis];
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(v.data() + o * ext * inner, ext * inner,
                        out.data() + (o * total_axis + offsets[k]) * inner);
    }
    auto off = std::make_shared<std::vector<std::int64_t>>(std::move(offsets));
    return detail::make_op(
        std::move(out_shape), std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
        [off, outer, inner, total_axis](detail::Node& self) {
            for (std::size_t k = 0; k < self.parents.size(); ++k) {
                auto& p = *self.parents[k];
                if (!p.requires_grad) continue;
                auto& g = p.ensure_grad();
                std::int64_t ext = (*off)[k + 1] - (*off)[k];
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + (o * total_axis + (*off)[k]) * inner;
                    double* dst = g.data() + o * ext * inner;
                    for (std::int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
                }
            }
        },
        "concat");
}

std::vector<Tensor> split(const Tensor& a, int axis, std::span<const std::int64_t> sizes) {
    const Shape& s = a.shape();
    int rank = static_cast<int>(s.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw std::invalid_argument("split: axis out of range");
    std::int64_t total = 0;
    for (auto x : sizes) {
        if (x <= 0) throw std::invalid_argument("split: non-positive part size");
        total += x;
    }
    if (total != s[axis]) throw std::invalid_argument("split: sizes do not cover axis");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < rank; ++i) inner *= s[i];
    std::vector<Tensor> outs;
    auto v = a.data();
    std::int64_t offset = 0;
    for (auto ext : sizes) {
        Shape os = s;
        os[axis] = ext;
        std::vector<double> od(outer * ext * inner);
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(v.data() + (o * s[axis] + offset) * inner, ext * inner,
                        od.data() + o * ext * inner);
        std::int64_t off_here = offset;
        std::int64_t axis_total = s[axis];
        outs.push_back(detail::make_op(
            std::move(os), std::move(od), {a},
            [off_here, ext, outer, inner, axis_total](detail::Node& self) {
                auto& p = *self.parents[0];
                if (!p.requires_grad) return;
                auto& g = p.ensure_grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * ext * inner;
                    double* dst = g.data() + (o * axis_total + off_here) * inner;
                    for (std::int64_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
                }
            },
            "split"));
        offset += ext;
    }
    return outs;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    validate_shape(new_shape);
    if (shape_size(new_shape) != a.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                    " -> " + shape_str(new_shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return detail::make_op(
        std::move(new_shape), std::move(out), {a},
        [](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        },
        "reshape");
}

Tensor permute(const Tensor& a, std::span<const int> perm) {
    int rank = a.rank();
    if (static_cast<int>(perm.size()) != rank) throw std::invalid_argument("permute: rank mismatch");
    std::vector<bool> used(rank, false);
    for (int p : perm) {
        if (p < 0 || p >= rank || used[p]) throw std::invalid_argument("permute: invalid permutation");
        used[p] = true;
    }
    const Shape& s = a.shape();
    Shape out_shape(rank);
    for (int i = 0; i < rank; ++i) out_shape[i] = s[perm[i]];
    auto in_st = strides_of(s);
    // map[out_flat] = in_flat
    auto map = std::make_shared<std::vector<std::int64_t>>(a.size());
    std::vector<std::int64_t> idx(rank, 0);  // output multi-index
    auto v = a.data();
    std::vector<double> out(a.size());
    for (std::int64_t flat = 0; flat < a.size(); ++flat) {
        std::int64_t in_flat = 0;
        for (int i = 0; i < rank; ++i) in_flat += idx[i] * in_st[perm[i]];
        (*map)[flat] = in_flat;
        out[flat] = v[in_flat];
        for (int i = rank - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return detail::make_op(
        std::move(out_shape), std::move(out), {a},
        [map](detail::Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*map)[i]] += self.grad[i];
        },
        "permute");
}

// --- gradient checking ------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double step,
                  bool exclude_kinks) {
    auto eval_sum = [&fn](const Tensor& t) {
        GradPause pause;
        Tensor y = fn(t);
        double acc = 0.0;
        for (double v : y.data()) acc += v;
        return acc;
    };

    std::vector<double> base(x.data().begin(), x.data().end());
    {
        Tensor x0 = Tensor::from_data(x.shape(), base);
        Tensor x1 = Tensor::from_data(x.shape(), base);
        if (eval_sum(x0) != eval_sum(x1))
            throw std::runtime_error("grad_check: fn is not deterministic");
    }

    Tensor xv = Tensor::from_data(x.shape(), base, /*requires_grad=*/true);
    Tensor loss = sum(fn(xv));
    loss.backward();
    std::vector<double> analytic(xv.grad().begin(), xv.grad().end());

    double worst = 0.0;
    std::vector<double> probe = base;
    for (std::size_t i = 0; i < base.size(); ++i) {
        if (exclude_kinks && std::abs(base[i]) < 10.0 * step) continue;
        probe[i] = base[i] + step;
        double up = eval_sum(Tensor::from_data(x.shape(), probe));
        probe[i] = base[i] - step;
        double dn = eval_sum(Tensor::from_data(x.shape(), probe));
        probe[i] = base[i];
        double fd = (up - dn) / (2.0 * step);
        double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, rel);
    }
    return worst;
}

// --- serialization ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'F', 'F', 'C', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("tensor read: truncated header");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("tensor read: truncated header");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 8);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
    for (double v : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
    if (!os) throw DataError("tensor write: stream failure");
}

Tensor read_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("tensor read: bad magic");
    std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw DataError("tensor read: unsupported version " + std::to_string(version));
    std::uint32_t rank = get_u32(is);
    if (rank > 8) throw DataError("tensor read: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
        std::uint64_t raw = get_u64(is);
        if (raw == 0 || raw > (1ull << 40)) throw DataError("tensor read: bad dimension");
        d = static_cast<std::int64_t>(raw);
        n *= d;
    }
    std::vector<double> data(n);
    for (auto& v : data) {
        std::uint64_t bits = get_u64(is);
        std::memcpy(&v, &bits, 8);
    }
    if (!is) throw DataError("tensor read: truncated payload");
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("tensor write: cannot open " + path);
    write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("tensor read: cannot open " + path);
    return read_tensor(is);
}

}  // namespace vffc
