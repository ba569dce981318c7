#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vffc {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One recorded computation step. Nodes form the reverse-mode graph: parents
// are the inputs the backward rule distributes into, in application order.
struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily; same length as data when present
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
    const char* op = "leaf";

    bool is_leaf() const { return parents.empty(); }
    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

bool grad_recording();

}  // namespace detail

/// Suspends graph recording for the current thread (forward-only evaluation).
class GradPause {
  public:
    GradPause();
    ~GradPause();
    GradPause(const GradPause&) = delete;
    GradPause& operator=(const GradPause&) = delete;

  private:
    bool prev_;
};

// Dense N-dimensional 64-bit real tensor with reverse-mode differentiation.
// Axis convention is (N, D, H, W, C) with leading axes optional. Values are
// immutable after construction except gradient accumulators; mut_data() is
// reserved for optimizer updates on leaves between graph constructions.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(Shape shape, double lo, double hi, class Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t dim(int axis) const;
    std::int64_t size() const;

    std::span<const double> data() const;
    std::span<double> mut_data();
    double value() const;  // scalar tensors only
    double at(std::span<const std::int64_t> index) const;
    double at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);  // leaves only
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    // calls; non-leaf gradients are recomputed per call and readable after.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// --- graph construction helper (used by op implementations) ---------------
namespace detail {
Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn, const char* op);
void check_finite(std::span<const double> v, const char* op);
}  // namespace detail

// --- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);      // requires strictly positive input
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- reductions -------------------------------------------------------------
Tensor sum(const Tensor& a);                              // all axes -> scalar
Tensor sum(const Tensor& a, std::span<const int> axes);   // axes removed
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::span<const int> axes);

// --- structure ---------------------------------------------------------------
Tensor concat(std::span<const Tensor> parts, int axis);
std::vector<Tensor> split(const Tensor& a, int axis,
                          std::span<const std::int64_t> sizes);
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, std::span<const int> perm);

// --- gradient checking -------------------------------------------------------
// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Coordinates with |x_i| < 10*step are excluded (non-differentiable-point
// policy for kinked ops like relu). Throws if two baseline evaluations of fn
// differ, i.e. fn is not deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                  double step = 1e-5, bool exclude_kinks = true);

// --- serialization -----------------------------------------------------------
// Flat container: magic "VFFCTNSR", u32 version, u32 rank, u64 shape[rank],
// little-endian f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace vffc
