#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace munet {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

/// One node of the computation graph. Holds the value buffer, the gradient
/// buffer (allocated on demand), and the backward closure with parent links.
template <typename S>
struct TensorNode {
    Shape shape;
    ArrayX<S> data;
    ArrayX<S> grad;
    bool requires_grad = false;
    std::function<void()> backward_fn;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;

    void ensure_grad() {
        if (grad.size() != data.size()) grad = ArrayX<S>::Zero(data.size());
    }
};

/// Dense n-d array with optional reverse-mode autodiff linkage. Copies are
/// shallow (shared node), like the usual framework semantics.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : node_(std::make_shared<TensorNode<S>>()) {
        node_->shape = std::move(shape);
        node_->data = ArrayX<S>::Zero(numel(node_->shape));
    }

    Tensor(Shape shape, ArrayX<S> data) : node_(std::make_shared<TensorNode<S>>()) {
        if (static_cast<std::int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("Tensor: data size does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        t.array().setConstant(value);
        return t;
    }

    static Tensor scalar(S value) {
        Tensor t(Shape{1});
        t.array()[0] = value;
        return t;
    }

    static Tensor uniform(Shape shape, S lo, S hi, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
        for (std::int64_t i = 0; i < t.size(); ++i) t.array()[i] = static_cast<S>(d(rng));
        return t;
    }

    static Tensor normal(Shape shape, S mean, S stddev, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
        for (std::int64_t i = 0; i < t.size(); ++i) t.array()[i] = static_cast<S>(d(rng));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t size() const { return node_->data.size(); }

    ArrayX<S>& array() { return node_->data; }
    const ArrayX<S>& array() const { return node_->data; }
    S* data() { return node_->data.data(); }
    const S* data() const { return node_->data.data(); }

    S operator[](std::int64_t i) const { return node_->data[i]; }
    S& operator[](std::int64_t i) { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v = true) {
        node_->requires_grad = v;
        return *this;
    }

    ArrayX<S>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const ArrayX<S>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }

    void zero_grad() {
        node_->ensure_grad();
        node_->grad.setZero();
    }

    /// Same data buffer, no graph linkage: gradients stop here.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    Tensor clone() const {
        Tensor t(node_->shape);
        t.node_->data = node_->data;
        return t;
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

    /// Reverse pass from this (scalar) tensor. Each graph node is visited
    /// exactly once, in reverse topological order.
    void backward() {
        if (size() != 1)
            throw std::invalid_argument("backward: root must be a scalar tensor, got " + shape_str(shape()));
        std::vector<TensorNode<S>*> order;
        std::unordered_set<TensorNode<S>*> visited;
        topo(node_.get(), visited, order);
        node_->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn();
        }
    }

    /// Wires up an op result: parents + pull-style backward closure.
    static Tensor make_op(Shape shape, ArrayX<S> data,
                          std::vector<Tensor> parents,
                          std::function<void()> backward_fn) {
        Tensor t(std::move(shape), std::move(data));
        bool any = false;
        for (const auto& p : parents) any = any || p.node_->requires_grad || p.node_->backward_fn;
        if (any) {
            t.node_->requires_grad = true;
            for (auto& p : parents) t.node_->parents.push_back(p.node_);
            t.node_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    static void topo(TensorNode<S>* n, std::unordered_set<TensorNode<S>*>& visited,
                     std::vector<TensorNode<S>*>& order) {
        // iterative post-order DFS
        struct Frame {
            TensorNode<S>* n;
            size_t next;
        };
        if (visited.count(n)) return;
        std::vector<Frame> stack{{n, 0}};
        visited.insert(n);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                TensorNode<S>* p = f.n->parents[f.next++].get();
                if (!visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<S>> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Named trainable tensor.
template <typename S>
struct Parameter {
    Tensor<S> tensor;
    std::string name;
    bool trainable = true;
};

template <typename S>
inline void zero_grads(std::vector<Parameter<S>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

inline double poly_lr(std::int64_t iter, std::int64_t max_iter, double base_lr = 0.01,
                      double power = 0.9) {
    if (base_lr < 0) throw std::invalid_argument("poly_lr: negative base_lr");
    if (iter < 0 || iter > max_iter) throw std::invalid_argument("poly_lr: iter out of [0, max_iter]");
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

template <typename S>
inline void sgd_step(std::vector<Parameter<S>>& params, double lr) {
    if (lr < 0) throw std::invalid_argument("sgd_step: negative learning rate");
    for (auto& p : params) {
        if (!p.trainable) continue;
        if (!p.tensor.has_grad()) continue;
        p.tensor.array() -= static_cast<S>(lr) * p.tensor.grad();
    }
}

}  // namespace munet
