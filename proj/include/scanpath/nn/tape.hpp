#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace scanpath::nn {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A named trainable tensor. `grad` accumulates across backward passes until
/// zeroed; it is a scratch buffer, so a const parameter can still receive it.
template <class S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  mutable Matrix<S> grad;

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

/// Owns every trainable tensor of a model, ordered by name.
template <class S>
class ParamStore {
 public:
  Parameter<S>& add(const std::string& name, Matrix<S> value) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Parameter<S> p{name, std::move(value), {}};
    p.zero_grad();
    return params_.emplace(name, std::move(p)).first->second;
  }
  Parameter<S>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void zero_grad() const {
    for (const auto& [_, p] : params_) p.zero_grad();
  }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<S>> params_;
};

template <class S>
class Tape;

/// Handle to a node on a tape.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<S>& value() const { return tape_->value(id_); }
  const Matrix<S>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape<S>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for the backward sweep.
/// A tape built with `record = false` keeps values only.
template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<S>&)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<S> constant(Matrix<S> value) { return emplace(std::move(value), false, {}); }

  /// Leaf whose gradient is kept on the tape.
  Var<S> variable(Matrix<S> value) { return emplace(std::move(value), record_, {}); }

  /// Leaf bound to a parameter; backward() adds its gradient into `p.grad`.
  /// Repeated calls for the same parameter return the same node.
  Var<S> parameter(const Parameter<S>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var<S>(this, it->second);
    Var<S> v = emplace(p.value, record_, {});
    nodes_[static_cast<std::size_t>(v.id())].param = &p;
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Appends the result of an operation. The node requires a gradient when any
  /// parent does.
  Var<S> push(Matrix<S> value, std::initializer_list<Var<S>> parents, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& p : parents) needs = needs || requires_grad(p.id());
    }
    return emplace(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var<S> push(Matrix<S> value, const std::vector<Var<S>>& parents, Backward backward) {
    bool needs = false;
    if (record_) {
      for (const auto& p : parents) needs = needs || requires_grad(p.id());
    }
    return emplace(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Matrix<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  const Matrix<S>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradient buffer of a parent, allocated on first use. Callers check
  /// requires_grad() first.
  Matrix<S>& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1, sweeps the tape in reverse and flushes
  /// parameter gradients.
  void backward(Var<S> loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + std::to_string(loss.rows()) + "x" +
                       std::to_string(loss.cols()));
    }
    if (!record_) throw std::logic_error("backward: tape was built without recording");
    if (!requires_grad(loss.id())) return;
    grad_ref(loss.id())(0, 0) += S(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    for (auto& n : nodes_) {
      if (n.param != nullptr && n.grad.size() != 0) n.param->grad += n.grad;
    }
  }

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    bool requires_grad = false;
    Backward backward;
    const Parameter<S>* param = nullptr;
  };

  Var<S> emplace(Matrix<S> value, bool needs, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, needs, std::move(backward), nullptr});
    return Var<S>(this, static_cast<int>(nodes_.size() - 1));
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<S>*, int> bound_;
};

}  // namespace scanpath::nn
