#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "anynet/common.hpp"

namespace anynet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

template <typename S>
class Tensor;

namespace detail {

template <typename S>
struct Node;

// Operator implementations use this to hand a freshly computed node back out
// as a Tensor.
template <typename S>
Tensor<S> wrap_node(std::shared_ptr<Node<S>> n);

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until first needed
  bool leaf = false;    // leaves keep their grad across backward calls
  bool requires_grad = false;
  std::uint64_t id = 0;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), S(0));
  }
};

std::uint64_t next_node_id();

}  // namespace detail

template <typename S>
class GradTape;

// Value-semantics handle to a node. Copies share storage (like a smart
// pointer); factories allocate fresh storage. Layouts are dense row-major:
// activations are (N, C, H, W), conv weights (out, in/groups, kh, kw),
// linear weights (out, in).
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, S value);
  static Tensor from_data(Shape shape, std::vector<S> values);
  static Tensor scalar(S value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int dim(int i) const;
  std::int64_t numel() const;

  S* data();
  const S* data() const;
  std::vector<S>& values();
  const std::vector<S>& values() const;
  S item() const;  // usage error unless numel()==1

  // Marks this tensor a learnable leaf: gradients accumulate across backward
  // calls until zero_grad().
  Tensor& set_requires_grad(bool enabled = true);
  bool requires_grad() const;
  bool is_leaf() const;

  std::vector<S>& grad();              // allocates zeroed storage on demand
  const std::vector<S>* grad_if() const;  // nullptr when never allocated
  void zero_grad();

  std::uint64_t id() const;
  std::shared_ptr<detail::Node<S>> node() const { return node_; }

  // Detached copy of the values as a fresh constant leaf.
  Tensor<S> clone_detached() const;

 private:
  friend class GradTape<S>;
  template <typename T>
  friend Tensor<T> detail::wrap_node(std::shared_ptr<detail::Node<T>> n);
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node<S>> node_;
};

// Reverse-mode tape: an ordered list of operation records. Records are
// appended in execution order, so the list is already topologically sorted;
// backward() walks it once in reverse. Gradients of leaf tensors accumulate
// additively across backward() calls (backward on two losses in sequence
// equals backward on their sum, up to summation order); non-leaf gradients
// are scratch and are re-zeroed at the start of each walk.
//
// A tape is confined to one logical thread of training; activation is via an
// RAII Scope. With no active tape, operators run pure forward (nothing is
// recorded and no activations are retained).
template <typename S>
class GradTape {
 public:
  struct RecordView {
    const char* op;
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
  };

  GradTape() = default;
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Seeds d(loss)/d(loss)=1 and replays records in reverse, visiting each
  // exactly once. Returns the number of records visited. Usage error if loss
  // is not a scalar on this tape (a scalar leaf is allowed and is a no-op).
  std::size_t backward(const Tensor<S>& loss);

  std::size_t size() const { return records_.size(); }
  void clear();
  std::vector<RecordView> records_view() const;

  static GradTape* current();

  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  // Used by operator implementations.
  void record(const char* op, std::vector<std::shared_ptr<detail::Node<S>>> inputs,
              std::shared_ptr<detail::Node<S>> output, std::function<void()> backward_fn);

 private:
  struct Record {
    const char* op;
    std::vector<std::shared_ptr<detail::Node<S>>> inputs;
    std::shared_ptr<detail::Node<S>> output;
    std::function<void()> backward_fn;
  };
  std::vector<Record> records_;
};

namespace detail {

// Verifies every element is finite; throws NumericError naming `what`.
template <typename S>
void check_finite(const std::vector<S>& values, const char* what);

}  // namespace detail

}  // namespace anynet
