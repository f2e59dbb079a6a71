#include "anynet/tensor.hpp"

#include <atomic>
#include <cmath>

#include "anynet/cost.hpp"

namespace anynet {

namespace {
bool g_debug_checks = false;

template <typename S>
GradTape<S>*& current_tape_slot() {
  thread_local GradTape<S>* tape = nullptr;
  return tape;
}

thread_local std::vector<CostCounter*> g_cost_scopes;
}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv: return "conv";
    case OpKind::Linear: return "linear";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Relu: return "relu";
    case OpKind::ResidualAdd: return "add";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::MaxPool: return "max_pool";
    default: return "?";
  }
}

CostScope::CostScope(CostCounter& counter) : counter_(&counter) {
  g_cost_scopes.push_back(counter_);
}

CostScope::~CostScope() { g_cost_scopes.pop_back(); }

void charge(OpKind kind, std::uint64_t units) {
  for (CostCounter* c : g_cost_scopes) c->units[static_cast<int>(kind)] += units;
}

bool cost_tracking_active() { return !g_cost_scopes.empty(); }

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <typename S>
void check_finite(const std::vector<S>& values, const char* what) {
  for (const S& v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(detail::cat("non-finite value in ", what));
    }
  }
}

template void check_finite<float>(const std::vector<float>&, const char*);
template void check_finite<double>(const std::vector<double>&, const char*);

template <typename S>
Tensor<S> wrap_node(std::shared_ptr<Node<S>> n) {
  return Tensor<S>(std::move(n));
}

template Tensor<float> wrap_node<float>(std::shared_ptr<Node<float>>);
template Tensor<double> wrap_node<double>(std::shared_ptr<Node<double>>);

}  // namespace detail

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape) {
  return full(std::move(shape), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value) {
  auto n = std::make_shared<detail::Node<S>>();
  n->id = detail::next_node_id();
  n->leaf = true;
  std::int64_t count = shape_numel(shape);
  if (count < 0) throw ConfigError("negative extent in shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->values.assign(static_cast<std::size_t>(count), value);
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::from_data(Shape shape, std::vector<S> values) {
  std::int64_t count = shape_numel(shape);
  if (count != static_cast<std::int64_t>(values.size())) {
    throw ConfigError(detail::cat("value count ", values.size(),
                                  " does not match shape ", shape_str(shape)));
  }
  auto n = std::make_shared<detail::Node<S>>();
  n->id = detail::next_node_id();
  n->leaf = true;
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value) {
  return from_data(Shape{1}, std::vector<S>{value});
}

template <typename S>
const Shape& Tensor<S>::shape() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return node_->shape;
}

template <typename S>
int Tensor<S>::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size())) {
    throw UsageError(detail::cat("dim ", i, " out of range for shape ", shape_str(s)));
  }
  return s[i];
}

template <typename S>
std::int64_t Tensor<S>::numel() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return node_->numel();
}

template <typename S>
S* Tensor<S>::data() {
  return values().data();
}

template <typename S>
const S* Tensor<S>::data() const {
  return values().data();
}

template <typename S>
std::vector<S>& Tensor<S>::values() {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return node_->values;
}

template <typename S>
const std::vector<S>& Tensor<S>::values() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return node_->values;
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) {
    throw UsageError(detail::cat("item() on tensor of shape ", shape_str(shape())));
  }
  return values()[0];
}

template <typename S>
Tensor<S>& Tensor<S>::set_requires_grad(bool enabled) {
  if (!node_) throw UsageError("operation on an undefined tensor");
  if (enabled && !node_->leaf) {
    throw UsageError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = enabled;
  return *this;
}

template <typename S>
bool Tensor<S>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename S>
bool Tensor<S>::is_leaf() const {
  return node_ && node_->leaf;
}

template <typename S>
std::vector<S>& Tensor<S>::grad() {
  if (!node_) throw UsageError("operation on an undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

template <typename S>
const std::vector<S>* Tensor<S>::grad_if() const {
  if (!node_ || node_->grad.empty()) return nullptr;
  return &node_->grad;
}

template <typename S>
void Tensor<S>::zero_grad() {
  if (!node_) throw UsageError("operation on an undefined tensor");
  if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), S(0));
}

template <typename S>
std::uint64_t Tensor<S>::id() const {
  if (!node_) throw UsageError("operation on an undefined tensor");
  return node_->id;
}

template <typename S>
Tensor<S> Tensor<S>::clone_detached() const {
  return Tensor<S>::from_data(shape(), values());
}

template <typename S>
GradTape<S>::~GradTape() {
  // Deactivate defensively if someone forgot the Scope discipline.
  if (current_tape_slot<S>() == this) current_tape_slot<S>() = nullptr;
}

template <typename S>
GradTape<S>* GradTape<S>::current() {
  return current_tape_slot<S>();
}

template <typename S>
GradTape<S>::Scope::Scope(GradTape& tape) {
  previous_ = current_tape_slot<S>();
  current_tape_slot<S>() = &tape;
}

template <typename S>
GradTape<S>::Scope::~Scope() {
  current_tape_slot<S>() = previous_;
}

template <typename S>
void GradTape<S>::record(const char* op,
                         std::vector<std::shared_ptr<detail::Node<S>>> inputs,
                         std::shared_ptr<detail::Node<S>> output,
                         std::function<void()> backward_fn) {
  records_.push_back(Record{op, std::move(inputs), std::move(output), std::move(backward_fn)});
}

template <typename S>
void GradTape<S>::clear() {
  records_.clear();
}

template <typename S>
std::vector<typename GradTape<S>::RecordView> GradTape<S>::records_view() const {
  std::vector<RecordView> out;
  out.reserve(records_.size());
  for (const Record& r : records_) {
    RecordView v;
    v.op = r.op;
    v.output_id = r.output->id;
    for (const auto& in : r.inputs) v.input_ids.push_back(in->id);
    out.push_back(std::move(v));
  }
  return out;
}

template <typename S>
std::size_t GradTape<S>::backward(const Tensor<S>& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError(detail::cat("backward requires a scalar loss, got shape ",
                                 shape_str(loss.shape())));
  }
  // Ensure grad buffers exist; re-zero scratch (non-leaf) gradients so a
  // second backward() on this tape adds exactly the new loss's contribution.
  for (Record& r : records_) {
    r.output->ensure_grad();
    if (!r.output->leaf) r.output->grad.assign(r.output->values.size(), S(0));
    for (auto& in : r.inputs) in->ensure_grad();
  }
  auto loss_node = loss.node();
  loss_node->ensure_grad();
  bool on_tape = false;
  for (const Record& r : records_) {
    if (r.output == loss_node) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape && !loss_node->leaf) {
    throw UsageError("backward target was not produced under this tape");
  }
  loss_node->grad[0] += S(1);
  if (!on_tape) return 0;  // constant leaf: nothing to propagate
  std::size_t visited = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->backward_fn();
    ++visited;
  }
  return visited;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace anynet
