#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tdformer/tensor.hpp"

namespace tdformer {

namespace {
thread_local Precision g_precision = Precision::f64;
thread_local bool g_grad_enabled = true;
thread_local OpCounter* g_counter = nullptr;
thread_local std::string g_count_label;
}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  if (dims_.size() > kMaxRank) {
    throw DimensionError("rank " + std::to_string(dims_.size()) +
                         " exceeds maximum of 5");
  }
  for (std::size_t d : dims_) {
    if (d == 0) throw DimensionError("zero extent in shape " + str());
  }
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

PrecisionScope::PrecisionScope(Precision p) : previous_(g_precision) {
  g_precision = p;
}
PrecisionScope::~PrecisionScope() { g_precision = previous_; }

bool grad_enabled() { return g_grad_enabled; }
NoGradScope::NoGradScope() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = previous_; }

OpCounts& OpCounts::operator+=(const OpCounts& other) {
  macs += other.macs;
  accumulates += other.accumulates;
  left_elements += other.left_elements;
  left_nonzero += other.left_nonzero;
  elementwise += other.elementwise;
  return *this;
}

void OpCounter::record(const std::string& label, const OpCounts& counts) {
  total_ += counts;
  by_label_[label] += counts;
}

void OpCounter::clear() {
  total_ = {};
  by_label_.clear();
}

CountingScope::CountingScope(OpCounter& counter) : previous_(g_counter) {
  g_counter = &counter;
}
CountingScope::~CountingScope() { g_counter = previous_; }

CountLabel::CountLabel(std::string label) : previous_(g_count_label) {
  g_count_label = std::move(label);
}
CountLabel::~CountLabel() { g_count_label = previous_; }

OpCounter* active_counter() { return g_counter; }
const std::string& active_count_label() { return g_count_label; }

std::span<double> Node::grad_buffer() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

double Node::item() const {
  if (values.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape.str());
  }
  return values[0];
}

void Node::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Var make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape.str());
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  if (g_precision == Precision::f32) {
    for (double& v : node->values) v = static_cast<float>(v);
  }
  node->requires_grad = requires_grad;
  return node;
}

Var zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape.numel();
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Var full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape.numel();
  return make_tensor(std::move(shape), std::vector<double>(n, value),
                     requires_grad);
}

Var make_result(Shape shape, std::vector<double> values, const char* tag,
                std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op_tag = tag;
  if (g_precision == Precision::f32) {
    for (double& v : node->values) v = static_cast<float>(v);
  }
  const bool needs_grad =
      g_grad_enabled &&
      std::any_of(parents.begin(), parents.end(),
                  [](const Var& p) { return p && p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

Var detach(const Var& x) { return make_tensor(x->shape, x->values, false); }

void backward(const Var& root) {
  if (root->values.size() != 1) {
    throw DimensionError("backward() needs a single-element root, got " +
                         root->shape.str());
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* node : order) {
    if (!node->is_leaf()) {
      node->grad_buffer();
      node->zero_grad();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->is_leaf()) node->backward_fn(*node);
  }
}

SpikeTensor::SpikeTensor(Var node) : node_(std::move(node)) {
  for (double v : node_->values) {
    if (v != 0.0 && v != 1.0) {
      throw NumericError("spike tensor holds non-binary value " +
                         std::to_string(v) + " (op " + node_->op_tag + ")");
    }
  }
}

SpikeTensor SpikeTensor::zeros(Shape shape) {
  return SpikeTensor(tdformer::zeros(std::move(shape)));
}

double SpikeTensor::firing_rate() const {
  const auto& v = node_->values;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace tdformer
