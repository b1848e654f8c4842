#pragma once

// Dense reverse-mode autodiff over row-major double buffers.
//
// Every value in the framework lives in a Node. Ops build a DAG of Nodes;
// backward() walks it in reverse topological order. Leaves accumulate
// gradients across calls, interior nodes are re-zeroed at the start of each
// pass so their grad always reflects the most recent backward().

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdformer/errors.hpp"

namespace tdformer {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Shape() = default;  // rank 0, one element
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t numel() const;
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  void validate() const;
  std::vector<std::size_t> dims_;
};

// 32-bit mode rounds every op output to float. Storage stays double so the
// same graph code serves both modes.
enum class Precision { f64, f32 };
Precision precision();
void set_precision(Precision p);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

bool grad_enabled();

class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

// Instrumented operation counts. matmul records dense MACs plus the
// accumulates actually required when zero entries of the left operand are
// skipped (the spike-driven AC count).
struct OpCounts {
  double macs = 0;         // dense multiply-accumulates
  double accumulates = 0;  // nonzero(left) x output columns
  double left_elements = 0;
  double left_nonzero = 0;
  double elementwise = 0;  // elementwise multiplies and reduction adds

  OpCounts& operator+=(const OpCounts& other);
};

class OpCounter {
 public:
  void record(const std::string& label, const OpCounts& counts);
  const OpCounts& total() const { return total_; }
  const std::map<std::string, OpCounts>& by_label() const { return by_label_; }
  void clear();

 private:
  OpCounts total_;
  std::map<std::string, OpCounts> by_label_;
};

// Installs a counter for the current thread for the lifetime of the scope.
class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

// Tags subsequently recorded counts with a label ("block0.q", ...).
class CountLabel {
 public:
  explicit CountLabel(std::string label);
  ~CountLabel();
  CountLabel(const CountLabel&) = delete;
  CountLabel& operator=(const CountLabel&) = delete;

 private:
  std::string previous_;
};

OpCounter* active_counter();
const std::string& active_count_label();

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first use, always shape.numel()
  const char* op_tag = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  bool requires_grad = false;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::span<double> grad_buffer();
  double item() const;
  void zero_grad();
};

using Var = std::shared_ptr<Node>;

Var make_tensor(Shape shape, std::vector<double> values,
                bool requires_grad = false);
Var zeros(Shape shape, bool requires_grad = false);
Var full(Shape shape, double value, bool requires_grad = false);

// Building block for ops defined outside the engine. Rounds values in f32
// mode, links parents and installs backward_fn only when some parent
// requires a gradient and grad mode is on.
Var make_result(Shape shape, std::vector<double> values, const char* tag,
                std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Requires a single-element root. Seeds d(root)/d(root) = 1.
void backward(const Var& root);

// Copies values into a fresh leaf with no history.
Var detach(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var matmul(const Var& a, const Var& b);

Var reduce_sum(const Var& a, std::size_t axis, bool keepdim = false);
Var mean(const Var& a, std::size_t axis, bool keepdim = false);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

enum class ClampGrad { hard, straight_through };
Var clamp(const Var& a, double lo, double hi, ClampGrad mode = ClampGrad::hard);

Var concat(const Var& a, const Var& b, std::size_t axis);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& axes);

Var linear(const Var& x, const Var& weight, const Var& bias = nullptr);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
};

enum class NormMode { train, eval };

struct BatchNormOptions {
  std::size_t channel_axis = 0;
  NormMode mode = NormMode::train;
  double eps = 1e-5;
  double momentum = 0.1;
};

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormState& state, const BatchNormOptions& options);

// out[..., n, k*C + c] = x[..., table[n][k], c], or 0 where table[n][k] < 0.
// Used for im2col-style patch extraction over a token grid.
Var gather_neighbors(const Var& x, const std::vector<std::vector<long>>& table);

// Mean negative log-likelihood of softmax(logits) over the batch.
Var cross_entropy(const Var& logits, std::span<const int> targets);

// Binary activations. Holds the Node that produced them so gradients can
// flow through surrogate derivatives.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  explicit SpikeTensor(Var node);

  static SpikeTensor zeros(Shape shape);

  const Var& node() const { return node_; }
  const Shape& shape() const { return node_->shape; }
  std::span<const double> bits() const { return node_->values; }
  double firing_rate() const;
  bool empty() const { return !node_; }

 private:
  Var node_;
};

}  // namespace tdformer
