#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace blockfed {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Dense row-major float64 tensor. Rank 1 and rank 2 are the only shapes the
// model code produces; higher ranks are storable but no op accepts them.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Rank-2 accessors. A rank-1 tensor is viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients produced by backward(). Indexed by the parameter Var they belong to.
class Gradients {
 public:
  const Tensor& operator[](const Var& parameter) const;

 private:
  friend Gradients backward(Tape& tape, const Var& loss);
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> is_param_;
};

// Records primitive operations during a forward pass so that backward() can
// replay them in reverse. Single owner; not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient is reported by backward().
  Var parameter(Tensor value);
  // Leaf that never receives a gradient.
  Var constant(Tensor value);

  std::size_t num_ops() const { return ops_.size(); }
  std::size_t num_values() const { return nodes_.size(); }
  const std::string& op_name(std::size_t op) const { return ops_.at(op).name; }
  // Op indices in the order the last backward() visited them.
  const std::vector<std::size_t>& last_backward_order() const { return last_order_; }

  const Tensor& value(const Var& v) const;
  void check_owns(const Var& v, const char* what) const;

  struct Node {
    Tensor value;
    bool is_param = false;
    bool requires_grad = false;
  };
  using GradFn =
      std::function<void(std::size_t out, const std::vector<Node>& nodes, std::vector<Tensor>& grads)>;

  // Records an op and returns its output. `grad_fn` receives the output id,
  // every node and every gradient buffer; buffers of nodes that do not require
  // a gradient are empty and must be skipped.
  Var record(std::string name, Tensor out, std::vector<Var> inputs, GradFn grad_fn);

 private:
  friend Gradients backward(Tape& tape, const Var& loss);
  struct Op {
    std::string name;
    std::size_t output = 0;
    GradFn grad_fn;
  };
  Var push(Tensor value, bool is_param, bool requires_grad);

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  std::vector<std::size_t> last_order_;
};

// Reverse-mode sweep from a scalar loss. Throws TapeError when the loss was
// not produced on `tape` or is not a single value.
Gradients backward(Tape& tape, const Var& loss);

enum class Elementwise { Add, Mul, Relu, Tanh };

Var elementwise(Elementwise kind, std::span<const Var> operands);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var relu(const Var& x);
Var tanh(const Var& x);

// [m x k] * [k x n] -> [m x n]
Var matmul(const Var& a, const Var& b);
// x: [batch x n], bias: [n]. The only broadcasting op.
Var add_bias(const Var& x, const Var& bias);
// Column-wise concatenation of [batch x n_i] blocks.
Var concat_cols(std::span<const Var> parts);
// Column j of x as [batch x 1].
Var column(const Var& x, std::size_t j);
// Row r of x scaled by s[r]; x: [batch x n], s: [batch x 1].
Var scale_rows(const Var& x, const Var& s);

Var sum(const Var& x);
Var dot(const Var& a, const Var& b);

// Max-subtracted softmax over a rank-1 tensor.
Var softmax(const Var& x);
// Row-wise softmax over a [batch x n] tensor.
Var softmax_rows(const Var& x);

// Mean over rows of -log softmax(row)[label]. Rank-1 logits are one row.
Var cross_entropy(const Var& logits, std::span<const int> labels);
Var cross_entropy(const Var& logits, int label);

}  // namespace blockfed
