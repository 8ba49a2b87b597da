#include "blockfed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "blockfed/errors.hpp"

namespace blockfed {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()),
                                     shape_str(b.shape())));
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(fmt::format("{}: expected rank-2 tensor, got {}", op, shape_str(t.shape())));
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// --- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError(fmt::format("tensor shape {} holds {} values, got {}", shape_str(shape_),
                                     shape_product(shape_), data_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() != 2) throw DimensionError("rows(): tensor is not rank 1 or 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() != 2) throw DimensionError("cols(): tensor is not rank 1 or 2");
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item(): tensor holds " + std::to_string(data_.size()) + " values");
  return data_[0];
}

// --- Tape -----------------------------------------------------------------

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("Var is not attached to a tape");
  return tape_->value(*this);
}

const Tensor& Tape::value(const Var& v) const {
  check_owns(v, "value");
  return nodes_[v.id_].value;
}

void Tape::check_owns(const Var& v, const char* what) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw TapeError(fmt::format("{}: value was not recorded on this tape", what));
  }
}

Var Tape::push(Tensor value, bool is_param, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), is_param, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) { return push(std::move(value), true, true); }

Var Tape::constant(Tensor value) { return push(std::move(value), false, false); }

Var Tape::record(std::string name, Tensor out, std::vector<Var> inputs, GradFn grad_fn) {
  bool requires_grad = false;
  for (const auto& in : inputs) {
    check_owns(in, name.c_str());
    requires_grad = requires_grad || nodes_[in.id_].requires_grad;
  }
  Var result = push(std::move(out), false, requires_grad);
  if (requires_grad) ops_.push_back(Op{std::move(name), result.id_, std::move(grad_fn)});
  return result;
}

const Tensor& Gradients::operator[](const Var& parameter) const {
  if (parameter.tape() != tape_ || parameter.id() >= grads_.size() || !is_param_[parameter.id()]) {
    throw TapeError("gradient requested for a value that is not a parameter of this tape");
  }
  return grads_[parameter.id()];
}

Gradients backward(Tape& tape, const Var& loss) {
  tape.check_owns(loss, "backward");
  const auto& loss_node = tape.nodes_[loss.id()];
  if (loss_node.value.size() != 1) {
    throw TapeError("backward: loss must be a single value, got shape " + shape_str(loss_node.value.shape()));
  }

  std::vector<Tensor> grads(tape.nodes_.size());
  for (std::size_t i = 0; i < tape.nodes_.size(); ++i) {
    if (tape.nodes_[i].requires_grad) grads[i] = Tensor::zeros(tape.nodes_[i].value.shape());
  }
  if (loss_node.requires_grad) grads[loss.id()][0] = 1.0;

  tape.last_order_.clear();
  for (std::size_t k = tape.ops_.size(); k-- > 0;) {
    const auto& op = tape.ops_[k];
    if (op.output > loss.id()) continue;  // recorded after the loss
    tape.last_order_.push_back(k);
    op.grad_fn(op.output, tape.nodes_, grads);
  }

  Gradients out;
  out.tape_ = &tape;
  out.is_param_.resize(tape.nodes_.size());
  for (std::size_t i = 0; i < tape.nodes_.size(); ++i) {
    out.is_param_[i] = tape.nodes_[i].is_param;
    if (!out.is_param_[i]) grads[i] = Tensor();
  }
  out.grads_ = std::move(grads);
  return out;
}

// --- Ops ------------------------------------------------------------------

Var elementwise(Elementwise kind, std::span<const Var> operands) {
  const bool binary = kind == Elementwise::Add || kind == Elementwise::Mul;
  if (operands.size() != (binary ? 2u : 1u)) {
    throw DimensionError(fmt::format("elementwise: expected {} operands, got {}", binary ? 2 : 1, operands.size()));
  }
  switch (kind) {
    case Elementwise::Add: return add(operands[0], operands[1]);
    case Elementwise::Mul: return mul(operands[0], operands[1]);
    case Elementwise::Relu: return relu(operands[0]);
    case Elementwise::Tanh: return tanh(operands[0]);
  }
  throw DimensionError("elementwise: unknown op");
}

namespace {

Tape& tape_of(const Var& v, const char* op) {
  if (!v.tape()) throw TapeError(fmt::format("{}: operand is not attached to a tape", op));
  return *v.tape();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const auto ia = a.id(), ib = b.id();
  return tape_of(a, "add").record("add", std::move(out), {a, b}, [ia, ib](std::size_t o, const auto&, auto& g) {
    if (g[ia].size()) accumulate(g[ia], g[o]);
    if (g[ib].size()) accumulate(g[ib], g[o]);
  });
}

Var mul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const auto ia = a.id(), ib = b.id();
  return tape_of(a, "mul").record("mul", std::move(out), {a, b}, [ia, ib](std::size_t o, const auto& n, auto& g) {
    const Tensor& go = g[o];
    if (g[ia].size()) {
      for (std::size_t i = 0; i < go.size(); ++i) g[ia][i] += go[i] * n[ib].value[i];
    }
    if (g[ib].size()) {
      for (std::size_t i = 0; i < go.size(); ++i) g[ib][i] += go[i] * n[ia].value[i];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto ix = x.id();
  return tape_of(x, "relu").record("relu", std::move(out), {x}, [ix](std::size_t o, const auto& n, auto& g) {
    const Tensor& in = n[ix].value;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) g[ix][i] += g[o][i];
    }
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  const auto ix = x.id();
  return tape_of(x, "tanh").record("tanh", std::move(out), {x}, [ix](std::size_t o, const auto& n, auto& g) {
    const Tensor& y = n[o].value;
    for (std::size_t i = 0; i < y.size(); ++i) g[ix][i] += g[o][i] * (1.0 - y[i] * y[i]);
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank2(x, "matmul");
  require_rank2(y, "matmul");
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) {
    throw DimensionError(fmt::format("matmul: inner dimensions differ, {} x {}", shape_str(x.shape()),
                                     shape_str(y.shape())));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += xv * y.at(p, j);
    }
  }
  const auto ia = a.id(), ib = b.id();
  return tape_of(a, "matmul").record(
      "matmul", std::move(out), {a, b}, [ia, ib, m, k, n](std::size_t o, const auto& nodes, auto& g) {
        const Tensor& go = g[o];
        const Tensor& xa = nodes[ia].value;
        const Tensor& yb = nodes[ib].value;
        if (g[ia].size()) {  // dA = dC * B^T
          Tensor& ga = g[ia];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += go.at(i, j) * yb.at(p, j);
              ga.at(i, p) += acc;
            }
        }
        if (g[ib].size()) {  // dB = A^T * dC
          Tensor& gb = g[ib];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = xa.at(i, p);
              for (std::size_t j = 0; j < n; ++j) gb.at(p, j) += xv * go.at(i, j);
            }
        }
      });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& in = x.value();
  const Tensor& b = bias.value();
  require_rank2(in, "add_bias");
  if (b.rank() != 1 || b.size() != in.cols()) {
    throw DimensionError(fmt::format("add_bias: bias {} does not match {}", shape_str(b.shape()),
                                     shape_str(in.shape())));
  }
  Tensor out = in;
  const std::size_t rows = in.rows(), cols = in.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += b[c];
  const auto ix = x.id(), ib = bias.id();
  return tape_of(x, "add_bias").record(
      "add_bias", std::move(out), {x, bias}, [ix, ib, rows, cols](std::size_t o, const auto&, auto& g) {
        if (g[ix].size()) accumulate(g[ix], g[o]);
        if (g[ib].size()) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[ib][c] += g[o].at(r, c);
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != rows) {
      throw DimensionError(fmt::format("concat_cols: row count mismatch {} vs {}", p.value().rows(), rows));
    }
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor out = Tensor::zeros({rows, total});
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) out.at(r, offsets[k] + c) = t.at(r, c);
    ids.push_back(parts[k].id());
  }
  return tape_of(parts[0], "concat_cols")
      .record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [ids, offsets, rows](std::size_t o, const auto&, auto& g) {
                for (std::size_t k = 0; k < ids.size(); ++k) {
                  Tensor& gi = g[ids[k]];
                  if (!gi.size()) continue;
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < gi.cols(); ++c) gi.at(r, c) += g[o].at(r, offsets[k] + c);
                }
              });
}

Var column(const Var& x, std::size_t j) {
  const Tensor& in = x.value();
  require_rank2(in, "column");
  if (j >= in.cols()) throw IndexError(fmt::format("column: index {} out of range for {}", j, shape_str(in.shape())));
  const std::size_t rows = in.rows();
  Tensor out = Tensor::zeros({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) out[r] = in.at(r, j);
  const auto ix = x.id();
  return tape_of(x, "column").record("column", std::move(out), {x}, [ix, j, rows](std::size_t o, const auto&, auto& g) {
    for (std::size_t r = 0; r < rows; ++r) g[ix].at(r, j) += g[o][r];
  });
}

Var scale_rows(const Var& x, const Var& s) {
  const Tensor& in = x.value();
  const Tensor& sc = s.value();
  require_rank2(in, "scale_rows");
  if (sc.rank() != 2 || sc.cols() != 1 || sc.rows() != in.rows()) {
    throw DimensionError(fmt::format("scale_rows: scale {} does not match {}", shape_str(sc.shape()),
                                     shape_str(in.shape())));
  }
  const std::size_t rows = in.rows(), cols = in.cols();
  Tensor out = in;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= sc[r];
  const auto ix = x.id(), is = s.id();
  return tape_of(x, "scale_rows").record(
      "scale_rows", std::move(out), {x, s}, [ix, is, rows, cols](std::size_t o, const auto& n, auto& g) {
        const Tensor& go = g[o];
        if (g[ix].size()) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[ix].at(r, c) += go.at(r, c) * n[is].value[r];
        }
        if (g[is].size()) {
          for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += go.at(r, c) * n[ix].value.at(r, c);
            g[is][r] += acc;
          }
        }
      });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto ix = x.id();
  return tape_of(x, "sum").record("sum", Tensor::scalar(acc), {x}, [ix](std::size_t o, const auto&, auto& g) {
    const double go = g[o][0];
    for (auto& v : g[ix].data()) v += go;
  });
}

Var dot(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  const auto ia = a.id(), ib = b.id();
  return tape_of(a, "dot").record("dot", Tensor::scalar(acc), {a, b}, [ia, ib](std::size_t o, const auto& n, auto& g) {
    const double go = g[o][0];
    if (g[ia].size())
      for (std::size_t i = 0; i < g[ia].size(); ++i) g[ia][i] += go * n[ib].value[i];
    if (g[ib].size())
      for (std::size_t i = 0; i < g[ib].size(); ++i) g[ib][i] += go * n[ia].value[i];
  });
}

namespace {

// Stabilized softmax of one row, written into `out`.
void softmax_row(std::span<const double> in, std::span<double> out) {
  double mx = in[0];
  for (double v : in) mx = std::max(mx, v);
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
}

Var softmax_impl(const Var& x, const char* name) {
  const Tensor& in = x.value();
  if (in.size() == 0) throw DimensionError(fmt::format("{}: empty input", name));
  const std::size_t rows = in.rows(), cols = in.cols();
  Tensor out = in;
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_row(in.data().subspan(r * cols, cols), out.data().subspan(r * cols, cols));
  }
  const auto ix = x.id();
  return tape_of(x, name).record(name, std::move(out), {x}, [ix, rows, cols](std::size_t o, const auto& n, auto& g) {
    const Tensor& y = n[o].value;
    const Tensor& go = g[o];
    for (std::size_t r = 0; r < rows; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += go.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) g[ix].at(r, c) += y.at(r, c) * (go.at(r, c) - inner);
    }
  });
}

}  // namespace

Var softmax(const Var& x) {
  if (x.value().rank() != 1) throw DimensionError("softmax: expected rank-1 tensor, got " + shape_str(x.shape()));
  return softmax_impl(x, "softmax");
}

Var softmax_rows(const Var& x) {
  require_rank2(x.value(), "softmax_rows");
  return softmax_impl(x, "softmax_rows");
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& in = logits.value();
  if (in.size() == 0) throw DimensionError("cross_entropy: empty logits");
  const std::size_t rows = in.rows(), cols = in.cols();
  if (labels.size() != rows) {
    throw DimensionError(fmt::format("cross_entropy: {} labels for {} rows", labels.size(), rows));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= cols) {
      throw IndexError(fmt::format("cross_entropy: label {} out of range for {} classes", label, cols));
    }
  }
  // Softmax is kept for the fused backward pass.
  std::vector<double> probs(in.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = in.data().subspan(r * cols, cols);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[labels[r]];
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(row[c] - log_z);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<int> targets(labels.begin(), labels.end());
  const auto ix = logits.id();
  return tape_of(logits, "cross_entropy")
      .record("cross_entropy", Tensor::scalar(total * inv_rows), {logits},
              [ix, rows, cols, inv_rows, probs = std::move(probs), targets = std::move(targets)](
                  std::size_t o, const auto&, auto& g) {
                const double go = g[o][0] * inv_rows;
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double onehot = static_cast<int>(c) == targets[r] ? 1.0 : 0.0;
                    g[ix][r * cols + c] += go * (probs[r * cols + c] - onehot);
                  }
              });
}

Var cross_entropy(const Var& logits, int label) {
  if (logits.value().rank() != 1) {
    throw DimensionError("cross_entropy: expected rank-1 logits, got " + shape_str(logits.shape()));
  }
  const int labels[1] = {label};
  return cross_entropy(logits, std::span<const int>(labels));
}

}  // namespace blockfed
