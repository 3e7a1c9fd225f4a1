#pragma once

#include <cmath>
#include <cstring>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/kernels.hpp"
#include "rare/tensor.hpp"

namespace rare {

enum class Op {
  Input,
  Constant,
  Param,
  Add,
  Mul,
  Scale,
  MatMul,
  Conv2d,
  MaxPool2x2,
  Relu,
  Tanh,
  Sigmoid,
  Softmax,
  Log,
  Sum,
  Concat,
  Slice,
  Reshape,
  MapToSequence,
  Embed,
  BilinearSample,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::MaxPool2x2: return "maxpool2x2";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::MapToSequence: return "map_to_sequence";
    case Op::Embed: return "embed";
    case Op::BilinearSample: return "bilinear_sample";
  }
  return "?";
}

/// Handle to a node in a Graph.
struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

struct OpAttrs {
  int axis = 0;
  int start = 0;
  int len = 0;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int index = 0;
  double factor = 0.0;
};

/// Reverse-mode tape. Operations compute eagerly as they are recorded;
/// the recording can be re-run (recompute) after rebinding leaf values,
/// and walked backwards for gradients. Nodes are in topological order by
/// construction.
template <typename S>
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<int> in;
    OpAttrs attrs;
    Tensor<S> out;
    std::vector<int> iscratch;  // maxpool argmax cache
    std::string name;
    bool bound = false;
    bool grad_touched = false;
  };

  explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}

  int node_count() const { return static_cast<int>(nodes_.size()); }

  // ---- leaves ----

  Value input(const std::string& name, Tensor<S> v) {
    Value val = push(Op::Input, {}, {}, name);
    node(val).out = std::move(v);
    node(val).bound = true;
    return val;
  }

  Value input_slot(const std::string& name, Shape shape) {
    Value val = push(Op::Input, {}, {}, name);
    node(val).out = Tensor<S>::zeros(std::move(shape));
    node(val).bound = false;
    return val;
  }

  Value constant(Tensor<S> v) {
    Value val = push(Op::Constant, {}, {});
    node(val).out = std::move(v);
    node(val).bound = true;
    return val;
  }

  Value param(const std::string& name, const Tensor<S>& v) {
    Value val = push(Op::Param, {}, {}, name);
    node(val).out = v;
    node(val).out.requires_grad = true;
    node(val).bound = true;
    return val;
  }

  /// Rebinds a leaf; downstream values are stale until recompute().
  void set_value(Value v, const Tensor<S>& t) {
    Node& n = node(v);
    if (n.op != Op::Input && n.op != Op::Constant && n.op != Op::Param)
      throw std::invalid_argument("set_value: node " + label(v.id) + " is not a leaf");
    if (t.shape != n.out.shape)
      throw std::invalid_argument("set_value: shape " + shape_str(t.shape) + " does not match " +
                                  shape_str(n.out.shape) + " of " + label(v.id));
    n.out.values = t.values;
    n.bound = true;
    dirty_ = true;
  }

  std::vector<S>& mutable_values(Value v) {
    dirty_ = true;
    return node(v).out.values;
  }

  /// Requests gradients for a non-parameter leaf (e.g. an image input).
  /// Must be called before recording operations that consume the leaf.
  void want_grad(Value v) {
    Node& n = node(v);
    if (n.op != Op::Input && n.op != Op::Constant)
      throw std::invalid_argument("want_grad: node " + label(v.id) + " is not a leaf input");
    n.out.requires_grad = true;
  }

  // ---- operations ----

  Value add(Value a, Value b) {
    const Shape &sa = shape(a), &sb = shape(b);
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
      throw std::invalid_argument("add: shape " + shape_str(sb) + " is not a suffix of " +
                                  shape_str(sa));
    return emit(Op::Add, {a.id, b.id}, {});
  }

  Value sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

  Value mul(Value a, Value b) {
    if (shape(a) != shape(b))
      throw std::invalid_argument("mul: shapes " + shape_str(shape(a)) + " vs " +
                                  shape_str(shape(b)));
    return emit(Op::Mul, {a.id, b.id}, {});
  }

  Value scale(Value a, double factor) {
    OpAttrs at;
    at.factor = factor;
    return emit(Op::Scale, {a.id}, at);
  }

  Value matmul(Value a, Value b) {
    const Shape &sa = shape(a), &sb = shape(b);
    if (sa.size() != 2 || (sb.size() != 2 && sb.size() != 1) || sa[1] != sb[0])
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(sa) + " x " +
                                  shape_str(sb));
    return emit(Op::MatMul, {a.id, b.id}, {});
  }

  /// x: (cin,h,w), w: (cout,cin,kh,kw), b: (cout) or invalid Value for none.
  Value conv2d(Value x, Value w, Value b, int stride, int pad_h, int pad_w) {
    const Shape &sx = shape(x), &sw = shape(w);
    if (sx.size() != 3 || sw.size() != 4 || sw[1] != sx[0])
      throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(sx) + ", " +
                                  shape_str(sw));
    if (b.valid() && shape(b) != Shape{sw[0]})
      throw std::invalid_argument("conv2d: bias shape " + shape_str(shape(b)));
    OpAttrs at;
    at.stride = stride;
    at.pad_h = pad_h;
    at.pad_w = pad_w;
    std::vector<int> in = {x.id, w.id};
    if (b.valid()) in.push_back(b.id);
    return emit(Op::Conv2d, std::move(in), at);
  }

  Value maxpool2x2(Value x) {
    const Shape& sx = shape(x);
    if (sx.size() != 3 || sx[1] < 2 || sx[2] < 2)
      throw std::invalid_argument("maxpool2x2: bad shape " + shape_str(sx));
    return emit(Op::MaxPool2x2, {x.id}, {});
  }

  Value relu(Value a) { return emit(Op::Relu, {a.id}, {}); }
  Value tanh(Value a) { return emit(Op::Tanh, {a.id}, {}); }
  Value sigmoid(Value a) { return emit(Op::Sigmoid, {a.id}, {}); }
  Value log(Value a) { return emit(Op::Log, {a.id}, {}); }

  /// Softmax over the last axis.
  Value softmax(Value a) { return emit(Op::Softmax, {a.id}, {}); }

  /// Full reduction to a 1-element tensor.
  Value sum(Value a) { return emit(Op::Sum, {a.id}, {}); }

  Value concat(const std::vector<Value>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = shape(parts[0]);
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
      throw std::invalid_argument("concat: bad axis");
    std::vector<int> in;
    for (const Value& p : parts) {
      Shape sp = shape(p);
      if (sp.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
      for (size_t d = 0; d < sp.size(); ++d)
        if (static_cast<int>(d) != axis && sp[d] != s0[d])
          throw std::invalid_argument("concat: shapes " + shape_str(s0) + " vs " + shape_str(sp));
      in.push_back(p.id);
    }
    OpAttrs at;
    at.axis = axis;
    return emit(Op::Concat, std::move(in), at);
  }

  Value slice(Value a, int axis, int start, int len) {
    const Shape& sa = shape(a);
    if (axis < 0 || axis >= static_cast<int>(sa.size()) || start < 0 || len < 1 ||
        start + len > sa[static_cast<size_t>(axis)])
      throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                  std::to_string(start + len) + ") out of " + shape_str(sa));
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.len = len;
    return emit(Op::Slice, {a.id}, at);
  }

  Value reshape(Value a, Shape target) {
    if (numel(target) != numel(shape(a)))
      throw std::invalid_argument("reshape: " + shape_str(shape(a)) + " to " + shape_str(target));
    Value v = emit_deferred(Op::Reshape, {a.id}, {});
    node(v).out = Tensor<S>(std::move(target), node_at(a.id).out.values);
    finish(v);
    return v;
  }

  /// (d,h,w) maps -> (w, d*h) sequence of column vectors, left to right.
  Value map_to_sequence(Value a) {
    if (shape(a).size() != 3)
      throw std::invalid_argument("map_to_sequence: need 3-d maps, got " + shape_str(shape(a)));
    return emit(Op::MapToSequence, {a.id}, {});
  }

  /// Row lookup: table (v,d), fixed row index -> (d).
  Value embed(Value table, int index) {
    const Shape& st = shape(table);
    if (st.size() != 2 || index < 0 || index >= st[0])
      throw std::invalid_argument("embed: index " + std::to_string(index) + " out of " +
                                  shape_str(st));
    OpAttrs at;
    at.index = index;
    return emit(Op::Embed, {table.id}, at);
  }

  /// img (h,w), grid (n,2) normalized xy -> (n) samples.
  Value bilinear_sample(Value img, Value grid) {
    const Shape &si = shape(img), &sg = shape(grid);
    if (si.size() != 2 || sg.size() != 2 || sg[1] != 2)
      throw std::invalid_argument("bilinear_sample: shapes " + shape_str(si) + ", " +
                                  shape_str(sg));
    return emit(Op::BilinearSample, {img.id, grid.id}, {});
  }

  // ---- sugar ----

  /// Stacks n equal-length vectors into an (n, d) matrix.
  Value stack_rows(const std::vector<Value>& rows) {
    std::vector<Value> reshaped;
    reshaped.reserve(rows.size());
    for (Value r : rows) reshaped.push_back(reshape(r, {1, shape(r)[0]}));
    return concat(reshaped, 0);
  }

  // ---- execution ----

  const Tensor<S>& val(Value v) const { return node_at(v.id).out; }
  const Shape& shape(Value v) const { return node_at(v.id).out.shape; }

  /// Re-runs every node in recording order from the current leaf values.
  void recompute() {
    for (int i = 0; i < node_count(); ++i) compute(i);
    dirty_ = false;
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      std::fill(n.out.grad.begin(), n.out.grad.end(), S(0));
      n.grad_touched = false;
    }
  }

  /// Reverse sweep from a one-element output. Gradients land on every
  /// node with requires_grad, accumulating additively across fan-out.
  void backward(Value output) {
    if (dirty_)
      throw std::runtime_error("backward: graph has rebound leaves; call recompute first");
    Node& root = node(output);
    if (root.out.size() != 1)
      throw std::invalid_argument("backward: output " + label(output.id) + " has " +
                                  std::to_string(root.out.size()) + " elements, expected 1");
    if (!root.out.requires_grad)
      throw std::invalid_argument("backward: output does not depend on any parameter");
    zero_grad();
    touch(output.id);
    root.out.grad[0] = S(1);
    for (int i = output.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.out.requires_grad || !n.grad_touched) continue;
      propagate(i);
    }
    if (check_finite_) {
      for (int i = 0; i <= output.id; ++i) {
        const Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.grad_touched) continue;
        for (S g : n.out.grad)
          if (!std::isfinite(static_cast<double>(g)))
            throw std::runtime_error("backward: non-finite gradient at node " + label(i));
      }
    }
  }

  const std::vector<S>& grad(Value v) const {
    const Node& n = node_at(v.id);
    if (n.out.grad.empty())
      throw std::runtime_error("grad: no gradient on node " + label(v.id) +
                               " (requires_grad unset or backward not run)");
    return n.out.grad;
  }

  // ---- named outputs (evaluate surface) ----

  void mark_output(const std::string& name, Value v) { outputs_[name] = v; }
  const std::map<std::string, Value>& outputs() const { return outputs_; }

  Value find(const std::string& name) const {
    for (int i = 0; i < node_count(); ++i)
      if (nodes_[static_cast<size_t>(i)].name == name) return Value{i};
    return Value{};
  }

  std::string label(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.name.empty()) return "'" + n.name + "'";
    return std::string(op_name(n.op)) + "#" + std::to_string(id);
  }

 private:
  Node& node(Value v) { return nodes_.at(static_cast<size_t>(v.id)); }
  Node& node_at(int id) { return nodes_.at(static_cast<size_t>(id)); }
  const Node& node_at(int id) const { return nodes_.at(static_cast<size_t>(id)); }

  Value push(Op op, std::vector<int> in, OpAttrs attrs, std::string name = {}) {
    Node n;
    n.op = op;
    n.in = std::move(in);
    n.attrs = attrs;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Value{node_count() - 1};
  }

  Value emit_deferred(Op op, std::vector<int> in, OpAttrs attrs) {
    Value v = push(op, std::move(in), attrs);
    return v;
  }

  void finish(Value v) {
    Node& n = node(v);
    bool rg = false;
    for (int i : n.in) rg = rg || node_at(i).out.requires_grad;
    n.out.requires_grad = rg;
    n.bound = true;
    if (check_finite_) check_node_finite(v.id);
  }

  Value emit(Op op, std::vector<int> in, OpAttrs attrs) {
    Value v = push(op, std::move(in), attrs);
    compute(v.id);
    finish(v);
    return v;
  }

  void check_node_finite(int id) {
    const Node& n = node_at(id);
    for (S x : n.out.values)
      if (!std::isfinite(static_cast<double>(x)))
        throw std::runtime_error(std::string("evaluate: non-finite value at node ") + label(id));
  }

  void touch(int id) {
    Node& n = node_at(id);
    if (!n.grad_touched) {
      n.out.grad.assign(n.out.values.size(), S(0));
      n.grad_touched = true;
    }
  }

  std::vector<S>& grad_ref(int id) { return node_at(id).out.grad; }

  // Forward compute of one node from its inputs' current values.
  void compute(int id);
  // Push this node's gradient into its inputs.
  void propagate(int id);

  // deque: appending never invalidates references handed out by val()/shape()
  std::deque<Node> nodes_;
  std::map<std::string, Value> outputs_;
  bool check_finite_;
  bool dirty_ = false;
};

// ---------------------------------------------------------------------------
// forward

template <typename S>
void Graph<S>::compute(int id) {
  Node& n = node_at(id);
  auto in_val = [&](int k) -> const Tensor<S>& { return node_at(n.in[static_cast<size_t>(k)]).out; };
  switch (n.op) {
    case Op::Input:
      if (!n.bound) throw std::runtime_error("evaluate: input " + label(id) + " not bound");
      break;
    case Op::Constant:
    case Op::Param:
      break;
    case Op::Add: {
      const Tensor<S>& a = in_val(0);
      const Tensor<S>& b = in_val(1);
      n.out.shape = a.shape;
      n.out.values = a.values;
      int nb = b.size();
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] += b[i % nb];
      break;
    }
    case Op::Mul: {
      const Tensor<S>& a = in_val(0);
      const Tensor<S>& b = in_val(1);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] = a[i] * b[i];
      break;
    }
    case Op::Scale: {
      const Tensor<S>& a = in_val(0);
      S f = static_cast<S>(n.attrs.factor);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] = f * a[i];
      break;
    }
    case Op::MatMul: {
      const Tensor<S>& a = in_val(0);
      const Tensor<S>& b = in_val(1);
      int m = a.shape[0], k = a.shape[1];
      int cols = b.rank() == 2 ? b.shape[1] : 1;
      n.out.shape = b.rank() == 2 ? Shape{m, cols} : Shape{m};
      n.out.values.assign(static_cast<size_t>(m) * cols, S(0));
      kernels::gemm_acc(a.values.data(), b.values.data(), n.out.values.data(), m, k, cols);
      break;
    }
    case Op::Conv2d: {
      const Tensor<S>& x = in_val(0);
      const Tensor<S>& w = in_val(1);
      int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
      int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      int ho = (h + 2 * n.attrs.pad_h - kh) / n.attrs.stride + 1;
      int wo = (wd + 2 * n.attrs.pad_w - kw) / n.attrs.stride + 1;
      if (ho < 1 || wo < 1)
        throw std::invalid_argument("conv2d: empty output at node " + label(id));
      n.out.shape = {cout, ho, wo};
      n.out.values.assign(static_cast<size_t>(cout) * ho * wo, S(0));
      std::vector<S> col(static_cast<size_t>(cin) * kh * kw * ho * wo);
      kernels::im2col(x.values.data(), cin, h, wd, kh, kw, n.attrs.stride, n.attrs.pad_h,
                      n.attrs.pad_w, ho, wo, col.data());
      kernels::gemm_acc(w.values.data(), col.data(), n.out.values.data(), cout, cin * kh * kw,
                        ho * wo);
      if (n.in.size() == 3) {
        const Tensor<S>& b = in_val(2);
        for (int c = 0; c < cout; ++c) {
          S* dst = n.out.values.data() + static_cast<size_t>(c) * ho * wo;
          for (int i = 0; i < ho * wo; ++i) dst[i] += b[c];
        }
      }
      break;
    }
    case Op::MaxPool2x2: {
      const Tensor<S>& x = in_val(0);
      int c = x.shape[0], h = x.shape[1], w = x.shape[2];
      n.out.shape = {c, h / 2, w / 2};
      n.out.values.resize(static_cast<size_t>(c) * (h / 2) * (w / 2));
      n.iscratch.resize(n.out.values.size());
      kernels::maxpool2x2(x.values.data(), c, h, w, n.out.values.data(), n.iscratch.data());
      break;
    }
    case Op::Relu: {
      const Tensor<S>& a = in_val(0);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] = a[i] > S(0) ? a[i] : S(0);
      break;
    }
    case Op::Tanh: {
      const Tensor<S>& a = in_val(0);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] = std::tanh(a[i]);
      break;
    }
    case Op::Sigmoid: {
      const Tensor<S>& a = in_val(0);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i)
        n.out.values[static_cast<size_t>(i)] = S(1) / (S(1) + std::exp(-a[i]));
      break;
    }
    case Op::Softmax: {
      const Tensor<S>& a = in_val(0);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      int cols = a.shape.back();
      int rows = a.size() / cols;
      for (int r = 0; r < rows; ++r) {
        const S* src = a.values.data() + static_cast<size_t>(r) * cols;
        S* dst = n.out.values.data() + static_cast<size_t>(r) * cols;
        S mx = src[0];
        for (int i = 1; i < cols; ++i) mx = std::max(mx, src[i]);
        S z = S(0);
        for (int i = 0; i < cols; ++i) {
          dst[i] = std::exp(src[i] - mx);
          z += dst[i];
        }
        for (int i = 0; i < cols; ++i) dst[i] /= z;
      }
      break;
    }
    case Op::Log: {
      const Tensor<S>& a = in_val(0);
      n.out.shape = a.shape;
      n.out.values.resize(a.values.size());
      for (int i = 0; i < a.size(); ++i) n.out.values[static_cast<size_t>(i)] = std::log(a[i]);
      break;
    }
    case Op::Sum: {
      const Tensor<S>& a = in_val(0);
      S acc = S(0);
      for (S v : a.values) acc += v;
      n.out.shape = {1};
      n.out.values.assign(1, acc);
      break;
    }
    case Op::Concat: {
      int axis = n.attrs.axis;
      const Shape& s0 = in_val(0).shape;
      int outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
      for (size_t d = static_cast<size_t>(axis) + 1; d < s0.size(); ++d) inner *= s0[d];
      int total_axis = 0;
      for (size_t k = 0; k < n.in.size(); ++k) total_axis += in_val(static_cast<int>(k)).shape[static_cast<size_t>(axis)];
      Shape so = s0;
      so[static_cast<size_t>(axis)] = total_axis;
      n.out.shape = so;
      n.out.values.resize(static_cast<size_t>(outer) * total_axis * inner);
      int offset = 0;
      for (size_t k = 0; k < n.in.size(); ++k) {
        const Tensor<S>& part = in_val(static_cast<int>(k));
        int ax = part.shape[static_cast<size_t>(axis)];
        for (int o = 0; o < outer; ++o)
          std::memcpy(n.out.values.data() +
                          (static_cast<size_t>(o) * total_axis + offset) * inner,
                      part.values.data() + static_cast<size_t>(o) * ax * inner,
                      static_cast<size_t>(ax) * inner * sizeof(S));
        offset += ax;
      }
      break;
    }
    case Op::Slice: {
      const Tensor<S>& a = in_val(0);
      int axis = n.attrs.axis;
      int outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= a.shape[static_cast<size_t>(d)];
      for (size_t d = static_cast<size_t>(axis) + 1; d < a.shape.size(); ++d) inner *= a.shape[d];
      int ax = a.shape[static_cast<size_t>(axis)];
      Shape so = a.shape;
      so[static_cast<size_t>(axis)] = n.attrs.len;
      n.out.shape = so;
      n.out.values.resize(static_cast<size_t>(outer) * n.attrs.len * inner);
      for (int o = 0; o < outer; ++o)
        std::memcpy(n.out.values.data() + static_cast<size_t>(o) * n.attrs.len * inner,
                    a.values.data() + (static_cast<size_t>(o) * ax + n.attrs.start) * inner,
                    static_cast<size_t>(n.attrs.len) * inner * sizeof(S));
      break;
    }
    case Op::Reshape: {
      const Tensor<S>& a = in_val(0);
      n.out.values = a.values;  // shape fixed at build
      break;
    }
    case Op::MapToSequence: {
      const Tensor<S>& a = in_val(0);
      int d = a.shape[0], h = a.shape[1], w = a.shape[2];
      n.out.shape = {w, d * h};
      n.out.values.resize(a.values.size());
      for (int c = 0; c < w; ++c)
        for (int dd = 0; dd < d; ++dd)
          for (int y = 0; y < h; ++y)
            n.out.values[static_cast<size_t>(c) * d * h + static_cast<size_t>(dd) * h + y] =
                a.values[(static_cast<size_t>(dd) * h + y) * w + c];
      break;
    }
    case Op::Embed: {
      const Tensor<S>& t = in_val(0);
      int d = t.shape[1];
      n.out.shape = {d};
      n.out.values.assign(t.values.begin() + static_cast<size_t>(n.attrs.index) * d,
                          t.values.begin() + static_cast<size_t>(n.attrs.index + 1) * d);
      break;
    }
    case Op::BilinearSample: {
      const Tensor<S>& img = in_val(0);
      const Tensor<S>& grid = in_val(1);
      int pts = grid.shape[0];
      n.out.shape = {pts};
      n.out.values.resize(static_cast<size_t>(pts));
      kernels::bilinear_sample(img.values.data(), img.shape[0], img.shape[1], grid.values.data(),
                               pts, n.out.values.data());
      break;
    }
  }
  if (check_finite_ && n.op != Op::Input && n.op != Op::Constant && n.op != Op::Param)
    check_node_finite(id);
}

// ---------------------------------------------------------------------------
// backward

template <typename S>
void Graph<S>::propagate(int id) {
  Node& n = node_at(id);
  const std::vector<S>& g = n.out.grad;
  auto in_node = [&](int k) -> Node& { return node_at(n.in[static_cast<size_t>(k)]); };
  auto want = [&](int k) { return in_node(k).out.requires_grad; };
  auto gin = [&](int k) -> std::vector<S>& {
    touch(n.in[static_cast<size_t>(k)]);
    return in_node(k).out.grad;
  };
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
    case Op::Param:
      break;
    case Op::Add: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (want(1)) {
        std::vector<S>& db = gin(1);
        size_t nb = db.size();
        for (size_t i = 0; i < g.size(); ++i) db[i % nb] += g[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor<S>& a = in_node(0).out;
      const Tensor<S>& b = in_node(1).out;
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.values[i];
      }
      if (want(1)) {
        std::vector<S>& db = gin(1);
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.values[i];
      }
      break;
    }
    case Op::Scale: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        S f = static_cast<S>(n.attrs.factor);
        for (size_t i = 0; i < g.size(); ++i) da[i] += f * g[i];
      }
      break;
    }
    case Op::MatMul: {
      const Tensor<S>& a = in_node(0).out;
      const Tensor<S>& b = in_node(1).out;
      int m = a.shape[0], k = a.shape[1];
      int cols = b.rank() == 2 ? b.shape[1] : 1;
      if (want(0))
        kernels::gemm_bt_acc(g.data(), b.values.data(), gin(0).data(), m, cols, k);
      if (want(1))
        kernels::gemm_at_acc(a.values.data(), g.data(), gin(1).data(), k, m, cols);
      break;
    }
    case Op::Conv2d: {
      const Tensor<S>& x = in_node(0).out;
      const Tensor<S>& w = in_node(1).out;
      int cin = x.shape[0], h = x.shape[1], wd = x.shape[2];
      int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      int ho = n.out.shape[1], wo = n.out.shape[2];
      int ck = cin * kh * kw, hw = ho * wo;
      if (want(0) || want(1)) {
        std::vector<S> col(static_cast<size_t>(ck) * hw);
        kernels::im2col(x.values.data(), cin, h, wd, kh, kw, n.attrs.stride, n.attrs.pad_h,
                        n.attrs.pad_w, ho, wo, col.data());
        if (want(1)) kernels::gemm_bt_acc(g.data(), col.data(), gin(1).data(), cout, hw, ck);
        if (want(0)) {
          std::vector<S> dcol(static_cast<size_t>(ck) * hw, S(0));
          kernels::gemm_at_acc(w.values.data(), g.data(), dcol.data(), ck, cout, hw);
          kernels::col2im_acc(dcol.data(), cin, h, wd, kh, kw, n.attrs.stride, n.attrs.pad_h,
                              n.attrs.pad_w, ho, wo, gin(0).data());
        }
      }
      if (n.in.size() == 3 && want(2)) {
        std::vector<S>& db = gin(2);
        for (int c = 0; c < cout; ++c) {
          const S* src = g.data() + static_cast<size_t>(c) * hw;
          S acc = S(0);
          for (int i = 0; i < hw; ++i) acc += src[i];
          db[static_cast<size_t>(c)] += acc;
        }
      }
      break;
    }
    case Op::MaxPool2x2: {
      if (want(0)) {
        std::vector<S>& dx = gin(0);
        for (size_t i = 0; i < g.size(); ++i) dx[static_cast<size_t>(n.iscratch[i])] += g[i];
      }
      break;
    }
    case Op::Relu: {
      if (want(0)) {
        const Tensor<S>& a = in_node(0).out;
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i)
          if (a.values[i] > S(0)) da[i] += g[i];
      }
      break;
    }
    case Op::Tanh: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] * (S(1) - n.out.values[i] * n.out.values[i]);
      }
      break;
    }
    case Op::Sigmoid: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] * n.out.values[i] * (S(1) - n.out.values[i]);
      }
      break;
    }
    case Op::Softmax: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        int cols = n.out.shape.back();
        int rows = n.out.size() / cols;
        for (int r = 0; r < rows; ++r) {
          const S* y = n.out.values.data() + static_cast<size_t>(r) * cols;
          const S* gr = g.data() + static_cast<size_t>(r) * cols;
          S dot = S(0);
          for (int i = 0; i < cols; ++i) dot += gr[i] * y[i];
          S* dst = da.data() + static_cast<size_t>(r) * cols;
          for (int i = 0; i < cols; ++i) dst[i] += y[i] * (gr[i] - dot);
        }
      }
      break;
    }
    case Op::Log: {
      if (want(0)) {
        const Tensor<S>& a = in_node(0).out;
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] / a.values[i];
      }
      break;
    }
    case Op::Sum: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < da.size(); ++i) da[i] += g[0];
      }
      break;
    }
    case Op::Concat: {
      int axis = n.attrs.axis;
      const Shape& so = n.out.shape;
      int outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= so[static_cast<size_t>(d)];
      for (size_t d = static_cast<size_t>(axis) + 1; d < so.size(); ++d) inner *= so[d];
      int total_axis = so[static_cast<size_t>(axis)];
      int offset = 0;
      for (size_t k = 0; k < n.in.size(); ++k) {
        int ax = in_node(static_cast<int>(k)).out.shape[static_cast<size_t>(axis)];
        if (want(static_cast<int>(k))) {
          std::vector<S>& dp = gin(static_cast<int>(k));
          for (int o = 0; o < outer; ++o) {
            const S* src = g.data() + (static_cast<size_t>(o) * total_axis + offset) * inner;
            S* dst = dp.data() + static_cast<size_t>(o) * ax * inner;
            for (int i = 0; i < ax * inner; ++i) dst[i] += src[i];
          }
        }
        offset += ax;
      }
      break;
    }
    case Op::Slice: {
      if (want(0)) {
        const Shape& sa = in_node(0).out.shape;
        int axis = n.attrs.axis;
        int outer = 1, inner = 1;
        for (int d = 0; d < axis; ++d) outer *= sa[static_cast<size_t>(d)];
        for (size_t d = static_cast<size_t>(axis) + 1; d < sa.size(); ++d) inner *= sa[d];
        int ax = sa[static_cast<size_t>(axis)];
        std::vector<S>& da = gin(0);
        for (int o = 0; o < outer; ++o) {
          const S* src = g.data() + static_cast<size_t>(o) * n.attrs.len * inner;
          S* dst = da.data() + (static_cast<size_t>(o) * ax + n.attrs.start) * inner;
          for (int i = 0; i < n.attrs.len * inner; ++i) dst[i] += src[i];
        }
      }
      break;
    }
    case Op::Reshape: {
      if (want(0)) {
        std::vector<S>& da = gin(0);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      break;
    }
    case Op::MapToSequence: {
      if (want(0)) {
        const Shape& sa = in_node(0).out.shape;
        int d = sa[0], h = sa[1], w = sa[2];
        std::vector<S>& da = gin(0);
        for (int c = 0; c < w; ++c)
          for (int dd = 0; dd < d; ++dd)
            for (int y = 0; y < h; ++y)
              da[(static_cast<size_t>(dd) * h + y) * w + c] +=
                  g[static_cast<size_t>(c) * d * h + static_cast<size_t>(dd) * h + y];
      }
      break;
    }
    case Op::Embed: {
      if (want(0)) {
        int d = in_node(0).out.shape[1];
        std::vector<S>& dt = gin(0);
        S* dst = dt.data() + static_cast<size_t>(n.attrs.index) * d;
        for (int i = 0; i < d; ++i) dst[i] += g[static_cast<size_t>(i)];
      }
      break;
    }
    case Op::BilinearSample: {
      const Tensor<S>& img = in_node(0).out;
      const Tensor<S>& grid = in_node(1).out;
      S* dimg = nullptr;
      S* dgrid = nullptr;
      if (want(0)) dimg = gin(0).data();
      if (want(1)) dgrid = gin(1).data();
      kernels::bilinear_sample_backward(img.values.data(), img.shape[0], img.shape[1],
                                        grid.values.data(), grid.shape[0], g.data(), dimg, dgrid);
      break;
    }
  }
}

/// Binds named inputs, re-runs the recording, and returns the marked
/// outputs. Pure: identical inputs produce bit-identical outputs.
template <typename S>
std::map<std::string, Tensor<S>> evaluate(Graph<S>& g,
                                          const std::map<std::string, Tensor<S>>& inputs) {
  for (const auto& [name, tensor] : inputs) {
    Value v = g.find(name);
    if (!v.valid()) throw std::invalid_argument("evaluate: no input named '" + name + "'");
    g.set_value(v, tensor);
  }
  g.recompute();
  std::map<std::string, Tensor<S>> out;
  for (const auto& [name, v] : g.outputs()) out[name] = g.val(v);
  return out;
}

}  // namespace rare
