#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nsmae/array.hpp"

namespace nsmae::ndgrad {

// Sparse row map used by gather/scatter primitives: every output row is a
// weighted combination of input rows. CSR layout.
struct RowMap {
  std::size_t in_rows = 0;
  std::size_t out_rows = 0;
  std::vector<std::size_t> offsets;  // out_rows + 1
  std::vector<std::uint32_t> src;
  std::vector<double> weight;
};

enum class Op {
  kInput,
  kConstant,
  kAdd,        // elementwise, equal shapes
  kAddBias,    // a[..., C] + b[C]
  kMul,        // elementwise, equal shapes
  kMulRows,    // a[..., C] * b[...] (b broadcast over last axis)
  kNeg,
  kExp,
  kReciprocal,
  kSoftplus,
  kSigmoid,
  kAbsPow,     // |x|^p, p in {1, 2}
  kScale,      // x * constant
  kSum,        // reduce to scalar
  kSumAxis,    // reduce one axis
  kCumsumExclusive,  // exclusive prefix sum along last axis
  kReshape,
  kConcatLast,  // concat along last axis
  kMatmul,      // [m,k] x [k,n]
  kConv2d,      // x[H,W,Ci], w[kh,kw,Ci,Co], b[Co]
  kConv3d,      // x[X,Y,Z,Ci], w[kx,ky,kz,Ci,Co], b[Co]
  kGatherRows,  // RowMap applied to input viewed as [M,C]
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kInput;
  std::vector<int> inputs;
  Shape shape;
  double attr = 0.0;              // Scale factor / AbsPow exponent
  int axis = 0;                   // SumAxis
  int stride = 1, pad = 0;        // convolutions
  Array value;                    // Constant payload only
  std::optional<RowMap> rowmap;   // GatherRows
};

struct ForwardBackwardResult {
  std::vector<Array> outputs;    // one per declared output node
  std::vector<Array> gradients;  // one per declared input, in declaration order
};

// Reverse-mode tape over dense arrays. Build once, then replay with
// forward()/forward_backward(); the recorded graph is immutable after
// construction and replay is bit-deterministic.
class Tape {
 public:
  int input(Shape shape);
  int constant(Array value);

  int add(int a, int b);
  int add_bias(int a, int bias);
  int mul(int a, int b);
  int mul_rows(int a, int b);
  int neg(int a);
  int exp(int a);
  int reciprocal(int a);
  int softplus(int a);
  int sigmoid(int a);
  int abs_pow(int a, double p);
  int scale(int a, double k);
  int sum(int a);
  int sum_axis(int a, int axis);
  int cumsum_exclusive(int a);
  int reshape(int a, Shape shape);
  int concat_last(const std::vector<int>& parts);
  int matmul(int a, int b);
  int conv2d(int x, int w, int b, int stride, int pad);
  int conv3d(int x, int w, int b, int pad);
  int gather_rows(int a, RowMap map);

  // Composites.
  int sub(int a, int b) { return add(a, neg(b)); }
  int one_minus(int a);  // 1 - x

  void mark_output(int id) { outputs_.push_back(id); }
  void set_loss(int id);  // scalar final node, root of the backward pass

  const Shape& shape_of(int id) const { return nodes_[id].shape; }
  std::size_t size() const { return nodes_.size(); }
  int input_count() const { return static_cast<int>(inputs_.size()); }

  // Forward replay: returns the value of every node.
  std::vector<Array> forward(const std::vector<Array>& inputs) const;

  // Forward + reverse sweep from the scalar loss node.
  ForwardBackwardResult forward_backward(const std::vector<Array>& inputs) const;

  // Value of node `id` given the per-node values from forward().
  static const Array& value_of(const std::vector<Array>& values, int id) { return values[id]; }

  // Max over all input coordinates of |analytic - central difference| /
  // max(1, |analytic|). `step` must lie in (0, 1e-2].
  double check_gradients(const std::vector<Array>& point, double step) const;

 private:
  int push(Node n);
  void check_id(int id) const;

  std::vector<Node> nodes_;
  std::vector<int> inputs_;
  std::vector<int> outputs_;
  int loss_ = -1;
};

}  // namespace nsmae::ndgrad
