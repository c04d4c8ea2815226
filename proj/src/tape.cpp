#include "nsmae/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace nsmae::ndgrad {

namespace {

double softplus_val(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid_val(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("ndgrad: " + msg); }

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kAddBias: return "add_bias";
    case Op::kMul: return "mul";
    case Op::kMulRows: return "mul_rows";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kReciprocal: return "reciprocal";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kAbsPow: return "abs_pow";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kSumAxis: return "sum_axis";
    case Op::kCumsumExclusive: return "cumsum_exclusive";
    case Op::kReshape: return "reshape";
    case Op::kConcatLast: return "concat_last";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kConv3d: return "conv3d";
    case Op::kGatherRows: return "gather_rows";
  }
  return "?";
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) fail("bad node id " + std::to_string(id));
}

int Tape::input(Shape shape) {
  Node n;
  n.op = Op::kInput;
  n.shape = std::move(shape);
  int id = push(std::move(n));
  inputs_.push_back(id);
  return id;
}

int Tape::constant(Array value) {
  Node n;
  n.op = Op::kConstant;
  n.shape = value.shape;
  n.value = std::move(value);
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].shape != nodes_[b].shape)
    fail("add: shape mismatch " + shape_str(nodes_[a].shape) + " vs " + shape_str(nodes_[b].shape));
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

int Tape::add_bias(int a, int bias) {
  check_id(a);
  check_id(bias);
  if (nodes_[bias].shape.size() != 1 || nodes_[bias].shape[0] != last_dim(nodes_[a].shape))
    fail("add_bias: bias shape " + shape_str(nodes_[bias].shape) + " does not match last dim of " +
         shape_str(nodes_[a].shape));
  Node n;
  n.op = Op::kAddBias;
  n.inputs = {a, bias};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].shape != nodes_[b].shape)
    fail("mul: shape mismatch " + shape_str(nodes_[a].shape) + " vs " + shape_str(nodes_[b].shape));
  Node n;
  n.op = Op::kMul;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

int Tape::mul_rows(int a, int b) {
  check_id(a);
  check_id(b);
  std::size_t rows = shape_numel(nodes_[a].shape) / last_dim(nodes_[a].shape);
  if (shape_numel(nodes_[b].shape) != rows)
    fail("mul_rows: row-factor numel " + std::to_string(shape_numel(nodes_[b].shape)) +
         " != row count " + std::to_string(rows));
  Node n;
  n.op = Op::kMulRows;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

#define NSMAE_UNARY(fn, opcode)            \
  int Tape::fn(int a) {                    \
    check_id(a);                           \
    Node n;                                \
    n.op = opcode;                         \
    n.inputs = {a};                        \
    n.shape = nodes_[a].shape;             \
    return push(std::move(n));             \
  }

NSMAE_UNARY(neg, Op::kNeg)
NSMAE_UNARY(exp, Op::kExp)
NSMAE_UNARY(reciprocal, Op::kReciprocal)
NSMAE_UNARY(softplus, Op::kSoftplus)
NSMAE_UNARY(sigmoid, Op::kSigmoid)
NSMAE_UNARY(cumsum_exclusive, Op::kCumsumExclusive)
#undef NSMAE_UNARY

int Tape::abs_pow(int a, double p) {
  check_id(a);
  if (p != 1.0 && p != 2.0) fail("abs_pow: p must be 1 or 2");
  Node n;
  n.op = Op::kAbsPow;
  n.inputs = {a};
  n.shape = nodes_[a].shape;
  n.attr = p;
  return push(std::move(n));
}

int Tape::scale(int a, double k) {
  check_id(a);
  Node n;
  n.op = Op::kScale;
  n.inputs = {a};
  n.shape = nodes_[a].shape;
  n.attr = k;
  return push(std::move(n));
}

int Tape::sum(int a) {
  check_id(a);
  Node n;
  n.op = Op::kSum;
  n.inputs = {a};
  n.shape = Shape{};
  return push(std::move(n));
}

int Tape::sum_axis(int a, int axis) {
  check_id(a);
  const Shape& s = nodes_[a].shape;
  if (axis < 0 || axis >= static_cast<int>(s.size())) fail("sum_axis: axis out of range");
  Node n;
  n.op = Op::kSumAxis;
  n.inputs = {a};
  n.axis = axis;
  n.shape = s;
  n.shape.erase(n.shape.begin() + axis);
  return push(std::move(n));
}

int Tape::reshape(int a, Shape shape) {
  check_id(a);
  if (shape_numel(shape) != shape_numel(nodes_[a].shape))
    fail("reshape: numel mismatch " + shape_str(nodes_[a].shape) + " -> " + shape_str(shape));
  Node n;
  n.op = Op::kReshape;
  n.inputs = {a};
  n.shape = std::move(shape);
  return push(std::move(n));
}

int Tape::concat_last(const std::vector<int>& parts) {
  if (parts.empty()) fail("concat_last: no inputs");
  for (int p : parts) check_id(p);
  Shape lead = nodes_[parts[0]].shape;
  lead.pop_back();
  std::size_t c = 0;
  for (int p : parts) {
    Shape l = nodes_[p].shape;
    if (l.empty()) fail("concat_last: scalar input");
    c += l.back();
    l.pop_back();
    if (l != lead) fail("concat_last: leading dims differ");
  }
  Node n;
  n.op = Op::kConcatLast;
  n.inputs = parts;
  n.shape = lead;
  n.shape.push_back(c);
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  check_id(a);
  check_id(b);
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    fail("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  Node n;
  n.op = Op::kMatmul;
  n.inputs = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

namespace {
std::size_t conv_out(std::size_t in, std::size_t k, int stride, int pad) {
  std::int64_t o = (static_cast<std::int64_t>(in) + 2 * pad - static_cast<std::int64_t>(k));
  if (o < 0) fail("conv: kernel larger than padded input");
  return static_cast<std::size_t>(o / stride) + 1;
}
}  // namespace

int Tape::conv2d(int x, int w, int b, int stride, int pad) {
  check_id(x);
  check_id(w);
  check_id(b);
  const Shape& sx = nodes_[x].shape;
  const Shape& sw = nodes_[w].shape;
  if (sx.size() != 3 || sw.size() != 4 || sx[2] != sw[2])
    fail("conv2d: want x[H,W,Ci] w[kh,kw,Ci,Co], got " + shape_str(sx) + " " + shape_str(sw));
  if (nodes_[b].shape != Shape{sw[3]}) fail("conv2d: bias shape mismatch");
  Node n;
  n.op = Op::kConv2d;
  n.inputs = {x, w, b};
  n.stride = stride;
  n.pad = pad;
  n.shape = {conv_out(sx[0], sw[0], stride, pad), conv_out(sx[1], sw[1], stride, pad), sw[3]};
  return push(std::move(n));
}

int Tape::conv3d(int x, int w, int b, int pad) {
  check_id(x);
  check_id(w);
  check_id(b);
  const Shape& sx = nodes_[x].shape;
  const Shape& sw = nodes_[w].shape;
  if (sx.size() != 4 || sw.size() != 5 || sx[3] != sw[3])
    fail("conv3d: want x[X,Y,Z,Ci] w[kx,ky,kz,Ci,Co], got " + shape_str(sx) + " " + shape_str(sw));
  if (nodes_[b].shape != Shape{sw[4]}) fail("conv3d: bias shape mismatch");
  Node n;
  n.op = Op::kConv3d;
  n.inputs = {x, w, b};
  n.stride = 1;
  n.pad = pad;
  n.shape = {conv_out(sx[0], sw[0], 1, pad), conv_out(sx[1], sw[1], 1, pad),
             conv_out(sx[2], sw[2], 1, pad), sw[4]};
  return push(std::move(n));
}

int Tape::gather_rows(int a, RowMap map) {
  check_id(a);
  std::size_t c = last_dim(nodes_[a].shape);
  std::size_t rows = shape_numel(nodes_[a].shape) / c;
  if (map.in_rows != rows) fail("gather_rows: map expects " + std::to_string(map.in_rows) +
                                " input rows, node has " + std::to_string(rows));
  if (map.offsets.size() != map.out_rows + 1 || map.src.size() != map.weight.size())
    fail("gather_rows: malformed row map");
  Node n;
  n.op = Op::kGatherRows;
  n.inputs = {a};
  n.shape = {map.out_rows, c};
  n.rowmap = std::move(map);
  return push(std::move(n));
}

int Tape::one_minus(int a) {
  int ones = constant(Array::full(nodes_[a].shape, 1.0));
  return add(ones, neg(a));
}

void Tape::set_loss(int id) {
  check_id(id);
  if (!nodes_[id].shape.empty() && shape_numel(nodes_[id].shape) != 1)
    fail("set_loss: final node must be scalar, got " + shape_str(nodes_[id].shape));
  loss_ = id;
}

std::vector<Array> Tape::forward(const std::vector<Array>& inputs) const {
  if (inputs.size() != inputs_.size())
    fail("forward: got " + std::to_string(inputs.size()) + " inputs, tape declares " +
         std::to_string(inputs_.size()));
  std::vector<Array> vals(nodes_.size());
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    if (inputs[i].shape != nodes_[inputs_[i]].shape)
      fail("forward: input " + std::to_string(i) + " shape " + shape_str(inputs[i].shape) +
           " != declared " + shape_str(nodes_[inputs_[i]].shape) + " at node " +
           std::to_string(inputs_[i]));
    vals[inputs_[i]] = inputs[i];
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    Array& out = vals[id];
    auto& ins = n.inputs;
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kConstant:
        out = n.value;
        break;
      case Op::kAdd: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::kAddBias: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        std::size_t c = b.numel();
        out = a;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i % c];
        break;
      }
      case Op::kMul: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case Op::kMulRows: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        std::size_t c = last_dim(a.shape);
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i / c];
        break;
      }
      case Op::kNeg: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = -a[i];
        break;
      }
      case Op::kExp: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a[i]);
        break;
      }
      case Op::kReciprocal: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / a[i];
        break;
      }
      case Op::kSoftplus: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = softplus_val(a[i]);
        break;
      }
      case Op::kSigmoid: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_val(a[i]);
        break;
      }
      case Op::kAbsPow: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        if (n.attr == 1.0)
          for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a[i]);
        else
          for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * a[i];
        break;
      }
      case Op::kScale: {
        const Array& a = vals[ins[0]];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * n.attr;
        break;
      }
      case Op::kSum: {
        const Array& a = vals[ins[0]];
        double s = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
        out = Array::scalar(s);
        break;
      }
      case Op::kSumAxis: {
        const Array& a = vals[ins[0]];
        const Shape& s = a.shape;
        std::size_t axis = static_cast<std::size_t>(n.axis);
        std::size_t outer = 1, inner = 1, nred = s[axis];
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        out = Array::zeros(n.shape);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t r = 0; r < nred; ++r)
            for (std::size_t i = 0; i < inner; ++i)
              out[o * inner + i] += a[(o * nred + r) * inner + i];
        break;
      }
      case Op::kCumsumExclusive: {
        const Array& a = vals[ins[0]];
        std::size_t c = last_dim(a.shape);
        std::size_t rows = a.numel() / c;
        out = Array::zeros(n.shape);
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t i = 0; i < c; ++i) {
            out[r * c + i] = acc;
            acc += a[r * c + i];
          }
        }
        break;
      }
      case Op::kReshape:
        out = Array(n.shape, vals[ins[0]].data);
        break;
      case Op::kConcatLast: {
        out = Array::zeros(n.shape);
        std::size_t ctot = n.shape.back();
        std::size_t rows = out.numel() / ctot;
        std::size_t off = 0;
        for (int p : ins) {
          const Array& a = vals[p];
          std::size_t c = a.shape.back();
          for (std::size_t r = 0; r < rows; ++r)
            std::memcpy(&out.data[r * ctot + off], &a.data[r * c], c * sizeof(double));
          off += c;
        }
        break;
      }
      case Op::kMatmul: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        std::size_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
        out = Array::zeros(n.shape);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            double av = a[i * k + kk];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < nn; ++j) out[i * nn + j] += av * b[kk * nn + j];
          }
        break;
      }
      case Op::kConv2d: {
        const Array &x = vals[ins[0]], &w = vals[ins[1]], &b = vals[ins[2]];
        std::size_t H = x.shape[0], W = x.shape[1], Ci = x.shape[2];
        std::size_t kh = w.shape[0], kw = w.shape[1], Co = w.shape[3];
        std::size_t Ho = n.shape[0], Wo = n.shape[1];
        out = Array::zeros(n.shape);
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double* orow = &out.data[(oh * Wo + ow) * Co];
            for (std::size_t co = 0; co < Co; ++co) orow[co] = b[co];
            for (std::size_t ih = 0; ih < kh; ++ih) {
              std::int64_t sy = static_cast<std::int64_t>(oh) * n.stride + ih - n.pad;
              if (sy < 0 || sy >= static_cast<std::int64_t>(H)) continue;
              for (std::size_t iw = 0; iw < kw; ++iw) {
                std::int64_t sx = static_cast<std::int64_t>(ow) * n.stride + iw - n.pad;
                if (sx < 0 || sx >= static_cast<std::int64_t>(W)) continue;
                const double* xrow = &x.data[(sy * W + sx) * Ci];
                const double* wrow = &w.data[((ih * kw + iw) * Ci) * Co];
                for (std::size_t ci = 0; ci < Ci; ++ci)
                  for (std::size_t co = 0; co < Co; ++co)
                    orow[co] += xrow[ci] * wrow[ci * Co + co];
              }
            }
          }
        break;
      }
      case Op::kConv3d: {
        const Array &x = vals[ins[0]], &w = vals[ins[1]], &b = vals[ins[2]];
        std::size_t X = x.shape[0], Y = x.shape[1], Z = x.shape[2], Ci = x.shape[3];
        std::size_t kx = w.shape[0], ky = w.shape[1], kz = w.shape[2], Co = w.shape[4];
        std::size_t Xo = n.shape[0], Yo = n.shape[1], Zo = n.shape[2];
        out = Array::zeros(n.shape);
        for (std::size_t ox = 0; ox < Xo; ++ox)
          for (std::size_t oy = 0; oy < Yo; ++oy)
            for (std::size_t oz = 0; oz < Zo; ++oz) {
              double* orow = &out.data[((ox * Yo + oy) * Zo + oz) * Co];
              for (std::size_t co = 0; co < Co; ++co) orow[co] = b[co];
              for (std::size_t ix = 0; ix < kx; ++ix) {
                std::int64_t px = static_cast<std::int64_t>(ox) + ix - n.pad;
                if (px < 0 || px >= static_cast<std::int64_t>(X)) continue;
                for (std::size_t iy = 0; iy < ky; ++iy) {
                  std::int64_t py = static_cast<std::int64_t>(oy) + iy - n.pad;
                  if (py < 0 || py >= static_cast<std::int64_t>(Y)) continue;
                  for (std::size_t iz = 0; iz < kz; ++iz) {
                    std::int64_t pz = static_cast<std::int64_t>(oz) + iz - n.pad;
                    if (pz < 0 || pz >= static_cast<std::int64_t>(Z)) continue;
                    const double* xrow = &x.data[((px * Y + py) * Z + pz) * Ci];
                    const double* wrow = &w.data[(((ix * ky + iy) * kz + iz) * Ci) * Co];
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                      for (std::size_t co = 0; co < Co; ++co)
                        orow[co] += xrow[ci] * wrow[ci * Co + co];
                  }
                }
              }
            }
        break;
      }
      case Op::kGatherRows: {
        const Array& a = vals[ins[0]];
        const RowMap& m = *n.rowmap;
        std::size_t c = n.shape[1];
        out = Array::zeros(n.shape);
        for (std::size_t r = 0; r < m.out_rows; ++r)
          for (std::size_t k = m.offsets[r]; k < m.offsets[r + 1]; ++k) {
            const double* src = &a.data[m.src[k] * c];
            double wgt = m.weight[k];
            for (std::size_t j = 0; j < c; ++j) out[r * c + j] += wgt * src[j];
          }
        break;
      }
    }
  }
  return vals;
}

ForwardBackwardResult Tape::forward_backward(const std::vector<Array>& inputs) const {
  if (loss_ < 0) fail("forward_backward: no scalar loss node set");
  std::vector<Array> vals = forward(inputs);

  for (std::size_t id = 0; id < nodes_.size(); ++id)
    for (double v : vals[id].data)
      if (!std::isfinite(v))
        fail("non-finite value at node " + std::to_string(id) + " (" + op_name(nodes_[id].op) + ")");

  std::vector<Array> grads(nodes_.size());
  auto g = [&](int id) -> Array& {
    if (grads[id].data.empty() && shape_numel(nodes_[id].shape) > 0)
      grads[id] = Array::zeros(nodes_[id].shape);
    return grads[id];
  };
  g(loss_)[0] = 1.0;

  for (int id = loss_; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (grads[id].data.empty()) continue;
    const Array& go = grads[id];
    auto& ins = n.inputs;
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
        break;
      case Op::kAdd: {
        Array &ga = g(ins[0]), &gb = g(ins[1]);
        for (std::size_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i];
          gb[i] += go[i];
        }
        break;
      }
      case Op::kAddBias: {
        Array &ga = g(ins[0]), &gb = g(ins[1]);
        std::size_t c = gb.numel();
        for (std::size_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i];
          gb[i % c] += go[i];
        }
        break;
      }
      case Op::kMul: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        Array &ga = g(ins[0]), &gb = g(ins[1]);
        for (std::size_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i] * b[i];
          gb[i] += go[i] * a[i];
        }
        break;
      }
      case Op::kMulRows: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        Array &ga = g(ins[0]), &gb = g(ins[1]);
        std::size_t c = last_dim(a.shape);
        for (std::size_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i] * b[i / c];
          gb[i / c] += go[i] * a[i];
        }
        break;
      }
      case Op::kNeg: {
        Array& ga = g(ins[0]);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] -= go[i];
        break;
      }
      case Op::kExp: {
        Array& ga = g(ins[0]);
        const Array& out = vals[id];
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * out[i];
        break;
      }
      case Op::kReciprocal: {
        Array& ga = g(ins[0]);
        const Array& out = vals[id];
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] -= go[i] * out[i] * out[i];
        break;
      }
      case Op::kSoftplus: {
        Array& ga = g(ins[0]);
        const Array& a = vals[ins[0]];
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * sigmoid_val(a[i]);
        break;
      }
      case Op::kSigmoid: {
        Array& ga = g(ins[0]);
        const Array& out = vals[id];
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * out[i] * (1.0 - out[i]);
        break;
      }
      case Op::kAbsPow: {
        Array& ga = g(ins[0]);
        const Array& a = vals[ins[0]];
        if (n.attr == 1.0) {
          // subgradient at 0 is 0
          for (std::size_t i = 0; i < go.numel(); ++i)
            ga[i] += go[i] * (a[i] > 0 ? 1.0 : (a[i] < 0 ? -1.0 : 0.0));
        } else {
          for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * 2.0 * a[i];
        }
        break;
      }
      case Op::kScale: {
        Array& ga = g(ins[0]);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * n.attr;
        break;
      }
      case Op::kSum: {
        Array& ga = g(ins[0]);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += go[0];
        break;
      }
      case Op::kSumAxis: {
        Array& ga = g(ins[0]);
        const Shape& s = nodes_[ins[0]].shape;
        std::size_t axis = static_cast<std::size_t>(n.axis);
        std::size_t outer = 1, inner = 1, nred = s[axis];
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t r = 0; r < nred; ++r)
            for (std::size_t i = 0; i < inner; ++i)
              ga[(o * nred + r) * inner + i] += go[o * inner + i];
        break;
      }
      case Op::kCumsumExclusive: {
        Array& ga = g(ins[0]);
        std::size_t c = last_dim(n.shape);
        std::size_t rows = go.numel() / c;
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t i = c; i-- > 0;) {
            ga[r * c + i] += acc;
            acc += go[r * c + i];
          }
        }
        break;
      }
      case Op::kReshape: {
        Array& ga = g(ins[0]);
        for (std::size_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        break;
      }
      case Op::kConcatLast: {
        std::size_t ctot = n.shape.back();
        std::size_t rows = go.numel() / ctot;
        std::size_t off = 0;
        for (int p : ins) {
          Array& ga = g(p);
          std::size_t c = nodes_[p].shape.back();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += go[r * ctot + off + j];
          off += c;
        }
        break;
      }
      case Op::kMatmul: {
        const Array &a = vals[ins[0]], &b = vals[ins[1]];
        Array &ga = g(ins[0]), &gb = g(ins[1]);
        std::size_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) {
            double gv = go[i * nn + j];
            if (gv == 0.0) continue;
            for (std::size_t kk = 0; kk < k; ++kk) {
              ga[i * k + kk] += gv * b[kk * nn + j];
              gb[kk * nn + j] += gv * a[i * k + kk];
            }
          }
        break;
      }
      case Op::kConv2d: {
        const Array &x = vals[ins[0]], &w = vals[ins[1]];
        Array &gx = g(ins[0]), &gw = g(ins[1]), &gb = g(ins[2]);
        std::size_t H = x.shape[0], W = x.shape[1], Ci = x.shape[2];
        std::size_t kh = w.shape[0], kw = w.shape[1], Co = w.shape[3];
        std::size_t Ho = n.shape[0], Wo = n.shape[1];
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const double* grow = &go.data[(oh * Wo + ow) * Co];
            for (std::size_t co = 0; co < Co; ++co) gb[co] += grow[co];
            for (std::size_t ih = 0; ih < kh; ++ih) {
              std::int64_t sy = static_cast<std::int64_t>(oh) * n.stride + ih - n.pad;
              if (sy < 0 || sy >= static_cast<std::int64_t>(H)) continue;
              for (std::size_t iw = 0; iw < kw; ++iw) {
                std::int64_t sx = static_cast<std::int64_t>(ow) * n.stride + iw - n.pad;
                if (sx < 0 || sx >= static_cast<std::int64_t>(W)) continue;
                const double* xrow = &x.data[(sy * W + sx) * Ci];
                double* gxrow = &gx.data[(sy * W + sx) * Ci];
                const double* wrow = &w.data[((ih * kw + iw) * Ci) * Co];
                double* gwrow = &gw.data[((ih * kw + iw) * Ci) * Co];
                for (std::size_t ci = 0; ci < Ci; ++ci)
                  for (std::size_t co = 0; co < Co; ++co) {
                    gxrow[ci] += grow[co] * wrow[ci * Co + co];
                    gwrow[ci * Co + co] += grow[co] * xrow[ci];
                  }
              }
            }
          }
        break;
      }
      case Op::kConv3d: {
        const Array &x = vals[ins[0]], &w = vals[ins[1]];
        Array &gx = g(ins[0]), &gw = g(ins[1]), &gb = g(ins[2]);
        std::size_t X = x.shape[0], Y = x.shape[1], Z = x.shape[2], Ci = x.shape[3];
        std::size_t kx = w.shape[0], ky = w.shape[1], kz = w.shape[2], Co = w.shape[4];
        std::size_t Xo = n.shape[0], Yo = n.shape[1], Zo = n.shape[2];
        for (std::size_t ox = 0; ox < Xo; ++ox)
          for (std::size_t oy = 0; oy < Yo; ++oy)
            for (std::size_t oz = 0; oz < Zo; ++oz) {
              const double* grow = &go.data[((ox * Yo + oy) * Zo + oz) * Co];
              for (std::size_t co = 0; co < Co; ++co) gb[co] += grow[co];
              for (std::size_t ix = 0; ix < kx; ++ix) {
                std::int64_t px = static_cast<std::int64_t>(ox) + ix - n.pad;
                if (px < 0 || px >= static_cast<std::int64_t>(X)) continue;
                for (std::size_t iy = 0; iy < ky; ++iy) {
                  std::int64_t py = static_cast<std::int64_t>(oy) + iy - n.pad;
                  if (py < 0 || py >= static_cast<std::int64_t>(Y)) continue;
                  for (std::size_t iz = 0; iz < kz; ++iz) {
                    std::int64_t pz = static_cast<std::int64_t>(oz) + iz - n.pad;
                    if (pz < 0 || pz >= static_cast<std::int64_t>(Z)) continue;
                    const double* xrow = &x.data[((px * Y + py) * Z + pz) * Ci];
                    double* gxrow = &gx.data[((px * Y + py) * Z + pz) * Ci];
                    const double* wrow = &w.data[(((ix * ky + iy) * kz + iz) * Ci) * Co];
                    double* gwrow = &gw.data[(((ix * ky + iy) * kz + iz) * Ci) * Co];
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                      for (std::size_t co = 0; co < Co; ++co) {
                        gxrow[ci] += grow[co] * wrow[ci * Co + co];
                        gwrow[ci * Co + co] += grow[co] * xrow[ci];
                      }
                  }
                }
              }
            }
        break;
      }
      case Op::kGatherRows: {
        Array& ga = g(ins[0]);
        const RowMap& m = *n.rowmap;
        std::size_t c = n.shape[1];
        for (std::size_t r = 0; r < m.out_rows; ++r)
          for (std::size_t k = m.offsets[r]; k < m.offsets[r + 1]; ++k) {
            double* dst = &ga.data[m.src[k] * c];
            double wgt = m.weight[k];
            for (std::size_t j = 0; j < c; ++j) dst[j] += wgt * go[r * c + j];
          }
        break;
      }
    }
  }

  ForwardBackwardResult res;
  for (int id : outputs_) res.outputs.push_back(vals[id]);
  if (outputs_.empty()) res.outputs.push_back(vals[loss_]);
  for (int id : inputs_) {
    if (grads[id].data.empty()) grads[id] = Array::zeros(nodes_[id].shape);
    res.gradients.push_back(grads[id]);
  }
  return res;
}

double Tape::check_gradients(const std::vector<Array>& point, double step) const {
  if (!(step > 0.0 && step <= 1e-2)) fail("check_gradients: step must be in (0, 1e-2]");
  if (loss_ < 0) fail("check_gradients: no scalar loss node set");
  ForwardBackwardResult fb = forward_backward(point);

  auto eval = [&](const std::vector<Array>& p) {
    std::vector<Array> vals = forward(p);
    double v = vals[loss_][0];
    if (!std::isfinite(v)) fail("non-finite loss at node " + std::to_string(loss_));
    return v;
  };

  double max_err = 0.0;
  std::vector<Array> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    for (std::size_t j = 0; j < point[i].numel(); ++j) {
      double orig = probe[i][j];
      probe[i][j] = orig + step;
      double fp = eval(probe);
      probe[i][j] = orig - step;
      double fm = eval(probe);
      probe[i][j] = orig;
      double fd = (fp - fm) / (2.0 * step);
      double an = fb.gradients[i][j];
      if (!std::isfinite(fd)) fail("non-finite finite-difference at input " + std::to_string(i));
      double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace nsmae::ndgrad
