#include "ofdft/tape.hpp"

#include <cmath>
#include <utility>

namespace ofdft::tape {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779;  // 1 / sqrt(2 pi)

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

const MatrixXd& TapeValue::value() const { return tape->value(id); }
int TapeValue::rows() const { return static_cast<int>(value().rows()); }
int TapeValue::cols() const { return static_cast<int>(value().cols()); }

double TapeValue::scalar() const {
  const MatrixXd& v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw contract_error("TapeValue::scalar on a non-1x1 node");
  return v(0, 0);
}

TapeValue Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return handle(static_cast<int>(nodes_.size()) - 1);
}

void Tape::check(TapeValue v) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw contract_error("TapeValue does not belong to this tape");
}

TapeValue Tape::input(const MatrixXd& v) {
  Node n;
  n.value = v;
  n.op = Op::kInput;
  return push(std::move(n));
}

TapeValue Tape::constant(const MatrixXd& v) {
  Node n;
  n.value = v;
  n.op = Op::kConst;
  return push(std::move(n));
}

TapeValue Tape::constant(double v) {
  MatrixXd m(1, 1);
  m(0, 0) = v;
  return constant(m);
}

TapeValue Tape::add(TapeValue a, TapeValue b) {
  check(a);
  check(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw contract_error("tape add: shape mismatch");
  Node n;
  n.value = a.value() + b.value();
  n.op = Op::kAdd;
  n.parents = {a.id, b.id};
  return push(std::move(n));
}

TapeValue Tape::sub(TapeValue a, TapeValue b) {
  check(a);
  check(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw contract_error("tape sub: shape mismatch");
  Node n;
  n.value = a.value() - b.value();
  n.op = Op::kSub;
  n.parents = {a.id, b.id};
  return push(std::move(n));
}

TapeValue Tape::matmul(TapeValue a, TapeValue b) {
  check(a);
  check(b);
  if (a.cols() != b.rows()) throw contract_error("tape matmul: inner dimension mismatch");
  Node n;
  n.value = a.value() * b.value();
  n.op = Op::kMatmul;
  n.parents = {a.id, b.id};
  return push(std::move(n));
}

TapeValue Tape::transpose(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().transpose();
  n.op = Op::kTranspose;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::hadamard(TapeValue a, TapeValue b) {
  check(a);
  check(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw contract_error("tape hadamard: shape mismatch");
  Node n;
  n.value = a.value().cwiseProduct(b.value());
  n.op = Op::kHadamard;
  n.parents = {a.id, b.id};
  return push(std::move(n));
}

TapeValue Tape::scale(TapeValue a, double c) {
  check(a);
  Node n;
  n.value = c * a.value();
  n.op = Op::kScale;
  n.parents = {a.id};
  n.c = c;
  return push(std::move(n));
}

TapeValue Tape::shift(TapeValue a, double c) {
  check(a);
  Node n;
  n.value = a.value().array() + c;
  n.op = Op::kShift;
  n.parents = {a.id};
  n.c = c;
  return push(std::move(n));
}

TapeValue Tape::broadcast_mul(TapeValue s, TapeValue a) {
  check(s);
  check(a);
  if (s.rows() != 1 || s.cols() != 1)
    throw contract_error("tape broadcast_mul: scalar operand must be 1x1");
  Node n;
  n.value = s.value()(0, 0) * a.value();
  n.op = Op::kBroadcastMul;
  n.parents = {s.id, a.id};
  return push(std::move(n));
}

TapeValue Tape::block(TapeValue a, int r0, int c0, int nr, int nc) {
  check(a);
  if (r0 < 0 || c0 < 0 || nr < 0 || nc < 0 || r0 + nr > a.rows() || c0 + nc > a.cols())
    throw contract_error("tape block: out of range");
  Node n;
  n.value = a.value().block(r0, c0, nr, nc);
  n.op = Op::kBlock;
  n.parents = {a.id};
  n.geo = {r0, c0, nr, nc};
  return push(std::move(n));
}

TapeValue Tape::embed(TapeValue a, int rows, int cols, int r0, int c0) {
  check(a);
  if (r0 < 0 || c0 < 0 || r0 + a.rows() > rows || c0 + a.cols() > cols)
    throw contract_error("tape embed: target region out of range");
  Node n;
  n.value = MatrixXd::Zero(rows, cols);
  n.value.block(r0, c0, a.rows(), a.cols()) = a.value();
  n.op = Op::kEmbed;
  n.parents = {a.id};
  n.geo = {r0, c0, a.rows(), a.cols()};
  return push(std::move(n));
}

TapeValue Tape::vconcat(const std::vector<TapeValue>& parts) {
  if (parts.empty()) throw contract_error("tape vconcat: no parts");
  int cols = parts.front().cols();
  int rows = 0;
  Node n;
  for (TapeValue p : parts) {
    check(p);
    if (p.cols() != cols) throw contract_error("tape vconcat: column count mismatch");
    rows += p.rows();
    n.parents.push_back(p.id);
  }
  n.value.resize(rows, cols);
  int r = 0;
  for (TapeValue p : parts) {
    n.value.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  n.op = Op::kVconcat;
  return push(std::move(n));
}

TapeValue Tape::reshape(TapeValue a, int rows, int cols) {
  check(a);
  if (static_cast<long>(rows) * cols != static_cast<long>(a.rows()) * a.cols())
    throw contract_error("tape reshape: element count mismatch");
  Node n;
  n.value = Eigen::Map<const MatrixXd>(a.value().data(), rows, cols);
  n.op = Op::kReshape;
  n.parents = {a.id};
  n.geo = {rows, cols, 0, 0};
  return push(std::move(n));
}

TapeValue Tape::tanh(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().tanh();
  n.op = Op::kTanh;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::square(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().square();
  n.op = Op::kSquare;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::exp(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().exp();
  n.op = Op::kExp;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::reciprocal(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().inverse();
  n.op = Op::kReciprocal;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::sqrt(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().sqrt();
  n.op = Op::kSqrt;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::abs(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().array().abs();
  n.op = Op::kAbs;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::gelu(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().unaryExpr([](double x) { return x * norm_cdf(x); });
  n.op = Op::kGelu;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::gelu_d(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().unaryExpr([](double x) { return norm_cdf(x) + x * norm_pdf(x); });
  n.op = Op::kGeluD;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::gelu_dd(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().unaryExpr([](double x) { return (2.0 - x * x) * norm_pdf(x); });
  n.op = Op::kGeluDD;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::gelu_d3(TapeValue a) {
  check(a);
  Node n;
  n.value = a.value().unaryExpr([](double x) { return x * (x * x - 4.0) * norm_pdf(x); });
  n.op = Op::kGeluD3;
  n.parents = {a.id};
  return push(std::move(n));
}

TapeValue Tape::sum(TapeValue a) {
  TapeValue left = constant(MatrixXd::Ones(1, a.rows()));
  TapeValue right = constant(MatrixXd::Ones(a.cols(), 1));
  return matmul(matmul(left, a), right);
}

TapeValue Tape::row_sums(TapeValue a) {
  return matmul(a, constant(MatrixXd::Ones(a.cols(), 1)));
}

TapeValue Tape::col_sums(TapeValue a) {
  return matmul(constant(MatrixXd::Ones(1, a.rows())), a);
}

TapeValue Tape::norm2(TapeValue a) { return sqrt(sum(square(a))); }

TapeValue Tape::softmax_rows(TapeValue a) {
  check(a);
  VectorXd rowmax = a.value().rowwise().maxCoeff();
  TapeValue centered = sub(a, constant(rowmax * Eigen::RowVectorXd::Ones(a.cols())));
  TapeValue e = exp(centered);
  TapeValue inv = reciprocal(row_sums(e));
  return hadamard(e, matmul(inv, constant(MatrixXd::Ones(1, a.cols()))));
}

void Tape::accumulate(std::vector<int>& adj, int target, TapeValue g) {
  if (adj[target] < 0)
    adj[target] = g.id;
  else
    adj[target] = add(handle(adj[target]), g).id;
}

std::vector<TapeValue> Tape::gradients(TapeValue y, const std::vector<TapeValue>& xs) {
  check(y);
  if (y.rows() != 1 || y.cols() != 1)
    throw contract_error("tape gradients: sweep root must be 1x1");
  for (TapeValue x : xs) check(x);

  std::vector<int> adj(nodes_.size(), -1);
  int sweep_end = y.id;  // nodes emitted below must not be swept themselves
  adj[y.id] = constant(MatrixXd::Ones(1, 1)).id;

  for (int i = sweep_end; i >= 0; --i) {
    if (adj[i] < 0) continue;
    // The node list grows while emitting; re-read the descriptor each time.
    Op op = nodes_[i].op;
    std::vector<int> parents = nodes_[i].parents;
    double c = nodes_[i].c;
    std::array<int, 4> geo = nodes_[i].geo;
    TapeValue g = handle(adj[i]);
    TapeValue out = handle(i);
    switch (op) {
      case Op::kInput:
      case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(adj, parents[0], g);
        accumulate(adj, parents[1], g);
        break;
      case Op::kSub:
        accumulate(adj, parents[0], g);
        accumulate(adj, parents[1], scale(g, -1.0));
        break;
      case Op::kMatmul:
        accumulate(adj, parents[0], matmul(g, transpose(handle(parents[1]))));
        accumulate(adj, parents[1], matmul(transpose(handle(parents[0])), g));
        break;
      case Op::kTranspose:
        accumulate(adj, parents[0], transpose(g));
        break;
      case Op::kHadamard:
        accumulate(adj, parents[0], hadamard(g, handle(parents[1])));
        accumulate(adj, parents[1], hadamard(g, handle(parents[0])));
        break;
      case Op::kScale:
        accumulate(adj, parents[0], scale(g, c));
        break;
      case Op::kShift:
        accumulate(adj, parents[0], g);
        break;
      case Op::kBroadcastMul:
        accumulate(adj, parents[0], sum(hadamard(g, handle(parents[1]))));
        accumulate(adj, parents[1], broadcast_mul(handle(parents[0]), g));
        break;
      case Op::kBlock: {
        int pr = static_cast<int>(nodes_[parents[0]].value.rows());
        int pc = static_cast<int>(nodes_[parents[0]].value.cols());
        accumulate(adj, parents[0], embed(g, pr, pc, geo[0], geo[1]));
        break;
      }
      case Op::kEmbed:
        accumulate(adj, parents[0], block(g, geo[0], geo[1], geo[2], geo[3]));
        break;
      case Op::kVconcat: {
        int r = 0;
        for (int pid : parents) {
          int pr = static_cast<int>(nodes_[pid].value.rows());
          accumulate(adj, pid, block(g, r, 0, pr, g.cols()));
          r += pr;
        }
        break;
      }
      case Op::kReshape: {
        int pr = static_cast<int>(nodes_[parents[0]].value.rows());
        int pc = static_cast<int>(nodes_[parents[0]].value.cols());
        accumulate(adj, parents[0], reshape(g, pr, pc));
        break;
      }
      case Op::kTanh:
        // d tanh = 1 - tanh^2, reusing the forward output node
        accumulate(adj, parents[0], hadamard(g, shift(scale(square(out), -1.0), 1.0)));
        break;
      case Op::kSquare:
        accumulate(adj, parents[0], hadamard(g, scale(handle(parents[0]), 2.0)));
        break;
      case Op::kExp:
        accumulate(adj, parents[0], hadamard(g, out));
        break;
      case Op::kReciprocal:
        accumulate(adj, parents[0], scale(hadamard(g, square(out)), -1.0));
        break;
      case Op::kSqrt:
        accumulate(adj, parents[0], scale(hadamard(g, reciprocal(out)), 0.5));
        break;
      case Op::kAbs: {
        MatrixXd sign = nodes_[parents[0]].value.unaryExpr(
            [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        accumulate(adj, parents[0], hadamard(g, constant(sign)));
        break;
      }
      case Op::kGelu:
        accumulate(adj, parents[0], hadamard(g, gelu_d(handle(parents[0]))));
        break;
      case Op::kGeluD:
        accumulate(adj, parents[0], hadamard(g, gelu_dd(handle(parents[0]))));
        break;
      case Op::kGeluDD:
        accumulate(adj, parents[0], hadamard(g, gelu_d3(handle(parents[0]))));
        break;
      case Op::kGeluD3:
        throw contract_error("tape gradients: fourth-order gelu derivative is not supported");
    }
  }

  std::vector<TapeValue> out;
  out.reserve(xs.size());
  for (TapeValue x : xs) {
    if (adj[x.id] >= 0)
      out.push_back(handle(adj[x.id]));
    else
      out.push_back(constant(MatrixXd::Zero(x.rows(), x.cols())));
  }
  return out;
}

}  // namespace ofdft::tape
