#pragma once

#include <array>
#include <vector>

#include "ofdft/common.hpp"

namespace ofdft::tape {

class Tape;

// Handle to one recorded node: a dense matrix value plus its position in the
// operation graph. Handles stay valid for the lifetime of the owning Tape.
struct TapeValue {
  Tape* tape = nullptr;
  int id = -1;

  const MatrixXd& value() const;
  int rows() const;
  int cols() const;
  double scalar() const;  // 1x1 convenience; contract_error otherwise
};

// Eager reverse-mode differentiation over dense matrices. Every operation
// computes its value immediately and records its parents; `gradients` emits
// the reverse sweep as ordinary tape operations, so first-order gradients are
// themselves differentiable nodes. That closure is what lets a training loss
// penalize the model's own coefficient gradient and still receive exact
// parameter derivatives from one more sweep.
class Tape {
 public:
  // Leaves. `input` participates in sweeps; `constant` is held fixed.
  TapeValue input(const MatrixXd& v);
  TapeValue constant(const MatrixXd& v);
  TapeValue constant(double v);  // 1x1

  // Arithmetic. add/sub/hadamard require equal shapes.
  TapeValue add(TapeValue a, TapeValue b);
  TapeValue sub(TapeValue a, TapeValue b);
  TapeValue matmul(TapeValue a, TapeValue b);
  TapeValue transpose(TapeValue a);
  TapeValue hadamard(TapeValue a, TapeValue b);
  TapeValue scale(TapeValue a, double c);          // c * a
  TapeValue shift(TapeValue a, double c);          // a + c elementwise
  TapeValue broadcast_mul(TapeValue s, TapeValue a);  // (1x1 s) * a

  // Shape surgery.
  TapeValue block(TapeValue a, int r0, int c0, int nr, int nc);
  // Place `a` inside a rows x cols zero matrix at (r0, c0).
  TapeValue embed(TapeValue a, int rows, int cols, int r0, int c0);
  TapeValue vconcat(const std::vector<TapeValue>& parts);  // equal column counts
  TapeValue reshape(TapeValue a, int rows, int cols);      // column-major order

  // Elementwise nonlinearities. abs differentiates against the sign recorded
  // at evaluation time (constant during sweeps).
  TapeValue tanh(TapeValue a);
  TapeValue square(TapeValue a);
  TapeValue exp(TapeValue a);
  TapeValue reciprocal(TapeValue a);
  TapeValue sqrt(TapeValue a);
  TapeValue abs(TapeValue a);
  TapeValue gelu(TapeValue a);  // x * Phi(x), exact erf form

  // Composites assembled from the primitives above.
  TapeValue sum(TapeValue a);        // 1x1 total
  TapeValue row_sums(TapeValue a);   // column vector
  TapeValue col_sums(TapeValue a);   // row vector
  TapeValue norm2(TapeValue a);      // sqrt of the sum of squares
  // Softmax over each row. The per-row maximum is subtracted as a detached
  // constant for numerical stability.
  TapeValue softmax_rows(TapeValue a);

  // Reverse sweep from the 1x1 node y. Returns one adjoint per requested x,
  // a zero matrix when y does not depend on it. The emitted adjoints are
  // ordinary nodes and can be swept again for second-order derivatives.
  std::vector<TapeValue> gradients(TapeValue y, const std::vector<TapeValue>& xs);

  int size() const { return static_cast<int>(nodes_.size()); }
  const MatrixXd& value(int id) const { return nodes_[id].value; }

 private:
  enum class Op {
    kInput,
    kConst,
    kAdd,
    kSub,
    kMatmul,
    kTranspose,
    kHadamard,
    kScale,
    kShift,
    kBroadcastMul,
    kBlock,
    kEmbed,
    kVconcat,
    kReshape,
    kTanh,
    kSquare,
    kExp,
    kReciprocal,
    kSqrt,
    kAbs,
    kGelu,
    kGeluD,
    kGeluDD,
    kGeluD3,
  };

  struct Node {
    MatrixXd value;
    Op op = Op::kConst;
    std::vector<int> parents;
    double c = 0.0;          // scalar for kScale/kShift
    std::array<int, 4> geo;  // block/embed/reshape geometry
  };

  TapeValue push(Node n);
  TapeValue gelu_d(TapeValue a);
  TapeValue gelu_dd(TapeValue a);
  TapeValue gelu_d3(TapeValue a);
  TapeValue handle(int id) { return TapeValue{this, id}; }
  void check(TapeValue v) const;
  // Accumulate `g` into the running adjoint of node `target`.
  void accumulate(std::vector<int>& adj, int target, TapeValue g);

  std::vector<Node> nodes_;
};

}  // namespace ofdft::tape
