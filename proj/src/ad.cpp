#include "lfi/ad.hpp"

#include <cmath>
#include <utility>

#include "lfi/errors.hpp"

namespace lfi::ad {

namespace {

bool broadcastable(Eigen::Index a, Eigen::Index b) {
  return a == b || a == 1 || b == 1;
}

Matrix broadcast_apply(const Matrix& a, const Matrix& b,
                       double (*f)(double, double)) {
  if (!broadcastable(a.rows(), b.rows()) || !broadcastable(a.cols(), b.cols()))
    throw ShapeError("elementwise op on incompatible shapes");
  const Eigen::Index rows = std::max(a.rows(), b.rows());
  const Eigen::Index cols = std::max(a.cols(), b.cols());
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Eigen::Index aj = a.cols() == 1 ? 0 : j;
    const Eigen::Index bj = b.cols() == 1 ? 0 : j;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index ai = a.rows() == 1 ? 0 : i;
      const Eigen::Index bi = b.rows() == 1 ? 0 : i;
      out(i, j) = f(a(ai, aj), b(bi, bj));
    }
  }
  return out;
}

// Sums a gradient over the dimensions an operand was broadcast along.
Matrix reduce_to(const Matrix& grad, Eigen::Index rows, Eigen::Index cols) {
  Matrix out = grad;
  if (rows == 1 && out.rows() > 1) {
    Matrix reduced = out.colwise().sum();
    out = std::move(reduced);
  }
  if (cols == 1 && out.cols() > 1) {
    Matrix reduced = out.rowwise().sum();
    out = std::move(reduced);
  }
  return out;
}

double f_add(double x, double y) { return x + y; }
double f_sub(double x, double y) { return x - y; }
double f_mul(double x, double y) { return x * y; }
double f_div(double x, double y) { return x / y; }

// Lower triangle with halved diagonal; the elementwise mask adjoint to the
// Cholesky forward differential.
Matrix phi(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::StrictlyLower>();
  out.diagonal() = 0.5 * m.diagonal();
  return out;
}

}  // namespace

int Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw StateError("tape node handle out of range");
}

int Tape::unary(Op op, int a, Matrix value, double daux, Eigen::Index iaux) {
  check(a);
  Node n;
  n.op = op;
  n.a = a;
  n.daux = daux;
  n.iaux = iaux;
  n.value = std::move(value);
  n.grad = nodes_[static_cast<std::size_t>(a)].grad;
  return push(std::move(n));
}

int Tape::binary(Op op, int a, int b, Matrix value, Eigen::Index iaux) {
  check(a);
  check(b);
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.iaux = iaux;
  n.value = std::move(value);
  n.grad = nodes_[static_cast<std::size_t>(a)].grad ||
           nodes_[static_cast<std::size_t>(b)].grad;
  return push(std::move(n));
}

int Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  n.grad = false;
  return push(std::move(n));
}

int Tape::parameter(Matrix value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  n.grad = true;
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  return binary(Op::kAdd, a, b,
                broadcast_apply(value(a), value(b), f_add));
}

int Tape::sub(int a, int b) {
  return binary(Op::kSub, a, b,
                broadcast_apply(value(a), value(b), f_sub));
}

int Tape::mul(int a, int b) {
  return binary(Op::kMul, a, b,
                broadcast_apply(value(a), value(b), f_mul));
}

int Tape::div(int a, int b) {
  return binary(Op::kDiv, a, b,
                broadcast_apply(value(a), value(b), f_div));
}

int Tape::matmul(int a, int b) {
  if (value(a).cols() != value(b).rows())
    throw ShapeError("matmul inner dimensions differ");
  return binary(Op::kMatMul, a, b, value(a) * value(b));
}

int Tape::transpose(int a) {
  return unary(Op::kTranspose, a, value(a).transpose());
}

int Tape::exp(int a) {
  return unary(Op::kExp, a, value(a).array().exp().matrix());
}

int Tape::log(int a) {
  return unary(Op::kLog, a, value(a).array().log().matrix());
}

int Tape::sqrt(int a) {
  return unary(Op::kSqrt, a, value(a).array().sqrt().matrix());
}

int Tape::square(int a) {
  return unary(Op::kSquare, a, value(a).array().square().matrix());
}

int Tape::neg(int a) { return unary(Op::kNeg, a, -value(a)); }

int Tape::scale(int a, double c) {
  return unary(Op::kScale, a, c * value(a), c);
}

int Tape::add_scalar(int a, double c) {
  return unary(Op::kAddScalar, a, (value(a).array() + c).matrix(), c);
}

int Tape::clamp_min(int a, double floor) {
  return unary(Op::kClampMin, a, value(a).cwiseMax(floor), floor);
}

int Tape::sum(int a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return unary(Op::kSum, a, std::move(out));
}

int Tape::rowsum(int a) {
  return unary(Op::kRowSum, a, value(a).rowwise().sum());
}

int Tape::colsum(int a) {
  return unary(Op::kColSum, a, value(a).colwise().sum());
}

int Tape::diag_part(int a) {
  return unary(Op::kDiagPart, a, value(a).diagonal());
}

int Tape::logsumexp_rows(int a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return unary(Op::kLogSumExpRows, a, std::move(out));
}

int Tape::reshape(int a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& x = value(a);
  if (rows * cols != x.size())
    throw ShapeError("reshape changes the element count");
  Matrix out = Eigen::Map<const Matrix>(x.data(), rows, cols);
  return unary(Op::kReshape, a, std::move(out));
}

int Tape::concat_cols(int a, int b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  if (x.rows() != y.rows())
    throw ShapeError("column concatenation with different row counts");
  Matrix out(x.rows(), x.cols() + y.cols());
  out << x, y;
  return binary(Op::kConcatCols, a, b, std::move(out), x.cols());
}

int Tape::tile_rows(int a, int copies) {
  if (copies < 1) throw ShapeError("tile requires at least one copy");
  const Matrix& x = value(a);
  Matrix out(x.rows() * copies, x.cols());
  for (int c = 0; c < copies; ++c)
    out.middleRows(c * x.rows(), x.rows()) = x;
  return unary(Op::kTileRows, a, std::move(out), 0.0, copies);
}

int Tape::tril(int a) {
  Matrix out = value(a).triangularView<Eigen::Lower>();
  return unary(Op::kTril, a, std::move(out));
}

int Tape::cholesky(int a) {
  const Matrix& x = value(a);
  if (x.rows() != x.cols()) throw ShapeError("cholesky of non-square matrix");
  Eigen::LLT<Matrix> llt(x);
  if (llt.info() != Eigen::Success)
    throw NumericalFailureError("matrix factorization failed on the tape");
  return unary(Op::kCholesky, a, llt.matrixL());
}

int Tape::solve_lower(int l, int b) {
  const Matrix& lm = value(l);
  if (lm.rows() != lm.cols() || lm.rows() != value(b).rows())
    throw ShapeError("triangular solve with mismatched shapes");
  Matrix out =
      lm.triangularView<Eigen::Lower>().solve(value(b));
  return binary(Op::kSolveLower, l, b, std::move(out));
}

int Tape::solve_lower_t(int l, int b) {
  const Matrix& lm = value(l);
  if (lm.rows() != lm.cols() || lm.rows() != value(b).rows())
    throw ShapeError("triangular solve with mismatched shapes");
  Matrix out =
      lm.triangularView<Eigen::Lower>().transpose().solve(value(b));
  return binary(Op::kSolveLowerT, l, b, std::move(out));
}

const Matrix& Tape::value(int id) const {
  check(id);
  return nodes_[static_cast<std::size_t>(id)].value;
}

bool Tape::requires_grad(int id) const {
  check(id);
  return nodes_[static_cast<std::size_t>(id)].grad;
}

void Tape::accumulate(int id, const Matrix& grad) {
  if (!nodes_[static_cast<std::size_t>(id)].grad) return;
  Matrix& slot = adjoints_[static_cast<std::size_t>(id)];
  if (slot.size() == 0)
    slot = grad;
  else
    slot += grad;
}

Matrix Tape::adjoint(int id) const {
  check(id);
  if (!backward_done_) throw StateError("adjoint requested before backward");
  const Matrix& slot = adjoints_[static_cast<std::size_t>(id)];
  if (slot.size() == 0)
    return Matrix::Zero(nodes_[static_cast<std::size_t>(id)].value.rows(),
                        nodes_[static_cast<std::size_t>(id)].value.cols());
  return slot;
}

void Tape::backward(int root) {
  check(root);
  if (backward_done_) throw StateError("backward already ran on this tape");
  if (value(root).size() != 1)
    throw ShapeError("backward root must be a scalar node");
  backward_done_ = true;
  adjoints_.assign(nodes_.size(), Matrix());
  adjoints_[static_cast<std::size_t>(root)] = Matrix::Ones(1, 1);

  for (int id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad) continue;
    const Matrix& g = adjoints_[static_cast<std::size_t>(id)];
    if (g.size() == 0) continue;
    const auto va = [&]() -> const Matrix& { return value(n.a); };
    const auto vb = [&]() -> const Matrix& { return value(n.b); };

    switch (n.op) {
      case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(n.a, reduce_to(g, va().rows(), va().cols()));
        accumulate(n.b, reduce_to(g, vb().rows(), vb().cols()));
        break;
      case Op::kSub:
        accumulate(n.a, reduce_to(g, va().rows(), va().cols()));
        accumulate(n.b, reduce_to(-g, vb().rows(), vb().cols()));
        break;
      case Op::kMul: {
        accumulate(n.a, reduce_to(broadcast_apply(g, vb(), f_mul), va().rows(),
                                  va().cols()));
        accumulate(n.b, reduce_to(broadcast_apply(g, va(), f_mul), vb().rows(),
                                  vb().cols()));
        break;
      }
      case Op::kDiv: {
        accumulate(n.a, reduce_to(broadcast_apply(g, vb(), f_div), va().rows(),
                                  va().cols()));
        const Matrix gb = broadcast_apply(
            broadcast_apply(g, n.value, f_mul), vb(), f_div);
        accumulate(n.b, reduce_to(-gb, vb().rows(), vb().cols()));
        break;
      }
      case Op::kMatMul:
        accumulate(n.a, g * vb().transpose());
        accumulate(n.b, va().transpose() * g);
        break;
      case Op::kTranspose:
        accumulate(n.a, g.transpose());
        break;
      case Op::kExp:
        accumulate(n.a, (g.array() * n.value.array()).matrix());
        break;
      case Op::kLog:
        accumulate(n.a, (g.array() / va().array()).matrix());
        break;
      case Op::kSqrt:
        accumulate(n.a, (0.5 * g.array() / n.value.array()).matrix());
        break;
      case Op::kSquare:
        accumulate(n.a, (2.0 * g.array() * va().array()).matrix());
        break;
      case Op::kNeg:
        accumulate(n.a, -g);
        break;
      case Op::kScale:
        accumulate(n.a, n.daux * g);
        break;
      case Op::kAddScalar:
        accumulate(n.a, g);
        break;
      case Op::kClampMin: {
        const Matrix mask =
            (va().array() > n.daux).cast<double>().matrix();
        accumulate(n.a, (g.array() * mask.array()).matrix());
        break;
      }
      case Op::kSum:
        accumulate(n.a, Matrix::Constant(va().rows(), va().cols(), g(0, 0)));
        break;
      case Op::kRowSum:
        accumulate(n.a, g.replicate(1, va().cols()));
        break;
      case Op::kColSum:
        accumulate(n.a, g.replicate(va().rows(), 1));
        break;
      case Op::kDiagPart: {
        Matrix ga = Matrix::Zero(va().rows(), va().cols());
        ga.diagonal() = g.col(0);
        accumulate(n.a, std::move(ga));
        break;
      }
      case Op::kLogSumExpRows: {
        Matrix ga(va().rows(), va().cols());
        for (Eigen::Index i = 0; i < ga.rows(); ++i)
          ga.row(i) =
              g(i, 0) * (va().row(i).array() - n.value(i, 0)).exp().matrix();
        accumulate(n.a, std::move(ga));
        break;
      }
      case Op::kReshape: {
        Matrix ga = Eigen::Map<const Matrix>(g.data(), va().rows(), va().cols());
        accumulate(n.a, std::move(ga));
        break;
      }
      case Op::kConcatCols:
        accumulate(n.a, g.leftCols(n.iaux));
        accumulate(n.b, g.rightCols(g.cols() - n.iaux));
        break;
      case Op::kTileRows: {
        Matrix ga = Matrix::Zero(va().rows(), va().cols());
        for (Eigen::Index c = 0; c < n.iaux; ++c)
          ga += g.middleRows(c * va().rows(), va().rows());
        accumulate(n.a, std::move(ga));
        break;
      }
      case Op::kTril: {
        Matrix ga = g.triangularView<Eigen::Lower>();
        accumulate(n.a, std::move(ga));
        break;
      }
      case Op::kCholesky: {
        // Murray's backward pass: with C = phi(L^T Lbar), the input adjoint
        // is the symmetrized L^{-T} C L^{-1}.
        const Matrix& l = n.value;
        const Matrix lbar = g.triangularView<Eigen::Lower>();
        const Matrix c = phi(l.transpose() * lbar);
        const Matrix s1 =
            l.triangularView<Eigen::Lower>().transpose().solve(c);
        const Matrix s2 = l.triangularView<Eigen::Lower>()
                              .transpose()
                              .solve(s1.transpose());
        const Matrix w = s2.transpose();
        accumulate(n.a, 0.5 * (w + w.transpose()));
        break;
      }
      case Op::kSolveLower: {
        // y = L^{-1} b: bbar = L^{-T} g, Lbar = -bbar y^T.
        const Matrix bbar =
            va().triangularView<Eigen::Lower>().transpose().solve(g);
        accumulate(n.b, bbar);
        accumulate(n.a, -bbar * n.value.transpose());
        break;
      }
      case Op::kSolveLowerT: {
        // y = L^{-T} b: bbar = L^{-1} g, Lbar = -y bbar^T.
        const Matrix bbar = va().triangularView<Eigen::Lower>().solve(g);
        accumulate(n.b, bbar);
        accumulate(n.a, -n.value * bbar.transpose());
        break;
      }
    }
  }
}

}  // namespace lfi::ad
