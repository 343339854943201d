#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace lfi::ad {

using Matrix = Eigen::MatrixXd;

// Reverse-mode differentiation tape over dense matrices. Nodes are created
// through the op builders below and referenced by integer handles; backward()
// fills adjoints for every node that (transitively) depends on a parameter.
// Elementwise binary ops broadcast along any dimension of size 1.
class Tape {
 public:
  int constant(Matrix value);
  int parameter(Matrix value);

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int matmul(int a, int b);
  int transpose(int a);
  int exp(int a);
  int log(int a);
  int sqrt(int a);
  int square(int a);
  int neg(int a);
  int scale(int a, double c);
  int add_scalar(int a, double c);
  int clamp_min(int a, double floor);
  int sum(int a);
  int rowsum(int a);
  int colsum(int a);
  int diag_part(int a);
  int logsumexp_rows(int a);
  int reshape(int a, Eigen::Index rows, Eigen::Index cols);
  int concat_cols(int a, int b);
  int tile_rows(int a, int copies);
  int tril(int a);
  int cholesky(int a);
  // Solutions of L x = b and L^T x = b for lower-triangular L.
  int solve_lower(int l, int b);
  int solve_lower_t(int l, int b);

  const Matrix& value(int id) const;
  bool requires_grad(int id) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates adjoints from a 1x1 root. May be called once per tape.
  void backward(int root);
  // Adjoint of a node after backward(); zeros if the node was not reached.
  Matrix adjoint(int id) const;

 private:
  enum class Op {
    kConst,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kMatMul,
    kTranspose,
    kExp,
    kLog,
    kSqrt,
    kSquare,
    kNeg,
    kScale,
    kAddScalar,
    kClampMin,
    kSum,
    kRowSum,
    kColSum,
    kDiagPart,
    kLogSumExpRows,
    kReshape,
    kConcatCols,
    kTileRows,
    kTril,
    kCholesky,
    kSolveLower,
    kSolveLowerT,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double daux = 0.0;
    Eigen::Index iaux = 0;
    Matrix value;
    bool grad = false;
  };

  int push(Node node);
  int unary(Op op, int a, Matrix value, double daux = 0.0,
            Eigen::Index iaux = 0);
  int binary(Op op, int a, int b, Matrix value, Eigen::Index iaux = 0);
  void accumulate(int id, const Matrix& grad);
  void check(int id) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
  bool backward_done_ = false;
};

}  // namespace lfi::ad
