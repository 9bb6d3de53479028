#include "vtg/autodiff.hpp"

#include "vtg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace vtg::ad {

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::Shape, std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " +
                               shape(b.value()));
  }
}

void accumulate(Tape& t, const Var& v, const Matrix& g) {
  if (t.needs_grad(v.id())) t.grad(v.id()) += g;
}

template <typename Fn, typename DFn>
Var unary(const Var& a, Fn fn, DFn dfn) {
  Matrix out = a.value().unaryExpr(fn);
  return a.tape().record(out, {a}, [a, dfn](Tape& t, const Matrix& g) {
    t.grad(a.id()).array() += g.array() * t.value(a.id()).unaryExpr(dfn).array();
  });
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Mask full_mask(Index n) { return Mask(static_cast<size_t>(n), 1); }

Index count_valid(const Mask& mask) {
  return static_cast<Index>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
}

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad(id_);
  return Matrix::Zero(rows(), cols());
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) fail(ErrorCode::Shape, "scalar(): expected 1x1, got " + shape(v));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant_scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::leaf(Parameter& param) {
  nodes_.push_back(Node{param.value, Matrix(), nullptr, &param, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || needs_grad(v.id());
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || needs_grad(v.id());
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record_with_output(Matrix value, std::initializer_list<Var> inputs, BackwardWithOutput backward) {
  Var res = record(std::move(value), inputs, nullptr);
  Node& n = nodes_.back();
  if (n.requires_grad) {
    const int id = res.id();
    n.backward = [fn = std::move(backward), id](Tape& t, const Matrix& g) { fn(t, g, t.value(id)); };
  }
  return res;
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& root) {
  if (root.value().size() != 1) fail(ErrorCode::Shape, "backward(): root must be a scalar");
  if (!needs_grad(root.id())) return;
  grad(root.id()).setConstant(1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::Shape, "matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  Matrix out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.grad(a.id()).noalias() += g * t.value(b.id()).transpose();
    if (t.needs_grad(b.id())) t.grad(b.id()).noalias() += t.value(a.id()).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::Shape, "matmul_nt: " + shape(a.value()) + " * T(" + shape(b.value()) + ")");
  }
  Matrix out = a.value() * b.value().transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.grad(a.id()).noalias() += g * t.value(b.id());
    if (t.needs_grad(b.id())) t.grad(b.id()).noalias() += g.transpose() * t.value(a.id());
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a.id()) += g.transpose();
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    if (t.needs_grad(b.id())) t.grad(b.id()) -= g;
  });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.grad(a.id()) += g.cwiseProduct(t.value(b.id()));
    if (t.needs_grad(b.id())) t.grad(b.id()) += g.cwiseProduct(t.value(a.id()));
  });
}

Var divide(const Var& a, const Var& b) {
  check_same_shape(a, b, "divide");
  Matrix out = a.value().cwiseQuotient(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& bv = t.value(b.id());
    if (t.needs_grad(a.id())) t.grad(a.id()) += g.cwiseQuotient(bv);
    if (t.needs_grad(b.id())) {
      t.grad(b.id()).array() -= g.array() * t.value(a.id()).array() / bv.array().square();
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    fail(ErrorCode::Shape, "add_row: " + shape(a.value()) + " + " + shape(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    if (t.needs_grad(row.id())) t.grad(row.id()) += g.colwise().sum();
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    fail(ErrorCode::Shape, "mul_row: " + shape(a.value()) + " * " + shape(row.value()));
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) {
      t.grad(a.id()).array() += g.array().rowwise() * t.value(row.id()).row(0).array();
    }
    if (t.needs_grad(row.id())) {
      t.grad(row.id()) += g.cwiseProduct(t.value(a.id())).colwise().sum();
    }
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    fail(ErrorCode::Shape, "mul_col: " + shape(a.value()) + " * " + shape(col.value()));
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape().record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) {
      t.grad(a.id()).array() += g.array().colwise() * t.value(col.id()).col(0).array();
    }
    if (t.needs_grad(col.id())) {
      t.grad(col.id()) += g.cwiseProduct(t.value(a.id())).rowwise().sum();
    }
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) { t.grad(a.id()) += g * s; });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) { t.grad(a.id()) += g; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return a.tape().record_with_output(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.grad(a.id()).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var open_sigmoid(const Var& a) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  Matrix out = a.value().unaryExpr([&](double x) { return std::clamp(stable_sigmoid(x), lo, hi); });
  return a.tape().record_with_output(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.grad(a.id()).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var softplus(const Var& a) {
  return unary(a, [](double x) { return stable_softplus(x); }, [](double x) { return stable_sigmoid(x); });
}

Var sin(const Var& a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var minimum(const Var& a, const Var& b) {
  check_same_shape(a, b, "minimum");
  Matrix out = a.value().cwiseMin(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a.id());
    const Matrix& bv = t.value(b.id());
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) {
        const bool pick_a = av(i, j) <= bv(i, j);
        if (pick_a && t.needs_grad(a.id())) t.grad(a.id())(i, j) += g(i, j);
        if (!pick_a && t.needs_grad(b.id())) t.grad(b.id())(i, j) += g(i, j);
      }
    }
  });
}

Var maximum(const Var& a, const Var& b) {
  check_same_shape(a, b, "maximum");
  Matrix out = a.value().cwiseMax(b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a.id());
    const Matrix& bv = t.value(b.id());
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) {
        const bool pick_a = av(i, j) >= bv(i, j);
        if (pick_a && t.needs_grad(a.id())) t.grad(a.id())(i, j) += g(i, j);
        if (!pick_a && t.needs_grad(b.id())) t.grad(b.id())(i, j) += g(i, j);
      }
    }
  });
}

// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a.id()).array() += g(0, 0);
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a.id()).colwise() += g.col(0);
  });
}

Var diagonal(const Var& a) {
  if (a.rows() != a.cols()) fail(ErrorCode::Shape, "diagonal: matrix not square " + shape(a.value()));
  Matrix out = a.value().diagonal();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a.id()).diagonal() += g.col(0);
  });
}

Var masked_mean_rows(const Var& a, const Mask& row_mask) {
  if (static_cast<Index>(row_mask.size()) != a.rows()) fail(ErrorCode::Shape, "masked_mean_rows: mask size");
  const Index n = count_valid(row_mask);
  if (n == 0) fail(ErrorCode::InvalidArgument, "masked_mean_rows: no valid rows");
  Matrix out = Matrix::Zero(1, a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    if (row_mask[static_cast<size_t>(i)]) out += a.value().row(i);
  }
  out /= static_cast<double>(n);
  return a.tape().record(std::move(out), {a}, [a, row_mask, n](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a.id());
    for (Index i = 0; i < ga.rows(); ++i) {
      if (row_mask[static_cast<size_t>(i)]) ga.row(i) += g.row(0) / static_cast<double>(n);
    }
  });
}

Var masked_max_rows(const Var& a, const Mask& row_mask) {
  if (static_cast<Index>(row_mask.size()) != a.rows()) fail(ErrorCode::Shape, "masked_max_rows: mask size");
  if (count_valid(row_mask) == 0) fail(ErrorCode::InvalidArgument, "masked_max_rows: no valid rows");
  const Matrix& v = a.value();
  Matrix out(1, v.cols());
  std::vector<Index> arg(static_cast<size_t>(v.cols()), -1);
  for (Index c = 0; c < v.cols(); ++c) {
    double best = -std::numeric_limits<double>::infinity();
    for (Index r = 0; r < v.rows(); ++r) {
      if (row_mask[static_cast<size_t>(r)] && (arg[static_cast<size_t>(c)] < 0 || v(r, c) > best)) {
        best = v(r, c);
        arg[static_cast<size_t>(c)] = r;
      }
    }
    out(0, c) = best;
  }
  return a.tape().record(std::move(out), {a}, [a, arg](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a.id());
    for (Index c = 0; c < g.cols(); ++c) ga(arg[static_cast<size_t>(c)], c) += g(0, c);
  });
}

Var weighted_sum(const Var& a, const Matrix& weights) {
  if (weights.rows() != a.rows() || weights.cols() != a.cols()) {
    fail(ErrorCode::Shape, "weighted_sum: weights " + shape(weights) + " vs " + shape(a.value()));
  }
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return a.tape().record(std::move(out), {a}, [a, weights](Tape& t, const Matrix& g) {
    t.grad(a.id()) += weights * g(0, 0);
  });
}

Var logsumexp(const Var& a, const Mask& select) {
  const Matrix& v = a.value();
  if (static_cast<Index>(select.size()) != v.size()) fail(ErrorCode::Shape, "logsumexp: select size");
  double mx = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < v.size(); ++i) {
    if (select[static_cast<size_t>(i)]) mx = std::max(mx, v.data()[i]);
  }
  if (!std::isfinite(mx)) fail(ErrorCode::InvalidArgument, "logsumexp: empty selection");
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (select[static_cast<size_t>(i)]) s += std::exp(v.data()[i] - mx);
  }
  Matrix out(1, 1);
  out(0, 0) = mx + std::log(s);
  const double lse = out(0, 0);
  return a.tape().record(std::move(out), {a}, [a, select, lse](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(a.id());
    Matrix& ga = t.grad(a.id());
    for (Index i = 0; i < v.size(); ++i) {
      if (select[static_cast<size_t>(i)]) ga.data()[i] += g(0, 0) * std::exp(v.data()[i] - lse);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    const double lse = mx + std::log((v.row(r).array() - mx).exp().sum());
    out.row(r) = v.row(r).array() - lse;
  }
  return a.tape().record_with_output(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    Matrix& ga = t.grad(a.id());
    for (Index r = 0; r < g.rows(); ++r) {
      const double gs = g.row(r).sum();
      ga.row(r).array() += g.row(r).array() - y.row(r).array().exp() * gs;
    }
  });
}

Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) fail(ErrorCode::Shape, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index off = 0;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts, offsets](Tape& t, const Matrix& g) {
    for (size_t i = 0; i < parts.size(); ++i) {
      if (t.needs_grad(parts[i].id())) {
        t.grad(parts[i].id()) += g.middleCols(offsets[i], t.value(parts[i].id()).cols());
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) fail(ErrorCode::Shape, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index off = 0;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return parts.front().tape().record(std::move(out), parts, [parts, offsets](Tape& t, const Matrix& g) {
    for (size_t i = 0; i < parts.size(); ++i) {
      if (t.needs_grad(parts[i].id())) {
        t.grad(parts[i].id()) += g.middleRows(offsets[i], t.value(parts[i].id()).rows());
      }
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) fail(ErrorCode::Shape, "slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    t.grad(a.id()).middleRows(start, count) += g;
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) fail(ErrorCode::Shape, "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    t.grad(a.id()).middleCols(start, count) += g;
  });
}

Var element(const Var& a, Index r, Index c) {
  if (r < 0 || c < 0 || r >= a.rows() || c >= a.cols()) fail(ErrorCode::Shape, "element: out of range");
  Matrix out(1, 1);
  out(0, 0) = a.value()(r, c);
  return a.tape().record(std::move(out), {a}, [a, r, c](Tape& t, const Matrix& g) {
    t.grad(a.id())(r, c) += g(0, 0);
  });
}

Var gather_rows(const Var& a, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) fail(ErrorCode::Shape, "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return a.tape().record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a.id());
    for (size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
  });
}

// ---------------------------------------------------------------------------

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    fail(ErrorCode::Shape, "layer_norm: gain/bias must be 1x" + std::to_string(c));
  }
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), c);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  return x.tape().record(
      std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& g) {
        if (t.needs_grad(gain.id())) t.grad(gain.id()) += g.cwiseProduct(xhat).colwise().sum();
        if (t.needs_grad(bias.id())) t.grad(bias.id()) += g.colwise().sum();
        if (t.needs_grad(x.id())) {
          Matrix dxhat = g.array().rowwise() * t.value(gain.id()).row(0).array();
          Matrix& gx = t.grad(x.id());
          for (Index r = 0; r < g.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            gx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

Var dropout(const Var& a, double p, std::mt19937_64* rng) {
  if (p <= 0.0 || rng == nullptr) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return a.tape().record(std::move(out), {a}, [a, mask](Tape& t, const Matrix& g) {
    t.grad(a.id()) += g.cwiseProduct(mask);
  });
}

Var attention_weights(const Var& q, const Var& k, const Mask& key_mask, int heads) {
  const Index n = q.rows();
  const Index m = k.rows();
  const Index d = q.cols();
  if (k.cols() != d) fail(ErrorCode::Shape, "attention_weights: q/k width mismatch");
  if (heads <= 0 || d % heads != 0) fail(ErrorCode::Shape, "attention_weights: heads must divide width");
  if (static_cast<Index>(key_mask.size()) != m) fail(ErrorCode::Shape, "attention_weights: key mask size");
  if (count_valid(key_mask) == 0) fail(ErrorCode::InvalidArgument, "attention_weights: all keys masked");
  const Index dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix out = Matrix::Zero(n, heads * m);
  for (int h = 0; h < heads; ++h) {
    Matrix logits = q.value().middleCols(h * dk, dk) * k.value().middleCols(h * dk, dk).transpose() * inv_sqrt;
    for (Index r = 0; r < n; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j < m; ++j) {
        if (key_mask[static_cast<size_t>(j)]) mx = std::max(mx, logits(r, j));
      }
      double s = 0.0;
      for (Index j = 0; j < m; ++j) {
        if (key_mask[static_cast<size_t>(j)]) {
          const double e = std::exp(logits(r, j) - mx);
          out(r, h * m + j) = e;
          s += e;
        }
      }
      out.block(r, h * m, 1, m) /= s;
    }
  }
  return q.tape().record_with_output(std::move(out), {q, k}, [q, k, heads, dk, m, inv_sqrt](Tape& t, const Matrix& g, const Matrix& p) {
    const Matrix& qv = t.value(q.id());
    const Matrix& kv = t.value(k.id());
    for (int h = 0; h < heads; ++h) {
      const auto ph = p.middleCols(h * m, m);
      const auto gh = g.middleCols(h * m, m);
      Matrix ds = ph.cwiseProduct(gh);
      const Eigen::VectorXd rs = ds.rowwise().sum();
      ds -= (ph.array().colwise() * rs.array()).matrix();
      ds *= inv_sqrt;
      if (t.needs_grad(q.id())) t.grad(q.id()).middleCols(h * dk, dk).noalias() += ds * kv.middleCols(h * dk, dk);
      if (t.needs_grad(k.id())) {
        t.grad(k.id()).middleCols(h * dk, dk).noalias() += ds.transpose() * qv.middleCols(h * dk, dk);
      }
    }
  });
}

Var attention_apply(const Var& weights, const Var& v, int heads) {
  const Index m = v.rows();
  const Index d = v.cols();
  if (heads <= 0 || d % heads != 0) fail(ErrorCode::Shape, "attention_apply: heads must divide width");
  if (weights.cols() != heads * m) fail(ErrorCode::Shape, "attention_apply: weight/value mismatch");
  const Index dk = d / heads;
  const Index n = weights.rows();
  Matrix out(n, d);
  for (int h = 0; h < heads; ++h) {
    out.middleCols(h * dk, dk).noalias() = weights.value().middleCols(h * m, m) * v.value().middleCols(h * dk, dk);
  }
  return weights.tape().record(std::move(out), {weights, v}, [weights, v, heads, dk, m](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(weights.id());
    const Matrix& vv = t.value(v.id());
    for (int h = 0; h < heads; ++h) {
      if (t.needs_grad(weights.id())) {
        t.grad(weights.id()).middleCols(h * m, m).noalias() +=
            g.middleCols(h * dk, dk) * vv.middleCols(h * dk, dk).transpose();
      }
      if (t.needs_grad(v.id())) {
        t.grad(v.id()).middleCols(h * dk, dk).noalias() += p.middleCols(h * m, m).transpose() * g.middleCols(h * dk, dk);
      }
    }
  });
}

Var head_mean(const Var& weights, int heads) {
  if (heads <= 0 || weights.cols() % heads != 0) fail(ErrorCode::Shape, "head_mean: bad head count");
  const Index m = weights.cols() / heads;
  Matrix out = Matrix::Zero(weights.rows(), m);
  for (int h = 0; h < heads; ++h) out += weights.value().middleCols(h * m, m);
  out /= static_cast<double>(heads);
  return weights.tape().record(std::move(out), {weights}, [weights, heads, m](Tape& t, const Matrix& g) {
    Matrix& gw = t.grad(weights.id());
    for (int h = 0; h < heads; ++h) gw.middleCols(h * m, m) += g / static_cast<double>(heads);
  });
}

Var minmax_normalize(const Var& a, const Mask& col_mask) {
  const Matrix& v = a.value();
  if (static_cast<Index>(col_mask.size()) != v.cols()) fail(ErrorCode::Shape, "minmax_normalize: mask size");
  if (count_valid(col_mask) == 0) fail(ErrorCode::InvalidArgument, "minmax_normalize: no valid entries");
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  std::vector<Index> argmin(static_cast<size_t>(v.rows())), argmax(static_cast<size_t>(v.rows()));
  std::vector<double> range(static_cast<size_t>(v.rows()));
  for (Index r = 0; r < v.rows(); ++r) {
    Index lo = -1, hi = -1;
    for (Index c = 0; c < v.cols(); ++c) {
      if (!col_mask[static_cast<size_t>(c)]) continue;
      if (lo < 0 || v(r, c) < v(r, lo)) lo = c;
      if (hi < 0 || v(r, c) > v(r, hi)) hi = c;
    }
    const double span = v(r, hi) - v(r, lo);
    argmin[static_cast<size_t>(r)] = lo;
    argmax[static_cast<size_t>(r)] = hi;
    range[static_cast<size_t>(r)] = span;
    for (Index c = 0; c < v.cols(); ++c) {
      if (!col_mask[static_cast<size_t>(c)]) continue;
      out(r, c) = span > 1e-12 ? (v(r, c) - v(r, lo)) / span : 1.0;
    }
    if (span > 1e-12) {
      // Pin the extremes so 0 and 1 are attained exactly.
      out(r, lo) = 0.0;
      out(r, hi) = 1.0;
    }
  }
  return a.tape().record_with_output(
      std::move(out), {a}, [a, col_mask, argmin, argmax, range](Tape& t, const Matrix& g, const Matrix& y) {
    Matrix& ga = t.grad(a.id());
    for (Index r = 0; r < g.rows(); ++r) {
      const double span = range[static_cast<size_t>(r)];
      if (!(span > 1e-12)) continue;
      double to_min = 0.0, to_max = 0.0;
      for (Index c = 0; c < g.cols(); ++c) {
        if (!col_mask[static_cast<size_t>(c)]) continue;
        ga(r, c) += g(r, c) / span;
        to_min += g(r, c) * (y(r, c) - 1.0) / span;
        to_max -= g(r, c) * y(r, c) / span;
      }
      ga(r, argmin[static_cast<size_t>(r)]) += to_min;
      ga(r, argmax[static_cast<size_t>(r)]) += to_max;
    }
  });
}

double grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params) {
    if (p->grad.size() > 0) s += p->grad.squaredNorm();
  }
  return std::sqrt(s);
}

}  // namespace vtg::ad
