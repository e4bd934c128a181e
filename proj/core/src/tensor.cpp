#include "amda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace amda {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr double kBceEps = 1e-7;
constexpr double kNormEps = 1e-8;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

// True when the backward step should run at all: the output actually
// received a gradient (dead branches are skipped).
bool has_upstream(const NodePtr& out) { return !out->grad.empty(); }

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw DimensionError(std::string(op) + ": " + msg);
}

} // namespace

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  n->value.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), fill);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor::from: shape " + shape_string(shape) +
                         " does not hold " + std::to_string(data.size()) +
                         " values");
  }
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
  return node_->shape.size() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  const Shape& s = node_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  throw DimensionError("cols(): tensor of shape " + shape_string(s) +
                       " has no 2-D view");
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item(): tensor of shape " + shape_string(shape()) +
                         " is not a scalar");
  }
  return node_->value[0];
}

// ---- Tape -------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("Tape::backward: loss of shape " +
                         shape_string(loss.shape()) + " is not a scalar");
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---- matmul kernels ---------------------------------------------------------

namespace detail {

void mm_nn_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      const double* bt = b + t * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bt[j];
    }
  }
}

void mm_nt_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * m;
    double* ci = c + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double* bt = b + t * m;
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += ai[j] * bt[j];
      ci[t] += acc;
    }
  }
}

void mm_tn_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      double* ct = c + t * m;
      for (std::size_t j = 0; j < m; ++j) ct[j] += av * bi[j];
    }
  }
}

} // namespace detail

// ---- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul", "expects rank-2 operands, got " +
          shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t n = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t m = b.shape()[1];

  Tensor out = Tensor::zeros({n, m}, a.requires_grad() || b.requires_grad());
  detail::mm_nn_acc(a.values().data(), b.values().data(), out.values().data(),
                    n, k, m);
  check_finite(out.values(), "matmul");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([an = a.node(), bn = b.node(), on = out.node(), n, k, m] {
      if (!has_upstream(on)) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        detail::mm_nt_acc(g, bn->value.data(), an->grad.data(), n, m, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::mm_tn_acc(an->value.data(), g, bn->grad.data(), n, k, m);
      }
    });
  }
  return out;
}

namespace {

enum class EwKind { Add, Sub, Mul };

const char* ew_name(EwKind k) {
  switch (k) {
    case EwKind::Add: return "add";
    case EwKind::Sub: return "sub";
    case EwKind::Mul: return "mul";
  }
  return "?";
}

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
  const bool same = a.shape() == b.shape();
  // Row broadcast: b is [m] or [1,m], a is [n,m].
  const bool row_bcast = !same && a.rank() == 2 && b.size() == a.shape()[1] &&
                         (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1));
  if (!same && !row_bcast) {
    throw DimensionError(std::string(ew_name(kind)) + ": incompatible shapes " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }

  Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t total = a.size();
  const std::size_t m = row_bcast ? b.size() : 0;
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < total; ++i) {
    const double bv = row_bcast ? pb[i % m] : pb[i];
    switch (kind) {
      case EwKind::Add: po[i] = pa[i] + bv; break;
      case EwKind::Sub: po[i] = pa[i] - bv; break;
      case EwKind::Mul: po[i] = pa[i] * bv; break;
    }
  }
  check_finite(out.values(), ew_name(kind));

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([an = a.node(), bn = b.node(), on = out.node(), kind, row_bcast, m] {
      if (!has_upstream(on)) return;
      const double* g = on->grad.data();
      const std::size_t total = on->value.size();
      if (an->requires_grad) {
        an->ensure_grad();
        double* ga = an->grad.data();
        if (kind == EwKind::Mul) {
          const double* pb = bn->value.data();
          for (std::size_t i = 0; i < total; ++i)
            ga[i] += g[i] * (row_bcast ? pb[i % m] : pb[i]);
        } else {
          for (std::size_t i = 0; i < total; ++i) ga[i] += g[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        const double sign = kind == EwKind::Sub ? -1.0 : 1.0;
        const double* pa = an->value.data();
        for (std::size_t i = 0; i < total; ++i) {
          const std::size_t bi = row_bcast ? i % m : i;
          gb[bi] += kind == EwKind::Mul ? g[i] * pa[i] : sign * g[i];
        }
      }
    });
  }
  return out;
}

Tensor elementwise_scalar(const Tensor& a, double b, EwKind kind) {
  Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
  const double* pa = a.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (kind) {
      case EwKind::Add: po[i] = pa[i] + b; break;
      case EwKind::Sub: po[i] = pa[i] - b; break;
      case EwKind::Mul: po[i] = pa[i] * b; break;
    }
  }
  check_finite(out.values(), ew_name(kind));

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([an = a.node(), on = out.node(), b, kind] {
      if (!has_upstream(on) || !an->requires_grad) return;
      an->ensure_grad();
      const double* g = on->grad.data();
      double* ga = an->grad.data();
      const double factor = kind == EwKind::Mul ? b : 1.0;
      for (std::size_t i = 0; i < on->value.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Mul); }
Tensor add(const Tensor& a, double b) { return elementwise_scalar(a, b, EwKind::Add); }
Tensor sub(const Tensor& a, double b) { return elementwise_scalar(a, b, EwKind::Sub); }
Tensor mul(const Tensor& a, double b) { return elementwise_scalar(a, b, EwKind::Mul); }

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  check_finite(out.values(), "relu");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node()] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* px = xn->value.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->value.size(); ++i)
        if (px[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = px[i];
    po[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                     : std::exp(v) / (1.0 + std::exp(v));
  }
  check_finite(out.values(), "sigmoid");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node()] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* s = on->value.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->value.size(); ++i)
        gx[i] += g[i] * s[i] * (1.0 - s[i]);
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(x.shape()));
  }
  // View the tensor as [outer, len, inner] with `len` along the softmax axis.
  std::size_t len = x.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];

  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = px[base];
      for (std::size_t l = 1; l < len; ++l)
        mx = std::max(mx, px[base + l * inner]);
      double denom = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(px[base + l * inner] - mx);
        po[base + l * inner] = e;
        denom += e;
      }
      for (std::size_t l = 0; l < len; ++l) po[base + l * inner] /= denom;
    }
  }
  check_finite(out.values(), "softmax");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), outer, len, inner] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      const double* s = on->value.data();
      double* gx = xn->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            dot += g[idx] * s[idx];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            gx[idx] += s[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor gradient_reversal(const Tensor& x, double weight) {
  if (!(weight > 0.0)) {
    throw ConfigError("gradient_reversal: weight must be positive, got " +
                      std::to_string(weight));
  }
  Tensor out = Tensor::from(x.shape(), x.values(), x.requires_grad());

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), weight] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->value.size(); ++i) gx[i] += -weight * g[i];
    });
  }
  return out;
}

Tensor masked_mean(const Tensor& x, const BoolMask& mask) {
  require(x.rank() == 2, "masked_mean", "expects rank-2 input, got " +
          shape_string(x.shape()));
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (mask.size() != n) {
    throw DimensionError("masked_mean: mask length " +
                         std::to_string(mask.size()) + " vs " +
                         std::to_string(n) + " rows");
  }
  std::size_t count = 0;
  for (std::uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw DegenerateInputError("masked_mean: all-false mask");

  Tensor out = Tensor::zeros({d}, x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) po[j] += px[i * d + j];
  }
  for (std::size_t j = 0; j < d; ++j) po[j] /= static_cast<double>(count);
  check_finite(out.values(), "masked_mean");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), mask, n, d, count] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
      }
    });
  }
  return out;
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  require(u.rank() == 1 && v.rank() == 1 && u.size() == v.size(),
          "cosine_similarity", "expects equal-length vectors, got " +
          shape_string(u.shape()) + " and " + shape_string(v.shape()));
  const std::size_t d = u.size();
  const double* pu = u.values().data();
  const double* pv = v.values().data();
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += pu[i] * pv[i];
    nu2 += pu[i] * pu[i];
    nv2 += pv[i] * pv[i];
  }
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  if (nu <= kNormEps || nv <= kNormEps) {
    throw DegenerateInputError("cosine_similarity: vector norm below 1e-8");
  }
  const double cosv = dot / (nu * nv);

  Tensor out = Tensor::scalar(cosv, u.requires_grad() || v.requires_grad());
  check_finite(out.values(), "cosine_similarity");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([un = u.node(), vn = v.node(), on = out.node(), nu, nv, cosv, d] {
      if (!has_upstream(on)) return;
      const double g = on->grad[0];
      const double* pu = un->value.data();
      const double* pv = vn->value.data();
      if (un->requires_grad) {
        un->ensure_grad();
        double* gu = un->grad.data();
        for (std::size_t i = 0; i < d; ++i)
          gu[i] += g * (pv[i] / (nu * nv) - cosv * pu[i] / (nu * nu));
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        double* gv = vn->grad.data();
        for (std::size_t i = 0; i < d; ++i)
          gv[i] += g * (pu[i] / (nu * nv) - cosv * pv[i] / (nv * nv));
      }
    });
  }
  return out;
}

Tensor row_cosine_matrix(const Tensor& a, const Tensor& b,
                         const BoolMask& a_valid, const BoolMask& b_valid) {
  require(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[1],
          "row_cosine_matrix", "expects [n,d] and [m,d], got " +
          shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
  if (!a_valid.empty() && a_valid.size() != n)
    throw DimensionError("row_cosine_matrix: a_valid length mismatch");
  if (!b_valid.empty() && b_valid.size() != m)
    throw DimensionError("row_cosine_matrix: b_valid length mismatch");

  auto included = [](const BoolMask& mask, std::size_t i) {
    return mask.empty() || mask[i];
  };

  std::vector<double> na(n, 0.0), nb(m, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!included(a_valid, i)) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += pa[i * d + j] * pa[i * d + j];
    na[i] = std::sqrt(s);
    if (na[i] <= kNormEps)
      throw DegenerateInputError("row_cosine_matrix: near-zero-norm row " +
                                 std::to_string(i) + " in left input");
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!included(b_valid, j)) continue;
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += pb[j * d + t] * pb[j * d + t];
    nb[j] = std::sqrt(s);
    if (nb[j] <= kNormEps)
      throw DegenerateInputError("row_cosine_matrix: near-zero-norm row " +
                                 std::to_string(j) + " in right input");
  }

  Tensor out = Tensor::zeros({n, m}, a.requires_grad() || b.requires_grad());
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!included(a_valid, i)) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (!included(b_valid, j)) continue;
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += pa[i * d + t] * pb[j * d + t];
      po[i * m + j] = dot / (na[i] * nb[j]);
    }
  }
  check_finite(out.values(), "row_cosine_matrix");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([an = a.node(), bn = b.node(), on = out.node(), a_valid, b_valid,
               na, nb, n, m, d, included] {
      if (!has_upstream(on)) return;
      const double* g = on->grad.data();
      const double* s = on->value.data();
      const double* pa = an->value.data();
      const double* pb = bn->value.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* ga = an->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
          if (!included(a_valid, i)) continue;
          for (std::size_t j = 0; j < m; ++j) {
            if (!included(b_valid, j)) continue;
            const double gij = g[i * m + j];
            if (gij == 0.0) continue;
            const double sij = s[i * m + j];
            for (std::size_t t = 0; t < d; ++t) {
              ga[i * d + t] += gij * (pb[j * d + t] / (na[i] * nb[j]) -
                                      sij * pa[i * d + t] / (na[i] * na[i]));
            }
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        for (std::size_t i = 0; i < n; ++i) {
          if (!included(a_valid, i)) continue;
          for (std::size_t j = 0; j < m; ++j) {
            if (!included(b_valid, j)) continue;
            const double gij = g[i * m + j];
            if (gij == 0.0) continue;
            const double sij = s[i * m + j];
            for (std::size_t t = 0; t < d; ++t) {
              gb[j * d + t] += gij * (pa[i * d + t] / (na[i] * nb[j]) -
                                      sij * pb[j * d + t] / (nb[j] * nb[j]));
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require(x.rank() == 2, "conv1d", "signal must be [n,c_in], got " +
          shape_string(x.shape()));
  require(kernel.rank() == 3, "conv1d", "kernel must be [k,c_in,c_out], got " +
          shape_string(kernel.shape()));
  const std::size_t n = x.shape()[0], cin = x.shape()[1];
  const std::size_t k = kernel.shape()[0];
  if (k % 2 == 0) {
    throw ConfigError("conv1d: kernel width must be odd, got " +
                      std::to_string(k));
  }
  if (kernel.shape()[1] != cin) {
    throw DimensionError("conv1d: kernel expects " +
                         std::to_string(kernel.shape()[1]) +
                         " input channels, signal has " + std::to_string(cin));
  }
  const std::size_t cout = kernel.shape()[2];
  require(bias.rank() == 1 && bias.size() == cout, "conv1d",
          "bias must be [c_out], got " + shape_string(bias.shape()));
  const std::size_t pad = (k - 1) / 2;

  Tensor out = Tensor::zeros({n, cout}, x.requires_grad() ||
                             kernel.requires_grad() || bias.requires_grad());
  const double* px = x.values().data();
  const double* pk = kernel.values().data();
  const double* pbias = bias.values().data();
  double* po = out.values().data();
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t o = 0; o < cout; ++o) po[t * cout + o] = pbias[o];
    for (std::size_t dk = 0; dk < k; ++dk) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + dk) -
                                 static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xv = px[src * cin + ci];
        const double* kr = pk + (dk * cin + ci) * cout;
        for (std::size_t o = 0; o < cout; ++o) po[t * cout + o] += xv * kr[o];
      }
    }
  }
  check_finite(out.values(), "conv1d");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), kn = kernel.node(), bn = bias.node(),
               on = out.node(), n, cin, cout, k, pad] {
      if (!has_upstream(on)) return;
      const double* g = on->grad.data();
      const double* px = xn->value.data();
      const double* pk = kn->value.data();
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        for (std::size_t t2 = 0; t2 < n; ++t2)
          for (std::size_t o = 0; o < cout; ++o) gb[o] += g[t2 * cout + o];
      }
      for (std::size_t t2 = 0; t2 < n; ++t2) {
        for (std::size_t dk = 0; dk < k; ++dk) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t2 + dk) -
                                     static_cast<std::ptrdiff_t>(pad);
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* kr = pk + (dk * cin + ci) * cout;
            const double* gr = g + t2 * cout;
            if (xn->requires_grad) {
              xn->ensure_grad();
              double acc = 0.0;
              for (std::size_t o = 0; o < cout; ++o) acc += kr[o] * gr[o];
              xn->grad[src * cin + ci] += acc;
            }
            if (kn->requires_grad) {
              kn->ensure_grad();
              const double xv = px[src * cin + ci];
              double* gk = kn->grad.data() + (dk * cin + ci) * cout;
              for (std::size_t o = 0; o < cout; ++o) gk[o] += xv * gr[o];
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

Tensor bce_impl(const Tensor& pred, const Tensor& target, const BoolMask* mask) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("bce_loss: shape mismatch, " +
                         shape_string(pred.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  if (mask && mask->size() != pred.size()) {
    throw DimensionError("bce_loss: mask length " +
                         std::to_string(mask->size()) + " vs " +
                         std::to_string(pred.size()) + " entries");
  }
  std::size_t count = 0;
  if (mask) {
    for (std::uint8_t m : *mask) count += m ? 1 : 0;
    if (count == 0) throw DegenerateInputError("bce_loss: all-false mask");
  } else {
    count = pred.size();
  }

  const double* pp = pred.values().data();
  const double* pt = target.values().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double p = std::clamp(pp[i], kBceEps, 1.0 - kBceEps);
    acc += -(pt[i] * std::log(p) + (1.0 - pt[i]) * std::log(1.0 - p));
  }
  acc /= static_cast<double>(count);

  Tensor out = Tensor::scalar(acc, pred.requires_grad() || target.requires_grad());
  check_finite(out.values(), "bce_loss");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    BoolMask mask_copy = mask ? *mask : BoolMask{};
    t->record([pn = pred.node(), tn = target.node(), on = out.node(),
               mask_copy = std::move(mask_copy), count] {
      if (!has_upstream(on)) return;
      const double g = on->grad[0] / static_cast<double>(count);
      const double* pp = pn->value.data();
      const double* pt = tn->value.data();
      if (pn->requires_grad) {
        pn->ensure_grad();
        double* gp = pn->grad.data();
        for (std::size_t i = 0; i < pn->value.size(); ++i) {
          if (!mask_copy.empty() && !mask_copy[i]) continue;
          // Clamp is part of the op: saturated predictions get zero slope.
          if (pp[i] < kBceEps || pp[i] > 1.0 - kBceEps) continue;
          gp[i] += g * (-pt[i] / pp[i] + (1.0 - pt[i]) / (1.0 - pp[i]));
        }
      }
      if (tn->requires_grad) {
        tn->ensure_grad();
        double* gt = tn->grad.data();
        for (std::size_t i = 0; i < tn->value.size(); ++i) {
          if (!mask_copy.empty() && !mask_copy[i]) continue;
          const double p = std::clamp(pp[i], kBceEps, 1.0 - kBceEps);
          gt[i] += g * (std::log(1.0 - p) - std::log(p));
        }
      }
    });
  }
  return out;
}

} // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  return bce_impl(pred, target, nullptr);
}

Tensor bce_loss(const Tensor& pred, const Tensor& target, const BoolMask& mask) {
  return bce_impl(pred, target, &mask);
}

namespace {

Tensor mse_impl(const Tensor& a, const Tensor& b, const BoolMask* row_valid) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse_loss: shape mismatch, " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t n = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t w = a.size() / n;
  if (row_valid && row_valid->size() != n) {
    throw DimensionError("mse_loss: row mask length mismatch");
  }
  std::size_t rows_in = n;
  if (row_valid) {
    rows_in = 0;
    for (std::uint8_t m : *row_valid) rows_in += m ? 1 : 0;
    if (rows_in == 0) throw DegenerateInputError("mse_loss: all-false row mask");
  }
  const double denom = static_cast<double>(rows_in * w);

  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (row_valid && !(*row_valid)[i]) continue;
    for (std::size_t j = 0; j < w; ++j) {
      const double dv = pa[i * w + j] - pb[i * w + j];
      acc += dv * dv;
    }
  }
  acc /= denom;

  Tensor out = Tensor::scalar(acc, a.requires_grad() || b.requires_grad());
  check_finite(out.values(), "mse_loss");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    BoolMask mask_copy = row_valid ? *row_valid : BoolMask{};
    t->record([an = a.node(), bn = b.node(), on = out.node(),
               mask_copy = std::move(mask_copy), n, w, denom] {
      if (!has_upstream(on)) return;
      const double g = on->grad[0] * 2.0 / denom;
      const double* pa = an->value.data();
      const double* pb = bn->value.data();
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask_copy.empty() && !mask_copy[i]) continue;
        for (std::size_t j = 0; j < w; ++j) {
          const double dv = g * (pa[i * w + j] - pb[i * w + j]);
          if (an->requires_grad) {
            an->ensure_grad();
            an->grad[i * w + j] += dv;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[i * w + j] -= dv;
          }
        }
      }
    });
  }
  return out;
}

} // namespace

Tensor mse_loss(const Tensor& a, const Tensor& b) { return mse_impl(a, b, nullptr); }

Tensor mse_loss_rows(const Tensor& a, const Tensor& b, const BoolMask& row_valid) {
  return mse_impl(a, b, &row_valid);
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose", "expects rank-2 input, got " +
          shape_string(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Tensor out = Tensor::zeros({m, n}, x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) po[j * n + i] = px[i * m + j];

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), n, m] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) +
                         " as " + shape_string(shape));
  }
  Tensor out = Tensor::from(std::move(shape), x.values(), x.requires_grad());

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node()] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->value.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  require(x.rank() == 2, "slice_cols", "expects rank-2 input, got " +
          shape_string(x.shape()));
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (!(c0 < c1 && c1 <= m)) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " +
                         shape_string(x.shape()));
  }
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::zeros({n, w}, x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) po[i * w + j] = px[i * m + c0 + j];

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), n, m, w, c0] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) gx[i * m + c0 + j] += g[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: empty input list");
  const std::size_t n = xs[0].rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Tensor& x : xs) {
    require(x.rank() == 2 && x.shape()[0] == n, "concat_cols",
            "row counts differ: " + shape_string(x.shape()));
    total += x.shape()[1];
    needs_grad = needs_grad || x.requires_grad();
  }
  Tensor out = Tensor::zeros({n, total}, needs_grad);
  double* po = out.values().data();
  std::size_t col = 0;
  for (const Tensor& x : xs) {
    const std::size_t w = x.shape()[1];
    const double* px = x.values().data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) po[i * total + col + j] = px[i * w + j];
    col += w;
  }

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    std::vector<NodePtr> nodes;
    nodes.reserve(xs.size());
    for (const Tensor& x : xs) nodes.push_back(x.node());
    t->record([nodes = std::move(nodes), on = out.node(), n, total] {
      if (!has_upstream(on)) return;
      const double* g = on->grad.data();
      std::size_t col = 0;
      for (const NodePtr& xn : nodes) {
        const std::size_t w = xn->shape[1];
        if (xn->requires_grad) {
          xn->ensure_grad();
          double* gx = xn->grad.data();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j)
              gx[i * w + j] += g[i * total + col + j];
        }
        col += w;
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc, x.requires_grad());
  check_finite(out.values(), "sum");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node()] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double g = on->grad[0];
      for (double& gv : xn->grad) gv += g;
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0,1), got " +
                      std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;

  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (double& m : *mask) m = unif(rng) < keep ? scale : 0.0;

  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  const double* px = x.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] * (*mask)[i];
  check_finite(out.values(), "dropout");

  if (Tape* t = Tape::active(); t && out.requires_grad()) {
    t->record([xn = x.node(), on = out.node(), mask] {
      if (!has_upstream(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* g = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->value.size(); ++i)
        gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

} // namespace amda
