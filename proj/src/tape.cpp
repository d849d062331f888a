#include "latcert/tape.hpp"

#include <cmath>

#include "latcert/error.hpp"
#include "latcert/kernels.hpp"
#include "latcert/statcore.hpp"

namespace latcert {

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  if (consumed_) throw UsageError("tape already differentiated");
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::cached_constant(const std::string& key, const Tensor& value) {
  if (auto it = constants_.find(key); it != constants_.end()) return Var(this, it->second);
  Var v = constant(value);
  constants_.emplace(key, v.id());
  return v;
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (consumed_) throw UsageError("tape already differentiated");
  if (auto it = parameters_.find(name); it != parameters_.end()) return Var(this, it->second);
  nodes_.push_back(Node{value, {}, {}, true});
  parameters_.emplace(name, nodes_.size() - 1);
  parameter_order_.push_back(name);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  if (consumed_) throw UsageError("tape already differentiated");
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape_ != this) throw UsageError("operand recorded on a different tape");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    n.grad = Tensor(n.value.shape(), 0.0);
  }
  return n.grad;
}

Gradients Tape::gradient(Var root, double seed) {
  if (consumed_) throw UsageError("tape already differentiated; record a fresh forward pass");
  if (root.tape_ != this) throw UsageError("gradient root belongs to a different tape");
  if (nodes_[root.id_].value.size() != 1) {
    throw StructuralError("gradient root must be a scalar, got shape " +
                          shape_string(nodes_[root.id_].value.shape()));
  }
  consumed_ = true;
  if (nodes_[root.id_].requires_grad) {
    grad(root.id_)[0] = seed;
    for (std::size_t id = root.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && n.grad.size() == n.value.size() && n.grad.size() > 0) n.backward(*this, id);
    }
  }
  Gradients out;
  for (const std::string& name : parameter_order_) {
    const std::size_t id = parameters_.at(name);
    out.emplace(name, grad(id));
  }
  return out;
}

namespace ad {

namespace {

Tape& tape_of(Var a) { return a.tape(); }

template <typename F>
Var unary(Var a, Tensor value, F local_derivative) {
  const std::size_t ia = a.id();
  return tape_of(a).record(std::move(value), {a}, [ia, local_derivative](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * local_derivative(x[i], y[i]);
  });
}

Tensor mapped(const Tensor& x, auto f) {
  Tensor out = x;
  for (double& v : out.data()) v = f(v);
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw StructuralError(std::string(what) + ": expected rank " + std::to_string(rank) +
                          ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, mapped(a.value(), [factor](double v) { return v * factor; }),
               [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, mapped(a.value(), [offset](double v) { return v + offset; }),
               [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }),
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return std::exp(v); }),
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return std::log(v); }),
               [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return std::sqrt(v); }),
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return v * v; }),
               [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, mapped(a.value(), [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); }),
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var normal_quantile(Var a) {
  return unary(a, mapped(a.value(), [](double v) { return std_normal_quantile(v); }),
               [](double, double y) { return 1.0 / std_normal_pdf(y); });
}

Var maximum(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "maximum");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], b.value()[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return tape_of(a).record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& va = t.value(ia);
    const Tensor& vb = t.value(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const bool to_a = va[i] >= vb[i];
      const std::size_t target = to_a ? ia : ib;
      if (t.requires_grad(target)) t.grad(target)[i] += g[i];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return tape_of(a).record(Tensor::scalar(total), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad(self)[0];
    for (double& e : t.grad(ia).data()) e += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw StructuralError("add_n: no terms");
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

Var pick(Var a, std::size_t index) {
  if (index >= a.value().size()) throw StructuralError("pick: index out of range");
  const std::size_t ia = a.id();
  return tape_of(a).record(Tensor::scalar(a.value()[index]), {a},
                           [ia, index](Tape& t, std::size_t self) {
                             if (t.requires_grad(ia)) t.grad(ia)[index] += t.grad(self)[0];
                           });
}

Var pick_runner_up(Var a, std::size_t exclude) {
  const Tensor& v = a.value();
  if (v.size() < 2 || exclude >= v.size()) {
    throw StructuralError("pick_runner_up: need at least two entries and a valid exclusion");
  }
  std::size_t best = exclude == 0 ? 1 : 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != exclude && v[i] > v[best]) best = i;
  }
  return pick(a, best);
}

Var affine(Var x, Var weight, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  require_rank(xv, 1, "affine input");
  require_rank(w, 2, "affine weight");
  if (w.dim(1) != xv.size() || b.rank() != 1 || b.size() != w.dim(0)) {
    throw StructuralError("affine: weight " + shape_string(w.shape()) + ", bias " +
                          shape_string(b.shape()) + " incompatible with input " +
                          shape_string(xv.shape()));
  }
  Tensor out(Shape{w.dim(0)});
  kernels::affine(xv.data(), w, b.data(), out.data());
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape_of(x).record(std::move(out), {x, weight, bias}, [ix, iw, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& w = t.value(iw);
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad(ix);
      for (std::size_t o = 0; o < rows; ++o) {
        for (std::size_t i = 0; i < cols; ++i) gx[i] += w.at(o, i) * g[o];
      }
    }
    if (t.requires_grad(iw)) {
      Tensor& gw = t.grad(iw);
      for (std::size_t o = 0; o < rows; ++o) {
        for (std::size_t i = 0; i < cols; ++i) gw.at(o, i) += g[o] * xv[i];
      }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t o = 0; o < rows; ++o) gb[o] += g[o];
    }
  });
}

Var affine_abs(Var x, Var weight) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  require_rank(xv, 1, "affine_abs input");
  require_rank(w, 2, "affine_abs weight");
  if (w.dim(1) != xv.size()) throw StructuralError("affine_abs: weight/input mismatch");
  Tensor out(Shape{w.dim(0)});
  kernels::affine_abs(xv.data(), w, out.data());
  const std::size_t ix = x.id(), iw = weight.id();
  return tape_of(x).record(std::move(out), {x, weight}, [ix, iw](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& w = t.value(iw);
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad(ix);
      for (std::size_t o = 0; o < rows; ++o) {
        for (std::size_t i = 0; i < cols; ++i) gx[i] += std::abs(w.at(o, i)) * g[o];
      }
    }
    if (t.requires_grad(iw)) {
      Tensor& gw = t.grad(iw);
      for (std::size_t o = 0; o < rows; ++o) {
        for (std::size_t i = 0; i < cols; ++i) {
          const double wv = w.at(o, i);
          const double sign = wv > 0.0 ? 1.0 : (wv < 0.0 ? -1.0 : 0.0);
          gw.at(o, i) += sign * g[o] * xv[i];
        }
      }
    }
  });
}

namespace {

Shape conv_output_shape(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  if (w.dim(2) != x.dim(1)) {
    throw StructuralError("conv1d: input channels " + std::to_string(x.dim(1)) +
                          " do not match weight " + shape_string(w.shape()));
  }
  if (x.dim(0) < w.dim(1)) {
    throw StructuralError("conv1d: sequence length " + std::to_string(x.dim(0)) +
                          " shorter than kernel width " + std::to_string(w.dim(1)));
  }
  return Shape{x.dim(0) - w.dim(1) + 1, w.dim(0)};
}

template <bool Abs>
void conv_backward(Tape& t, std::size_t self, std::size_t ix, std::size_t iw) {
  const Tensor& g = t.grad(self);
  const Tensor& xv = t.value(ix);
  const Tensor& w = t.value(iw);
  const std::size_t c_out = w.dim(0), width = w.dim(1), c_in = w.dim(2), steps = g.dim(0);
  const bool gx_needed = t.requires_grad(ix);
  const bool gw_needed = t.requires_grad(iw);
  Tensor* gx = gx_needed ? &t.grad(ix) : nullptr;
  Tensor* gw = gw_needed ? &t.grad(iw) : nullptr;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const double go = g.at(s, o);
      if (go == 0.0) continue;
      for (std::size_t k = 0; k < width; ++k) {
        for (std::size_t c = 0; c < c_in; ++c) {
          const std::size_t wi = (o * width + k) * c_in + c;
          const std::size_t xi = (s + k) * c_in + c;
          const double wv = w[wi];
          if constexpr (Abs) {
            const double sign = wv > 0.0 ? 1.0 : (wv < 0.0 ? -1.0 : 0.0);
            if (gx) (*gx)[xi] += std::abs(wv) * go;
            if (gw) (*gw)[wi] += sign * go * xv[xi];
          } else {
            if (gx) (*gx)[xi] += wv * go;
            if (gw) (*gw)[wi] += go * xv[xi];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv1d(Var x, Var weight, Var bias) {
  const Tensor& w = weight.value();
  Tensor out(conv_output_shape(x.value(), w));
  if (bias.value().rank() != 1 || bias.value().size() != w.dim(0)) {
    throw StructuralError("conv1d: bias shape " + shape_string(bias.value().shape()));
  }
  kernels::conv1d(x.value(), w, bias.value().data(), out);
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape_of(x).record(std::move(out), {x, weight, bias}, [ix, iw, ib](Tape& t, std::size_t self) {
    conv_backward<false>(t, self, ix, iw);
    if (t.requires_grad(ib)) {
      const Tensor& g = t.grad(self);
      Tensor& gb = t.grad(ib);
      for (std::size_t s = 0; s < g.dim(0); ++s) {
        for (std::size_t o = 0; o < g.dim(1); ++o) gb[o] += g.at(s, o);
      }
    }
  });
}

Var conv1d_abs(Var x, Var weight) {
  Tensor out(conv_output_shape(x.value(), weight.value()));
  kernels::conv1d_abs(x.value(), weight.value(), out);
  const std::size_t ix = x.id(), iw = weight.id();
  return tape_of(x).record(std::move(out), {x, weight}, [ix, iw](Tape& t, std::size_t self) {
    conv_backward<true>(t, self, ix, iw);
  });
}

Var mean_rows(Var x) {
  require_rank(x.value(), 2, "mean_rows");
  if (x.value().dim(0) == 0) throw StructuralError("mean_rows: empty sequence");
  Tensor out(Shape{x.value().dim(1)});
  kernels::mean_rows(x.value(), out.data());
  const std::size_t ix = x.id();
  return tape_of(x).record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    const std::size_t rows = gx.dim(0), cols = gx.dim(1);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += g[c] * inv;
    }
  });
}

Var log_softmax(Var x) {
  require_rank(x.value(), 1, "log_softmax");
  Tensor out(x.value().shape());
  kernels::log_softmax(x.value().data(), out.data());
  const std::size_t ix = x.id();
  return tape_of(x).record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double gsum = 0.0;
    for (double v : g.data()) gsum += v;
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

}  // namespace ad

}  // namespace latcert
