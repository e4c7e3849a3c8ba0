#include "pimpnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pimpnet/error.hpp"

namespace pimpnet::ops {

namespace {

bool wants_grad(const TensorPtr& t) { return t->requires_grad; }

TensorPtr make_output(std::vector<int> shape, bool requires_grad) {
  auto out = std::make_shared<Tensor>(std::move(shape));
  out->requires_grad = requires_grad;
  return out;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b,
                      const char* op) {
  if (!same_shape(*a, *b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a->shape) + " vs " + shape_string(b->shape));
  }
}

void check_rank(const TensorPtr& t, int rank, const char* op) {
  if (t->rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " tensor, got shape " +
                     shape_string(t->shape));
  }
}

// Elementwise op with gradient factor computed from (x, y) per element.
template <typename Fwd, typename Bwd>
TensorPtr unary_elementwise(Tape& tape, const TensorPtr& x, Fwd fwd,
                            Bwd grad_factor) {
  auto out = make_output(x->shape, wants_grad(x));
  const std::size_t n = x->data.size();
  for (std::size_t i = 0; i < n; ++i) out->data[i] = fwd(x->data[i]);
  if (out->requires_grad) {
    TensorPtr xc = x, oc = out;
    tape.record({out, x}, [xc, oc, grad_factor]() {
      for (std::size_t i = 0; i < xc->data.size(); ++i) {
        xc->grad[i] += oc->grad[i] * grad_factor(xc->data[i], oc->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

TensorPtr conv3d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                 const TensorPtr& bias, int stride, int padding) {
  check_rank(input, 4, "conv3d");
  check_rank(kernel, 5, "conv3d");
  check_rank(bias, 1, "conv3d");
  const int cin = input->shape[0];
  const int d = input->shape[1], h = input->shape[2], w = input->shape[3];
  const int cout = kernel->shape[0];
  const int k = kernel->shape[2];
  if (kernel->shape[1] != cin) {
    throw ShapeError("conv3d: input channels " + std::to_string(cin) +
                     " do not match kernel channels " +
                     std::to_string(kernel->shape[1]) + " (kernel " +
                     shape_string(kernel->shape) + ", input " +
                     shape_string(input->shape) + ")");
  }
  if (kernel->shape[3] != k || kernel->shape[4] != k) {
    throw ShapeError("conv3d: kernel must be cubic, got " +
                     shape_string(kernel->shape));
  }
  if (bias->shape[0] != cout) {
    throw ShapeError("conv3d: bias length " + std::to_string(bias->shape[0]) +
                     " does not match kernel output channels " +
                     std::to_string(cout));
  }
  if (stride < 1) throw ShapeError("conv3d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv3d: padding must be >= 0");
  if (k > d + 2 * padding || k > h + 2 * padding || k > w + 2 * padding) {
    throw ShapeError("conv3d: kernel extent " + std::to_string(k) +
                     " exceeds padded input " + shape_string(input->shape) +
                     " with padding " + std::to_string(padding));
  }
  const int od = (d + 2 * padding - k) / stride + 1;
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;

  auto out = make_output({cout, od, oh, ow},
                         wants_grad(input) || wants_grad(kernel) ||
                             wants_grad(bias));

  const float* in = input->data.data();
  const float* ker = kernel->data.data();
  const float* bi = bias->data.data();
  float* o = out->data.data();

  for (int co = 0; co < cout; ++co) {
    const float* kco = ker + static_cast<std::size_t>(co) * cin * k * k * k;
    for (int zo = 0; zo < od; ++zo) {
      const int id0 = zo * stride - padding;
      const int kd_lo = std::max(0, -id0), kd_hi = std::min(k, d - id0);
      for (int yo = 0; yo < oh; ++yo) {
        const int ih0 = yo * stride - padding;
        const int kh_lo = std::max(0, -ih0), kh_hi = std::min(k, h - ih0);
        for (int xo = 0; xo < ow; ++xo) {
          const int iw0 = xo * stride - padding;
          const int kw_lo = std::max(0, -iw0), kw_hi = std::min(k, w - iw0);
          double acc = 0.0;
          for (int ci = 0; ci < cin; ++ci) {
            const float* inc = in + (static_cast<std::size_t>(ci) * d) * h * w;
            const float* kc = kco + static_cast<std::size_t>(ci) * k * k * k;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              const float* ind = inc + static_cast<std::size_t>(id0 + kd) * h * w;
              const float* kkd = kc + static_cast<std::size_t>(kd) * k * k;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const float* row = ind + static_cast<std::size_t>(ih0 + kh) * w + iw0;
                const float* krow = kkd + static_cast<std::size_t>(kh) * k;
                for (int kw = kw_lo; kw < kw_hi; ++kw) {
                  acc += static_cast<double>(row[kw]) *
                         static_cast<double>(krow[kw]);
                }
              }
            }
          }
          acc += static_cast<double>(bi[co]);
          o[((static_cast<std::size_t>(co) * od + zo) * oh + yo) * ow + xo] =
              static_cast<float>(acc);
        }
      }
    }
  }

  if (out->requires_grad) {
    TensorPtr ic = input, kc = kernel, bc = bias, oc = out;
    tape.record({out, input, kernel, bias},
                [ic, kc, bc, oc, stride, padding, cin, d, h, w, cout, k, od,
                 oh, ow]() {
      const float* go = oc->grad.data();
      const float* in = ic->data.data();
      const float* ker = kc->data.data();
      const bool gi = ic->requires_grad;
      const bool gk = kc->requires_grad;
      const bool gb = bc->requires_grad;
      for (int co = 0; co < cout; ++co) {
        const std::size_t kbase = static_cast<std::size_t>(co) * cin * k * k * k;
        double bias_acc = 0.0;
        for (int zo = 0; zo < od; ++zo) {
          const int id0 = zo * stride - padding;
          const int kd_lo = std::max(0, -id0), kd_hi = std::min(k, d - id0);
          for (int yo = 0; yo < oh; ++yo) {
            const int ih0 = yo * stride - padding;
            const int kh_lo = std::max(0, -ih0), kh_hi = std::min(k, h - ih0);
            for (int xo = 0; xo < ow; ++xo) {
              const int iw0 = xo * stride - padding;
              const int kw_lo = std::max(0, -iw0), kw_hi = std::min(k, w - iw0);
              const float g =
                  go[((static_cast<std::size_t>(co) * od + zo) * oh + yo) * ow +
                     xo];
              bias_acc += static_cast<double>(g);
              for (int ci = 0; ci < cin; ++ci) {
                const std::size_t ibase = (static_cast<std::size_t>(ci) * d) * h * w;
                const std::size_t cbase = kbase + static_cast<std::size_t>(ci) * k * k * k;
                for (int kd = kd_lo; kd < kd_hi; ++kd) {
                  const std::size_t dbase = ibase + static_cast<std::size_t>(id0 + kd) * h * w;
                  const std::size_t kdbase = cbase + static_cast<std::size_t>(kd) * k * k;
                  for (int kh = kh_lo; kh < kh_hi; ++kh) {
                    const std::size_t rbase = dbase + static_cast<std::size_t>(ih0 + kh) * w + iw0;
                    const std::size_t krbase = kdbase + static_cast<std::size_t>(kh) * k;
                    for (int kw = kw_lo; kw < kw_hi; ++kw) {
                      if (gk) kc->grad[krbase + kw] += g * in[rbase + kw];
                      if (gi) ic->grad[rbase + kw] += g * ker[krbase + kw];
                    }
                  }
                }
              }
            }
          }
        }
        if (gb) bc->grad[co] += static_cast<float>(bias_acc);
      }
    });
  }
  return out;
}

MaxPool3dResult global_maxpool3d(Tape& tape, const TensorPtr& z) {
  check_rank(z, 4, "global_maxpool3d");
  const int m = z->shape[0];
  const int d = z->shape[1], h = z->shape[2], w = z->shape[3];
  const std::size_t spatial = static_cast<std::size_t>(d) * h * w;

  auto scores = make_output({m}, wants_grad(z));
  std::vector<std::array<int, 3>> argmax(static_cast<std::size_t>(m));
  std::vector<std::size_t> flat_arg(static_cast<std::size_t>(m));

  for (int c = 0; c < m; ++c) {
    const float* zc = z->data.data() + static_cast<std::size_t>(c) * spatial;
    float best = zc[0];
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < spatial; ++i) {
      if (zc[i] > best) {  // ties keep the first index in row-major order
        best = zc[i];
        best_i = i;
      }
    }
    scores->data[c] = best;
    flat_arg[c] = best_i;
    const int dd = static_cast<int>(best_i / (static_cast<std::size_t>(h) * w));
    const int rem = static_cast<int>(best_i % (static_cast<std::size_t>(h) * w));
    argmax[c] = {dd, rem / w, rem % w};
  }

  if (scores->requires_grad) {
    TensorPtr zc = z, sc = scores;
    tape.record({scores, z}, [zc, sc, flat_arg, spatial, m]() {
      for (int c = 0; c < m; ++c) {
        zc->grad[static_cast<std::size_t>(c) * spatial + flat_arg[c]] +=
            sc->grad[c];
      }
    });
  }
  return MaxPool3dResult{scores, std::move(argmax)};
}

TensorPtr softmax_over_channels(Tape& tape, const TensorPtr& z) {
  check_rank(z, 4, "softmax_over_channels");
  const int m = z->shape[0];
  const std::size_t spatial = static_cast<std::size_t>(z->shape[1]) *
                              z->shape[2] * z->shape[3];
  auto out = make_output(z->shape, wants_grad(z));

  for (std::size_t i = 0; i < spatial; ++i) {
    double mx = z->data[i];
    for (int c = 1; c < m; ++c) {
      mx = std::max(mx, static_cast<double>(z->data[c * spatial + i]));
    }
    double denom = 0.0;
    for (int c = 0; c < m; ++c) {
      denom += std::exp(static_cast<double>(z->data[c * spatial + i]) - mx);
    }
    for (int c = 0; c < m; ++c) {
      out->data[c * spatial + i] = static_cast<float>(
          std::exp(static_cast<double>(z->data[c * spatial + i]) - mx) / denom);
    }
  }

  if (out->requires_grad) {
    TensorPtr zc = z, oc = out;
    tape.record({out, z}, [zc, oc, m, spatial]() {
      for (std::size_t i = 0; i < spatial; ++i) {
        double dot = 0.0;
        for (int c = 0; c < m; ++c) {
          dot += static_cast<double>(oc->grad[c * spatial + i]) *
                 static_cast<double>(oc->data[c * spatial + i]);
        }
        for (int c = 0; c < m; ++c) {
          const double y = oc->data[c * spatial + i];
          zc->grad[c * spatial + i] += static_cast<float>(
              y * (static_cast<double>(oc->grad[c * spatial + i]) - dot));
        }
      }
    });
  }
  return out;
}

TensorPtr center_channels(Tape& tape, const TensorPtr& z) {
  check_rank(z, 4, "center_channels");
  const int m = z->shape[0];
  const std::size_t spatial = static_cast<std::size_t>(z->shape[1]) *
                              z->shape[2] * z->shape[3];
  auto out = make_output(z->shape, wants_grad(z));

  for (int c = 0; c < m; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) {
      sum += static_cast<double>(z->data[c * spatial + i]);
    }
    const double mean = sum / static_cast<double>(spatial);
    for (std::size_t i = 0; i < spatial; ++i) {
      out->data[c * spatial + i] =
          static_cast<float>(static_cast<double>(z->data[c * spatial + i]) - mean);
    }
  }

  if (out->requires_grad) {
    TensorPtr zc = z, oc = out;
    tape.record({out, z}, [zc, oc, m, spatial]() {
      for (int c = 0; c < m; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) {
          sum += static_cast<double>(oc->grad[c * spatial + i]);
        }
        const double mean = sum / static_cast<double>(spatial);
        for (std::size_t i = 0; i < spatial; ++i) {
          zc->grad[c * spatial + i] += static_cast<float>(
              static_cast<double>(oc->grad[c * spatial + i]) - mean);
        }
      }
    });
  }
  return out;
}

TensorPtr sum_over_channels(Tape& tape, const TensorPtr& z) {
  check_rank(z, 4, "sum_over_channels");
  const int m = z->shape[0];
  const std::size_t spatial = static_cast<std::size_t>(z->shape[1]) *
                              z->shape[2] * z->shape[3];
  auto out = make_output({z->shape[1], z->shape[2], z->shape[3]},
                         wants_grad(z));
  for (std::size_t i = 0; i < spatial; ++i) {
    double acc = 0.0;
    for (int c = 0; c < m; ++c) acc += z->data[c * spatial + i];
    out->data[i] = static_cast<float>(acc);
  }
  if (out->requires_grad) {
    TensorPtr zc = z, oc = out;
    tape.record({out, z}, [zc, oc, m, spatial]() {
      for (std::size_t i = 0; i < spatial; ++i) {
        for (int c = 0; c < m; ++c) zc->grad[c * spatial + i] += oc->grad[i];
      }
    });
  }
  return out;
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
  return unary_elementwise(
      tape, x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

TensorPtr tanh(Tape& tape, const TensorPtr& x) {
  return unary_elementwise(
      tape, x, [](float v) { return std::tanh(v); },
      [](float, float y) { return 1.0f - y * y; });
}

TensorPtr softcap(Tape& tape, const TensorPtr& x, float cap) {
  if (!(cap > 0.0f)) throw ConfigError("softcap: cap must be positive");
  return unary_elementwise(
      tape, x,
      [cap](float v) { return cap * v / (cap + std::abs(v)); },
      [cap](float v, float) {
        const float s = cap / (cap + std::abs(v));
        return s * s;
      });
}

TensorPtr log(Tape& tape, const TensorPtr& x) {
  return unary_elementwise(
      tape, x, [](float v) { return std::log(v); },
      [](float v, float) { return 1.0f / v; });
}

TensorPtr square(Tape& tape, const TensorPtr& x) {
  return unary_elementwise(
      tape, x, [](float v) { return v * v; },
      [](float v, float) { return 2.0f * v; });
}

TensorPtr sqrt(Tape& tape, const TensorPtr& x) {
  return unary_elementwise(
      tape, x, [](float v) { return std::sqrt(v); },
      [](float, float y) { return 0.5f / y; });
}

TensorPtr clamp(Tape& tape, const TensorPtr& x, float lo, float hi) {
  if (!(lo <= hi)) throw Error("clamp: lo must be <= hi");
  return unary_elementwise(
      tape, x,
      [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  auto out = make_output(a->shape, wants_grad(a) || wants_grad(b));
  for (std::size_t i = 0; i < a->data.size(); ++i) {
    out->data[i] = a->data[i] + b->data[i];
  }
  if (out->requires_grad) {
    TensorPtr ac = a, bc = b, oc = out;
    tape.record({out, a, b}, [ac, bc, oc]() {
      for (std::size_t i = 0; i < oc->data.size(); ++i) {
        if (ac->requires_grad) ac->grad[i] += oc->grad[i];
        if (bc->requires_grad) bc->grad[i] += oc->grad[i];
      }
    });
  }
  return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  auto out = make_output(a->shape, wants_grad(a) || wants_grad(b));
  for (std::size_t i = 0; i < a->data.size(); ++i) {
    out->data[i] = a->data[i] * b->data[i];
  }
  if (out->requires_grad) {
    TensorPtr ac = a, bc = b, oc = out;
    tape.record({out, a, b}, [ac, bc, oc]() {
      for (std::size_t i = 0; i < oc->data.size(); ++i) {
        if (ac->requires_grad) ac->grad[i] += oc->grad[i] * bc->data[i];
        if (bc->requires_grad) bc->grad[i] += oc->grad[i] * ac->data[i];
      }
    });
  }
  return out;
}

TensorPtr add_scalar(Tape& tape, const TensorPtr& x, float c) {
  return unary_elementwise(
      tape, x, [c](float v) { return v + c; },
      [](float, float) { return 1.0f; });
}

TensorPtr mul_scalar(Tape& tape, const TensorPtr& x, float c) {
  return unary_elementwise(
      tape, x, [c](float v) { return v * c; },
      [c](float, float) { return c; });
}

TensorPtr sum(Tape& tape, const TensorPtr& x) {
  auto out = make_output({1}, wants_grad(x));
  double acc = 0.0;
  for (float v : x->data) acc += static_cast<double>(v);
  out->data[0] = static_cast<float>(acc);
  if (out->requires_grad) {
    TensorPtr xc = x, oc = out;
    tape.record({out, x}, [xc, oc]() {
      const float g = oc->grad[0];
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += g;
    });
  }
  return out;
}

TensorPtr mean(Tape& tape, const TensorPtr& x) {
  const double inv_n = 1.0 / static_cast<double>(x->data.size());
  auto out = make_output({1}, wants_grad(x));
  double acc = 0.0;
  for (float v : x->data) acc += static_cast<double>(v);
  out->data[0] = static_cast<float>(acc * inv_n);
  if (out->requires_grad) {
    TensorPtr xc = x, oc = out;
    tape.record({out, x}, [xc, oc, inv_n]() {
      const float g = static_cast<float>(oc->grad[0] * inv_n);
      for (std::size_t i = 0; i < xc->data.size(); ++i) xc->grad[i] += g;
    });
  }
  return out;
}

TensorPtr concat(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_rank(a, 1, "concat");
  check_rank(b, 1, "concat");
  const int na = a->shape[0], nb = b->shape[0];
  auto out = make_output({na + nb}, wants_grad(a) || wants_grad(b));
  std::copy(a->data.begin(), a->data.end(), out->data.begin());
  std::copy(b->data.begin(), b->data.end(), out->data.begin() + na);
  if (out->requires_grad) {
    TensorPtr ac = a, bc = b, oc = out;
    tape.record({out, a, b}, [ac, bc, oc, na, nb]() {
      if (ac->requires_grad) {
        for (int i = 0; i < na; ++i) ac->grad[i] += oc->grad[i];
      }
      if (bc->requires_grad) {
        for (int i = 0; i < nb; ++i) bc->grad[i] += oc->grad[na + i];
      }
    });
  }
  return out;
}

TensorPtr vecmat(Tape& tape, const TensorPtr& v, const TensorPtr& w) {
  check_rank(v, 1, "vecmat");
  check_rank(w, 2, "vecmat");
  const int l = v->shape[0];
  if (w->shape[0] != l) {
    throw ShapeError("vecmat: vector length " + std::to_string(l) +
                     " does not match matrix rows " +
                     std::to_string(w->shape[0]));
  }
  const int k = w->shape[1];
  auto out = make_output({k}, wants_grad(v) || wants_grad(w));
  for (int j = 0; j < k; ++j) {
    double acc = 0.0;
    for (int i = 0; i < l; ++i) {
      acc += static_cast<double>(v->data[i]) *
             static_cast<double>(w->data[static_cast<std::size_t>(i) * k + j]);
    }
    out->data[j] = static_cast<float>(acc);
  }
  if (out->requires_grad) {
    TensorPtr vc = v, wc = w, oc = out;
    tape.record({out, v, w}, [vc, wc, oc, l, k]() {
      for (int i = 0; i < l; ++i) {
        for (int j = 0; j < k; ++j) {
          const float g = oc->grad[j];
          if (vc->requires_grad) {
            vc->grad[i] += g * wc->data[static_cast<std::size_t>(i) * k + j];
          }
          if (wc->requires_grad) {
            wc->grad[static_cast<std::size_t>(i) * k + j] += g * vc->data[i];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr log_softmax(Tape& tape, const TensorPtr& v) {
  check_rank(v, 1, "log_softmax");
  const int n = v->shape[0];
  auto out = make_output(v->shape, wants_grad(v));
  double mx = v->data[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(v->data[i]));
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    denom += std::exp(static_cast<double>(v->data[i]) - mx);
  }
  const double log_denom = std::log(denom);
  for (int i = 0; i < n; ++i) {
    out->data[i] =
        static_cast<float>(static_cast<double>(v->data[i]) - mx - log_denom);
  }
  if (out->requires_grad) {
    TensorPtr vc = v, oc = out;
    tape.record({out, v}, [vc, oc, n]() {
      double gsum = 0.0;
      for (int i = 0; i < n; ++i) gsum += oc->grad[i];
      for (int i = 0; i < n; ++i) {
        vc->grad[i] += static_cast<float>(
            oc->grad[i] - std::exp(static_cast<double>(oc->data[i])) * gsum);
      }
    });
  }
  return out;
}

TensorPtr gather_scalar(Tape& tape, const TensorPtr& v, int index) {
  check_rank(v, 1, "gather_scalar");
  if (index < 0 || index >= v->shape[0]) {
    throw Error("gather_scalar: index " + std::to_string(index) +
                " out of range for length " + std::to_string(v->shape[0]));
  }
  auto out = make_output({1}, wants_grad(v));
  out->data[0] = v->data[index];
  if (out->requires_grad) {
    TensorPtr vc = v, oc = out;
    tape.record({out, v}, [vc, oc, index]() {
      vc->grad[index] += oc->grad[0];
    });
  }
  return out;
}

}  // namespace pimpnet::ops
