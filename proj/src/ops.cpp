#include "al/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace al {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void same_tape(const BasicVar<T>& a, const BasicVar<T>& b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
}

template <typename T>
void require_same_shape(const char* op, const BasicVar<T>& a, const BasicVar<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t last_dim(const Shape& s) { return s.back(); }

}  // namespace

PadAmount pad_amount(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0) throw ParameterError("stride must be positive");
  if (padding == Padding::valid) return {};
  std::size_t out = (in + stride - 1) / stride;
  std::size_t needed = (out - 1) * stride + kernel;
  std::size_t total = needed > in ? needed - in : 0;
  return {total / 2, total};
}

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  PadAmount pad = pad_amount(in, kernel, stride, padding);
  if (kernel == 0 || kernel > in + pad.total) {
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(in + pad.total));
  }
  return (in + pad.total - kernel) / stride + 1;
}

template <typename T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
  same_tape(a, b);
  require_same_shape("add", a, b);
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!tape.requires_grad(in)) continue;
      auto& gi = tape.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b) {
  same_tape(a, b);
  require_same_shape("sub", a, b);
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
  same_tape(a, b);
  require_same_shape("mul", a, b);
  BasicTensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto av = tape.value(ia).data();
    const auto bv = tape.value(ib).data();
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
BasicVar<T> scale(BasicVar<T> a, double factor) {
  BasicTensor<T> out = a.value();
  const T f = static_cast<T>(factor);
  for (auto& v : out.data()) v *= f;
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, f](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& ga = tape.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
  });
}

template <typename T>
BasicVar<T> square(BasicVar<T> a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.data()) v *= v;
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto av = tape.value(ia).data();
    auto& ga = tape.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T{2} * av[i] * g[i];
  });
}

template <typename T>
BasicVar<T> sum(BasicVar<T> a) {
  double acc = 0.0;
  for (T v : a.value().data()) acc += static_cast<double>(v);
  std::size_t ia = a.id();
  return a.tape().record(BasicTensor<T>::scalar(static_cast<T>(acc)), {ia},
                         [ia](BasicTape<T>& tape, std::size_t self) {
                           const T g = tape.grad(self)[0];
                           for (auto& v : tape.grad(ia)) v += g;
                         });
}

template <typename T>
BasicVar<T> mean(BasicVar<T> a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

template <typename T>
BasicVar<T> relu(BasicVar<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  std::size_t ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto y = tape.value(self).data();
    auto& gx = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y[i] > T{0}) gx[i] += g[i];
    }
  });
}

template <typename T>
BasicVar<T> add_bias(BasicVar<T> x, BasicVar<T> bias) {
  same_tape(x, bias);
  const std::size_t c = last_dim(x.shape());
  if (bias.shape() != Shape{c}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match channels of " +
                         shape_str(x.shape()));
  }
  BasicTensor<T> out = x.value();
  const auto b = bias.value().data();
  const std::size_t rows = out.numel() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.raw() + r * c;
    for (std::size_t j = 0; j < c; ++j) row[j] += b[j];
  }
  std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, ib}, [ix, ib, c, rows](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    if (tape.requires_grad(ix)) {
      auto& gx = tape.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tape.requires_grad(ib)) {
      std::vector<double> acc(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) acc[j] += g[r * c + j];
      }
      auto& gb = tape.grad(ib);
      for (std::size_t j = 0; j < c; ++j) gb[j] += static_cast<T>(acc[j]);
    }
  });
}

template <typename T>
BasicVar<T> matmul(BasicVar<T> x, BasicVar<T> w) {
  same_tape(x, w);
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1], f = w.shape()[1];
  BasicTensor<T> out(Shape{n, f});
  MapMat<T>(out.raw(), n, f).noalias() =
      CMapMat<T>(x.value().raw(), n, d) * CMapMat<T>(w.value().raw(), d, f);
  std::size_t ix = x.id(), iw = w.id();
  return x.tape().record(std::move(out), {ix, iw}, [ix, iw, n, d, f](BasicTape<T>& tape, std::size_t self) {
    CMapMat<T> g(tape.grad(self).data(), n, f);
    if (tape.requires_grad(ix)) {
      MapMat<T>(tape.grad(ix).data(), n, d).noalias() += g * CMapMat<T>(tape.value(iw).raw(), d, f).transpose();
    }
    if (tape.requires_grad(iw)) {
      MapMat<T>(tape.grad(iw).data(), d, f).noalias() += CMapMat<T>(tape.value(ix).raw(), n, d).transpose() * g;
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, h, w, c, kh, kw, f, stride, ho, wo, top, left;
  std::size_t rows() const { return n * ho * wo; }
  std::size_t depth() const { return kh * kw * c; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && top == 0 && left == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t depth = g.depth();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oh = 0; oh < g.ho; ++oh) {
      for (std::size_t ow = 0; ow < g.wo; ++ow) {
        T* dst = col + ((b * g.ho + oh) * g.wo + ow) * depth;
        for (std::size_t i = 0; i < g.kh; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.top);
          for (std::size_t j = 0; j < g.kw; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.left);
            T* cell = dst + (i * g.kw + j) * g.c;
            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(g.h) || iw >= static_cast<std::ptrdiff_t>(g.w)) {
              std::fill(cell, cell + g.c, T{0});
            } else {
              const T* src = x + ((b * g.h + static_cast<std::size_t>(ih)) * g.w + static_cast<std::size_t>(iw)) * g.c;
              std::copy(src, src + g.c, cell);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t depth = g.depth();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oh = 0; oh < g.ho; ++oh) {
      for (std::size_t ow = 0; ow < g.wo; ++ow) {
        const T* src = col + ((b * g.ho + oh) * g.wo + ow) * depth;
        for (std::size_t i = 0; i < g.kh; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + i) - static_cast<std::ptrdiff_t>(g.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t j = 0; j < g.kw; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + j) - static_cast<std::ptrdiff_t>(g.left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const T* cell = src + (i * g.kw + j) * g.c;
            T* dst = dx + ((b * g.h + static_cast<std::size_t>(ih)) * g.w + static_cast<std::size_t>(iw)) * g.c;
            for (std::size_t k = 0; k < g.c; ++k) dst[k] += cell[k];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicVar<T> conv2d(BasicVar<T> input, BasicVar<T> kernel, std::size_t stride, Padding padding) {
  same_tape(input, kernel);
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4) {
    throw DimensionError("conv2d expects NHWC input and [kh,kw,C,F] kernel, got " + shape_str(xs) +
                         " and " + shape_str(ks));
  }
  if (xs[3] != ks[2]) {
    throw DimensionError("conv2d: input channels " + std::to_string(xs[3]) + " != kernel channels " +
                         std::to_string(ks[2]));
  }
  ConvGeometry g{};
  g.n = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.c = xs[3];
  g.kh = ks[0];
  g.kw = ks[1];
  g.f = ks[3];
  g.stride = stride;
  g.ho = conv_out_dim(g.h, g.kh, stride, padding);
  g.wo = conv_out_dim(g.w, g.kw, stride, padding);
  g.top = pad_amount(g.h, g.kh, stride, padding).before;
  g.left = pad_amount(g.w, g.kw, stride, padding).before;

  auto col = std::make_shared<std::vector<T>>();
  const T* col_ptr = input.value().raw();
  if (!g.pointwise()) {
    col->resize(g.rows() * g.depth());
    im2col(input.value().raw(), g, col->data());
    col_ptr = col->data();
  }
  BasicTensor<T> out(Shape{g.n, g.ho, g.wo, g.f});
  MapMat<T>(out.raw(), g.rows(), g.f).noalias() =
      CMapMat<T>(col_ptr, g.rows(), g.depth()) * CMapMat<T>(kernel.value().raw(), g.depth(), g.f);

  std::size_t ix = input.id(), ik = kernel.id();
  return input.tape().record(std::move(out), {ix, ik}, [ix, ik, g, col](BasicTape<T>& tape, std::size_t self) {
    CMapMat<T> gout(tape.grad(self).data(), g.rows(), g.f);
    const T* cols = g.pointwise() ? tape.value(ix).raw() : col->data();
    if (tape.requires_grad(ik)) {
      MapMat<T>(tape.grad(ik).data(), g.depth(), g.f).noalias() +=
          CMapMat<T>(cols, g.rows(), g.depth()).transpose() * gout;
    }
    if (tape.requires_grad(ix)) {
      CMapMat<T> kmat(tape.value(ik).raw(), g.depth(), g.f);
      if (g.pointwise()) {
        MapMat<T>(tape.grad(ix).data(), g.rows(), g.depth()).noalias() += gout * kmat.transpose();
      } else {
        std::vector<T> dcol(g.rows() * g.depth());
        MapMat<T>(dcol.data(), g.rows(), g.depth()).noalias() = gout * kmat.transpose();
        col2im_add(dcol.data(), g, tape.grad(ix).data());
      }
    }
  });
}

template <typename T>
BasicVar<T> max_pool2d(BasicVar<T> input, std::size_t window, std::size_t stride, Padding padding) {
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw DimensionError("max_pool2d expects NHWC input, got " + shape_str(xs));
  const std::size_t n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  const std::size_t ho = conv_out_dim(h, window, stride, padding);
  const std::size_t wo = conv_out_dim(w, window, stride, padding);
  const std::size_t top = pad_amount(h, window, stride, padding).before;
  const std::size_t left = pad_amount(w, window, stride, padding).before;
  BasicTensor<T> out(Shape{n, ho, wo, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* x = input.value().raw();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const std::size_t obase = ((b * ho + oh) * wo + ow) * c;
        for (std::size_t k = 0; k < c; ++k) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t i = 0; i < window; ++i) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + i) - static_cast<std::ptrdiff_t>(top);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < window; ++j) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + j) - static_cast<std::ptrdiff_t>(left);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = ((b * h + static_cast<std::size_t>(ih)) * w + static_cast<std::size_t>(iw)) * c + k;
              if (x[idx] > best) {
                best = x[idx];
                best_idx = idx;
              }
            }
          }
          out[obase + k] = best;
          (*argmax)[obase + k] = best_idx;
        }
      }
    }
  }
  std::size_t ix = input.id();
  return input.tape().record(std::move(out), {ix}, [ix, argmax](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
BasicVar<T> global_avg_pool(BasicVar<T> input) {
  const Shape& xs = input.shape();
  if (xs.size() != 4) throw DimensionError("global_avg_pool expects NHWC input, got " + shape_str(xs));
  const std::size_t n = xs[0], hw = xs[1] * xs[2], c = xs[3];
  BasicTensor<T> out(Shape{n, c});
  const T* x = input.value().raw();
  std::vector<double> acc(c);
  for (std::size_t b = 0; b < n; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
      const T* row = x + (b * hw + p) * c;
      for (std::size_t k = 0; k < c; ++k) acc[k] += row[k];
    }
    for (std::size_t k = 0; k < c; ++k) out[b * c + k] = static_cast<T>(acc[k] / static_cast<double>(hw));
  }
  std::size_t ix = input.id();
  return input.tape().record(std::move(out), {ix}, [ix, n, hw, c](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    auto& gx = tape.grad(ix);
    const T inv = static_cast<T>(1.0 / static_cast<double>(hw));
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        T* row = gx.data() + (b * hw + p) * c;
        for (std::size_t k = 0; k < c; ++k) row[k] += g[b * c + k] * inv;
      }
    }
  });
}

template <typename T>
BasicVar<T> concat_last(const std::vector<BasicVar<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_last of zero tensors");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    Shape s = p.shape();
    const std::size_t wdt = s.back();
    s.pop_back();
    if (s != lead) {
      throw DimensionError("concat_last: leading dims " + shape_str(s) + " vs " + shape_str(lead));
    }
    widths.push_back(wdt);
    ids.push_back(p.id());
    total += wdt;
  }
  const std::size_t rows = shape_numel(lead.empty() ? Shape{1} : lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().raw();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.raw() + r * total + offset);
    }
    offset += widths[k];
  }
  return parts[0].tape().record(std::move(out), ids, [ids, widths, rows, total](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tape.requires_grad(ids[k])) {
        auto& gk = tape.grad(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += g[r * total + off + j];
        }
      }
      off += widths[k];
    }
  });
}

template <typename T>
BasicVar<T> softmax_temperature(BasicVar<T> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("softmax temperature must be > 0");
  const std::size_t k = last_dim(logits.shape());
  const std::size_t rows = logits.value().numel() / k;
  BasicTensor<T> out(logits.shape());
  const T* x = logits.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]) / tau);
    double z = 0.0;
    std::vector<double> e(k);
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(row[j]) / tau - mx);
      z += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<T>(e[j] / z);
  }
  std::size_t ix = logits.id();
  return logits.tape().record(std::move(out), {ix}, [ix, k, rows, tau](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto y = tape.value(self).data();
    auto& gx = tape.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(g[r * k + j]) * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = r * k + j;
        gx[i] += static_cast<T>(y[i] * (g[i] - dot) / tau);
      }
    }
  });
}

template <typename T>
BasicVar<T> log_softmax(BasicVar<T> logits) {
  const std::size_t k = last_dim(logits.shape());
  const std::size_t rows = logits.value().numel() / k;
  BasicTensor<T> out(logits.shape());
  const T* x = logits.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<T>(static_cast<double>(row[j]) - lse);
  }
  std::size_t ix = logits.id();
  return logits.tape().record(std::move(out), {ix}, [ix, k, rows](BasicTape<T>& tape, std::size_t self) {
    const auto& g = tape.grad(self);
    const auto y = tape.value(self).data();
    auto& gx = tape.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += g[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = r * k + j;
        gx[i] += static_cast<T>(g[i] - std::exp(static_cast<double>(y[i])) * gs);
      }
    }
  });
}

template <typename T>
BasicVar<T> kl_divergence(BasicVar<T> p, BasicVar<T> q) {
  same_tape(p, q);
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
  }
  const std::size_t k = last_dim(p.shape());
  const std::size_t rows = p.value().numel() / k;
  const auto pv = p.value().data();
  const auto qv = q.value().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double pi = pv[i];
    if (pi <= 0.0) continue;
    acc += pi * (std::log(pi) - std::log(std::max(static_cast<double>(qv[i]), kLogEps)));
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::size_t ip = p.id(), iq = q.id();
  return p.tape().record(BasicTensor<T>::scalar(static_cast<T>(acc * inv_rows)), {ip, iq},
                         [ip, iq, inv_rows](BasicTape<T>& tape, std::size_t self) {
                           const double g = static_cast<double>(tape.grad(self)[0]) * inv_rows;
                           const auto pv = tape.value(ip).data();
                           const auto qv = tape.value(iq).data();
                           if (tape.requires_grad(ip)) {
                             auto& gp = tape.grad(ip);
                             for (std::size_t i = 0; i < pv.size(); ++i) {
                               const double pi = std::max(static_cast<double>(pv[i]), kLogEps);
                               const double qi = std::max(static_cast<double>(qv[i]), kLogEps);
                               gp[i] += static_cast<T>(g * (std::log(pi) - std::log(qi) + 1.0));
                             }
                           }
                           if (tape.requires_grad(iq)) {
                             auto& gq = tape.grad(iq);
                             for (std::size_t i = 0; i < pv.size(); ++i) {
                               if (static_cast<double>(qv[i]) < kLogEps) continue;
                               gq[i] += static_cast<T>(-g * pv[i] / qv[i]);
                             }
                           }
                         });
}

template <typename T>
BasicVar<T> cross_entropy(BasicVar<T> logits, const BasicTensor<T>& labels) {
  if (labels.shape() != logits.shape() || logits.shape().size() != 2) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = labels[r * k + j];
      if (v < -1e-7) throw ValidationError("cross_entropy: negative label in row " + std::to_string(r));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-4) {
      throw ValidationError("cross_entropy: label row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
  const T* x = logits.value().raw();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = x + r * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double ls = static_cast<double>(row[j]) - lse;
      (*probs)[r * k + j] = std::exp(ls);
      loss -= static_cast<double>(labels[r * k + j]) * ls;
    }
  }
  loss /= static_cast<double>(n);
  auto y = std::make_shared<BasicTensor<T>>(labels);
  std::size_t ix = logits.id();
  return logits.tape().record(BasicTensor<T>::scalar(static_cast<T>(loss)), {ix},
                              [ix, n, k, probs, y](BasicTape<T>& tape, std::size_t self) {
                                const double g = static_cast<double>(tape.grad(self)[0]) / static_cast<double>(n);
                                auto& gx = tape.grad(ix);
                                for (std::size_t r = 0; r < n; ++r) {
                                  double ysum = 0.0;
                                  for (std::size_t j = 0; j < k; ++j) ysum += (*y)[r * k + j];
                                  for (std::size_t j = 0; j < k; ++j) {
                                    const std::size_t i = r * k + j;
                                    gx[i] += static_cast<T>(g * ((*probs)[i] * ysum - (*y)[i]));
                                  }
                                }
                              });
}

#define AL_INSTANTIATE_OPS(T)                                                                   \
  template BasicVar<T> add<T>(BasicVar<T>, BasicVar<T>);                                        \
  template BasicVar<T> sub<T>(BasicVar<T>, BasicVar<T>);                                        \
  template BasicVar<T> mul<T>(BasicVar<T>, BasicVar<T>);                                        \
  template BasicVar<T> scale<T>(BasicVar<T>, double);                                           \
  template BasicVar<T> square<T>(BasicVar<T>);                                                  \
  template BasicVar<T> sum<T>(BasicVar<T>);                                                     \
  template BasicVar<T> mean<T>(BasicVar<T>);                                                    \
  template BasicVar<T> relu<T>(BasicVar<T>);                                                    \
  template BasicVar<T> add_bias<T>(BasicVar<T>, BasicVar<T>);                                   \
  template BasicVar<T> matmul<T>(BasicVar<T>, BasicVar<T>);                                     \
  template BasicVar<T> conv2d<T>(BasicVar<T>, BasicVar<T>, std::size_t, Padding);               \
  template BasicVar<T> max_pool2d<T>(BasicVar<T>, std::size_t, std::size_t, Padding);           \
  template BasicVar<T> global_avg_pool<T>(BasicVar<T>);                                         \
  template BasicVar<T> concat_last<T>(const std::vector<BasicVar<T>>&);                         \
  template BasicVar<T> softmax_temperature<T>(BasicVar<T>, double);                             \
  template BasicVar<T> log_softmax<T>(BasicVar<T>);                                             \
  template BasicVar<T> kl_divergence<T>(BasicVar<T>, BasicVar<T>);                              \
  template BasicVar<T> cross_entropy<T>(BasicVar<T>, const BasicTensor<T>&);

AL_INSTANTIATE_OPS(float)
AL_INSTANTIATE_OPS(double)

#undef AL_INSTANTIATE_OPS

}  // namespace al
