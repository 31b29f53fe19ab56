// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable tensor operations recorded on an ad::Tape. Each op computes
// its value eagerly and, when any input requires a gradient, registers a
// closure that accumulates vector-Jacobian products into its inputs.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "feat/autodiff.hpp"
#include "feat/tensor.hpp"

namespace feat::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
inline MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(a.shape()));
  }
}

// Column matrix for a stride-1, zero-padded k x k convolution:
// col[(c*k + ky)*k + kx, y*W + x] = x[c, y + ky - k/2, x + kx - k/2].
inline void im2col(const Tensor& x, std::size_t k, std::vector<double>& col) {
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  col.assign(c_in * k * k * h * w, 0.0);
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col.data() + ((c * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const double* src = x.data() + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            row[y * w + xx] = src[sx];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, std::size_t k, Tensor& gx) {
  const std::size_t c_in = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          double* dst = gx.data() + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            dst[sx] += row[y * w + xx];
          }
        }
      }
    }
  }
}

// Source taps for half-pixel-centred linear resampling along one axis.
struct Taps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;
};

inline Taps linear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.i0[o] = lo;
    t.i1[o] = std::min(lo + 1, in - 1);
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    for (std::size_t p : {ia, ib}) {
      if (Tensor* gp = t.grad_acc(p)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_acc(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_acc(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= c;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
    }
  });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v >= 0.0 ? v : slope * v;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, slope](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& x = t.value(ia);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += x[i] >= 0.0 ? g[i] : slope * g[i];
    }
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  const std::size_t ia = a.id;
  return a.tape->record(Tensor::scalar(a.value().sum()), {a},
                        [ia](Tape& t, std::size_t self) {
                          const double g = t.grad_ref(self)[0];
                          if (Tensor* ga = t.grad_acc(ia)) {
                            for (double& v : ga->values()) v += g;
                          }
                        });
}

inline Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// sum_k weights[k] * terms[k] over scalar terms.
inline Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ArgumentError("weighted_sum: terms and weights must be non-empty and equal length");
  }
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += weights[k] * terms[k].value()[0];
    ids.push_back(terms[k].id);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape->record(Tensor::scalar(total), terms,
                               [ids, w](Tape& t, std::size_t self) {
                                 const double g = t.grad_ref(self)[0];
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (Tensor* gp = t.grad_acc(ids[k])) (*gp)[0] += w[k] * g;
                                 }
                               });
}

inline Var dot(Var a, Var b) {
  detail::require_same_shape(a, b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(Tensor::scalar(s), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * bv[i];
    }
    if (Tensor* gb = t.grad_acc(ib)) {
      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += g * av[i];
    }
  });
}

/// Euclidean norm of all entries. The subgradient at the origin is zero.
inline Var l2_norm(Var a) {
  const Tensor& av = a.value();
  double ss = 0.0;
  for (double v : av.values()) ss += v * v;
  const double n = std::sqrt(ss);
  const std::size_t ia = a.id;
  return a.tape->record(Tensor::scalar(n), {a}, [ia, n](Tape& t, std::size_t self) {
    if (n == 0.0) return;
    const double g = t.grad_ref(self)[0];
    const Tensor& av = t.value(ia);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * av[i] / n;
    }
  });
}

/// v / ||v||.
inline Var normalize(Var a) {
  const Tensor& av = a.value();
  double ss = 0.0;
  for (double v : av.values()) ss += v * v;
  const double n = std::sqrt(ss);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericError("normalize: vector norm is zero or non-finite");
  }
  Tensor out = av;
  for (double& v : out.values()) v /= n;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& y = t.value(self);
    double yg = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += (g[i] - y[i] * yg) / n;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

/// Row j of a (n, d) matrix as a length-d vector.
inline Var select_row(Var a, std::size_t j) {
  detail::require_rank(a, 2, "select_row");
  const std::size_t d = a.value().dim(1);
  if (j >= a.value().dim(0)) throw RangeError("select_row: row out of range");
  Tensor out(Shape{d});
  std::copy_n(a.value().data() + j * d, d, out.data());
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, j, d](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* ga = t.grad_acc(ia)) {
      for (std::size_t k = 0; k < d; ++k) (*ga)[j * d + k] += g[k];
    }
  });
}

/// Rows `rows` of a (n, d) matrix stacked into a (k, d) matrix.
inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  detail::require_rank(a, 2, "gather_rows");
  const std::size_t n = a.value().dim(0), d = a.value().dim(1);
  Tensor out(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw RangeError("gather_rows: row out of range");
    std::copy_n(a.value().data() + rows[r] * d, d, out.data() + r * d);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {a},
                        [ia, rows = std::move(rows), d](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_ref(self);
                          if (Tensor* ga = t.grad_acc(ia)) {
                            for (std::size_t r = 0; r < rows.size(); ++r) {
                              for (std::size_t k = 0; k < d; ++k) {
                                (*ga)[rows[r] * d + k] += g[r * d + k];
                              }
                            }
                          }
                        });
}

/// Copy of `base` (n, d) with base[rows[r]] + delta[r] written into the listed
/// rows. Unlisted rows are copied verbatim.
inline Var scatter_add_rows(Var base, std::vector<std::size_t> rows, Var delta) {
  detail::require_rank(base, 2, "scatter_add_rows");
  detail::require_rank(delta, 2, "scatter_add_rows");
  const std::size_t n = base.value().dim(0), d = base.value().dim(1);
  if (delta.value().dim(0) != rows.size() || delta.value().dim(1) != d) {
    throw ShapeError("scatter_add_rows: delta shape does not match rows");
  }
  Tensor out = base.value();
  const Tensor& dv = delta.value();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw RangeError("scatter_add_rows: row out of range");
    for (std::size_t k = 0; k < d; ++k) out[rows[r] * d + k] += dv[r * d + k];
  }
  const std::size_t ib = base.id, id = delta.id;
  return base.tape->record(std::move(out), {base, delta},
                           [ib, id, rows = std::move(rows), d](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad_ref(self);
                             if (Tensor* gb = t.grad_acc(ib)) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                             }
                             if (Tensor* gd = t.grad_acc(id)) {
                               for (std::size_t r = 0; r < rows.size(); ++r) {
                                 for (std::size_t k = 0; k < d; ++k) {
                                   (*gd)[r * d + k] += g[rows[r] * d + k];
                                 }
                               }
                             }
                           });
}

/// Concatenates (C_k, H, W) maps along the channel axis.
inline Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  const std::size_t h = parts[0].value().dim(1), w = parts[0].value().dim(2);
  std::size_t channels = 0;
  for (const Var& p : parts) {
    detail::require_rank(p, 3, "concat_channels");
    if (p.value().dim(1) != h || p.value().dim(2) != w) {
      throw ShapeError("concat_channels: spatial size mismatch");
    }
    channels += p.value().dim(0);
  }
  Tensor out(Shape{channels, h, w});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.value().size();
  }
  return parts[0].tape->record(std::move(out), parts,
                               [ids, offsets](Tape& t, std::size_t self) {
                                 const Tensor& g = t.grad_ref(self);
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (Tensor* gp = t.grad_acc(ids[k])) {
                                     for (std::size_t i = 0; i < gp->size(); ++i) {
                                       (*gp)[i] += g[offsets[k] + i];
                                     }
                                   }
                                 }
                               });
}

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W^T (+ b). x is (n, in) or (in); W is (out, in); b is (out).
inline Var linear(Var x, Var weight, const Var* bias = nullptr) {
  detail::require_rank(weight, 2, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t out_dim = wv.dim(0), in_dim = wv.dim(1);
  const bool vector_input = xv.rank() == 1;
  const std::size_t n = vector_input ? 1 : xv.dim(0);
  if ((vector_input ? xv.dim(0) : xv.dim(1)) != in_dim || xv.rank() > 2) {
    throw ConfigError("linear: input " + shape_string(xv.shape()) +
                      " does not match weight " + shape_string(wv.shape()));
  }
  if (bias && bias->value().shape() != Shape{out_dim}) {
    throw ConfigError("linear: bias shape mismatch");
  }
  Tensor out(vector_input ? Shape{out_dim} : Shape{n, out_dim});
  auto y = detail::as_mat(out, n, out_dim);
  y.noalias() = detail::as_mat(xv, n, in_dim) * detail::as_mat(wv, out_dim, in_dim).transpose();
  if (bias) {
    const Tensor& bv = bias->value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] += bv[o];
    }
  }
  const std::size_t ix = x.id, iw = weight.id;
  const std::size_t ib = bias ? bias->id : 0;
  const bool has_bias = bias != nullptr;
  std::vector<Var> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return x.tape->record(
      std::move(out), parents,
      [ix, iw, ib, has_bias, n, in_dim, out_dim](Tape& t, std::size_t self) {
        const auto g = detail::as_mat(t.grad_ref(self), n, out_dim);
        if (Tensor* gx = t.grad_acc(ix)) {
          detail::as_mat(*gx, n, in_dim).noalias() +=
              g * detail::as_mat(t.value(iw), out_dim, in_dim);
        }
        if (Tensor* gw = t.grad_acc(iw)) {
          detail::as_mat(*gw, out_dim, in_dim).noalias() +=
              g.transpose() * detail::as_mat(t.value(ix), n, in_dim);
        }
        if (has_bias) {
          if (Tensor* gb = t.grad_acc(ib)) {
            for (std::size_t r = 0; r < n; ++r) {
              for (std::size_t o = 0; o < out_dim; ++o) (*gb)[o] += g(r, o);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutional layers on (C, H, W) maps

/// Modulated convolution: the kernel's input channels are scaled by `style`,
/// then (optionally) each output filter is rescaled to unit norm. Stride 1,
/// zero padding k/2, odd k.
inline Var modulated_conv(Var x, Var weight, Var style, bool demodulate,
                          double eps = 1e-8) {
  detail::require_rank(x, 3, "modulated_conv");
  detail::require_rank(weight, 4, "modulated_conv");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& sv = style.value();
  const std::size_t c_out = wv.dim(0), c_in = wv.dim(1), k = wv.dim(2);
  const std::size_t h = xv.dim(1), w = xv.dim(2), hw = h * w;
  const std::size_t taps = k * k, kk = c_in * taps;
  if (xv.dim(0) != c_in || sv.shape() != Shape{c_in} || wv.dim(3) != k || k % 2 == 0) {
    throw ConfigError("modulated_conv: input " + shape_string(xv.shape()) + ", weight " +
                      shape_string(wv.shape()) + ", style " + shape_string(sv.shape()) +
                      " are inconsistent");
  }

  struct Saved {
    std::vector<double> col;  // empty when k == 1 (the input itself is used)
    Tensor wmod;              // (c_out, kk)
    Tensor weff;
    std::vector<double> demod;
  };
  auto saved = std::make_shared<Saved>();
  saved->wmod = Tensor(Shape{c_out, kk});
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t i = 0; i < c_in; ++i) {
      for (std::size_t t = 0; t < taps; ++t) {
        const std::size_t idx = o * kk + i * taps + t;
        saved->wmod[idx] = wv[idx] * sv[i];
      }
    }
  }
  saved->weff = saved->wmod;
  if (demodulate) {
    saved->demod.resize(c_out);
    for (std::size_t o = 0; o < c_out; ++o) {
      double ss = eps;
      for (std::size_t q = 0; q < kk; ++q) ss += saved->wmod[o * kk + q] * saved->wmod[o * kk + q];
      saved->demod[o] = 1.0 / std::sqrt(ss);
      for (std::size_t q = 0; q < kk; ++q) saved->weff[o * kk + q] *= saved->demod[o];
    }
  }
  const double* col_ptr = xv.data();
  if (k > 1) {
    detail::im2col(xv, k, saved->col);
    col_ptr = saved->col.data();
  }
  Tensor out(Shape{c_out, h, w});
  detail::as_mat(out, c_out, hw).noalias() =
      detail::as_mat(saved->weff, c_out, kk) *
      detail::ConstMatMap(col_ptr, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));

  const bool needs = x.requires_grad() || weight.requires_grad() || style.requires_grad();
  if (!needs) saved.reset();
  const std::size_t ix = x.id, iw = weight.id, is = style.id;
  return x.tape->record(
      std::move(out), {x, weight, style},
      [ix, iw, is, saved, demodulate, c_out, c_in, k, taps, kk, hw](Tape& t, std::size_t self) {
        const auto gy = detail::as_mat(t.grad_ref(self), c_out, hw);
        const double* col_ptr = k > 1 ? saved->col.data() : t.value(ix).data();
        const detail::ConstMatMap col(col_ptr, static_cast<Eigen::Index>(kk),
                                      static_cast<Eigen::Index>(hw));
        Tensor* gw = t.grad_acc(iw);
        Tensor* gs = t.grad_acc(is);
        if (gw || gs) {
          detail::RowMat g_weff = gy * col.transpose();  // (c_out, kk)
          detail::RowMat g_wmod = g_weff;
          if (demodulate) {
            for (std::size_t o = 0; o < c_out; ++o) {
              const double d = saved->demod[o];
              double proj = 0.0;
              for (std::size_t q = 0; q < kk; ++q) {
                proj += g_weff(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(q)) *
                        saved->wmod[o * kk + q];
              }
              for (std::size_t q = 0; q < kk; ++q) {
                g_wmod(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(q)) =
                    d * g_weff(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(q)) -
                    d * d * d * proj * saved->wmod[o * kk + q];
              }
            }
          }
          const Tensor& wv = t.value(iw);
          const Tensor& sv = t.value(is);
          for (std::size_t o = 0; o < c_out; ++o) {
            for (std::size_t i = 0; i < c_in; ++i) {
              for (std::size_t tp = 0; tp < taps; ++tp) {
                const std::size_t q = i * taps + tp;
                const double gm =
                    g_wmod(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(q));
                if (gw) (*gw)[o * kk + q] += gm * sv[i];
                if (gs) (*gs)[i] += gm * wv[o * kk + q];
              }
            }
          }
        }
        if (Tensor* gx = t.grad_acc(ix)) {
          const auto weff = detail::as_mat(saved->weff, c_out, kk);
          if (k == 1) {
            detail::as_mat(*gx, kk, hw).noalias() += weff.transpose() * gy;
          } else {
            detail::RowMat gcol = weff.transpose() * gy;
            detail::col2im_add(gcol.data(), k, *gx);
          }
        }
      });
}

/// Plain 1x1 convolution: x (C_in, H, W), weight (C_out, C_in).
inline Var conv1x1(Var x, Var weight) {
  detail::require_rank(x, 3, "conv1x1");
  detail::require_rank(weight, 2, "conv1x1");
  const std::size_t c_in = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  const std::size_t c_out = weight.value().dim(0);
  if (weight.value().dim(1) != c_in) {
    throw ConfigError("conv1x1: weight " + shape_string(weight.shape()) +
                      " does not match input " + shape_string(x.shape()));
  }
  const std::size_t hw = h * w;
  Tensor out(Shape{c_out, h, w});
  detail::as_mat(out, c_out, hw).noalias() =
      detail::as_mat(weight.value(), c_out, c_in) * detail::as_mat(x.value(), c_in, hw);
  const std::size_t ix = x.id, iw = weight.id;
  return x.tape->record(std::move(out), {x, weight},
                        [ix, iw, c_in, c_out, hw](Tape& t, std::size_t self) {
                          const auto g = detail::as_mat(t.grad_ref(self), c_out, hw);
                          if (Tensor* gx = t.grad_acc(ix)) {
                            detail::as_mat(*gx, c_in, hw).noalias() +=
                                detail::as_mat(t.value(iw), c_out, c_in).transpose() * g;
                          }
                          if (Tensor* gw = t.grad_acc(iw)) {
                            detail::as_mat(*gw, c_out, c_in).noalias() +=
                                g * detail::as_mat(t.value(ix), c_in, hw).transpose();
                          }
                        });
}

/// x (C, H, W) + b (C) broadcast over space.
inline Var add_channel_bias(Var x, Var bias) {
  detail::require_rank(x, 3, "add_channel_bias");
  const std::size_t c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
  if (bias.value().shape() != Shape{c}) throw ConfigError("add_channel_bias: bias shape mismatch");
  Tensor out = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += bias.value()[ch];
  }
  const std::size_t ix = x.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, bias}, [ix, ib, c, hw](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* gx = t.grad_acc(ix)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor* gb = t.grad_acc(ib)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t p = 0; p < hw; ++p) (*gb)[ch] += g[ch * hw + p];
      }
    }
  });
}

/// x (C, H, W) + strength[0] * noise (1, H, W) broadcast over channels.
inline Var add_scaled_noise(Var x, Var noise, Var strength) {
  const std::size_t c = x.value().dim(0), hw = x.value().dim(1) * x.value().dim(2);
  if (noise.value().size() != hw || strength.value().size() != 1) {
    throw ConfigError("add_scaled_noise: noise/strength shape mismatch");
  }
  Tensor out = x.value();
  const double s = strength.value()[0];
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += s * noise.value()[p];
  }
  const std::size_t ix = x.id, in = noise.id, is = strength.id;
  return x.tape->record(std::move(out), {x, noise, strength},
                        [ix, in, is, c, hw](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_ref(self);
                          const Tensor& nv = t.value(in);
                          const double s = t.value(is)[0];
                          if (Tensor* gx = t.grad_acc(ix)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                          }
                          Tensor* gn = t.grad_acc(in);
                          Tensor* gs = t.grad_acc(is);
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            for (std::size_t p = 0; p < hw; ++p) {
                              if (gn) (*gn)[p] += s * g[ch * hw + p];
                              if (gs) (*gs)[0] += nv[p] * g[ch * hw + p];
                            }
                          }
                        });
}

/// Nearest-neighbour x2 upsampling of a (C, H, W) map.
inline Var upsample_nearest2x(Var x) {
  detail::require_rank(x, 3, "upsample_nearest2x");
  const std::size_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  Tensor out(Shape{c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x.value().at(ch, y / 2, xx / 2);
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, c, h, w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* gx = t.grad_acc(ix)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < 2 * h; ++y) {
          for (std::size_t xx = 0; xx < 2 * w; ++xx) gx->at(ch, y / 2, xx / 2) += g.at(ch, y, xx);
        }
      }
    }
  });
}

enum class ResizeMode { kBilinear, kNearest };

/// Resamples a (C, H, W) map to (C, out_h, out_w). Bilinear uses half-pixel
/// centres with edge clamping; nearest picks floor((o + 0.5) * in / out).
/// Same-size input is returned unchanged.
inline Var resize(Var x, std::size_t out_h, std::size_t out_w,
                  ResizeMode mode = ResizeMode::kBilinear) {
  detail::require_rank(x, 3, "resize");
  const std::size_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  if (h == out_h && w == out_w) return x;
  detail::Taps ty, tx;
  if (mode == ResizeMode::kBilinear) {
    ty = detail::linear_taps(h, out_h);
    tx = detail::linear_taps(w, out_w);
  } else {
    auto nearest = [](std::size_t in, std::size_t out) {
      detail::Taps t;
      for (std::size_t o = 0; o < out; ++o) {
        std::size_t s = static_cast<std::size_t>(
            std::floor((static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                       static_cast<double>(out)));
        s = std::min(s, in - 1);
        t.i0.push_back(s);
        t.i1.push_back(s);
        t.w1.push_back(0.0);
      }
      return t;
    };
    ty = nearest(h, out_h);
    tx = nearest(w, out_w);
  }
  Tensor out(Shape{c, out_h, out_w});
  const Tensor& xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
        out.at(ch, oy, ox) = wy0 * (wx0 * xv.at(ch, ty.i0[oy], tx.i0[ox]) +
                                    wx1 * xv.at(ch, ty.i0[oy], tx.i1[ox])) +
                             wy1 * (wx0 * xv.at(ch, ty.i1[oy], tx.i0[ox]) +
                                    wx1 * xv.at(ch, ty.i1[oy], tx.i1[ox]));
      }
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(
      std::move(out), {x}, [ix, c, out_h, out_w, ty, tx](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_ref(self);
        if (Tensor* gx = t.grad_acc(ix)) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              const double wy1 = ty.w1[oy], wy0 = 1.0 - wy1;
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const double wx1 = tx.w1[ox], wx0 = 1.0 - wx1;
                const double go = g.at(ch, oy, ox);
                gx->at(ch, ty.i0[oy], tx.i0[ox]) += go * wy0 * wx0;
                gx->at(ch, ty.i0[oy], tx.i1[ox]) += go * wy0 * wx1;
                gx->at(ch, ty.i1[oy], tx.i0[ox]) += go * wy1 * wx0;
                gx->at(ch, ty.i1[oy], tx.i1[ox]) += go * wy1 * wx1;
              }
            }
          }
        }
      });
}

/// Average pooling over non-overlapping k x k windows of a (C, H, W) map.
inline Var avg_pool(Var x, std::size_t k) {
  detail::require_rank(x, 3, "avg_pool");
  const std::size_t c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  if (k == 0 || h % k != 0 || w % k != 0) throw ConfigError("avg_pool: size not divisible");
  if (k == 1) return x;
  const std::size_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) out.at(ch, y / k, xx / k) += x.value().at(ch, y, xx) * inv;
    }
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, c, h, w, k, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (Tensor* gx = t.grad_acc(ix)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) gx->at(ch, y, xx) += g.at(ch, y / k, xx / k) * inv;
        }
      }
    }
  });
}

/// Per-channel mean of a (C, H, W) map over rows [y0, y1) and columns [x0, x1).
inline Var region_channel_mean(Var x, std::size_t y0, std::size_t x0, std::size_t y1,
                               std::size_t x1) {
  detail::require_rank(x, 3, "region_channel_mean");
  const std::size_t c = x.value().dim(0);
  if (!(y0 < y1 && x0 < x1 && y1 <= x.value().dim(1) && x1 <= x.value().dim(2))) {
    throw ConfigError("region_channel_mean: empty or out-of-bounds region");
  }
  const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
  Tensor out(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t xx = x0; xx < x1; ++xx) s += x.value().at(ch, y, xx);
    }
    out[ch] = s * inv;
  }
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x},
                        [ix, c, y0, x0, y1, x1, inv](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad_ref(self);
                          if (Tensor* gx = t.grad_acc(ix)) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              for (std::size_t y = y0; y < y1; ++y) {
                                for (std::size_t xx = x0; xx < x1; ++xx) {
                                  gx->at(ch, y, xx) += g[ch] * inv;
                                }
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Editing-specific ops

/// m * mapped + (1 - m) * original, with m (1, H, W) broadcast over channels.
inline Var blend(Var original, Var mapped, Var mask) {
  if (original.shape() != mapped.shape()) {
    throw ShapeError("blend: feature shapes differ " + shape_string(original.shape()) +
                     " vs " + shape_string(mapped.shape()));
  }
  detail::require_rank(original, 3, "blend");
  const Shape& fs = original.shape();
  if (mask.shape() != Shape{1, fs[1], fs[2]}) {
    throw ShapeError("blend: mask " + shape_string(mask.shape()) +
                     " does not match features " + shape_string(fs));
  }
  const std::size_t c = fs[0], hw = fs[1] * fs[2];
  const Tensor& a = mapped.value();
  const Tensor& b = original.value();
  const Tensor& m = mask.value();
  Tensor out(fs);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t i = ch * hw + p;
      // Equal inputs pass through unrounded, so an unchanged feature stays
      // bit-identical under any mask.
      out[i] = a[i] == b[i] ? b[i] : m[p] * a[i] + (1.0 - m[p]) * b[i];
    }
  }
  const std::size_t io = original.id, ia = mapped.id, im = mask.id;
  return original.tape->record(
      std::move(out), {original, mapped, mask}, [io, ia, im, c, hw](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_ref(self);
        const Tensor& m = t.value(im);
        if (Tensor* go = t.grad_acc(io)) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) (*go)[ch * hw + p] += (1.0 - m[p]) * g[ch * hw + p];
          }
        }
        if (Tensor* ga = t.grad_acc(ia)) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) (*ga)[ch * hw + p] += m[p] * g[ch * hw + p];
          }
        }
        if (Tensor* gm = t.grad_acc(im)) {
          const Tensor& a = t.value(ia);
          const Tensor& b = t.value(io);
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t i = ch * hw + p;
              (*gm)[p] += (a[i] - b[i]) * g[i];
            }
          }
        }
      });
}

/// Anisotropic total variation of a (1, H, W) map: sum of |vertical| and
/// |horizontal| neighbour differences, or their squares when `squared`.
/// The subgradient of |d| at d == 0 is taken as 0.
inline Var total_variation(Var mask, bool squared = false) {
  detail::require_rank(mask, 3, "total_variation");
  const std::size_t h = mask.value().dim(1), w = mask.value().dim(2);
  const Tensor& m = mask.value();
  double s = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (y + 1 < h) {
        const double d = m[(y + 1) * w + x] - m[y * w + x];
        s += squared ? d * d : std::abs(d);
      }
      if (x + 1 < w) {
        const double d = m[y * w + x + 1] - m[y * w + x];
        s += squared ? d * d : std::abs(d);
      }
    }
  }
  const std::size_t im = mask.id;
  return mask.tape->record(Tensor::scalar(s), {mask}, [im, h, w, squared](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self)[0];
    const Tensor& m = t.value(im);
    Tensor* gm = t.grad_acc(im);
    if (!gm) return;
    auto dphi = [squared](double d) {
      if (squared) return 2.0 * d;
      return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    };
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (y + 1 < h) {
          const double gd = g * dphi(m[(y + 1) * w + x] - m[y * w + x]);
          (*gm)[(y + 1) * w + x] += gd;
          (*gm)[y * w + x] -= gd;
        }
        if (x + 1 < w) {
          const double gd = g * dphi(m[y * w + x + 1] - m[y * w + x]);
          (*gm)[y * w + x + 1] += gd;
          (*gm)[y * w + x] -= gd;
        }
      }
    }
  });
}

}  // namespace feat::ad
