#include "wsf/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wsf/common/error.hpp"

namespace wsf::nn {
namespace {

[[noreturn]] void shape_fail(std::string_view layer, const std::string& expected, const Shape& actual) {
  throw ShapeError(std::string(layer) + ": expected input " + expected + ", got " + shape_str(actual));
}

}  // namespace

Var dense(Graph& g, Var x, Var weight, Var bias, std::string_view layer) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(weight);
  const Tensor& B = g.value(bias);
  if (W.rank() != 2 || B.rank() != 1 || B.dim(0) != W.dim(1)) {
    throw ShapeError(std::string(layer) + ": malformed weights " + shape_str(W.shape()) + " / " +
                     shape_str(B.shape()));
  }
  const std::size_t in = W.dim(0), out = W.dim(1);
  if (X.rank() != 2 || X.dim(1) != in) shape_fail(layer, "[N," + std::to_string(in) + "]", X.shape());
  const std::size_t n = X.dim(0);

  Tensor Y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    double* y = Y.data() + r * out;
    std::copy(B.data(), B.data() + out, y);
    const double* xr = X.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      if (xv == 0.0) continue;
      const double* w = W.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) y[j] += xv * w[j];
    }
  }

  return g.push("dense", std::move(Y), {x.id, weight.id, bias.id},
                [x, weight, bias, n, in, out](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  const Tensor& X = gr.value(x);
                  const Tensor& W = gr.value(weight);
                  if (gr.requires_grad(x.id)) {
                    Tensor& dX = gr.grad(x.id);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* dy = dY.data() + r * out;
                      double* dx = dX.data() + r * in;
                      for (std::size_t i = 0; i < in; ++i) {
                        const double* w = W.data() + i * out;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < out; ++j) acc += dy[j] * w[j];
                        dx[i] += acc;
                      }
                    }
                  }
                  if (gr.requires_grad(weight.id)) {
                    Tensor& dW = gr.grad(weight.id);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double* dy = dY.data() + r * out;
                      const double* xr = X.data() + r * in;
                      for (std::size_t i = 0; i < in; ++i) {
                        const double xv = xr[i];
                        if (xv == 0.0) continue;
                        double* dw = dW.data() + i * out;
                        for (std::size_t j = 0; j < out; ++j) dw[j] += xv * dy[j];
                      }
                    }
                  }
                  if (gr.requires_grad(bias.id)) {
                    Tensor& dB = gr.grad(bias.id);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < out; ++j) dB[j] += dY[r * out + j];
                  }
                });
}

Var conv2d(Graph& g, Var x, Var weight, Var bias, std::string_view layer) {
  const Tensor& X = g.value(x);
  const Tensor& W = g.value(weight);
  const Tensor& B = g.value(bias);
  if (W.rank() != 4 || W.dim(2) != W.dim(3) || B.rank() != 1 || B.dim(0) != W.dim(0)) {
    throw ShapeError(std::string(layer) + ": malformed weights " + shape_str(W.shape()));
  }
  const std::size_t out_c = W.dim(0), in_c = W.dim(1), k = W.dim(2);
  if (X.rank() != 4 || X.dim(1) != in_c || X.dim(2) < k || X.dim(3) < k) {
    shape_fail(layer, "[N," + std::to_string(in_c) + ",H>=" + std::to_string(k) + ",W>=" + std::to_string(k) + "]",
               X.shape());
  }
  const std::size_t n = X.dim(0), h = X.dim(2), w = X.dim(3);
  const std::size_t oh = h - k + 1, ow = w - k + 1;

  Tensor Y({n, out_c, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_c; ++o) {
      double* y = Y.data() + (b * out_c + o) * oh * ow;
      std::fill(y, y + oh * ow, B[o]);
      for (std::size_t c = 0; c < in_c; ++c) {
        const double* xin = X.data() + (b * in_c + c) * h * w;
        const double* kern = W.data() + (o * in_c + c) * k * k;
        for (std::size_t ki = 0; ki < k; ++ki) {
          for (std::size_t kj = 0; kj < k; ++kj) {
            const double wv = kern[ki * k + kj];
            for (std::size_t r = 0; r < oh; ++r) {
              const double* xr = xin + (r + ki) * w + kj;
              double* yr = y + r * ow;
              for (std::size_t col = 0; col < ow; ++col) yr[col] += wv * xr[col];
            }
          }
        }
      }
    }
  }

  return g.push("conv2d", std::move(Y), {x.id, weight.id, bias.id},
                [x, weight, bias, n, in_c, out_c, k, h, w, oh, ow](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  const Tensor& X = gr.value(x);
                  const Tensor& W = gr.value(weight);
                  const bool need_x = gr.requires_grad(x.id);
                  const bool need_w = gr.requires_grad(weight.id);
                  Tensor* dX = need_x ? &gr.grad(x.id) : nullptr;
                  Tensor* dW = need_w ? &gr.grad(weight.id) : nullptr;
                  for (std::size_t b = 0; b < n; ++b) {
                    for (std::size_t o = 0; o < out_c; ++o) {
                      const double* dy = dY.data() + (b * out_c + o) * oh * ow;
                      for (std::size_t c = 0; c < in_c; ++c) {
                        const std::size_t xoff = (b * in_c + c) * h * w;
                        const std::size_t koff = (o * in_c + c) * k * k;
                        for (std::size_t ki = 0; ki < k; ++ki) {
                          for (std::size_t kj = 0; kj < k; ++kj) {
                            const double wv = W[koff + ki * k + kj];
                            double acc = 0.0;
                            for (std::size_t r = 0; r < oh; ++r) {
                              const double* dyr = dy + r * ow;
                              const std::size_t row = xoff + (r + ki) * w + kj;
                              if (need_w) {
                                const double* xr = X.data() + row;
                                for (std::size_t col = 0; col < ow; ++col) acc += dyr[col] * xr[col];
                              }
                              if (need_x) {
                                double* dxr = dX->data() + row;
                                for (std::size_t col = 0; col < ow; ++col) dxr[col] += wv * dyr[col];
                              }
                            }
                            if (need_w) (*dW)[koff + ki * k + kj] += acc;
                          }
                        }
                      }
                    }
                  }
                  if (gr.requires_grad(bias.id)) {
                    Tensor& dB = gr.grad(bias.id);
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t o = 0; o < out_c; ++o) {
                        const double* dy = dY.data() + (b * out_c + o) * oh * ow;
                        double acc = 0.0;
                        for (std::size_t i = 0; i < oh * ow; ++i) acc += dy[i];
                        dB[o] += acc;
                      }
                  }
                });
}

Var relu(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0.0 ? X[i] : 0.0;
  return g.push("relu", std::move(Y), {x.id}, [x](Graph& gr, std::size_t self) {
    const Tensor& dY = gr.grad(self);
    const Tensor& X = gr.value(x);
    Tensor& dX = gr.grad(x.id);
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X[i] > 0.0) dX[i] += dY[i];
  });
}

Var max_pool2(Graph& g, Var x, std::string_view layer) {
  const Tensor& X = g.value(x);
  if (X.rank() != 4 || X.dim(2) < 2 || X.dim(3) < 2) shape_fail(layer, "[N,C,H>=2,W>=2]", X.shape());
  const std::size_t n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor Y({n, c, oh, ow});
  std::vector<std::size_t> argmax(Y.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* xin = X.data() + plane * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t col = 0; col < ow; ++col) {
        std::size_t best = (2 * r) * w + 2 * col;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = (2 * r + dr) * w + 2 * col + dc;
            if (xin[idx] > xin[best]) best = idx;
          }
        const std::size_t o = plane * oh * ow + r * ow + col;
        Y[o] = xin[best];
        argmax[o] = plane * h * w + best;
      }
    }
  }
  return g.push("maxpool2", std::move(Y), {x.id},
                [x, argmax = std::move(argmax)](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  Tensor& dX = gr.grad(x.id);
                  for (std::size_t i = 0; i < argmax.size(); ++i) dX[argmax[i]] += dY[i];
                });
}

Var flatten(Graph& g, Var x) {
  const Tensor& X = g.value(x);
  if (X.rank() < 1) throw ShapeError("flatten: rank-0 input");
  const std::size_t n = X.dim(0);
  const std::size_t rest = n ? X.size() / n : 0;
  return g.push("flatten", X.reshaped({n, rest}), {x.id}, [x](Graph& gr, std::size_t self) {
    const Tensor& dY = gr.grad(self);
    Tensor& dX = gr.grad(x.id);
    for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i];
  });
}

Var softmax(Graph& g, Var x, std::string_view layer) {
  const Tensor& X = g.value(x);
  if (X.rank() != 2) shape_fail(layer, "[N,M]", X.shape());
  const std::size_t n = X.dim(0), m = X.dim(1);
  Tensor Y({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = X.data() + r * m;
    double* yr = Y.data() + r * m;
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  return g.push("softmax", std::move(Y), {x.id}, [x, n, m](Graph& gr, std::size_t self) {
    const Tensor& dY = gr.grad(self);
    const Tensor& Y = gr.value(self);
    Tensor& dX = gr.grad(x.id);
    for (std::size_t r = 0; r < n; ++r) {
      const double* y = Y.data() + r * m;
      const double* dy = dY.data() + r * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < m; ++j) dX[r * m + j] += y[j] * (dy[j] - dot);
    }
  });
}

Var cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Tensor& Z = g.value(logits);
  if (Z.rank() != 2 || Z.dim(0) != labels.size() || Z.dim(0) == 0) {
    throw ShapeError("cross_entropy: logits " + shape_str(Z.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = Z.dim(0), m = Z.dim(1);
  Tensor probs({n, m});
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= m) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(m) + ")");
    }
    const double* z = Z.data() + r * m;
    const double mx = *std::max_element(z, z + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (probs[r * m + j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < m; ++j) probs[r * m + j] /= s;
    loss += (mx + std::log(s)) - z[y];
  }
  loss /= static_cast<double>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return g.push("cross_entropy", Tensor({1}, {loss}), {logits.id},
                [logits, n, m, probs = std::move(probs), ys = std::move(ys)](Graph& gr, std::size_t self) {
                  const double scale = gr.grad(self)[0] / static_cast<double>(n);
                  Tensor& dZ = gr.grad(logits.id);
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < m; ++j) dZ[r * m + j] += scale * probs[r * m + j];
                    dZ[r * m + static_cast<std::size_t>(ys[r])] -= scale;
                  }
                });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& A = g.value(a);
  const Tensor& B = g.value(b);
  if (A.shape() != B.shape()) {
    throw ShapeError("add: shape " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  Tensor Y = A;
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  return g.push("add", std::move(Y), {a.id, b.id}, [a, b](Graph& gr, std::size_t self) {
    const Tensor& dY = gr.grad(self);
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v.id)) continue;
      Tensor& d = gr.grad(v.id);
      for (std::size_t i = 0; i < dY.size(); ++i) d[i] += dY[i];
    }
  });
}

Var scale_rows(Graph& g, Var x, Var weights, std::size_t column) {
  const Tensor& X = g.value(x);
  const Tensor& A = g.value(weights);
  if (X.rank() != 2 || A.rank() != 2 || A.dim(0) != X.dim(0) || column >= A.dim(1)) {
    throw ShapeError("scale_rows: x " + shape_str(X.shape()) + ", weights " + shape_str(A.shape()) +
                     ", column " + std::to_string(column));
  }
  const std::size_t n = X.dim(0), m = X.dim(1), d = A.dim(1);
  Tensor Y({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const double a = A[r * d + column];
    for (std::size_t j = 0; j < m; ++j) Y[r * m + j] = a * X[r * m + j];
  }
  return g.push("scale_rows", std::move(Y), {x.id, weights.id},
                [x, weights, column, n, m, d](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  const Tensor& X = gr.value(x);
                  const Tensor& A = gr.value(weights);
                  if (gr.requires_grad(x.id)) {
                    Tensor& dX = gr.grad(x.id);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double a = A[r * d + column];
                      for (std::size_t j = 0; j < m; ++j) dX[r * m + j] += a * dY[r * m + j];
                    }
                  }
                  if (gr.requires_grad(weights.id)) {
                    Tensor& dA = gr.grad(weights.id);
                    for (std::size_t r = 0; r < n; ++r) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < m; ++j) acc += X[r * m + j] * dY[r * m + j];
                      dA[r * d + column] += acc;
                    }
                  }
                });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = g.value(parts[0]).dim(0);
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (Var v : parts) {
    const Tensor& t = g.value(v);
    if (t.rank() != 2 || t.dim(0) != n) {
      throw ShapeError("concat_cols: part shape " + shape_str(t.shape()) + " with batch " + std::to_string(n));
    }
    widths.push_back(t.dim(1));
    ids.push_back(v.id);
    total += t.dim(1);
  }
  Tensor Y({n, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = g.value(parts[p]);
    for (std::size_t r = 0; r < n; ++r)
      std::copy(t.data() + r * widths[p], t.data() + (r + 1) * widths[p], Y.data() + r * total + off);
    off += widths[p];
  }
  auto inputs = ids;
  return g.push("concat_cols", std::move(Y), std::move(inputs),
                [ids = std::move(ids), widths = std::move(widths), n, total](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  std::size_t off = 0;
                  for (std::size_t p = 0; p < ids.size(); ++p) {
                    if (gr.requires_grad(ids[p])) {
                      Tensor& d = gr.grad(ids[p]);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < widths[p]; ++j)
                          d[r * widths[p] + j] += dY[r * total + off + j];
                    }
                    off += widths[p];
                  }
                });
}

Var max_over_groups(Graph& g, Var z, const std::vector<std::vector<std::size_t>>& groups) {
  const Tensor& Z = g.value(z);
  if (Z.rank() != 2) throw ShapeError("max_over_groups: expected [N,M], got " + shape_str(Z.shape()));
  const std::size_t n = Z.dim(0), m = Z.dim(1), gcount = groups.size();
  for (const auto& grp : groups) {
    if (grp.empty()) throw ShapeError("max_over_groups: empty group");
    for (auto p : grp)
      if (p >= m) throw ShapeError("max_over_groups: position " + std::to_string(p) + " outside width " + std::to_string(m));
  }
  Tensor Y({n, gcount});
  std::vector<std::size_t> argmax(n * gcount);
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = Z.data() + r * m;
    for (std::size_t j = 0; j < gcount; ++j) {
      std::size_t best = groups[j][0];
      for (auto p : groups[j])
        if (zr[p] > zr[best]) best = p;
      Y[r * gcount + j] = zr[best];
      argmax[r * gcount + j] = r * m + best;
    }
  }
  return g.push("max_over_groups", std::move(Y), {z.id},
                [z, argmax = std::move(argmax)](Graph& gr, std::size_t self) {
                  const Tensor& dY = gr.grad(self);
                  Tensor& dZ = gr.grad(z.id);
                  for (std::size_t i = 0; i < argmax.size(); ++i) dZ[argmax[i]] += dY[i];
                });
}

Var weighted_sum(Graph& g, Var x, const Tensor& r) {
  const Tensor& X = g.value(x);
  if (X.size() != r.size()) {
    throw ShapeError("weighted_sum: " + shape_str(X.shape()) + " vs " + shape_str(r.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i] * r[i];
  return g.push("weighted_sum", Tensor({1}, {s}), {x.id}, [x, r](Graph& gr, std::size_t self) {
    const double up = gr.grad(self)[0];
    Tensor& dX = gr.grad(x.id);
    for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += up * r[i];
  });
}

}  // namespace wsf::nn
