/*
 * Copyright 2026 GFDANN Toolkit Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "gfdann/errors.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// Running statistics for one batch-norm layer.  Owned by the model, not
// by the graph; a graph node updates them only when asked to.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

inline constexpr double kFocalFloor = 1e-12;

// Per-sample focal term -alpha * (1 - p)^gamma * ln(p) with the
// probability floored at kFocalFloor.  Sets *floored when the floor
// engages.
inline double focal_term(double p, double gamma, double alpha, bool* floored = nullptr) {
  double pc = p;
  if (pc < kFocalFloor) {
    pc = kFocalFloor;
    if (floored != nullptr) *floored = true;
  }
  return -alpha * std::pow(1.0 - pc, gamma) * std::log(pc);
}

// d/dp of focal_term.  Zero in the floored region (the term is constant
// there); finite limit at p == 1 where the naive formula is 0^negative.
inline double focal_term_grad(double p, double gamma, double alpha) {
  if (p < kFocalFloor) return 0.0;
  double u = 1.0 - p;
  if (u <= 0.0) return gamma == 0.0 ? -alpha / p : 0.0;
  double g = -alpha * std::pow(u, gamma) / p;
  if (gamma != 0.0) g += alpha * gamma * std::pow(u, gamma - 1.0) * std::log(p);
  return g;
}

// Reverse-mode computation graph over Tensor values.
//
// Nodes are appended in construction order, which is a topological order
// by construction; backward() walks them once in exact reverse, so two
// backward passes over the same graph produce bit-identical gradients.
// Gradients are reset at the start of every backward() call and
// accumulated within it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(int id) const { return nodes_.at(id).value; }

  // Valid for ids <= the root of the most recent backward() call.
  const Tensor& grad(int id) const { return nodes_.at(id).grad; }

  // Leaf holding data that no gradient will be read from.
  int constant(Tensor v) { return push(std::move(v), nullptr); }

  // Leaf holding a learnable tensor; the caller keeps the id to read the
  // gradient after backward().  Identical mechanics to constant(); the
  // distinction documents intent at call sites.
  int param(Tensor v) { return push(std::move(v), nullptr); }

  int add(int a, int b) {
    require_same_shape(value(a), value(b), "add");
    Tensor y = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    int self = next_id();
    return push(std::move(y), [a, b, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& ga = g.grd(a);
      Tensor& gb = g.grd(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i];
        gb[i] += gy[i];
      }
    });
  }

  int sub(int a, int b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor y = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    int self = next_id();
    return push(std::move(y), [a, b, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& ga = g.grd(a);
      Tensor& gb = g.grd(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i];
        gb[i] -= gy[i];
      }
    });
  }

  int mul(int a, int b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor y = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    int self = next_id();
    return push(std::move(y), [a, b, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& av = g.value(a);
      const Tensor& bvv = g.value(b);
      Tensor& ga = g.grd(a);
      Tensor& gb = g.grd(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i] * bvv[i];
        gb[i] += gy[i] * av[i];
      }
    });
  }

  int scale(int a, double s) {
    Tensor y = value(a);
    for (double& v : y.data) v *= s;
    int self = next_id();
    return push(std::move(y), [a, s, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& ga = g.grd(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += s * gy[i];
    });
  }

  int sum(int a) {
    double acc = 0.0;
    for (double v : value(a).data) acc += v;
    int self = next_id();
    return push(Tensor::scalar(acc), [a, self](Graph& g) {
      double gy = g.grd(self)[0];
      Tensor& ga = g.grd(a);
      for (double& v : ga.data) v += gy;
    });
  }

  int relu(int x) {
    Tensor y = value(x);
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    int self = next_id();
    return push(std::move(y), [x, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& xv = g.value(x);
      Tensor& gx = g.grd(x);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += gy[i];
      }
    });
  }

  // Identity forward; backward delivers -lambda * upstream.
  int grad_reverse(int x, double lambda) {
    if (!(lambda >= 0.0)) {
      throw ConfigError("grad_reverse: lambda must be non-negative");
    }
    Tensor y = value(x);
    int self = next_id();
    return push(std::move(y), [x, lambda, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& gx = g.grd(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] -= lambda * gy[i];
    });
  }

  // (N, ...) -> (N, prod of trailing dims).  Row-major order preserved.
  int flatten(int x) {
    const Tensor& xv = value(x);
    if (xv.rank() < 2) throw DimensionError("flatten: need rank >= 2");
    std::size_t n = xv.dim(0);
    Tensor y({n, xv.size() / n});
    y.data = xv.data;
    int self = next_id();
    return push(std::move(y), [x, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& gx = g.grd(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }

  // (N, Da) ++ (N, Db) -> (N, Da + Db), columns of a first.
  int concat(int a, int b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_rank(av, 2, "concat");
    require_rank(bv, 2, "concat");
    if (av.dim(0) != bv.dim(0)) {
      throw DimensionError("concat: row counts differ, " + av.shape_string() + " vs " +
                           bv.shape_string());
    }
    std::size_t n = av.dim(0), da = av.dim(1), db = bv.dim(1);
    Tensor y({n, da + db});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < da; ++j) y(i, j) = av(i, j);
      for (std::size_t j = 0; j < db; ++j) y(i, da + j) = bv(i, j);
    }
    int self = next_id();
    return push(std::move(y), [a, b, n, da, db, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      Tensor& ga = g.grd(a);
      Tensor& gb = g.grd(b);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < da; ++j) ga.data[i * da + j] += gy(i, j);
        for (std::size_t j = 0; j < db; ++j) gb.data[i * db + j] += gy(i, da + j);
      }
    });
  }

  // Per-channel 3x3 convolution, stride 1, zero padding 1.
  // x (N,C,K,T), w (C,3,3), b (C) -> (N,C,K,T).
  int depthwise_conv3x3(int x, int w, int b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    require_rank(xv, 4, "depthwise_conv3x3 input");
    std::size_t N = xv.dim(0), C = xv.dim(1), K = xv.dim(2), T = xv.dim(3);
    if (wv.shape != std::vector<std::size_t>{C, 3, 3}) {
      throw DimensionError("depthwise_conv3x3: weights must be (C,3,3) with C=" +
                           std::to_string(C) + ", got " + wv.shape_string());
    }
    if (bv.shape != std::vector<std::size_t>{C}) {
      throw DimensionError("depthwise_conv3x3: bias must be (C), got " + bv.shape_string());
    }
    Tensor y({N, C, K, T});
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const double* wc = &wv.data[c * 9];
        for (std::size_t i = 0; i < K; ++i) {
          for (std::size_t j = 0; j < T; ++j) {
            double acc = bv[c];
            for (int di = -1; di <= 1; ++di) {
              std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(K)) continue;
              for (int dj = -1; dj <= 1; ++dj) {
                std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(T)) continue;
                acc += wc[(di + 1) * 3 + (dj + 1)] *
                       xv(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
              }
            }
            y(n, c, i, j) = acc;
          }
        }
      }
    }
    int self = next_id();
    return push(std::move(y), [x, w, b, N, C, K, T, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& xv2 = g.value(x);
      const Tensor& wv2 = g.value(w);
      Tensor& gx = g.grd(x);
      Tensor& gw = g.grd(w);
      Tensor& gb = g.grd(b);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const double* wc = &wv2.data[c * 9];
          double* gwc = &gw.data[c * 9];
          for (std::size_t i = 0; i < K; ++i) {
            for (std::size_t j = 0; j < T; ++j) {
              double go = gy(n, c, i, j);
              gb[c] += go;
              for (int di = -1; di <= 1; ++di) {
                std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + di;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(K)) continue;
                for (int dj = -1; dj <= 1; ++dj) {
                  std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + dj;
                  if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(T)) continue;
                  std::size_t ui = static_cast<std::size_t>(ii);
                  std::size_t uj = static_cast<std::size_t>(jj);
                  gwc[(di + 1) * 3 + (dj + 1)] += go * xv2(n, c, ui, uj);
                  gx(n, c, ui, uj) += go * wc[(di + 1) * 3 + (dj + 1)];
                }
              }
            }
          }
        }
      }
    });
  }

  // Per-position channel mixing.  x (N,Cin,K,T), w (Cout,Cin), b (Cout)
  // -> (N,Cout,K,T).  Inner loops run over the contiguous spatial axis.
  int pointwise_conv1x1(int x, int w, int b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    require_rank(xv, 4, "pointwise_conv1x1 input");
    require_rank(wv, 2, "pointwise_conv1x1 weights");
    std::size_t N = xv.dim(0), Ci = xv.dim(1), K = xv.dim(2), T = xv.dim(3);
    std::size_t Co = wv.dim(0);
    if (wv.dim(1) != Ci) {
      throw DimensionError("pointwise_conv1x1: weight columns " + std::to_string(wv.dim(1)) +
                           " != input channels " + std::to_string(Ci));
    }
    if (bv.shape != std::vector<std::size_t>{Co}) {
      throw DimensionError("pointwise_conv1x1: bias must be (Cout), got " + bv.shape_string());
    }
    std::size_t P = K * T;
    Tensor y({N, Co, K, T});
    for (std::size_t n = 0; n < N; ++n) {
      const double* xb = &xv.data[n * Ci * P];
      double* yb = &y.data[n * Co * P];
      for (std::size_t co = 0; co < Co; ++co) {
        double* yo = yb + co * P;
        double bias = bv[co];
        for (std::size_t p = 0; p < P; ++p) yo[p] = bias;
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          double s = wv(co, ci);
          const double* xi = xb + ci * P;
          for (std::size_t p = 0; p < P; ++p) yo[p] += s * xi[p];
        }
      }
    }
    int self = next_id();
    return push(std::move(y), [x, w, b, N, Ci, Co, P, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& xv2 = g.value(x);
      const Tensor& wv2 = g.value(w);
      Tensor& gx = g.grd(x);
      Tensor& gw = g.grd(w);
      Tensor& gb = g.grd(b);
      for (std::size_t n = 0; n < N; ++n) {
        const double* xb = &xv2.data[n * Ci * P];
        double* gxb = &gx.data[n * Ci * P];
        const double* gyb = &gy.data[n * Co * P];
        for (std::size_t co = 0; co < Co; ++co) {
          const double* gyo = gyb + co * P;
          double bacc = 0.0;
          for (std::size_t p = 0; p < P; ++p) bacc += gyo[p];
          gb[co] += bacc;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double* xi = xb + ci * P;
            double* gxi = gxb + ci * P;
            double s = wv2(co, ci);
            double wacc = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
              wacc += gyo[p] * xi[p];
              gxi[p] += s * gyo[p];
            }
            gw(co, ci) += wacc;
          }
        }
      }
    });
  }

  // Batch normalization over (N,K,T) per channel.  Training mode uses
  // the biased batch variance; running statistics move toward the batch
  // statistics by `momentum` when update_running is set.  Inference mode
  // normalizes with the stored running statistics.
  int batch_norm(int x, int gamma, int beta, BatchNormState* state, bool training,
                 bool update_running, double momentum = 0.1, double eps = 1e-5) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    require_rank(xv, 4, "batch_norm input");
    std::size_t N = xv.dim(0), C = xv.dim(1), K = xv.dim(2), T = xv.dim(3);
    if (gv.shape != std::vector<std::size_t>{C} || bv.shape != std::vector<std::size_t>{C}) {
      throw DimensionError("batch_norm: scale/shift must be (C) with C=" + std::to_string(C));
    }
    if (state == nullptr || state->running_mean.shape != std::vector<std::size_t>{C}) {
      throw DimensionError("batch_norm: running state missing or wrong width");
    }
    if (training && N < 2) {
      throw DimensionError("batch_norm: training mode requires batch size >= 2");
    }
    std::size_t P = K * T;
    double count = static_cast<double>(N * P);
    std::vector<double> mu(C), inv(C);
    if (training) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* xc = &xv.data[(n * C + c) * P];
          for (std::size_t p = 0; p < P; ++p) s += xc[p];
        }
        double m = s / count;
        double v = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* xc = &xv.data[(n * C + c) * P];
          for (std::size_t p = 0; p < P; ++p) {
            double d = xc[p] - m;
            v += d * d;
          }
        }
        v /= count;
        mu[c] = m;
        inv[c] = 1.0 / std::sqrt(v + eps);
        if (update_running) {
          state->running_mean[c] = (1.0 - momentum) * state->running_mean[c] + momentum * m;
          state->running_var[c] = (1.0 - momentum) * state->running_var[c] + momentum * v;
        }
      }
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        mu[c] = state->running_mean[c];
        inv[c] = 1.0 / std::sqrt(state->running_var[c] + eps);
      }
    }
    Tensor y({N, C, K, T});
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = &xv.data[(n * C + c) * P];
        double* yc = &y.data[(n * C + c) * P];
        double m = mu[c], iv = inv[c], ga = gv[c], be = bv[c];
        for (std::size_t p = 0; p < P; ++p) yc[p] = ga * (xc[p] - m) * iv + be;
      }
    }
    int self = next_id();
    return push(std::move(y),
                [x, gamma, beta, N, C, P, training, mu, inv, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& xv2 = g.value(x);
      const Tensor& gv2 = g.value(gamma);
      Tensor& gx = g.grd(x);
      Tensor& gg = g.grd(gamma);
      Tensor& gb = g.grd(beta);
      double count = static_cast<double>(N * P);
      for (std::size_t c = 0; c < C; ++c) {
        double m = mu[c], iv = inv[c];
        double dbeta = 0.0, dgamma = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* xc = &xv2.data[(n * C + c) * P];
          const double* gyc = &gy.data[(n * C + c) * P];
          for (std::size_t p = 0; p < P; ++p) {
            dbeta += gyc[p];
            dgamma += gyc[p] * (xc[p] - m) * iv;
          }
        }
        gg[c] += dgamma;
        gb[c] += dbeta;
        double ga = gv2[c];
        if (training) {
          double mean_gy = dbeta / count;
          double mean_gy_xhat = dgamma / count;
          for (std::size_t n = 0; n < N; ++n) {
            const double* xc = &xv2.data[(n * C + c) * P];
            const double* gyc = &gy.data[(n * C + c) * P];
            double* gxc = &gx.data[(n * C + c) * P];
            for (std::size_t p = 0; p < P; ++p) {
              double xhat = (xc[p] - m) * iv;
              gxc[p] += ga * iv * (gyc[p] - mean_gy - xhat * mean_gy_xhat);
            }
          }
        } else {
          for (std::size_t n = 0; n < N; ++n) {
            const double* gyc = &gy.data[(n * C + c) * P];
            double* gxc = &gx.data[(n * C + c) * P];
            for (std::size_t p = 0; p < P; ++p) gxc[p] += ga * iv * gyc[p];
          }
        }
      }
    });
  }

  // x (N,Din), w (Dout,Din), b (Dout) -> x . w^T + b.
  int fully_connected(int x, int w, int b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    require_rank(xv, 2, "fully_connected input");
    require_rank(wv, 2, "fully_connected weights");
    std::size_t N = xv.dim(0), D = xv.dim(1), O = wv.dim(0);
    if (wv.dim(1) != D) {
      throw DimensionError("fully_connected: weight columns " + std::to_string(wv.dim(1)) +
                           " != input width " + std::to_string(D));
    }
    if (bv.shape != std::vector<std::size_t>{O}) {
      throw DimensionError("fully_connected: bias must be (Dout), got " + bv.shape_string());
    }
    Tensor y({N, O});
    for (std::size_t n = 0; n < N; ++n) {
      const double* xn = &xv.data[n * D];
      for (std::size_t o = 0; o < O; ++o) {
        const double* wo = &wv.data[o * D];
        double acc = bv[o];
        for (std::size_t d = 0; d < D; ++d) acc += wo[d] * xn[d];
        y(n, o) = acc;
      }
    }
    int self = next_id();
    return push(std::move(y), [x, w, b, N, D, O, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& xv2 = g.value(x);
      const Tensor& wv2 = g.value(w);
      Tensor& gx = g.grd(x);
      Tensor& gw = g.grd(w);
      Tensor& gb = g.grd(b);
      for (std::size_t n = 0; n < N; ++n) {
        const double* xn = &xv2.data[n * D];
        double* gxn = &gx.data[n * D];
        for (std::size_t o = 0; o < O; ++o) {
          double go = gy(n, o);
          gb[o] += go;
          const double* wo = &wv2.data[o * D];
          double* gwo = &gw.data[o * D];
          for (std::size_t d = 0; d < D; ++d) {
            gwo[d] += go * xn[d];
            gxn[d] += go * wo[d];
          }
        }
      }
    });
  }

  // Row-wise softmax with max subtraction.
  int softmax(int x) {
    const Tensor& xv = value(x);
    require_rank(xv, 2, "softmax input");
    std::size_t N = xv.dim(0), C = xv.dim(1);
    Tensor y({N, C});
    for (std::size_t n = 0; n < N; ++n) {
      const double* xn = &xv.data[n * C];
      double* yn = &y.data[n * C];
      double mx = xn[0];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, xn[c]);
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        yn[c] = std::exp(xn[c] - mx);
        s += yn[c];
      }
      for (std::size_t c = 0; c < C; ++c) yn[c] /= s;
    }
    int self = next_id();
    return push(std::move(y), [x, N, C, self](Graph& g) {
      const Tensor& gy = g.grd(self);
      const Tensor& yv = g.value(self);
      Tensor& gx = g.grd(x);
      for (std::size_t n = 0; n < N; ++n) {
        const double* gyn = &gy.data[n * C];
        const double* yn = &yv.data[n * C];
        double* gxn = &gx.data[n * C];
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += gyn[c] * yn[c];
        for (std::size_t c = 0; c < C; ++c) gxn[c] += yn[c] * (gyn[c] - s);
      }
    });
  }

  // Mean focal loss over the batch.  probs (N,C), targets in [0,C).
  // *floored is set when any true-class probability hit the numeric
  // floor; those samples contribute zero gradient.
  int focal_loss(int probs, std::vector<int> targets, double gamma, double alpha,
                 bool* floored = nullptr) {
    const Tensor& pv = value(probs);
    require_rank(pv, 2, "focal_loss probabilities");
    std::size_t N = pv.dim(0), C = pv.dim(1);
    if (targets.size() != N) {
      throw DimensionError("focal_loss: " + std::to_string(targets.size()) +
                           " targets for batch of " + std::to_string(N));
    }
    for (int t : targets) {
      if (t < 0 || static_cast<std::size_t>(t) >= C) {
        throw DimensionError("focal_loss: target class " + std::to_string(t) +
                             " outside [0," + std::to_string(C) + ")");
      }
    }
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      acc += focal_term(pv(n, static_cast<std::size_t>(targets[n])), gamma, alpha, floored);
    }
    acc /= static_cast<double>(N);
    int self = next_id();
    return push(Tensor::scalar(acc),
                [probs, targets = std::move(targets), gamma, alpha, N, self](Graph& g) {
      double gy = g.grd(self)[0];
      const Tensor& pv2 = g.value(probs);
      Tensor& gp = g.grd(probs);
      for (std::size_t n = 0; n < N; ++n) {
        std::size_t t = static_cast<std::size_t>(targets[n]);
        gp(n, t) += gy * focal_term_grad(pv2(n, t), gamma, alpha) / static_cast<double>(N);
      }
    });
  }

  // Resets gradients of nodes [0, root], seeds the scalar root with 1,
  // then calls each node's backward exactly once in reverse order.
  void backward(int root) {
    if (root < 0 || static_cast<std::size_t>(root) >= nodes_.size()) {
      throw DimensionError("backward: node id out of range");
    }
    if (nodes_[root].value.size() != 1) {
      throw DimensionError("backward: root must be scalar, got shape " +
                           nodes_[root].value.shape_string());
    }
    for (int i = 0; i <= root; ++i) {
      Node& n = nodes_[i];
      if (n.grad.shape == n.value.shape) {
        n.grad.fill(0.0);
      } else {
        n.grad = Tensor(n.value.shape);
      }
    }
    nodes_[root].grad[0] = 1.0;
    for (int i = root; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&)> back;
  };

  int next_id() const { return static_cast<int>(nodes_.size()); }

  int push(Tensor v, std::function<void(Graph&)> back) {
    nodes_.push_back(Node{std::move(v), Tensor{}, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tensor& grd(int id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// Result of a graph-building closure: the scalar output node plus the
// param node ids in the same order as the caller's parameter storage.
struct GraphBuild {
  int root = -1;
  std::vector<int> params;
};

// Compares analytic gradients against central finite differences.
//
// `build` must construct the graph fresh on every call, reading current
// values out of `storage` and registering them through Graph::param in
// the order given.  Returns the max over all parameter elements of
// |analytic - numeric| / max(|analytic| + |numeric|, noise_floor).
//
// The noise floor keeps structurally zero gradients honest: central
// differences carry rounding noise of order |f|*machine_eps/eps, so a
// parameter whose true gradient vanishes (a conv bias feeding batch
// norm, which the batch-mean subtraction cancels) measures as noise on
// both sides and a pure ratio would compare noise against noise.
inline double gradient_check(const std::function<GraphBuild(Graph&)>& build,
                             const std::vector<Tensor*>& storage, double eps = 1e-5,
                             double noise_floor = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) {
    throw ConfigError("gradient_check: eps must lie in [1e-7, 1e-4]");
  }
  if (!(noise_floor >= 1e-12)) {
    throw ConfigError("gradient_check: noise_floor must be >= 1e-12");
  }
  Graph g;
  GraphBuild gb = build(g);
  if (gb.root < 0 || g.value(gb.root).size() != 1) {
    throw DimensionError("gradient_check: graph output must be scalar");
  }
  if (gb.params.size() != storage.size()) {
    throw DimensionError("gradient_check: build registered " + std::to_string(gb.params.size()) +
                         " params for " + std::to_string(storage.size()) + " storage slots");
  }
  g.backward(gb.root);
  std::vector<Tensor> analytic;
  analytic.reserve(gb.params.size());
  for (int id : gb.params) analytic.push_back(g.grad(id));

  auto eval = [&]() {
    Graph h;
    GraphBuild hb = build(h);
    return h.value(hb.root)[0];
  };

  double max_rel = 0.0;
  for (std::size_t i = 0; i < storage.size(); ++i) {
    Tensor& t = *storage[i];
    if (!t.same_shape(analytic[i])) {
      throw DimensionError("gradient_check: param storage shape drifted during build");
    }
    for (std::size_t j = 0; j < t.size(); ++j) {
      double orig = t[j];
      t[j] = orig + eps;
      double fp = eval();
      t[j] = orig - eps;
      double fm = eval();
      t[j] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double ana = analytic[i][j];
      double rel = std::abs(ana - numeric) / std::max(std::abs(ana) + std::abs(numeric),
                                                      noise_floor);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace gfdann
