#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "growbrain/layers.hpp"
#include "growbrain/matrix.hpp"
#include "growbrain/network.hpp"
#include "growbrain/rng.hpp"

namespace growbrain::testing {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kReluExclusion = 1e-3;
inline constexpr double kNormExclusion = 10.0 * kNormScaleEpsilon;

// Denominator guard for relative errors of double-precision central
// differences: rounding of an O(1) function contributes about 1e-16 / h =
// 1e-10 of absolute error, so smaller components are compared against this
// floor instead.
inline constexpr double kRelFloor = 1e-3;

inline double relative_error(double analytic, double numeric, double floor = kRelFloor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

inline Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -2.0,
                             double hi = 2.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

inline std::vector<Label> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<Label> y(n);
  for (auto& v : y) v = static_cast<Label>(rng.below(classes));
  return y;
}

// Central difference of a scalar function of `x`, entry by entry.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double step = kFdStep) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + step;
    const double up = f(probe);
    probe.values()[i] = orig - step;
    const double down = f(probe);
    probe.values()[i] = orig;
    g.values()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                                 double floor = kRelFloor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, relative_error(analytic.values()[i], numeric.values()[i], floor));
  return worst;
}

// Weighted sum of a layer output: a scalar whose gradient w.r.t. the output is `w`.
inline double project(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * w.values()[i];
  return s;
}

// True when a forward pass of `x` puts any ReLU input within kReluExclusion of
// zero or any NormScale input below kNormExclusion in norm.
inline bool in_exclusion_zone(const NetworkGraph& net, const Matrix& x) {
  const auto cache = forward(net, x).cache;
  for (const auto& n : net.nodes()) {
    const Matrix& in = cache.at(n.inputs.front());
    if (n.kind == LayerKind::ReLU) {
      for (double v : in.values())
        if (std::abs(v) < kReluExclusion) return true;
    } else if (n.kind == LayerKind::NormScale) {
      for (std::size_t r = 0; r < in.rows(); ++r) {
        double q = 0.0;
        for (double v : in.row(r)) q += v * v;
        if (std::sqrt(q) < kNormExclusion) return true;
      }
    }
  }
  return false;
}

// Independent forward pass in extended precision, evaluated straight from
// the node list. `delta` is added to one parameter entry (node index `node`,
// flat index `entry`, gamma entries for NormScale) or to one input entry
// when `node` is npos.
struct Perturbation {
  std::size_t node = static_cast<std::size_t>(-1);
  std::size_t entry = 0;
  long double delta = 0.0L;
};

using LMatrix = std::vector<std::vector<long double>>;

inline long double reference_loss(const NetworkGraph& net, const Matrix& x,
                                  std::span<const Label> y, const Perturbation& pert = {}) {
  std::map<std::string, LMatrix, std::less<>> out;
  LMatrix in(x.rows(), std::vector<long double>(x.cols()));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) in[r][c] = x(r, c);
  if (pert.node == static_cast<std::size_t>(-1) && pert.delta != 0.0L)
    in[pert.entry / x.cols()][pert.entry % x.cols()] += pert.delta;
  out[std::string(kInputNode)] = std::move(in);
  long double loss = 0.0L;
  for (std::size_t ni = 0; ni < net.nodes().size(); ++ni) {
    const auto& n = net.nodes()[ni];
    const LMatrix& a = out.at(n.inputs.front());
    const std::size_t batch = a.size();
    LMatrix o;
    switch (n.kind) {
      case LayerKind::Dense: {
        const Matrix& w = n.dense_params().weights;
        auto weight = [&](std::size_t i, std::size_t j) {
          long double v = w(i, j);
          if (pert.node == ni && pert.entry == i * w.cols() + j) v += pert.delta;
          return v;
        };
        o.assign(batch, std::vector<long double>(w.rows()));
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < w.rows(); ++i) {
            long double s = weight(i, w.cols() - 1);
            for (std::size_t j = 0; j + 1 < w.cols(); ++j) s += weight(i, j) * a[b][j];
            o[b][i] = s;
          }
        break;
      }
      case LayerKind::ReLU:
        o = a;
        for (auto& row : o)
          for (auto& v : row) v = v > 0.0L ? v : 0.0L;
        break;
      case LayerKind::NormScale: {
        const auto& p = n.norm_params();
        o = a;
        for (auto& row : o) {
          long double q = 0.0L;
          for (auto v : row) q += v * v;
          const long double r = std::max<long double>(std::sqrt(q), p.epsilon);
          for (std::size_t i = 0; i < row.size(); ++i) {
            long double g = p.gamma[i];
            if (pert.node == ni && pert.entry == i) g += pert.delta;
            row[i] = g * row[i] / r;
          }
        }
        break;
      }
      case LayerKind::Concat:
        o.assign(batch, {});
        for (const auto& name : n.inputs) {
          const LMatrix& blk = out.at(name);
          for (std::size_t b = 0; b < batch; ++b)
            o[b].insert(o[b].end(), blk[b].begin(), blk[b].end());
        }
        break;
      case LayerKind::SoftmaxXent:
        for (std::size_t b = 0; b < batch; ++b) {
          const long double m = *std::max_element(a[b].begin(), a[b].end());
          long double z = 0.0L;
          for (auto v : a[b]) z += std::exp(v - m);
          loss += -(a[b][static_cast<std::size_t>(y[b])] - m - std::log(z));
        }
        loss /= static_cast<long double>(batch);
        o = a;
        break;
    }
    out[n.name] = std::move(o);
  }
  return loss;
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backward() with central differences (step `step`) of
// reference_loss for every parameter entry of every node and for the input
// batch. The extended-precision reference leaves about 1e-13 of absolute
// noise in the differences, so components below kNetworkFloor are compared
// against the floor.
inline constexpr double kNetworkFloor = 1e-6;

inline GradCheckReport check_network_gradients(const NetworkGraph& net, const Matrix& x,
                                               std::span<const Label> y, double step = kFdStep,
                                               double floor = kNetworkFloor) {
  const auto fwd = forward(net, x, y);
  const auto grads = backward(net, fwd.cache, y);
  GradCheckReport rep;
  auto central = [&](std::size_t node, std::size_t entry) {
    const long double h = step;
    const long double up = reference_loss(net, x, y, {node, entry, h});
    const long double down = reference_loss(net, x, y, {node, entry, -h});
    return static_cast<double>((up - down) / (2.0L * h));
  };
  auto note = [&](double a, double n, const std::string& tensor) {
    const double e = relative_error(a, n, floor);
    ++rep.checked;
    if (e >= rep.max_rel_error) {
      rep.max_rel_error = e;
      rep.worst_tensor = tensor;
      rep.worst_analytic = a;
      rep.worst_numeric = n;
    }
  };
  for (std::size_t ni = 0; ni < net.nodes().size(); ++ni) {
    const auto& node = net.nodes()[ni];
    std::vector<double> analytic;
    if (node.kind == LayerKind::Dense) {
      const auto g = grads.params.at(node.name).d_weights.values();
      analytic.assign(g.begin(), g.end());
    } else if (node.kind == LayerKind::NormScale) {
      analytic = grads.params.at(node.name).d_gamma;
    } else {
      continue;
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) note(analytic[i], central(ni, i), node.name);
  }
  const Matrix& an_in = grads.activations.at(std::string(kInputNode));
  for (std::size_t i = 0; i < x.size(); ++i)
    note(an_in.values()[i], central(static_cast<std::size_t>(-1), i), std::string(kInputNode));
  return rep;
}

// Central differences of an extended-precision scalar function of `x`.
inline std::vector<double> numeric_gradient_ld(
    const std::function<long double(const std::vector<long double>&)>& f,
    std::span<const double> x, double step = kFdStep) {
  std::vector<long double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double orig = probe[i];
    probe[i] = orig + step;
    const long double up = f(probe);
    probe[i] = orig - step;
    const long double down = f(probe);
    probe[i] = orig;
    g[i] = static_cast<double>((up - down) / (2.0L * static_cast<long double>(step)));
  }
  return g;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  return worst;
}

inline std::vector<double> flat(const Matrix& m) { return {m.values().begin(), m.values().end()}; }

// Per-layer gradient checks against extended-precision references: each
// builds a random instance, takes the scalar sum(w * layer(x)) for a random w
// (the loss itself for softmax_xent) and returns the worst relative error
// over every input and parameter entry.
inline constexpr double kLayerFloor = 1e-8;

inline double dense_gradcheck(Rng& rng, std::size_t n_in, std::size_t n_out, std::size_t batch) {
  const DenseParams p{uniform_matrix(rng, n_out, n_in + 1)};
  const Matrix x = uniform_matrix(rng, batch, n_in);
  const Matrix w = uniform_matrix(rng, batch, n_out);
  const auto g = dense_backward(p, x, w);
  auto value = [&](const std::vector<long double>& xs, const std::vector<long double>& ws) {
    long double total = 0.0L;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < n_out; ++o) {
        long double z = ws[o * (n_in + 1) + n_in];
        for (std::size_t i = 0; i < n_in; ++i) z += ws[o * (n_in + 1) + i] * xs[b * n_in + i];
        total += w(b, o) * z;
      }
    return total;
  };
  const auto wx = flat(p.weights);
  const std::vector<long double> wl(wx.begin(), wx.end());
  const auto xv = flat(x);
  const std::vector<long double> xl(xv.begin(), xv.end());
  const auto nx = numeric_gradient_ld([&](const auto& xs) { return value(xs, wl); }, xv);
  const auto nw = numeric_gradient_ld([&](const auto& ws) { return value(xl, ws); }, wx);
  return std::max(max_relative_error(flat(g.d_input), nx, kLayerFloor),
                  max_relative_error(flat(g.d_weights), nw, kLayerFloor));
}

inline double relu_gradcheck(Rng& rng, std::size_t width, std::size_t batch) {
  Matrix x = uniform_matrix(rng, batch, width);
  for (double& v : x.values())
    while (std::abs(v) <= kReluExclusion) v = -2.0 + 4.0 * rng.uniform();
  const Matrix w = uniform_matrix(rng, batch, width);
  const Matrix g = relu_backward(x, w);
  const auto nx = numeric_gradient_ld(
      [&](const std::vector<long double>& xs) {
        long double total = 0.0L;
        for (std::size_t i = 0; i < xs.size(); ++i)
          total += w.values()[i] * (xs[i] > 0.0L ? xs[i] : 0.0L);
        return total;
      },
      x.values());
  return max_relative_error(flat(g), nx, kLayerFloor);
}

inline double normscale_gradcheck(Rng& rng, std::size_t width, std::size_t batch) {
  NormScaleParams p;
  p.gamma.resize(width);
  for (double& v : p.gamma) v = 0.5 + 19.5 * rng.uniform();
  Matrix x = uniform_matrix(rng, batch, width);
  const Matrix w = uniform_matrix(rng, batch, width);
  const auto g = normscale_backward(p, x, w);
  auto value = [&](const std::vector<long double>& xs, const std::vector<long double>& gs) {
    long double total = 0.0L;
    for (std::size_t b = 0; b < batch; ++b) {
      long double q = 0.0L;
      for (std::size_t i = 0; i < width; ++i) q += xs[b * width + i] * xs[b * width + i];
      const long double r = std::max<long double>(std::sqrt(q), p.epsilon);
      for (std::size_t i = 0; i < width; ++i) total += w(b, i) * gs[i] * xs[b * width + i] / r;
    }
    return total;
  };
  const std::vector<long double> gl(p.gamma.begin(), p.gamma.end());
  const auto xv = flat(x);
  const std::vector<long double> xl(xv.begin(), xv.end());
  const auto nx = numeric_gradient_ld([&](const auto& xs) { return value(xs, gl); }, xv);
  const auto ng = numeric_gradient_ld([&](const auto& gs) { return value(xl, gs); }, p.gamma);
  return std::max(max_relative_error(flat(g.d_input), nx, kLayerFloor),
                  max_relative_error(g.d_gamma, ng, kLayerFloor));
}

inline double concat_gradcheck(Rng& rng, std::span<const std::size_t> widths, std::size_t batch) {
  std::vector<Matrix> blocks;
  std::size_t total = 0;
  for (auto w : widths) {
    blocks.push_back(uniform_matrix(rng, batch, w));
    total += w;
  }
  const Matrix w = uniform_matrix(rng, batch, total);
  const auto g = concat_backward(w, widths);
  double worst = 0.0;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto nk = numeric_gradient_ld(
        [&](const std::vector<long double>& xs) {
          long double t = 0.0L;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < widths[k]; ++i)
              t += w(b, offset + i) * xs[b * widths[k] + i];
          return t;
        },
        blocks[k].values());
    worst = std::max(worst, max_relative_error(flat(g[k]), nk, kLayerFloor));
    offset += widths[k];
  }
  return worst;
}

inline double softmax_xent_gradcheck(Rng& rng, std::size_t classes, std::size_t batch) {
  const Matrix z = uniform_matrix(rng, batch, classes, -4.0, 4.0);
  const auto y = random_labels(rng, batch, classes);
  const auto r = softmax_xent(z, y);
  const auto nz = numeric_gradient_ld(
      [&](const std::vector<long double>& zs) {
        long double loss = 0.0L;
        for (std::size_t b = 0; b < batch; ++b) {
          long double m = zs[b * classes];
          for (std::size_t c = 1; c < classes; ++c) m = std::max(m, zs[b * classes + c]);
          long double s = 0.0L;
          for (std::size_t c = 0; c < classes; ++c) s += std::exp(zs[b * classes + c] - m);
          loss += std::log(s) + m - zs[b * classes + static_cast<std::size_t>(y[b])];
        }
        return loss / static_cast<long double>(batch);
      },
      z.values());
  return max_relative_error(flat(r.d_logits), nz, kLayerFloor);
}

// Draws inputs until none falls in the exclusion zone (bounded attempts).
inline Matrix draw_clear_batch(const NetworkGraph& net, Rng& rng, std::size_t batch,
                               int attempts = 200) {
  for (int a = 0; a < attempts; ++a) {
    Matrix x = uniform_matrix(rng, batch, net.input_width());
    if (!in_exclusion_zone(net, x)) return x;
  }
  return {};
}

}  // namespace growbrain::testing
