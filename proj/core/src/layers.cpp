#include "growbrain/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "growbrain/error.hpp"

namespace growbrain {

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

}  // namespace

Matrix dense_forward(const DenseParams& p, const Matrix& h_in) {
  if (h_in.cols() != p.n_in()) {
    shape_fail("dense_forward", "input " + h_in.shape_string() + " does not match weights " +
                                    p.weights.shape_string());
  }
  const std::size_t n_in = p.n_in();
  Matrix out(h_in.rows(), p.n_out());
  for (std::size_t b = 0; b < h_in.rows(); ++b) {
    auto x = h_in.row(b);
    for (std::size_t o = 0; o < p.n_out(); ++o) {
      auto w = p.weights.row(o);
      double acc = 0.0;
      for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
      out(b, o) = acc + w[n_in];
    }
  }
  return out;
}

DenseGrad dense_backward(const DenseParams& p, const Matrix& h_in, const Matrix& d_out) {
  if (h_in.cols() != p.n_in() || d_out.cols() != p.n_out() || d_out.rows() != h_in.rows()) {
    shape_fail("dense_backward", "input " + h_in.shape_string() + ", d_out " +
                                     d_out.shape_string() + ", weights " +
                                     p.weights.shape_string());
  }
  const std::size_t n_in = p.n_in();
  DenseGrad g{Matrix(h_in.rows(), n_in), Matrix(p.n_out(), n_in + 1)};
  for (std::size_t b = 0; b < h_in.rows(); ++b) {
    auto x = h_in.row(b);
    auto dy = d_out.row(b);
    for (std::size_t o = 0; o < p.n_out(); ++o) {
      auto gw = g.d_weights.row(o);
      const double d = dy[o];
      for (std::size_t i = 0; i < n_in; ++i) gw[i] += d * x[i];
      gw[n_in] += d;
    }
  }
  for (std::size_t b = 0; b < h_in.rows(); ++b) {
    auto dx = g.d_input.row(b);
    auto dy = d_out.row(b);
    for (std::size_t o = 0; o < p.n_out(); ++o) {
      auto w = p.weights.row(o);
      const double d = dy[o];
      for (std::size_t i = 0; i < n_in; ++i) dx[i] += d * w[i];
    }
  }
  return g;
}

Matrix relu_apply(const Matrix& h) {
  Matrix out = h;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& h, const Matrix& d_out) {
  if (h.rows() != d_out.rows() || h.cols() != d_out.cols()) {
    shape_fail("relu_backward", h.shape_string() + " vs " + d_out.shape_string());
  }
  Matrix g(h.rows(), h.cols());
  auto hv = h.values();
  auto dv = d_out.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < hv.size(); ++i) gv[i] = hv[i] > 0.0 ? dv[i] : 0.0;
  return g;
}

NormScaleParams NormScaleParams::uniform(std::size_t channels, double rho) {
  return NormScaleParams{std::vector<double>(channels, rho), kNormScaleEpsilon};
}

Matrix normscale_forward(const NormScaleParams& p, const Matrix& h) {
  if (h.cols() != p.gamma.size()) {
    shape_fail("normscale_forward", "input " + h.shape_string() + " vs " +
                                        std::to_string(p.gamma.size()) + " channels");
  }
  Matrix out(h.rows(), h.cols());
  for (std::size_t b = 0; b < h.rows(); ++b) {
    auto x = h.row(b);
    auto y = out.row(b);
    const double denom = std::max(row_norm(x), p.epsilon);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = p.gamma[i] * (x[i] / denom);
  }
  return out;
}

NormScaleGrad normscale_backward(const NormScaleParams& p, const Matrix& h, const Matrix& d_out) {
  if (h.cols() != p.gamma.size() || d_out.rows() != h.rows() || d_out.cols() != h.cols()) {
    shape_fail("normscale_backward", "input " + h.shape_string() + ", d_out " +
                                         d_out.shape_string() + ", " +
                                         std::to_string(p.gamma.size()) + " channels");
  }
  const std::size_t n = h.cols();
  NormScaleGrad g{Matrix(h.rows(), n), std::vector<double>(n, 0.0)};
  std::vector<double> scaled(n);
  for (std::size_t b = 0; b < h.rows(); ++b) {
    auto x = h.row(b);
    auto dy = d_out.row(b);
    const double r = row_norm(x);
    const double denom = std::max(r, p.epsilon);
    for (std::size_t i = 0; i < n; ++i) g.d_gamma[i] += dy[i] * (x[i] / denom);
    if (r <= p.epsilon) continue;
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      scaled[i] = p.gamma[i] * dy[i];
      proj += x[i] * scaled[i];
    }
    const double r3 = r * r * r;
    auto dx = g.d_input.row(b);
    for (std::size_t i = 0; i < n; ++i) dx[i] = scaled[i] / r - x[i] * proj / r3;
  }
  return g;
}

Matrix concat_forward(std::span<const Matrix* const> blocks) {
  if (blocks.empty()) throw ShapeError("concat_forward: no blocks");
  const std::size_t batch = blocks.front()->rows();
  std::size_t width = 0;
  for (const Matrix* m : blocks) {
    if (m->rows() != batch) {
      shape_fail("concat_forward", "batch mismatch " + blocks.front()->shape_string() + " vs " +
                                       m->shape_string());
    }
    width += m->cols();
  }
  Matrix out(batch, width);
  for (std::size_t b = 0; b < batch; ++b) {
    auto dst = out.row(b).begin();
    for (const Matrix* m : blocks) {
      auto src = m->row(b);
      dst = std::copy(src.begin(), src.end(), dst);
    }
  }
  return out;
}

std::vector<Matrix> concat_backward(const Matrix& d_out, std::span<const std::size_t> widths) {
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  if (total != d_out.cols()) {
    shape_fail("concat_backward", "block widths sum to " + std::to_string(total) + " but d_out is " +
                                      d_out.shape_string());
  }
  std::vector<Matrix> parts;
  parts.reserve(widths.size());
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    parts.push_back(slice_cols(d_out, offset, w));
    offset += w;
  }
  return parts;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    auto out = p.row(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      out[c] = std::exp(z[c] - zmax);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

XentResult softmax_xent(const Matrix& logits, std::span<const Label> labels) {
  if (labels.size() != logits.rows()) {
    shape_fail("softmax_xent", std::to_string(labels.size()) + " labels for logits " +
                                   logits.shape_string());
  }
  if (logits.rows() == 0) throw ShapeError("softmax_xent: empty batch");
  const std::size_t classes = logits.cols();
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  XentResult r{0.0, Matrix(logits.rows(), classes)};
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const Label y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      std::ostringstream os;
      os << "softmax_xent: label " << y << " outside [0, " << classes << ")";
      throw DomainError(os.str());
    }
    auto z = logits.row(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double log_sum = std::log(sum);
    // -log softmax(z)[y] = log(sum exp(z - zmax)) - (z_y - zmax)
    r.loss += (log_sum - (z[static_cast<std::size_t>(y)] - zmax)) * inv_batch;
    auto d = r.d_logits.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      const double prob = std::exp(z[c] - zmax - log_sum);
      d[c] = (prob - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv_batch;
    }
  }
  return r;
}

}  // namespace growbrain
