#include "chatzero/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "chatzero/errors.hpp"

namespace chatzero::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

float Var::item() const {
  const Matrix& m = value();
  if (m.size() != 1) throw ShapeError("item() on a " + std::to_string(m.rows) + "x" + std::to_string(m.cols) + " value");
  return m.data[0];
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, record_, {}, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, record_, {}, record_ ? &p : nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward fn) {
  bool needs = false;
  if (record_)
    for (const Var& p : parents) needs = needs || p.requires_grad();
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, const std::vector<Var>& parents, Backward fn) {
  bool needs = false;
  if (record_)
    for (const Var& p : parents) needs = needs || p.requires_grad();
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  if (!record_) throw Error("backward() on a tape without recording");
  if (loss.value().size() != 1) throw ShapeError("backward() needs a 1x1 loss");
  if (!loss.requires_grad()) return;
  grad(loss.id()).data[0] = 1.0f;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto& dst = n.param->grad.data;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad.data[i];
    }
  }
}

namespace {

void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

void check_same(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

std::vector<double> row_norms(const Matrix& x, const char* op) {
  std::vector<double> norms(x.rows);
  for (int r = 0; r < x.rows; ++r) {
    double s = 0.0;
    for (float v : x.row(r)) s += static_cast<double>(v) * v;
    norms[r] = std::sqrt(s);
    if (norms[r] == 0.0) throw DegenerateInputError(std::string(op) + ": zero vector at row " + std::to_string(r));
  }
  return norms;
}

// Gradient through u = x / |x| given dL/du.
void normalize_backward(std::span<const float> x, double norm, const std::vector<double>& du, std::span<float> dx) {
  double proj = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) proj += du[c] * x[c] / norm;
  for (std::size_t c = 0; c < x.size(); ++c) dx[c] += static_cast<float>((du[c] - proj * x[c] / norm) / norm);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.rows) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(av.rows, bv.cols);
  kernels::matmul(av.data, bv.data, out.data, av.rows, av.cols, bv.cols);
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(a.id());
    const Matrix& bv = t.value(b.id());
    if (t.requires_grad(a.id())) kernels::matmul_bt(g.data, bv.data, t.grad(a.id()).data, av.rows, bv.cols, av.cols, true);
    if (t.requires_grad(b.id())) kernels::matmul_at(av.data, g.data, t.grad(b.id()).data, bv.rows, av.rows, bv.cols, true);
  });
}

Var matmul_bt(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols != bv.cols) throw ShapeError("matmul_bt: inner dimensions differ");
  Matrix out(av.rows, bv.rows);
  kernels::matmul_bt(av.data, bv.data, out.data, av.rows, av.cols, bv.rows);
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(a.id());
    const Matrix& bv = t.value(b.id());
    if (t.requires_grad(a.id())) kernels::matmul(g.data, bv.data, t.grad(a.id()).data, av.rows, bv.rows, av.cols, true);
    if (t.requires_grad(b.id())) kernels::matmul_at(g.data, av.data, t.grad(b.id()).data, bv.rows, av.rows, av.cols, true);
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  Matrix out = a.value();
  accumulate(out, b.value());
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) accumulate(t.grad(a.id()), g);
    if (t.requires_grad(b.id())) accumulate(t.grad(b.id()), g);
  });
}

Var add_row(Var x, Var row) {
  const Matrix& xv = x.value();
  const Matrix& rv = row.value();
  if (rv.rows != 1 || rv.cols != xv.cols) throw ShapeError("add_row: row must be 1 x cols");
  Matrix out = xv;
  for (int r = 0; r < out.rows; ++r) {
    auto dst = out.row(r);
    for (int c = 0; c < out.cols; ++c) dst[c] += rv.data[c];
  }
  return x.tape()->push(std::move(out), {x, row}, [x, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(x.id())) accumulate(t.grad(x.id()), g);
    if (t.requires_grad(row.id())) {
      Matrix& gr = t.grad(row.id());
      for (int r = 0; r < g.rows; ++r) {
        auto src = g.row(r);
        for (int c = 0; c < g.cols; ++c) gr.data[c] += src[c];
      }
    }
  });
}

Var scale(Var x, float s) {
  Matrix out = x.value();
  for (float& v : out.data) v *= s;
  return x.tape()->push(std::move(out), {x}, [x, s](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(x.id());
    for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += s * g.data[i];
  });
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)

// 1 - 2 / (e^{2u} + 1); saturates cleanly at both ends.
inline float fast_tanh(float u) { return 1.0f - 2.0f / (kernels::exp_approx(2.0f * u) + 1.0f); }

}  // namespace

Var gelu(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows, xv.cols);
  const std::size_t n = xv.data.size();
#pragma omp parallel for simd schedule(static) if (n > 65536)
  for (std::size_t i = 0; i < n; ++i) {
    const float v = xv.data[i];
    out.data[i] = 0.5f * v * (1.0f + fast_tanh(kGeluC * (v + 0.044715f * v * v * v)));
  }
  return x.tape()->push(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& xv = t.value(x.id());
    Matrix& gx = t.grad(x.id());
    const std::size_t n = xv.data.size();
#pragma omp parallel for simd schedule(static) if (n > 65536)
    for (std::size_t i = 0; i < n; ++i) {
      const float v = xv.data[i];
      const float th = fast_tanh(kGeluC * (v + 0.044715f * v * v * v));
      const float dinner = kGeluC * (1.0f + 3.0f * 0.044715f * v * v);
      gx.data[i] += g.data[i] * (0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * dinner);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, float eps) {
  const Matrix& xv = x.value();
  if (gain.rows() != 1 || gain.cols() != xv.cols || bias.rows() != 1 || bias.cols() != xv.cols)
    throw ShapeError("layer_norm: gain/bias must be 1 x cols");
  Matrix out(xv.rows, xv.cols);
  auto xhat = std::make_shared<Matrix>(xv.rows, xv.cols);
  auto rstd = std::make_shared<std::vector<float>>(xv.rows);
  kernels::layer_norm(xv.data, gain.value().data, bias.value().data, out.data, xhat->data, *rstd, xv.rows, xv.cols,
                      eps);
  return x.tape()->push(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& gv = t.value(gain.id());
    const int rows = g.rows;
    const int cols = g.cols;
    if (t.requires_grad(x.id())) {
      Matrix& gx = t.grad(x.id());
#pragma omp parallel for schedule(static)
      for (int r = 0; r < rows; ++r) {
        auto gr = g.row(r);
        auto hr = xhat->row(r);
        double mean_d = 0.0;
        double mean_dh = 0.0;
        for (int c = 0; c < cols; ++c) {
          const double d = gr[c] * gv.data[c];
          mean_d += d;
          mean_dh += d * hr[c];
        }
        mean_d /= cols;
        mean_dh /= cols;
        auto out = gx.row(r);
        for (int c = 0; c < cols; ++c) {
          const double d = gr[c] * gv.data[c];
          out[c] += static_cast<float>((*rstd)[r] * (d - mean_d - hr[c] * mean_dh));
        }
      }
    }
    if (t.requires_grad(gain.id()) || t.requires_grad(bias.id())) {
      Matrix& gg = t.grad(gain.id());
      Matrix& gb = t.grad(bias.id());
      for (int r = 0; r < rows; ++r) {
        auto gr = g.row(r);
        auto hr = xhat->row(r);
        for (int c = 0; c < cols; ++c) {
          gg.data[c] += gr[c] * hr[c];
          gb.data[c] += gr[c];
        }
      }
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<int>(ids.size()), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows) throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(tv.row(ids[i]).begin(), tv.cols, out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape()->push(std::move(out), {table}, [table, saved = std::move(saved)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad(table.id());
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto src = g.row(static_cast<int>(i));
      auto dst = gt.row(saved[i]);
      for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
    }
  });
}

Var attention(Var q, Var k, Var v, std::vector<int> key_lengths, const kernels::AttentionShape& shape) {
  if (q.rows() != shape.batch * shape.q_len || k.rows() != shape.batch * shape.k_len ||
      v.rows() != shape.batch * shape.k_len || q.cols() != shape.dim || k.cols() != shape.dim ||
      v.cols() != shape.dim || shape.dim % shape.heads != 0 || static_cast<int>(key_lengths.size()) != shape.batch)
    throw ShapeError("attention: inconsistent shapes");
  Matrix out(q.rows(), shape.dim);
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(shape.batch) * shape.heads * shape.q_len *
                                                    shape.k_len);
  kernels::attention_forward(q.value().data, k.value().data, v.value().data, key_lengths, shape, out.data, *probs);
  return q.tape()->push(std::move(out), {q, k, v}, [q, k, v, probs, shape](Tape& t, int self) {
    // The kernel writes all three gradients; unused ones land in scratch.
    Matrix scratch_q, scratch_k, scratch_v;
    auto target = [&t](Var x, Matrix& scratch) -> Matrix& {
      if (t.requires_grad(x.id())) return t.grad(x.id());
      scratch = Matrix(x.rows(), x.cols());
      return scratch;
    };
    Matrix& gq = target(q, scratch_q);
    Matrix& gk = target(k, scratch_k);
    Matrix& gv = target(v, scratch_v);
    kernels::attention_backward(t.value(q.id()).data, t.value(k.id()).data, t.value(v.id()).data, *probs,
                                t.grad(self).data, shape, gq.data, gk.data, gv.data);
  });
}

Var gather_rows(Var x, std::span<const int> rows) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<int>(rows.size()), xv.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows) throw ShapeError("gather_rows: row out of range");
    std::copy_n(xv.row(rows[i]).begin(), xv.cols, out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> saved(rows.begin(), rows.end());
  return x.tape()->push(std::move(out), {x}, [x, saved = std::move(saved)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(x.id());
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto src = g.row(static_cast<int>(i));
      auto dst = gx.row(saved[i]);
      for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int cols = parts.front().cols();
  int rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + off);
    off += p.value().data.size();
  }
  return parts.front().tape()->push(std::move(out), parts, [parts](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().data.size();
      if (t.requires_grad(p.id())) {
        Matrix& gp = t.grad(p.id());
        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
      }
      off += n;
    }
  });
}

Var mean_rows(Var x, const std::vector<std::vector<int>>& segments) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<int>(segments.size()), xv.cols);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (seg.empty()) throw DegenerateInputError("mean_rows: empty segment " + std::to_string(s));
    auto dst = out.row(static_cast<int>(s));
    for (int r : seg) {
      auto src = xv.row(r);
      for (int c = 0; c < xv.cols; ++c) dst[c] += src[c];
    }
    const float inv = 1.0f / static_cast<float>(seg.size());
    for (float& v : dst) v *= inv;
  }
  return x.tape()->push(std::move(out), {x}, [x, segments](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(x.id());
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const float inv = 1.0f / static_cast<float>(segments[s].size());
      auto src = g.row(static_cast<int>(s));
      for (int r : segments[s]) {
        auto dst = gx.row(r);
        for (int c = 0; c < g.cols; ++c) dst[c] += src[c] * inv;
      }
    }
  });
}

Var nll_sum(Var logits, std::span<const int> targets) {
  const Matrix& lv = logits.value();
  if (static_cast<int>(targets.size()) != lv.rows) throw ShapeError("nll_sum: one target per row required");
  auto probs = std::make_shared<Matrix>(lv);
  std::vector<int> saved(targets.begin(), targets.end());
  kernels::softmax_rows(probs->data, lv.rows, lv.cols);
  double total = 0.0;
  for (int r = 0; r < lv.rows; ++r) {
    if (saved[r] < 0) continue;
    if (saved[r] >= lv.cols) throw ShapeError("nll_sum: target out of range");
    auto row = lv.row(r);
    const float mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    total += std::log(z) + mx - row[saved[r]];
  }
  Matrix out(1, 1, static_cast<float>(total));
  return logits.tape()->push(std::move(out), {logits}, [logits, probs, saved = std::move(saved)](Tape& t, int self) {
    const float g = t.grad(self).data[0];
    Matrix& gl = t.grad(logits.id());
    for (int r = 0; r < gl.rows; ++r) {
      if (saved[r] < 0) continue;
      auto dst = gl.row(r);
      auto p = probs->row(r);
      for (int c = 0; c < gl.cols; ++c) dst[c] += g * p[c];
      dst[saved[r]] -= g;
    }
  });
}

Var gumbel_softmax(Var logits, const Matrix& noise, float temperature, bool hard) {
  if (temperature <= 0.0f) throw ConfigError("gumbel_softmax: temperature must be positive");
  const Matrix& lv = logits.value();
  if (!noise.same_shape(lv)) throw ShapeError("gumbel_softmax: noise shape differs from logits");
  auto soft = std::make_shared<Matrix>(lv.rows, lv.cols);
  const float inv_t = 1.0f / temperature;
  for (std::size_t i = 0; i < lv.data.size(); ++i) soft->data[i] = (lv.data[i] + noise.data[i]) * inv_t;
  kernels::softmax_rows(soft->data, soft->rows, soft->cols);
  Matrix out = *soft;
  if (hard) {
    // Straight-through: one-hot forward, soft gradient.
    for (int r = 0; r < out.rows; ++r) {
      auto row = out.row(r);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      std::fill(row.begin(), row.end(), 0.0f);
      row[best] = 1.0f;
    }
  }
  return logits.tape()->push(std::move(out), {logits}, [logits, inv_t, soft](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = *soft;
    Matrix& gl = t.grad(logits.id());
#pragma omp parallel for schedule(static)
    for (int r = 0; r < y.rows; ++r) {
      auto yr = y.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (int c = 0; c < y.cols; ++c) dot += static_cast<double>(gr[c]) * yr[c];
      auto dst = gl.row(r);
      for (int c = 0; c < y.cols; ++c) dst[c] += static_cast<float>(inv_t * yr[c] * (gr[c] - dot));
    }
  });
}

Var pairwise_cosine_sum(Var x) {
  const Matrix& xv = x.value();
  const auto norms = row_norms(xv, "pairwise_cosine_sum");
  double total = 0.0;
  for (int i = 0; i < xv.rows; ++i)
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int c = 0; c < xv.cols; ++c) dot += static_cast<double>(xv(i, c)) * xv(j, c);
      total += dot / (norms[i] * norms[j]);
    }
  Matrix out(1, 1, static_cast<float>(total));
  return x.tape()->push(std::move(out), {x}, [x, norms](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    const Matrix& xv = t.value(x.id());
    Matrix& gx = t.grad(x.id());
    std::vector<double> unit_sum(xv.cols, 0.0);
    for (int i = 0; i < xv.rows; ++i)
      for (int c = 0; c < xv.cols; ++c) unit_sum[c] += xv(i, c) / norms[i];
    std::vector<double> du(xv.cols);
    for (int i = 0; i < xv.rows; ++i) {
      for (int c = 0; c < xv.cols; ++c) du[c] = g * (unit_sum[c] - xv(i, c) / norms[i]);
      normalize_backward(xv.row(i), norms[i], du, gx.row(i));
    }
  });
}

Var cross_cosine_sum(Var x, Var negatives) {
  const Matrix& xv = x.value();
  const Matrix& nv = negatives.value();
  if (xv.cols != nv.cols) throw ShapeError("cross_cosine_sum: dimension mismatch");
  const auto xn = row_norms(xv, "cross_cosine_sum");
  const auto nn = row_norms(nv, "cross_cosine_sum");
  double total = 0.0;
  for (int i = 0; i < xv.rows; ++i)
    for (int j = 0; j < nv.rows; ++j) {
      double dot = 0.0;
      for (int c = 0; c < xv.cols; ++c) dot += static_cast<double>(xv(i, c)) * nv(j, c);
      total += dot / (xn[i] * nn[j]);
    }
  Matrix out(1, 1, static_cast<float>(total));
  return x.tape()->push(std::move(out), {x, negatives}, [x, negatives, xn, nn](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    const Matrix& xv = t.value(x.id());
    const Matrix& nv = t.value(negatives.id());
    std::vector<double> x_unit_sum(xv.cols, 0.0), n_unit_sum(xv.cols, 0.0);
    for (int i = 0; i < xv.rows; ++i)
      for (int c = 0; c < xv.cols; ++c) x_unit_sum[c] += xv(i, c) / xn[i];
    for (int j = 0; j < nv.rows; ++j)
      for (int c = 0; c < nv.cols; ++c) n_unit_sum[c] += nv(j, c) / nn[j];
    std::vector<double> du(xv.cols);
    if (t.requires_grad(x.id())) {
      Matrix& gx = t.grad(x.id());
      for (int c = 0; c < xv.cols; ++c) du[c] = g * n_unit_sum[c];
      for (int i = 0; i < xv.rows; ++i) normalize_backward(xv.row(i), xn[i], du, gx.row(i));
    }
    if (t.requires_grad(negatives.id())) {
      Matrix& gn = t.grad(negatives.id());
      for (int c = 0; c < xv.cols; ++c) du[c] = g * x_unit_sum[c];
      for (int j = 0; j < nv.rows; ++j) normalize_backward(nv.row(j), nn[j], du, gn.row(j));
    }
  });
}

Var sum(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ShapeError("sum: no inputs");
  double total = 0.0;
  for (const Var& s : scalars) total += s.item();
  return scalars.front().tape()->push(Matrix(1, 1, static_cast<float>(total)), scalars, [scalars](Tape& t, int self) {
    const float g = t.grad(self).data[0];
    for (const Var& s : scalars)
      if (t.requires_grad(s.id())) t.grad(s.id()).data[0] += g;
  });
}

}  // namespace chatzero::ad
