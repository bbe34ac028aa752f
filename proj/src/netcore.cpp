#include "msod/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msod {

namespace {

// Anti-division guard for the foreground renormalization; distinct from the
// log clamp because it only protects against an all-background column.
constexpr double kRenormEps = 1e-12;

Matrix linear_forward(const LinearLayer& L, const Matrix& X) {
  Matrix out(L.w.rows, X.cols);
  for (int o = 0; o < L.w.rows; ++o) {
    const double* wrow = &L.w.a[static_cast<size_t>(o) * L.w.cols];
    for (int b = 0; b < X.cols; ++b) {
      double acc = L.b[o];
      for (int i = 0; i < L.w.cols; ++i) acc += wrow[i] * X(i, b);
      out(o, b) = acc;
    }
  }
  return out;
}

// gW += D X^T, gb += row sums of D, dX += W^T D (when requested).
void linear_backward_acc(const LinearLayer& L, const Matrix& X, const Matrix& D,
                         LinearLayer& g, Matrix* dX) {
  for (int o = 0; o < L.w.rows; ++o) {
    double gb = 0.0;
    double* gw = &g.w.a[static_cast<size_t>(o) * L.w.cols];
    for (int b = 0; b < D.cols; ++b) {
      const double d = D(o, b);
      gb += d;
      for (int i = 0; i < L.w.cols; ++i) gw[i] += d * X(i, b);
    }
    g.b[o] += gb;
  }
  if (dX) {
    for (int b = 0; b < D.cols; ++b)
      for (int o = 0; o < L.w.rows; ++o) {
        const double d = D(o, b);
        const double* wrow = &L.w.a[static_cast<size_t>(o) * L.w.cols];
        for (int i = 0; i < L.w.cols; ++i) (*dX)(i, b) += wrow[i] * d;
      }
  }
}

LinearLayer make_layer(int out, int in, std::mt19937_64& rng) {
  LinearLayer L;
  L.w = Matrix(out, in);
  L.b.assign(out, 0.0);
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : L.w.a) v = dist(rng);
  return L;
}

LinearLayer layer_like(const LinearLayer& src) {
  LinearLayer L;
  L.w = Matrix(src.w.rows, src.w.cols);
  L.b.assign(src.b.size(), 0.0);
  return L;
}

void sgd_tensor(std::vector<double>& w, const std::vector<double>& g, std::vector<double>& v,
                const SgdConfig& cfg) {
  for (size_t i = 0; i < w.size(); ++i) {
    v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
    w[i] -= cfg.lr * v[i];
  }
}

}  // namespace

FeatureGrid FeatureGrid::from_values(int height, int width, int channels,
                                     std::vector<double> values) {
  if (height < 1 || width < 1 || channels < 1)
    throw std::invalid_argument("FeatureGrid: dimensions must be positive");
  if (values.size() != static_cast<size_t>(height) * width * channels)
    throw std::invalid_argument("FeatureGrid: value count does not match dimensions");
  FeatureGrid g;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.values = std::move(values);
  const size_t plane = static_cast<size_t>(height + 1) * (width + 1);
  g.sat.assign(plane * channels, 0.0);
  for (int c = 0; c < channels; ++c) {
    double* s = &g.sat[plane * c];
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        s[static_cast<size_t>(y + 1) * (width + 1) + (x + 1)] =
            g.at(c, y, x) + s[static_cast<size_t>(y) * (width + 1) + (x + 1)] +
            s[static_cast<size_t>(y + 1) * (width + 1) + x] -
            s[static_cast<size_t>(y) * (width + 1) + x];
      }
  }
  return g;
}

double FeatureGrid::rect_sum(int c, int x0, int y0, int x1, int y1) const {
  const size_t plane = static_cast<size_t>(height + 1) * (width + 1);
  const double* s = &sat[plane * c];
  const int stride = width + 1;
  return s[static_cast<size_t>(y1) * stride + x1] - s[static_cast<size_t>(y0) * stride + x1] -
         s[static_cast<size_t>(y1) * stride + x0] + s[static_cast<size_t>(y0) * stride + x0];
}

std::vector<double> roi_pool(const FeatureGrid& grid, const Box& box, int S) {
  if (S < 1) throw std::invalid_argument("roi_pool: S must be >= 1");
  const auto clipped = box.clip(static_cast<double>(grid.width), static_cast<double>(grid.height));
  if (!clipped) throw std::runtime_error("roi_pool: box degenerate after clipping to grid");
  const Box b = *clipped;
  std::vector<double> out(static_cast<size_t>(S) * S * grid.channels, 0.0);
  const double cw = b.width() / S;
  const double ch = b.height() / S;
  for (int i = 0; i < S; ++i) {
    const double cy_lo = b.y1 + i * ch, cy_hi = b.y1 + (i + 1) * ch;
    // Pixel (x, y) has its center at (x + 0.5, y + 0.5).
    int y0 = static_cast<int>(std::ceil(cy_lo - 0.5));
    int y1 = static_cast<int>(std::ceil(cy_hi - 0.5));
    y0 = std::max(y0, 0);
    y1 = std::min(y1, grid.height);
    for (int j = 0; j < S; ++j) {
      const double cx_lo = b.x1 + j * cw, cx_hi = b.x1 + (j + 1) * cw;
      int x0 = static_cast<int>(std::ceil(cx_lo - 0.5));
      int x1 = static_cast<int>(std::ceil(cx_hi - 0.5));
      x0 = std::max(x0, 0);
      x1 = std::min(x1, grid.width);
      const bool empty = (x1 <= x0) || (y1 <= y0);
      int nx = std::clamp(static_cast<int>(std::llround(0.5 * (cx_lo + cx_hi) - 0.5)), 0,
                          grid.width - 1);
      int ny = std::clamp(static_cast<int>(std::llround(0.5 * (cy_lo + cy_hi) - 0.5)), 0,
                          grid.height - 1);
      for (int c = 0; c < grid.channels; ++c) {
        const double v = empty
                             ? grid.at(c, ny, nx)
                             : grid.rect_sum(c, x0, y0, x1, y1) /
                                   (static_cast<double>(x1 - x0) * (y1 - y0));
        out[(static_cast<size_t>(c) * S + i) * S + j] = v;
      }
    }
  }
  return out;
}

Matrix pool_features(const FeatureGrid& grid, const std::vector<Box>& boxes, int S) {
  Matrix f(S * S * grid.channels, static_cast<int>(boxes.size()));
  for (size_t b = 0; b < boxes.size(); ++b) {
    const auto v = roi_pool(grid, boxes[b], S);
    for (size_t i = 0; i < v.size(); ++i) f(static_cast<int>(i), static_cast<int>(b)) = v[i];
  }
  return f;
}

void ModelConfig::validate() const {
  if (channels < 1 || pool_grid < 1 || encoder_dim < 1 || num_classes < 1)
    throw std::invalid_argument("ModelConfig: all dimensions must be positive");
}

ParamSet zeros_like(const ParamSet& t) {
  ParamSet z;
#define MSOD_ZERO(field) \
  if (!t.field.empty()) z.field = layer_like(t.field);
  MSOD_PARAMSET_FIELDS(MSOD_ZERO)
#undef MSOD_ZERO
  return z;
}

void check_finite(const ParamSet& t, const std::string& context) {
  for_each_tensor(t, [&](const char* name, const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite value in tensor " + std::string(name) + " during " +
                                 context);
  });
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ModelParams m;
  m.cfg = cfg;
  const int F = cfg.feature_dim();
  const int d = cfg.encoder_dim;
  const int C = cfg.num_classes;
  m.t.enc_oam = make_layer(d, F, rng);
  if (!cfg.shared_encoder) m.t.enc_sup = make_layer(d, F, rng);
  m.t.w_score = make_layer(C, d, rng);
  m.t.w_cls = make_layer(C + 1, d, rng);
  m.t.w_reg = make_layer(4 * C, d, rng);
  m.t.v_cls = make_layer(C + 1, d, rng);
  m.t.v_reg = make_layer(4 * C, d, rng);
  return m;
}

const LinearLayer& sup_encoder(const ModelParams& m) {
  return m.cfg.shared_encoder ? m.t.enc_oam : m.t.enc_sup;
}

LinearLayer& sup_encoder_grad(const ModelConfig& cfg, ParamSet& grads) {
  return cfg.shared_encoder ? grads.enc_oam : grads.enc_sup;
}

namespace {

Matrix tanh_of(Matrix x) {
  for (double& v : x.a) v = std::tanh(v);
  return x;
}

// Softmax over proposals within each class row.
Matrix softmax_rows(const Matrix& s) {
  Matrix out(s.rows, s.cols);
  for (int r = 0; r < s.rows; ++r) {
    double mx = s(r, 0);
    for (int c = 1; c < s.cols; ++c) mx = std::max(mx, s(r, c));
    double z = 0.0;
    for (int c = 0; c < s.cols; ++c) z += std::exp(s(r, c) - mx);
    for (int c = 0; c < s.cols; ++c) out(r, c) = std::exp(s(r, c) - mx) / z;
  }
  return out;
}

// Softmax over classes within each proposal column.
Matrix softmax_cols(const Matrix& z) {
  Matrix out(z.rows, z.cols);
  for (int c = 0; c < z.cols; ++c) {
    double mx = z(0, c);
    for (int r = 1; r < z.rows; ++r) mx = std::max(mx, z(r, c));
    double sum = 0.0;
    for (int r = 0; r < z.rows; ++r) sum += std::exp(z(r, c) - mx);
    for (int r = 0; r < z.rows; ++r) out(r, c) = std::exp(z(r, c) - mx) / sum;
  }
  return out;
}

}  // namespace

OamForward oam_forward(const ModelParams& m, const Matrix& features) {
  const int C = m.cfg.num_classes;
  OamForward f;
  f.h = tanh_of(linear_forward(m.t.enc_oam, features));
  f.score = linear_forward(m.t.w_score, f.h);
  f.cls_logits = linear_forward(m.t.w_cls, f.h);
  f.reg = linear_forward(m.t.w_reg, f.h);
  f.gamma_r = softmax_rows(f.score);
  f.p = softmax_cols(f.cls_logits);
  // Row 0 of p is background; gamma_c renormalizes the foreground rows.
  f.gamma_c = Matrix(C, f.p.cols);
  for (int b = 0; b < f.p.cols; ++b) {
    double q = 0.0;
    for (int c = 0; c < C; ++c) q += f.p(c + 1, b);
    const double denom = std::max(q, kRenormEps);
    for (int c = 0; c < C; ++c) f.gamma_c(c, b) = f.p(c + 1, b) / denom;
  }
  f.phi = Matrix(C, f.p.cols);
  f.alpha.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int b = 0; b < f.p.cols; ++b) {
      f.phi(c, b) = f.gamma_c(c, b) * f.gamma_r(c, b);
      s += f.phi(c, b);
    }
    f.alpha[c] = s;
  }
  return f;
}

SupForward supervised_forward(const ModelParams& m, const Matrix& features) {
  SupForward f;
  f.h = tanh_of(linear_forward(sup_encoder(m), features));
  f.cls_logits = linear_forward(m.t.v_cls, f.h);
  f.reg = linear_forward(m.t.v_reg, f.h);
  f.p = softmax_cols(f.cls_logits);
  return f;
}

void alpha_backward(const OamForward& f, const std::vector<double>& d_alpha,
                    Matrix& d_score, Matrix& d_cls_logits) {
  const int C = f.gamma_c.rows;
  const int B = f.gamma_c.cols;
  // d_phi(c, b) = d_alpha[c]; split into the two softmax paths.
  Matrix d_gamma_c(C, B), d_gamma_r(C, B);
  for (int c = 0; c < C; ++c)
    for (int b = 0; b < B; ++b) {
      d_gamma_c(c, b) = d_alpha[c] * f.gamma_r(c, b);
      d_gamma_r(c, b) = d_alpha[c] * f.gamma_c(c, b);
    }
  // Softmax over proposals, per class row.
  for (int c = 0; c < C; ++c) {
    double dot = 0.0;
    for (int b = 0; b < B; ++b) dot += d_gamma_r(c, b) * f.gamma_r(c, b);
    for (int b = 0; b < B; ++b) d_score(c, b) += f.gamma_r(c, b) * (d_gamma_r(c, b) - dot);
  }
  // Foreground renormalization, then softmax over classes, per column.
  Matrix d_p(C + 1, B);
  for (int b = 0; b < B; ++b) {
    double q = 0.0;
    for (int c = 0; c < C; ++c) q += f.p(c + 1, b);
    const double denom = std::max(q, kRenormEps);
    double dot = 0.0;
    for (int c = 0; c < C; ++c) dot += d_gamma_c(c, b) * f.gamma_c(c, b);
    const double sub = (q > kRenormEps) ? dot / denom : 0.0;
    d_p(0, b) = 0.0;
    for (int c = 0; c < C; ++c) d_p(c + 1, b) = d_gamma_c(c, b) / denom - sub;
  }
  for (int b = 0; b < B; ++b) {
    double dot = 0.0;
    for (int k = 0; k <= C; ++k) dot += d_p(k, b) * f.p(k, b);
    for (int k = 0; k <= C; ++k) d_cls_logits(k, b) += f.p(k, b) * (d_p(k, b) - dot);
  }
}

namespace {

void backward_through_encoder(const LinearLayer& enc, const Matrix& features, const Matrix& h,
                              Matrix& dh, LinearLayer& g_enc) {
  for (int r = 0; r < dh.rows; ++r)
    for (int b = 0; b < dh.cols; ++b) dh(r, b) *= 1.0 - h(r, b) * h(r, b);
  linear_backward_acc(enc, features, dh, g_enc, nullptr);
}

}  // namespace

void oam_backward(const ModelParams& m, const Matrix& features, const OamForward& f,
                  const Matrix& d_score, const Matrix& d_cls_logits, const Matrix& d_reg,
                  ParamSet& grads) {
  Matrix dh(f.h.rows, f.h.cols);
  linear_backward_acc(m.t.w_score, f.h, d_score, grads.w_score, &dh);
  linear_backward_acc(m.t.w_cls, f.h, d_cls_logits, grads.w_cls, &dh);
  linear_backward_acc(m.t.w_reg, f.h, d_reg, grads.w_reg, &dh);
  backward_through_encoder(m.t.enc_oam, features, f.h, dh, grads.enc_oam);
}

void supervised_backward(const ModelParams& m, const Matrix& features, const SupForward& f,
                         const Matrix& d_cls_logits, const Matrix& d_reg, ParamSet& grads) {
  Matrix dh(f.h.rows, f.h.cols);
  linear_backward_acc(m.t.v_cls, f.h, d_cls_logits, grads.v_cls, &dh);
  linear_backward_acc(m.t.v_reg, f.h, d_reg, grads.v_reg, &dh);
  backward_through_encoder(sup_encoder(m), features, f.h, dh,
                           sup_encoder_grad(m.cfg, grads));
}

void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, const SgdConfig& cfg) {
#define MSOD_STEP(field)                                                     \
  if (!params.field.empty()) {                                               \
    sgd_tensor(params.field.w.a, grads.field.w.a, velocity.field.w.a, cfg);  \
    sgd_tensor(params.field.b, grads.field.b, velocity.field.b, cfg);        \
  }
  MSOD_PARAMSET_FIELDS(MSOD_STEP)
#undef MSOD_STEP
}

}  // namespace msod
