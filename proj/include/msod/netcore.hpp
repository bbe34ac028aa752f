#pragma once

// Numeric substrate: dense matrices, summed-area-table ROI pooling, the shared
// tanh encoder with its five linear heads, analytic backward passes and the
// momentum SGD step. Everything is double precision and deterministic.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "msod/geometry.hpp"

namespace msod {

// Row-major dense matrix.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

// Channel-major feature planes plus a per-channel summed-area table, so box
// pooling costs O(cells) instead of O(area).
struct FeatureGrid {
  int height = 0, width = 0, channels = 0;
  std::vector<double> values;  // [c][y][x]
  std::vector<double> sat;     // per channel, (height + 1) x (width + 1)

  static FeatureGrid from_values(int height, int width, int channels, std::vector<double> values);

  double at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  // Sum of values over pixel rect [x0, x1) x [y0, y1), integer bounds.
  double rect_sum(int c, int x0, int y0, int x1, int y1) const;
};

// S x S mean pooling. Cell (i, j) averages the pixels whose centers fall in
// it; an empty cell takes the pixel nearest its center. The box is clipped to
// the grid first; a box entirely outside is an error. Output layout is
// channel-major: f[(c * S + i) * S + j].
std::vector<double> roi_pool(const FeatureGrid& grid, const Box& box, int S);

// One column per box, rows = S * S * channels.
Matrix pool_features(const FeatureGrid& grid, const std::vector<Box>& boxes, int S);

struct LinearLayer {
  Matrix w;                // out x in
  std::vector<double> b;   // out

  bool empty() const { return w.a.empty(); }
};

struct ModelConfig {
  int channels = 3;
  int pool_grid = 3;       // S
  int encoder_dim = 32;    // d
  int num_classes = 6;     // C, foreground classes; the classifier head is C+1 wide
  bool shared_encoder = true;

  int feature_dim() const { return pool_grid * pool_grid * channels; }
  void validate() const;
};

// Walks the tensors of a ParamSet in a fixed order; enc_sup is present only
// when the branches do not share an encoder.
#define MSOD_PARAMSET_FIELDS(X) \
  X(enc_oam)                    \
  X(enc_sup)                    \
  X(w_score)                    \
  X(w_cls)                      \
  X(w_reg)                      \
  X(v_cls)                      \
  X(v_reg)

struct ParamSet {
  LinearLayer enc_oam;   // encoder of the annotation branch (shared when SE is on)
  LinearLayer enc_sup;   // second encoder, only when SE is off
  LinearLayer w_score;   // C x d, proposal-contribution logits
  LinearLayer w_cls;     // (C+1) x d
  LinearLayer w_reg;     // 4C x d
  LinearLayer v_cls;     // (C+1) x d, supervised branch
  LinearLayer v_reg;     // 4C x d
};

template <class PS, class Fn>
void for_each_tensor(PS& t, Fn&& fn) {
#define MSOD_VISIT(field)                     \
  if (!t.field.empty()) {                     \
    fn(#field ".w", t.field.w.a);             \
    fn(#field ".b", t.field.b);               \
  }
  MSOD_PARAMSET_FIELDS(MSOD_VISIT)
#undef MSOD_VISIT
}

ParamSet zeros_like(const ParamSet& t);
// Throws std::runtime_error naming the offending tensor and context.
void check_finite(const ParamSet& t, const std::string& context);

struct ModelParams {
  ModelConfig cfg;
  ParamSet t;

  // Xavier-uniform weights, zero biases. Two independent encoders when
  // cfg.shared_encoder is false.
  static ModelParams init(const ModelConfig& cfg, std::mt19937_64& rng);
};

// Encoder used by the supervised branch (enc_oam when shared).
const LinearLayer& sup_encoder(const ModelParams& m);
LinearLayer& sup_encoder_grad(const ModelConfig& cfg, ParamSet& grads);

// Forward cache of the annotation branch over one image's proposals.
// Columns index proposals. gamma_r is a per-class softmax over proposals,
// p a per-proposal softmax over the C+1 classes, gamma_c its foreground
// restriction renormalized over the C foreground classes, phi their product,
// alpha the per-class sum of phi (always in [0, 1]).
struct OamForward {
  Matrix h;           // d x B, tanh activations
  Matrix score;       // C x B
  Matrix cls_logits;  // (C+1) x B
  Matrix reg;         // 4C x B
  Matrix gamma_r;     // C x B
  Matrix p;           // (C+1) x B
  Matrix gamma_c;     // C x B
  Matrix phi;         // C x B
  std::vector<double> alpha;  // C
};

OamForward oam_forward(const ModelParams& m, const Matrix& features);

struct SupForward {
  Matrix h;           // d x B
  Matrix cls_logits;  // (C+1) x B
  Matrix reg;         // 4C x B
  Matrix p;           // (C+1) x B, softmax over classes
};

SupForward supervised_forward(const ModelParams& m, const Matrix& features);

// Routes d(loss)/d(alpha) through phi, the foreground renormalization and both
// softmaxes, accumulating into the logit gradients.
void alpha_backward(const OamForward& f, const std::vector<double>& d_alpha,
                    Matrix& d_score, Matrix& d_cls_logits);

// Head and encoder gradients given logit gradients. Accumulates into grads.
void oam_backward(const ModelParams& m, const Matrix& features, const OamForward& f,
                  const Matrix& d_score, const Matrix& d_cls_logits, const Matrix& d_reg,
                  ParamSet& grads);
void supervised_backward(const ModelParams& m, const Matrix& features, const SupForward& f,
                         const Matrix& d_cls_logits, const Matrix& d_reg, ParamSet& grads);

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v
void sgd_step(ParamSet& params, const ParamSet& grads, ParamSet& velocity, const SgdConfig& cfg);

// Log argument clamp shared by every loss.
constexpr double kLogEps = 1e-7;

}  // namespace msod
