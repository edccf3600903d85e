#pragma once

// The trainable network:
//
//   layer fusion     F_i   = sum_l softmax(theta)_l X_{i,l}          (dim x T)
//   channel attention q_i  = W_Q mean_t F_i,  k_i = W_K mean_t F_i
//                     alpha = softmax_i(q_i . k_i / sqrt(d))
//                     H     = W_V sum_i alpha_i F_i                   (d x T)
//   temporal CNN      O     = relu(conv3(relu(conv2(relu(conv1(H))))))  width-5 kernels
//   temporal pooling  w     = softmax_t(w_pool . o_t),  S = sum_t w_t o_t
//   head              probs = softmax(W_head S + b_head)
//
// All operations are templated on the scalar type: float for training,
// double for gradient verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "dataset_io.hpp"
#include "error.hpp"
#include "features.hpp"
#include "focal_loss.hpp"
#include "math.hpp"
#include "rng.hpp"

namespace lfpstage {

inline constexpr std::size_t kKernelWidth = 5;
inline constexpr std::size_t kConvLayers = 3;

enum class ConvPadding { Valid, Same };

inline std::string to_string(ConvPadding p) { return p == ConvPadding::Valid ? "valid" : "same"; }

inline ConvPadding padding_from_string(const std::string& s) {
  if (s == "valid") return ConvPadding::Valid;
  if (s == "same") return ConvPadding::Same;
  throw config_error("unknown conv padding '" + s + "'");
}

struct ModelDims {
  std::size_t n_layers = 25;
  std::size_t feature_dim = 64;
  std::size_t attention_dim = 32;
  std::array<std::size_t, kConvLayers> conv_widths{32, 32, 32};
  // Valid convolutions shorten the sequence by 4 per layer; Same zero-pads
  // by 2 on each side and must be requested explicitly.
  ConvPadding padding = ConvPadding::Valid;

  bool operator==(const ModelDims&) const = default;
};

inline void validate(const ModelDims& d) {
  if (d.n_layers < 1 || d.feature_dim < 1 || d.attention_dim < 1)
    throw config_error("model dims must be >= 1");
  for (auto w : d.conv_widths)
    if (w < 1) throw config_error("conv widths must be >= 1");
}

inline std::size_t min_frames(const ModelDims& d) {
  return d.padding == ConvPadding::Valid ? kConvLayers * (kKernelWidth - 1) + 1 : 1;
}

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  bool operator==(const TensorSpec&) const = default;
};

// Tensor order in the flat parameter buffer (and in model files).
namespace slot {
inline constexpr std::size_t kLayerLogits = 0;
inline constexpr std::size_t kWq = 1;
inline constexpr std::size_t kWk = 2;
inline constexpr std::size_t kWv = 3;
inline constexpr std::size_t conv_kernel(std::size_t layer) { return 4 + 2 * layer; }
inline constexpr std::size_t conv_bias(std::size_t layer) { return 5 + 2 * layer; }
inline constexpr std::size_t kPool = 10;
inline constexpr std::size_t kHeadWeight = 11;
inline constexpr std::size_t kHeadBias = 12;
}  // namespace slot

inline std::vector<TensorSpec> parameter_layout(const ModelDims& d) {
  std::vector<TensorSpec> specs;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    const std::size_t offset = specs.empty() ? 0 : specs.back().offset + specs.back().size;
    specs.push_back({std::move(name), std::move(shape), offset, size});
  };
  add("layer_logits", {d.n_layers});
  add("attention.w_q", {d.attention_dim, d.feature_dim});
  add("attention.w_k", {d.attention_dim, d.feature_dim});
  add("attention.w_v", {d.attention_dim, d.feature_dim});
  std::size_t c_in = d.attention_dim;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    add("conv" + std::to_string(i + 1) + ".kernel", {d.conv_widths[i], c_in, kKernelWidth});
    add("conv" + std::to_string(i + 1) + ".bias", {d.conv_widths[i]});
    c_in = d.conv_widths[i];
  }
  add("pool.w", {c_in});
  add("head.weight", {kNumClasses, c_in});
  add("head.bias", {kNumClasses});
  return specs;
}

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Flat parameter (or gradient) buffer with named views. Matrices are stored
// row-major; conv kernels as [out][in][tap].
template <typename S>
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelDims& dims) : dims_(dims), layout_(parameter_layout(dims)) {
    validate(dims);
    values_.assign(layout_.back().offset + layout_.back().size, S(0));
  }

  const ModelDims& dims() const { return dims_; }
  const std::vector<TensorSpec>& layout() const { return layout_; }
  std::span<S> values() { return values_; }
  std::span<const S> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::span<S> tensor(std::size_t slot) { return std::span(values_).subspan(layout_[slot].offset, layout_[slot].size); }
  std::span<const S> tensor(std::size_t slot) const {
    return std::span(values_).subspan(layout_[slot].offset, layout_[slot].size);
  }

  auto layer_logits() const { return vec(slot::kLayerLogits); }
  auto w_q() const { return mat(slot::kWq); }
  auto w_k() const { return mat(slot::kWk); }
  auto w_v() const { return mat(slot::kWv); }
  auto pool_w() const { return vec(slot::kPool); }
  auto head_weight() const { return mat(slot::kHeadWeight); }
  auto head_bias() const { return vec(slot::kHeadBias); }

  void set_zero() { std::fill(values_.begin(), values_.end(), S(0)); }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out(dims_);
    std::transform(values_.begin(), values_.end(), out.values().begin(), [](S v) { return static_cast<T>(v); });
    return out;
  }

  ModelParams& operator+=(const ModelParams& o) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }

  bool operator==(const ModelParams&) const = default;

 private:
  Eigen::Map<const Vector<S>> vec(std::size_t s) const {
    return {values_.data() + layout_[s].offset, static_cast<Eigen::Index>(layout_[s].size)};
  }
  Eigen::Map<const RowMatrix<S>> mat(std::size_t s) const {
    return {values_.data() + layout_[s].offset, static_cast<Eigen::Index>(layout_[s].shape[0]),
            static_cast<Eigen::Index>(layout_[s].shape[1])};
  }

  ModelDims dims_;
  std::vector<TensorSpec> layout_;
  std::vector<S> values_;
};

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) per tensor from a stream keyed
// by (seed, tensor name); layer logits start at zero.
template <typename S>
ModelParams<S> init_model(const ModelDims& dims, std::uint64_t seed) {
  ModelParams<S> m(dims);
  const auto& layout = m.layout();
  for (std::size_t s = 0; s < layout.size(); ++s) {
    if (s == slot::kLayerLogits) continue;
    std::size_t fan_in = 0;
    if (s == slot::kWq || s == slot::kWk || s == slot::kWv) fan_in = dims.feature_dim;
    else if (s == slot::kPool) fan_in = layout[s].size;
    else if (s == slot::kHeadWeight || s == slot::kHeadBias) fan_in = layout[slot::kPool].size;
    else {
      const std::size_t layer = (s - slot::conv_kernel(0)) / 2;
      const auto& kernel = layout[slot::conv_kernel(layer)];
      fan_in = kernel.shape[1] * kKernelWidth;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Rng rng(derive_seed(seed, fnv1a64(layout[s].name)));
    for (S& v : m.tensor(s)) v = static_cast<S>(rng.uniform(-bound, bound));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Channel attention.

template <typename S>
struct AttentionResult {
  Matrix<S> h;        // attention_dim x T
  Vector<S> alpha;    // one weight per input channel, input order
  Vector<S> scores;
  Matrix<S> mixed;    // sum_i alpha_i F_i, feature_dim x T
  std::vector<Vector<S>> descriptors, queries, keys;
  std::vector<std::size_t> order;  // canonical channel order used for reductions
};

namespace detail {

template <typename S>
bool lexicographic_less(const Matrix<S>& a, const Matrix<S>& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace detail

// Cross-channel sums run in an order determined by channel content alone
// (score, then data), so permuting the input channels gives bit-identical
// H and a correspondingly permuted alpha.
template <typename S, typename WQ, typename WK, typename WV>
AttentionResult<S> channel_attention(const WQ& w_q, const WK& w_k, const WV& w_v,
                                     const std::vector<Matrix<S>>& features) {
  const std::size_t n = features.size();
  if (n == 0) throw data_error("channel attention needs at least one channel");
  const Eigen::Index dim = features[0].rows();
  const Eigen::Index frames = features[0].cols();
  if (w_q.cols() != dim || w_k.cols() != dim || w_v.cols() != dim)
    throw data_error("attention weights expect feature dim " + std::to_string(w_q.cols()) + ", got " +
                     std::to_string(dim));
  const S scale = S(1) / std::sqrt(static_cast<S>(w_q.rows()));

  AttentionResult<S> r;
  r.scores.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].rows() != dim || features[i].cols() != frames)
      throw data_error("channel feature maps differ in shape");
    r.descriptors.push_back(features[i].rowwise().mean());
    r.queries.push_back(w_q * r.descriptors.back());
    r.keys.push_back(w_k * r.descriptors.back());
    r.scores[static_cast<Eigen::Index>(i)] = r.queries.back().dot(r.keys.back()) * scale;
  }

  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    const S sa = r.scores[static_cast<Eigen::Index>(a)];
    const S sb = r.scores[static_cast<Eigen::Index>(b)];
    if (sa != sb) return sa < sb;
    return detail::lexicographic_less(features[a], features[b]);
  });

  const S max_score = r.scores.maxCoeff();
  r.alpha.resize(static_cast<Eigen::Index>(n));
  S total = 0;
  for (std::size_t i : r.order) {
    const auto ii = static_cast<Eigen::Index>(i);
    r.alpha[ii] = std::exp(r.scores[ii] - max_score);
    total += r.alpha[ii];
  }
  r.alpha /= total;

  r.mixed = Matrix<S>::Zero(dim, frames);
  for (std::size_t i : r.order) r.mixed.noalias() += r.alpha[static_cast<Eigen::Index>(i)] * features[i];
  r.h.noalias() = w_v * r.mixed;
  return r;
}

// ---------------------------------------------------------------------------
// 1-D convolution (cross-correlation), width 5, followed by ReLU.

template <typename S>
struct ConvResult {
  Matrix<S> input;  // padded input actually convolved
  Matrix<S> pre;    // pre-activation
  Matrix<S> out;    // relu(pre)
};

namespace detail {

// Tap k of a [out][in][5] kernel as an out x in matrix.
template <typename S>
auto conv_tap(std::span<const S> kernel, std::size_t c_out, std::size_t c_in, std::size_t k) {
  using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  return Eigen::Map<const Matrix<S>, 0, Stride>(kernel.data() + k, static_cast<Eigen::Index>(c_out),
                                                static_cast<Eigen::Index>(c_in),
                                                Stride(static_cast<Eigen::Index>(kKernelWidth),
                                                       static_cast<Eigen::Index>(c_in * kKernelWidth)));
}

template <typename S>
auto conv_tap(std::span<S> kernel, std::size_t c_out, std::size_t c_in, std::size_t k) {
  using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  return Eigen::Map<Matrix<S>, 0, Stride>(kernel.data() + k, static_cast<Eigen::Index>(c_out),
                                          static_cast<Eigen::Index>(c_in),
                                          Stride(static_cast<Eigen::Index>(kKernelWidth),
                                                 static_cast<Eigen::Index>(c_in * kKernelWidth)));
}

}  // namespace detail

template <typename S>
ConvResult<S> conv1d_forward(std::span<const S> kernel, std::span<const S> bias, const Matrix<S>& x,
                             ConvPadding padding = ConvPadding::Valid) {
  const std::size_t c_out = bias.size();
  const auto c_in = static_cast<std::size_t>(x.rows());
  if (kernel.size() != c_out * c_in * kKernelWidth)
    throw data_error("conv kernel shape does not match " + std::to_string(c_in) + " input channels");
  ConvResult<S> r;
  constexpr Eigen::Index pad = (kKernelWidth - 1) / 2;
  if (padding == ConvPadding::Same) {
    r.input = Matrix<S>::Zero(x.rows(), x.cols() + 2 * pad);
    r.input.middleCols(pad, x.cols()) = x;
  } else {
    r.input = x;
  }
  const Eigen::Index t_in = r.input.cols();
  if (t_in < static_cast<Eigen::Index>(kKernelWidth))
    throw data_error("convolution needs at least " + std::to_string(kKernelWidth) + " frames, got " +
                     std::to_string(x.cols()));
  const Eigen::Index t_out = t_in - static_cast<Eigen::Index>(kKernelWidth) + 1;
  const Eigen::Map<const Vector<S>> b(bias.data(), static_cast<Eigen::Index>(c_out));
  r.pre = b.replicate(1, t_out);
  for (std::size_t k = 0; k < kKernelWidth; ++k)
    r.pre.noalias() += detail::conv_tap(kernel, c_out, c_in, k) * r.input.middleCols(static_cast<Eigen::Index>(k), t_out);
  r.out = r.pre.cwiseMax(S(0));
  return r;
}

// Accumulates kernel/bias gradients and returns dL/dx (unpadded).
template <typename S>
Matrix<S> conv1d_backward(std::span<const S> kernel, const ConvResult<S>& r, const Matrix<S>& d_out,
                          std::span<S> d_kernel, std::span<S> d_bias, ConvPadding padding) {
  const std::size_t c_out = d_bias.size();
  const auto c_in = static_cast<std::size_t>(r.input.rows());
  const Eigen::Index t_out = r.pre.cols();
  const Matrix<S> d_pre = (r.pre.array() > S(0)).select(d_out, S(0));
  Eigen::Map<Vector<S>> db(d_bias.data(), static_cast<Eigen::Index>(c_out));
  db += d_pre.rowwise().sum();
  Matrix<S> d_input = Matrix<S>::Zero(r.input.rows(), r.input.cols());
  for (std::size_t k = 0; k < kKernelWidth; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    detail::conv_tap(d_kernel, c_out, c_in, k).noalias() += d_pre * r.input.middleCols(ki, t_out).transpose();
    d_input.middleCols(ki, t_out).noalias() += detail::conv_tap(kernel, c_out, c_in, k).transpose() * d_pre;
  }
  if (padding == ConvPadding::Same) {
    constexpr Eigen::Index pad = (kKernelWidth - 1) / 2;
    return d_input.middleCols(pad, d_input.cols() - 2 * pad);
  }
  return d_input;
}

// ---------------------------------------------------------------------------
// Temporal softmax pooling and the classification head.

template <typename S>
struct PoolResult {
  Vector<S> pooled;   // channels
  Vector<S> weights;  // one per frame, sums to 1
};

template <typename S, typename W>
PoolResult<S> temporal_pool(const W& w_pool, const Matrix<S>& o) {
  if (o.cols() < 1) throw data_error("temporal pooling needs at least one frame");
  if (w_pool.size() != o.rows()) throw data_error("pooling vector does not match conv output channels");
  PoolResult<S> r;
  const Vector<S> frame_scores = o.transpose() * w_pool;
  r.weights = softmax<S>(frame_scores);
  r.pooled = o * r.weights;
  return r;
}

template <typename S>
struct HeadResult {
  Vector<S> logits;
  Vector<S> probs;
};

template <typename S, typename W, typename B>
HeadResult<S> head_forward(const W& weight, const B& bias, const Vector<S>& pooled) {
  if (weight.cols() != pooled.size()) throw data_error("head weight does not match pooled width");
  HeadResult<S> r;
  r.logits = weight * pooled + bias;
  r.probs = softmax<S>(r.logits);
  return r;
}

// ---------------------------------------------------------------------------
// Full network.

template <typename S>
struct ForwardResult {
  Vector<S> probs;
  Vector<S> logits;
  Vector<S> alpha;          // per input channel
  Vector<S> layer_weights;  // softmax(theta)
  Vector<S> frame_weights;  // temporal pooling weights

  std::size_t predicted() const {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }
};

template <typename S>
struct ForwardTrace {
  std::vector<Matrix<S>> fused;
  AttentionResult<S> attention;
  std::array<ConvResult<S>, kConvLayers> conv;
  PoolResult<S> pool;
  HeadResult<S> head;
  Vector<S> layer_weights;
};

template <typename S>
void check_compatible(const ModelParams<S>& m, const FeatureTensor& ft) {
  const ModelDims& d = m.dims();
  if (ft.layers != d.n_layers)
    throw data_error("model expects " + std::to_string(d.n_layers) + " feature layers, got " + std::to_string(ft.layers));
  if (ft.dim != d.feature_dim)
    throw data_error("model expects feature dim " + std::to_string(d.feature_dim) + ", got " + std::to_string(ft.dim));
  if (ft.n_channels < 1) throw data_error("feature tensor has no channels");
  if (ft.frames < min_frames(d))
    throw data_error("model needs at least " + std::to_string(min_frames(d)) + " frames with " + to_string(d.padding) +
                     " convolutions, got " + std::to_string(ft.frames));
}

template <typename S>
ForwardTrace<S> forward_trace(const ModelParams<S>& m, const FeatureTensor& ft) {
  check_compatible(m, ft);
  ForwardTrace<S> tr;
  tr.layer_weights = softmax<S>(Vector<S>(m.layer_logits()));
  tr.fused = combine_layers<S>(tr.layer_weights, ft);
  tr.attention = channel_attention<S>(m.w_q(), m.w_k(), m.w_v(), tr.fused);
  const Matrix<S>* x = &tr.attention.h;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    tr.conv[i] = conv1d_forward<S>(m.tensor(slot::conv_kernel(i)), m.tensor(slot::conv_bias(i)), *x, m.dims().padding);
    x = &tr.conv[i].out;
  }
  tr.pool = temporal_pool<S>(m.pool_w(), *x);
  tr.head = head_forward<S>(m.head_weight(), m.head_bias(), tr.pool.pooled);
  return tr;
}

template <typename S>
ForwardResult<S> forward(const ModelParams<S>& m, const FeatureTensor& ft) {
  ForwardTrace<S> tr = forward_trace(m, ft);
  return {std::move(tr.head.probs), std::move(tr.head.logits), std::move(tr.attention.alpha),
          std::move(tr.layer_weights), std::move(tr.pool.weights)};
}

// Adds d(focal loss)/d(params) for one sample into `grads` and returns the
// loss.
template <typename S>
S backward(const ModelParams<S>& m, const FeatureTensor& ft, Label4 label, const FocalLossConfig& loss_cfg,
           ModelParams<S>& grads, ForwardResult<S>* result = nullptr) {
  if (!(grads.dims() == m.dims())) throw data_error("gradient buffer shape does not match the model");
  const ForwardTrace<S> tr = forward_trace(m, ft);
  const S loss = focal_loss<S>(tr.head.probs, label, loss_cfg);
  if (result) *result = {tr.head.probs, tr.head.logits, tr.attention.alpha, tr.layer_weights, tr.pool.weights};

  // Head.
  const Vector<S> d_logits = focal_loss_grad_logits<S>(tr.head.probs, label, loss_cfg);
  {
    auto gw = grads.tensor(slot::kHeadWeight);
    Eigen::Map<RowMatrix<S>> dw(gw.data(), static_cast<Eigen::Index>(kNumClasses), tr.pool.pooled.size());
    dw.noalias() += d_logits * tr.pool.pooled.transpose();
    auto gb = grads.tensor(slot::kHeadBias);
    Eigen::Map<Vector<S>>(gb.data(), static_cast<Eigen::Index>(kNumClasses)) += d_logits;
  }
  const Vector<S> d_pooled = m.head_weight().transpose() * d_logits;

  // Temporal pooling.
  const Matrix<S>& o = tr.conv.back().out;
  const Vector<S> d_weights = o.transpose() * d_pooled;
  const Vector<S> d_frame_scores = softmax_backward<S>(tr.pool.weights, d_weights);
  Matrix<S> d_o = d_pooled * tr.pool.weights.transpose();
  d_o.noalias() += m.pool_w() * d_frame_scores.transpose();
  {
    auto gp = grads.tensor(slot::kPool);
    Eigen::Map<Vector<S>>(gp.data(), o.rows()) += o * d_frame_scores;
  }

  // Convolutions.
  Matrix<S> d_x = std::move(d_o);
  for (std::size_t i = kConvLayers; i-- > 0;) {
    d_x = conv1d_backward<S>(m.tensor(slot::conv_kernel(i)), tr.conv[i], d_x, grads.tensor(slot::conv_kernel(i)),
                             grads.tensor(slot::conv_bias(i)), m.dims().padding);
  }
  const Matrix<S>& d_h = d_x;

  // Channel attention.
  const auto& at = tr.attention;
  const auto n_ch = at.order.size();
  const auto frames = static_cast<S>(at.mixed.cols());
  const S scale = S(1) / std::sqrt(static_cast<S>(m.dims().attention_dim));
  auto wv = grads.tensor(slot::kWv);
  Eigen::Map<RowMatrix<S>> d_wv(wv.data(), m.w_v().rows(), m.w_v().cols());
  d_wv.noalias() += d_h * at.mixed.transpose();
  const Matrix<S> d_mixed = m.w_v().transpose() * d_h;
  Vector<S> d_alpha(static_cast<Eigen::Index>(n_ch));
  for (std::size_t i = 0; i < n_ch; ++i)
    d_alpha[static_cast<Eigen::Index>(i)] = (d_mixed.array() * tr.fused[i].array()).sum();
  const Vector<S> d_scores = softmax_backward<S>(at.alpha, d_alpha);

  auto wq = grads.tensor(slot::kWq);
  auto wk = grads.tensor(slot::kWk);
  Eigen::Map<RowMatrix<S>> d_wq(wq.data(), m.w_q().rows(), m.w_q().cols());
  Eigen::Map<RowMatrix<S>> d_wk(wk.data(), m.w_k().rows(), m.w_k().cols());
  std::vector<Matrix<S>> d_fused(n_ch);
  for (std::size_t i : at.order) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Vector<S> d_q = d_scores[ii] * scale * at.keys[i];
    const Vector<S> d_k = d_scores[ii] * scale * at.queries[i];
    d_wq.noalias() += d_q * at.descriptors[i].transpose();
    d_wk.noalias() += d_k * at.descriptors[i].transpose();
    Vector<S> d_desc = m.w_q().transpose() * d_q;
    d_desc.noalias() += m.w_k().transpose() * d_k;
    d_fused[i] = at.alpha[ii] * d_mixed;
    d_fused[i].colwise() += d_desc / frames;
  }

  // Layer fusion.
  const Vector<S> d_theta = combine_layers_backward<S>(tr.layer_weights, ft, d_fused);
  auto gt = grads.tensor(slot::kLayerLogits);
  Eigen::Map<Vector<S>>(gt.data(), d_theta.size()) += d_theta;
  return loss;
}

// ---------------------------------------------------------------------------
// Model files: <name>.modeljson manifest + <name>.weights raw f32le in
// manifest order.

inline io::json dims_to_json(const ModelDims& d) {
  return io::json{{"n_layers", d.n_layers},
                  {"feature_dim", d.feature_dim},
                  {"attention_dim", d.attention_dim},
                  {"conv_widths", d.conv_widths},
                  {"padding", to_string(d.padding)}};
}

inline ModelDims dims_from_json(const io::json& j) {
  io::require_exact_keys(j, {"n_layers", "feature_dim", "attention_dim", "conv_widths", "padding"}, "model dims");
  ModelDims d;
  d.n_layers = j.at("n_layers").get<std::size_t>();
  d.feature_dim = j.at("feature_dim").get<std::size_t>();
  d.attention_dim = j.at("attention_dim").get<std::size_t>();
  const auto widths = j.at("conv_widths").get<std::vector<std::size_t>>();
  if (widths.size() != kConvLayers) throw data_error("model dims: conv_widths needs 3 entries");
  std::copy(widths.begin(), widths.end(), d.conv_widths.begin());
  d.padding = padding_from_string(j.at("padding").get<std::string>());
  validate(d);
  return d;
}

inline std::string hash_hex(std::uint64_t h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

struct ModelFile {
  ModelParams<float> params;
  BackendConfig backend;
};

inline void save_model(const fs::path& manifest_path, const fs::path& weights_path, const ModelParams<float>& m,
                       const BackendConfig& backend) {
  io::json tensors = io::json::array();
  for (const auto& spec : m.layout()) tensors.push_back({{"name", spec.name}, {"shape", spec.shape}});
  io::json manifest{{"tensors", tensors},
                    {"dims", dims_to_json(m.dims())},
                    {"backend", backend_to_json(backend)},
                    {"backend_hash", hash_hex(backend_hash(backend))}};
  std::vector<unsigned char> bytes;
  io::encode_f32le(m.values(), bytes);
  io::write_json(manifest_path, manifest);
  io::write_bytes(weights_path, bytes);
}

inline ModelFile load_model(const fs::path& manifest_path, const fs::path& weights_path) {
  const std::string what = "model manifest " + manifest_path.string();
  const io::json j = io::read_json(manifest_path);
  io::require_exact_keys(j, {"tensors", "dims", "backend", "backend_hash"}, what);
  ModelFile f{ModelParams<float>(dims_from_json(j.at("dims"))), backend_from_json(j.at("backend"))};
  if (j.at("backend_hash").get<std::string>() != hash_hex(backend_hash(f.backend)))
    throw data_error(what + ": backend_hash does not match the stored backend config");
  const auto& tensors = j.at("tensors");
  const auto& layout = f.params.layout();
  if (!tensors.is_array() || tensors.size() != layout.size())
    throw data_error(what + ": tensor list does not match dims");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != layout[i].name ||
        tensors[i].at("shape").get<std::vector<std::size_t>>() != layout[i].shape)
      throw data_error(what + ": tensor " + std::to_string(i) + " is not " + layout[i].name);
  }
  const auto bytes = io::read_bytes(weights_path);
  io::decode_f32le(bytes, f.params.values(), weights_path.string());
  return f;
}

}  // namespace lfpstage
