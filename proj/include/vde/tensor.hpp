#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vde/errors.hpp"

namespace vde {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Sentinel for gather indices that produce a zero entry (used for padding).
inline constexpr std::size_t kZeroIndex = std::numeric_limits<std::size_t>::max();

namespace detail {
struct Node;
}

/// Shared handle to a node of the define-by-run autograd graph.
///
/// Values are row-major doubles. Copies of a Tensor alias the same node, so
/// parameters can be held in several places and still accumulate into one
/// gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access, for parameter initialization and optimizer updates.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  /// Gradient accumulator; empty span until backward reaches this node.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  /// Releases the accumulator so grad() is empty again.
  void clear_grad();

  /// Reverse-mode sweep from a single-element tensor. Each reachable node is
  /// visited once in reverse topological order.
  void backward() const;

  /// Same values, no graph history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// y = scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
/// Multiplies every element by a one-element tensor (e.g. a learnable scalar).
Tensor scale_by(const Tensor& x, const Tensor& s);
/// coef * a + (1 - coef) * b with a one-element coef.
Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& coef);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// sqrt(max(x, 0)); the gradient at 0 is taken as 0.
Tensor sqrt_clamped(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
/// Gaussian error linear unit, exact erf form.
Tensor gelu(const Tensor& x);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N x in] * W^T + b, with W[out x in] and optional b[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor());
Tensor transpose(const Tensor& x);

// ---- normalization ---------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

/// Softmax over the last axis, max-subtracted.
Tensor softmax_rows(const Tensor& x);
/// Per-row (last axis) normalization followed by the affine gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

// ---- layout ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// out.flat[i] = x.flat[index[i]] (or 0 for kZeroIndex); backward scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape);
/// Row gather for a rank-2 tensor; repeated rows accumulate in backward.
Tensor index_rows(const Tensor& x, const std::vector<std::size_t>& rows);
/// Concatenation along axis 0.
Tensor concat0(const std::vector<Tensor>& parts);
/// Concatenation along the last axis of rank-2 tensors.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// C x H x W -> (H*W) x C
Tensor to_tokens(const Tensor& chw);
/// (H*W) x C -> C x H x W
Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

/// C*r*r x H x W -> C x rH x rW. Output (c, y*r+i, x*r+j) reads channel
/// c*r*r + i*r + j.
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

/// Align-corners bilinear resampling of a C x h x w map.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Adaptive average pooling to a bins x bins grid; bin i spans
/// [floor(i*H/bins), ceil((i+1)*H/bins)).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t bins);

// ---- windowed attention kernel ---------------------------------------------

/// Geometry shared by the fused attention kernel: queries/keys/values are
/// stacked windows of `tokens` rows each; heads split the column axis evenly.
struct AttentionLayout {
  std::size_t windows = 1;
  std::size_t tokens = 1;
  std::size_t heads = 1;
  double scale = 1.0;
  /// tokens*tokens entries indexing rows of the bias table; empty -> no bias.
  std::vector<std::size_t> bias_index;
  /// windows*tokens*tokens additive entries (0 or -inf); empty -> no mask.
  std::vector<double> mask;
};

/// Per window and head: A = softmax(scale * Q K^T + B + mask), out = A V.
/// `bias_table` is [entries x heads] or undefined.
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& bias_table, const AttentionLayout& layout);

}  // namespace vde
