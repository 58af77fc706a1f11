#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace aped::ag {

using Shape = std::vector<int>;

/// Tensor storage. Every buffer starts on a vector-register boundary, so
/// vectorised kernels take the same path for equal shapes and results do not
/// depend on where the allocator placed the data.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Node;

/// Shape-carrying double-precision array with reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies alias the same node. Ops never mutate
/// their inputs. Rank 0..2 is supported: a rank-1 tensor of n elements is
/// treated as a 1 x n row by matrix ops, a scalar as 1 x 1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Column vector (n x 1) built from values.
  static Tensor column(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int rows() const;
  int cols() const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Write access for leaves (initialisers, optimisers). Values are shared
  /// with every view_leaf() of this tensor.
  std::span<double> mutable_values();
  double item() const;
  double at(int row, int col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Seeds d(this)/d(this) = 1 and accumulates into every requires_grad leaf.
  /// Intermediate gradients are reset first; leaf gradients accumulate across
  /// calls until zero_grad().
  void backward() const;

  /// New leaf sharing this tensor's value storage, with its own gradient.
  Tensor view_leaf(bool requires_grad = true) const;
  /// New constant leaf with a copy of the values.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::shared_ptr<Buffer> value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::size_t size() const { return value->size(); }
  Buffer& ensure_grad();
};

/// Disables graph recording on this thread for its lifetime.
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

/// Process-wide allocator tuning for training loops (glibc only; no-op elsewhere).
void configure_allocator();

/// When on, every op output is checked for NaN/Inf and throws aped::Error.
/// Defaults to on in builds without NDEBUG.
void set_finite_checks(bool enabled);
bool finite_checks();

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x w + b with b a 1 x n row broadcast over the rows of x.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Elementwise a + b; b may also be a single row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// axis 0 stacks rows, axis 1 joins columns.
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Half-open range [begin, end) along axis.
Tensor slice(const Tensor& a, int axis, int begin, int end);
/// Rows of table selected by ids.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
/// Row-wise normalisation followed by gain * x + bias (gain, bias: 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double exponent);
/// Gradient is passed through only where lo <= a <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);
/// axis 1 (or -1): normalise each row; axis 0: each column.
Tensor softmax(const Tensor& a, int axis = -1);
/// Row-wise log-softmax.
Tensor log_softmax(const Tensor& a);

/// Score assigned to masked attention entries before the softmax.
inline constexpr double kAttentionMaskValue = -1e30;

/// Scaled dot-product attention over n_heads column blocks of q (Lq x d),
/// k and v (Lk x d). mask is Lq x Lk with 1 = blocked, or empty. When
/// probs_out is given it receives the n_heads x Lq x Lk attention weights.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                            std::span<const std::uint8_t> mask = {}, std::vector<double>* probs_out = nullptr);
/// axis 0 -> 1 x cols, axis 1 -> rows x 1, axis -1 -> scalar.
Tensor mean(const Tensor& a, int axis = -1);
Tensor sum(const Tensor& a, int axis = -1);
/// Positions with mask != 0 take `value` and receive no gradient.
Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value);
/// out[i] = a[i, index[i]]; returns rows x 1.
Tensor pick(const Tensor& a, std::span<const int> index);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---- optimisation ----------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

/// One bias-corrected Adam update over every parameter with a gradient.
/// Parameters without a gradient are treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

/// Scales gradients so their global L2 norm is at most max_norm (no-op when
/// max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

// ---- serialisation ---------------------------------------------------------

using NamedTensors = std::map<std::string, Tensor>;

/// "APEDCKPT", version byte, u32 entry count, then per entry (sorted by name):
/// u32 name length, UTF-8 name, u32 rank, u32 per dimension, f64 payload.
/// All integers and floats little-endian.
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const NamedTensors& tensors, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);
std::vector<char> serialize_checkpoint(const NamedTensors& tensors);

}  // namespace aped::ag
