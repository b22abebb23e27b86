// autodiff.hpp
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dgs {

/**
 * @brief Dense batch×channels×height×width value, the only tensor shape the
 * network engine manipulates. Storage is planar row-major: index
 * ((n*C + c)*H + y)*W + x.
 */
struct Tensor4 {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static Tensor4 zeros(int batch, int channels, int height, int width);

  std::size_t size() const { return values.size(); }
  bool same_shape(const Tensor4& other) const {
    return batch == other.batch && channels == other.channels && height == other.height &&
           width == other.width;
  }

  double& at(int n, int c, int y, int x) {
    return values[((static_cast<std::size_t>(n) * channels + c) * height + y) * width + x];
  }
  double at(int n, int c, int y, int x) const {
    return values[((static_cast<std::size_t>(n) * channels + c) * height + y) * width + x];
  }
};

/**
 * @brief One learnable tensor: a name, a shape, values, and a gradient
 * accumulator of the same size. Vector-shaped parameters (biases, norm gains)
 * use shape (1, C, 1, 1).
 */
struct Param {
  std::string name;
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
};

/**
 * @brief Owning, index-stable collection of parameters. Graph nodes refer to
 * parameters by index; the flat view concatenates every tensor in creation
 * order so one optimizer instance can drive the whole set.
 */
class ParamStore {
 public:
  /// Create a zero-initialized parameter; returns its index. Names must be
  /// unique (throws invalid_input on a duplicate).
  int add(const std::string& name, const std::array<int, 4>& shape);

  int count() const { return static_cast<int>(params_.size()); }
  Param& at(int index) { return params_[static_cast<std::size_t>(index)]; }
  const Param& at(int index) const { return params_[static_cast<std::size_t>(index)]; }
  /// Index of the parameter with this name; -1 when absent.
  int find(const std::string& name) const;

  std::size_t total_size() const;
  void zero_grads();

  /// Concatenated copies in creation order.
  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  /// Inverse of flat_values; throws invalid_input on a size mismatch.
  void set_flat_values(const std::vector<double>& flat);

 private:
  std::vector<Param> params_;
};

/// Identifies a node on a Tape.
using NodeId = int;

/**
 * @brief Reverse-mode graph over a fixed operation set: 3x3 and 1x1
 * convolution, group normalization, sigmoid/tanh/SiLU, nearest-neighbor 2x
 * resampling, channel concatenation, per-pixel softmax attention across the
 * batch axis, and elementwise addition. Anything else is rejected at graph
 * build time.
 *
 * Ops execute eagerly: each call computes the result immediately and records
 * what backward() needs. Parameters live in an external ParamStore (whose
 * lifetime must cover the tape's); backward() accumulates into Param::grad
 * without zeroing, so callers control accumulation across calls.
 */
class Tape {
 public:
  explicit Tape(ParamStore* params) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a constant (an image batch, a ray embedding, ...).
  NodeId input(Tensor4 value);

  /**
   * @brief 2D convolution, stride 1. The kernel size comes from the weight
   * parameter's shape (out_c, in_c, k, k): k = 3 pads by 1 (same size), k = 1
   * pads by 0. Any other k is an unsupported op. bias_param may be -1.
   */
  NodeId conv2d(NodeId x, int weight_param, int bias_param);

  /// Group normalization over (C/groups, H, W) per sample, eps 1e-5, with
  /// per-channel gain and shift parameters shaped (1, C, 1, 1).
  NodeId group_norm(NodeId x, int gain_param, int shift_param, int groups);

  NodeId silu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId tanh(NodeId x);

  /// Nearest-neighbor 2x downsample: keeps the top-left sample of each 2x2
  /// cell. Requires even height and width.
  NodeId down2(NodeId x);
  /// Nearest-neighbor 2x upsample: repeats each sample into a 2x2 cell.
  NodeId up2(NodeId x);

  /// Concatenate along channels; all other dims must match.
  NodeId concat(NodeId a, NodeId b);

  /**
   * @brief Per-pixel softmax attention across the batch axis: for each pixel,
   * each batch item attends over all batch items with scores q·k/sqrt(C).
   * Query/key/value must share one shape.
   */
  NodeId attention(NodeId q, NodeId k, NodeId v);

  NodeId add(NodeId a, NodeId b);

  /**
   * @brief Reverse sweep from `output`, whose gradient is seeded with `seed`
   * (same element count as its value). Gradients accumulate into every
   * upstream node's slot and into ParamStore::grad.
   */
  void backward(NodeId output, const std::vector<double>& seed);

  const Tensor4& value(NodeId id) const;
  /// Gradient accumulated by backward(); empty for nodes no sweep reached.
  const std::vector<double>& grad(NodeId id) const;

 private:
  enum class Op {
    input,
    conv2d,
    group_norm,
    silu,
    sigmoid,
    tanh,
    down2,
    up2,
    concat,
    attention,
    add,
  };

  struct Node {
    Op op;
    Tensor4 value;
    std::vector<double> grad;  // allocated lazily by backward()
    std::array<NodeId, 3> in{-1, -1, -1};
    int param_a = -1;  // conv weight / norm gain
    int param_b = -1;  // conv bias / norm shift
    int groups = 0;    // group_norm
    // group_norm saves per-(sample, group) statistics for the reverse pass.
    std::vector<double> saved_mean;
    std::vector<double> saved_inv_std;
  };

  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  NodeId push(Node n);
  std::vector<double>& grad_slot(NodeId id);

  void backward_conv2d(Node& n);
  void backward_group_norm(Node& n);
  void backward_attention(Node& n);

  ParamStore* params_;
  std::vector<Node> nodes_;
};

}  // namespace dgs
