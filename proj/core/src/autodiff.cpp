// autodiff.cpp
#include "dgs/autodiff.hpp"

#include <cmath>
#include <cstddef>

#include "dgs/error.hpp"

namespace dgs {

namespace {

constexpr double kNormEps = 1e-5;

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor4 Tensor4::zeros(int batch, int channels, int height, int width) {
  require(batch > 0 && channels > 0 && height > 0 && width > 0, ErrorCode::invalid_input,
          "tensor dimensions must be positive");
  Tensor4 t;
  t.batch = batch;
  t.channels = channels;
  t.height = height;
  t.width = width;
  t.values.assign(static_cast<std::size_t>(batch) * channels * height * width, 0.0);
  return t;
}

int ParamStore::add(const std::string& name, const std::array<int, 4>& shape) {
  require(find(name) < 0, ErrorCode::invalid_input, "duplicate parameter name: " + name);
  std::size_t size = 1;
  for (int d : shape) {
    require(d > 0, ErrorCode::invalid_input, "parameter dimensions must be positive: " + name);
    size *= static_cast<std::size_t>(d);
  }
  Param p;
  p.name = name;
  p.shape = shape;
  p.value.assign(size, 0.0);
  p.grad.assign(size, 0.0);
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t ParamStore::total_size() const {
  std::size_t total = 0;
  for (const Param& p : params_) total += p.size();
  return total;
}

void ParamStore::zero_grads() {
  for (Param& p : params_) p.grad.assign(p.grad.size(), 0.0);
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const Param& p : params_) flat.insert(flat.end(), p.value.begin(), p.value.end());
  return flat;
}

std::vector<double> ParamStore::flat_grads() const {
  std::vector<double> flat;
  flat.reserve(total_size());
  for (const Param& p : params_) flat.insert(flat.end(), p.grad.begin(), p.grad.end());
  return flat;
}

void ParamStore::set_flat_values(const std::vector<double>& flat) {
  require(flat.size() == total_size(), ErrorCode::invalid_input,
          "flat parameter vector has the wrong size");
  std::size_t offset = 0;
  for (Param& p : params_) {
    for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = flat[offset + i];
    offset += p.size();
  }
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_slot(NodeId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

const Tensor4& Tape::value(NodeId id) const {
  require(id >= 0 && id < static_cast<NodeId>(nodes_.size()), ErrorCode::invalid_input,
          "node id out of range");
  return node(id).value;
}

const std::vector<double>& Tape::grad(NodeId id) const {
  require(id >= 0 && id < static_cast<NodeId>(nodes_.size()), ErrorCode::invalid_input,
          "node id out of range");
  return node(id).grad;
}

NodeId Tape::input(Tensor4 value) {
  require(!value.values.empty(), ErrorCode::invalid_input, "input tensor is empty");
  Node n;
  n.op = Op::input;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId x, int weight_param, int bias_param) {
  const Tensor4& in = value(x);
  const Param& w = params_->at(weight_param);
  const int out_c = w.shape[0];
  const int in_c = w.shape[1];
  const int k = w.shape[2];
  require(w.shape[3] == k, ErrorCode::invalid_input, "convolution kernels must be square");
  require(k == 1 || k == 3, ErrorCode::invalid_input,
          "unsupported op: conv2d kernel size " + std::to_string(k) + " (only 1 and 3)");
  require(in.channels == in_c, ErrorCode::invalid_input,
          "conv2d input channel mismatch: " + w.name);
  const Param* bias = bias_param >= 0 ? &params_->at(bias_param) : nullptr;
  if (bias != nullptr) {
    require(bias->size() == static_cast<std::size_t>(out_c), ErrorCode::invalid_input,
            "conv2d bias size mismatch: " + bias->name);
  }

  const int pad = k == 3 ? 1 : 0;
  const int H = in.height, W = in.width;
  Tensor4 out = Tensor4::zeros(in.batch, out_c, H, W);
  for (int n = 0; n < in.batch; ++n) {
    for (int oc = 0; oc < out_c; ++oc) {
      const double b = bias != nullptr ? bias->value[static_cast<std::size_t>(oc)] : 0.0;
      for (int y = 0; y < H; ++y) {
        for (int xo = 0; xo < W; ++xo) {
          double acc = b;
          for (int ic = 0; ic < in_c; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = xo + kx - pad;
                if (ix < 0 || ix >= W) continue;
                acc += in.at(n, ic, iy, ix) *
                       w.value[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
              }
            }
          }
          out.at(n, oc, y, xo) = acc;
        }
      }
    }
  }

  Node nd;
  nd.op = Op::conv2d;
  nd.value = std::move(out);
  nd.in[0] = x;
  nd.param_a = weight_param;
  nd.param_b = bias_param;
  return push(std::move(nd));
}

void Tape::backward_conv2d(Node& n) {
  const Tensor4& in = node(n.in[0]).value;
  Param& w = params_->at(n.param_a);
  const int out_c = w.shape[0];
  const int in_c = w.shape[1];
  const int k = w.shape[2];
  const int pad = k == 3 ? 1 : 0;
  const int H = in.height, W = in.width;
  std::vector<double>& din = grad_slot(n.in[0]);
  for (int nn = 0; nn < in.batch; ++nn) {
    for (int oc = 0; oc < out_c; ++oc) {
      for (int y = 0; y < H; ++y) {
        for (int xo = 0; xo < W; ++xo) {
          const double g =
              n.grad[((static_cast<std::size_t>(nn) * out_c + oc) * H + y) * W + xo];
          if (g == 0.0) continue;
          for (int ic = 0; ic < in_c; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = xo + kx - pad;
                if (ix < 0 || ix >= W) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx;
                din[((static_cast<std::size_t>(nn) * in_c + ic) * H + iy) * W + ix] +=
                    g * w.value[wi];
                w.grad[wi] += g * in.at(nn, ic, iy, ix);
              }
            }
          }
        }
      }
    }
  }
  if (n.param_b >= 0) {
    Param& bias = params_->at(n.param_b);
    for (int nn = 0; nn < in.batch; ++nn) {
      for (int oc = 0; oc < out_c; ++oc) {
        double sum = 0.0;
        const std::size_t base = (static_cast<std::size_t>(nn) * out_c + oc) * H * W;
        for (int i = 0; i < H * W; ++i) sum += n.grad[base + i];
        bias.grad[static_cast<std::size_t>(oc)] += sum;
      }
    }
  }
}

NodeId Tape::group_norm(NodeId x, int gain_param, int shift_param, int groups) {
  const Tensor4& in = value(x);
  require(groups > 0 && in.channels % groups == 0, ErrorCode::invalid_input,
          "group count must divide the channel count");
  const Param& gain = params_->at(gain_param);
  const Param& shift = params_->at(shift_param);
  require(gain.size() == static_cast<std::size_t>(in.channels) && gain.size() == shift.size(),
          ErrorCode::invalid_input, "group norm gain/shift must have one entry per channel");

  const int cg = in.channels / groups;
  const std::size_t group_size = static_cast<std::size_t>(cg) * in.height * in.width;
  Tensor4 out = Tensor4::zeros(in.batch, in.channels, in.height, in.width);
  std::vector<double> means(static_cast<std::size_t>(in.batch) * groups);
  std::vector<double> inv_stds(means.size());
  for (int n = 0; n < in.batch; ++n) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base =
          (static_cast<std::size_t>(n) * in.channels + static_cast<std::size_t>(g) * cg) *
          in.height * in.width;
      double mean = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) mean += in.values[base + i];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t i = 0; i < group_size; ++i) {
        const double d = in.values[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const double inv_std = 1.0 / std::sqrt(var + kNormEps);
      means[static_cast<std::size_t>(n) * groups + g] = mean;
      inv_stds[static_cast<std::size_t>(n) * groups + g] = inv_std;
      for (int c = 0; c < cg; ++c) {
        const int channel = g * cg + c;
        const double a = gain.value[static_cast<std::size_t>(channel)];
        const double b = shift.value[static_cast<std::size_t>(channel)];
        const std::size_t cbase = base + static_cast<std::size_t>(c) * in.height * in.width;
        for (int i = 0; i < in.height * in.width; ++i) {
          out.values[cbase + i] = a * (in.values[cbase + i] - mean) * inv_std + b;
        }
      }
    }
  }

  Node nd;
  nd.op = Op::group_norm;
  nd.value = std::move(out);
  nd.in[0] = x;
  nd.param_a = gain_param;
  nd.param_b = shift_param;
  nd.groups = groups;
  nd.saved_mean = std::move(means);
  nd.saved_inv_std = std::move(inv_stds);
  return push(std::move(nd));
}

void Tape::backward_group_norm(Node& n) {
  const Tensor4& in = node(n.in[0]).value;
  Param& gain = params_->at(n.param_a);
  Param& shift = params_->at(n.param_b);
  const int groups = n.groups;
  const int cg = in.channels / groups;
  const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;
  const std::size_t group_size = static_cast<std::size_t>(cg) * plane;
  std::vector<double>& din = grad_slot(n.in[0]);

  for (int nn = 0; nn < in.batch; ++nn) {
    for (int g = 0; g < groups; ++g) {
      const double mean = n.saved_mean[static_cast<std::size_t>(nn) * groups + g];
      const double inv_std = n.saved_inv_std[static_cast<std::size_t>(nn) * groups + g];
      const std::size_t base =
          (static_cast<std::size_t>(nn) * in.channels + static_cast<std::size_t>(g) * cg) * plane;
      // dxhat = dy * gain; reduce its mean and its correlation with xhat.
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (int c = 0; c < cg; ++c) {
        const int channel = g * cg + c;
        const double a = gain.value[static_cast<std::size_t>(channel)];
        const std::size_t cbase = base + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (in.values[cbase + i] - mean) * inv_std;
          const double dy = n.grad[cbase + i];
          sum_dxhat += dy * a;
          sum_dxhat_xhat += dy * a * xhat;
          gain.grad[static_cast<std::size_t>(channel)] += dy * xhat;
          shift.grad[static_cast<std::size_t>(channel)] += dy;
        }
      }
      const double m = static_cast<double>(group_size);
      for (int c = 0; c < cg; ++c) {
        const int channel = g * cg + c;
        const double a = gain.value[static_cast<std::size_t>(channel)];
        const std::size_t cbase = base + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (in.values[cbase + i] - mean) * inv_std;
          const double dxhat = n.grad[cbase + i] * a;
          din[cbase + i] +=
              inv_std * (dxhat - sum_dxhat / m - xhat * (sum_dxhat_xhat / m));
        }
      }
    }
  }
}

NodeId Tape::silu(NodeId x) {
  const Tensor4& in = value(x);
  Tensor4 out = in;
  for (double& v : out.values) v = v * sigmoid_scalar(v);
  Node nd;
  nd.op = Op::silu;
  nd.value = std::move(out);
  nd.in[0] = x;
  return push(std::move(nd));
}

NodeId Tape::sigmoid(NodeId x) {
  const Tensor4& in = value(x);
  Tensor4 out = in;
  for (double& v : out.values) v = sigmoid_scalar(v);
  Node nd;
  nd.op = Op::sigmoid;
  nd.value = std::move(out);
  nd.in[0] = x;
  return push(std::move(nd));
}

NodeId Tape::tanh(NodeId x) {
  const Tensor4& in = value(x);
  Tensor4 out = in;
  for (double& v : out.values) v = std::tanh(v);
  Node nd;
  nd.op = Op::tanh;
  nd.value = std::move(out);
  nd.in[0] = x;
  return push(std::move(nd));
}

NodeId Tape::down2(NodeId x) {
  const Tensor4& in = value(x);
  require(in.height % 2 == 0 && in.width % 2 == 0, ErrorCode::invalid_input,
          "down2 requires even height and width");
  Tensor4 out = Tensor4::zeros(in.batch, in.channels, in.height / 2, in.width / 2);
  for (int n = 0; n < in.batch; ++n)
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int xo = 0; xo < out.width; ++xo)
          out.at(n, c, y, xo) = in.at(n, c, 2 * y, 2 * xo);
  Node nd;
  nd.op = Op::down2;
  nd.value = std::move(out);
  nd.in[0] = x;
  return push(std::move(nd));
}

NodeId Tape::up2(NodeId x) {
  const Tensor4& in = value(x);
  Tensor4 out = Tensor4::zeros(in.batch, in.channels, in.height * 2, in.width * 2);
  for (int n = 0; n < in.batch; ++n)
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int xo = 0; xo < out.width; ++xo)
          out.at(n, c, y, xo) = in.at(n, c, y / 2, xo / 2);
  Node nd;
  nd.op = Op::up2;
  nd.value = std::move(out);
  nd.in[0] = x;
  return push(std::move(nd));
}

NodeId Tape::concat(NodeId a, NodeId b) {
  const Tensor4& ta = value(a);
  const Tensor4& tb = value(b);
  require(ta.batch == tb.batch && ta.height == tb.height && ta.width == tb.width,
          ErrorCode::invalid_input, "concat inputs must match outside the channel axis");
  Tensor4 out = Tensor4::zeros(ta.batch, ta.channels + tb.channels, ta.height, ta.width);
  for (int n = 0; n < ta.batch; ++n) {
    for (int c = 0; c < ta.channels; ++c)
      for (int y = 0; y < ta.height; ++y)
        for (int xo = 0; xo < ta.width; ++xo) out.at(n, c, y, xo) = ta.at(n, c, y, xo);
    for (int c = 0; c < tb.channels; ++c)
      for (int y = 0; y < tb.height; ++y)
        for (int xo = 0; xo < tb.width; ++xo)
          out.at(n, ta.channels + c, y, xo) = tb.at(n, c, y, xo);
  }
  Node nd;
  nd.op = Op::concat;
  nd.value = std::move(out);
  nd.in[0] = a;
  nd.in[1] = b;
  return push(std::move(nd));
}

NodeId Tape::attention(NodeId q, NodeId k, NodeId v) {
  const Tensor4& tq = value(q);
  const Tensor4& tk = value(k);
  const Tensor4& tv = value(v);
  require(tq.same_shape(tk) && tq.same_shape(tv), ErrorCode::invalid_input,
          "attention query/key/value must share one shape");
  const int B = tq.batch, C = tq.channels, H = tq.height, W = tq.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  Tensor4 out = Tensor4::zeros(B, C, H, W);
  std::vector<double> scores(static_cast<std::size_t>(B));
  for (int y = 0; y < H; ++y) {
    for (int xo = 0; xo < W; ++xo) {
      for (int i = 0; i < B; ++i) {
        double max_score = -1e300;
        for (int j = 0; j < B; ++j) {
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += tq.at(i, c, y, xo) * tk.at(j, c, y, xo);
          scores[static_cast<std::size_t>(j)] = s * scale;
          max_score = std::max(max_score, scores[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < B; ++j) {
          scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - max_score);
          denom += scores[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < B; ++j) {
          const double w = scores[static_cast<std::size_t>(j)] / denom;
          for (int c = 0; c < C; ++c) out.at(i, c, y, xo) += w * tv.at(j, c, y, xo);
        }
      }
    }
  }
  Node nd;
  nd.op = Op::attention;
  nd.value = std::move(out);
  nd.in[0] = q;
  nd.in[1] = k;
  nd.in[2] = v;
  return push(std::move(nd));
}

void Tape::backward_attention(Node& n) {
  const Tensor4& tq = node(n.in[0]).value;
  const Tensor4& tk = node(n.in[1]).value;
  const Tensor4& tv = node(n.in[2]).value;
  const int B = tq.batch, C = tq.channels, H = tq.height, W = tq.width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  std::vector<double>& dq = grad_slot(n.in[0]);
  std::vector<double>& dk = grad_slot(n.in[1]);
  std::vector<double>& dv = grad_slot(n.in[2]);
  const auto idx = [C, H, W](int nn, int c, int y, int x) {
    return ((static_cast<std::size_t>(nn) * C + c) * H + y) * W + x;
  };

  std::vector<double> w(static_cast<std::size_t>(B));
  std::vector<double> dout_dot_v(static_cast<std::size_t>(B));
  for (int y = 0; y < H; ++y) {
    for (int xo = 0; xo < W; ++xo) {
      for (int i = 0; i < B; ++i) {
        // Recompute this query's softmax weights (B is tiny).
        double max_score = -1e300;
        for (int j = 0; j < B; ++j) {
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += tq.at(i, c, y, xo) * tk.at(j, c, y, xo);
          w[static_cast<std::size_t>(j)] = s * scale;
          max_score = std::max(max_score, w[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < B; ++j) {
          w[static_cast<std::size_t>(j)] = std::exp(w[static_cast<std::size_t>(j)] - max_score);
          denom += w[static_cast<std::size_t>(j)];
        }
        double expected = 0.0;  // sum_j w_j (dout_i . v_j)
        for (int j = 0; j < B; ++j) {
          w[static_cast<std::size_t>(j)] /= denom;
          double dot = 0.0;
          for (int c = 0; c < C; ++c) dot += n.grad[idx(i, c, y, xo)] * tv.at(j, c, y, xo);
          dout_dot_v[static_cast<std::size_t>(j)] = dot;
          expected += w[static_cast<std::size_t>(j)] * dot;
        }
        for (int j = 0; j < B; ++j) {
          const double wj = w[static_cast<std::size_t>(j)];
          // Value path.
          for (int c = 0; c < C; ++c) dv[idx(j, c, y, xo)] += wj * n.grad[idx(i, c, y, xo)];
          // Score path through the softmax Jacobian.
          const double ds = wj * (dout_dot_v[static_cast<std::size_t>(j)] - expected) * scale;
          for (int c = 0; c < C; ++c) {
            dq[idx(i, c, y, xo)] += ds * tk.at(j, c, y, xo);
            dk[idx(j, c, y, xo)] += ds * tq.at(i, c, y, xo);
          }
        }
      }
    }
  }
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor4& ta = value(a);
  const Tensor4& tb = value(b);
  require(ta.same_shape(tb), ErrorCode::invalid_input, "add inputs must share one shape");
  Tensor4 out = ta;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += tb.values[i];
  Node nd;
  nd.op = Op::add;
  nd.value = std::move(out);
  nd.in[0] = a;
  nd.in[1] = b;
  return push(std::move(nd));
}

void Tape::backward(NodeId output, const std::vector<double>& seed) {
  require(output >= 0 && output < static_cast<NodeId>(nodes_.size()), ErrorCode::invalid_input,
          "node id out of range");
  require(seed.size() == node(output).value.size(), ErrorCode::invalid_input,
          "gradient seed size does not match the output tensor");
  {
    std::vector<double>& g = grad_slot(output);
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  }

  for (NodeId id = output; id >= 0; --id) {
    Node& n = node(id);
    if (n.grad.empty()) continue;  // not reached by any gradient path
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv2d:
        backward_conv2d(n);
        break;
      case Op::group_norm:
        backward_group_norm(n);
        break;
      case Op::silu: {
        const Tensor4& in = node(n.in[0]).value;
        std::vector<double>& din = grad_slot(n.in[0]);
        for (std::size_t i = 0; i < in.values.size(); ++i) {
          const double s = sigmoid_scalar(in.values[i]);
          din[i] += n.grad[i] * s * (1.0 + in.values[i] * (1.0 - s));
        }
        break;
      }
      case Op::sigmoid: {
        std::vector<double>& din = grad_slot(n.in[0]);
        for (std::size_t i = 0; i < n.value.values.size(); ++i) {
          const double s = n.value.values[i];
          din[i] += n.grad[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::tanh: {
        std::vector<double>& din = grad_slot(n.in[0]);
        for (std::size_t i = 0; i < n.value.values.size(); ++i) {
          const double t = n.value.values[i];
          din[i] += n.grad[i] * (1.0 - t * t);
        }
        break;
      }
      case Op::down2: {
        const Tensor4& in = node(n.in[0]).value;
        std::vector<double>& din = grad_slot(n.in[0]);
        const Tensor4& out = n.value;
        for (int nn = 0; nn < out.batch; ++nn)
          for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < out.height; ++y)
              for (int xo = 0; xo < out.width; ++xo)
                din[((static_cast<std::size_t>(nn) * in.channels + c) * in.height + 2 * y) *
                        in.width +
                    2 * xo] +=
                    n.grad[((static_cast<std::size_t>(nn) * out.channels + c) * out.height + y) *
                               out.width +
                           xo];
        break;
      }
      case Op::up2: {
        const Tensor4& in = node(n.in[0]).value;
        std::vector<double>& din = grad_slot(n.in[0]);
        const Tensor4& out = n.value;
        for (int nn = 0; nn < out.batch; ++nn)
          for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < out.height; ++y)
              for (int xo = 0; xo < out.width; ++xo)
                din[((static_cast<std::size_t>(nn) * in.channels + c) * in.height + y / 2) *
                        in.width +
                    xo / 2] +=
                    n.grad[((static_cast<std::size_t>(nn) * out.channels + c) * out.height + y) *
                               out.width +
                           xo];
        break;
      }
      case Op::concat: {
        const Tensor4& ta = node(n.in[0]).value;
        const Tensor4& tb = node(n.in[1]).value;
        std::vector<double>& da = grad_slot(n.in[0]);
        std::vector<double>& db = grad_slot(n.in[1]);
        const std::size_t plane = static_cast<std::size_t>(ta.height) * ta.width;
        for (int nn = 0; nn < ta.batch; ++nn) {
          const std::size_t out_base =
              static_cast<std::size_t>(nn) * (ta.channels + tb.channels) * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(ta.channels) * plane; ++i)
            da[static_cast<std::size_t>(nn) * ta.channels * plane + i] += n.grad[out_base + i];
          for (std::size_t i = 0; i < static_cast<std::size_t>(tb.channels) * plane; ++i)
            db[static_cast<std::size_t>(nn) * tb.channels * plane + i] +=
                n.grad[out_base + static_cast<std::size_t>(ta.channels) * plane + i];
        }
        break;
      }
      case Op::attention:
        backward_attention(n);
        break;
      case Op::add: {
        std::vector<double>& da = grad_slot(n.in[0]);
        std::vector<double>& db = grad_slot(n.in[1]);
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          da[i] += n.grad[i];
          db[i] += n.grad[i];
        }
        break;
      }
      default:
        require(false, ErrorCode::invalid_input, "unsupported op in backward sweep");
    }
  }
}

}  // namespace dgs
