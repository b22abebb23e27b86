// predictor.cpp
#include "dgs/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dgs/error.hpp"
#include "dgs/optim.hpp"
#include "dgs/raster.hpp"

namespace dgs {

namespace {

/// Normalization group count used by every encoder block.
constexpr int kGroups = 8;
constexpr char kBlobMagic[8] = {'D', 'G', 'S', 'P', 'A', 'R', 'M', '1'};

ImageBuffer rgb_slice(const ImageBuffer& rgba) {
  if (rgba.channels == 3) return rgba;
  ImageBuffer rgb = ImageBuffer::zeros(rgba.width, rgba.height, 3);
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x)
      for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = rgba.at(x, y, c);
  return rgb;
}

/// log2 of an exact power of two; -1 otherwise.
int exact_log2(int value) {
  if (value <= 0) return -1;
  int log = 0;
  while ((1 << log) < value) ++log;
  return (1 << log) == value ? log : -1;
}

void he_normal_init(Param& param, int fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : param.value) v = std_dev * rng.normal();
}

void scaled_init(Param& param, double std_dev, Rng& rng) {
  for (double& v : param.value) v = std_dev * rng.normal();
}

}  // namespace

void PredictorConfig::validate() const {
  require(depth >= 1, ErrorCode::config, "predictor depth must be at least 1");
  require(base_channels > 0 && base_channels % kGroups == 0, ErrorCode::config,
          "base_channels must be a positive multiple of " + std::to_string(kGroups));
  require(out_channels == SplatterMap::kChannels, ErrorCode::config,
          "out_channels must match the splatter-map layout");
  require(input_res >= (1 << depth) && input_res % (1 << depth) == 0, ErrorCode::config,
          "input_res must be a multiple of 2^depth");
  require(output_res >= 1 && output_res <= input_res, ErrorCode::config,
          "output_res must lie in [1, input_res]");
  require(input_res % output_res == 0, ErrorCode::config,
          "output_res must divide input_res");
  const int k = exact_log2(input_res / output_res);
  require(k >= 0 && k <= depth, ErrorCode::config,
          "input_res / output_res must be a power of two no larger than 2^depth");
}

Camera resized_camera(const Camera& cam, int width, int height) {
  require(width > 0 && height > 0, ErrorCode::invalid_input,
          "resized camera dimensions must be positive");
  Camera out = cam;
  const double sx = static_cast<double>(width) / cam.width;
  const double sy = static_cast<double>(height) / cam.height;
  out.width = width;
  out.height = height;
  out.fx = cam.fx * sx;
  out.fy = cam.fy * sy;
  out.cx = cam.cx * sx;
  out.cy = cam.cy * sy;
  return out;
}

ImageBuffer ray_embedding(const Camera& cam) {
  cam.validate();
  ImageBuffer out = ImageBuffer::zeros(cam.width, cam.height, 6);
  const Vec3 origin = cam.origin();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir = cam.pixel_ray(x + 0.5, y + 0.5).normalized();
      const Vec3 moment = origin.cross(dir);
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = dir(c);
        out.at(x, y, 3 + c) = moment(c);
      }
    }
  }
  return out;
}

Predictor::Predictor(const PredictorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  up_stages_ = cfg_.depth - exact_log2(cfg_.input_res / cfg_.output_res);
  Rng rng(seed);

  int in_c = kPredictorInputChannels;
  std::vector<int> enc_channels;
  for (int i = 0; i < cfg_.depth; ++i) {
    const int out_c = cfg_.base_channels << i;
    enc_channels.push_back(out_c);
    const std::string stage = "enc" + std::to_string(i);
    enc_w_.push_back(params_.add(stage + ".conv.weight", {out_c, in_c, 3, 3}));
    enc_b_.push_back(params_.add(stage + ".conv.bias", {1, out_c, 1, 1}));
    enc_gain_.push_back(params_.add(stage + ".norm.gain", {1, out_c, 1, 1}));
    enc_shift_.push_back(params_.add(stage + ".norm.shift", {1, out_c, 1, 1}));
    he_normal_init(params_.at(enc_w_.back()), in_c * 9, rng);
    std::fill(params_.at(enc_gain_.back()).value.begin(),
              params_.at(enc_gain_.back()).value.end(), 1.0);
    in_c = out_c;
  }

  const int bottleneck_c = enc_channels.back();
  if (cfg_.cross_view_attention) {
    attn_q_ = params_.add("attn.query.weight", {bottleneck_c, bottleneck_c, 1, 1});
    attn_k_ = params_.add("attn.key.weight", {bottleneck_c, bottleneck_c, 1, 1});
    attn_v_ = params_.add("attn.value.weight", {bottleneck_c, bottleneck_c, 1, 1});
    attn_out_ = params_.add("attn.out.weight", {bottleneck_c, bottleneck_c, 1, 1});
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(bottleneck_c));
    scaled_init(params_.at(attn_q_), std_dev, rng);
    scaled_init(params_.at(attn_k_), std_dev, rng);
    scaled_init(params_.at(attn_v_), std_dev, rng);
    // attn.out stays zero so attention starts as the identity (residual only).
  }

  in_c = bottleneck_c;
  for (int u = 0; u < up_stages_; ++u) {
    const int skip_index = cfg_.depth - 1 - u;
    const int skip_c = enc_channels[static_cast<std::size_t>(skip_index)];
    const int out_c = skip_index >= 1 ? enc_channels[static_cast<std::size_t>(skip_index) - 1]
                                      : cfg_.base_channels;
    const std::string stage = "dec" + std::to_string(u);
    dec_w_.push_back(params_.add(stage + ".conv.weight", {out_c, in_c + skip_c, 3, 3}));
    dec_b_.push_back(params_.add(stage + ".conv.bias", {1, out_c, 1, 1}));
    he_normal_init(params_.at(dec_w_.back()), (in_c + skip_c) * 9, rng);
    in_c = out_c;
  }

  head_w_ = params_.add("head.weight", {cfg_.out_channels, in_c, 1, 1});
  head_b_ = params_.add("head.bias", {1, cfg_.out_channels, 1, 1});
  // Zero head: constant initial maps. Scale and opacity biases start small
  // and translucent (see the class comment).
  Param& head_bias = params_.at(head_b_);
  for (int k = 0; k < 3; ++k)
    head_bias.value[static_cast<std::size_t>(SplatterMap::kLogScale + k)] = kHeadLogScaleBias;
  head_bias.value[static_cast<std::size_t>(SplatterMap::kOpacityLogit)] = kHeadOpacityBias;
}

NodeId Predictor::build_forward(Tape& tape, const std::vector<ImageBuffer>& views,
                                const std::vector<Camera>& cams) const {
  require(views.size() == kPredictorViews && cams.size() == kPredictorViews,
          ErrorCode::invalid_input,
          "predictor expects exactly " + std::to_string(kPredictorViews) + " views");
  const int R = cfg_.input_res;
  for (std::size_t v = 0; v < views.size(); ++v) {
    require(views[v].width == R && views[v].height == R && views[v].channels == 3,
            ErrorCode::invalid_input, "predictor views must be RGB at input_res");
    require(cams[v].width == R && cams[v].height == R, ErrorCode::invalid_input,
            "predictor cameras must match input_res");
  }

  Tensor4 in = Tensor4::zeros(kPredictorViews, kPredictorInputChannels, R, R);
  for (int v = 0; v < kPredictorViews; ++v) {
    const ImageBuffer rays = ray_embedding(cams[static_cast<std::size_t>(v)]);
    const ImageBuffer& img = views[static_cast<std::size_t>(v)];
    for (int y = 0; y < R; ++y) {
      for (int x = 0; x < R; ++x) {
        for (int c = 0; c < 3; ++c) in.at(v, c, y, x) = img.at(x, y, c);
        for (int c = 0; c < 6; ++c) in.at(v, 3 + c, y, x) = rays.at(x, y, c);
      }
    }
  }

  NodeId x = tape.input(std::move(in));
  std::vector<NodeId> skips;
  for (int i = 0; i < cfg_.depth; ++i) {
    x = tape.conv2d(x, enc_w_[static_cast<std::size_t>(i)], enc_b_[static_cast<std::size_t>(i)]);
    x = tape.group_norm(x, enc_gain_[static_cast<std::size_t>(i)],
                        enc_shift_[static_cast<std::size_t>(i)], kGroups);
    x = tape.silu(x);
    skips.push_back(x);
    x = tape.down2(x);
  }

  if (cfg_.cross_view_attention) {
    const NodeId q = tape.conv2d(x, attn_q_, -1);
    const NodeId k = tape.conv2d(x, attn_k_, -1);
    const NodeId v = tape.conv2d(x, attn_v_, -1);
    const NodeId mixed = tape.attention(q, k, v);
    x = tape.add(x, tape.conv2d(mixed, attn_out_, -1));
  }

  for (int u = 0; u < up_stages_; ++u) {
    x = tape.up2(x);
    x = tape.concat(x, skips[static_cast<std::size_t>(cfg_.depth - 1 - u)]);
    x = tape.conv2d(x, dec_w_[static_cast<std::size_t>(u)], dec_b_[static_cast<std::size_t>(u)]);
    x = tape.silu(x);
  }

  return tape.conv2d(x, head_w_, head_b_);
}

std::vector<SplatterMap> Predictor::slice_output(const Tensor4& output,
                                                 const std::vector<Camera>& cams) const {
  require(output.batch == kPredictorViews && output.channels == cfg_.out_channels &&
              output.height == cfg_.output_res && output.width == cfg_.output_res,
          ErrorCode::invalid_input, "output tensor does not match the predictor configuration");
  require(cams.size() == kPredictorViews, ErrorCode::invalid_input,
          "one camera per output view is required");
  std::vector<SplatterMap> maps;
  maps.reserve(kPredictorViews);
  for (int v = 0; v < kPredictorViews; ++v) {
    SplatterMap map;
    map.camera = resized_camera(cams[static_cast<std::size_t>(v)], cfg_.output_res,
                                cfg_.output_res);
    map.values = ImageBuffer::zeros(cfg_.output_res, cfg_.output_res, cfg_.out_channels);
    for (int c = 0; c < cfg_.out_channels; ++c)
      for (int y = 0; y < cfg_.output_res; ++y)
        for (int x = 0; x < cfg_.output_res; ++x)
          map.values.at(x, y, c) = output.at(v, c, y, x);
    maps.push_back(std::move(map));
  }
  return maps;
}

std::vector<SplatterMap> Predictor::forward(const std::vector<ImageBuffer>& views,
                                            const std::vector<Camera>& cams) const {
  // Inference-only tape: backward is never invoked, so the store is not
  // mutated despite the non-const handle the tape requires.
  Tape tape(const_cast<ParamStore*>(&params_));
  const NodeId out = build_forward(tape, views, cams);
  return slice_output(tape.value(out), cams);
}

void Predictor::save(const std::string& path) const {
  std::ofstream blob(path, std::ios::binary);
  require(blob.good(), ErrorCode::io, "cannot write checkpoint blob: " + path);
  blob.write(kBlobMagic, sizeof(kBlobMagic));

  std::ostringstream manifest;
  manifest << "dgs-checkpoint v1\n";
  manifest << "config input_res " << cfg_.input_res << "\n";
  manifest << "config output_res " << cfg_.output_res << "\n";
  manifest << "config base_channels " << cfg_.base_channels << "\n";
  manifest << "config depth " << cfg_.depth << "\n";
  manifest << "config cross_view_attention " << (cfg_.cross_view_attention ? 1 : 0) << "\n";
  manifest << "config out_channels " << cfg_.out_channels << "\n";
  manifest << "tensors " << params_.count() << "\n";

  std::size_t offset = 0;
  for (int i = 0; i < params_.count(); ++i) {
    const Param& p = params_.at(i);
    const std::size_t bytes = p.size() * sizeof(double);
    manifest << "tensor " << p.name << " " << p.shape[0] << "x" << p.shape[1] << "x"
             << p.shape[2] << "x" << p.shape[3] << " float64le " << offset << " " << bytes
             << "\n";
    blob.write(reinterpret_cast<const char*>(p.value.data()),
               static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  require(blob.good(), ErrorCode::io, "failed while writing checkpoint blob: " + path);
  blob.close();

  std::ofstream manifest_file(path + ".manifest");
  require(manifest_file.good(), ErrorCode::io, "cannot write checkpoint manifest: " + path);
  manifest_file << manifest.str();
  require(manifest_file.good(), ErrorCode::io,
          "failed while writing checkpoint manifest: " + path);
}

Predictor Predictor::load(const std::string& path) {
  std::ifstream manifest_file(path + ".manifest");
  require(manifest_file.good(), ErrorCode::io, "cannot read checkpoint manifest: " + path);
  std::string header;
  std::getline(manifest_file, header);
  require(header == "dgs-checkpoint v1", ErrorCode::io,
          "unrecognized checkpoint manifest header: " + header);

  PredictorConfig cfg;
  int tensor_count = -1;
  struct Entry {
    std::string name;
    std::array<int, 4> shape;
    std::size_t offset;
    std::size_t bytes;
  };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(manifest_file, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "config") {
      std::string key;
      long long value = 0;
      fields >> key >> value;
      require(!fields.fail(), ErrorCode::io, "malformed checkpoint config line: " + line);
      if (key == "input_res") cfg.input_res = static_cast<int>(value);
      else if (key == "output_res") cfg.output_res = static_cast<int>(value);
      else if (key == "base_channels") cfg.base_channels = static_cast<int>(value);
      else if (key == "depth") cfg.depth = static_cast<int>(value);
      else if (key == "cross_view_attention") cfg.cross_view_attention = value != 0;
      else if (key == "out_channels") cfg.out_channels = static_cast<int>(value);
      else require(false, ErrorCode::io, "unknown checkpoint config key: " + key);
    } else if (kind == "tensors") {
      fields >> tensor_count;
      require(!fields.fail(), ErrorCode::io, "malformed checkpoint tensor count: " + line);
    } else if (kind == "tensor") {
      Entry e;
      std::string shape_text, dtype;
      fields >> e.name >> shape_text >> dtype >> e.offset >> e.bytes;
      require(!fields.fail(), ErrorCode::io, "malformed checkpoint tensor line: " + line);
      require(dtype == "float64le", ErrorCode::io,
              "unsupported checkpoint dtype: " + dtype);
      std::replace(shape_text.begin(), shape_text.end(), 'x', ' ');
      std::istringstream dims(shape_text);
      dims >> e.shape[0] >> e.shape[1] >> e.shape[2] >> e.shape[3];
      require(!dims.fail(), ErrorCode::io, "malformed checkpoint tensor shape: " + line);
      entries.push_back(std::move(e));
    } else {
      require(false, ErrorCode::io, "unrecognized checkpoint manifest line: " + line);
    }
  }
  require(tensor_count == static_cast<int>(entries.size()), ErrorCode::io,
          "checkpoint manifest tensor count disagrees with its entries");

  Predictor predictor(cfg);
  require(predictor.params_.count() == tensor_count, ErrorCode::io,
          "checkpoint holds a different parameter set than this configuration builds");

  std::ifstream blob(path, std::ios::binary);
  require(blob.good(), ErrorCode::io, "cannot read checkpoint blob: " + path);
  char magic[sizeof(kBlobMagic)];
  blob.read(magic, sizeof(magic));
  require(blob.good() && std::memcmp(magic, kBlobMagic, sizeof(magic)) == 0, ErrorCode::io,
          "checkpoint blob has the wrong magic bytes: " + path);

  for (const Entry& e : entries) {
    const int index = predictor.params_.find(e.name);
    require(index >= 0, ErrorCode::io, "checkpoint names an unknown parameter: " + e.name);
    Param& p = predictor.params_.at(index);
    require(p.shape == e.shape && e.bytes == p.size() * sizeof(double), ErrorCode::io,
            "checkpoint shape mismatch for parameter: " + e.name);
    blob.seekg(static_cast<std::streamoff>(sizeof(kBlobMagic) + e.offset));
    blob.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(e.bytes));
    require(blob.good(), ErrorCode::io, "checkpoint blob truncated at parameter: " + e.name);
  }
  return predictor;
}

double sample_elevation_deg(Rng& rng) { return rng.uniform(-30.0, 30.0); }

std::vector<TrainSample> orbit_dataset(const SceneSpec& spec, const RigSpec& rig, int samples,
                                       std::uint64_t seed) {
  require(samples >= 1, ErrorCode::invalid_input, "dataset needs at least one sample");
  const Scene scene = generate(spec, rig);
  Rng rng(seed);
  std::vector<TrainSample> dataset;
  dataset.reserve(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    const int t = spec.frame_count == 1 ? 1 : 1 + rng.uniform_int(spec.frame_count);
    const double elevation_rad = sample_elevation_deg(rng) * M_PI / 180.0;
    const GaussianFrame& frame = scene.sequence.frames[static_cast<std::size_t>(t - 1)];
    TrainSample sample;
    for (int v = 0; v < kPredictorViews; ++v) {
      const Camera cam =
          Camera::orbit(v * M_PI / 2.0, elevation_rad, rig.radius, rig.width, rig.height,
                        rig.fov_y, rig.near, rig.far);
      sample.cams.push_back(cam);
      sample.views.push_back(rgb_slice(render(frame, cam)));
    }
    for (const Camera& cam : scene.cameras) {
      sample.target_cams.push_back(cam);
      sample.targets.push_back(rgb_slice(render(frame, cam)));
    }
    dataset.push_back(std::move(sample));
  }
  return dataset;
}

TrainReport train(Predictor& predictor, const std::vector<TrainSample>& dataset,
                  const FitConfig& cfg) {
  cfg.validate();
  require(!dataset.empty(), ErrorCode::invalid_input, "training dataset is empty");
  for (const TrainSample& sample : dataset) {
    require(sample.views.size() == kPredictorViews && sample.cams.size() == kPredictorViews,
            ErrorCode::invalid_input, "each sample needs four input views with cameras");
    require(sample.targets.size() >= 4 && sample.targets.size() == sample.target_cams.size(),
            ErrorCode::invalid_input,
            "each sample needs at least four supervision renders with cameras");
  }

  TrainReport report;
  if (cfg.steps == 0) return report;

  ParamStore& params = predictor.params();
  // Decoupled decay applies to convolution weights only; biases and
  // normalization gains/shifts are exempt.
  std::vector<std::uint8_t> decay_mask;
  decay_mask.reserve(params.total_size());
  for (int i = 0; i < params.count(); ++i) {
    const Param& p = params.at(i);
    const bool is_weight =
        p.name.size() >= 7 && p.name.compare(p.name.size() - 7, 7, ".weight") == 0;
    decay_mask.insert(decay_mask.end(), p.size(), is_weight ? 1 : 0);
  }

  AdamW optimizer(params.total_size(), cfg.beta1, cfg.beta2);
  DivergenceWatch watch;
  Rng rng(cfg.seed);
  const RenderOptions render_options;

  for (int s = 0; s < cfg.steps; ++s) {
    const std::size_t pick =
        dataset.size() == 1 ? 0
                            : static_cast<std::size_t>(
                                  rng.uniform_int(static_cast<int>(dataset.size())));
    const TrainSample& sample = dataset[pick];

    Tape tape(&params);
    const NodeId out = predictor.build_forward(tape, sample.views, sample.cams);
    const std::vector<SplatterMap> maps = predictor.slice_output(tape.value(out), sample.cams);
    const GaussianFrame frame = decode_union(maps);

    const double view_scale = 1.0 / static_cast<double>(sample.targets.size());
    FrameGrads frame_grads = zero_grads(frame);
    double step_loss = 0.0;
    for (std::size_t v = 0; v < sample.targets.size(); ++v) {
      const ImageBuffer& target = sample.targets[v];
      ImageBuffer rendered = render(frame, sample.target_cams[v], render_options);
      if (target.channels == 3) rendered = rgb_slice(rendered);
      LossGrad lg = loss(rendered, target, cfg);
      step_loss += lg.value * view_scale;
      for (double& g : lg.d_rendered.data) g *= view_scale;
      const FrameGrads view_grads =
          render_backward(frame, sample.target_cams[v], lg.d_rendered, render_options);
      for (std::size_t i = 0; i < frame_grads.size(); ++i) {
        frame_grads[i].position += view_grads[i].position;
        frame_grads[i].log_scale += view_grads[i].log_scale;
        frame_grads[i].rotation += view_grads[i].rotation;
        frame_grads[i].opacity_logit += view_grads[i].opacity_logit;
        for (std::size_t k = 0; k < frame_grads[i].sh.size(); ++k)
          frame_grads[i].sh[k] += view_grads[i].sh[k];
      }
    }

    // Pull the per-Gaussian gradients back through each view's decode and
    // seed the network output with them.
    const int res = predictor.config().output_res;
    const int out_channels = predictor.config().out_channels;
    const std::size_t per_view = static_cast<std::size_t>(res) * res;
    std::vector<double> seed(static_cast<std::size_t>(kPredictorViews) * out_channels *
                                 per_view,
                             0.0);
    for (int v = 0; v < kPredictorViews; ++v) {
      const FrameGrads view_slice(
          frame_grads.begin() + static_cast<std::ptrdiff_t>(v * per_view),
          frame_grads.begin() + static_cast<std::ptrdiff_t>((v + 1) * per_view));
      const ImageBuffer d_map =
          decode_backward(maps[static_cast<std::size_t>(v)], view_slice);
      for (int c = 0; c < out_channels; ++c)
        for (int y = 0; y < res; ++y)
          for (int x = 0; x < res; ++x)
            seed[((static_cast<std::size_t>(v) * out_channels + c) * res + y) * res + x] =
                d_map.at(x, y, c);
    }

    params.zero_grads();
    tape.backward(out, seed);

    std::vector<double> grads = params.flat_grads();
    for (double g : grads) {
      require(std::isfinite(g), ErrorCode::divergence,
              "optimization diverged: non-finite gradient at step " + std::to_string(s));
    }
    clip_global_norm(grads, cfg.grad_clip_norm);
    std::vector<double> values = params.flat_values();
    optimizer.update(values, grads, cosine_lr(cfg.lr, s, cfg.steps), cfg.weight_decay,
                     &decay_mask);
    params.set_flat_values(values);

    report.loss.push_back(step_loss);
    watch.record(step_loss, s);
  }
  return report;
}

}  // namespace dgs
