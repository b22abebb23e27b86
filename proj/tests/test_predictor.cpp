// test_predictor.cpp
// The four-view splat predictor: construction, forward semantics, checkpoint
// format, dataset synthesis, training, and the gradient chain through
// splat decoding and rendering.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dgs/autodiff.hpp"
#include "dgs/error.hpp"
#include "dgs/fit.hpp"
#include "dgs/predictor.hpp"
#include "dgs/raster.hpp"
#include "dgs/rng.hpp"
#include "dgs/scenes.hpp"
#include "dgs/splatter.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

using namespace dgs;

namespace {

PredictorConfig tiny_config() {
  PredictorConfig cfg;
  cfg.input_res = 16;
  cfg.output_res = 8;
  cfg.base_channels = 8;
  cfg.depth = 2;
  return cfg;
}

RigSpec rig_for(int res) {
  RigSpec rig;
  rig.width = res;
  rig.height = res;
  return rig;
}

std::vector<ImageBuffer> random_views(Rng& rng, int count, int res) {
  std::vector<ImageBuffer> views;
  for (int v = 0; v < count; ++v) {
    ImageBuffer img = ImageBuffer::zeros(res, res, 3);
    for (double& value : img.data) value = rng.uniform(0.0, 1.0);
    views.push_back(std::move(img));
  }
  return views;
}

void perturb_param(Predictor& p, const std::string& name, Rng& rng, double scale) {
  const int index = p.params().find(name);
  REQUIRE(index >= 0);
  for (double& v : p.params().at(index).value) v = rng.normal() * scale;
}

ErrorCode thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::config;
}

}  // namespace

TEST_CASE("predictor config validation rejects malformed shapes") {
  const auto expect_config_error = [](PredictorConfig cfg) {
    CHECK_THROWS_AS(cfg.validate(), Error);
  };
  PredictorConfig ok;
  CHECK_NOTHROW(ok.validate());

  PredictorConfig cfg = tiny_config();
  cfg.depth = 0;
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.base_channels = 12;
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.out_channels = 13;
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.input_res = 20;  // not divisible by 2^depth
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.output_res = 12;  // does not divide the input resolution
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.output_res = 32;  // larger than the input
  expect_config_error(cfg);

  cfg = tiny_config();
  cfg.input_res = 32;
  cfg.output_res = 4;  // ratio 8 exceeds the 2^depth downsampling budget
  expect_config_error(cfg);
}

TEST_CASE("a fresh predictor emits one 14-channel half-resolution map per view") {
  const Predictor predictor{PredictorConfig{}};
  const std::vector<Camera> cams = orthogonal_rig(rig_for(64));
  Rng rng(42);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 64);

  const std::vector<SplatterMap> maps = predictor.forward(views, cams);
  REQUIRE(maps.size() == 4);
  for (std::size_t v = 0; v < maps.size(); ++v) {
    CHECK(maps[v].width() == 32);
    CHECK(maps[v].height() == 32);
    CHECK(maps[v].values.channels == SplatterMap::kChannels);
    CHECK(maps[v].camera.width == 32);
    CHECK(maps[v].camera.height == 32);
    // The map camera is the input camera rescaled to the output grid.
    CHECK(maps[v].camera.fx == doctest::Approx(cams[v].fx * 0.5));
    CHECK(maps[v].camera.cy == doctest::Approx(cams[v].cy * 0.5));
  }

  // The final layer starts with zero weights, so every map is constant per
  // channel no matter what the views contain, and identical across views.
  for (int c = 0; c < SplatterMap::kChannels; ++c) {
    const double reference = maps[0].values.at(0, 0, c);
    for (const SplatterMap& map : maps)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) CHECK(map.values.at(x, y, c) == reference);
  }
  CHECK(maps[0].values.at(0, 0, SplatterMap::kDepth) == 0.0);
  CHECK(maps[0].values.at(0, 0, SplatterMap::kLogScale) == Predictor::kHeadLogScaleBias);
  CHECK(maps[0].values.at(0, 0, SplatterMap::kOpacityLogit) == Predictor::kHeadOpacityBias);

  // Zero depth logits decode to Gaussians halfway between the clip planes.
  const GaussianFrame decoded = decode(maps[0]);
  REQUIRE(decoded.gaussians.size() == 32 * 32);
  const double mid = 0.5 * (maps[0].camera.near + maps[0].camera.far);
  for (const Gaussian& g : decoded.gaussians) {
    CHECK(maps[0].camera.to_camera(g.position).z() == doctest::Approx(mid).epsilon(1e-9));
    CHECK(g.opacity_logit == doctest::Approx(Predictor::kHeadOpacityBias));
    for (int i = 0; i < 3; ++i)
      CHECK(g.log_scale(i) == doctest::Approx(Predictor::kHeadLogScaleBias));
  }
}

TEST_CASE("predictor construction and forward are seed-deterministic") {
  const PredictorConfig cfg = tiny_config();
  const Predictor a(cfg, 7);
  const Predictor b(cfg, 7);
  const Predictor c(cfg, 8);
  CHECK(a.params().flat_values() == b.params().flat_values());
  CHECK(a.params().flat_values() != c.params().flat_values());

  const std::vector<Camera> cams = orthogonal_rig(rig_for(16));
  Rng rng(5);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 16);
  const std::vector<SplatterMap> first = a.forward(views, cams);
  const std::vector<SplatterMap> second = a.forward(views, cams);
  for (std::size_t v = 0; v < first.size(); ++v)
    CHECK(first[v].values.data == second[v].values.data);
}

TEST_CASE("forward validates view count, resolution, and channel count") {
  const Predictor predictor(tiny_config(), 3);
  const std::vector<Camera> cams = orthogonal_rig(rig_for(16));
  Rng rng(6);
  std::vector<ImageBuffer> views = random_views(rng, 4, 16);

  std::vector<ImageBuffer> three(views.begin(), views.begin() + 3);
  std::vector<Camera> three_cams(cams.begin(), cams.begin() + 3);
  CHECK(thrown_code([&] { predictor.forward(three, cams); }) == ErrorCode::invalid_input);
  CHECK(thrown_code([&] { predictor.forward(views, three_cams); }) == ErrorCode::invalid_input);

  std::vector<ImageBuffer> wrong_res = random_views(rng, 4, 8);
  CHECK(thrown_code([&] { predictor.forward(wrong_res, cams); }) == ErrorCode::invalid_input);

  std::vector<ImageBuffer> wrong_channels = views;
  wrong_channels[0] = ImageBuffer::zeros(16, 16, 4);
  CHECK(thrown_code([&] { predictor.forward(wrong_channels, cams); }) ==
        ErrorCode::invalid_input);

  std::vector<Camera> wrong_cam = cams;
  wrong_cam[1] = resized_camera(cams[1], 8, 8);
  CHECK(thrown_code([&] { predictor.forward(views, wrong_cam); }) == ErrorCode::invalid_input);
}

TEST_CASE("permuting the input views permutes the predicted maps") {
  Predictor predictor(tiny_config(), 11);
  Rng weight_rng(12);
  // Give the zero-initialized layers signal so the maps depend on the views.
  perturb_param(predictor, "head.weight", weight_rng, 0.05);
  perturb_param(predictor, "attn.out.weight", weight_rng, 0.1);

  const std::vector<Camera> cams = orthogonal_rig(rig_for(16));
  Rng rng(13);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 16);
  const std::vector<SplatterMap> base = predictor.forward(views, cams);

  const std::array<int, 4> perm{2, 0, 3, 1};
  std::vector<ImageBuffer> pviews;
  std::vector<Camera> pcams;
  for (int i : perm) {
    pviews.push_back(views[static_cast<std::size_t>(i)]);
    pcams.push_back(cams[static_cast<std::size_t>(i)]);
  }
  const std::vector<SplatterMap> permuted = predictor.forward(pviews, pcams);

  // Maps depend on the views at all (otherwise this test is vacuous).
  bool any_difference = false;
  for (std::size_t i = 0; i + 1 < base.size(); ++i)
    if (base[i].values.data != base[i + 1].values.data) any_difference = true;
  CHECK(any_difference);

  for (std::size_t i = 0; i < perm.size(); ++i) {
    const SplatterMap& expected = base[static_cast<std::size_t>(perm[i])];
    REQUIRE(permuted[i].values.data.size() == expected.values.data.size());
    double max_err = 0.0;
    for (std::size_t k = 0; k < expected.values.data.size(); ++k)
      max_err = std::max(max_err,
                         std::abs(permuted[i].values.data[k] - expected.values.data[k]));
    CHECK(max_err < 1e-9);
    CHECK(permuted[i].camera.translation == expected.camera.translation);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly and reject damaged files") {
  Predictor predictor(tiny_config(), 21);
  Rng weight_rng(22);
  perturb_param(predictor, "head.weight", weight_rng, 0.05);

  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "dgs_predictor_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  predictor.save(path);
  REQUIRE(std::filesystem::exists(path));
  REQUIRE(std::filesystem::exists(path + ".manifest"));

  const Predictor loaded = Predictor::load(path);
  CHECK(loaded.config().input_res == predictor.config().input_res);
  CHECK(loaded.config().output_res == predictor.config().output_res);
  CHECK(loaded.config().base_channels == predictor.config().base_channels);
  CHECK(loaded.config().depth == predictor.config().depth);
  CHECK(loaded.config().cross_view_attention == predictor.config().cross_view_attention);
  CHECK(loaded.params().flat_values() == predictor.params().flat_values());

  const std::vector<Camera> cams = orthogonal_rig(rig_for(16));
  Rng rng(23);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 16);
  const std::vector<SplatterMap> before = predictor.forward(views, cams);
  const std::vector<SplatterMap> after = loaded.forward(views, cams);
  for (std::size_t v = 0; v < before.size(); ++v)
    CHECK(before[v].values.data == after[v].values.data);

  SUBCASE("missing checkpoint") {
    CHECK(thrown_code([&] { Predictor::load((dir / "absent.ckpt").string()); }) ==
          ErrorCode::io);
  }
  SUBCASE("truncated weight blob") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string short_path = (dir / "short.ckpt").string();
    std::filesystem::copy_file(path + ".manifest", short_path + ".manifest",
                               std::filesystem::copy_options::overwrite_existing);
    std::ofstream out(short_path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK(thrown_code([&] { Predictor::load(short_path); }) == ErrorCode::io);
  }
  SUBCASE("corrupted magic") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    bytes[0] = static_cast<char>(bytes[0] ^ 0x5a);
    const std::string bad_path = (dir / "bad_magic.ckpt").string();
    std::filesystem::copy_file(path + ".manifest", bad_path + ".manifest",
                               std::filesystem::copy_options::overwrite_existing);
    std::ofstream out(bad_path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK(thrown_code([&] { Predictor::load(bad_path); }) == ErrorCode::io);
  }
  SUBCASE("garbage manifest") {
    const std::string bad_path = (dir / "bad_manifest.ckpt").string();
    std::filesystem::copy_file(path, bad_path,
                               std::filesystem::copy_options::overwrite_existing);
    std::ofstream manifest(bad_path + ".manifest");
    manifest << "not a checkpoint\n";
    manifest.close();
    CHECK(thrown_code([&] { Predictor::load(bad_path); }) == ErrorCode::io);
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("elevation sampling stays inside its band and is uniform across it") {
  Rng rng(31);
  constexpr int kDraws = 10000;
  constexpr int kBins = 20;
  std::array<int, kBins> histogram{};
  for (int i = 0; i < kDraws; ++i) {
    const double deg = sample_elevation_deg(rng);
    REQUIRE(deg >= -30.0);
    REQUIRE(deg <= 30.0);
    int bin = static_cast<int>((deg + 30.0) / 60.0 * kBins);
    if (bin == kBins) bin = kBins - 1;
    ++histogram[static_cast<std::size_t>(bin)];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int count : histogram) {
    const double d = count - expected;
    chi2 += d * d / expected;
  }
  // 1% critical value of chi-squared with 19 degrees of freedom.
  CHECK(chi2 < 36.1909);
}

TEST_CASE("orbit datasets are structurally sound and reproducible") {
  SceneSpec spec;
  spec.gaussian_count = 20;
  spec.frame_count = 2;
  spec.seed = 3;
  const RigSpec rig = rig_for(32);

  const std::vector<TrainSample> dataset = orbit_dataset(spec, rig, 3, 9);
  REQUIRE(dataset.size() == 3);
  for (const TrainSample& sample : dataset) {
    REQUIRE(sample.views.size() == 4);
    REQUIRE(sample.cams.size() == 4);
    REQUIRE(sample.targets.size() == 4);
    REQUIRE(sample.target_cams.size() == 4);
    for (const ImageBuffer& view : sample.views) {
      CHECK(view.width == 32);
      CHECK(view.height == 32);
      CHECK(view.channels == 3);
    }
    for (const Camera& cam : sample.cams) CHECK(cam.width == 32);
  }

  const std::vector<TrainSample> again = orbit_dataset(spec, rig, 3, 9);
  CHECK(again[0].views[0].data == dataset[0].views[0].data);
  CHECK(again[2].views[3].data == dataset[2].views[3].data);

  // Samples differ through their random elevations.
  CHECK(dataset[0].cams[0].translation != dataset[1].cams[0].translation);
}

TEST_CASE("training zero steps performs no update") {
  SceneSpec spec;
  spec.gaussian_count = 10;
  spec.frame_count = 1;
  const std::vector<TrainSample> dataset = orbit_dataset(spec, rig_for(16), 1, 4);

  Predictor predictor(tiny_config(), 17);
  const std::vector<double> before = predictor.params().flat_values();
  FitConfig cfg;
  cfg.steps = 0;
  const TrainReport report = train(predictor, dataset, cfg);
  CHECK(report.loss.empty());
  CHECK(predictor.params().flat_values() == before);
}

TEST_CASE("training rejects malformed datasets") {
  Predictor predictor(tiny_config(), 18);
  FitConfig cfg;
  cfg.steps = 1;
  CHECK(thrown_code([&] { train(predictor, {}, cfg); }) == ErrorCode::invalid_input);

  SceneSpec spec;
  spec.gaussian_count = 5;
  spec.frame_count = 1;
  std::vector<TrainSample> dataset = orbit_dataset(spec, rig_for(16), 1, 4);
  dataset[0].views.pop_back();
  CHECK(thrown_code([&] { train(predictor, dataset, cfg); }) == ErrorCode::invalid_input);

  dataset = orbit_dataset(spec, rig_for(16), 1, 4);
  dataset[0].target_cams.pop_back();
  CHECK(thrown_code([&] { train(predictor, dataset, cfg); }) == ErrorCode::invalid_input);
}

TEST_CASE("training a single sample steadily reduces the loss") {
  SceneSpec spec;
  spec.gaussian_count = 30;
  spec.frame_count = 1;
  spec.seed = 5;
  PredictorConfig net = tiny_config();
  net.input_res = 32;
  net.output_res = 16;
  const std::vector<TrainSample> dataset = orbit_dataset(spec, rig_for(32), 1, 11);

  Predictor predictor(net, 19);
  FitConfig cfg;
  cfg.steps = 120;
  cfg.lr = 3e-3;
  cfg.seed = 13;
  const TrainReport report = train(predictor, dataset, cfg);
  REQUIRE(report.loss.size() == 120);
  for (double v : report.loss) REQUIRE(std::isfinite(v));

  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += report.loss[static_cast<std::size_t>(i)] / 10.0;
    tail += report.loss[report.loss.size() - 10 + static_cast<std::size_t>(i)] / 10.0;
  }
  INFO("first-10 mean ", head, " last-10 mean ", tail);
  CHECK(tail < 0.8 * head);
}

TEST_CASE("the gradient chain through splat decoding and rendering matches finite differences") {
  Predictor predictor(tiny_config(), 29);
  Rng weight_rng(30);
  perturb_param(predictor, "head.weight", weight_rng, 0.05);
  perturb_param(predictor, "attn.out.weight", weight_rng, 0.1);

  const RigSpec rig = rig_for(16);
  const std::vector<Camera> cams = orthogonal_rig(rig);
  Rng rng(31);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 16);
  const Camera& target_cam = cams[0];
  const RenderOptions render_options;

  // Scalar objective: a fixed random projection of the rendered RGBA image of
  // the decoded Gaussians.
  std::vector<double> projection(static_cast<std::size_t>(16) * 16 * 4);
  for (double& v : projection) v = rng.uniform(-1.0, 1.0);

  const auto objective = [&]() {
    Tape tape(&predictor.params());
    const NodeId out = predictor.build_forward(tape, views, cams);
    const std::vector<SplatterMap> maps = predictor.slice_output(tape.value(out), cams);
    const ImageBuffer rendered = render(decode_union(maps), target_cam, render_options);
    double acc = 0.0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i)
      acc += projection[i] * rendered.data[i];
    return acc;
  };

  // Analytic gradient: renderer -> per-Gaussian grads -> per-view decode
  // pullback -> network tape.
  ParamStore& params = predictor.params();
  Tape tape(&params);
  const NodeId out = predictor.build_forward(tape, views, cams);
  const std::vector<SplatterMap> maps = predictor.slice_output(tape.value(out), cams);
  const GaussianFrame frame = decode_union(maps);
  ImageBuffer d_image = ImageBuffer::zeros(16, 16, 4);
  d_image.data = projection;
  const FrameGrads grads = render_backward(frame, target_cam, d_image, render_options);

  const int res = predictor.config().output_res;
  const int channels = predictor.config().out_channels;
  const std::size_t per_view = static_cast<std::size_t>(res) * res;
  std::vector<double> seed(static_cast<std::size_t>(4) * channels * per_view, 0.0);
  for (int v = 0; v < 4; ++v) {
    const FrameGrads view_slice(grads.begin() + static_cast<std::ptrdiff_t>(v * per_view),
                                grads.begin() + static_cast<std::ptrdiff_t>((v + 1) * per_view));
    const ImageBuffer d_map = decode_backward(maps[static_cast<std::size_t>(v)], view_slice);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          seed[((static_cast<std::size_t>(v) * channels + c) * res + y) * res + x] =
              d_map.at(x, y, c);
  }
  params.zero_grads();
  tape.backward(out, seed);
  const std::vector<double> analytic = params.flat_grads();

  // Central differences on a sample of parameter coordinates.
  constexpr double kStep = 1e-4;
  const std::vector<double> base = params.flat_values();
  Rng pick(32);
  int agreeing = 0;
  constexpr int kSamples = 40;
  for (int s = 0; s < kSamples; ++s) {
    const std::size_t i =
        static_cast<std::size_t>(pick.uniform_int(static_cast<int>(base.size())));
    std::vector<double> bumped = base;
    bumped[i] = base[i] + kStep;
    params.set_flat_values(bumped);
    const double up = objective();
    bumped[i] = base[i] - kStep;
    params.set_flat_values(bumped);
    const double down = objective();
    params.set_flat_values(base);
    const double numeric = (up - down) / (2.0 * kStep);
    const double err = std::abs(analytic[i] - numeric);
    if (err <= std::max(1e-2 * std::max(std::abs(analytic[i]), std::abs(numeric)), 1e-7))
      ++agreeing;
  }
  INFO("agreeing ", agreeing, " of ", kSamples);
  CHECK(agreeing >= 36);
}

TEST_CASE("backward through the network yields finite, nonzero parameter gradients") {
  Predictor predictor(tiny_config(), 37);
  Rng weight_rng(38);
  perturb_param(predictor, "head.weight", weight_rng, 0.05);

  const std::vector<Camera> cams = orthogonal_rig(rig_for(16));
  Rng rng(39);
  const std::vector<ImageBuffer> views = random_views(rng, 4, 16);

  ParamStore& params = predictor.params();
  Tape tape(&params);
  const NodeId out = predictor.build_forward(tape, views, cams);
  std::vector<double> seed(tape.value(out).size());
  for (double& v : seed) v = rng.uniform(-1.0, 1.0);
  params.zero_grads();
  tape.backward(out, seed);

  double magnitude = 0.0;
  for (double g : params.flat_grads()) {
    REQUIRE(std::isfinite(g));
    magnitude += std::abs(g);
  }
  CHECK(magnitude > 0.0);
}
