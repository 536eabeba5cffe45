#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "meshforge/error.hpp"
#include "meshforge/recover_net.hpp"
#include "meshforge/rng.hpp"
#include "meshforge/scene_gen.hpp"

using namespace meshforge;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_net() {
  NetConfig cfg;
  cfg.image_size = 32;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 3;
  cfg.feature_dim = 6;
  cfg.attention_hidden = 5;
  cfg.hidden_dim = 10;
  cfg.init_hidden = 8;
  cfg.regressor_hidden = 12;
  return cfg;
}

Image random_image(Rng& rng, int size) {
  Image img(size, size);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i)
    img.pixels(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return img;
}

// toy scene: procedural body, one camera, preview-rendered clips
struct ToyScene {
  BodyTemplate tmpl = procedural_template();
  GeneratedSequence seq;
  std::vector<ClipSample> clips;

  explicit ToyScene(int frames, int clip_len, int image_size, std::uint64_t seed = 3) {
    SceneConfig cfg;
    cfg.resolution = image_size;
    cfg.camera_distance = 12;
    cfg.viewpoints = {Viewpoint::East};
    cfg.write_previews = false;
    cfg.seed = seed;

    Rng rng(seed);
    VecX a = VecX::Zero(72), b(72);
    for (int i = 0; i < 72; ++i) b(i) = rng.uniform(-0.4, 0.4);
    PoseSequence poses = interpolate(BodyPose::from_flat(a), BodyPose::from_flat(b), frames);
    seq = generate_sequence(poses, tmpl, nullptr, cfg);

    const SequenceAnnotation& ann = seq.views[0];
    for (int start = 0; start + clip_len <= frames; start += clip_len) {
      ClipSample clip;
      for (int f = start; f < start + clip_len; ++f) {
        clip.frames.push_back(ann.frames[static_cast<std::size_t>(f)]);
        clip.images.push_back(rasterize_preview(ann.frames[static_cast<std::size_t>(f)],
                                                seq.body_faces, seq.cloth_faces,
                                                PreviewMode::Silhouette));
      }
      clips.push_back(std::move(clip));
    }
  }
};

ModelParams zero_weight_params(const NetConfig& cfg) {
  ModelParams p = ModelParams::create(cfg, 1);
  return ModelParams::zeros_like(p);
}

}  // namespace

TEST_CASE("encode shapes and determinism") {
  NetConfig cfg = tiny_net();
  ModelParams params = ModelParams::create(cfg, 7);
  Image zero(cfg.image_size, cfg.image_size);
  EncodedFrame a = encode(zero, params);
  EncodedFrame b = encode(zero, params);
  CHECK(a.feature.size() == cfg.feature_dim);
  CHECK(a.map.rows() == cfg.feature_dim);
  CHECK(a.map.cols() == cfg.map_positions());
  CHECK(a.feature.allFinite());
  CHECK((a.feature.array() == b.feature.array()).all());
  CHECK((a.map.array() == b.map.array()).all());

  Rng rng(5);
  EncodedFrame c = encode(random_image(rng, cfg.image_size), params);
  CHECK((c.feature - a.feature).cwiseAbs().maxCoeff() > 0);

  Image wrong(cfg.image_size / 2, cfg.image_size / 2);
  CHECK_THROWS_AS(encode(wrong, params), DimensionError);
}

TEST_CASE("attention properties") {
  NetConfig cfg = tiny_net();
  ModelParams params = ModelParams::create(cfg, 11);
  Rng rng(13);
  const int l = cfg.map_positions();

  // identical annotation vectors -> uniform weights, context = the vector
  VecX common(cfg.feature_dim);
  for (int i = 0; i < cfg.feature_dim; ++i) common(i) = rng.normal();
  MatX map = common.replicate(1, l);
  VecX h = VecX::Zero(cfg.hidden_dim);
  AttentionResult res = attention(map, h, params);
  CHECK((res.weights.array() - 1.0 / l).abs().maxCoeff() < 1e-12);
  CHECK((res.context - common).cwiseAbs().maxCoeff() < 1e-12);

  // softmax normalization on random inputs
  for (int trial = 0; trial < 20; ++trial) {
    MatX m(cfg.feature_dim, l);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    VecX hh(cfg.hidden_dim);
    for (int i = 0; i < cfg.hidden_dim; ++i) hh(i) = rng.normal();
    AttentionResult r = attention(m, hh, params);
    CHECK(r.weights.minCoeff() >= 0.0);
    CHECK(std::abs(r.weights.sum() - 1.0) < 1e-12);

    // shifting every logit by a constant leaves the weights unchanged
    ModelParams shifted = params;
    shifted.att_c += 3.7;
    AttentionResult r2 = attention(m, hh, shifted);
    CHECK((r.weights - r2.weights).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("lstm_step closed form at zero and scalar oracle") {
  NetConfig cfg = tiny_net();
  ModelParams zeros = zero_weight_params(cfg);
  const int h = cfg.hidden_dim;
  VecX x = VecX::Zero(2 * cfg.feature_dim + RecoveryVector::kSize);
  RecurrentState s{VecX::Zero(h), VecX::Zero(h)};
  RecurrentState next = lstm_step(x, s, zeros);
  CHECK(next.cell.cwiseAbs().maxCoeff() == 0.0);    // g = tanh(0) = 0
  CHECK(next.hidden.cwiseAbs().maxCoeff() == 0.0);  // h = o * tanh(c) = 0

  // bounded hidden state
  ModelParams params = ModelParams::create(cfg, 17);
  Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    VecX xx(x.size());
    for (Eigen::Index i = 0; i < xx.size(); ++i) xx(i) = 3.0 * rng.normal();
    RecurrentState st{VecX::Random(h), VecX::Random(h)};
    RecurrentState out = lstm_step(xx, st, params);
    CHECK(out.hidden.cwiseAbs().maxCoeff() <= 1.0);
  }

  // independent scalar reference implementation
  VecX xr(x.size());
  for (Eigen::Index i = 0; i < xr.size(); ++i) xr(i) = rng.normal();
  RecurrentState st{VecX::Random(h), VecX::Random(h)};
  RecurrentState out = lstm_step(xr, st, params);
  for (int u = 0; u < h; ++u) {
    auto affine = [&](int row) {
      Scalar acc = params.lstm_b(row);
      for (Eigen::Index k = 0; k < xr.size(); ++k) acc += params.lstm_w(row, k) * xr(k);
      for (int k = 0; k < h; ++k) acc += params.lstm_u(row, k) * st.hidden(k);
      return acc;
    };
    auto sig = [](Scalar v) { return 1.0 / (1.0 + std::exp(-v)); };
    Scalar gi = sig(affine(u));
    Scalar gf = sig(affine(h + u));
    Scalar gg = std::tanh(affine(2 * h + u));
    Scalar go = sig(affine(3 * h + u));
    Scalar c = gf * st.cell(u) + gi * gg;
    CHECK(std::abs(out.cell(u) - c) < 1e-12);
    CHECK(std::abs(out.hidden(u) - go * std::tanh(c)) < 1e-12);
  }
}

TEST_CASE("init_states") {
  NetConfig cfg = tiny_net();
  ModelParams zeros = zero_weight_params(cfg);
  RecurrentState s = init_states(VecX::Zero(cfg.feature_dim), zeros);
  CHECK(s.cell.size() == cfg.hidden_dim);
  CHECK(s.hidden.size() == cfg.hidden_dim);
  CHECK(s.cell.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.hidden.cwiseAbs().maxCoeff() == 0.0);

  ModelParams params = ModelParams::create(cfg, 23);
  VecX f = VecX::Random(cfg.feature_dim);
  RecurrentState a = init_states(f, params);
  RecurrentState b = init_states(f, params);
  CHECK((a.cell.array() == b.cell.array()).all());
  CHECK((a.hidden.array() == b.hidden.array()).all());
}

TEST_CASE("regress_ief") {
  NetConfig cfg = tiny_net();
  ModelParams zeros = zero_weight_params(cfg);
  Rng rng(29);
  RecoveryVector init;
  for (int i = 0; i < 72; ++i) init.theta(i) = rng.uniform(-1, 1);
  init.scale_raw = 0.3;
  VecX h = VecX::Random(cfg.hidden_dim);
  RecoveryVector out = regress_ief(h, init, zeros, 3);
  CHECK((out.flatten().array() == init.flatten().array()).all());

  // one iteration equals the manual composition
  ModelParams params = ModelParams::create(cfg, 31);
  RecoveryVector one = regress_ief(h, init, params, 1);
  VecX input(cfg.hidden_dim + RecoveryVector::kSize);
  input << h, init.flatten();
  VecX a1 = (params.reg1.w * input + params.reg1.b).array().tanh();
  VecX a2 = (params.reg2.w * a1 + params.reg2.b).array().tanh();
  VecX delta = params.reg3.w * a2 + params.reg3.b;
  CHECK((one.flatten() - (init.flatten() + delta)).cwiseAbs().maxCoeff() < 1e-15);

  for (int trial = 0; trial < 100; ++trial) {
    ModelParams p = ModelParams::create(cfg, 100 + trial);
    VecX hh = VecX::Random(cfg.hidden_dim);
    RecoveryVector r = regress_ief(hh, init, p, 3);
    CHECK(r.flatten().allFinite());
    CHECK(r.scale() > 0.0);
  }
}

TEST_CASE("recover_clip degeneracy and order sensitivity") {
  NetConfig cfg = tiny_net();
  ToyScene scene(4, 4, cfg.image_size);
  const ClipSample& clip = scene.clips.front();

  // zero recurrent/regressor weights emit mean_phi for every t
  ModelParams zeros = zero_weight_params(cfg);
  Rng rng(37);
  for (int i = 0; i < RecoveryVector::kSize; ++i) zeros.mean_phi(i) = rng.normal();
  auto phis = recover_clip(clip.images, zeros, 3);
  REQUIRE(phis.size() == 4);
  for (const RecoveryVector& phi : phis)
    CHECK((phi.flatten().array() == zeros.mean_phi.array()).all());

  // T=1 works
  ModelParams params = ModelParams::create(cfg, 41);
  std::vector<Image> single{clip.images[0]};
  CHECK(recover_clip(single, params, 2).size() == 1);

  // permuting frames changes the outputs
  std::vector<Image> reversed(clip.images.rbegin(), clip.images.rend());
  auto fwd = recover_clip(clip.images, params, 3);
  auto rev = recover_clip(reversed, params, 3);
  CHECK((fwd.back().flatten() - rev.back().flatten()).cwiseAbs().maxCoeff() > 1e-12);
}

TEST_CASE("frame_loss vanishes at ground truth and honors masks") {
  ToyScene scene(2, 2, 32);
  const BodyTemplate& tmpl = scene.tmpl;

  // construct an annotation that is exactly the weak-perspective image of phi
  Rng rng(43);
  RecoveryVector phi;
  for (int i = 0; i < 72; ++i) phi.theta(i) = rng.uniform(-0.3, 0.3);
  phi.beta(2) = 0.5;
  phi.global_rotation = Vec3(0.2, -0.1, 0.4);
  phi.translation = Vec2(31, 33);
  phi.scale_raw = std::log(48.0);

  BodyPose pose = BodyPose::from_flat(phi.theta);
  BodyShape shape;
  shape.beta = phi.beta;
  SkinnedMesh mesh = skin(tmpl, shape, pose);
  Joints3D joints = regress_joints(mesh, tmpl);
  Points centered = joints.rowwise() - joints.row(0);
  Mat3 r = rodrigues(phi.global_rotation);
  Points cam = centered * r.transpose();

  AnnotatedFrame gt;
  gt.theta = phi.theta;
  gt.beta = phi.beta;
  gt.joints3d = cam;  // pelvis-centered camera frame
  gt.keypoints2d.points.resize(joints.rows(), 2);
  for (Eigen::Index q = 0; q < joints.rows(); ++q)
    gt.keypoints2d.points.row(q) =
        phi.scale() * Vec2(cam.row(q).head<2>()) + phi.translation;
  gt.keypoints2d.visibility = BoolArray::Constant(joints.rows(), true);
  gt.body_vertices = mesh.vertices;
  gt.camera.resolution = 64;

  FrameLossBreakdown b = frame_loss(phi, gt, tmpl, true);
  CHECK(b.proj < 1e-9);
  CHECK(b.joint3d < 1e-18);
  CHECK(b.smpl == 0.0);
  CHECK(b.total < 1e-9);

  // quadratic-term gradients vanish at the ground truth (the projection
  // term is masked out: its L1 subgradient is set-valued at zero residual)
  AnnotatedFrame quad = gt;
  quad.keypoints2d.visibility = BoolArray::Constant(joints.rows(), false);
  VecX dphi = VecX::Zero(RecoveryVector::kSize);
  frame_loss_grad(phi, quad, tmpl, true, dphi);
  CHECK(dphi.cwiseAbs().maxCoeff() < 1e-8);

  // masking kills the projection term entirely
  AnnotatedFrame masked = gt;
  masked.keypoints2d.points.setConstant(1e6);
  masked.keypoints2d.visibility = BoolArray::Constant(joints.rows(), false);
  FrameLossBreakdown mb = frame_loss(phi, masked, tmpl, true);
  CHECK(mb.proj == 0.0);

  // delta = 0 gates the 3D terms
  AnnotatedFrame off = gt;
  off.theta = phi.theta.array() + 0.1;
  FrameLossBreakdown db = frame_loss(phi, off, tmpl, false);
  CHECK(db.total == db.proj);
}

TEST_CASE("clip_loss shape smoothness") {
  ToyScene scene(2, 2, 32);
  const ClipSample& clip = scene.clips.front();

  std::vector<RecoveryVector> phis(2);
  phis[0] = extract_recovery_vector(clip.frames[0]);
  phis[1] = extract_recovery_vector(clip.frames[1]);

  // constant beta: the shape term contributes nothing
  phis[1].beta = phis[0].beta;
  Scalar base = clip_loss(phis, clip.frames, scene.tmpl, 1.0, true);
  Scalar f0 = frame_loss(phis[0], clip.frames[0], scene.tmpl, true).total;
  Scalar f1 = frame_loss(phis[1], clip.frames[1], scene.tmpl, true).total;
  CHECK(std::abs(base - (f0 + f1)) < 1e-9);

  // unit beta difference adds exactly one
  phis[1].beta = phis[0].beta;
  phis[1].beta(0) += 1.0;
  Scalar f1b = frame_loss(phis[1], clip.frames[1], scene.tmpl, true).total;
  Scalar shifted = clip_loss(phis, clip.frames, scene.tmpl, 1.0, true);
  CHECK(std::abs(shifted - (f0 + f1b + 1.0)) < 1e-9);

  // T=1: no shape term, lambda scales the frame loss
  std::vector<RecoveryVector> one{phis[0]};
  std::vector<AnnotatedFrame> one_gt{clip.frames[0]};
  CHECK(std::abs(clip_loss(one, one_gt, scene.tmpl, 2.5, true) - 2.5 * f0) < 1e-9);
}

TEST_CASE("extract_recovery_vector reprojects tightly") {
  ToyScene scene(3, 3, 64);
  for (const AnnotatedFrame& f : scene.clips.front().frames) {
    RecoveryVector phi = extract_recovery_vector(f);
    CHECK(phi.flatten().allFinite());
    CHECK(phi.scale() > 0);
    FrameLossBreakdown b = frame_loss(phi, f, scene.tmpl, true);
    CHECK(b.smpl == 0.0);
    CHECK(b.joint3d < 1e-16);
    // weak-perspective fit of a telephoto view: small but nonzero pixel error
    CHECK(b.proj / static_cast<Scalar>(f.keypoints2d.points.rows()) < 1.0);
  }
}

TEST_CASE("gradient check against finite differences") {
  NetConfig cfg = tiny_net();
  ToyScene scene(4, 2, cfg.image_size);
  REQUIRE(scene.clips.size() >= 2);
  std::vector<ClipSample> batch{scene.clips[0], scene.clips[1]};
  batch[1].delta3d = false;  // exercise the delta-mixed path

  TrainConfig tcfg;
  tcfg.net = cfg;
  tcfg.ief_iterations = 2;
  tcfg.lambda = 1.3;

  ModelParams params = ModelParams::create(cfg, 47);
  CHECK(params.parameter_count() < 10000);
  GradCheckReport report = grad_check(params, batch, scene.tmpl, tcfg);
  CHECK(report.groups.size() == 6);
  for (const GradCheckGroup& g : report.groups) {
    INFO(g.group << " rel error " << g.rel_error);
    CHECK(g.rel_error < 1e-4);
  }

  // negative control: a corrupted gradient must be flagged
  ModelParams grads = ModelParams::zeros_like(params);
  batch_loss_grad(params, batch, scene.tmpl, tcfg, &grads);
  auto gb = grads.blocks();
  Scalar norm_a = 0, diff = 0;
  ModelParams probe = params;
  auto pb = probe.blocks();
  const Scalar h = 1e-5;
  for (std::size_t b = 0; b < gb.size(); ++b) {
    if (gb[b].group != "lstm") continue;
    for (Eigen::Index i = 0; i < gb[b].size; ++i) {
      Scalar corrupted = gb[b].data[i] * 1.05;  // 5% scale error
      Scalar saved = pb[b].data[i];
      pb[b].data[i] = saved + h;
      Scalar up = batch_loss_grad(probe, batch, scene.tmpl, tcfg, nullptr);
      pb[b].data[i] = saved - h;
      Scalar down = batch_loss_grad(probe, batch, scene.tmpl, tcfg, nullptr);
      pb[b].data[i] = saved;
      Scalar fd = (up - down) / (2 * h);
      diff += (corrupted - fd) * (corrupted - fd);
      norm_a += corrupted * corrupted;
    }
  }
  Scalar rel = std::sqrt(diff) / std::max(std::sqrt(norm_a), 1e-12);
  CHECK(rel > 1e-2);
}

TEST_CASE("batch gradients are identical across thread counts") {
  NetConfig cfg = tiny_net();
  ToyScene scene(4, 2, cfg.image_size);
  TrainConfig tcfg;
  tcfg.net = cfg;
  tcfg.ief_iterations = 2;
  ModelParams params = ModelParams::create(cfg, 53);
  ModelParams g1 = ModelParams::zeros_like(params);
  ModelParams g2 = ModelParams::zeros_like(params);
  Scalar l1 = batch_loss_grad(params, scene.clips, scene.tmpl, tcfg, &g1, nullptr, nullptr, 1);
  Scalar l2 = batch_loss_grad(params, scene.clips, scene.tmpl, tcfg, &g2, nullptr, nullptr, 2);
  CHECK(l1 == l2);
  auto b1 = g1.blocks(), b2 = g2.blocks();
  for (std::size_t b = 0; b < b1.size(); ++b)
    for (Eigen::Index i = 0; i < b1[b].size; ++i) CHECK(b1[b].data[i] == b2[b].data[i]);
}

TEST_CASE("training determinism and the zero-rate fixed point") {
  NetConfig cfg = tiny_net();
  ToyScene scene(4, 2, cfg.image_size);
  TrainConfig tcfg;
  tcfg.net = cfg;
  tcfg.ief_iterations = 2;
  tcfg.batch_size = 2;
  tcfg.max_steps = 3;
  tcfg.seed = 9;

  tcfg.learning_rate = 0.0;
  TrainResult frozen = train_toy(scene.clips, scene.tmpl, tcfg);
  ModelParams reference = ModelParams::create(cfg, tcfg.seed);
  reference.mean_phi = dataset_mean_phi(scene.clips);
  auto fb = frozen.params.blocks(), rb = reference.blocks();
  for (std::size_t b = 0; b < fb.size(); ++b)
    for (Eigen::Index i = 0; i < fb[b].size; ++i) CHECK(fb[b].data[i] == rb[b].data[i]);

  tcfg.learning_rate = 1e-3;
  TrainResult a = train_toy(scene.clips, scene.tmpl, tcfg);
  TrainResult b = train_toy(scene.clips, scene.tmpl, tcfg);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].total == b.curve[i].total);
}

TEST_CASE("a short training run reduces the loss") {
  NetConfig cfg = tiny_net();
  ToyScene scene(4, 2, cfg.image_size);
  TrainConfig tcfg;
  tcfg.net = cfg;
  tcfg.ief_iterations = 2;
  tcfg.batch_size = 2;
  tcfg.max_steps = 150;
  tcfg.seed = 0;
  TrainResult res = train_toy(scene.clips, scene.tmpl, tcfg);
  Scalar first = res.curve.front().total;
  Scalar last = res.curve.back().total;
  INFO("loss " << first << " -> " << last);
  CHECK(last < 0.7 * first);

  fs::path log = fs::temp_directory_path() / "meshforge_loss.log";
  save_loss_log(res.curve, log);
  CHECK(fs::exists(log));
  fs::remove(log);
}

TEST_CASE("parameter serialization round trip") {
  NetConfig cfg = tiny_net();
  ModelParams params = ModelParams::create(cfg, 61);
  params.mean_phi.setRandom();
  fs::path path = fs::temp_directory_path() / "meshforge_params.bin";
  save_params(params, path);
  ModelParams loaded = load_params(path);
  auto a = params.blocks(), b = loaded.blocks();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    for (Eigen::Index k = 0; k < a[i].size; ++k) CHECK(a[i].data[k] == b[i].data[k]);
  }

  fs::resize_file(path, fs::file_size(path) / 2);
  CHECK_THROWS_AS(load_params(path), IoError);
  fs::remove(path);
}
