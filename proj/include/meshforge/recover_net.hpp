#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "meshforge/body_model.hpp"
#include "meshforge/image.hpp"
#include "meshforge/recovery_vector.hpp"
#include "meshforge/scene_gen.hpp"
#include "meshforge/types.hpp"

namespace meshforge {

// Architecture sizes. The encoder is a three-layer strided conv stack
// (k5s2, k5s2, k4s4), so image_size must be a multiple of 16; the final
// activation grid provides the L = (image_size/16)^2 annotation vectors.
struct NetConfig {
  int image_size = 64;
  int conv1_channels = 4;
  int conv2_channels = 8;
  int feature_dim = 64;       // D, also the conv3 output channels
  int attention_hidden = 32;
  int hidden_dim = 128;       // H
  int init_hidden = 64;
  int regressor_hidden = 128;

  int map_positions() const {  // L
    int g = image_size / 16;
    return g * g;
  }
  void validate() const;
};

struct ConvLayer {
  MatX weight;  // out_ch x (in_ch * kernel^2)
  VecX bias;
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 0, pad = 0;
};

struct Dense {
  MatX w;
  VecX b;
};

struct ParamBlock {
  std::string name;
  std::string group;  // encoder / attention / lstm / init / regressor / mean_phi
  Scalar* data;
  Eigen::Index size;
};

struct ModelParams {
  NetConfig cfg;
  ConvLayer conv1, conv2, conv3;
  // attention scorer: e_i = v^T tanh(Wa a_i + Wh h + b) + c
  MatX att_wa, att_wh;
  VecX att_b, att_v;
  Scalar att_c = 0;
  // LSTM: preactivations = W x + U h + b, gate order [i f g o]
  MatX lstm_w, lstm_u;
  VecX lstm_b;
  Dense init1, init2, init3;  // feature -> (c0, h0)
  Dense reg1, reg2, reg3;     // (h, phi) -> delta phi
  VecX mean_phi = VecX::Zero(RecoveryVector::kSize);

  // Randomly initialized weights (zero biases), deterministic in the seed.
  static ModelParams create(const NetConfig& cfg, std::uint64_t seed);
  // Same shapes, all values zero (used for gradients and Adam moments).
  static ModelParams zeros_like(const ModelParams& other);

  std::vector<ParamBlock> blocks();
  std::vector<ParamBlock> blocks() const;  // const data via const_cast-free copy
  Eigen::Index parameter_count() const;
  void validate() const;
};

void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

struct EncodedFrame {
  VecX feature;  // D
  MatX map;      // D x L, annotation vectors as columns
};

struct RecurrentState {
  VecX cell;
  VecX hidden;
};

struct AttentionResult {
  VecX weights;  // L, nonnegative, sums to 1
  VecX context;  // D
};

EncodedFrame encode(const Image& image, const ModelParams& params);

AttentionResult attention(const MatX& map, const VecX& h_prev, const ModelParams& params);

RecurrentState lstm_step(const VecX& input, const RecurrentState& state,
                         const ModelParams& params);

RecurrentState init_states(const VecX& first_feature, const ModelParams& params);

RecoveryVector regress_ief(const VecX& hidden, const RecoveryVector& phi_init,
                           const ModelParams& params, int n_iter);

// phi_0 = mean_phi; per frame: encode, attention on h_{t-1}, LSTM on
// (feature, context, phi_{t-1}), IEF from phi_{t-1} using h_t.
std::vector<RecoveryVector> recover_clip(std::span<const Image> frames, const ModelParams& params,
                                         int ief_iterations = 3);

struct FrameLossBreakdown {
  Scalar proj = 0;
  Scalar joint3d = 0;
  Scalar smpl = 0;
  Scalar total = 0;
};

// L = L_proj + delta (L_3Djoint + L_smpl); predicted joints come from the
// body model under phi, pelvis-centered and rotated into the camera frame.
FrameLossBreakdown frame_loss(const RecoveryVector& phi, const AnnotatedFrame& gt,
                              const BodyTemplate& tmpl, bool delta3d);

// Same, also accumulating d(total)/d(phi) into dphi (size 88).
FrameLossBreakdown frame_loss_grad(const RecoveryVector& phi, const AnnotatedFrame& gt,
                                   const BodyTemplate& tmpl, bool delta3d, VecX& dphi);

// sum_t lambda (L_proj + delta L_3D)_t + sum_t ||beta_{t+1} - beta_t||^2
Scalar clip_loss(std::span<const RecoveryVector> phis, std::span<const AnnotatedFrame> gt,
                 const BodyTemplate& tmpl, Scalar lambda, bool delta3d);

// Ground truth phi for one annotated frame: theta/beta from the annotation,
// global rotation from the camera, translation and scale from the
// least-squares weak-perspective fit to the stored keypoints.
RecoveryVector extract_recovery_vector(const AnnotatedFrame& frame);

struct ClipSample {
  std::vector<Image> images;
  std::vector<AnnotatedFrame> frames;
  bool delta3d = true;
};

struct TrainConfig {
  Scalar learning_rate = 1e-3;  // paper-scale value 1e-5 selectable
  Scalar lr_decay_fraction = 1.0;  // linear ramp to learning_rate * fraction
  int batch_size = 16;
  int clip_length = 4;  // T
  Scalar lambda = 1.0;
  int ief_iterations = 3;
  Scalar adam_beta1 = 0.9;
  Scalar adam_beta2 = 0.999;
  Scalar adam_eps = 1e-8;
  int max_steps = 5000;
  std::uint64_t seed = 0;
  int jobs = 1;
  NetConfig net;

  void validate() const;
};

// Network loss and gradient for a batch of clips (the gradient includes the
// full chain through IEF, LSTM, attention, encoder and the body model).
// Returns the summed loss; per-term sums go to breakdown when non-null.
Scalar batch_loss_grad(const ModelParams& params, std::span<const ClipSample> batch,
                       const BodyTemplate& tmpl, const TrainConfig& cfg, ModelParams* grads,
                       FrameLossBreakdown* breakdown = nullptr, Scalar* shape_term = nullptr,
                       int jobs = 1);

struct GradCheckGroup {
  std::string group;
  Scalar rel_error = 0;  // normwise: |analytic - fd| / max(|analytic|, |fd|)
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  Scalar max_rel_error = 0;
};

// Central finite differences (step 1e-5) of the batch loss against the
// analytic gradient, per parameter group. Intended for models of at most
// ~10k parameters.
GradCheckReport grad_check(const ModelParams& params, std::span<const ClipSample> batch,
                           const BodyTemplate& tmpl, const TrainConfig& cfg);

// Slices every sequence/view of the dataset into consecutive clips of
// cfg.clip_length, loading the exported preview images.
std::vector<ClipSample> assemble_clips(const Dataset& dataset, const TrainConfig& cfg);

// Mean of extract_recovery_vector over all clip frames, in raw coordinates.
VecX dataset_mean_phi(std::span<const ClipSample> clips);

struct LossRecord {
  int step = 0;
  Scalar total = 0, proj = 0, joint3d = 0, smpl = 0, shape = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> curve;
};

// Adam on mini-batches sampled with the config seed. Deterministic; throws
// TrainingError (with the step index) if the loss turns non-finite.
TrainResult train_toy(std::span<const ClipSample> clips, const BodyTemplate& tmpl,
                      const TrainConfig& cfg);

void save_loss_log(std::span<const LossRecord> curve, const std::filesystem::path& path);

}  // namespace meshforge
