#include <cmath>
#include <fstream>
#include <sstream>

#include "meshforge/error.hpp"
#include "meshforge/rng.hpp"
#include "net_internal.hpp"

namespace meshforge {

void TrainConfig::validate() const {
  net.validate();
  if (learning_rate < 0) throw ValidationError("learning rate must be >= 0");
  if (lr_decay_fraction < 0 || lr_decay_fraction > 1)
    throw ValidationError("lr_decay_fraction must lie in [0, 1]");
  if (batch_size <= 0) throw ValidationError("batch size must be > 0");
  if (clip_length < 1) throw ValidationError("clip length must be >= 1");
  if (ief_iterations < 1) throw ValidationError("ief_iterations must be >= 1");
  if (max_steps < 0) throw ValidationError("max_steps must be >= 0");
  if (jobs < 1) throw ValidationError("jobs must be >= 1");
}

std::vector<ClipSample> assemble_clips(const Dataset& dataset, const TrainConfig& cfg) {
  std::vector<ClipSample> clips;
  for (const DatasetSequence& seq : dataset.sequences) {
    for (const SequenceAnnotation& ann : seq.views) {
      const int frames = static_cast<int>(ann.frames.size());
      const int t = std::min(cfg.clip_length, frames);
      for (int start = 0; start + t <= frames; start += t) {
        ClipSample clip;
        for (int f = start; f < start + t; ++f) {
          clip.frames.push_back(ann.frames[static_cast<std::size_t>(f)]);
          auto path = dataset.preview_path(seq.id, ann.view, f);
          if (!std::filesystem::exists(path))
            throw IoError("missing preview image " + path.string() +
                          " (regenerate the dataset with previews enabled)");
          clip.images.push_back(load_pgm(path));
        }
        clips.push_back(std::move(clip));
      }
    }
  }
  if (clips.empty()) throw ValidationError("dataset produced no training clips");
  return clips;
}

VecX dataset_mean_phi(std::span<const ClipSample> clips) {
  VecX mean = VecX::Zero(RecoveryVector::kSize);
  Eigen::Index count = 0;
  for (const ClipSample& clip : clips)
    for (const AnnotatedFrame& frame : clip.frames) {
      mean += extract_recovery_vector(frame).flatten();
      ++count;
    }
  if (count == 0) throw ValidationError("no frames to average a mean phi from");
  return mean / static_cast<Scalar>(count);
}

TrainResult train_toy(std::span<const ClipSample> clips, const BodyTemplate& tmpl,
                      const TrainConfig& cfg) {
  cfg.validate();
  if (clips.empty()) throw ValidationError("train_toy needs at least one clip");

  TrainResult result;
  result.params = ModelParams::create(cfg.net, cfg.seed);
  result.params.mean_phi = dataset_mean_phi(clips);

  ModelParams m = ModelParams::zeros_like(result.params);
  ModelParams v = ModelParams::zeros_like(result.params);
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 1);

  const int n = static_cast<int>(clips.size());
  for (int step = 0; step < cfg.max_steps; ++step) {
    std::vector<ClipSample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(clips[static_cast<std::size_t>(rng.uniform_int(n))]);

    ModelParams grads = ModelParams::zeros_like(result.params);
    FrameLossBreakdown breakdown;
    Scalar shape_term = 0;
    Scalar loss = batch_loss_grad(result.params, batch, tmpl, cfg, &grads, &breakdown,
                                  &shape_term, cfg.jobs);
    const Scalar inv_b = 1.0 / static_cast<Scalar>(cfg.batch_size);
    if (!std::isfinite(loss))
      throw TrainingError("loss became non-finite at step " + std::to_string(step));

    LossRecord rec;
    rec.step = step;
    rec.total = loss * inv_b;
    rec.proj = breakdown.proj * inv_b;
    rec.joint3d = breakdown.joint3d * inv_b;
    rec.smpl = breakdown.smpl * inv_b;
    rec.shape = shape_term * inv_b;
    result.curve.push_back(rec);

    // Adam with bias correction; mean_phi stays fixed at the dataset mean
    const Scalar progress =
        cfg.max_steps > 1 ? static_cast<Scalar>(step) / static_cast<Scalar>(cfg.max_steps - 1)
                          : 0.0;
    const Scalar lr =
        cfg.learning_rate * (1.0 - progress * (1.0 - cfg.lr_decay_fraction));
    const Scalar t = static_cast<Scalar>(step + 1);
    const Scalar c1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const Scalar c2 = 1.0 - std::pow(cfg.adam_beta2, t);
    auto pb = result.params.blocks();
    auto gb = grads.blocks();
    auto mb = m.blocks();
    auto vb = v.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b) {
      if (pb[b].group == "mean_phi") continue;
      for (Eigen::Index i = 0; i < pb[b].size; ++i) {
        Scalar g = gb[b].data[i] * inv_b;
        mb[b].data[i] = cfg.adam_beta1 * mb[b].data[i] + (1.0 - cfg.adam_beta1) * g;
        vb[b].data[i] = cfg.adam_beta2 * vb[b].data[i] + (1.0 - cfg.adam_beta2) * g * g;
        Scalar mhat = mb[b].data[i] / c1;
        Scalar vhat = vb[b].data[i] / c2;
        pb[b].data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    }
  }
  return result;
}

void save_loss_log(std::span<const LossRecord> curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# step total proj joint3d smpl shape\n";
  out.precision(12);
  for (const LossRecord& r : curve)
    out << r.step << ' ' << r.total << ' ' << r.proj << ' ' << r.joint3d << ' ' << r.smpl << ' '
        << r.shape << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace meshforge
