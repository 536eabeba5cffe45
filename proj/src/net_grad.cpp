#include <cmath>
#include <map>
#include <thread>

#include "meshforge/error.hpp"
#include "net_internal.hpp"

namespace meshforge {

namespace {

constexpr int kPhi = RecoveryVector::kSize;
constexpr int kBetaOffset = RecoveryVector::kThetaSize;

struct ClipResult {
  Scalar loss = 0;
  FrameLossBreakdown breakdown;
  Scalar shape_term = 0;
};

ClipResult clip_loss_grad_one(const ModelParams& params, const ClipSample& clip,
                              const BodyTemplate& tmpl, const TrainConfig& cfg,
                              ModelParams* grads) {
  if (clip.images.size() != clip.frames.size() || clip.images.empty())
    throw DimensionError("clip needs one image per ground-truth frame");
  detail::ClipTape tape;
  std::vector<VecX> phis =
      detail::clip_forward(params, clip.images, cfg.ief_iterations, grads ? &tape : nullptr);

  const int t_count = static_cast<int>(clip.images.size());
  ClipResult result;
  std::vector<VecX> dphis(static_cast<std::size_t>(t_count), VecX::Zero(kPhi));
  for (int t = 0; t < t_count; ++t) {
    RecoveryVector phi = RecoveryVector::from_flat(phis[static_cast<std::size_t>(t) + 1]);
    FrameLossBreakdown b;
    if (grads) {
      VecX dphi = VecX::Zero(kPhi);
      b = frame_loss_grad(phi, clip.frames[static_cast<std::size_t>(t)], tmpl, clip.delta3d,
                          dphi);
      dphis[static_cast<std::size_t>(t)] = cfg.lambda * dphi;
    } else {
      b = frame_loss(phi, clip.frames[static_cast<std::size_t>(t)], tmpl, clip.delta3d);
    }
    result.breakdown.proj += b.proj;
    result.breakdown.joint3d += b.joint3d;
    result.breakdown.smpl += b.smpl;
    result.loss += cfg.lambda * b.total;
  }
  // shape smoothness across the clip
  for (int t = 0; t + 1 < t_count; ++t) {
    auto beta_of = [&](int i) {
      return phis[static_cast<std::size_t>(i) + 1].segment<10>(kBetaOffset);
    };
    VecX diff = beta_of(t + 1) - beta_of(t);
    result.shape_term += diff.squaredNorm();
    if (grads) {
      dphis[static_cast<std::size_t>(t) + 1].segment<10>(kBetaOffset) += 2.0 * diff;
      dphis[static_cast<std::size_t>(t)].segment<10>(kBetaOffset) -= 2.0 * diff;
    }
  }
  result.loss += result.shape_term;
  if (grads) detail::clip_backward(params, tape, dphis, *grads);
  return result;
}

void accumulate(ModelParams& into, const ModelParams& from) {
  auto dst = into.blocks();
  auto src = from.blocks();
  for (std::size_t i = 0; i < dst.size(); ++i)
    Eigen::Map<VecX>(dst[i].data, dst[i].size) +=
        Eigen::Map<const VecX>(src[i].data, src[i].size);
}

}  // namespace

Scalar batch_loss_grad(const ModelParams& params, std::span<const ClipSample> batch,
                       const BodyTemplate& tmpl, const TrainConfig& cfg, ModelParams* grads,
                       FrameLossBreakdown* breakdown, Scalar* shape_term, int jobs) {
  if (batch.empty()) throw ValidationError("empty batch");
  const int n = static_cast<int>(batch.size());
  jobs = std::max(1, std::min(jobs, n));

  // per-clip gradient buffers reduced in clip order, so the result does not
  // depend on the thread count or scheduling
  std::vector<ClipResult> results(static_cast<std::size_t>(n));
  std::vector<ModelParams> partial;
  if (grads) {
    partial.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) partial.push_back(ModelParams::zeros_like(params));
  }
  auto run_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i)
      results[static_cast<std::size_t>(i)] =
          clip_loss_grad_one(params, batch[static_cast<std::size_t>(i)], tmpl, cfg,
                             grads ? &partial[static_cast<std::size_t>(i)] : nullptr);
  };
  if (jobs == 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::string> errors(static_cast<std::size_t>(jobs));
    for (int j = 0; j < jobs; ++j) {
      int begin = j * n / jobs, end = (j + 1) * n / jobs;
      threads.emplace_back([&, j, begin, end]() {
        try {
          run_range(begin, end);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(j)] = e.what();
        }
      });
    }
    for (std::thread& t : threads) t.join();
    for (const std::string& e : errors)
      if (!e.empty()) throw TrainingError(e);
  }
  if (grads)
    for (const ModelParams& p : partial) accumulate(*grads, p);

  Scalar total = 0;
  for (const ClipResult& r : results) {
    total += r.loss;
    if (breakdown) {
      breakdown->proj += r.breakdown.proj;
      breakdown->joint3d += r.breakdown.joint3d;
      breakdown->smpl += r.breakdown.smpl;
    }
    if (shape_term) *shape_term += r.shape_term;
  }
  if (breakdown) breakdown->total += total;
  return total;
}

GradCheckReport grad_check(const ModelParams& params, std::span<const ClipSample> batch,
                           const BodyTemplate& tmpl, const TrainConfig& cfg) {
  ModelParams grads = ModelParams::zeros_like(params);
  batch_loss_grad(params, batch, tmpl, cfg, &grads, nullptr, nullptr, 1);

  ModelParams probe = params;  // mutated in place for the finite differences
  auto probe_blocks = probe.blocks();
  auto grad_blocks = grads.blocks();

  const Scalar h = 1e-5;
  struct Accum {
    Scalar diff2 = 0, a2 = 0, f2 = 0;
  };
  std::map<std::string, Accum> by_group;
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    Accum& acc = by_group[probe_blocks[b].group];
    for (Eigen::Index i = 0; i < probe_blocks[b].size; ++i) {
      Scalar saved = probe_blocks[b].data[i];
      probe_blocks[b].data[i] = saved + h;
      Scalar up = batch_loss_grad(probe, batch, tmpl, cfg, nullptr, nullptr, nullptr, 1);
      probe_blocks[b].data[i] = saved - h;
      Scalar down = batch_loss_grad(probe, batch, tmpl, cfg, nullptr, nullptr, nullptr, 1);
      probe_blocks[b].data[i] = saved;
      Scalar fd = (up - down) / (2 * h);
      Scalar an = grad_blocks[b].data[i];
      acc.diff2 += (an - fd) * (an - fd);
      acc.a2 += an * an;
      acc.f2 += fd * fd;
    }
  }

  GradCheckReport report;
  for (const auto& [group, acc] : by_group) {
    Scalar denom = std::max({std::sqrt(acc.a2), std::sqrt(acc.f2), 1e-12});
    Scalar rel = std::sqrt(acc.diff2) / denom;
    report.groups.push_back({group, rel});
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  return report;
}

}  // namespace meshforge
