#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "meshforge/cli.hpp"
#include "meshforge/error.hpp"
#include "meshforge/log.hpp"
#include "meshforge/metrics.hpp"
#include "json_helpers.hpp"

namespace meshforge {

namespace {

using nlohmann::json;

struct CliOptions {
  std::string config_path;
  std::vector<std::string> poses;
  std::string template_path, garment_path, out_path, pred_path, gt_path, params_path,
      data_path, phis_path, loss_log_path, joints = "metric";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  int leadin = 0;
  int steps = -1;
  Scalar max_seconds = 10.0;
  int clip_length = 0;
  bool raw_mpvpe = false;
};

RunConfig load_run_config(const CliOptions& opt) {
  RunConfig cfg;
  if (!opt.config_path.empty()) cfg = validate_config(opt.config_path);
  if (opt.seed_set) {
    cfg.scene.seed = opt.seed;
    cfg.train.seed = opt.seed;
  }
  if (opt.jobs > 0) cfg.train.jobs = opt.jobs;
  if (opt.steps >= 0) cfg.train.max_steps = opt.steps;
  if (opt.clip_length > 0) cfg.train.clip_length = opt.clip_length;
  return cfg;
}

int effective_jobs(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// --- subcommand bodies -----------------------------------------------------

int run_generate(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  BodyTemplate tmpl = load_template(opt.template_path);
  GarmentFile garment;
  bool has_garment = !opt.garment_path.empty();
  if (has_garment) garment = load_garment(opt.garment_path);

  std::vector<GeneratedSequence> sequences(opt.poses.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(opt.poses.size());
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= opt.poses.size()) break;
      try {
        PoseSequence poses = load_pose_sequence(opt.poses[i]);
        if (opt.leadin > 0)
          poses = prepend_leadin(poses, BodyPose::rest(poses.joint_count()), opt.leadin);
        SceneConfig scene = cfg.scene;
        scene.seed = cfg.scene.seed + i;  // per-sequence seed, recorded in provenance
        std::string id = std::filesystem::path(opt.poses[i]).stem().string();
        sequences[i] = generate_sequence(poses, tmpl, has_garment ? &garment : nullptr, scene,
                                         cfg.sim, id);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  int jobs = std::min<int>(effective_jobs(opt.jobs), static_cast<int>(opt.poses.size()));
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw Error(e);

  export_dataset(sequences, opt.out_path, cfg.scene);
  int frames = 0;
  for (const auto& s : sequences)
    frames += s.views.empty() ? 0 : static_cast<int>(s.views[0].frames.size());
  log_info("generate: wrote " + std::to_string(sequences.size()) + " sequence(s), " +
           std::to_string(frames) + " frame(s) per view to " + opt.out_path);
  return 0;
}

int run_interp(const CliOptions& opt, const std::string& a_path, const std::string& b_path,
               Scalar radians_per_frame, int min_frames, int max_frames) {
  PoseSequence a = load_pose_sequence(a_path);
  PoseSequence b = load_pose_sequence(b_path);
  DistanceMatrix d = distance_matrix(a, b);
  ContrastPair pair = select_contrast_pair(d);
  InterpolationConfig icfg{radians_per_frame, min_frames, max_frames};
  int k = frames_for_distance(pair.distance, icfg);
  PoseSequence out = interpolate(a.frames[static_cast<std::size_t>(pair.i)].pose,
                                 b.frames[static_cast<std::size_t>(pair.j)].pose, k,
                                 a.frames[static_cast<std::size_t>(pair.i)].shape, a.fps);
  save_pose_sequence(out, opt.out_path);
  std::cout << "contrast pair (" << pair.i << ", " << pair.j << ") distance " << pair.distance
            << " -> " << k << " frames\n";
  return 0;
}

int run_drape(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  BodyTemplate tmpl = load_template(opt.template_path);
  GarmentFile garment = load_garment(opt.garment_path);

  BodyPose pose = BodyPose::rest(tmpl.joint_count());
  BodyShape shape;
  if (!opt.poses.empty()) {
    PoseSequence seq = load_pose_sequence(opt.poses.front());
    pose = seq.frames.front().pose;
    shape = seq.frames.front().shape;
  }
  ClothState cloth = build_garment(garment.pattern, garment.material);
  SkinnedMesh mesh = skin(tmpl, shape, pose);
  for (const PinToBody& attach : garment.attachments) {
    PinConstraint pin;
    pin.particle = attach.particle;
    pin.body_vertex = attach.body_vertex;
    pin.anchor = mesh.vertices.row(attach.body_vertex);
    cloth.pins.push_back(pin);
  }
  CapsuleSet colliders = body_colliders(tmpl, pose, shape);
  DrapeResult res = drape(cloth, colliders, cfg.sim, opt.max_seconds);
  save_obj(res.state.positions, res.state.faces, opt.out_path);
  std::cout << (res.converged ? "converged" : "not converged") << " after " << res.seconds
            << " simulated seconds\n";
  if (!res.converged) log_warn("drape did not reach equilibrium within the time budget");
  return 0;
}

Dataset load_dataset_or_file(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) return import_dataset(path);
  // bare annotation file: wrap as a single-view dataset
  Dataset ds;
  ds.root = fs::path(path).parent_path();
  DatasetSequence seq;
  seq.id = fs::path(path).stem().string();
  SequenceAnnotation ann;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = detail::parse_string(line, path + ":" + std::to_string(lineno));
    // reuse the dataset frame schema
    AnnotatedFrame f;
    f.theta = detail::vec_from_json(rec.at("theta"), "theta");
    f.beta = Vec10(detail::vec_from_json(rec.at("beta"), "beta"));
    f.joints3d = detail::matrix_from_json<Points>(rec.at("joints3d"), 3, "joints3d");
    f.keypoints2d.points = detail::matrix_from_json<Points2>(rec.at("keypoints"), 2, "keypoints");
    const json& vis = rec.at("visibility");
    f.keypoints2d.visibility.resize(static_cast<Eigen::Index>(vis.size()));
    for (std::size_t q = 0; q < vis.size(); ++q)
      f.keypoints2d.visibility(static_cast<Eigen::Index>(q)) = vis[q].get<bool>();
    f.body_vertices = detail::matrix_from_json<Points>(rec.at("body_vertices"), 3,
                                                       "body_vertices");
    if (rec.contains("cloth_vertices") && !rec["cloth_vertices"].is_null())
      f.cloth_vertices = detail::matrix_from_json<Points>(rec["cloth_vertices"], 3,
                                                          "cloth_vertices");
    if (rec.contains("camera")) {
      const json& c = rec["camera"];
      f.camera.position = Vec3(detail::vec_from_json(c.at("position"), "camera.position"));
      f.camera.look_at = Vec3(detail::vec_from_json(c.at("look_at"), "camera.look_at"));
      f.camera.focal_mm = c.at("focal_mm").get<Scalar>();
      f.camera.sensor_mm = c.at("sensor_mm").get<Scalar>();
      f.camera.resolution = c.at("resolution").get<int>();
    }
    ann.frames.push_back(std::move(f));
  }
  seq.views.push_back(std::move(ann));
  ds.sequences.push_back(std::move(seq));
  return ds;
}

int run_evaluate(const CliOptions& opt, const std::string& table_path) {
  Dataset pred = load_dataset_or_file(opt.pred_path);
  Dataset gt = load_dataset_or_file(opt.gt_path);

  bool use_metric_joints = opt.joints == "metric";
  if (use_metric_joints && gt.metric_joint_map.empty()) {
    log_warn("no metric joint map available; falling back to all joints");
    use_metric_joints = false;
  }

  std::vector<std::pair<std::string, MetricReport>> rows;
  MetricReport overall;
  for (const DatasetSequence& ps : pred.sequences) {
    const DatasetSequence* gs = nullptr;
    for (const DatasetSequence& cand : gt.sequences)
      if (cand.id == ps.id) gs = &cand;
    if (!gs && gt.sequences.size() == 1 && pred.sequences.size() == 1) gs = &gt.sequences[0];
    if (!gs) throw ValidationError("ground truth has no sequence named '" + ps.id + "'");
    for (const SequenceAnnotation& pv : ps.views) {
      const SequenceAnnotation* gv = nullptr;
      for (const SequenceAnnotation& cand : gs->views)
        if (cand.view == pv.view) gv = &cand;
      if (!gv && gs->views.size() == 1 && ps.views.size() == 1) gv = &gs->views[0];
      if (!gv)
        throw ValidationError("ground truth sequence '" + ps.id + "' lacks view " +
                              viewpoint_letter(pv.view));
      if (pv.frames.size() != gv->frames.size())
        throw ValidationError("sequence '" + ps.id + "': prediction has " +
                              std::to_string(pv.frames.size()) + " frames, ground truth " +
                              std::to_string(gv->frames.size()));

      std::vector<Points> pj, gj, pverts, gverts;
      std::vector<VecX> pbetas;
      for (std::size_t f = 0; f < pv.frames.size(); ++f) {
        Points a = pv.frames[f].joints3d, b = gv->frames[f].joints3d;
        if (use_metric_joints) {
          a = metric_joints(a, gt.metric_joint_map);
          b = metric_joints(b, gt.metric_joint_map);
        }
        pj.push_back(a);
        gj.push_back(b);
        if (pv.frames[f].body_vertices.rows() != gv->frames[f].body_vertices.rows())
          throw DimensionError("sequence '" + ps.id + "': vertex counts differ (prediction " +
                               std::to_string(pv.frames[f].body_vertices.rows()) +
                               " vs ground truth " +
                               std::to_string(gv->frames[f].body_vertices.rows()) + ")");
        pverts.push_back(pv.frames[f].body_vertices);
        gverts.push_back(gv->frames[f].body_vertices);
        pbetas.push_back(pv.frames[f].beta);
      }
      MetricReport r;
      const Scalar to_mm = 1000.0;
      r.mpjpe = to_mm * mpjpe(pj, gj);
      r.pa_mpjpe = to_mm * pa_mpjpe(pj, gj);
      r.mpvpe = to_mm * mpvpe(pverts, gverts, !opt.raw_mpvpe);
      if (pverts.size() >= 2) {
        r.mrvpv_l1 = to_mm * mrvpv(pverts, 1);
        r.mrvpv_l2 = to_mm * mrvpv(pverts, 2);
        r.mrsv_l1 = mrsv(pbetas, 1);  // shape coefficients are unitless
        r.mrsv_l2 = mrsv(pbetas, 2);
      }
      r.frame_count = static_cast<int>(pv.frames.size());
      r.joint_count = static_cast<int>(pj.front().rows());
      r.vertex_count = static_cast<int>(pverts.front().rows());
      rows.push_back({ps.id + "/" + viewpoint_letter(pv.view), r});
    }
  }
  if (rows.empty()) throw ValidationError("nothing to evaluate");

  for (const auto& [name, r] : rows) {
    overall.mpjpe += r.mpjpe / rows.size();
    overall.pa_mpjpe += r.pa_mpjpe / rows.size();
    overall.mpvpe += r.mpvpe / rows.size();
    overall.mrvpv_l1 += r.mrvpv_l1 / rows.size();
    overall.mrvpv_l2 += r.mrvpv_l2 / rows.size();
    overall.mrsv_l1 += r.mrsv_l1 / rows.size();
    overall.mrsv_l2 += r.mrsv_l2 / rows.size();
    overall.frame_count += r.frame_count;
    overall.joint_count = r.joint_count;
    overall.vertex_count = r.vertex_count;
  }

  std::string table = metric_table(rows);
  std::cout << table;
  if (!table_path.empty()) detail::write_file(table_path, table);
  std::string report = metric_report_json(overall);
  if (!opt.out_path.empty())
    detail::write_file(opt.out_path, report + "\n");
  else
    std::cout << report << "\n";
  return 0;
}

int run_train_toy(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  BodyTemplate tmpl = load_template(opt.template_path);
  Dataset ds = import_dataset(opt.data_path);
  std::vector<ClipSample> clips = assemble_clips(ds, cfg.train);
  TrainResult result = train_toy(clips, tmpl, cfg.train);
  save_params(result.params, opt.out_path);
  if (!opt.loss_log_path.empty()) save_loss_log(result.curve, opt.loss_log_path);
  if (!result.curve.empty())
    std::cout << "loss " << result.curve.front().total << " -> " << result.curve.back().total
              << " over " << result.curve.size() << " steps\n";
  else
    std::cout << "no training steps requested; wrote initialized parameters\n";
  return 0;
}

int run_recover(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  ModelParams params = load_params(opt.params_path);
  Dataset ds = import_dataset(opt.data_path);
  const int t = cfg.train.clip_length;

  std::ostringstream out;
  for (const DatasetSequence& seq : ds.sequences)
    for (const SequenceAnnotation& ann : seq.views) {
      const int frames = static_cast<int>(ann.frames.size());
      for (int start = 0; start < frames; start += t) {
        int len = std::min(t, frames - start);
        std::vector<Image> images;
        for (int f = start; f < start + len; ++f) {
          auto path = ds.preview_path(seq.id, ann.view, f);
          if (!std::filesystem::exists(path))
            throw IoError("missing preview image " + path.string());
          images.push_back(load_pgm(path));
        }
        std::vector<RecoveryVector> phis =
            recover_clip(images, params, cfg.train.ief_iterations);
        for (int f = 0; f < len; ++f) {
          const RecoveryVector& phi = phis[static_cast<std::size_t>(f)];
          json rec;
          rec["sequence"] = seq.id;
          rec["view"] = std::string(1, viewpoint_letter(ann.view));
          rec["frame"] = start + f;
          rec["theta"] = detail::to_json_vec(phi.theta);
          rec["beta"] = detail::to_json_vec(phi.beta);
          rec["global_rotation"] = detail::to_json_vec(phi.global_rotation);
          rec["translation"] = detail::to_json_vec(phi.translation);
          rec["scale_raw"] = phi.scale_raw;
          out << rec.dump() << '\n';
        }
      }
    }
  detail::write_file(opt.out_path, out.str());
  return 0;
}

int run_transfer(const CliOptions& opt) {
  RunConfig cfg = load_run_config(opt);
  BodyTemplate tmpl = load_template(opt.template_path);
  GarmentFile garment;
  bool has_garment = !opt.garment_path.empty();
  if (has_garment) garment = load_garment(opt.garment_path);

  std::vector<RecoveryVector> phis;
  std::ifstream in(opt.phis_path);
  if (!in) throw IoError("cannot open " + opt.phis_path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = detail::parse_string(line, opt.phis_path + ":" + std::to_string(lineno));
    RecoveryVector phi;
    phi.theta = detail::vec_from_json(rec.at("theta"), "theta");
    phi.beta = Vec10(detail::vec_from_json(rec.at("beta"), "beta"));
    phi.global_rotation = Vec3(detail::vec_from_json(rec.at("global_rotation"),
                                                     "global_rotation"));
    phi.translation = Vec2(detail::vec_from_json(rec.at("translation"), "translation"));
    phi.scale_raw = rec.at("scale_raw").get<Scalar>();
    phis.push_back(std::move(phi));
  }
  GeneratedSequence seq =
      transfer(phis, tmpl, has_garment ? &garment : nullptr, cfg.scene, cfg.sim);
  export_dataset({seq}, opt.out_path, cfg.scene);
  log_info("transfer: wrote " + std::to_string(phis.size()) + " frames to " + opt.out_path);
  return 0;
}

void build_cli(CLI::App& app, CliOptions& opt, std::string& interp_a, std::string& interp_b,
               Scalar& radians_per_frame, int& min_frames, int& max_frames,
               std::string& table_path) {
  app.require_subcommand(0, 1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  CLI::App* generate = app.add_subcommand("generate", "synthesize an annotated dataset");
  generate->add_option("--poses", opt.poses, "pose sequence file(s)")->required();
  generate->add_option("--template", opt.template_path, "body template file")->required();
  generate->add_option("--garment", opt.garment_path, "garment pattern file");
  generate->add_option("--scene", opt.config_path, "config file (scene/sim sections)");
  generate->add_option("--out", opt.out_path, "output dataset directory")->required();
  generate->add_option("--seed", opt.seed, "base seed")->each([&opt](const std::string&) {
    opt.seed_set = true;
  });
  generate->add_option("--jobs", opt.jobs, "worker threads over sequences");
  generate->add_option("--leadin", opt.leadin, "T-pose lead-in frames");

  CLI::App* interp = app.add_subcommand("interp", "interpolate between contrast poses");
  interp->add_option("--a", interp_a, "first pose sequence")->required();
  interp->add_option("--b", interp_b, "second pose sequence")->required();
  interp->add_option("--out", opt.out_path, "output pose sequence")->required();
  interp->add_option("--radians-per-frame", radians_per_frame, "interpolation speed");
  interp->add_option("--min-frames", min_frames, "lower clamp");
  interp->add_option("--max-frames", max_frames, "upper clamp");

  CLI::App* drape_cmd = app.add_subcommand("drape", "drape a garment to equilibrium");
  drape_cmd->add_option("--garment", opt.garment_path, "garment pattern file")->required();
  drape_cmd->add_option("--template", opt.template_path, "body template file")->required();
  drape_cmd->add_option("--poses", opt.poses, "pose sequence (first frame used)");
  drape_cmd->add_option("--out", opt.out_path, "output OBJ")->required();
  drape_cmd->add_option("--max-seconds", opt.max_seconds, "simulated time budget");
  drape_cmd->add_option("--config", opt.config_path, "config file (sim section)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "compare two datasets");
  evaluate->add_option("--pred", opt.pred_path, "prediction dataset dir or annotation file")
      ->required();
  evaluate->add_option("--gt", opt.gt_path, "ground truth dataset dir or annotation file")
      ->required();
  evaluate->add_option("--out", opt.out_path, "metric report JSON path (default: stdout)");
  evaluate->add_option("--table", table_path, "write the plain-text table here too");
  evaluate->add_option("--joints", opt.joints, "metric | all")
      ->check(CLI::IsMember({"metric", "all"}));
  evaluate->add_flag("--raw-mpvpe", opt.raw_mpvpe, "report MPVPE without the per-vertex mean");

  CLI::App* train = app.add_subcommand("train-toy", "train the toy recovery model");
  train->add_option("--data", opt.data_path, "dataset directory")->required();
  train->add_option("--template", opt.template_path, "body template file")->required();
  train->add_option("--out", opt.out_path, "output parameter file")->required();
  train->add_option("--steps", opt.steps, "override train.max_steps");
  train->add_option("--config", opt.config_path, "config file (train section)");
  train->add_option("--loss-log", opt.loss_log_path, "write the loss curve here");
  train->add_option("--seed", opt.seed, "seed override")->each([&opt](const std::string&) {
    opt.seed_set = true;
  });
  train->add_option("--jobs", opt.jobs, "batch-element threads");

  CLI::App* recover = app.add_subcommand("recover", "run the model over a dataset");
  recover->add_option("--params", opt.params_path, "trained parameter file")->required();
  recover->add_option("--data", opt.data_path, "dataset directory")->required();
  recover->add_option("--out", opt.out_path, "recovery vector JSONL output")->required();
  recover->add_option("--clip-length", opt.clip_length, "frames per recurrent clip");
  recover->add_option("--config", opt.config_path, "config file (train section)");

  CLI::App* transfer_cmd = app.add_subcommand("transfer", "re-animate recovered vectors");
  transfer_cmd->add_option("--phis", opt.phis_path, "recovery vector JSONL file")->required();
  transfer_cmd->add_option("--template", opt.template_path, "body template file")->required();
  transfer_cmd->add_option("--garment", opt.garment_path, "garment pattern file");
  transfer_cmd->add_option("--scene", opt.config_path, "config file (scene/sim sections)");
  transfer_cmd->add_option("--out", opt.out_path, "output dataset directory")->required();
}

}  // namespace

std::string cli_full_help() {
  CLI::App app{"meshforge: annotated human motion synthesis and recovery"};
  CliOptions opt;
  std::string a, b, table;
  Scalar rpf = 0.05;
  int minf = 10, maxf = 300;
  build_cli(app, opt, a, b, rpf, minf, maxf, table);
  std::ostringstream out;
  out << app.help();
  for (const CLI::App* sub : app.get_subcommands({})) out << '\n' << sub->help();
  return out.str();
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"meshforge: annotated human motion synthesis and recovery"};
  CliOptions opt;
  std::string interp_a, interp_b, table_path;
  Scalar radians_per_frame = 0.05;
  int min_frames = 10, max_frames = 300;
  build_cli(app, opt, interp_a, interp_b, radians_per_frame, min_frames, max_frames, table_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand("generate")) return run_generate(opt);
    if (app.got_subcommand("interp"))
      return run_interp(opt, interp_a, interp_b, radians_per_frame, min_frames, max_frames);
    if (app.got_subcommand("drape")) return run_drape(opt);
    if (app.got_subcommand("evaluate")) return run_evaluate(opt, table_path);
    if (app.got_subcommand("train-toy")) return run_train_toy(opt);
    if (app.got_subcommand("recover")) return run_recover(opt);
    if (app.got_subcommand("transfer")) return run_transfer(opt);
    std::cout << app.help();
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DegeneracyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace meshforge
