#include <algorithm>
#include <set>
#include <vector>

#include "meshforge/cli.hpp"
#include "meshforge/error.hpp"
#include "meshforge/log.hpp"
#include "json_helpers.hpp"

namespace meshforge {

using nlohmann::json;

namespace {

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void reject_unknown_keys(const json& section, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : section.items()) {
    if (known.count(key)) continue;
    std::string best;
    int best_dist = 4;  // only suggest close matches
    for (const std::string& k : known) {
      int d = edit_distance(key, k);
      if (d < best_dist) {
        best_dist = d;
        best = k;
      }
    }
    std::string msg = "unknown key '" + key + "' in " + where;
    if (!best.empty()) msg += "; did you mean '" + best + "'?";
    throw ValidationError(msg);
  }
}

// fetches section[key] or logs that the default stays in force
template <typename T>
void assign(const json& section, const char* key, T& value, const std::string& where) {
  if (section.contains(key)) {
    value = section.at(key).get<T>();
  } else {
    log_info("config: " + where + "." + key + " defaulting to " +
             json(value).dump());
  }
}

}  // namespace

RunConfig validate_config(const std::filesystem::path& path) {
  json doc = detail::parse_file(path);
  reject_unknown_keys(doc, {"schema_version", "scene", "sim", "train"}, "config root");
  if (doc.contains("schema_version") && doc["schema_version"].get<int>() != 1)
    throw ValidationError("unsupported config schema_version " +
                          doc["schema_version"].dump());

  RunConfig cfg;

  json scene = doc.value("scene", json::object());
  reject_unknown_keys(scene,
                      {"seed", "viewpoints", "resolution", "sensor_mm", "focal_mm",
                       "camera_distance", "write_previews", "cloth_obj_every"},
                      "scene section");
  assign(scene, "seed", cfg.scene.seed, "scene");
  if (scene.contains("viewpoints")) {
    std::string letters = scene["viewpoints"].get<std::string>();
    cfg.scene.viewpoints.clear();
    for (char c : letters) cfg.scene.viewpoints.push_back(viewpoint_from_letter(c));
  } else {
    log_info("config: scene.viewpoints defaulting to \"EWSN\"");
  }
  assign(scene, "resolution", cfg.scene.resolution, "scene");
  assign(scene, "sensor_mm", cfg.scene.sensor_mm, "scene");
  assign(scene, "focal_mm", cfg.scene.focal_mm, "scene");
  assign(scene, "camera_distance", cfg.scene.camera_distance, "scene");
  assign(scene, "write_previews", cfg.scene.write_previews, "scene");
  assign(scene, "cloth_obj_every", cfg.scene.cloth_obj_every, "scene");
  cfg.scene.validate();

  json sim = doc.value("sim", json::object());
  reject_unknown_keys(sim,
                      {"timestep", "gravity", "air_drag", "cg_tolerance", "cg_max_iters",
                       "collision_epsilon", "friction"},
                      "sim section");
  assign(sim, "timestep", cfg.sim.timestep, "sim");
  if (sim.contains("gravity")) {
    VecX g = detail::vec_from_json(sim["gravity"], "sim.gravity");
    if (g.size() != 3) throw ValidationError("sim.gravity must have 3 components");
    cfg.sim.gravity = g;
  } else {
    log_info("config: sim.gravity defaulting to [0,0,-9.81]");
  }
  assign(sim, "air_drag", cfg.sim.air_drag, "sim");
  assign(sim, "cg_tolerance", cfg.sim.cg_tolerance, "sim");
  assign(sim, "cg_max_iters", cfg.sim.cg_max_iters, "sim");
  assign(sim, "collision_epsilon", cfg.sim.collision_epsilon, "sim");
  assign(sim, "friction", cfg.sim.friction, "sim");
  cfg.sim.validate();

  json train = doc.value("train", json::object());
  reject_unknown_keys(train,
                      {"learning_rate", "lr_decay_fraction", "batch_size", "clip_length",
                       "lambda", "ief_iterations", "adam_beta1", "adam_beta2", "adam_eps",
                       "max_steps", "seed", "jobs", "net"},
                      "train section");
  assign(train, "learning_rate", cfg.train.learning_rate, "train");
  assign(train, "lr_decay_fraction", cfg.train.lr_decay_fraction, "train");
  assign(train, "batch_size", cfg.train.batch_size, "train");
  assign(train, "clip_length", cfg.train.clip_length, "train");
  assign(train, "lambda", cfg.train.lambda, "train");
  assign(train, "ief_iterations", cfg.train.ief_iterations, "train");
  assign(train, "adam_beta1", cfg.train.adam_beta1, "train");
  assign(train, "adam_beta2", cfg.train.adam_beta2, "train");
  assign(train, "adam_eps", cfg.train.adam_eps, "train");
  assign(train, "max_steps", cfg.train.max_steps, "train");
  assign(train, "seed", cfg.train.seed, "train");
  assign(train, "jobs", cfg.train.jobs, "train");
  json net = train.value("net", json::object());
  reject_unknown_keys(net,
                      {"image_size", "conv1_channels", "conv2_channels", "feature_dim",
                       "attention_hidden", "hidden_dim", "init_hidden", "regressor_hidden"},
                      "train.net section");
  assign(net, "image_size", cfg.train.net.image_size, "train.net");
  assign(net, "conv1_channels", cfg.train.net.conv1_channels, "train.net");
  assign(net, "conv2_channels", cfg.train.net.conv2_channels, "train.net");
  assign(net, "feature_dim", cfg.train.net.feature_dim, "train.net");
  assign(net, "attention_hidden", cfg.train.net.attention_hidden, "train.net");
  assign(net, "hidden_dim", cfg.train.net.hidden_dim, "train.net");
  assign(net, "init_hidden", cfg.train.net.init_hidden, "train.net");
  assign(net, "regressor_hidden", cfg.train.net.regressor_hidden, "train.net");
  cfg.train.validate();

  return cfg;
}

std::string effective_config_json(const RunConfig& cfg) {
  json doc;
  doc["schema_version"] = 1;
  std::string letters;
  for (Viewpoint v : cfg.scene.viewpoints) letters.push_back(viewpoint_letter(v));
  doc["scene"] = {{"seed", cfg.scene.seed},
                  {"viewpoints", letters},
                  {"resolution", cfg.scene.resolution},
                  {"sensor_mm", cfg.scene.sensor_mm},
                  {"focal_mm", cfg.scene.focal_mm},
                  {"camera_distance", cfg.scene.camera_distance},
                  {"write_previews", cfg.scene.write_previews},
                  {"cloth_obj_every", cfg.scene.cloth_obj_every}};
  doc["sim"] = {{"timestep", cfg.sim.timestep},
                {"gravity", detail::to_json_vec(cfg.sim.gravity)},
                {"air_drag", cfg.sim.air_drag},
                {"cg_tolerance", cfg.sim.cg_tolerance},
                {"cg_max_iters", cfg.sim.cg_max_iters},
                {"collision_epsilon", cfg.sim.collision_epsilon},
                {"friction", cfg.sim.friction}};
  doc["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"lr_decay_fraction", cfg.train.lr_decay_fraction},
                  {"batch_size", cfg.train.batch_size},
                  {"clip_length", cfg.train.clip_length},
                  {"lambda", cfg.train.lambda},
                  {"ief_iterations", cfg.train.ief_iterations},
                  {"adam_beta1", cfg.train.adam_beta1},
                  {"adam_beta2", cfg.train.adam_beta2},
                  {"adam_eps", cfg.train.adam_eps},
                  {"max_steps", cfg.train.max_steps},
                  {"seed", cfg.train.seed},
                  {"jobs", cfg.train.jobs},
                  {"net",
                   {{"image_size", cfg.train.net.image_size},
                    {"conv1_channels", cfg.train.net.conv1_channels},
                    {"conv2_channels", cfg.train.net.conv2_channels},
                    {"feature_dim", cfg.train.net.feature_dim},
                    {"attention_hidden", cfg.train.net.attention_hidden},
                    {"hidden_dim", cfg.train.net.hidden_dim},
                    {"init_hidden", cfg.train.net.init_hidden},
                    {"regressor_hidden", cfg.train.net.regressor_hidden}}}};
  return doc.dump(2);
}

}  // namespace meshforge
