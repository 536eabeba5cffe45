#include <algorithm>
#include <cmath>
#include <limits>

#include "meshforge/error.hpp"
#include "meshforge/scene_gen.hpp"

namespace meshforge {

namespace {

constexpr Scalar kNearPlane = 1e-4;

struct ScreenVertex {
  Scalar u, v, inv_z;
};

Scalar edge(const ScreenVertex& a, const ScreenVertex& b, Scalar px, Scalar py) {
  return (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
}

// cam_points rows: (screen u, screen v, camera z)
void rasterize_mesh(const Points& cam_points, const Faces& faces, PreviewMode mode, Image& img) {
  std::vector<ScreenVertex> screen(static_cast<std::size_t>(cam_points.rows()));
  std::vector<bool> in_front(screen.size());
  for (Eigen::Index i = 0; i < cam_points.rows(); ++i) {
    Scalar z = cam_points(i, 2);
    in_front[static_cast<std::size_t>(i)] = z > kNearPlane;
    screen[static_cast<std::size_t>(i)] = {cam_points(i, 0), cam_points(i, 1),
                                           z > kNearPlane ? 1.0 / z : 0.0};
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const ScreenVertex& a = screen[static_cast<std::size_t>(faces(f, 0))];
    const ScreenVertex& b = screen[static_cast<std::size_t>(faces(f, 1))];
    const ScreenVertex& c = screen[static_cast<std::size_t>(faces(f, 2))];
    if (!in_front[static_cast<std::size_t>(faces(f, 0))] ||
        !in_front[static_cast<std::size_t>(faces(f, 1))] ||
        !in_front[static_cast<std::size_t>(faces(f, 2))])
      continue;  // no near-plane clipping; the body stays well in front
    Scalar area = edge(a, b, c.u, c.v);
    if (std::abs(area) < 1e-12) continue;
    int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.u, b.u, c.u}))));
    int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max({a.u, b.u, c.u}))));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.v, b.v, c.v}))));
    int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max({a.v, b.v, c.v}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        Scalar px = x + 0.5, py = y + 0.5;
        Scalar w0 = edge(b, c, px, py) / area;
        Scalar w1 = edge(c, a, px, py) / area;
        Scalar w2 = edge(a, b, px, py) / area;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        if (mode == PreviewMode::Silhouette) {
          img.at(x, y) = 1.0;
        } else {
          Scalar inv_z = w0 * a.inv_z + w1 * b.inv_z + w2 * c.inv_z;
          if (inv_z <= 0) continue;
          img.at(x, y) = std::min(img.at(x, y), 1.0 / inv_z);
        }
      }
  }
}

}  // namespace

Image rasterize_preview(const AnnotatedFrame& frame, const Faces& body_faces,
                        const Faces& cloth_faces, PreviewMode mode) {
  const int res = frame.camera.resolution;
  Image img(res, res, mode == PreviewMode::Silhouette
                          ? 0.0
                          : std::numeric_limits<Scalar>::infinity());

  const Scalar f_px = focal_pixels(frame.camera);
  const Scalar center = res / 2.0;
  auto to_screen = [&](const Points& world) {
    Points cam = world_to_camera(frame.camera, world);
    Points screen(cam.rows(), 3);
    for (Eigen::Index i = 0; i < cam.rows(); ++i) {
      Scalar z = cam(i, 2);
      if (z > kNearPlane) {
        screen(i, 0) = f_px * cam(i, 0) / z + center;
        screen(i, 1) = f_px * cam(i, 1) / z + center;
      } else {
        screen(i, 0) = -1;
        screen(i, 1) = -1;
      }
      screen(i, 2) = z;
    }
    return screen;
  };

  if (frame.body_vertices.rows() > 0 && body_faces.rows() > 0)
    rasterize_mesh(to_screen(frame.body_vertices), body_faces, mode, img);
  if (frame.cloth_vertices && frame.cloth_vertices->rows() > 0 && cloth_faces.rows() > 0)
    rasterize_mesh(to_screen(*frame.cloth_vertices), cloth_faces, mode, img);
  return img;
}

}  // namespace meshforge
