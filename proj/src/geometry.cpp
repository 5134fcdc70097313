#include "grca/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace grca {

namespace {

double overlap(double a_lo, double a_hi, double b_lo, double b_hi) {
  return std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
}

}  // namespace

std::array<Eigen::Vector3d, 8> Box3D::corners() const {
  std::array<Eigen::Vector3d, 8> out;
  for (int j = 0; j < 8; ++j) {
    out[j] = Eigen::Vector3d((j & 1) ? x_max : x_min, (j & 2) ? y_max : y_min,
                             (j & 4) ? z_max : z_min);
  }
  return out;
}

void CameraCalibration::validate() const {
  constexpr double tol = 1e-6;
  if (!K.allFinite() || !R.allFinite() || !t.allFinite()) {
    throw Error("calibration: non-finite entries");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw Error("calibration: K must be upper-triangular");
  }
  if (K(0, 0) <= 0.0 || K(1, 1) <= 0.0) {
    throw Error("calibration: focal lengths must be positive");
  }
  if (K(2, 2) != 1.0) {
    throw Error("calibration: K[2][2] must be 1");
  }
  if (!(R.transpose() * R).isApprox(Eigen::Matrix3d::Identity(), tol) ||
      std::abs(R.determinant() - 1.0) > tol) {
    throw Error("calibration: R must be a rotation");
  }
}

void QuantRange::validate() const {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw Error("quant range: lo must be < hi");
  }
  if (bin_count < 1) {
    throw Error("quant range: bin_count must be >= 1");
  }
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double inter =
      overlap(a.x_min, a.x_max, b.x_min, b.x_max) * overlap(a.y_min, a.y_max, b.y_min, b.y_max);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double inter = overlap(a.x_min, a.x_max, b.x_min, b.x_max) *
                       overlap(a.y_min, a.y_max, b.y_min, b.y_max) *
                       overlap(a.z_min, a.z_max, b.z_min, b.z_max);
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double keypoint_containment(const KeypointSet2D& kpts, const Box2D& box) {
  if (kpts.points.empty()) return 0.0;
  const auto inside = std::count_if(kpts.points.begin(), kpts.points.end(),
                                    [&](const Eigen::Vector2d& p) { return box.contains(p); });
  return static_cast<double>(inside) / static_cast<double>(kpts.points.size());
}

double keypoint_containment(const KeypointSet3D& kpts, const Box3D& box) {
  if (kpts.points.empty()) return 0.0;
  const auto inside = std::count_if(kpts.points.begin(), kpts.points.end(),
                                    [&](const Eigen::Vector3d& p) { return box.contains(p); });
  return static_cast<double>(inside) / static_cast<double>(kpts.points.size());
}

Projection project_corners(const Box3D& box, const CameraCalibration& cal) {
  Projection proj;
  proj.valid = true;
  const auto corners = box.corners();
  for (int j = 0; j < 8; ++j) {
    const Eigen::Vector3d h = cal.K * (cal.R * corners[j] + cal.t);
    proj.depths[j] = h.z();
    if (!(h.z() > kDepthEpsilon)) {
      proj.valid = false;
      proj.points[j] = Eigen::Vector2d::Zero();
      continue;
    }
    proj.points[j] = Eigen::Vector2d(h.x() / h.z(), h.y() / h.z());
  }
  return proj;
}

Box2D enclosing_box_2d(std::span<const Eigen::Vector2d> points) {
  if (points.empty()) throw Error("no points");
  Box2D box{points[0].x(), points[0].y(), points[0].x(), points[0].y()};
  for (const auto& p : points.subspan(1)) {
    box.x_min = std::min(box.x_min, p.x());
    box.y_min = std::min(box.y_min, p.y());
    box.x_max = std::max(box.x_max, p.x());
    box.y_max = std::max(box.y_max, p.y());
  }
  return box;
}

int quantize(double v, const QuantRange& r) {
  const double clamped = std::clamp(v, r.lo, r.hi);
  const double scaled = (clamped - r.lo) / (r.hi - r.lo) * r.bin_count;
  return std::clamp(static_cast<int>(std::lround(scaled)), 0, r.bin_count);
}

double dequantize(int bin, const QuantRange& r) {
  if (bin < 0 || bin > r.bin_count) throw Error("bin out of range");
  return r.lo + static_cast<double>(bin) / r.bin_count * (r.hi - r.lo);
}

}  // namespace grca
