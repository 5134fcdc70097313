#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace grca {

/// Thrown for contract violations across the engine (bad input, bad config).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Box2D {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
  bool operator==(const Box2D&) const = default;
};

struct Box3D {
  double x_min = 0, y_min = 0, z_min = 0, x_max = 0, y_max = 0, z_max = 0;

  double volume() const { return (x_max - x_min) * (y_max - y_min) * (z_max - z_min); }
  bool valid() const { return x_min <= x_max && y_min <= y_max && z_min <= z_max; }
  bool contains(const Eigen::Vector3d& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max &&
           p.z() >= z_min && p.z() <= z_max;
  }
  /// Corner j has bit 0 -> x, bit 1 -> y, bit 2 -> z selecting max over min.
  std::array<Eigen::Vector3d, 8> corners() const;
  bool operator==(const Box3D&) const = default;
};

/// Predicted or annotated keypoints; 2D and 3D sets are distinct types so the
/// dimensionality flag cannot disagree with the points.
struct KeypointSet2D {
  std::vector<Eigen::Vector2d> points;
};
struct KeypointSet3D {
  std::vector<Eigen::Vector3d> points;
};

/// Pinhole camera: x_img ~ K (R x_world + t).
struct CameraCalibration {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  /// Throws Error when K is not upper-triangular with positive focal
  /// entries and K(2,2)=1, or R is not a rotation within 1e-6.
  void validate() const;
};

/// Uniform binning of [lo, hi] into bins 0..bin_count inclusive.
struct QuantRange {
  double lo = 0.0;
  double hi = 1.0;
  int bin_count = 1000;

  void validate() const;
  double bin_width() const { return (hi - lo) / bin_count; }
};

double iou_2d(const Box2D& a, const Box2D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// Fraction of keypoints inside the closed box; 0 for an empty set.
double keypoint_containment(const KeypointSet2D& kpts, const Box2D& box);
double keypoint_containment(const KeypointSet3D& kpts, const Box3D& box);

inline constexpr double kDepthEpsilon = 1e-6;

struct Projection {
  std::array<Eigen::Vector2d, 8> points;
  std::array<double, 8> depths{};
  bool valid = false;
};

/// Projects the eight corners of an axis-aligned box. The projection is
/// invalid when any corner has homogeneous depth <= kDepthEpsilon.
Projection project_corners(const Box3D& box, const CameraCalibration& cal);

Box2D enclosing_box_2d(std::span<const Eigen::Vector2d> points);

/// Clamps v into [lo, hi] and rounds to the nearest bin.
int quantize(double v, const QuantRange& r);
double dequantize(int bin, const QuantRange& r);

}  // namespace grca
