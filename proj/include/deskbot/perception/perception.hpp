#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deskbot/common/config.hpp"
#include "deskbot/kinematics/kinematics.hpp"

namespace deskbot::perception {

using kin::Transform4;
using kin::Vec3;
using Vec2 = Eigen::Vector2d;

enum class Lighting { kBright, kDim };

std::string_view LightingName(Lighting l);
Lighting ParseLighting(std::string_view name);

// Axis-aligned box in the world frame.
struct SceneObject {
  int id = 0;
  std::string class_label;
  Vec3 center_world = Vec3::Zero();
  Vec3 half_extents = Vec3::Constant(0.01);
  bool graspable = false;

  void Validate() const;
};

struct Scene {
  std::vector<SceneObject> objects;
  Lighting lighting = Lighting::kBright;
  double clutter_fraction = 0.0;

  void Validate() const;
  const SceneObject* Find(int id) const;
  // Lowest-id object of the class, or nullptr.
  const SceneObject* FindClass(std::string_view label) const;
  int NextId() const;

  static Scene FromJson(const Json& j);
  static Scene Load(const std::filesystem::path& path);
  Json ToJson() const;
};

// Orthographic depth camera looking along +z of its own frame. Image u grows
// with camera x, image v grows with camera -y.
struct CameraModel {
  int width_px = 640;
  int height_px = 480;
  double scale = 0.001;  // meters per pixel
  double near = 0.01;
  double far = 2.0;

  void Validate() const;
  Vec2 PrincipalPoint() const { return {0.5 * width_px, 0.5 * height_px}; }
  Vec2 Project(const Vec3& p_cam) const;
  static CameraModel FromJson(const Json& j);
};

// Pixel-space box; (x, y) is the top-left corner.
struct BBox {
  double x = 0, y = 0, w = 1, h = 1;
  double Area() const { return w * h; }
};

struct Detection {
  BBox bbox;
  std::string class_label;
  double confidence = 1.0;
  // Scene object the box came from; -1 for spurious boxes. Not visible to
  // consumers of a real detector, kept for scoring and debugging.
  int source_id = -1;
};

class DepthImage {
 public:
  DepthImage(int width, int height, double fill);

  int width() const { return width_; }
  int height() const { return height_; }
  double at(int u, int v) const { return data_[static_cast<size_t>(v) * width_ + u]; }
  double& at(int u, int v) { return data_[static_cast<size_t>(v) * width_ + u]; }
  const std::vector<double>& data() const { return data_; }

  // Binary 16-bit PGM, depth in millimeters.
  void WritePgm(const std::filesystem::path& path) const;

 private:
  int width_;
  int height_;
  std::vector<double> data_;
};

struct RenderResult {
  std::vector<Detection> ground_truth;
  DepthImage depth;
  // Per ground-truth box: share of its clipped pixels where that object is the
  // nearest surface.
  std::vector<double> visible_fraction;
};

RenderResult Render(const Scene& scene, const CameraModel& camera,
                    const Transform4& camera_pose_world);

// Camera-frame distance along the optical axis to the first face of `obj`
// hit by the ray through camera-frame (x, y); nullopt on a miss.
std::optional<double> RayHit(const SceneObject& obj, const Transform4& camera_pose_world,
                             double x, double y);

struct DetectorProfile {
  double base_confidence = 0.95;
  double dim_factor = 0.8;
  double clutter_penalty = 0.5;
  double noise_sigma = 0.03;
  double threshold = 0.5;
  double jitter_px = 2.0;
  double false_boxes_per_clutter = 10.0;

  static DetectorProfile FromJson(const Json& j);
  Json ToJson() const;
};

// Confidence before Gaussian noise.
double ExpectedConfidence(Lighting lighting, double clutter_fraction,
                          const DetectorProfile& profile = {});

std::vector<Detection> Detect(const std::vector<Detection>& ground_truth, const Scene& scene,
                              const CameraModel& camera, uint64_t seed,
                              const DetectorProfile& profile = {});

Vec2 BboxCenter(const Detection& d);

// Bilinear depth sample; pixel (i, j) has its center at (i + 0.5, j + 0.5).
double SampleDepth(const Vec2& px, const DepthImage& depth, const CameraModel& camera);

Vec3 LiftToCamera(const Vec2& center, const DepthImage& depth, const CameraModel& camera);

// FK(q) * mount.
Transform4 CameraPose(const kin::DHChain& chain, const kin::JointVector& q);

Vec3 CameraToWorld(const Vec3& t_cam, const kin::DHChain& chain, const kin::JointVector& q);

struct WorldDetection {
  std::string class_label;
  Vec3 position_world = Vec3::Zero();
  double confidence = 0.0;
  int source_id = -1;
};

struct LocateResult {
  std::optional<WorldDetection> found;
  std::string reason;  // "no-detection" or "no-depth" when not found
};

LocateResult Locate(const Scene& scene, const CameraModel& camera, const kin::DHChain& chain,
                    const kin::JointVector& q, std::string_view class_label, uint64_t seed,
                    const DetectorProfile& profile = {});

}  // namespace deskbot::perception
