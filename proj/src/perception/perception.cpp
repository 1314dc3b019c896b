#include "deskbot/perception/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "deskbot/common/rng.hpp"

namespace deskbot::perception {

namespace {

Vec3 ReadVec3(const Json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) {
    throw Error(ErrorCode::kConfig, std::string("expected 3-vector for '") + key + "'");
  }
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

Json WriteVec3(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

void ClipSpan(double& lo, double& hi, double limit) {
  lo = std::clamp(lo, 0.0, limit);
  hi = std::clamp(hi, 0.0, limit);
  if (hi - lo < 1.0) {
    hi = std::min(lo + 1.0, limit);
    lo = hi - 1.0;
  }
}

}  // namespace

std::string_view LightingName(Lighting l) { return l == Lighting::kDim ? "dim" : "bright"; }

Lighting ParseLighting(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "bright") return Lighting::kBright;
  if (s == "dim") return Lighting::kDim;
  throw Error(ErrorCode::kConfig, "unknown lighting '" + std::string(name) + "'");
}

void SceneObject::Validate() const {
  if (class_label.empty()) throw Error(ErrorCode::kInvalidArgument, "object has empty class label");
  if (!center_world.allFinite() || !half_extents.allFinite() || (half_extents.array() <= 0).any()) {
    throw Error(ErrorCode::kInvalidArgument,
                "object " + std::to_string(id) + " needs finite center and positive half extents");
  }
}

void Scene::Validate() const {
  if (!(clutter_fraction >= 0.0 && clutter_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "clutter_fraction outside [0, 1]");
  }
  std::set<int> ids;
  for (const auto& o : objects) {
    o.Validate();
    if (!ids.insert(o.id).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate object id " + std::to_string(o.id));
    }
  }
}

const SceneObject* Scene::Find(int id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

const SceneObject* Scene::FindClass(std::string_view label) const {
  const SceneObject* best = nullptr;
  for (const auto& o : objects) {
    if (o.class_label == label && (!best || o.id < best->id)) best = &o;
  }
  return best;
}

int Scene::NextId() const {
  int next = 0;
  for (const auto& o : objects) next = std::max(next, o.id + 1);
  return next;
}

Scene Scene::FromJson(const Json& j) {
  Scene s;
  s.lighting = ParseLighting(j.value("lighting", "bright"));
  s.clutter_fraction = j.value("clutter_fraction", 0.0);
  int auto_id = 0;
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.id = o.value("id", auto_id);
    obj.class_label = o.at("class").get<std::string>();
    obj.center_world = ReadVec3(o, "center");
    obj.half_extents = ReadVec3(o, "half_extents");
    obj.graspable = o.value("graspable", false);
    auto_id = obj.id + 1;
    s.objects.push_back(std::move(obj));
  }
  s.Validate();
  return s;
}

Scene Scene::Load(const std::filesystem::path& path) { return FromJson(LoadJsonFile(path)); }

Json Scene::ToJson() const {
  Json objs = Json::array();
  for (const auto& o : objects) {
    objs.push_back({{"id", o.id},
                    {"class", o.class_label},
                    {"center", WriteVec3(o.center_world)},
                    {"half_extents", WriteVec3(o.half_extents)},
                    {"graspable", o.graspable}});
  }
  return {{"lighting", LightingName(lighting)}, {"clutter_fraction", clutter_fraction},
          {"objects", objs}};
}

void CameraModel::Validate() const {
  if (width_px <= 0 || height_px <= 0 || !(scale > 0) || !(near > 0) || !(near < far)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid camera model");
  }
}

Vec2 CameraModel::Project(const Vec3& p_cam) const {
  const Vec2 c = PrincipalPoint();
  return {c.x() + p_cam.x() / scale, c.y() - p_cam.y() / scale};
}

CameraModel CameraModel::FromJson(const Json& j) {
  CameraModel c;
  c.width_px = j.value("width_px", c.width_px);
  c.height_px = j.value("height_px", c.height_px);
  c.scale = j.value("scale", c.scale);
  if (j.contains("depth_range")) {
    c.near = j["depth_range"].at(0).get<double>();
    c.far = j["depth_range"].at(1).get<double>();
  }
  c.Validate();
  return c;
}

DepthImage::DepthImage(int width, int height, double fill)
    : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

void DepthImage::WritePgm(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "P5\n" << width_ << ' ' << height_ << "\n65535\n";
  for (double z : data_) {
    const auto mm = static_cast<uint16_t>(std::clamp(std::lround(z * 1000.0), 0L, 65535L));
    const char be[2] = {static_cast<char>(mm >> 8), static_cast<char>(mm & 0xff)};
    out.write(be, 2);
  }
}

std::optional<double> RayHit(const SceneObject& obj, const Transform4& camera_pose_world,
                             double x, double y) {
  const Vec3 origin = camera_pose_world.topLeftCorner<3, 3>() * Vec3(x, y, 0.0) +
                      camera_pose_world.block<3, 1>(0, 3);
  const Vec3 dir = camera_pose_world.block<3, 1>(0, 2);
  const Vec3 lo = obj.center_world - obj.half_extents;
  const Vec3 hi = obj.center_world + obj.half_extents;
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dir[k]) < 1e-15) {
      if (origin[k] < lo[k] || origin[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t0 = (lo[k] - origin[k]) / dir[k];
    double t1 = (hi[k] - origin[k]) / dir[k];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_enter < 0.0) return std::nullopt;
  return t_enter;
}

RenderResult Render(const Scene& scene, const CameraModel& camera,
                    const Transform4& camera_pose_world) {
  camera.Validate();
  kin::CheckRigid(camera_pose_world);
  const Transform4 to_cam = kin::InverseRigid(camera_pose_world);
  RenderResult out{{}, DepthImage(camera.width_px, camera.height_px, camera.far), {}};
  std::vector<int> owner(static_cast<size_t>(camera.width_px) * camera.height_px, -1);

  std::vector<const SceneObject*> order;
  for (const auto& o : scene.objects) order.push_back(&o);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

  const Vec2 pp = camera.PrincipalPoint();
  struct Footprint {
    const SceneObject* obj;
    double u0, u1, v0, v1;
    bool labelled;
  };
  std::vector<Footprint> prints;
  for (const auto* obj : order) {
    double u0 = std::numeric_limits<double>::infinity(), u1 = -u0, v0 = u0, v1 = -u0;
    double zmax = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < 8; ++c) {
      const Vec3 corner = obj->center_world + Vec3((c & 1) ? 1 : -1, (c & 2) ? 1 : -1,
                                                   (c & 4) ? 1 : -1)
                                                  .cwiseProduct(obj->half_extents);
      const Vec3 pc = (to_cam * corner.homogeneous()).head<3>();
      const Vec2 px = camera.Project(pc);
      u0 = std::min(u0, px.x());
      u1 = std::max(u1, px.x());
      v0 = std::min(v0, px.y());
      v1 = std::max(v1, px.y());
      zmax = std::max(zmax, pc.z());
    }
    if (zmax < camera.near) continue;  // entirely behind the camera
    const Vec3 center_cam = (to_cam * obj->center_world.homogeneous()).head<3>();
    const Vec2 c = camera.Project(center_cam);
    const bool labelled = center_cam.z() > camera.near && center_cam.z() < camera.far &&
                          c.x() >= 0 && c.x() < camera.width_px && c.y() >= 0 &&
                          c.y() < camera.height_px;
    prints.push_back({obj, u0, u1, v0, v1, labelled});
  }

  for (size_t n = 0; n < prints.size(); ++n) {
    const auto& f = prints[n];
    const int i0 = std::max(0, static_cast<int>(std::floor(f.u0)));
    const int i1 = std::min(camera.width_px - 1, static_cast<int>(std::ceil(f.u1)));
    const int j0 = std::max(0, static_cast<int>(std::floor(f.v0)));
    const int j1 = std::min(camera.height_px - 1, static_cast<int>(std::ceil(f.v1)));
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const double x = (i + 0.5 - pp.x()) * camera.scale;
        const double y = -(j + 0.5 - pp.y()) * camera.scale;
        const auto t = RayHit(*f.obj, camera_pose_world, x, y);
        if (!t || *t < camera.near || *t > camera.far) continue;
        double& z = out.depth.at(i, j);
        // Strict comparison keeps the lower id on exact ties.
        if (*t < z) {
          z = *t;
          owner[static_cast<size_t>(j) * camera.width_px + i] = static_cast<int>(n);
        }
      }
    }
  }

  for (size_t n = 0; n < prints.size(); ++n) {
    const auto& f = prints[n];
    if (!f.labelled) continue;
    double u0 = f.u0, u1 = f.u1, v0 = f.v0, v1 = f.v1;
    ClipSpan(u0, u1, camera.width_px);
    ClipSpan(v0, v1, camera.height_px);
    Detection d{{u0, v0, u1 - u0, v1 - v0}, f.obj->class_label, 1.0, f.obj->id};

    int total = 0, mine = 0;
    for (int j = static_cast<int>(std::floor(v0)); j < static_cast<int>(std::ceil(v1)); ++j) {
      for (int i = static_cast<int>(std::floor(u0)); i < static_cast<int>(std::ceil(u1)); ++i) {
        const double x = (i + 0.5 - pp.x()) * camera.scale;
        const double y = -(j + 0.5 - pp.y()) * camera.scale;
        if (!RayHit(*f.obj, camera_pose_world, x, y)) continue;
        ++total;
        if (owner[static_cast<size_t>(j) * camera.width_px + i] == static_cast<int>(n)) ++mine;
      }
    }
    out.ground_truth.push_back(std::move(d));
    out.visible_fraction.push_back(total > 0 ? static_cast<double>(mine) / total : 0.0);
  }
  return out;
}

DetectorProfile DetectorProfile::FromJson(const Json& j) {
  DetectorProfile p;
  p.base_confidence = j.value("base_confidence", p.base_confidence);
  p.dim_factor = j.value("dim_factor", p.dim_factor);
  p.clutter_penalty = j.value("clutter_penalty", p.clutter_penalty);
  p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
  p.threshold = j.value("threshold", p.threshold);
  p.jitter_px = j.value("jitter_px", p.jitter_px);
  p.false_boxes_per_clutter = j.value("false_boxes_per_clutter", p.false_boxes_per_clutter);
  return p;
}

Json DetectorProfile::ToJson() const {
  return {{"base_confidence", base_confidence}, {"dim_factor", dim_factor},
          {"clutter_penalty", clutter_penalty}, {"noise_sigma", noise_sigma},
          {"threshold", threshold},             {"jitter_px", jitter_px},
          {"false_boxes_per_clutter", false_boxes_per_clutter}};
}

double ExpectedConfidence(Lighting lighting, double clutter_fraction,
                          const DetectorProfile& profile) {
  const double light = lighting == Lighting::kDim ? profile.dim_factor : 1.0;
  return profile.base_confidence * light * (1.0 - profile.clutter_penalty * clutter_fraction);
}

std::vector<Detection> Detect(const std::vector<Detection>& ground_truth, const Scene& scene,
                              const CameraModel& camera, uint64_t seed,
                              const DetectorProfile& profile) {
  const double expected = ExpectedConfidence(scene.lighting, scene.clutter_fraction, profile);
  const uint64_t box_seed = DeriveSeed(seed, HashTag("detect.box"));
  std::vector<Detection> out;
  for (size_t k = 0; k < ground_truth.size(); ++k) {
    const Detection& gt = ground_truth[k];
    // One stream per source object so adding or removing other objects does
    // not shift this object's noise.
    const uint64_t stream = gt.source_id >= 0 ? static_cast<uint64_t>(gt.source_id)
                                              : (uint64_t{1} << 40) + k;
    Rng rng(DeriveSeed(box_seed, stream));
    double conf = expected;
    if (profile.noise_sigma > 0) conf += rng.Normal(0.0, profile.noise_sigma);
    conf = std::clamp(conf, 0.0, 1.0);
    if (conf < profile.threshold) continue;

    double x0 = gt.bbox.x, y0 = gt.bbox.y;
    double x1 = x0 + gt.bbox.w, y1 = y0 + gt.bbox.h;
    if (profile.jitter_px > 0) {
      const double j = profile.jitter_px;
      x0 += rng.Uniform(-j, j);
      y0 += rng.Uniform(-j, j);
      x1 += rng.Uniform(-j, j);
      y1 += rng.Uniform(-j, j);
    }
    if (x1 < x0) std::swap(x0, x1);
    if (y1 < y0) std::swap(y0, y1);
    ClipSpan(x0, x1, camera.width_px);
    ClipSpan(y0, y1, camera.height_px);
    out.push_back({{x0, y0, x1 - x0, y1 - y0}, gt.class_label, conf, gt.source_id});
  }

  const int spurious =
      static_cast<int>(std::floor(profile.false_boxes_per_clutter * scene.clutter_fraction + 1e-9));
  const uint64_t clutter_seed = DeriveSeed(seed, HashTag("detect.clutter"));
  for (int k = 0; k < spurious; ++k) {
    Rng rng(DeriveSeed(clutter_seed, static_cast<uint64_t>(k)));
    const double w = rng.Uniform(10.0, 60.0);
    const double h = rng.Uniform(10.0, 60.0);
    const double x = rng.Uniform(0.0, camera.width_px - w);
    const double y = rng.Uniform(0.0, camera.height_px - h);
    const double conf = rng.Uniform(profile.threshold, std::max(profile.threshold, expected));
    out.push_back({{x, y, w, h}, "clutter", conf, -1});
  }
  return out;
}

Vec2 BboxCenter(const Detection& d) {
  return {d.bbox.x + d.bbox.w / 2.0, d.bbox.y + d.bbox.h / 2.0};
}

double SampleDepth(const Vec2& px, const DepthImage& depth, const CameraModel& camera) {
  if (!(px.x() >= 0 && px.x() <= depth.width() && px.y() >= 0 && px.y() <= depth.height())) {
    throw Error(ErrorCode::kOutOfBounds, "sample point outside the image");
  }
  const double fu = std::clamp(px.x() - 0.5, 0.0, depth.width() - 1.0);
  const double fv = std::clamp(px.y() - 0.5, 0.0, depth.height() - 1.0);
  const int i0 = static_cast<int>(std::floor(fu));
  const int j0 = static_cast<int>(std::floor(fv));
  const int i1 = std::min(i0 + 1, depth.width() - 1);
  const int j1 = std::min(j0 + 1, depth.height() - 1);
  const double a = fu - i0, b = fv - j0;
  const double w[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
  const double z[4] = {depth.at(i0, j0), depth.at(i1, j0), depth.at(i0, j1), depth.at(i1, j1)};
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0) continue;
    if (z[k] >= camera.far) throw Error(ErrorCode::kNoDepth, "no depth return at sample point");
    acc += w[k] * z[k];
  }
  return acc;
}

Vec3 LiftToCamera(const Vec2& center, const DepthImage& depth, const CameraModel& camera) {
  const double z = SampleDepth(center, depth, camera);
  const Vec2 pp = camera.PrincipalPoint();
  return {(center.x() - pp.x()) * camera.scale, -(center.y() - pp.y()) * camera.scale, z};
}

Transform4 CameraPose(const kin::DHChain& chain, const kin::JointVector& q) {
  return kin::ForwardKinematics(chain, q) * chain.mount();
}

Vec3 CameraToWorld(const Vec3& t_cam, const kin::DHChain& chain, const kin::JointVector& q) {
  return (CameraPose(chain, q) * t_cam.homogeneous()).head<3>();
}

LocateResult Locate(const Scene& scene, const CameraModel& camera, const kin::DHChain& chain,
                    const kin::JointVector& q, std::string_view class_label, uint64_t seed,
                    const DetectorProfile& profile) {
  const auto rendered = Render(scene, camera, CameraPose(chain, q));
  const auto dets = Detect(rendered.ground_truth, scene, camera, seed, profile);
  const Detection* best = nullptr;
  for (const auto& d : dets) {
    if (d.class_label != class_label) continue;
    if (!best || d.confidence > best->confidence ||
        (d.confidence == best->confidence &&
         (d.bbox.Area() < best->bbox.Area() ||
          (d.bbox.Area() == best->bbox.Area() && d.bbox.x < best->bbox.x)))) {
      best = &d;
    }
  }
  if (!best) return {std::nullopt, "no-detection"};
  try {
    const Vec3 cam = LiftToCamera(BboxCenter(*best), rendered.depth, camera);
    return {WorldDetection{best->class_label, CameraToWorld(cam, chain, q), best->confidence,
                           best->source_id},
            ""};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoDepth) throw;
    return {std::nullopt, "no-depth"};
  }
}

}  // namespace deskbot::perception
