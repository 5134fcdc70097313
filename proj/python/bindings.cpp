#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "grca/commands.hpp"
#include "grca/io.hpp"

namespace py = pybind11;
using namespace grca;

namespace {

py::dict parsed_to_dict(const ParsedOutput& p) {
  py::dict d;
  d["answer"] = p.answer;
  d["description"] = p.description;
  d["bbox2d"] = p.bbox2d;
  d["bbox3d"] = p.bbox3d;
  d["kpts2d"] = p.kpts2d;
  d["kpts3d"] = p.kpts3d;
  py::dict status, spans;
  for (const Field f : kGeometricFields) {
    const std::string name(field_name(f));
    status[name.c_str()] = std::string(status_name(p.status_of(f)));
    if (const auto& s = p.span[index(f)]) {
      spans[name.c_str()] = py::make_tuple(s->start, s->end);
    } else {
      spans[name.c_str()] = py::none();
    }
  }
  d["status"] = status;
  d["spans"] = spans;
  return d;
}

TokenizerMode tokenizer_mode(const std::string& s) {
  if (s == "char") return TokenizerMode::kChar;
  if (s == "boundary") return TokenizerMode::kBoundary;
  throw Error("unknown tokenizer '" + s + "'");
}

std::string role_name(TokenRole r) {
  return r == TokenRole::kBackground ? "background" : std::string(field_name(static_cast<Field>(r)));
}

/// Route one group given as (pieces, rewards) pairs; rewards maps field
/// names and optionally "rpc" to floats.
py::dict route_group(const std::vector<std::pair<std::vector<std::string>, std::map<std::string, double>>>& members,
                     const std::string& mode, double lambda, double std_eps, int bins) {
  GroupRollout group;
  for (const auto& [pieces, rewards] : members) {
    const TokenizerView view(pieces);
    RolloutMember m;
    m.parsed = parse_structured_output(view.text(), bins);
    m.partition = char_to_token_spans(view, m.parsed);
    for (const Field f : kGeometricFields) {
      const auto it = rewards.find(std::string(field_name(f)));
      if (it == rewards.end()) throw Error("missing reward '" + std::string(field_name(f)) + "'");
      m.rewards.field[index(f)] = it->second;
    }
    if (const auto it = rewards.find("rpc"); it != rewards.end()) m.rewards.rpc = it->second;
    group.members.push_back(std::move(m));
  }
  const RoutedAdvantages r = route_advantages(group, parse_mode(mode), {lambda, std_eps});
  py::dict out;
  out["per_token"] = r.per_token;
  out["field_advantages"] = r.field_adv;
  out["rpc_advantages"] = r.rpc_adv;
  out["background_advantages"] = r.background_adv;
  out["broadcast_advantages"] = r.broadcast_adv;
  return out;
}

}  // namespace

PYBIND11_MODULE(_grca, m) {
  m.doc() = "Geometric reward credit assignment engine";
  py::register_exception<Error>(m, "GrcaError", PyExc_ValueError);

  py::class_<Box2D>(m, "Box2D")
      .def(py::init<double, double, double, double>(), py::arg("x_min"), py::arg("y_min"),
           py::arg("x_max"), py::arg("y_max"))
      .def_readwrite("x_min", &Box2D::x_min)
      .def_readwrite("y_min", &Box2D::y_min)
      .def_readwrite("x_max", &Box2D::x_max)
      .def_readwrite("y_max", &Box2D::y_max)
      .def("area", &Box2D::area)
      .def("__repr__", [](const Box2D& b) {
        return "Box2D(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " +
               std::to_string(b.x_max) + ", " + std::to_string(b.y_max) + ")";
      });

  py::class_<Box3D>(m, "Box3D")
      .def(py::init<double, double, double, double, double, double>(), py::arg("x_min"),
           py::arg("y_min"), py::arg("z_min"), py::arg("x_max"), py::arg("y_max"), py::arg("z_max"))
      .def_readwrite("x_min", &Box3D::x_min)
      .def_readwrite("y_min", &Box3D::y_min)
      .def_readwrite("z_min", &Box3D::z_min)
      .def_readwrite("x_max", &Box3D::x_max)
      .def_readwrite("y_max", &Box3D::y_max)
      .def_readwrite("z_max", &Box3D::z_max)
      .def("volume", &Box3D::volume);

  py::class_<CameraCalibration>(m, "CameraCalibration")
      .def(py::init([](const Eigen::Matrix3d& K, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
             CameraCalibration c{K, R, t};
             c.validate();
             return c;
           }),
           py::arg("K"), py::arg("R"), py::arg("t"))
      .def_readonly("K", &CameraCalibration::K)
      .def_readonly("R", &CameraCalibration::R)
      .def_readonly("t", &CameraCalibration::t);

  m.def("iou_2d", &iou_2d);
  m.def("iou_3d", &iou_3d);
  m.def("keypoint_containment_2d", [](const std::vector<Eigen::Vector2d>& pts, const Box2D& box) {
    return keypoint_containment(KeypointSet2D{pts}, box);
  });
  m.def("keypoint_containment_3d", [](const std::vector<Eigen::Vector3d>& pts, const Box3D& box) {
    return keypoint_containment(KeypointSet3D{pts}, box);
  });
  m.def(
      "project_corners",
      [](const Box3D& box, const CameraCalibration& cal) -> py::object {
        const Projection p = project_corners(box, cal);
        if (!p.valid) return py::none();
        return py::cast(enclosing_box_2d(p.points));
      },
      "Enclosing 2D box of the projected corners, or None when a corner is behind the camera.");
  m.def("reprojection_consistency", &reprojection_consistency);
  m.def(
      "quantize", [](double v, double lo, double hi, int bins) { return quantize(v, {lo, hi, bins}); },
      py::arg("value"), py::arg("lo") = 0.0, py::arg("hi") = 1.0, py::arg("bins") = 1000);
  m.def(
      "dequantize", [](int b, double lo, double hi, int bins) { return dequantize(b, {lo, hi, bins}); },
      py::arg("bin"), py::arg("lo") = 0.0, py::arg("hi") = 1.0, py::arg("bins") = 1000);

  m.def(
      "parse_structured_output",
      [](const std::string& text, int bins) { return parsed_to_dict(parse_structured_output(text, bins)); },
      py::arg("text"), py::arg("bins") = 1000);
  m.def("tokenize", [](const std::string& text, const std::string& mode) {
    return reference_tokenizer(text, tokenizer_mode(mode)).pieces();
  }, py::arg("text"), py::arg("mode") = "boundary");
  m.def(
      "token_roles",
      [](const std::vector<std::string>& pieces, int bins) {
        const TokenizerView view(pieces);
        const TokenSpanPartition part = char_to_token_spans(view, parse_structured_output(view.text(), bins));
        std::vector<std::string> roles;
        for (const TokenRole r : part.roles) roles.push_back(role_name(r));
        return roles;
      },
      py::arg("pieces"), py::arg("bins") = 1000);

  m.def("standardize_group", [](const std::vector<double>& v, double eps) { return standardize_group(v, eps); },
        py::arg("values"), py::arg("eps") = kDefaultStdEps);
  m.def("background_advantage",
        [](const std::vector<double>& f, double rpc, double lambda) { return background_advantage(f, rpc, lambda); },
        py::arg("field_advantages"), py::arg("rpc_advantage"), py::arg("lambda_") = kDefaultLambda);
  m.def("route_group", &route_group, py::arg("members"), py::arg("mode") = "routed",
        py::arg("lambda_") = kDefaultLambda, py::arg("std_eps") = kDefaultStdEps, py::arg("bins") = 1000);

  py::class_<sim::SimConfig>(m, "SimConfig")
      .def(py::init<>())
      .def_readwrite("seed", &sim::SimConfig::seed)
      .def_readwrite("scene_count", &sim::SimConfig::scene_count)
      .def_property(
          "mode", [](const sim::SimConfig& c) { return std::string(mode_name(c.mode)); },
          [](sim::SimConfig& c, const std::string& s) { c.mode = parse_mode(s); })
      .def_readwrite("lambda_", &sim::SimConfig::lambda)
      .def_readwrite("group_size", &sim::SimConfig::group_size)
      .def_readwrite("clip_eps", &sim::SimConfig::clip_eps)
      .def_readwrite("std_eps", &sim::SimConfig::std_eps)
      .def_readwrite("steps", &sim::SimConfig::steps)
      .def_readwrite("scenes_per_step", &sim::SimConfig::scenes_per_step)
      .def_readwrite("inner_epochs", &sim::SimConfig::inner_epochs)
      .def_readwrite("lr", &sim::SimConfig::lr)
      .def_readwrite("temperature", &sim::SimConfig::temperature)
      .def_readwrite("eval_every", &sim::SimConfig::eval_every)
      .def_readwrite("threads", &sim::SimConfig::threads)
      .def_property(
          "warmup_steps", [](const sim::SimConfig& c) { return c.warmup.steps; },
          [](sim::SimConfig& c, int s) { c.warmup.steps = s; })
      .def("validate", &sim::SimConfig::validate)
      .def("to_json", [](const sim::SimConfig& c) { return io::to_json(c).dump(); });

  // Report-producing calls return JSON text; the Python package decodes it.
  m.def("_simulate", [](const sim::SimConfig& c) {
    py::gil_scoped_release release;
    return io::to_json(sim::simulate(c)).dump();
  });
  m.def(
      "_analyze_variance",
      [](const sim::SimConfig& c, int mid_steps, int rollouts, int scene) {
        py::gil_scoped_release release;
        return io::to_json(sim::analyze_variance(c, mid_steps, rollouts, scene)).dump();
      },
      py::arg("config"), py::arg("mid_steps") = 50, py::arg("rollouts") = 10000, py::arg("scene") = 0);
  m.def(
      "_score",
      [](const std::string& pred, const std::string& gt, std::optional<std::string> calib,
         std::optional<std::string> ranges) {
        cli::ScoreOptions o{pred, gt, std::nullopt, std::nullopt};
        if (calib) o.calib = *calib;
        if (ranges) o.ranges = *ranges;
        return cli::cmd_score(o).output.dump();
      },
      py::arg("pred"), py::arg("gt"), py::arg("calib") = py::none(), py::arg("ranges") = py::none());
}
