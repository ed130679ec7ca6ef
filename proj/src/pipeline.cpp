#include "pillar_rcnn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <stdexcept>
#include <type_traits>

#include <json.hpp>

#include "pillar_rcnn/io.hpp"
#include "pillar_rcnn/rng.hpp"

namespace pillar_rcnn {

using nlohmann::json;

void PipelineConfig::validate() const {
  grid.validate(16);
  for (std::size_t k = 0; k < backbone.channels.size(); ++k) {
    if (backbone.channels[k] <= 0) {
      throw ValidationError("backbone.channels[" + std::to_string(k) + "] must be positive");
    }
  }
  neck.validate();
  rpn.validate();
  rcnn.validate();
  eval.validate();
  scene.validate(grid);
}

namespace {

template <typename T>
struct is_std_array : std::false_type {};
template <typename T, std::size_t N>
struct is_std_array<std::array<T, N>> : std::true_type {};

// Strict conversion: integers must be JSON integers, arrays must have the exact length.
template <typename T>
T strict_get(const json& j, const std::string& path) {
  auto wrong = [&](const std::string& want) {
    return ValidationError("config field '" + path + "' must be " + want + ", got " + j.dump());
  };
  if constexpr (is_std_array<T>::value) {
    T out{};
    if (!j.is_array() || j.size() != out.size()) throw wrong("an array of length " + std::to_string(out.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = strict_get<typename T::value_type>(j[i], path + "[" + std::to_string(i) + "]");
    }
    return out;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw wrong("a boolean");
    return j.get<bool>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!j.is_number_unsigned()) throw wrong("a non-negative integer");
    return j.get<std::uint64_t>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw wrong("an integer");
    const auto v = j.get<std::int64_t>();
    if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) throw wrong("a smaller integer");
    return static_cast<T>(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw wrong("a number");
    return j.get<T>();
  } else {
    if (!j.is_string()) throw wrong("a string");
    return j.get<std::string>();
  }
}

// Reads the keys of one JSON object section, rejecting any key not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config field '" + path_ + "' must be an object");
  }

  template <typename T>
  Section& get(const char* key, T& out) {
    keys_.push_back(key);
    if (auto it = j_.find(key); it != j_.end()) out = strict_get<T>(*it, prefix() + key);
    return *this;
  }

  const json* child(const char* key) {
    keys_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string prefix() const { return path_.empty() ? "" : path_ + "."; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(keys_.begin(), keys_.end(), key) == keys_.end()) {
        throw ValidationError("unknown config field '" + prefix() + key + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> keys_;
};

}  // namespace

PipelineConfig PipelineConfig::from_json(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(source + ": invalid JSON: " + e.what());
  }
  PipelineConfig c;
  Section top(root, "");
  top.get("seed", c.seed);
  if (const json* w = top.child("weights"); w && !w->is_null()) c.weights_path = strict_get<std::string>(*w, "weights");

  if (const json* g = top.child("grid")) {
    Section(*g, "grid")
        .get("x_min", c.grid.x_min)
        .get("x_max", c.grid.x_max)
        .get("y_min", c.grid.y_min)
        .get("y_max", c.grid.y_max)
        .get("z_min", c.grid.z_min)
        .get("z_max", c.grid.z_max)
        .get("pillar_size", c.grid.pillar_size)
        .finish();
  }
  if (const json* b = top.child("backbone")) Section(*b, "backbone").get("channels", c.backbone.channels).finish();
  if (const json* n = top.child("neck")) {
    Section(*n, "neck")
        .get("channels", c.neck.channels)
        .get("pool_stride", c.neck.pool_stride)
        .get("pool_channels", c.neck.pool_channels)
        .get("pool_source_stride", c.neck.pool_source_stride)
        .get("pool_bottom_up", c.neck.pool_bottom_up)
        .finish();
  }
  if (const json* r = top.child("rpn")) {
    Section(*r, "rpn")
        .get("beta", c.rpn.beta)
        .get("nms_iou", c.rpn.nms_iou)
        .get("top_k", c.rpn.top_k)
        .get("score_threshold", c.rpn.score_threshold)
        .get("gaussian_overlap", c.rpn.gaussian_overlap)
        .get("min_radius", c.rpn.min_radius)
        .finish();
  }
  if (const json* r = top.child("rcnn")) {
    Section(*r, "rcnn")
        .get("grid_size", c.rcnn.grid_size)
        .get("hidden", c.rcnn.hidden)
        .get("seg_hidden", c.rcnn.seg_hidden)
        .get("num_samples", c.rcnn.num_samples)
        .get("positive_fraction", c.rcnn.positive_fraction)
        .get("positive_iou", c.rcnn.positive_iou)
        .finish();
  }
  if (const json* e = top.child("eval")) {
    Section(*e, "eval")
        .get("iou_thresholds", c.eval.iou_thresholds)
        .get("interpolation_points", c.eval.interpolation_points)
        .finish();
  }
  if (const json* s = top.child("scene")) {
    Section(*s, "scene")
        .get("counts", c.scene.counts)
        .get("mean_size", c.scene.mean_size)
        .get("size_jitter", c.scene.size_jitter)
        .get("min_points", c.scene.min_points)
        .get("max_points", c.scene.max_points)
        .get("clutter_density", c.scene.clutter_density)
        .get("ground_z", c.scene.ground_z)
        .get("surface_inset", c.scene.surface_inset)
        .get("placement_margin", c.scene.placement_margin)
        .get("max_attempts", c.scene.max_attempts)
        .finish();
  }
  top.finish();
  c.scene.seed = c.seed;
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return from_json(io::read_file(path), path.string());
}

std::string PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["weights"] = weights_path.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(weights_path);
  j["grid"] = {{"x_min", grid.x_min}, {"x_max", grid.x_max}, {"y_min", grid.y_min}, {"y_max", grid.y_max},
               {"z_min", grid.z_min}, {"z_max", grid.z_max}, {"pillar_size", grid.pillar_size}};
  j["backbone"] = {{"channels", backbone.channels}};
  j["neck"] = {{"channels", neck.channels},
               {"pool_stride", neck.pool_stride},
               {"pool_channels", neck.pool_channels},
               {"pool_source_stride", neck.pool_source_stride},
               {"pool_bottom_up", neck.pool_bottom_up}};
  j["rpn"] = {{"beta", rpn.beta},
              {"nms_iou", rpn.nms_iou},
              {"top_k", rpn.top_k},
              {"score_threshold", rpn.score_threshold},
              {"gaussian_overlap", rpn.gaussian_overlap},
              {"min_radius", rpn.min_radius}};
  j["rcnn"] = {{"grid_size", rcnn.grid_size},
               {"hidden", rcnn.hidden},
               {"seg_hidden", rcnn.seg_hidden},
               {"num_samples", rcnn.num_samples},
               {"positive_fraction", rcnn.positive_fraction},
               {"positive_iou", rcnn.positive_iou}};
  j["eval"] = {{"iou_thresholds", eval.iou_thresholds}, {"interpolation_points", eval.interpolation_points}};
  j["scene"] = {{"counts", scene.counts},
                {"mean_size", scene.mean_size},
                {"size_jitter", scene.size_jitter},
                {"min_points", scene.min_points},
                {"max_points", scene.max_points},
                {"clutter_density", scene.clutter_density},
                {"ground_z", scene.ground_z},
                {"surface_inset", scene.surface_inset},
                {"placement_margin", scene.placement_margin},
                {"max_attempts", scene.max_attempts}};
  return j.dump(2) + "\n";
}

std::vector<WeightSpec> pipeline_weight_specs(const PipelineConfig& cfg) {
  std::vector<WeightSpec> specs = BackboneWeights<float>::specs(cfg.backbone);
  auto append = [&](const std::vector<WeightSpec>& more) { specs.insert(specs.end(), more.begin(), more.end()); };
  append(NeckWeights<float>::specs(cfg.neck, cfg.backbone));
  for (int stride : kRpnStrides) append(RpnHeadWeights::specs(stride, cfg.neck.channels));
  append(RcnnWeights<float>::specs(cfg.rcnn, cfg.neck.pool_channels));
  return specs;
}

WeightStore load_or_init_weights(const PipelineConfig& cfg) {
  const auto specs = pipeline_weight_specs(cfg);
  if (cfg.weights_path.empty()) {
    WeightStore store;
    store.add_random(specs, derive_seed(cfg.seed, fnv1a("weights")));
    return store;
  }
  WeightStore store = WeightStore::load(cfg.weights_path);
  store.validate(specs);
  return store;
}

Model Model::from_store(const WeightStore& store, const PipelineConfig& cfg) {
  Model m;
  m.backbone = BackboneWeights<float>::from_store(store, cfg.backbone);
  m.neck = NeckWeights<float>::from_store(store, cfg.neck, cfg.backbone);
  for (int stride : kRpnStrides) m.heads.push_back(RpnHeadWeights::from_store(store, stride, cfg.neck.channels));
  m.rcnn = RcnnWeights<float>::from_store(store, cfg.rcnn, cfg.neck.pool_channels);
  return m;
}

std::vector<StageDims> expected_dims(const PipelineConfig& cfg) {
  const int nx = cfg.grid.nx(), ny = cfg.grid.ny();
  const auto& ch = cfg.backbone.channels;
  std::vector<StageDims> dims;
  for (int k = 1; k <= 5; ++k) {
    const int s = 1 << (k - 1);
    dims.push_back({"C" + std::to_string(k), s, ny / s, nx / s, ch[static_cast<std::size_t>(k - 1)]});
  }
  dims.push_back({"P3", 4, ny / 4, nx / 4, cfg.neck.channels});
  dims.push_back({"P4", 8, ny / 8, nx / 8, cfg.neck.channels});
  const int ps = cfg.neck.pool_stride;
  dims.push_back({"pool", ps, ny / ps, nx / ps, cfg.neck.pool_channels});
  return dims;
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out), last_(std::chrono::steady_clock::now()) {}
  void lap(const char* stage) {
    const auto now = std::chrono::steady_clock::now();
    out_.push_back({stage, std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& out_;
  std::chrono::steady_clock::time_point last_;
};

template <typename M>
StageDims dims_of(const std::string& name, const M& m) {
  if constexpr (std::is_same_v<M, SparseVolumef>) {
    return {name, m.stride, m.ny, m.nx, static_cast<int>(m.channels())};
  } else {
    return {name, m.stride, m.height, m.width, static_cast<int>(m.channels())};
  }
}

}  // namespace

DetectionRun run_detection(const PointCloud& cloud, const Model& model, const PipelineConfig& cfg) {
  DetectionRun run;
  StageClock clock(run.timings);

  const SparseVolumef pillars = pillarize(cloud, cfg.grid, model.backbone.encoder);
  clock.lap("pillarize");
  const BackboneOutput<float> bb = backbone_forward(pillars, model.backbone);
  clock.lap("backbone");
  const FeaturePyramid<float> pyramid = build_pyramid(bb, model.neck);
  clock.lap("pyramid");

  std::vector<Detection> proposals;
  for (std::size_t k = 0; k < kRpnStrides.size(); ++k) {
    const HeadOutput head = rpn_head_forward(pyramid.levels.at(kRpnStrides[k]), model.heads[k]);
    auto level = decode_proposals(head, cfg.grid, cfg.rpn);
    proposals.insert(proposals.end(), level.begin(), level.end());
  }
  clock.lap("decode");
  rectify_detections(proposals, cfg.rpn.beta);
  clock.lap("rectify");
  run.proposals = nms_3d(proposals, cfg.rpn.nms_iou);
  clock.lap("nms");
  const FeatureMapf pool = build_pooling_map(bb, pyramid, model.neck, cfg.neck);
  clock.lap("pooling_map");

  for (int k = 1; k <= 4; ++k) run.dims.push_back(dims_of("C" + std::to_string(k), bb.level(k)));
  run.dims.push_back(dims_of("C5", bb.c5));
  run.dims.push_back(dims_of("P3", pyramid.p3()));
  run.dims.push_back(dims_of("P4", pyramid.p4()));
  run.dims.push_back(dims_of("pool", pool));
  const auto want = expected_dims(cfg);
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto& a = run.dims[i];
    const auto& b = want[i];
    if (a.stride != b.stride || a.height != b.height || a.width != b.width || a.channels != b.channels) {
      throw std::logic_error("shape contract: " + a.name + " is " + std::to_string(a.height) + "x" +
                             std::to_string(a.width) + "x" + std::to_string(a.channels) + ", expected " +
                             std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                             std::to_string(b.channels));
    }
  }

  if (pillars.size() == 0) run.proposals.clear();
  run.detections = refine(run.proposals, pool, model.rcnn, cfg.rcnn, cfg.grid, cfg.rpn.beta);
  clock.lap("refine");
  return run;
}

}  // namespace pillar_rcnn
