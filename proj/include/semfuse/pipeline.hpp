#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfuse/aaf.hpp"
#include "semfuse/dff.hpp"
#include "semfuse/geometry.hpp"
#include "semfuse/io.hpp"
#include "semfuse/optim.hpp"
#include "semfuse/semantics.hpp"
#include "semfuse/synth.hpp"
#include "semfuse/voxelizer.hpp"

namespace semfuse {

enum class Strategy { Sem2dOnly, Sem3dOnly, Aaf, AafDff };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Sem2dOnly: return "sem2d";
    case Strategy::Sem3dOnly: return "sem3d";
    case Strategy::Aaf: return "aaf";
    case Strategy::AafDff: return "aaf-dff";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& name) {
  if (name == "sem2d") return Strategy::Sem2dOnly;
  if (name == "sem3d") return Strategy::Sem3dOnly;
  if (name == "aaf") return Strategy::Aaf;
  if (name == "aaf-dff") return Strategy::AafDff;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

inline Representation representation_from_name(const std::string& name) {
  if (name == "id") return Representation::ID;
  if (name == "onehot") return Representation::ONEHOT;
  if (name == "score") return Representation::SCORE;
  throw std::invalid_argument("unknown representation '" + name + "'");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
  SceneParams scene;
  std::size_t train_scenes = 12;
  std::size_t eval_scenes = 20;
  std::uint64_t scene_seed = 100;  // train scene i uses scene_seed + i; eval uses a shifted stream
  int dilate_px = 3;
  std::size_t confusion_a = 2;
  std::size_t confusion_b = 3;
  double confusion_p = 0.3;
  OutOfViewPolicy policy = OutOfViewPolicy::BackgroundOneHot;

  CorruptionConfig corruption(std::uint64_t seed) const {
    CorruptionConfig cfg =
        confusion_p > 0.0
            ? CorruptionConfig::pair_confusion(scene.num_classes, confusion_a, confusion_b,
                                               confusion_p)
            : CorruptionConfig::identity(scene.num_classes);
    cfg.dilate_px = dilate_px;
    cfg.seed = seed;
    return cfg;
  }
};

struct ModelConfig {
  VoxelConfig voxel;
  AafConfig aaf;
  std::size_t head_hidden = 32;
  // DFF over the BEV scatter of fused semantics
  std::size_t bev_pool = 2;  // voxel cells per BEV cell along x and y
  std::size_t dff_base = 16;
  std::size_t dff_out = 16;

  ModelConfig() {
    voxel.range_min = {0.0, -16.0, -3.0};
    voxel.range_max = {40.0, 16.0, 1.0};
    voxel.voxel_size = {0.5, 0.5, 4.0};
    voxel.points_per_voxel = 8;
    // desk-scale attention widths; the library defaults keep the full sizes
    aaf.c1 = 32;
    aaf.c2 = 64;
    aaf.att_hidden = 32;
  }
};

struct TrainingConfig {
  std::size_t steps = 800;
  std::size_t batch_scenes = 2;
  double max_lr = 3e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.3;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  Representation repr = Representation::SCORE;
  Strategy strategy = Strategy::Aaf;
  DataConfig data;
  ModelConfig model;
  TrainingConfig train;
};

// ---------------------------------------------------------------------------
// Scene bundles (the on-disk / in-memory unit of data)
// ---------------------------------------------------------------------------

struct SceneBundle {
  PointCloud cloud;
  Calibration calib;
  std::vector<Box3D> boxes;
  SemanticMap2D sem2d_map;  // corrupted 2D semantic map
  Matrix sem3d_points;      // corrupted per-point one-hot 3D labels
};

inline SceneBundle build_bundle(const Scene& scene, const CorruptionConfig& corruption,
                                std::size_t num_classes) {
  SceneBundle b;
  b.cloud = scene.cloud;
  b.calib = scene.calib;
  b.boxes = scene.boxes;
  b.sem2d_map = corrupt_2d(scene.true_map, corruption);
  b.sem3d_points = corrupt_3d(labels_from_boxes(scene.cloud, scene.boxes, num_classes), corruption);
  return b;
}

inline void save_bundle(const std::filesystem::path& dir, const SceneBundle& b) {
  std::filesystem::create_directories(dir);
  write_file(dir / "cloud.bin", encode_cloud(b.cloud));
  write_file(dir / "calib.txt", encode_calibration(b.calib));
  write_file(dir / "boxes.txt", encode_boxes(b.boxes));
  write_file(dir / "sem2d.sem", encode_semantic_map(b.sem2d_map));
  write_file(dir / "sem3d.sem", encode_point_semantics(b.sem3d_points));
}

inline SceneBundle load_bundle(const std::filesystem::path& dir) {
  SceneBundle b;
  b.cloud = decode_cloud(read_file(dir / "cloud.bin"));
  b.calib = load_calibration(read_file(dir / "calib.txt"));
  b.boxes = decode_boxes(read_file(dir / "boxes.txt"));
  b.sem2d_map = decode_semantic_map(read_file(dir / "sem2d.sem"));
  b.sem3d_points = decode_point_semantics(read_file(dir / "sem3d.sem"));
  if (b.sem3d_points.rows != b.cloud.size()) {
    throw std::invalid_argument("scene bundle " + dir.string() +
                                ": sem3d row count does not match the cloud");
  }
  return b;
}

// Deterministic train/eval scene streams.
inline std::vector<SceneBundle> generate_bundles(const DataConfig& data, std::size_t count,
                                                 std::uint64_t stream_offset) {
  std::vector<SceneBundle> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = data.scene_seed + stream_offset + i;
    Scene scene = generate_scene(data.scene, scene_seed);
    out.push_back(build_bundle(scene, data.corruption(derive_seed(scene_seed, 0xdeed)),
                               data.scene.num_classes));
  }
  return out;
}

constexpr std::uint64_t kEvalSceneOffset = 1u << 20;

// ---------------------------------------------------------------------------
// Prepared scenes: voxelized, encoded, labeled
// ---------------------------------------------------------------------------

struct PreparedScene {
  VoxelGrid grid;                        // features carry the encoded semantics
  Matrix v2d, v3d;                       // per-voxel vector-space summaries (E x m)
  std::vector<std::size_t> labels;       // dominant true class per voxel
  std::vector<std::size_t> bev_cells;    // per voxel, linearized BEV cell
};

struct BevLayout {
  std::size_t height = 0;  // x axis of the grid
  std::size_t width = 0;   // y axis
};

inline BevLayout bev_layout(const VoxelConfig& voxel, std::size_t pool) {
  const auto dims = voxel.grid_dims();
  if (pool == 0 || dims[0] % pool != 0 || dims[1] % pool != 0) {
    throw std::invalid_argument("bev layout: grid dims " + std::to_string(dims[0]) + "x" +
                                std::to_string(dims[1]) + " not divisible by pool " +
                                std::to_string(pool));
  }
  BevLayout l{dims[0] / pool, dims[1] / pool};
  if (l.height % 2 != 0 || l.width % 2 != 0) {
    throw std::invalid_argument("bev layout: pooled dims must be even for the conv stack");
  }
  return l;
}

inline PreparedScene prepare_scene(const SceneBundle& bundle, Representation repr,
                                   const ModelConfig& model, OutOfViewPolicy policy) {
  const std::size_t m = bundle.sem2d_map.classes;
  Matrix sem2d_points = paint_points_2d(bundle.cloud, bundle.calib, bundle.sem2d_map, policy);

  PaintedPointCloud pcc;
  pcc.cloud = bundle.cloud;
  pcc.sem2d = encode(sem2d_points, repr);
  pcc.sem3d = encode(bundle.sem3d_points, repr);

  PreparedScene prep;
  prep.grid = voxelize(pcc, model.voxel);

  // vector-space summaries for the fusion equations (ID expands to one-hot)
  Matrix v2 = to_vector_space(sem2d_points, repr, m);
  Matrix v3 = to_vector_space(bundle.sem3d_points, repr, m);
  prep.v2d = voxel_mean_rows(prep.grid, v2);
  prep.v3d = voxel_mean_rows(prep.grid, v3);

  Matrix truth = labels_from_boxes(bundle.cloud, bundle.boxes, m);
  prep.labels = voxel_labels_from_points(prep.grid, truth);

  const BevLayout bev = bev_layout(model.voxel, model.bev_pool);
  prep.bev_cells.resize(prep.grid.num_voxels());
  for (std::size_t e = 0; e < prep.grid.num_voxels(); ++e) {
    const std::size_t bx = static_cast<std::size_t>(prep.grid.coords[e][0]) / model.bev_pool;
    const std::size_t by = static_cast<std::size_t>(prep.grid.coords[e][1]) / model.bev_pool;
    prep.bev_cells[e] = bx * bev.width + by;
  }
  return prep;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Model {
  Strategy strategy = Strategy::Aaf;
  Representation repr = Representation::SCORE;
  std::size_t num_classes = 0;
  std::size_t enc_width = 0;  // encoded semantic width (m, or 1 for ID)
  ModelConfig config;
  OutOfViewPolicy policy = OutOfViewPolicy::BackgroundOneHot;

  AafParams aaf;   // Aaf / AafDff
  DffParams dff;   // AafDff
  Mlp head;
  std::vector<double> class_weights;

  bool uses_aaf() const { return strategy == Strategy::Aaf || strategy == Strategy::AafDff; }
  bool uses_dff() const { return strategy == Strategy::AafDff; }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    if (uses_aaf()) {
      for (auto* t : aaf.parameters()) ps.push_back(t);
    }
    if (uses_dff()) {
      for (auto* t : dff.parameters()) ps.push_back(t);
    }
    for (auto* t : head.parameters()) ps.push_back(t);
    return ps;
  }
};

inline std::size_t encoded_width(Representation repr, std::size_t m) {
  return repr == Representation::ID ? 1 : m;
}

inline Model build_model(const ExperimentConfig& cfg) {
  Model model;
  model.strategy = cfg.strategy;
  model.repr = cfg.repr;
  model.num_classes = cfg.data.scene.num_classes;
  model.enc_width = encoded_width(cfg.repr, model.num_classes);
  model.config = cfg.model;
  model.policy = cfg.data.policy;

  Rng rng(derive_seed(cfg.train.seed, 0x90de1));
  const std::size_t m = model.num_classes;
  const std::size_t feature_width = 3 + 2 * model.enc_width;
  const std::size_t fused_width =
      cfg.model.aaf.combine_mode == CombineMode::Add ? m : 2 * m;

  std::size_t head_in = 0;
  switch (cfg.strategy) {
    case Strategy::Sem2dOnly:
    case Strategy::Sem3dOnly: head_in = 2 * model.enc_width; break;
    case Strategy::Aaf: head_in = fused_width; break;
    case Strategy::AafDff: head_in = fused_width + cfg.model.dff_out; break;
  }

  if (model.uses_aaf()) model.aaf = AafParams::make(feature_width, cfg.model.aaf, rng);
  if (model.uses_dff()) {
    bev_layout(cfg.model.voxel, cfg.model.bev_pool);  // validate early
    DffConfig dcfg;
    dcfg.in_channels = fused_width;
    dcfg.base_channels = cfg.model.dff_base;
    dcfg.out_channels = cfg.model.dff_out;
    model.dff = DffParams::make(dcfg, rng);
  }
  model.head = make_mlp({head_in, cfg.model.head_hidden, m}, rng, /*feature_output=*/false);
  if (cfg.strategy == Strategy::AafDff) {
    // start with the conv-feature rows silent so training begins from the
    // plain fused-semantics decision and only adds spatial context on top
    Tensor& w0 = model.head.layers.front().weight;
    for (std::size_t r = fused_width; r < head_in; ++r)
      for (std::size_t c = 0; c < cfg.model.head_hidden; ++c)
        w0.data()[r * cfg.model.head_hidden + c] = 0.0;
  }
  model.class_weights.assign(m, 1.0);
  return model;
}

// Per-voxel class logits for one prepared scene.
inline Tensor model_forward(Model& model, const PreparedScene& prep, bool training) {
  const std::size_t E = prep.grid.num_voxels();
  const auto sem = voxel_semantic_summaries(prep.grid);  // encoded-space summaries

  switch (model.strategy) {
    case Strategy::Sem2dOnly:
    case Strategy::Sem3dOnly: {
      const bool use2d = model.strategy == Strategy::Sem2dOnly;
      const std::size_t w = model.enc_width;
      Matrix gated(E, 2 * w, 0.0);
      for (std::size_t e = 0; e < E; ++e) {
        for (std::size_t c = 0; c < w; ++c) {
          if (use2d) {
            gated.at(e, c) = sem.v2d.at(e, c);
          } else {
            gated.at(e, w + c) = sem.v3d.at(e, c);
          }
        }
      }
      Tensor x = Tensor::from({E, 2 * w}, gated.data);
      return model.head.forward(x, training);
    }
    case Strategy::Aaf: {
      AafOutput out = aaf_forward(prep.grid, prep.v2d, prep.v3d, model.aaf, training);
      return model.head.forward(out.fused_sem, training);
    }
    case Strategy::AafDff: {
      AafOutput out = aaf_forward(prep.grid, prep.v2d, prep.v3d, model.aaf, training);
      const BevLayout bev = bev_layout(model.config.voxel, model.config.bev_pool);
      Tensor map = scatter_mean_to_grid(out.fused_sem, prep.bev_cells, bev.height, bev.width);
      Tensor feat = dff_forward(map, model.dff, training);
      Tensor cell_feats = gather_cells(feat, prep.bev_cells);
      return model.head.forward(concat(out.fused_sem, cell_feats, 1), training);
    }
  }
  throw std::logic_error("unknown strategy");
}

// ---------------------------------------------------------------------------
// Metrics / reports
// ---------------------------------------------------------------------------

struct Report {
  std::string strategy;
  std::string repr;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  Matrix confusion;  // m x m counts, row = true class, column = predicted
  double wall_ms = 0.0;

  std::size_t total() const {
    double s = 0.0;
    for (double v : confusion.data) s += v;
    return static_cast<std::size_t>(s);
  }
  double accuracy() const {
    double correct = 0.0, all = 0.0;
    for (std::size_t c = 0; c < confusion.rows; ++c) correct += confusion.at(c, c);
    for (double v : confusion.data) all += v;
    return all > 0.0 ? correct / all : 0.0;
  }
  double class_accuracy(std::size_t c) const {
    double row = 0.0;
    for (std::size_t p = 0; p < confusion.cols; ++p) row += confusion.at(c, p);
    return row > 0.0 ? confusion.at(c, c) / row : 0.0;
  }
  double foreground_accuracy() const {
    double correct = 0.0, all = 0.0;
    for (std::size_t c = 1; c < confusion.rows; ++c)
      for (std::size_t p = 0; p < confusion.cols; ++p) {
        all += confusion.at(c, p);
        if (p == c) correct += confusion.at(c, p);
      }
    return all > 0.0 ? correct / all : 0.0;
  }
  // fraction of background-truth voxels predicted as any foreground class
  double false_positive_rate() const {
    double bg = 0.0, fp = 0.0;
    for (std::size_t p = 0; p < confusion.cols; ++p) {
      bg += confusion.at(0, p);
      if (p != 0) fp += confusion.at(0, p);
    }
    return bg > 0.0 ? fp / bg : 0.0;
  }
  // symmetric confusion rate between two classes
  double pair_confusion_rate(std::size_t a, std::size_t b) const {
    double swapped = confusion.at(a, b) + confusion.at(b, a);
    double all = 0.0;
    for (std::size_t p = 0; p < confusion.cols; ++p) all += confusion.at(a, p) + confusion.at(b, p);
    return all > 0.0 ? swapped / all : 0.0;
  }

  // Canonical text form. Timing is telemetry and is excluded from identity
  // comparisons.
  std::string signature(bool include_timing = false) const {
    std::string s = strategy + "," + repr + ",seed=" + std::to_string(seed) +
                    ",steps=" + std::to_string(steps);
    char buf[64];
    std::snprintf(buf, sizeof(buf), ",final_loss=%.17g", final_loss);
    s += buf;
    for (double v : confusion.data) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      s += buf;
    }
    if (include_timing) {
      std::snprintf(buf, sizeof(buf), ",wall_ms=%.3f", wall_ms);
      s += buf;
    }
    return s;
  }
};

inline std::string report_csv_header() {
  return "strategy,repr,seed,acc,fg_acc,fp_rate,steps,wall_ms";
}

inline std::string report_csv_row(const Report& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.6f,%.6f,%.6f,%zu,%.1f", r.strategy.c_str(),
                r.repr.c_str(), static_cast<unsigned long long>(r.seed), r.accuracy(),
                r.foreground_accuracy(), r.false_positive_rate(), r.steps, r.wall_ms);
  return buf;
}

struct EvalResult {
  Report report;
  std::vector<std::vector<std::size_t>> preds;  // per scene, per voxel
  std::vector<std::vector<std::size_t>> trues;
};

inline EvalResult evaluate_prepared(Model& model, const std::vector<PreparedScene>& scenes) {
  EvalResult res;
  res.report.strategy = strategy_name(model.strategy);
  res.report.repr = representation_name(model.repr);
  res.report.confusion = Matrix(model.num_classes, model.num_classes, 0.0);
  for (const auto& prep : scenes) {
    Tensor logits = model_forward(model, prep, /*training=*/false);
    const std::size_t E = prep.grid.num_voxels();
    const std::size_t m = model.num_classes;
    std::vector<std::size_t> preds(E);
    for (std::size_t e = 0; e < E; ++e) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < m; ++c)
        if (logits.at(e * m + c) > logits.at(e * m + best)) best = c;
      preds[e] = best;
      res.report.confusion.at(prep.labels[e], best) += 1.0;
    }
    res.preds.push_back(std::move(preds));
    res.trues.push_back(prep.labels);
  }
  return res;
}

// Untrained per-voxel readout of one modality: argmax of the voxel's
// vector-space summary. This isolates the corruption-induced failure modes
// from any training noise.
inline Report direct_readout_report(const std::vector<PreparedScene>& scenes, bool use_2d,
                                    std::size_t m) {
  Report report;
  report.strategy = use_2d ? "sem2d" : "sem3d";
  report.repr = "score";
  report.confusion = Matrix(m, m, 0.0);
  for (const auto& prep : scenes) {
    const Matrix& sem = use_2d ? prep.v2d : prep.v3d;
    for (std::size_t e = 0; e < prep.grid.num_voxels(); ++e) {
      report.confusion.at(prep.labels[e], sem.argmax_row(e)) += 1.0;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline std::vector<double> compute_class_weights(const std::vector<PreparedScene>& scenes,
                                                 std::size_t m) {
  std::vector<double> counts(m, 0.0);
  double total = 0.0;
  for (const auto& prep : scenes)
    for (auto label : prep.labels) {
      counts[label] += 1.0;
      total += 1.0;
    }
  std::vector<double> weights(m, 1.0);
  for (std::size_t c = 0; c < m; ++c) {
    weights[c] = (total + static_cast<double>(m)) /
                 (static_cast<double>(m) * (counts[c] + 1.0));
  }
  return weights;
}

struct TrainResult {
  Model model;
  Report report;  // evaluation on the held-out scenes
};

inline TrainResult train(const ExperimentConfig& cfg, const std::vector<SceneBundle>& train_data,
                         const std::vector<SceneBundle>& eval_data) {
  const auto t0 = std::chrono::steady_clock::now();
  if (train_data.empty()) throw std::invalid_argument("train: no training scenes");

  std::vector<PreparedScene> train_prep, eval_prep;
  for (const auto& b : train_data)
    train_prep.push_back(prepare_scene(b, cfg.repr, cfg.model, cfg.data.policy));
  for (const auto& b : eval_data)
    eval_prep.push_back(prepare_scene(b, cfg.repr, cfg.model, cfg.data.policy));

  Model model = build_model(cfg);
  model.class_weights = compute_class_weights(train_prep, model.num_classes);

  AdamW opt(model.parameters(), 0.9, 0.999, 1e-8, cfg.train.weight_decay);
  OneCycleSchedule sched{cfg.train.max_lr, cfg.train.steps, cfg.train.warmup_fraction};

  double final_loss = 0.0;
  const std::size_t batch = std::max<std::size_t>(1, cfg.train.batch_scenes);
  for (std::size_t step = 0; step < cfg.train.steps; ++step) {
    opt.zero_grad();
    Tensor loss;
    for (std::size_t j = 0; j < batch; ++j) {
      const std::size_t idx = (step * batch + j) % train_prep.size();
      Tensor logits = model_forward(model, train_prep[idx], /*training=*/true);
      Tensor scene_loss =
          cross_entropy(logits, train_prep[idx].labels, model.class_weights);
      loss = (j == 0) ? scene_loss : add(loss, scene_loss);
    }
    loss = scale(loss, 1.0 / static_cast<double>(batch));
    final_loss = loss.item();
    if (!std::isfinite(final_loss)) {
      throw std::runtime_error("train: diverged at step " + std::to_string(step) +
                               " (loss = " + std::to_string(final_loss) + ")");
    }
    backward(loss);
    opt.step(sched.lr(step));
  }

  TrainResult result;
  EvalResult eval = evaluate_prepared(model, eval_prep);
  result.report = eval.report;
  result.report.seed = cfg.train.seed;
  result.report.steps = cfg.train.steps;
  result.report.final_loss = final_loss;
  result.report.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
  result.model = std::move(model);
  return result;
}

// Convenience: generate the deterministic scene streams and train.
inline TrainResult train(const ExperimentConfig& cfg) {
  const auto train_data = generate_bundles(cfg.data, cfg.data.train_scenes, 0);
  const auto eval_data = generate_bundles(cfg.data, cfg.data.eval_scenes, kEvalSceneOffset);
  return train(cfg, train_data, eval_data);
}

inline Report evaluate(Model& model, const std::vector<SceneBundle>& data) {
  std::vector<PreparedScene> prep;
  for (const auto& b : data) {
    if (b.sem2d_map.classes != model.num_classes) {
      throw std::invalid_argument("evaluate: bundle has " + std::to_string(b.sem2d_map.classes) +
                                  " classes, model expects " +
                                  std::to_string(model.num_classes));
    }
    prep.push_back(prepare_scene(b, model.repr, model.config, model.policy));
  }
  return evaluate_prepared(model, prep).report;
}

// ---------------------------------------------------------------------------
// Checkpoints: "PCK1" wrapper holding a JSON config header plus the AAF1/DFF1
// parameter containers and the head ("HED1").
// ---------------------------------------------------------------------------

inline nlohmann::json model_config_json(const Model& model) {
  const ModelConfig& mc = model.config;
  nlohmann::json j;
  j["strategy"] = strategy_name(model.strategy);
  j["repr"] = representation_name(model.repr);
  j["num_classes"] = model.num_classes;
  j["enc_width"] = model.enc_width;
  j["policy"] = model.policy == OutOfViewPolicy::BackgroundOneHot ? "background" : "zero";
  j["class_weights"] = model.class_weights;
  j["voxel"] = {{"range_min", {mc.voxel.range_min.x, mc.voxel.range_min.y, mc.voxel.range_min.z}},
                {"range_max", {mc.voxel.range_max.x, mc.voxel.range_max.y, mc.voxel.range_max.z}},
                {"voxel_size", {mc.voxel.voxel_size.x, mc.voxel.voxel_size.y, mc.voxel.voxel_size.z}},
                {"points_per_voxel", mc.voxel.points_per_voxel},
                {"seed", mc.voxel.seed}};
  j["aaf"] = {{"c1", mc.aaf.c1},
              {"c2", mc.aaf.c2},
              {"att_hidden", mc.aaf.att_hidden},
              {"combine", mc.aaf.combine_mode == CombineMode::Add ? "add" : "concat"}};
  j["head_hidden"] = mc.head_hidden;
  j["bev_pool"] = mc.bev_pool;
  j["dff_base"] = mc.dff_base;
  j["dff_out"] = mc.dff_out;
  return j;
}

inline std::string encode_checkpoint(Model& model) {
  std::string out = "PCK1";
  const std::string header = model_config_json(model).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  std::vector<std::string> sections;
  if (model.uses_aaf()) sections.push_back(encode_tensor_container("AAF1", model.aaf.state_entries()));
  if (model.uses_dff()) sections.push_back(encode_tensor_container("DFF1", model.dff.state_entries()));
  sections.push_back(encode_tensor_container("HED1", model.head.state_entries()));
  detail::put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
  }
  return out;
}

inline Model decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint PCK1");
  if (r.bytes(4) != "PCK1") throw std::invalid_argument("checkpoint: bad magic, expected PCK1");
  const std::uint32_t header_len = r.u32();
  const nlohmann::json j = nlohmann::json::parse(r.bytes(header_len));

  ExperimentConfig cfg;
  cfg.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  cfg.repr = representation_from_name(j.at("repr").get<std::string>());
  cfg.data.scene.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.data.policy = j.at("policy").get<std::string>() == "background"
                        ? OutOfViewPolicy::BackgroundOneHot
                        : OutOfViewPolicy::Zero;
  auto& jv = j.at("voxel");
  cfg.model.voxel.range_min = {jv.at("range_min")[0], jv.at("range_min")[1], jv.at("range_min")[2]};
  cfg.model.voxel.range_max = {jv.at("range_max")[0], jv.at("range_max")[1], jv.at("range_max")[2]};
  cfg.model.voxel.voxel_size = {jv.at("voxel_size")[0], jv.at("voxel_size")[1],
                                jv.at("voxel_size")[2]};
  cfg.model.voxel.points_per_voxel = jv.at("points_per_voxel").get<std::size_t>();
  cfg.model.voxel.seed = jv.at("seed").get<std::uint64_t>();
  auto& ja = j.at("aaf");
  cfg.model.aaf.c1 = ja.at("c1").get<std::size_t>();
  cfg.model.aaf.c2 = ja.at("c2").get<std::size_t>();
  cfg.model.aaf.att_hidden = ja.at("att_hidden").get<std::size_t>();
  cfg.model.aaf.combine_mode =
      ja.at("combine").get<std::string>() == "add" ? CombineMode::Add : CombineMode::Concat;
  cfg.model.head_hidden = j.at("head_hidden").get<std::size_t>();
  cfg.model.bev_pool = j.at("bev_pool").get<std::size_t>();
  cfg.model.dff_base = j.at("dff_base").get<std::size_t>();
  cfg.model.dff_out = j.at("dff_out").get<std::size_t>();

  Model model = build_model(cfg);
  model.class_weights = j.at("class_weights").get<std::vector<double>>();

  const std::uint32_t n_sections = r.u32();
  std::vector<std::string> sections;
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    const std::uint32_t len = r.u32();
    sections.push_back(r.bytes(len));
  }
  if (!r.at_end()) throw std::invalid_argument("checkpoint: trailing bytes");
  std::size_t si = 0;
  if (model.uses_aaf()) decode_tensor_container(sections.at(si++), "AAF1", model.aaf.state_entries());
  if (model.uses_dff()) decode_tensor_container(sections.at(si++), "DFF1", model.dff.state_entries());
  decode_tensor_container(sections.at(si++), "HED1", model.head.state_entries());
  if (si != sections.size()) throw std::invalid_argument("checkpoint: unexpected extra sections");
  return model;
}

}  // namespace semfuse
