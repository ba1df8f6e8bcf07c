#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semfuse/pipeline.hpp"

namespace semfuse {

// Minimal `key = value` config under `[section]` headers. Unknown keys are an
// error so typos do not silently fall back to defaults.
class SectionedConfig {
 public:
  static SectionedConfig parse(const std::string& text) {
    SectionedConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw std::invalid_argument("config line " + std::to_string(line_no) +
                                      ": unterminated section header");
        }
        section = line.substr(1, line.size() - 2);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": expected key = value");
      }
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      auto trim = [](std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
      };
      trim(key);
      trim(value);
      cfg.values_[section + "." + key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }
  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoll(it->second);
  }
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::istringstream ss(it->second);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct AblationSpec {
  ExperimentConfig base;
  std::vector<Strategy> strategies;
  std::vector<Representation> representations;
  std::vector<std::uint64_t> seeds;
};

inline AblationSpec parse_ablation_config(const std::string& text) {
  const SectionedConfig cfg = SectionedConfig::parse(text);
  AblationSpec spec;
  ExperimentConfig& base = spec.base;

  base.data.train_scenes = static_cast<std::size_t>(cfg.get_int("data.train_scenes", 12));
  base.data.eval_scenes = static_cast<std::size_t>(cfg.get_int("data.eval_scenes", 20));
  base.data.scene_seed = static_cast<std::uint64_t>(cfg.get_int("data.scene_seed", 100));
  base.data.scene.num_classes = static_cast<std::size_t>(cfg.get_int("data.classes", 4));
  base.data.scene.min_boxes = static_cast<std::size_t>(cfg.get_int("data.min_boxes", 2));
  base.data.scene.max_boxes = static_cast<std::size_t>(cfg.get_int("data.max_boxes", 5));
  base.data.dilate_px = static_cast<int>(cfg.get_int("data.dilate", 3));
  base.data.confusion_a = static_cast<std::size_t>(cfg.get_int("data.confusion_a", 2));
  base.data.confusion_b = static_cast<std::size_t>(cfg.get_int("data.confusion_b", 3));
  base.data.confusion_p = cfg.get_double("data.confusion_p", 0.3);

  base.train.steps = static_cast<std::size_t>(cfg.get_int("train.steps", 800));
  base.train.batch_scenes = static_cast<std::size_t>(cfg.get_int("train.batch", 2));
  base.train.max_lr = cfg.get_double("train.max_lr", 3e-3);
  base.train.weight_decay = cfg.get_double("train.weight_decay", 0.01);

  base.model.voxel.points_per_voxel =
      static_cast<std::size_t>(cfg.get_int("model.points_per_voxel", 8));
  base.model.aaf.c1 = static_cast<std::size_t>(cfg.get_int("model.c1", 32));
  base.model.aaf.c2 = static_cast<std::size_t>(cfg.get_int("model.c2", 64));
  base.model.head_hidden = static_cast<std::size_t>(cfg.get_int("model.head_hidden", 32));

  for (const auto& s : cfg.get_list("grid.strategies", {"sem2d", "sem3d", "aaf", "aaf-dff"}))
    spec.strategies.push_back(strategy_from_name(s));
  for (const auto& r : cfg.get_list("grid.reprs", {"score"}))
    spec.representations.push_back(representation_from_name(r));
  for (const auto& s : cfg.get_list("grid.seeds", {"1", "2", "3", "4", "5"}))
    spec.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
  return spec;
}

// One row per (strategy, representation, seed); data streams are shared across
// the grid so every configuration sees the same scenes.
inline std::vector<Report> run_ablation(const AblationSpec& spec) {
  std::vector<Report> rows;
  const auto train_data = generate_bundles(spec.base.data, spec.base.data.train_scenes, 0);
  const auto eval_data =
      generate_bundles(spec.base.data, spec.base.data.eval_scenes, kEvalSceneOffset);
  for (const auto strategy : spec.strategies) {
    for (const auto repr : spec.representations) {
      for (const auto seed : spec.seeds) {
        ExperimentConfig cfg = spec.base;
        cfg.strategy = strategy;
        cfg.repr = repr;
        cfg.train.seed = seed;
        rows.push_back(train(cfg, train_data, eval_data).report);
      }
    }
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<Report>& rows) {
  std::string out = report_csv_header() + "\n";
  for (const auto& r : rows) out += report_csv_row(r) + "\n";
  return out;
}

// Bar chart of mean accuracy deltas vs the weakest strategy/representation arm.
inline std::string ablation_svg(const std::vector<Report>& rows) {
  // aggregate mean accuracy per (strategy, repr) arm
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    auto& slot = acc[r.strategy + " / " + r.repr];
    slot.first += r.accuracy();
    slot.second += 1;
  }
  std::vector<std::pair<std::string, double>> arms;
  double weakest = 1.0;
  for (auto& [name, slot] : acc) {
    const double mean = slot.first / slot.second;
    arms.emplace_back(name, mean);
    weakest = std::min(weakest, mean);
  }
  const int bar_h = 26, gap = 10, left = 260, top = 40;
  const int width = 760, height = top + static_cast<int>(arms.size()) * (bar_h + gap) + 30;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  svg << "<text x=\"12\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
         "mean voxel accuracy delta vs weakest arm (percentage points)</text>\n";
  int y = top;
  for (const auto& [name, mean] : arms) {
    const double delta_pp = (mean - weakest) * 100.0;
    const double bar = 12.0 + delta_pp * 40.0;
    svg << "<text x=\"12\" y=\"" << y + 17
        << "\" font-family=\"monospace\" font-size=\"13\">" << name << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << y << "\" width=\"" << bar << "\" height=\""
        << bar_h << "\" fill=\"#4878cf\"/>\n";
    char label[64];
    std::snprintf(label, sizeof(label), "+%.2f pp (acc %.4f)", delta_pp, mean);
    svg << "<text x=\"" << left + bar + 8 << "\" y=\"" << y + 17
        << "\" font-family=\"monospace\" font-size=\"12\">" << label << "</text>\n";
    y += bar_h + gap;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace semfuse
