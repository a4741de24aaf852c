#pragma once

// Segmentation metrics: per-sample IoU, oIoU (sum of intersections over sum
// of unions), mIoU (mean per-sample IoU) and Prec@t (fraction with IoU > t),
// plus the cross-dataset grid and its JSON/text renderings.

#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ris/error.hpp"
#include "ris/image_io.hpp"

namespace ris {

struct SampleResult {
  std::string id;
  std::size_t intersection = 0;
  std::size_t union_count = 0;
  double iou = 0.0;
};

// Empty prediction against empty ground truth counts as a perfect sample
// (iou 1) and adds nothing to the oIoU sums.
inline SampleResult iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::string id = "") {
  if (pred.size() != gt.size())
    throw Error(ErrorCode::ShapeMismatch,
                "iou: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " + std::to_string(gt.size()));
  SampleResult r{std::move(id), 0, 0, 0.0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    r.intersection += (p && g) ? 1 : 0;
    r.union_count += (p || g) ? 1 : 0;
  }
  r.iou = r.union_count == 0 ? 1.0 : static_cast<double>(r.intersection) / static_cast<double>(r.union_count);
  return r;
}

inline SampleResult iou(const BinaryMask& pred, const BinaryMask& gt, std::string id = "") {
  if (pred.height != gt.height || pred.width != gt.width)
    throw Error(ErrorCode::ShapeMismatch, "iou: mask sizes differ");
  return iou(pred.bits, gt.bits, std::move(id));
}

inline const std::vector<std::pair<std::string, double>>& precision_thresholds() {
  static const std::vector<std::pair<std::string, double>> t{{"0.5", 0.5}, {"0.7", 0.7}, {"0.9", 0.9}};
  return t;
}

struct MetricReport {
  double oiou = 0.0;
  double miou = 0.0;
  std::map<std::string, double> prec;  // "0.5", "0.7", "0.9"
  std::size_t n = 0;

  nlohmann::json to_json() const { return {{"oiou", oiou}, {"miou", miou}, {"prec", prec}, {"n", n}}; }
};

inline MetricReport aggregate(std::span<const SampleResult> results) {
  if (results.empty()) throw Error(ErrorCode::EmptyResultSet, "no samples to aggregate");
  std::size_t inter = 0, uni = 0;
  double iou_sum = 0.0;
  for (const auto& r : results) {
    inter += r.intersection;
    uni += r.union_count;
    iou_sum += r.iou;
  }
  MetricReport m;
  m.n = results.size();
  m.oiou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  m.miou = iou_sum / static_cast<double>(results.size());
  for (const auto& [name, t] : precision_thresholds()) {
    std::size_t hits = 0;
    for (const auto& r : results) hits += r.iou > t ? 1 : 0;
    m.prec[name] = static_cast<double>(hits) / static_cast<double>(results.size());
  }
  return m;
}

// One line per report: label, oIoU, mIoU and the three precisions, in percent.
inline std::string format_report_row(const std::string& label, const MetricReport& m, std::size_t label_width = 24) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s %7.2f %7.2f %7.2f %7.2f %7.2f %6zu", static_cast<int>(label_width),
                label.c_str(), 100 * m.oiou, 100 * m.miou, 100 * m.prec.at("0.5"), 100 * m.prec.at("0.7"),
                100 * m.prec.at("0.9"), m.n);
  return buf;
}

inline std::string format_report_header(std::size_t label_width = 24) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s %7s %7s %6s", static_cast<int>(label_width), "", "oIoU", "mIoU",
                "P@0.5", "P@0.7", "P@0.9", "n");
  return buf;
}

struct GridCell {
  std::optional<MetricReport> report;
  std::string error;  // set when the cell could not be computed
  bool in_distribution = false;
};

// rows: training corpora, cols: evaluation corpora.
struct CrossDatasetGrid {
  std::vector<std::string> rows, cols;
  std::vector<std::vector<GridCell>> cells;

  nlohmann::json to_json() const {
    nlohmann::json grid = {{"rows", rows}, {"cols", cols}, {"cells", nlohmann::json::array()}};
    for (const auto& row : cells) {
      nlohmann::json r = nlohmann::json::array();
      for (const auto& c : row) {
        nlohmann::json cell = c.report ? c.report->to_json()
                                       : nlohmann::json{{"n", 0}, {"error", c.error}};
        cell["in_distribution"] = c.in_distribution;
        r.push_back(cell);
      }
      grid["cells"].push_back(r);
    }
    return grid;
  }

  std::string to_text() const {
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out += "trained on " + rows[i] + "\n" + format_report_header() + "\n";
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto& c = cells[i][j];
        const std::string label = "  " + cols[j] + (c.in_distribution ? " (in-dist)" : "");
        if (c.report) {
          out += format_report_row(label, *c.report) + "\n";
        } else {
          char buf[128];
          std::snprintf(buf, sizeof buf, "%-24s %s", label.c_str(), c.error.c_str());
          out += std::string(buf) + "\n";
        }
      }
    }
    return out;
  }
};

}  // namespace ris
