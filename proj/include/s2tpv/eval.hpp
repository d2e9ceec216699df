// Copyright 2026 The S2TPV Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "s2tpv/model.hpp"
#include "s2tpv/scene.hpp"

namespace s2tpv {

// ---------------------------------------------------------------------------
// Confusion matrix and mIoU
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::int64_t> counts;  // rows = ground truth, cols = prediction

    explicit ConfusionMatrix(std::size_t classes = 0) : k(classes), counts(classes * classes, 0) {}
    std::int64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * k + pred]; }
    std::int64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * k + pred]; }
    std::int64_t total() const {
        std::int64_t s = 0;
        for (auto v : counts) s += v;
        return s;
    }
    void merge(const ConfusionMatrix& other) {
        if (other.k != k) throw DimError("confusion merge: class count mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

/// Scoring mask: `occupied` keeps cells where ground truth or prediction is
/// non-empty; `all` keeps every cell.
enum class EvalMask { occupied, all };

template <class Label>
ConfusionMatrix confusion(const std::vector<Label>& pred, const std::vector<Label>& gt,
                          std::size_t n_classes, std::size_t empty_class,
                          EvalMask mask = EvalMask::occupied) {
    if (pred.size() != gt.size()) throw DimError("confusion: shape mismatch");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto g = static_cast<std::size_t>(gt[i]);
        const auto p = static_cast<std::size_t>(pred[i]);
        if (g >= n_classes || p >= n_classes) throw ConfigError("confusion: label out of range");
        if (mask == EvalMask::occupied && g == empty_class && p == empty_class) continue;
        cm.at(g, p)++;
    }
    return cm;
}

inline ConfusionMatrix confusion(const VoxelLabelGrid& pred, const VoxelLabelGrid& gt,
                                 EvalMask mask = EvalMask::occupied) {
    if (pred.dims.h != gt.dims.h || pred.dims.w != gt.dims.w || pred.dims.d != gt.dims.d)
        throw DimError("confusion: grid shape mismatch");
    if (pred.n_semantic != gt.n_semantic) throw DimError("confusion: class count mismatch");
    return confusion(pred.labels, gt.labels, gt.n_classes(), gt.empty_class(), mask);
}

struct MiouResult {
    std::vector<double> per_class_iou;  // NaN for classes excluded from the mean
    double miou = 0.0;
};

/// IoU_c = TP / (TP + FP + FN) per included class; classes with an empty
/// denominator drop out of the mean.
inline MiouResult miou(const ConfusionMatrix& cm, const std::vector<int>& included_classes) {
    if (included_classes.empty()) throw ConfigError("miou: no included classes");
    MiouResult r;
    r.per_class_iou.assign(cm.k, std::nan(""));
    double sum = 0.0;
    std::size_t counted = 0;
    for (int ci : included_classes) {
        const auto c = static_cast<std::size_t>(ci);
        const std::int64_t tp = cm.at(c, c);
        std::int64_t fp = 0, fn = 0;
        for (std::size_t o = 0; o < cm.k; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::int64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        r.per_class_iou[c] = iou;
        sum += iou;
        ++counted;
    }
    r.miou = counted ? sum / static_cast<double>(counted) : 0.0;
    return r;
}

/// Per-class IoU, mIoU, confusion counts and ground-truth cell counts.
struct EvalReport {
    ConfusionMatrix cm;
    std::vector<double> per_class_iou;
    double miou_value = 0.0;
    std::vector<std::int64_t> gt_counts;  // per class, over evaluated elements
};

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// Argmax voxel prediction for one world at step t with m history steps.
template <class T>
VoxelLabelGrid predict_grid(const S2tpvModelT<T>& model, const WorldSpec& world, std::size_t t,
                            std::size_t m, FrameRenderer<T>* renderer = nullptr,
                            std::size_t world_key = 0) {
    const auto tpv = encode_world(model, world, t, m, renderer, world_key);
    auto logits = decode_voxels(tpv, model.decoder);
    assert_all_finite(logits, "voxel logits");
    const GridDims g = model.cfg.grid();
    VoxelLabelGrid grid;
    grid.dims = g;
    grid.bounds = model.cfg.bounds;
    grid.n_semantic = static_cast<std::uint16_t>(model.n_semantic);
    grid.labels.resize(g.h * g.w * g.d);
    const std::size_t k = model.n_classes();
    auto lv = logits.values();
    for (std::size_t v = 0; v < grid.labels.size(); ++v) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (lv[v * k + c] > lv[v * k + best]) best = c;
        grid.labels[v] = static_cast<std::uint16_t>(best);
    }
    return grid;
}

/// Scores a model over a dataset at each world's final trajectory step with
/// m history steps. Semantic classes only enter the mean; `empty` keeps its
/// confusion row and column.
template <class T>
EvalReport evaluate(const S2tpvModelT<T>& model, const std::vector<WorldSpec>& worlds,
                    std::size_t m, EvalMask mask = EvalMask::occupied,
                    FrameRenderer<T>* renderer = nullptr) {
    if (worlds.empty()) throw ConfigError("evaluate: empty dataset");
    FrameRenderer<T> local(model.n_scale, model.cfg.embed_dim);
    if (!renderer) renderer = &local;
    EvalReport report;
    report.cm = ConfusionMatrix(model.n_classes());
    report.gt_counts.assign(model.n_classes(), 0);
    for (std::size_t wi = 0; wi < worlds.size(); ++wi) {
        const WorldSpec& world = worlds[wi];
        const std::size_t t = world.trajectory.size() - 1;
        if (t < m) throw std::out_of_range("evaluate: m exceeds trajectory length");
        const auto pred = predict_grid(model, world, t, m, renderer, wi);
        const auto gt = voxelize_labels(renderer->lidar(world, wi, t), model.cfg.grid(),
                                        model.cfg.bounds, model.n_semantic);
        report.cm.merge(confusion(pred, gt, mask));
    }
    for (std::size_t g = 0; g < report.cm.k; ++g)
        for (std::size_t p = 0; p < report.cm.k; ++p) report.gt_counts[g] += report.cm.at(g, p);
    std::vector<int> included;
    for (std::size_t c = 0; c < model.n_semantic; ++c) included.push_back(static_cast<int>(c));
    const MiouResult r = miou(report.cm, included);
    report.per_class_iou = r.per_class_iou;
    report.miou_value = r.miou;
    return report;
}

// ---------------------------------------------------------------------------
// Temporal-range ablation
// ---------------------------------------------------------------------------

struct AblationRow {
    std::size_t m = 0;
    EvalReport report;
};

/// Inference-time sweep over history depths on fixed weights.
template <class T>
std::vector<AblationRow> ablate_temporal_range(const S2tpvModelT<T>& model,
                                               const std::vector<WorldSpec>& worlds,
                                               const std::vector<std::size_t>& m_values,
                                               EvalMask mask = EvalMask::occupied) {
    for (const auto& w : worlds)
        for (std::size_t m : m_values)
            if (m >= w.trajectory.size())
                throw std::out_of_range("ablate: m " + std::to_string(m) +
                                        " exceeds trajectory length " +
                                        std::to_string(w.trajectory.size()));
    FrameRenderer<T> renderer(model.n_scale, model.cfg.embed_dim);
    std::vector<AblationRow> rows;
    for (std::size_t m : m_values)
        rows.push_back({m, evaluate(model, worlds, m, mask, &renderer)});
    return rows;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline void write_report_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open report for writing: " + path);
    os.precision(10);
    os << "class,iou,gt_count\n";
    for (std::size_t c = 0; c < report.cm.k; ++c) {
        os << c << ",";
        if (std::isnan(report.per_class_iou[c])) os << "excluded";
        else os << report.per_class_iou[c];
        os << "," << report.gt_counts[c] << "\n";
    }
    os << "miou," << report.miou_value << ",\n";
}

/// Reads back a report written by write_report_csv (IoU and count columns).
inline EvalReport read_report_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open report: " + path);
    std::string line;
    std::getline(is, line);
    if (line != "class,iou,gt_count") throw IoError("not a report csv: " + path);
    EvalReport report;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string cls, iou, count;
        std::getline(ls, cls, ',');
        std::getline(ls, iou, ',');
        std::getline(ls, count, ',');
        if (cls == "miou") {
            report.miou_value = std::stod(iou);
            continue;
        }
        report.per_class_iou.push_back(iou == "excluded" ? std::nan("") : std::stod(iou));
        report.gt_counts.push_back(std::stoll(count));
    }
    report.cm = ConfusionMatrix(report.per_class_iou.size());
    return report;
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open confusion csv for writing: " + path);
    for (std::size_t g = 0; g < cm.k; ++g) {
        for (std::size_t p = 0; p < cm.k; ++p) os << (p ? "," : "") << cm.at(g, p);
        os << "\n";
    }
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open ablation csv for writing: " + path);
    os.precision(10);
    os << "m";
    if (!rows.empty())
        for (std::size_t c = 0; c < rows.front().report.cm.k; ++c) os << ",iou_class" << c;
    os << ",miou\n";
    for (const auto& row : rows) {
        os << row.m;
        for (std::size_t c = 0; c < row.report.cm.k; ++c) {
            os << ",";
            if (std::isnan(row.report.per_class_iou[c])) os << "excluded";
            else os << row.report.per_class_iou[c];
        }
        os << "," << row.report.miou_value << "\n";
    }
}

/// Per-class (log ground-truth count, IoU delta) table between a baseline
/// report and a comparison report on the same dataset.
inline void write_gain_csv(const std::string& path, const EvalReport& baseline,
                           const EvalReport& ours) {
    if (baseline.cm.k != ours.cm.k) throw DimError("gain report: class count mismatch");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open gain csv for writing: " + path);
    os.precision(10);
    os << "class,log_gt_count,iou_baseline,iou_ours,iou_delta\n";
    for (std::size_t c = 0; c < ours.cm.k; ++c) {
        const double a = baseline.per_class_iou[c];
        const double b = ours.per_class_iou[c];
        if (std::isnan(a) || std::isnan(b)) continue;
        const double log_count =
            ours.gt_counts[c] > 0 ? std::log(static_cast<double>(ours.gt_counts[c])) : 0.0;
        os << c << "," << log_count << "," << a << "," << b << "," << (b - a) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Plane-embedding heatmaps (portable graymap)
// ---------------------------------------------------------------------------

/// Writes the per-cell channel L2 norm of a plane as an 8-bit binary PGM.
/// The pre-normalization range rides along in a comment so values round-trip
/// within quantization error.
template <class T>
void emit_heatmap(const TensorT<T>& plane, const std::string& path) {
    if (plane.rank() != 3) throw DimError("emit_heatmap: plane must be [H, W, C]");
    const std::size_t h = plane.shape()[0], w = plane.shape()[1], c = plane.shape()[2];
    std::vector<double> norms(h * w);
    auto pv = plane.values();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < h * w; ++i) {
        double sq = 0;
        for (std::size_t k = 0; k < c; ++k) {
            const double v = static_cast<double>(pv[i * c + k]);
            sq += v * v;
        }
        norms[i] = std::sqrt(sq);
        lo = std::min(lo, norms[i]);
        hi = std::max(hi, norms[i]);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open heatmap for writing: " + path);
    os << "P5\n# range " << std::setprecision(17) << lo << " " << hi << "\n"
       << w << " " << h << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (double v : norms) {
        const int byte = static_cast<int>(std::lround(255.0 * (v - lo) / span));
        os.put(static_cast<char>(std::clamp(byte, 0, 255)));
    }
    if (!os) throw IoError("heatmap write failed: " + path);
}

struct Heatmap {
    std::size_t h = 0, w = 0;
    double lo = 0, hi = 0;
    std::vector<double> values;  // de-quantized norms
};

inline Heatmap read_heatmap(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open heatmap: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError("not a binary PGM: " + path);
    Heatmap hm;
    is.ignore();  // newline
    std::string line;
    std::getline(is, line);
    if (line.rfind("# range ", 0) == 0) {
        std::istringstream ls(line.substr(8));
        ls >> hm.lo >> hm.hi;
        is >> hm.w >> hm.h;
    } else {
        std::istringstream ls(line);
        ls >> hm.w >> hm.h;
    }
    int maxval = 0;
    is >> maxval;
    is.ignore();
    if (maxval != 255) throw IoError("unexpected PGM maxval");
    hm.values.resize(hm.h * hm.w);
    const double span = hm.hi > hm.lo ? hm.hi - hm.lo : 1.0;
    for (auto& v : hm.values) {
        const int byte = is.get();
        v = hm.lo + (static_cast<double>(byte) / 255.0) * span;
    }
    if (!is) throw IoError("truncated heatmap: " + path);
    return hm;
}

}  // namespace s2tpv
