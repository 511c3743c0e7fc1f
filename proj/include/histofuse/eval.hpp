#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/core.hpp"

namespace histofuse {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
    std::vector<std::string> class_order;
    std::vector<std::vector<std::size_t>> counts;

    std::size_t size() const { return class_order.size(); }
    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& row : counts) {
            for (auto v : row) t += v;
        }
        return t;
    }
    std::size_t row_sum(std::size_t i) const {
        std::size_t t = 0;
        for (auto v : counts[i]) t += v;
        return t;
    }
    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < size(); ++i) t += counts[i][i];
        return t;
    }
};

inline ConfusionMatrix confusion(const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred,
                                 const std::vector<std::string>& class_order) {
    if (y_true.size() != y_pred.size()) throw Error("confusion: label vectors differ in length");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < class_order.size(); ++i) index[class_order[i]] = i;
    ConfusionMatrix cm{class_order, std::vector<std::vector<std::size_t>>(class_order.size(),
                                                                          std::vector<std::size_t>(class_order.size(), 0))};
    for (std::size_t k = 0; k < y_true.size(); ++k) {
        auto t = index.find(y_true[k]);
        auto p = index.find(y_pred[k]);
        if (t == index.end()) throw Error("confusion: unknown class tag '" + y_true[k] + "'");
        if (p == index.end()) throw Error("confusion: unknown class tag '" + y_pred[k] + "'");
        ++cm.counts[t->second][p->second];
    }
    return cm;
}

// A metric with a zero denominator is undefined rather than 0 or 1.
using Metric = std::optional<double>;

inline Metric ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline Metric overall_accuracy(const ConfusionMatrix& cm) { return ratio(cm.trace(), cm.total()); }

struct BinaryMetrics {
    Metric ac, sn, sp;
};

// 2x2 matrix; `positive` is the index of the disease (malignant) class.
inline BinaryMetrics binary_metrics(const ConfusionMatrix& cm, std::size_t positive = 1) {
    if (cm.size() != 2) throw Error("binary_metrics needs a 2x2 confusion matrix");
    const std::size_t neg = 1 - positive;
    const std::size_t tp = cm.counts[positive][positive];
    const std::size_t fn = cm.counts[positive][neg];
    const std::size_t tn = cm.counts[neg][neg];
    const std::size_t fp = cm.counts[neg][positive];
    return {ratio(tp + tn, tp + tn + fp + fn), ratio(tp, tp + fn), ratio(tn, tn + fp)};
}

inline std::vector<Metric> per_class_recall(const ConfusionMatrix& cm) {
    std::vector<Metric> out;
    for (std::size_t i = 0; i < cm.size(); ++i) out.push_back(ratio(cm.counts[i][i], cm.row_sum(i)));
    return out;
}

// ---------------------------------------------------------------------------
// Reports

enum class Task : std::uint8_t { Binary, Multiclass };

inline std::string_view to_string(Task t) { return t == Task::Binary ? "binary" : "multiclass"; }

struct MetricRow {
    std::string metric;  // AC, SN, SP or recall
    std::string cls;     // class tag for recall rows, empty otherwise
    Metric value;

    bool operator==(const MetricRow&) const = default;
};

struct ReportCell {
    Task task = Task::Binary;
    int magnification = 40;
    std::vector<MetricRow> rows;

    bool operator==(const ReportCell&) const = default;
};

struct MetricsReport {
    std::vector<ReportCell> cells;

    bool operator==(const MetricsReport&) const = default;
};

inline ReportCell binary_cell(int magnification, const ConfusionMatrix& cm) {
    const auto m = binary_metrics(cm);
    return {Task::Binary, magnification, {{"AC", "", m.ac}, {"SN", "", m.sn}, {"SP", "", m.sp}}};
}

inline ReportCell multiclass_cell(int magnification, const ConfusionMatrix& cm) {
    ReportCell cell{Task::Multiclass, magnification, {{"AC", "", overall_accuracy(cm)}}};
    const auto rec = per_class_recall(cm);
    for (std::size_t i = 0; i < cm.size(); ++i) cell.rows.push_back({"recall", cm.class_order[i], rec[i]});
    return cell;
}

inline std::string format_metric(const Metric& m) {
    if (!m) return "NA";
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << *m;
    return os.str();
}

inline std::string render_csv(const MetricsReport& r) {
    std::ostringstream os;
    os << "task,magnification,metric,class,value\n";
    for (const auto& cell : r.cells) {
        for (const auto& row : cell.rows) {
            os << to_string(cell.task) << ',' << cell.magnification << ',' << row.metric << ',' << row.cls << ','
               << format_metric(row.value) << '\n';
        }
    }
    return os.str();
}

inline MetricsReport parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "task,magnification,metric,class,value") throw FormatError("report.csv header mismatch");
    MetricsReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        f.push_back(cur);
        if (f.size() != 5) throw FormatError("malformed report line: " + line);
        Task task;
        if (f[0] == "binary") task = Task::Binary;
        else if (f[0] == "multiclass") task = Task::Multiclass;
        else throw FormatError("unknown task '" + f[0] + "'");
        const int mag = std::stoi(f[1]);
        if (r.cells.empty() || r.cells.back().task != task || r.cells.back().magnification != mag) {
            r.cells.push_back({task, mag, {}});
        }
        r.cells.back().rows.push_back({f[2], f[3], f[4] == "NA" ? Metric{} : Metric{std::stod(f[4])}});
    }
    return r;
}

// Text tables: metrics (or classes) as rows, magnifications as columns.
inline std::string render_text(const MetricsReport& r) {
    std::ostringstream os;
    for (Task task : {Task::Binary, Task::Multiclass}) {
        std::vector<const ReportCell*> cells;
        for (const auto& c : r.cells) {
            if (c.task == task) cells.push_back(&c);
        }
        if (cells.empty()) continue;
        os << (task == Task::Binary ? "Binary classification" : "Multi-class classification") << " (%)\n";
        os << std::left << std::setw(12) << "Metric";
        for (const auto* c : cells) os << std::right << std::setw(10) << (std::to_string(c->magnification) + "X");
        os << '\n';
        for (std::size_t i = 0; i < cells.front()->rows.size(); ++i) {
            const auto& proto = cells.front()->rows[i];
            os << std::left << std::setw(12) << (proto.cls.empty() ? proto.metric : proto.cls);
            for (const auto* c : cells) {
                std::string v = "NA";
                for (const auto& row : c->rows) {
                    if (row.metric == proto.metric && row.cls == proto.cls && row.value) {
                        std::ostringstream vs;
                        vs << std::fixed << std::setprecision(1) << 100.0 * *row.value;
                        v = vs.str();
                    }
                }
                os << std::right << std::setw(10) << v;
            }
            os << '\n';
        }
        os << '\n';
    }
    return os.str();
}

inline std::string render_confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream os;
    os << "true\\pred";
    for (const auto& c : cm.class_order) os << ',' << c;
    os << '\n';
    for (std::size_t i = 0; i < cm.size(); ++i) {
        os << cm.class_order[i];
        for (auto v : cm.counts[i]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

}  // namespace histofuse
