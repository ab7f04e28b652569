#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "osteo/data.hpp"
#include "osteo/error.hpp"

namespace osteo {

// One evaluated subject; for leave-one-out runs there is one per fold.
struct FoldReport {
    std::size_t fold = 0;
    std::string image_id;
    Label truth = Label::Normal;
    Label predicted = Label::Normal;
    double p_op = 0;
    double p_nop = 0;
    std::array<double, 4> attention{1, 1, 1, 1};
    bool has_attention = false;
};

// Exact confusion counts; ratios are derived on demand and only rounded at
// display time.
struct MetricsReport {
    std::size_t op_correct = 0;
    std::size_t op_total = 0;
    std::size_t nop_correct = 0;
    std::size_t nop_total = 0;

    std::size_t total() const { return op_total + nop_total; }
    std::size_t correct() const { return op_correct + nop_correct; }

    bool opa_defined() const { return op_total > 0; }
    bool nopa_defined() const { return nop_total > 0; }

    double opa() const {
        return opa_defined() ? static_cast<double>(op_correct) / static_cast<double>(op_total)
                             : std::numeric_limits<double>::quiet_NaN();
    }
    double nopa() const {
        return nopa_defined() ? static_cast<double>(nop_correct) / static_cast<double>(nop_total)
                              : std::numeric_limits<double>::quiet_NaN();
    }
    double oa() const { return static_cast<double>(correct()) / static_cast<double>(total()); }
};

inline MetricsReport compute_metrics(const std::vector<FoldReport>& reports) {
    if (reports.empty()) throw InputError("metrics: no reports");
    MetricsReport m;
    for (const auto& r : reports) {
        if (r.truth == Label::Osteoporosis) {
            ++m.op_total;
            if (r.predicted == r.truth) ++m.op_correct;
        } else {
            ++m.nop_total;
            if (r.predicted == r.truth) ++m.nop_correct;
        }
    }
    return m;
}

// Percentage with one displayed decimal. Rounds the exact rational twice,
// half-up at two decimals and then at one, matching how the reference
// comparison tables present, e.g., 4/21 as 19.1.
inline std::string format_percent(std::size_t count, std::size_t total) {
    if (total == 0) return "n/a";
    const unsigned long long hundredths = (count * 20000ULL + total) / (2ULL * total);
    const unsigned long long tenths = (hundredths + 5) / 10;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%llu.%llu", tenths / 10, tenths % 10);
    return buf;
}

inline void write_folds_csv(std::ostream& os, const std::vector<FoldReport>& reports) {
    os << "fold,image_id,true,pred,p_op,p_nop,s1,s2,s3,s4\n";
    char buf[64];
    for (const auto& r : reports) {
        os << r.fold << "," << r.image_id << "," << label_token(r.truth) << ","
           << label_token(r.predicted);
        std::snprintf(buf, sizeof(buf), ",%.9g,%.9g", r.p_op, r.p_nop);
        os << buf;
        for (const double s : r.attention) {
            if (r.has_attention) {
                std::snprintf(buf, sizeof(buf), ",%.9g", s);
                os << buf;
            } else {
                os << ",";
            }
        }
        os << "\n";
    }
}

// Table-style summary: OPA/NOPA/OA as percentages with one decimal. The
// footnote also reports the swapped-denominator orientation, since published
// per-class accuracies are not always consistent about which class anchors
// which denominator.
inline void write_summary(std::ostream& os, const std::string& method, const MetricsReport& m,
                          const std::vector<std::string>& notes = {}) {
    os << "method  OPA(%)  NOPA(%)  OA(%)\n";
    os << method << "  " << format_percent(m.op_correct, m.op_total) << "  "
       << format_percent(m.nop_correct, m.nop_total) << "  "
       << format_percent(m.correct(), m.total()) << "\n\n";
    os << "counts: osteoporosis " << m.op_correct << "/" << m.op_total << ", normal "
       << m.nop_correct << "/" << m.nop_total << ", overall " << m.correct() << "/" << m.total()
       << "\n";
    os << "note: swapped orientation (osteoporosis count over normal total and vice versa): "
       << "OPA'(%) " << format_percent(m.op_correct, m.nop_total) << ", NOPA'(%) "
       << format_percent(m.nop_correct, m.op_total) << "\n";
    if (!m.opa_defined()) os << "note: no osteoporosis samples; OPA undefined\n";
    if (!m.nopa_defined()) os << "note: no normal samples; NOPA undefined\n";
    for (const auto& n : notes) os << "note: " << n << "\n";
}

} // namespace osteo
