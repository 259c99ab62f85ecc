#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "tlm/common.hpp"
#include "tlm/corpus.hpp"
#include "tlm/model.hpp"

namespace tlm {

// ---------------------------------------------------------------------------
// Small rectangular tables with CSV and markdown forms. Comment lines
// (leading '#') carry report metadata and are ignored by both parsers, so
// an emitted report feeds straight back into parse_csv / parse_markdown.
// ---------------------------------------------------------------------------

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const Table& o) const { return header == o.header && rows == o.rows; }
};

namespace detail {

inline std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line, size_t lineno) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw DataError("unterminated quote on CSV line " + std::to_string(lineno));
    cells.push_back(cur);
    return cells;
}

}  // namespace detail

inline std::string to_csv(const Table& t) {
    std::string out;
    const auto emit_row = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += detail::csv_cell(row[i]);
        }
        out += '\n';
    };
    emit_row(t.header);
    for (const auto& r : t.rows) emit_row(r);
    return out;
}

inline Table parse_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells = detail::split_csv_line(line, lineno);
        if (t.header.empty()) {
            t.header = std::move(cells);
        } else {
            if (cells.size() != t.header.size())
                throw DataError("CSV line " + std::to_string(lineno) + " has " +
                                std::to_string(cells.size()) + " cells, header has " +
                                std::to_string(t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (t.header.empty()) throw DataError("CSV input has no header row");
    return t;
}

inline std::string to_markdown(const Table& t) {
    std::string out;
    const auto emit_row = [&](const std::vector<std::string>& row) {
        out += '|';
        for (const std::string& c : row) {
            out += ' ';
            out += c;
            out += " |";
        }
        out += '\n';
    };
    emit_row(t.header);
    out += '|';
    for (size_t i = 0; i < t.header.size(); ++i) out += " --- |";
    out += '\n';
    for (const auto& r : t.rows) emit_row(r);
    return out;
}

inline Table parse_markdown(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    const auto is_separator = [](const std::vector<std::string>& cells) {
        for (const std::string& c : cells) {
            if (c.empty()) return false;
            for (char ch : c)
                if (ch != '-' && ch != ':') return false;
        }
        return true;
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t begin = line.find_first_not_of(" \t");
        if (begin == std::string::npos || line[begin] != '|') continue;
        size_t end = line.find_last_not_of(" \t");
        if (line[end] != '|' || end <= begin) throw DataError("markdown table row must end with '|'");
        std::vector<std::string> cells;
        std::string cur;
        for (size_t i = begin + 1; i <= end; ++i) {
            if (line[i] == '|') {
                size_t a = cur.find_first_not_of(' ');
                cells.push_back(a == std::string::npos
                                    ? std::string()
                                    : cur.substr(a, cur.find_last_not_of(' ') - a + 1));
                cur.clear();
            } else {
                cur += line[i];
            }
        }
        if (t.header.empty()) {
            t.header = std::move(cells);
        } else if (t.rows.empty() && is_separator(cells)) {
            continue;
        } else {
            if (cells.size() != t.header.size())
                throw DataError("markdown row width does not match the header");
            t.rows.push_back(std::move(cells));
        }
    }
    if (t.header.empty()) throw DataError("no markdown table found");
    return t;
}

// ---------------------------------------------------------------------------
// Experiment reports.
// ---------------------------------------------------------------------------

struct ArmStats {
    std::vector<double> values;

    double mean() const {
        if (values.empty()) return 0.0;
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    /// Sample standard deviation; 0 for fewer than two repetitions.
    double sd() const {
        if (values.size() < 2) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(values.size() - 1));
    }
};

constexpr double kSdWarnThreshold = 0.02;

struct ExperimentReport {
    OverlapReport overlap;
    ArmStats acc_pretrained;
    ArmStats acc_scratch;
    bool has_pretrained_arm = false;
    std::vector<double> per_label_accuracy;  // pretrained arm (scratch when no pre-training)
    double wall_seconds = 0.0;
    size_t model_latency = 0;
    uint64_t config_hash = 0;
    std::string subset_hash;
    std::vector<uint64_t> seeds;  // per-repetition training seeds

    /// Headline accuracy: the pre-trained arm when it exists.
    double acc() const { return has_pretrained_arm ? acc_pretrained.mean() : acc_scratch.mean(); }
    double gap() const { return has_pretrained_arm ? acc_pretrained.mean() - acc_scratch.mean() : 0.0; }
    bool sd_warning() const {
        return acc_pretrained.sd() > kSdWarnThreshold || acc_scratch.sd() > kSdWarnThreshold;
    }
};

inline std::string format_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

inline std::vector<std::string> gap_row(const ExperimentReport& r) {
    return {std::to_string(r.overlap.w_s), std::to_string(r.overlap.t_w_size),
            std::to_string(r.overlap.t_m), format_acc(r.acc()), format_acc(r.gap())};
}

inline Table gap_table(const std::vector<ExperimentReport>& reports) {
    Table t;
    t.header = {"W_S", "T_W", "T_M", "Acc", "Gap"};
    for (const ExperimentReport& r : reports) t.rows.push_back(gap_row(r));
    return t;
}

namespace detail {

inline std::string join_u64(const std::vector<uint64_t>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(xs[i]);
    }
    return s.empty() ? "-" : s;
}

inline std::string report_metadata(const ExperimentReport& r) {
    std::string out;
    out += "# config_hash " + hex64(r.config_hash) + "\n";
    out += "# subset_manifest_hash " + (r.subset_hash.empty() ? std::string("-") : r.subset_hash) + "\n";
    out += "# seeds " + join_u64(r.seeds) + "\n";
    out += "# latency " + std::to_string(r.model_latency) + "\n";
    out += "# runtime_seconds " + format_acc(r.wall_seconds) + "\n";
    out += "# acc_pretrained " + format_acc(r.acc_pretrained.mean()) + " sd " +
           format_acc(r.acc_pretrained.sd()) + "\n";
    out += "# acc_scratch " + format_acc(r.acc_scratch.mean()) + " sd " +
           format_acc(r.acc_scratch.sd()) + "\n";
    std::string labels;
    for (size_t l = 0; l < r.per_label_accuracy.size(); ++l) {
        if (l) labels += ',';
        labels += format_acc(r.per_label_accuracy[l]);
    }
    out += "# per_label_accuracy " + (labels.empty() ? std::string("-") : labels) + "\n";
    out += "# weighted_overlap " + format_acc(r.overlap.weighted_overlap) + "\n";
    if (r.sd_warning())
        out += "# warning accuracy sd exceeds " + format_acc(kSdWarnThreshold) +
               "; results may need more repetitions\n";
    return out;
}

}  // namespace detail

enum class ReportFormat { csv, markdown };

/// Full gap report: one metadata block per experiment, then the table.
/// Metadata lines start with '#' so the table parses back unchanged.
inline std::string emit_report(const std::vector<ExperimentReport>& reports, ReportFormat fmt) {
    std::string out = "# gap report\n";
    for (const ExperimentReport& r : reports) out += detail::report_metadata(r);
    const Table t = gap_table(reports);
    out += fmt == ReportFormat::csv ? to_csv(t) : to_markdown(t);
    return out;
}

// ---------------------------------------------------------------------------
// Committee reports: one row per member architecture plus the vote.
// ---------------------------------------------------------------------------

struct CommitteeMemberReport {
    ModelConfig model;
    double accuracy = 0.0;
};

struct CommitteeReport {
    std::vector<CommitteeMemberReport> members;
    double committee_accuracy = 0.0;
    double wall_seconds = 0.0;
    uint64_t config_hash = 0;
    std::vector<uint64_t> seeds;
};

inline std::vector<std::string> committee_row(const CommitteeMemberReport& m) {
    const bool has_conv = !m.model.conv_layers.empty();
    const std::string d = has_conv ? std::to_string(m.model.conv_layers.front().filters) : "-";
    const std::string kernel = has_conv ? std::to_string(m.model.conv_layers.front().kh) + "x" +
                                              std::to_string(m.model.conv_layers.front().kw)
                                        : "-";
    return {std::to_string(m.model.blocks), std::to_string(m.model.conv_layers.size()), d, kernel,
            std::to_string(m.model.heads), format_acc(m.accuracy)};
}

inline Table committee_table(const CommitteeReport& r) {
    Table t;
    t.header = {"BERT blocks", "CLs", "d", "kernel", "heads", "Acc"};
    for (const CommitteeMemberReport& m : r.members) t.rows.push_back(committee_row(m));
    return t;
}

inline std::string emit_committee_report(const CommitteeReport& r, ReportFormat fmt) {
    std::string out = "# committee report\n";
    out += "# config_hash " + hex64(r.config_hash) + "\n";
    out += "# seeds " + detail::join_u64(r.seeds) + "\n";
    out += "# committee_accuracy " + format_acc(r.committee_accuracy) + "\n";
    out += "# runtime_seconds " + format_acc(r.wall_seconds) + "\n";
    const Table t = committee_table(r);
    out += fmt == ReportFormat::csv ? to_csv(t) : to_markdown(t);
    return out;
}

}  // namespace tlm
