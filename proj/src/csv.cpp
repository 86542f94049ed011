#include "qsr/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace qsr {

std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string csv_to_string(const CsvTable& t) {
    std::ostringstream os;
    auto emit = [&os](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
        os << "\n";
    };
    emit(t.header);
    for (const auto& r : t.rows) emit(r);
    return os.str();
}

CsvTable csv_from_string(const std::string& text) {
    CsvTable t;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

void write_csv_file(const std::string& path, const CsvTable& t) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write csv file " + path);
    f << csv_to_string(t);
    if (!f) throw IoError("short write to " + path);
}

CsvTable read_csv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read csv file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return csv_from_string(ss.str());
}

CsvTable history_table(const std::vector<EpochStats>& history) {
    CsvTable t;
    t.header = {"epoch", "l1", "l_cq", "l_e", "mu"};
    const std::size_t layers = history.empty() ? 0 : history.front().max_alpha.size();
    for (std::size_t i = 0; i < layers; ++i) t.header.push_back("max_alpha_" + std::to_string(i));
    for (const auto& h : history) {
        std::vector<std::string> row{std::to_string(h.epoch), csv_double(h.l1), csv_double(h.l_cq),
                                     csv_double(h.l_e), csv_double(h.mu)};
        for (double a : h.max_alpha) row.push_back(csv_double(a));
        t.rows.push_back(std::move(row));
    }
    return t;
}

CsvTable sweep_table(const std::vector<SweepEntry>& rows,
                     const std::vector<std::string>& genotype_paths) {
    CsvTable t;
    t.header = {"eta", "status", "bitops", "psnr", "on_front", "genotype"};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        t.rows.push_back({csv_double(r.eta), r.failed ? "failed" : "ok", csv_double(r.bitops),
                          csv_double(r.psnr), r.on_front ? "1" : "0",
                          i < genotype_paths.size() ? genotype_paths[i] : ""});
    }
    return t;
}

CsvTable timing_table(const std::vector<TimingRow>& rows) {
    CsvTable t;
    t.header = {"strategy", "n_bits", "iterations", "seconds", "op_applies"};
    for (const auto& r : rows)
        t.rows.push_back({r.strategy, std::to_string(r.n_bits), std::to_string(r.iterations),
                          csv_double(r.seconds), std::to_string(r.op_applies)});
    return t;
}

}  // namespace qsr
