#pragma once

#include <string>
#include <vector>

#include "qsr/search.hpp"

namespace qsr {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string csv_double(double v);
std::string csv_to_string(const CsvTable& t);
CsvTable csv_from_string(const std::string& text);
void write_csv_file(const std::string& path, const CsvTable& t);
CsvTable read_csv_file(const std::string& path);

// epoch, l1, l_cq, l_e, mu, max_alpha_<i>...
CsvTable history_table(const std::vector<EpochStats>& history);
// eta, status, bitops, psnr, on_front, genotype
CsvTable sweep_table(const std::vector<SweepEntry>& rows,
                     const std::vector<std::string>& genotype_paths);
// strategy, n_bits, iterations, seconds, op_applies
CsvTable timing_table(const std::vector<TimingRow>& rows);

}  // namespace qsr
