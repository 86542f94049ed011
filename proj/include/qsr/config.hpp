#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsr/search.hpp"

namespace qsr {

// Sectioned key=value config text ('#'/';' comments). Every key must be
// consumed by a typed getter; finish() rejects leftovers with file:line.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_text(const std::string& text, const std::string& name = "<config>");

    bool has(const std::string& section, const std::string& key) const;
    std::string get_str(const std::string& section, const std::string& key, std::string def);
    double get_double(const std::string& section, const std::string& key, double def);
    int get_int(const std::string& section, const std::string& key, int def);
    bool get_bool(const std::string& section, const std::string& key, bool def);
    std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t def);
    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  std::vector<int> def);
    std::vector<std::string> get_str_list(const std::string& section, const std::string& key,
                                          std::vector<std::string> def);

    // throws ConfigError naming any unconsumed key
    void finish() const;

private:
    struct Entry {
        std::string section, key, value;
        int line = 0;
        mutable bool consumed = false;
    };
    const Entry* find(const std::string& section, const std::string& key) const;
    std::string name_;
    std::vector<Entry> entries_;
};

// Everything a run needs: space + search + train + data settings.
struct RunConfig {
    SearchSpaceSpec space;
    SearchConfig search;
    TrainConfig train;

    int n_train = 128;  // split in half for the two search subsets
    int n_val = 16;
    int hr_size = 64;  // HR patch edge; LR is hr_size/scale
    std::string image_dir;  // optional directory of PNGs instead of synthetic

    std::string flop_convention = "mac";  // or "flop" (x2)

    static RunConfig defaults() { return RunConfig{}; }
    static RunConfig from_file(const std::string& path);
    void load(ConfigFile& f);
    void validate() const;
};

}  // namespace qsr
