#include "qsr/config.hpp"

#include <fstream>
#include <sstream>

namespace qsr {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& name) {
    ConfigFile cf;
    cf.name_ = name;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(name + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError(name + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key = value");
        Entry e;
        e.section = section;
        e.key = trim(t.substr(0, eq));
        e.value = trim(t.substr(eq + 1));
        e.line = lineno;
        if (e.key.empty())
            throw ConfigError(name + ":" + std::to_string(lineno) + ": empty key");
        for (const auto& prev : cf.entries_)
            if (prev.section == e.section && prev.key == e.key)
                throw ConfigError(name + ":" + std::to_string(lineno) + ": duplicate key '" +
                                  e.key + "' in [" + section + "]");
        cf.entries_.push_back(std::move(e));
    }
    return cf;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section, const std::string& key) const {
    for (const auto& e : entries_)
        if (e.section == section && e.key == key) {
            e.consumed = true;
            return &e;
        }
    return nullptr;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    for (const auto& e : entries_)
        if (e.section == section && e.key == key) return true;
    return false;
}

std::string ConfigFile::get_str(const std::string& section, const std::string& key,
                                std::string def) {
    const Entry* e = find(section, key);
    return e ? e->value : def;
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    try {
        std::size_t used = 0;
        double v = std::stod(e->value, &used);
        if (used != e->value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                          "' expects a number, got '" + e->value + "'");
    }
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    try {
        std::size_t used = 0;
        int v = std::stoi(e->value, &used);
        if (used != e->value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                          "' expects an integer, got '" + e->value + "'");
    }
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    try {
        return std::stoull(e->value);
    } catch (...) {
        throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                          "' expects an unsigned integer, got '" + e->value + "'");
    }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                      "' expects true/false, got '" + e->value + "'");
}

std::vector<int> ConfigFile::get_int_list(const std::string& section, const std::string& key,
                                          std::vector<int> def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    std::vector<int> out;
    std::istringstream is(e->value);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (...) {
            throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                              "' has a non-integer element '" + tok + "'");
        }
    }
    if (out.empty())
        throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                          "' expects a comma-separated list");
    return out;
}

std::vector<std::string> ConfigFile::get_str_list(const std::string& section,
                                                  const std::string& key,
                                                  std::vector<std::string> def) {
    const Entry* e = find(section, key);
    if (!e) return def;
    std::vector<std::string> out;
    std::istringstream is(e->value);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    if (out.empty())
        throw ConfigError(name_ + ":" + std::to_string(e->line) + ": key '" + key +
                          "' expects a comma-separated list");
    return out;
}

void ConfigFile::finish() const {
    for (const auto& e : entries_)
        if (!e.consumed)
            throw ConfigError(name_ + ":" + std::to_string(e.line) + ": unknown key '" + e.key +
                              "' in [" + e.section + "]");
}

RunConfig RunConfig::from_file(const std::string& path) {
    ConfigFile f = ConfigFile::parse_file(path);
    RunConfig cfg;
    cfg.load(f);
    f.finish();
    cfg.validate();
    return cfg;
}

void RunConfig::load(ConfigFile& f) {
    space.channels = f.get_int("space", "channels", space.channels);
    space.body_repeats = f.get_int("space", "body_repeats", space.body_repeats);
    space.scale = f.get_int("space", "scale", space.scale);
    space.bits = f.get_int_list("space", "bits", space.bits);
    space.head_ops = f.get_str_list("space", "head_ops", space.head_ops);
    space.body_ops = f.get_str_list("space", "body_ops", space.body_ops);
    space.skip_ops = f.get_str_list("space", "skip_ops", space.skip_ops);
    space.upsample_ops = f.get_str_list("space", "upsample_ops", space.upsample_ops);
    space.tail_ops = f.get_str_list("space", "tail_ops", space.tail_ops);
    space.exempt_first_last = f.get_bool("space", "exempt_first_last", space.exempt_first_last);

    search.epochs = f.get_int("search", "epochs", search.epochs);
    search.batch_size = f.get_int("search", "batch_size", search.batch_size);
    search.w_lr = f.get_double("search", "w_lr", search.w_lr);
    search.w_momentum = f.get_double("search", "w_momentum", search.w_momentum);
    search.w_weight_decay = f.get_double("search", "w_weight_decay", search.w_weight_decay);
    search.alpha_lr = f.get_double("search", "alpha_lr", search.alpha_lr);
    search.eta = f.get_double("search", "eta", search.eta);
    search.mu0 = f.get_double("search", "mu0", search.mu0);
    search.warmup_epochs = f.get_int("search", "warmup_epochs", search.warmup_epochs);
    search.bitops_image = f.get_int("search", "bitops_image", search.bitops_image);
    search.seed = f.get_u64("search", "seed", search.seed);
    search.strategy = parse_strategy(f.get_str("search", "strategy", strategy_name(search.strategy)));
    const std::string nd = f.get_str("search", "noise_dist", "gaussian");
    if (nd == "gaussian") search.noise_dist = NoiseDist::Gaussian;
    else if (nd == "uniform") search.noise_dist = NoiseDist::Uniform;
    else throw ConfigError("noise_dist must be gaussian or uniform, got '" + nd + "'");
    const std::string ss = f.get_str("search", "san_noise_scaling", "range");
    if (ss == "range") search.san_scaling = SanScaling::Range;
    else if (ss == "raw") search.san_scaling = SanScaling::Raw;
    else throw ConfigError("san_noise_scaling must be range or raw, got '" + ss + "'");

    train.epochs = f.get_int("train", "epochs", train.epochs);
    train.batch_size = f.get_int("train", "batch_size", train.batch_size);
    train.lr = f.get_double("train", "lr", train.lr);
    train.momentum = f.get_double("train", "momentum", train.momentum);
    train.weight_decay = f.get_double("train", "weight_decay", train.weight_decay);
    train.seed = f.get_u64("train", "seed", train.seed);

    n_train = f.get_int("data", "n_train", n_train);
    n_val = f.get_int("data", "n_val", n_val);
    hr_size = f.get_int("data", "hr_size", hr_size);
    image_dir = f.get_str("data", "image_dir", image_dir);

    flop_convention = f.get_str("cost", "flop_convention", flop_convention);
    if (flop_convention != "mac" && flop_convention != "flop")
        throw ConfigError("flop_convention must be mac or flop, got '" + flop_convention + "'");
    set_flop_unit_scale(flop_convention == "mac" ? 1.0 : 2.0);
}

void RunConfig::validate() const {
    if (space.channels <= 0) throw ConfigError("channels must be positive");
    if (space.scale <= 0) throw ConfigError("scale must be positive");
    if (space.body_repeats <= 0) throw ConfigError("body_repeats must be positive");
    for (int b : space.bits)
        if (!((b >= 2 && b <= 8) || b == kFullPrecisionBits))
            throw ConfigError("bits entries must be 2..8 or 32, got " + std::to_string(b));
    if (hr_size % space.scale != 0)
        throw ConfigError("hr_size must be divisible by the scale");
    if (search.epochs <= 0 || train.epochs <= 0) throw ConfigError("epochs must be positive");
    if (search.batch_size <= 0 || train.batch_size <= 0)
        throw ConfigError("batch_size must be positive");
    if (n_train < 2) throw ConfigError("n_train must be at least 2 (two disjoint splits)");
}

}  // namespace qsr
