#include "qsr/search_space.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace qsr {

OpSpec parse_op_name(const std::string& name) {
    std::istringstream is(name);
    std::string kind;
    is >> kind;
    OpSpec op;
    op.name = name;
    auto parse_kxk = [&name](const std::string& tok, int& kh, int& kw) {
        auto x = tok.find('x');
        if (x == std::string::npos)
            throw ConfigError("bad kernel token '" + tok + "' in op '" + name + "'");
        kh = std::stoi(tok.substr(0, x));
        kw = std::stoi(tok.substr(x + 1));
    };
    if (kind == "simple") {
        std::string k;
        is >> k;
        parse_kxk(k, op.k1h, op.k1w);
        std::string word;
        if (is >> word) {
            if (word != "grouped") throw ConfigError("unknown qualifier in op '" + name + "'");
            if (!(is >> op.groups)) throw ConfigError("missing group count in op '" + name + "'");
        }
    } else if (kind == "conv") {
        std::string k1, k2;
        if (!(is >> k1 >> k2)) throw ConfigError("separable op needs two kernels: '" + name + "'");
        op.separable = true;
        parse_kxk(k1, op.k1h, op.k1w);
        parse_kxk(k2, op.k2h, op.k2w);
    } else {
        throw ConfigError("unknown catalog op '" + name + "'");
    }
    return op;
}

bool op_applicable(const OpSpec& op, int in_ch, int out_ch) {
    if (op.groups <= 0) return false;
    if (in_ch % op.groups != 0 || out_ch % op.groups != 0) return false;
    return true;
}

std::vector<LayerPos> layer_positions(const SearchSpaceSpec& space) {
    const int c = space.channels;
    const int r = space.scale;
    std::vector<LayerPos> out;
    out.push_back({"head", 0, 3, c, 1, &space.head_ops});
    out.push_back({"head", 1, c, c, 1, &space.head_ops});
    for (int k = 0; k < space.body_repeats; ++k) {
        const std::string b = "body" + std::to_string(k);
        out.push_back({b, 0, c, c, 1, &space.body_ops});
        out.push_back({b, 1, c, c, 1, &space.body_ops});
        out.push_back({b, 2, c, c, 1, &space.skip_ops});
    }
    out.push_back({"upsample", 0, c, c * r * r, 1, &space.upsample_ops});
    out.push_back({"tail", 0, c, c, r * r, &space.tail_ops});
    out.push_back({"tail", 1, c, 3, r * r, &space.tail_ops});
    return out;
}

std::vector<OpSpec> applicable_ops(const LayerPos& pos) {
    std::vector<OpSpec> ops;
    for (const auto& name : *pos.catalog) {
        OpSpec op = parse_op_name(name);
        if (op_applicable(op, pos.in_ch, pos.out_ch)) ops.push_back(op);
    }
    if (ops.empty())
        throw ConfigError("no applicable candidate ops for layer " + pos.block + "." +
                          std::to_string(pos.index) + " with channels " +
                          std::to_string(pos.in_ch) + "->" + std::to_string(pos.out_ch));
    return ops;
}

std::string Genotype::to_json() const {
    nlohmann::ordered_json j;
    j["space_version"] = space_version;
    j["channels"] = channels;
    j["K"] = body_repeats;
    j["scale"] = scale;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : layers)
        j["layers"].push_back({{"block", l.block}, {"index", l.index}, {"op", l.op}, {"bits", l.bits}});
    j["alpha_margins"] = alpha_margins;
    return j.dump(2);
}

Genotype Genotype::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("genotype parse error: ") + e.what());
    }
    Genotype g;
    try {
        g.space_version = j.at("space_version").get<std::string>();
        g.channels = j.at("channels").get<int>();
        g.body_repeats = j.at("K").get<int>();
        g.scale = j.at("scale").get<int>();
        for (const auto& l : j.at("layers")) {
            GenotypeLayer gl;
            gl.block = l.at("block").get<std::string>();
            gl.index = l.at("index").get<int>();
            gl.op = l.at("op").get<std::string>();
            gl.bits = l.at("bits").get<int>();
            g.layers.push_back(gl);
        }
        if (j.contains("alpha_margins"))
            g.alpha_margins = j.at("alpha_margins").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("genotype field error: ") + e.what());
    }
    return g;
}

void Genotype::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write genotype file " + path);
    f << to_json() << "\n";
}

Genotype Genotype::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read genotype file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

}  // namespace qsr
