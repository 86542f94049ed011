#pragma once

#include <string>
#include <vector>

#include "qsr/bitmixer.hpp"

namespace qsr {

// The searchable space: block structure of head / body x K / upsample / tail
// with per-block candidate-op catalogs and the bit list shared by all layers.
struct SearchSpaceSpec {
    int channels = 8;
    int body_repeats = 1;  // K
    int scale = 2;         // super-resolution factor r
    std::vector<int> bits = {4, 8};
    // keep the first and last searchable layers at full precision
    bool exempt_first_last = false;

    std::vector<std::string> head_ops = {"simple 3x3", "simple 5x5", "simple 3x3 grouped 3",
                                         "simple 5x5 grouped 3"};
    std::vector<std::string> body_ops = {"conv 5x1 1x5", "conv 3x1 1x3", "simple 3x3",
                                         "simple 5x5"};
    std::vector<std::string> skip_ops = {"simple 1x1", "simple 3x3", "simple 5x5"};
    std::vector<std::string> upsample_ops = {"conv 5x1 1x5", "conv 3x1 1x3", "simple 3x3",
                                             "simple 5x5"};
    std::vector<std::string> tail_ops = {"simple 1x1", "simple 3x3", "simple 5x5"};

    std::string version = "basic-small-b/1";

    static SearchSpaceSpec desk_default() { return SearchSpaceSpec{}; }
    // the paper-scale preset (not exercised by tests)
    static SearchSpaceSpec paper_scale() {
        SearchSpaceSpec s;
        s.channels = 36;
        s.body_repeats = 3;
        s.scale = 4;
        return s;
    }
};

// Parses catalog entries like "simple 3x3", "simple 5x5 grouped 3",
// "conv 5x1 1x5" (separable pair).
OpSpec parse_op_name(const std::string& name);

// Whether the op can be built at this position (groups must divide both
// channel counts).
bool op_applicable(const OpSpec& op, int in_ch, int out_ch);

// One searchable layer position in the network.
struct LayerPos {
    std::string block;  // "head", "body<k>", "upsample", "tail"
    int index = 0;      // within the block (body: 0=seq1, 1=seq2, 2=skip)
    int in_ch = 0;
    int out_ch = 0;
    int hw_scale = 1;  // pixel multiplier vs the LR input (tail runs at r^2)
    const std::vector<std::string>* catalog = nullptr;
};

// Ordered searchable-layer positions of the space (head.0, head.1,
// body0.{0,1,2}, ..., upsample.0, tail.0, tail.1).
std::vector<LayerPos> layer_positions(const SearchSpaceSpec& space);

// Catalog entries applicable at a position; throws ConfigError if none remain.
std::vector<OpSpec> applicable_ops(const LayerPos& pos);

struct GenotypeLayer {
    std::string block;
    int index = 0;
    std::string op;
    int bits = 8;
};

// The discretized architecture: one (op, bits) choice per searchable layer.
struct Genotype {
    std::string space_version;
    int channels = 8;
    int body_repeats = 1;
    int scale = 2;
    std::vector<GenotypeLayer> layers;
    std::vector<double> alpha_margins;

    std::string to_json() const;
    static Genotype from_json_text(const std::string& text);
    void save(const std::string& path) const;
    static Genotype load(const std::string& path);

    SearchSpaceSpec space_with_defaults() const {
        SearchSpaceSpec s;
        s.channels = channels;
        s.body_repeats = body_repeats;
        s.scale = scale;
        s.version = space_version;
        return s;
    }
};

}  // namespace qsr
