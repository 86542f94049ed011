#include "qsr/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace qsr {

// --- BatchNorm2d -------------------------------------------------------------

BatchNorm2d BatchNorm2d::make(int channels) {
    BatchNorm2d bn;
    bn.gamma = Tensor::full({channels}, 1.0, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
    bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
    return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, PassMode mode, bool detach_params) {
    const bool training = mode != PassMode::Eval;
    const bool update = mode == PassMode::WeightStep;
    Tensor g = detach_params ? gamma.detach() : gamma;
    Tensor b = detach_params ? beta.detach() : beta;
    return batch_norm(x, g, b, running_mean, running_var, training, update, momentum, eps);
}

void BatchNorm2d::copy_state_from(const BatchNorm2d& other) {
    gamma.vec() = other.gamma.vec();
    beta.vec() = other.beta.vec();
    running_mean = other.running_mean;
    running_var = other.running_var;
}

// --- SupernetLayer -----------------------------------------------------------

std::vector<double> SupernetLayer::alpha_values() const {
    if (!forced_alpha.empty()) return forced_alpha;
    NoGradGuard ng;
    Tensor a = softmax(logits);
    return a.vec();
}

Tensor SupernetLayer::forward(const Tensor& x, PassMode mode, MixContext& ctx) {
    const int nb = static_cast<int>(bits.size());
    Tensor alpha_t;
    if (!forced_alpha.empty()) {
        alpha_t = Tensor::from_data({edge_count()}, forced_alpha, false);
    } else if (mode == PassMode::AlphaStep) {
        alpha_t = softmax(logits);
    } else {
        NoGradGuard ng;
        alpha_t = softmax(logits);
    }
    double total = 0.0;
    for (long i = 0; i < alpha_t.numel(); ++i) total += alpha_t.data()[i];
    if (std::fabs(total - 1.0) > 1e-9)
        throw ContractError("layer " + pos.block + "." + std::to_string(pos.index) +
                            ": alpha left the simplex (sum=" + std::to_string(total) + ")");

    Tensor out;
    for (std::size_t i = 0; i < edges.size(); ++i) {
        std::vector<Tensor> slice;
        slice.reserve(bits.size());
        for (int j = 0; j < nb; ++j) slice.push_back(select(alpha_t, static_cast<int>(i) * nb + j));
        Tensor y = edges[i].forward(x, slice, ctx);
        out = out.defined() ? add(out, y) : y;
    }
    return out;
}

// --- BodyBlock (ADQ) ---------------------------------------------------------

Tensor BodyBlock::forward(const Tensor& x, PassMode mode, MixContext& ctx) {
    if (x.dim(2) * x.dim(3) < 2)
        throw ContractError("ADQ block needs at least 2 spatial elements");
    Tensor sigma = clamp_min(std_over_channels(x), 1e-8);
    Tensor z = use_bn ? bn.forward(x, mode, ctx.detach_weights) : x;
    Tensor inner = add(seq2.forward(seq1.forward(z, mode, ctx), mode, ctx), skip.forward(z, mode, ctx));
    Tensor g = ctx.detach_weights ? gamma.detach() : gamma;
    Tensor b = ctx.detach_weights ? beta.detach() : beta;
    Tensor scale = add(mul(g, sigma), b);  // [N]
    return add(mul_per_sample(inner, scale), x);
}

// --- Supernet ----------------------------------------------------------------

static SupernetLayer build_layer(const LayerPos& pos, const std::vector<int>& bits,
                                 MixStrategy strategy, Rng& rng) {
    SupernetLayer layer;
    layer.pos = pos;
    layer.bits = bits;
    for (const OpSpec& spec : applicable_ops(pos)) {
        CandidateOp op{spec, pos.in_ch, pos.out_ch};
        layer.edges.push_back(MixedEdge::make(op, bits, strategy, rng));
    }
    layer.logits = Tensor::zeros({layer.edge_count()}, true);
    return layer;
}

Supernet Supernet::build(const SearchSpaceSpec& space, MixStrategy strategy, Rng& rng) {
    Supernet net;
    net.space = space;
    net.strategy = strategy;
    auto positions = layer_positions(space);
    const std::vector<int> fp_bits{kFullPrecisionBits};
    std::size_t p = 0;
    net.head1 = build_layer(positions[p++], space.exempt_first_last ? fp_bits : space.bits,
                            strategy, rng);
    net.head2 = build_layer(positions[p++], space.bits, strategy, rng);
    for (int k = 0; k < space.body_repeats; ++k) {
        auto block = std::make_unique<BodyBlock>();
        block->seq1 = build_layer(positions[p++], space.bits, strategy, rng);
        block->seq2 = build_layer(positions[p++], space.bits, strategy, rng);
        block->skip = build_layer(positions[p++], space.bits, strategy, rng);
        block->bn = BatchNorm2d::make(space.channels);
        block->gamma = Tensor::scalar(0.0, true);
        block->beta = Tensor::scalar(1.0, true);
        net.bodies.push_back(std::move(block));
    }
    net.upsample = build_layer(positions[p++], space.bits, strategy, rng);
    net.tail1 = build_layer(positions[p++], space.bits, strategy, rng);
    net.tail2 = build_layer(positions[p++], space.exempt_first_last ? fp_bits : space.bits,
                            strategy, rng);
    return net;
}

Tensor Supernet::forward(const Tensor& x, PassMode mode, NoiseSource* noise) {
    if (x.ndim() != 4 || x.dim(1) != 3)
        throw ContractError("supernet expects [N,3,H,W] input, got " + shape_str(x.shape()));
    MixContext ctx;
    ctx.detach_weights = mode == PassMode::AlphaStep;
    ctx.noise = noise;
    ctx.san_scaling = san_scaling;

    Tensor h = head2.forward(head1.forward(x, mode, ctx), mode, ctx);
    for (auto& body : bodies) h = body->forward(h, mode, ctx);
    Tensor u = pixel_shuffle(upsample.forward(h, mode, ctx), space.scale);
    Tensor t = tail2.forward(add(tail1.forward(u, mode, ctx), u), mode, ctx);
    return t;
}

std::vector<SupernetLayer*> Supernet::layers() {
    std::vector<SupernetLayer*> out{&head1, &head2};
    for (auto& b : bodies) {
        out.push_back(&b->seq1);
        out.push_back(&b->seq2);
        out.push_back(&b->skip);
    }
    out.push_back(&upsample);
    out.push_back(&tail1);
    out.push_back(&tail2);
    return out;
}

std::vector<const SupernetLayer*> Supernet::layers() const {
    auto mut = const_cast<Supernet*>(this)->layers();
    return {mut.begin(), mut.end()};
}

std::vector<Tensor> Supernet::weight_parameters() {
    std::vector<Tensor> out;
    for (auto* l : layers())
        for (auto& e : l->edges)
            for (auto& t : e.parameters()) out.push_back(t);
    for (auto& b : bodies) {
        out.push_back(b->bn.gamma);
        out.push_back(b->bn.beta);
        out.push_back(b->gamma);
        out.push_back(b->beta);
    }
    return out;
}

std::vector<Tensor> Supernet::alpha_parameters() {
    std::vector<Tensor> out;
    for (auto* l : layers()) out.push_back(l->logits);
    return out;
}

Genotype Supernet::discretize(const std::vector<std::vector<double>>& edge_costs) const {
    Genotype g;
    g.space_version = space.version;
    g.channels = space.channels;
    g.body_repeats = space.body_repeats;
    g.scale = space.scale;
    auto ls = layers();
    for (std::size_t li = 0; li < ls.size(); ++li) {
        const SupernetLayer* l = ls[li];
        const int nb = static_cast<int>(l->bits.size());
        std::vector<double> a = l->alpha_values();
        const std::vector<double>* costs =
            (li < edge_costs.size() && !edge_costs[li].empty()) ? &edge_costs[li] : nullptr;
        int best = 0;
        for (int i = 1; i < static_cast<int>(a.size()); ++i) {
            const double tol = 1e-12 * std::max(1.0, std::fabs(a[best]));
            if (a[i] > a[best] + tol) {
                best = i;
            } else if (std::fabs(a[i] - a[best]) <= tol && costs) {
                if ((*costs)[i] < (*costs)[best] - 1e-9) best = i;
            }
        }
        double second = -1.0;
        for (int i = 0; i < static_cast<int>(a.size()); ++i)
            if (i != best) second = std::max(second, a[i]);
        if (second < 0.0) second = 0.0;  // single-edge layer
        GenotypeLayer gl;
        gl.block = l->pos.block;
        gl.index = l->pos.index;
        gl.op = l->edges[static_cast<std::size_t>(best / nb)].op.spec.name;
        gl.bits = l->bits[static_cast<std::size_t>(best % nb)];
        g.layers.push_back(gl);
        g.alpha_margins.push_back(a[best] - second);
    }
    return g;
}

void Supernet::set_forced_alpha(const std::vector<std::vector<double>>& per_layer) {
    auto ls = layers();
    if (per_layer.size() != ls.size())
        throw ContractError("forced alpha: expected " + std::to_string(ls.size()) + " layers");
    for (std::size_t i = 0; i < ls.size(); ++i) ls[i]->forced_alpha = per_layer[i];
}

void Supernet::clear_forced_alpha() {
    for (auto* l : layers()) l->forced_alpha.clear();
}

// --- FixedNet ------------------------------------------------------------------

FixedConv FixedConv::make(const CandidateOp& op, int bits, Rng& rng) {
    FixedConv fc;
    fc.op = op;
    fc.bits = bits;
    fc.params = op.init_params(rng);
    const int init_bits = bits >= kFullPrecisionBits ? 8 : bits;
    fc.wstep1 = Tensor::scalar(step_init_weight(fc.params.w1, init_bits), true);
    if (op.spec.separable)
        fc.wstep2 = Tensor::scalar(step_init_weight(fc.params.w2, init_bits), true);
    return fc;
}

Tensor FixedConv::forward(const Tensor& x) {
    Tensor act = x;
    if (bits < kFullPrecisionBits) {
        QuantSpec aspec = QuantSpec::act_hwgq(bits);
        act = hwgq_quantize_acts(x, aspec);
    }
    QuantSpec w1s{bits, QuantKind::WeightLsq, wstep1};
    Tensor qw1 = lsq_quantize_weights(params.w1, w1s);
    Tensor qw2;
    if (op.spec.separable) {
        QuantSpec w2s{bits, QuantKind::WeightLsq, wstep2};
        qw2 = lsq_quantize_weights(params.w2, w2s);
    }
    return op.apply(act, qw1, params.b1, qw2, params.b2);
}

std::vector<Tensor> FixedConv::parameters() const {
    std::vector<Tensor> out{params.w1, params.b1};
    if (op.spec.separable) {
        out.push_back(params.w2);
        out.push_back(params.b2);
    }
    if (bits < kFullPrecisionBits) {
        out.push_back(wstep1);
        if (op.spec.separable) out.push_back(wstep2);
    }
    return out;
}

Tensor FixedBodyBlock::forward(const Tensor& x, PassMode mode) {
    Tensor sigma = clamp_min(std_over_channels(x), 1e-8);
    Tensor z = use_bn ? bn.forward(x, mode, false) : x;
    Tensor inner = add(seq2.forward(seq1.forward(z)), skip.forward(z));
    Tensor scale = add(mul(gamma, sigma), beta);
    return add(mul_per_sample(inner, scale), x);
}

static CandidateOp op_for_position(const LayerPos& pos, const std::string& op_name) {
    bool in_catalog = false;
    for (const auto& name : *pos.catalog)
        if (name == op_name) in_catalog = true;
    if (!in_catalog)
        throw ConfigError("genotype op '" + op_name + "' is not in the " + pos.block +
                          " catalog");
    OpSpec spec = parse_op_name(op_name);
    if (!op_applicable(spec, pos.in_ch, pos.out_ch))
        throw ConfigError("genotype op '" + op_name + "' not applicable at " + pos.block + "." +
                          std::to_string(pos.index));
    return CandidateOp{spec, pos.in_ch, pos.out_ch};
}

static void check_bits(int bits) {
    if (!((bits >= 2 && bits <= 8) || bits == kFullPrecisionBits))
        throw ConfigError("genotype bits " + std::to_string(bits) + " outside 2..8 or 32");
}

FixedNet FixedNet::instantiate(const Genotype& genotype, Rng& rng) {
    FixedNet net;
    net.space = genotype.space_with_defaults();
    auto positions = layer_positions(net.space);
    if (genotype.layers.size() != positions.size())
        throw ConfigError("genotype has " + std::to_string(genotype.layers.size()) +
                          " layers, space expects " + std::to_string(positions.size()));
    auto fixed_at = [&](std::size_t i) {
        const auto& gl = genotype.layers[i];
        const auto& pos = positions[i];
        if (gl.block != pos.block || gl.index != pos.index)
            throw ConfigError("genotype layer order mismatch at " + gl.block + "." +
                              std::to_string(gl.index));
        check_bits(gl.bits);
        return FixedConv::make(op_for_position(pos, gl.op), gl.bits, rng);
    };
    std::size_t p = 0;
    net.head1 = fixed_at(p++);
    net.head2 = fixed_at(p++);
    for (int k = 0; k < net.space.body_repeats; ++k) {
        auto block = std::make_unique<FixedBodyBlock>();
        block->seq1 = fixed_at(p++);
        block->seq2 = fixed_at(p++);
        block->skip = fixed_at(p++);
        block->bn = BatchNorm2d::make(net.space.channels);
        block->gamma = Tensor::scalar(0.0, true);
        block->beta = Tensor::scalar(1.0, true);
        net.bodies.push_back(std::move(block));
    }
    net.up = fixed_at(p++);
    net.tail1 = fixed_at(p++);
    net.tail2 = fixed_at(p++);
    return net;
}

FixedNet FixedNet::instantiate_from_supernet(const Genotype& genotype, const Supernet& supernet) {
    Rng rng(1);
    FixedNet net = instantiate(genotype, rng);
    auto src_layers = supernet.layers();
    std::vector<FixedConv*> dst{&net.head1, &net.head2};
    for (auto& b : net.bodies) {
        dst.push_back(&b->seq1);
        dst.push_back(&b->seq2);
        dst.push_back(&b->skip);
    }
    dst.push_back(&net.up);
    dst.push_back(&net.tail1);
    dst.push_back(&net.tail2);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const SupernetLayer* sl = src_layers[i];
        const int nb = static_cast<int>(sl->bits.size());
        const auto& gl = genotype.layers[i];
        int edge_idx = -1;
        for (std::size_t e = 0; e < sl->edges.size(); ++e)
            if (sl->edges[e].op.spec.name == gl.op) edge_idx = static_cast<int>(e);
        if (edge_idx < 0) throw ContractError("op '" + gl.op + "' missing from supernet layer");
        int bit_idx = 0;
        for (int j = 0; j < nb; ++j)
            if (sl->bits[static_cast<std::size_t>(j)] == gl.bits) bit_idx = j;
        const MixedEdge& e = sl->edges[static_cast<std::size_t>(edge_idx)];
        const std::size_t set = e.strategy == MixStrategy::Independent
                                    ? static_cast<std::size_t>(bit_idx)
                                    : 0;
        dst[i]->params.w1.vec() = e.params[set].w1.vec();
        dst[i]->params.b1.vec() = e.params[set].b1.vec();
        dst[i]->wstep1.vec() = e.wstep1[set].vec();
        if (e.op.spec.separable) {
            dst[i]->params.w2.vec() = e.params[set].w2.vec();
            dst[i]->params.b2.vec() = e.params[set].b2.vec();
            dst[i]->wstep2.vec() = e.wstep2[set].vec();
        }
    }
    for (std::size_t k = 0; k < net.bodies.size(); ++k) {
        net.bodies[k]->bn.copy_state_from(supernet.bodies[k]->bn);
        net.bodies[k]->gamma.vec() = supernet.bodies[k]->gamma.vec();
        net.bodies[k]->beta.vec() = supernet.bodies[k]->beta.vec();
        net.bodies[k]->use_bn = supernet.bodies[k]->use_bn;
    }
    return net;
}

Tensor FixedNet::forward(const Tensor& x, PassMode mode) {
    if (x.ndim() != 4 || x.dim(1) != 3)
        throw ContractError("network expects [N,3,H,W] input, got " + shape_str(x.shape()));
    Tensor h = head2.forward(head1.forward(x));
    for (auto& b : bodies) h = b->forward(h, mode);
    Tensor u = pixel_shuffle(up.forward(h), space.scale);
    return tail2.forward(add(tail1.forward(u), u));
}

std::vector<Tensor> FixedNet::parameters() {
    std::vector<Tensor> out;
    auto push = [&out](const FixedConv& c) {
        for (auto& t : c.parameters()) out.push_back(t);
    };
    push(head1);
    push(head2);
    for (auto& b : bodies) {
        push(b->seq1);
        push(b->seq2);
        push(b->skip);
        out.push_back(b->bn.gamma);
        out.push_back(b->bn.beta);
        out.push_back(b->gamma);
        out.push_back(b->beta);
    }
    push(up);
    push(tail1);
    push(tail2);
    return out;
}

void FixedNet::save_weights(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write weights file " + path);
    const char magic[8] = {'Q', 'S', 'R', 'W', 'v', '1', '\n', 0};
    f.write(magic, sizeof(magic));
    auto params = const_cast<FixedNet*>(this)->parameters();
    auto write_block = [&f](const std::vector<double>& v) {
        const std::uint64_t n = v.size();
        f.write(reinterpret_cast<const char*>(&n), sizeof(n));
        f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * 8));
    };
    const std::uint64_t count = params.size() + 2 * bodies.size();
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (auto& t : params) write_block(t.vec());
    for (auto& b : bodies) {
        write_block(b->bn.running_mean);
        write_block(b->bn.running_var);
    }
    if (!f) throw IoError("short write to " + path);
}

void FixedNet::load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read weights file " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, "QSRWv1\n", 7) != 0)
        throw IoError("bad weights file magic in " + path);
    auto read_block = [&f, &path](std::vector<double>& v) {
        std::uint64_t n = 0;
        f.read(reinterpret_cast<char*>(&n), sizeof(n));
        if (!f || n != v.size())
            throw IoError("weights file " + path + " does not match this architecture");
        f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
        if (!f) throw IoError("short read from " + path);
    };
    auto params = parameters();
    std::uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!f || count != params.size() + 2 * bodies.size())
        throw IoError("weights file " + path + " does not match this architecture");
    for (auto& t : params) read_block(t.vec());
    for (auto& b : bodies) {
        read_block(b->bn.running_mean);
        read_block(b->bn.running_var);
    }
}

}  // namespace qsr
