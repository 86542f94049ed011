#include "qsr/objective.hpp"

#include <cmath>
#include <sstream>

namespace qsr {

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ContractError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                            shape_str(target.shape()));
    return mean(abs(sub(pred, target)));
}

namespace {
double g_flop_unit = 1.0;  // MAC convention; 2.0 counts mul+add
}

double flop_unit_scale() { return g_flop_unit; }
void set_flop_unit_scale(double s) { g_flop_unit = s; }

double flops_of(const OpSpec& op, int in_ch, int out_ch, long out_pixels) {
    const double px = static_cast<double>(out_pixels);
    if (!op.separable)
        return px * op.k1h * op.k1w * (static_cast<double>(in_ch) / op.groups) * out_ch *
               g_flop_unit;
    const int mid = in_ch;
    double macs = px * op.k1h * op.k1w * (static_cast<double>(in_ch) / op.groups) * mid;
    macs += px * op.k2h * op.k2w * (static_cast<double>(mid) / op.groups) * out_ch;
    return macs * g_flop_unit;
}

static std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string CostReport::to_csv() const {
    std::ostringstream os;
    os << "layer_id,block,op,bits,flops,bitops\n";
    for (const auto& r : per_layer)
        os << r.layer_id << "," << r.block << "," << r.op << "," << r.bits << ","
           << fmt_double(r.flops) << "," << fmt_double(r.bitops) << "\n";
    return os.str();
}

CostReport cost_report(const Genotype& genotype, int image_h, int image_w) {
    CostReport rep;
    rep.image_h = image_h;
    rep.image_w = image_w;
    auto positions = layer_positions(genotype.space_with_defaults());
    if (positions.size() != genotype.layers.size())
        throw ConfigError("genotype layer count does not match its space");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto& pos = positions[i];
        const auto& gl = genotype.layers[i];
        OpSpec op = parse_op_name(gl.op);
        const long px = static_cast<long>(image_h) * image_w * pos.hw_scale;
        CostRow row;
        row.layer_id = pos.block + "." + std::to_string(pos.index);
        row.block = pos.block;
        row.op = gl.op;
        row.bits = gl.bits;
        row.flops = flops_of(op, pos.in_ch, pos.out_ch, px);
        row.bitops = static_cast<double>(gl.bits) * gl.bits * row.flops;
        rep.per_layer.push_back(row);
        rep.total_flops += row.flops;
        rep.total_bitops += row.bitops;
    }
    return rep;
}

CostReport cost_report_layers(const std::vector<PresetLayer>& layers, int image_h, int image_w,
                              int bits) {
    CostReport rep;
    rep.image_h = image_h;
    rep.image_w = image_w;
    for (const auto& l : layers) {
        const long px = static_cast<long>(image_h) * image_w * l.hw_scale;
        CostRow row;
        row.layer_id = l.id;
        row.block = l.id;
        row.op = l.op.name;
        row.bits = bits;
        row.flops = flops_of(l.op, l.in_ch, l.out_ch, px);
        row.bitops = static_cast<double>(bits) * bits * row.flops;
        rep.per_layer.push_back(row);
        rep.total_flops += row.flops;
        rep.total_bitops += row.bitops;
    }
    return rep;
}

std::vector<PresetLayer> espcn_preset(int scale) {
    auto simple = [](int k) {
        OpSpec op;
        op.name = "simple " + std::to_string(k) + "x" + std::to_string(k);
        op.k1h = op.k1w = k;
        return op;
    };
    return {
        {"conv1", simple(5), 3, 64, 1},
        {"conv2", simple(3), 64, 32, 1},
        {"conv3", simple(3), 32, 3 * scale * scale, 1},
    };
}

std::vector<std::vector<double>> edge_bitops_table(const Supernet& net, int image_h, int image_w) {
    std::vector<std::vector<double>> table;
    for (const SupernetLayer* l : net.layers()) {
        std::vector<double> row;
        const long px = static_cast<long>(image_h) * image_w * l->pos.hw_scale;
        for (const auto& e : l->edges) {
            const double f = flops_of(e.op.spec, e.op.in_ch, e.op.out_ch, px);
            for (int b : l->bits) row.push_back(static_cast<double>(b) * b * f);
        }
        table.push_back(std::move(row));
    }
    return table;
}

SoftBitops SoftBitops::make(const Supernet& net, int image_h, int image_w) {
    SoftBitops sb;
    sb.coeffs_ = edge_bitops_table(net, image_h, image_w);
    double init = 0.0;
    for (const auto& row : sb.coeffs_) {
        double acc = 0.0;
        for (double c : row) acc += c;
        init += acc / static_cast<double>(row.size());  // uniform alpha = 1/|row|
    }
    if (init <= 0.0) throw ContractError("soft bitops: non-positive init normalization");
    sb.init_value_ = init;
    return sb;
}

Tensor SoftBitops::loss(Supernet& net) const {
    auto layers = net.layers();
    if (layers.size() != coeffs_.size())
        throw ContractError("soft bitops: layer count changed since make()");
    Tensor acc;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        SupernetLayer* l = layers[i];
        Tensor alpha = l->forced_alpha.empty()
                           ? softmax(l->logits)
                           : Tensor::from_data({l->edge_count()}, l->forced_alpha, false);
        Tensor term = weighted_sum(alpha, coeffs_[i]);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scalar_mul(acc, 1.0 / init_value_);
}

double SoftBitops::raw_value(const std::vector<std::vector<double>>& alphas) const {
    if (alphas.size() != coeffs_.size())
        throw ContractError("soft bitops: alpha table shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (alphas[i].size() != coeffs_[i].size())
            throw ContractError("soft bitops: alpha row length mismatch");
        for (std::size_t j = 0; j < alphas[i].size(); ++j) total += alphas[i][j] * coeffs_[i][j];
    }
    return total;
}

Tensor entropy_loss(Supernet& net) {
    Tensor acc;
    for (SupernetLayer* l : net.layers()) {
        Tensor alpha = l->forced_alpha.empty()
                           ? softmax(l->logits)
                           : Tensor::from_data({l->edge_count()}, l->forced_alpha, false);
        Tensor h = entropy(alpha);
        acc = acc.defined() ? add(acc, h) : h;
    }
    return acc;
}

double mu_schedule(const ScheduleState& s) {
    if (s.epoch < s.warmup_epochs) return 0.0;
    const double t = static_cast<double>(s.epoch);
    const double T = static_cast<double>(std::max(s.total_epochs, 1));
    return s.mu0 * (t / T) * std::log1p(t);
}

Tensor total_alpha_loss(const Tensor& l1, const Tensor& cq, const Tensor& le,
                        const ScheduleState& s) {
    return add(l1, add(scalar_mul(cq, s.eta), scalar_mul(le, mu_schedule(s))));
}

}  // namespace qsr
