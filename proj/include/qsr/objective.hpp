#pragma once

#include <string>
#include <vector>

#include "qsr/supernet.hpp"

namespace qsr {

// Mean absolute error over all elements.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// MAC count of one candidate op at the given output pixel count (one MAC
// counts as one operation; see flop_unit_scale for the x2 convention).
double flops_of(const OpSpec& op, int in_ch, int out_ch, long out_pixels);

// Global counting convention: 1.0 counts MACs (default), 2.0 counts
// multiply+add separately. Config-level knob.
double flop_unit_scale();
void set_flop_unit_scale(double s);

struct CostRow {
    std::string layer_id;
    std::string block;
    std::string op;
    int bits = 0;
    double flops = 0;
    double bitops = 0;
};

struct CostReport {
    std::vector<CostRow> per_layer;
    double total_flops = 0;
    double total_bitops = 0;
    int image_h = 0, image_w = 0;

    std::string to_csv() const;
};

// Static cost of a discretized architecture at an LR image size.
CostReport cost_report(const Genotype& genotype, int image_h, int image_w);

// Arbitrary fixed layer stacks (for named presets).
struct PresetLayer {
    std::string id;
    OpSpec op;
    int in_ch = 0, out_ch = 0;
    int hw_scale = 1;
};
CostReport cost_report_layers(const std::vector<PresetLayer>& layers, int image_h, int image_w,
                              int bits);
// The three-conv ESPCN stack (5x5 3->64, 3x3 64->32, 3x3 32->3r^2).
std::vector<PresetLayer> espcn_preset(int scale = 4);

// b^2 * F_fp coefficient per (layer, flat (op,bit) index) of a supernet.
std::vector<std::vector<double>> edge_bitops_table(const Supernet& net, int image_h, int image_w);

// Differentiable-in-alpha BitOps penalty: the triple sum of alpha * b^2 * F_fp
// normalized by its value at the uniform-alpha initialization.
class SoftBitops {
public:
    SoftBitops() = default;
    static SoftBitops make(const Supernet& net, int image_h, int image_w);

    // graph scalar; reads each layer's live softmax (or forced alpha)
    Tensor loss(Supernet& net) const;
    // the unnormalized inner sum at explicitly given alphas (oracle hook)
    double raw_value(const std::vector<std::vector<double>>& alphas) const;
    double init_value() const { return init_value_; }
    const std::vector<std::vector<double>>& coeffs() const { return coeffs_; }

private:
    std::vector<std::vector<double>> coeffs_;
    double init_value_ = 1.0;
};

// Sum over layers of the Shannon entropy of the flat (op,bit) alpha vector.
Tensor entropy_loss(Supernet& net);

struct ScheduleState {
    int epoch = 0;
    int total_epochs = 20;
    int warmup_epochs = 2;
    double mu0 = 1e-4;
    double eta = 0.0;
};

// mu(t) = 0 during warmup, then mu0 * (t/T) * log(1+t); nondecreasing.
double mu_schedule(const ScheduleState& s);

// L(alpha) = L1 + eta * Lcq + mu(t) * Le as a graph scalar.
Tensor total_alpha_loss(const Tensor& l1, const Tensor& cq, const Tensor& le,
                        const ScheduleState& s);

}  // namespace qsr
