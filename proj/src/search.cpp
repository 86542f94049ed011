#include "qsr/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace qsr {

std::pair<Tensor, Tensor> collate(const SrDataset& data, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ContractError("collate: empty batch");
    const Tensor& lr0 = data.samples[idx[0]].lr;
    const Tensor& hr0 = data.samples[idx[0]].hr;
    const int b = static_cast<int>(idx.size());
    Tensor lr = Tensor::zeros({b, lr0.dim(0), lr0.dim(1), lr0.dim(2)});
    Tensor hr = Tensor::zeros({b, hr0.dim(0), hr0.dim(1), hr0.dim(2)});
    for (int i = 0; i < b; ++i) {
        const auto& s = data.samples[idx[static_cast<std::size_t>(i)]];
        if (s.lr.shape() != lr0.shape() || s.hr.shape() != hr0.shape())
            throw ContractError("collate: inhomogeneous sample shapes");
        std::copy(s.lr.data(), s.lr.data() + s.lr.numel(), lr.data() + i * lr0.numel());
        std::copy(s.hr.data(), s.hr.data() + s.hr.numel(), hr.data() + i * hr0.numel());
    }
    return {lr, hr};
}

namespace {

// deterministic Fisher-Yates over sample indices
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

std::vector<std::size_t> batch_slice(const std::vector<std::size_t>& order, std::size_t start,
                                     std::size_t count) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(order[(start + i) % order.size()]);
    return out;
}

void clamp_steps(std::vector<Tensor>& steps) {
    for (auto& s : steps)
        if (s.defined() && s.data()[0] < 1e-8) s.data()[0] = 1e-8;
}

std::vector<Tensor> supernet_steps(Supernet& net) {
    std::vector<Tensor> out;
    for (auto* l : net.layers())
        for (auto& e : l->edges) {
            for (auto& s : e.wstep1) out.push_back(s);
            for (auto& s : e.wstep2) out.push_back(s);
        }
    return out;
}

double finite_or_throw(const Tensor& loss, const std::string& what) {
    const double v = loss.value();
    if (!std::isfinite(v)) throw NumericError("NaN/Inf in " + what);
    return v;
}

}  // namespace

SearchResult search(Supernet& net, const SrDataset& split_alpha, const SrDataset& split_w,
                    const SearchConfig& cfg, std::vector<EpochStats>* live_history) {
    if (split_alpha.empty() || split_w.empty())
        throw ContractError("search: both data splits must be non-empty");

    Rng rng_data(Rng(cfg.seed).fork(101).next_u64());
    Rng rng_noise(Rng(cfg.seed).fork(202).next_u64());

    SoftBitops soft = SoftBitops::make(net, cfg.bitops_image, cfg.bitops_image);
    Adam alpha_opt(net.alpha_parameters(), cfg.alpha_lr, 0.9, 0.999, 1e-8, 0.0);
    SgdMomentum w_opt(net.weight_parameters(), cfg.w_lr, cfg.w_momentum, cfg.w_weight_decay);
    auto steps = supernet_steps(net);

    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t iters_per_epoch = std::max<std::size_t>(
        1, std::min(split_alpha.size(), split_w.size()) / std::max<std::size_t>(1, bs));

    SearchResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ScheduleState sched{epoch, cfg.epochs, cfg.warmup_epochs, cfg.mu0, cfg.eta};
        w_opt.set_lr(cosine_lr(cfg.w_lr, epoch, cfg.epochs));
        auto order_a = shuffled_indices(split_alpha.size(), rng_data);
        auto order_b = shuffled_indices(split_w.size(), rng_data);

        EpochStats stats;
        stats.epoch = epoch;
        stats.mu = mu_schedule(sched);
        for (std::size_t it = 0; it < iters_per_epoch; ++it) {
            RngNoise noise(rng_noise, cfg.noise_dist);

            // alpha pass (Alg. steps: draw noise, L(alpha), backprop, update)
            {
                auto [lr, hr] = collate(split_alpha,
                                        batch_slice(order_a, it * bs, std::min(bs, split_alpha.size())));
                Tensor pred = net.forward(lr, PassMode::AlphaStep, &noise);
                Tensor l1 = l1_loss(pred, hr);
                Tensor cq = soft.loss(net);
                Tensor le = entropy_loss(net);
                Tensor total = total_alpha_loss(l1, cq, le, sched);
                stats.l1 += finite_or_throw(l1, "L1 (alpha pass), epoch " + std::to_string(epoch));
                stats.l_cq += finite_or_throw(cq, "L_cq, epoch " + std::to_string(epoch));
                stats.l_e += finite_or_throw(le, "L_e, epoch " + std::to_string(epoch));
                finite_or_throw(total, "L(alpha), epoch " + std::to_string(epoch));
                alpha_opt.zero_grad();
                backward(total);
                alpha_opt.step();
            }

            // W pass on the disjoint split, fresh noise
            {
                auto [lr, hr] =
                    collate(split_w, batch_slice(order_b, it * bs, std::min(bs, split_w.size())));
                Tensor pred = net.forward(lr, PassMode::WeightStep, &noise);
                Tensor l1 = l1_loss(pred, hr);
                finite_or_throw(l1, "L1 (W pass), epoch " + std::to_string(epoch));
                w_opt.zero_grad();
                backward(l1);
                w_opt.step();
                clamp_steps(steps);
            }
        }
        const double inv = 1.0 / static_cast<double>(iters_per_epoch);
        stats.l1 *= inv;
        stats.l_cq *= inv;
        stats.l_e *= inv;
        for (auto* l : net.layers()) {
            auto a = l->alpha_values();
            stats.max_alpha.push_back(*std::max_element(a.begin(), a.end()));
        }
        result.history.push_back(stats);
        if (live_history) live_history->push_back(stats);
    }

    result.genotype = net.discretize(edge_bitops_table(net, cfg.bitops_image, cfg.bitops_image));
    return result;
}

RetrainResult retrain(FixedNet& net, const SrDataset& train, const SrDataset& val,
                      const TrainConfig& cfg) {
    if (train.empty()) throw ContractError("retrain: empty training set");
    Rng rng_data(Rng(cfg.seed).fork(303).next_u64());
    SgdMomentum opt(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay);
    std::vector<Tensor> steps;
    auto collect_steps = [&steps](FixedConv& c) {
        if (c.bits < kFullPrecisionBits) {
            steps.push_back(c.wstep1);
            if (c.op.spec.separable) steps.push_back(c.wstep2);
        }
    };
    collect_steps(net.head1);
    collect_steps(net.head2);
    for (auto& b : net.bodies) {
        collect_steps(b->seq1);
        collect_steps(b->seq2);
        collect_steps(b->skip);
    }
    collect_steps(net.up);
    collect_steps(net.tail1);
    collect_steps(net.tail2);

    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t iters = std::max<std::size_t>(1, train.size() / std::max<std::size_t>(1, bs));

    RetrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_lr(cosine_lr(cfg.lr, epoch, cfg.epochs));
        auto order = shuffled_indices(train.size(), rng_data);
        double epoch_loss = 0.0;
        for (std::size_t it = 0; it < iters; ++it) {
            auto [lr, hr] = collate(train, batch_slice(order, it * bs, std::min(bs, train.size())));
            Tensor pred = net.forward(lr, PassMode::WeightStep);
            Tensor loss = l1_loss(pred, hr);
            epoch_loss += finite_or_throw(loss, "retrain L1, epoch " + std::to_string(epoch));
            opt.zero_grad();
            backward(loss);
            opt.step();
            clamp_steps(steps);
        }
        result.epoch_l1.push_back(epoch_loss / static_cast<double>(iters));
    }
    result.psnr = val.empty() ? std::numeric_limits<double>::quiet_NaN() : eval_psnr(net, val);
    return result;
}

double psnr(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ContractError("psnr: shape mismatch " + shape_str(pred.shape()) + " vs " +
                            shape_str(target.shape()));
    int c, hw, n;
    if (pred.ndim() == 4) {
        n = pred.dim(0);
        c = pred.dim(1);
        hw = pred.dim(2) * pred.dim(3);
    } else if (pred.ndim() == 3) {
        n = 1;
        c = pred.dim(0);
        hw = pred.dim(1) * pred.dim(2);
    } else {
        throw ContractError("psnr: expects [N,C,H,W] or [C,H,W]");
    }
    if (c != 1 && c != 3) throw ContractError("psnr: channel count must be 1 or 3");

    const double wr = 0.299, wg = 0.587, wb = 0.114;  // BT.601
    double mse = 0.0;
    long count = 0;
    for (int ni = 0; ni < n; ++ni) {
        const double* p = pred.data() + static_cast<std::size_t>(ni) * c * hw;
        const double* t = target.data() + static_cast<std::size_t>(ni) * c * hw;
        for (int i = 0; i < hw; ++i) {
            double yp, yt;
            if (c == 3) {
                yp = wr * p[i] + wg * p[hw + i] + wb * p[2 * hw + i];
                yt = wr * t[i] + wg * t[hw + i] + wb * t[2 * hw + i];
            } else {
                yp = p[i];
                yt = t[i];
            }
            const double d = yp - yt;
            mse += d * d;
            ++count;
        }
    }
    mse /= static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double eval_psnr(FixedNet& net, const SrDataset& data) {
    if (data.empty()) throw ContractError("eval_psnr: empty dataset");
    NoGradGuard ng;
    double acc = 0.0;
    for (const auto& s : data.samples) {
        Tensor lr = Tensor::from_data({1, s.lr.dim(0), s.lr.dim(1), s.lr.dim(2)}, s.lr.vec());
        Tensor pred = net.forward(lr, PassMode::Eval);
        for (long i = 0; i < pred.numel(); ++i)
            pred.data()[i] = std::min(1.0, std::max(0.0, pred.data()[i]));
        Tensor hr = Tensor::from_data({1, s.hr.dim(0), s.hr.dim(1), s.hr.dim(2)}, s.hr.vec());
        acc += psnr(pred, hr);
    }
    return acc / static_cast<double>(data.size());
}

std::vector<std::size_t> non_dominated(const std::vector<std::pair<double, double>>& pts) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
            if (i == j) continue;
            const bool no_worse = pts[j].first <= pts[i].first && pts[j].second >= pts[i].second;
            const bool better = pts[j].first < pts[i].first || pts[j].second > pts[i].second;
            if (no_worse && better) dominated = true;
        }
        if (!dominated) keep.push_back(i);
    }
    return keep;
}

std::vector<SweepEntry> pareto_sweep(const SearchSpaceSpec& space, const SearchConfig& base_cfg,
                                     const TrainConfig& train_cfg, const std::vector<double>& etas,
                                     const SrDataset& split_alpha, const SrDataset& split_w,
                                     const SrDataset& train, const SrDataset& val) {
    std::vector<SweepEntry> rows;
    for (double eta : etas) {
        SweepEntry entry;
        entry.eta = eta;
        try {
            SearchConfig cfg = base_cfg;
            cfg.eta = eta;
            Rng rng(Rng(cfg.seed).fork(7).next_u64());
            Supernet net = Supernet::build(space, cfg.strategy, rng);
            net.san_scaling = cfg.san_scaling;
            SearchResult sr = search(net, split_alpha, split_w, cfg);
            entry.genotype = sr.genotype;
            entry.bitops =
                cost_report(sr.genotype, cfg.bitops_image, cfg.bitops_image).total_bitops;
            Rng rng_init(Rng(train_cfg.seed).fork(8).next_u64());
            FixedNet fixed = FixedNet::instantiate(sr.genotype, rng_init);
            entry.psnr = retrain(fixed, train, val, train_cfg).psnr;
        } catch (const std::exception& e) {
            entry.failed = true;
            entry.error = e.what();
        }
        rows.push_back(std::move(entry));
    }
    std::vector<std::pair<double, double>> pts;
    std::vector<std::size_t> ok_idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (!rows[i].failed) {
            pts.emplace_back(rows[i].bitops, rows[i].psnr);
            ok_idx.push_back(i);
        }
    for (std::size_t k : non_dominated(pts)) rows[ok_idx[k]].on_front = true;
    return rows;
}

std::vector<TimingRow> timing_bench(const SearchSpaceSpec& base_space,
                                    const std::vector<MixStrategy>& strategies,
                                    const std::vector<std::vector<int>>& bit_lists, int iterations,
                                    int batch, int patch, std::uint64_t seed) {
    std::vector<TimingRow> rows;
    for (const auto& bits : bit_lists) {
        for (MixStrategy strategy : strategies) {
            SearchSpaceSpec space = base_space;
            space.bits = bits;
            Rng rng(Rng(seed).fork(11).next_u64());
            Supernet net = Supernet::build(space, strategy, rng);

            // identical random data across strategies (same seed fork)
            Rng rng_batch(Rng(seed).fork(12).next_u64());
            Tensor lr = Tensor::zeros({batch, 3, patch, patch});
            for (long i = 0; i < lr.numel(); ++i) lr.data()[i] = rng_batch.uniform();
            Tensor hr = Tensor::zeros({batch, 3, patch * space.scale, patch * space.scale});
            for (long i = 0; i < hr.numel(); ++i) hr.data()[i] = rng_batch.uniform();

            SearchConfig cfg;
            cfg.strategy = strategy;
            cfg.seed = seed;
            SoftBitops soft = SoftBitops::make(net, patch, patch);
            Adam alpha_opt(net.alpha_parameters(), cfg.alpha_lr);
            SgdMomentum w_opt(net.weight_parameters(), cfg.w_lr, cfg.w_momentum,
                              cfg.w_weight_decay);
            Rng rng_noise(Rng(seed).fork(13).next_u64());
            ScheduleState sched{2, 20, 2, cfg.mu0, cfg.eta};

            reset_op_apply_count();
            const auto t0 = std::chrono::steady_clock::now();
            for (int it = 0; it < iterations; ++it) {
                RngNoise noise(rng_noise, cfg.noise_dist);
                {
                    Tensor pred = net.forward(lr, PassMode::AlphaStep, &noise);
                    Tensor total = total_alpha_loss(l1_loss(pred, hr), soft.loss(net),
                                                    entropy_loss(net), sched);
                    alpha_opt.zero_grad();
                    backward(total);
                    alpha_opt.step();
                }
                {
                    Tensor pred = net.forward(lr, PassMode::WeightStep, &noise);
                    Tensor loss = l1_loss(pred, hr);
                    w_opt.zero_grad();
                    backward(loss);
                    w_opt.step();
                }
            }
            const auto t1 = std::chrono::steady_clock::now();
            TimingRow row;
            row.strategy = strategy_name(strategy);
            row.n_bits = static_cast<int>(bits.size());
            row.iterations = iterations;
            row.seconds = std::chrono::duration<double>(t1 - t0).count();
            row.op_applies = op_apply_count();
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace qsr
