#pragma once

#include <string>

#include "qsr/search.hpp"

namespace qsr {

// Procedural texture: seeded mixture of oriented gratings, checkerboards,
// band-limited noise and gradients; [3,S,S] values in [0,1].
Tensor synth_texture(int size, Rng& rng);

// Bicubic (a = -0.5) resampling with reflect padding on [C,H,W] images.
// Downscale is antialiased (kernel stretched by r) and requires dims
// divisible by r; both are deterministic and reproduce constants exactly.
Tensor bicubic_downscale(const Tensor& img, int r);
Tensor bicubic_upscale(const Tensor& img, int r);

// count HR/LR pairs of the given HR size; LR via bicubic downscale.
SrDataset make_synthetic_dataset(int count, int hr_size, int scale, std::uint64_t seed);

// Splits off the first half / second half (disjoint) for the alternating
// search.
std::pair<SrDataset, SrDataset> split_halves(const SrDataset& data);

// Mean PSNR of plain bicubic upscaling over a dataset.
double bicubic_baseline_psnr(const SrDataset& data);

// 8-bit RGB PNG I/O; images as [3,H,W] doubles in [0,1].
void write_png_rgb8(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

// Loads every *.png in a directory as HR images and builds LR pairs.
SrDataset load_png_dir(const std::string& dir, int scale);

}  // namespace qsr
