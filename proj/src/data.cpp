#include "qsr/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace qsr {

// --- synthetic textures -------------------------------------------------------

namespace {

void add_grating(std::vector<double>& img, int s, double amp, double fx, double fy, double phase) {
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            img[static_cast<std::size_t>(y) * s + x] +=
                amp * std::sin(6.283185307179586 * (fx * x + fy * y) + phase);
}

void add_checker(std::vector<double>& img, int s, double amp, int px, int py, int ox, int oy) {
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const int cx = ((x + ox) / px) & 1;
            const int cy = ((y + oy) / py) & 1;
            img[static_cast<std::size_t>(y) * s + x] += (cx ^ cy) ? amp : -amp;
        }
}

void add_ramp(std::vector<double>& img, int s, double ax, double ay) {
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            img[static_cast<std::size_t>(y) * s + x] +=
                ax * (static_cast<double>(x) / s - 0.5) + ay * (static_cast<double>(y) / s - 0.5);
}

void add_blobs(std::vector<double>& img, int s, double amp, Rng& rng, int passes) {
    std::vector<double> noise(static_cast<std::size_t>(s) * s);
    for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
    std::vector<double> tmp(noise.size());
    auto reflect = [s](int i) { return i < 0 ? -i - 1 : (i >= s ? 2 * s - 1 - i : i); };
    for (int p = 0; p < passes; ++p) {
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double acc = 0;
                for (int d = -1; d <= 1; ++d) acc += noise[static_cast<std::size_t>(y) * s + reflect(x + d)];
                tmp[static_cast<std::size_t>(y) * s + x] = acc / 3.0;
            }
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double acc = 0;
                for (int d = -1; d <= 1; ++d) acc += tmp[static_cast<std::size_t>(reflect(y + d)) * s + x];
                noise[static_cast<std::size_t>(y) * s + x] = acc / 3.0;
            }
    }
    for (std::size_t i = 0; i < noise.size(); ++i) img[i] += amp * noise[i] * 3.0;
}

}  // namespace

Tensor synth_texture(int size, Rng& rng) {
    std::vector<double> base(static_cast<std::size_t>(size) * size, 0.0);
    const int n_comp = 3 + static_cast<int>(rng.below(3));
    for (int c = 0; c < n_comp; ++c) {
        const int kind = static_cast<int>(rng.below(4));
        const double amp = rng.uniform(0.3, 1.0);
        switch (kind) {
            case 0:
                add_grating(base, size, amp, rng.uniform(0.02, 0.25), rng.uniform(0.02, 0.25),
                            rng.uniform(0.0, 6.283));
                break;
            case 1:
                add_checker(base, size, amp, 3 + static_cast<int>(rng.below(8)),
                            3 + static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8)),
                            static_cast<int>(rng.below(8)));
                break;
            case 2:
                add_blobs(base, size, amp, rng, 2 + static_cast<int>(rng.below(2)));
                break;
            default: add_ramp(base, size, rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)); break;
        }
    }
    double lo = base[0], hi = base[0];
    for (double v : base) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo < 1e-9 ? 1.0 : hi - lo;

    Tensor img = Tensor::zeros({3, size, size});
    // correlated channels: shared luminance pattern with mild per-channel tint
    for (int ch = 0; ch < 3; ++ch) {
        const double gain = rng.uniform(0.7, 1.0);
        const double off = rng.uniform(0.0, 0.25);
        double* dst = img.data() + static_cast<std::size_t>(ch) * size * size;
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double v = (base[i] - lo) / span;
            dst[i] = std::min(1.0, std::max(0.0, off + gain * v * (1.0 - off)));
        }
    }
    return img;
}

// --- bicubic resampling ---------------------------------------------------------

namespace {

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return a * (((t - 5.0) * t + 8.0) * t - 4.0);
    return 0.0;
}

int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// Resamples one axis of length n to m. scale = n/m (>1 down, <1 up); the
// kernel footprint stretches by max(scale, 1) for antialiasing.
void resample_axis(const double* src, int n, int src_stride, double* dst, int m, int dst_stride,
                   double scale) {
    const double support = 2.0 * std::max(scale, 1.0);
    for (int i = 0; i < m; ++i) {
        const double u = (i + 0.5) * scale - 0.5;
        const int k0 = static_cast<int>(std::ceil(u - support));
        const int k1 = static_cast<int>(std::floor(u + support));
        double acc = 0.0, wsum = 0.0;
        for (int k = k0; k <= k1; ++k) {
            const double w = cubic_kernel((u - k) / std::max(scale, 1.0));
            if (w == 0.0) continue;
            acc += w * src[reflect_index(k, n) * src_stride];
            wsum += w;
        }
        dst[i * dst_stride] = acc / wsum;
    }
}

Tensor bicubic_resample(const Tensor& img, int out_h, int out_w) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    Tensor out = Tensor::zeros({c, out_h, out_w});
    std::vector<double> row_pass(static_cast<std::size_t>(h) * out_w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = img.data() + static_cast<std::size_t>(ch) * h * w;
        // horizontal then vertical
        for (int y = 0; y < h; ++y)
            resample_axis(src + static_cast<std::size_t>(y) * w, w, 1,
                          row_pass.data() + static_cast<std::size_t>(y) * out_w, out_w, 1, sx);
        double* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int x = 0; x < out_w; ++x)
            resample_axis(row_pass.data() + x, h, out_w, dst + x, out_h, out_w, sy);
    }
    return out;
}

}  // namespace

Tensor bicubic_downscale(const Tensor& img, int r) {
    if (img.ndim() != 3) throw ContractError("bicubic_downscale: expects [C,H,W]");
    if (r <= 0) throw ConfigError("bicubic_downscale: non-positive factor");
    if (r == 1) return img.clone();
    if (img.dim(1) % r != 0 || img.dim(2) % r != 0)
        throw ConfigError("bicubic_downscale: dims " + shape_str(img.shape()) +
                          " not divisible by " + std::to_string(r));
    return bicubic_resample(img, img.dim(1) / r, img.dim(2) / r);
}

Tensor bicubic_upscale(const Tensor& img, int r) {
    if (img.ndim() != 3) throw ContractError("bicubic_upscale: expects [C,H,W]");
    if (r <= 0) throw ConfigError("bicubic_upscale: non-positive factor");
    if (r == 1) return img.clone();
    return bicubic_resample(img, img.dim(1) * r, img.dim(2) * r);
}

SrDataset make_synthetic_dataset(int count, int hr_size, int scale, std::uint64_t seed) {
    if (hr_size % scale != 0)
        throw ConfigError("synthetic dataset: hr size must be divisible by the scale");
    SrDataset data;
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng(seed).fork(1000 + static_cast<std::uint64_t>(i));
        SrSample s;
        s.hr = synth_texture(hr_size, rng);
        s.lr = bicubic_downscale(s.hr, scale);
        data.samples.push_back(std::move(s));
    }
    return data;
}

std::pair<SrDataset, SrDataset> split_halves(const SrDataset& data) {
    SrDataset a, b;
    const std::size_t half = data.size() / 2;
    for (std::size_t i = 0; i < data.size(); ++i)
        (i < half ? a : b).samples.push_back(data.samples[i]);
    return {a, b};
}

double bicubic_baseline_psnr(const SrDataset& data) {
    if (data.empty()) throw ContractError("bicubic_baseline_psnr: empty dataset");
    double acc = 0.0;
    for (const auto& s : data.samples) {
        const int r = s.hr.dim(1) / s.lr.dim(1);
        Tensor up = bicubic_upscale(s.lr, r);
        for (long i = 0; i < up.numel(); ++i)
            up.data()[i] = std::min(1.0, std::max(0.0, up.data()[i]));
        acc += psnr(up, s.hr);
    }
    return acc / static_cast<double>(data.size());
}

// --- PNG I/O ------------------------------------------------------------------

void write_png_rgb8(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw ContractError("write_png_rgb8: expects [3,H,W]");
    const int h = img.dim(1), w = img.dim(2);
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        std::fclose(fp);
        throw IoError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng write failure for " + path);
    }
    png_init_io(png, fp);
    png_set_compression_level(png, 6);  // fixed settings keep output reproducible
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = img.data()[c * plane + static_cast<std::size_t>(y) * w + x];
                v = std::min(1.0, std::max(0.0, v));
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Tensor read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        std::fclose(fp);
        throw IoError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng read failure for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    Tensor img = Tensor::zeros({3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data()[c * plane + static_cast<std::size_t>(y) * w + x] =
                    row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

SrDataset load_png_dir(const std::string& dir, int scale) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .png files in " + dir);
    SrDataset data;
    for (const auto& f : files) {
        SrSample s;
        s.hr = read_png(f);
        const int h = s.hr.dim(1) - s.hr.dim(1) % scale;
        const int w = s.hr.dim(2) - s.hr.dim(2) % scale;
        if (h != s.hr.dim(1) || w != s.hr.dim(2)) {
            Tensor crop = Tensor::zeros({3, h, w});
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < h; ++y)
                    std::copy(s.hr.data() + (static_cast<std::size_t>(c) * s.hr.dim(1) + y) * s.hr.dim(2),
                              s.hr.data() + (static_cast<std::size_t>(c) * s.hr.dim(1) + y) * s.hr.dim(2) + w,
                              crop.data() + (static_cast<std::size_t>(c) * h + y) * w);
            s.hr = crop;
        }
        s.lr = bicubic_downscale(s.hr, scale);
        data.samples.push_back(std::move(s));
    }
    return data;
}

}  // namespace qsr
