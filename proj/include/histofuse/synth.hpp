#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "histofuse/core.hpp"
#include "histofuse/image.hpp"
#include "histofuse/parallel.hpp"

namespace histofuse {

// Synthetic eight-class texture corpus. Each class is Gaussian-filtered noise
// with its own (possibly anisotropic) correlation lengths plus a class
// density of dark nucleus-like blobs, rendered in H&E-like colours with a
// random per-image stain cast. Higher pseudo-magnifications enlarge every
// spatial scale.

struct TextureSpec {
    double sigma_row = 1.0;  // correlation length along image rows (vertical)
    double sigma_col = 1.0;  // along columns (horizontal)
    double blob_density = 0.0;  // blobs per 1000 pixels
    double blob_radius = 2.0;
};

inline TextureSpec texture_for(Subclass s) {
    switch (s) {
    case Subclass::DC: return {1.0, 6.0, 0.0, 2.0};   // fine horizontal streaks
    case Subclass::LC: return {6.0, 1.0, 0.0, 2.0};   // fine vertical streaks
    case Subclass::MC: return {3.0, 12.0, 2.0, 3.0};  // coarse horizontal, sparse nuclei
    case Subclass::PC: return {12.0, 3.0, 2.0, 3.0};  // coarse vertical, sparse nuclei
    case Subclass::A: return {1.0, 1.0, 0.0, 2.0};    // fine isotropic
    case Subclass::F: return {4.0, 4.0, 0.0, 2.0};    // coarse isotropic
    case Subclass::TA: return {1.0, 1.0, 6.0, 3.0};   // fine isotropic, dense nuclei
    case Subclass::PT: return {4.0, 4.0, 6.0, 2.0};   // coarse isotropic, dense small nuclei
    }
    return {};
}

inline double magnification_scale(int magnification) {
    switch (magnification) {
    case 40: return 1.0;
    case 100: return 1.25;
    case 200: return 1.5;
    case 400: return 2.0;
    default: throw Error("unknown magnification " + std::to_string(magnification));
    }
}

namespace detail {

// Periodic separable Gaussian blur.
inline Matrix periodic_blur(const Matrix& in, double sigma_row, double sigma_col) {
    auto kernel = [](double sigma) {
        const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
        std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
        double sum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
            sum += k[static_cast<std::size_t>(i + radius)];
        }
        for (auto& v : k) v /= sum;
        return k;
    };
    const auto kc = kernel(sigma_col);
    const auto kr = kernel(sigma_row);
    const Eigen::Index rows = in.rows(), cols = in.cols();
    Matrix tmp(rows, cols), out(rows, cols);
    const int rc = static_cast<int>(kc.size() / 2), rr = static_cast<int>(kr.size() / 2);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -rc; i <= rc; ++i) acc += kc[static_cast<std::size_t>(i + rc)] * in(r, ((c + i) % cols + cols) % cols);
            tmp(r, c) = acc;
        }
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int i = -rr; i <= rr; ++i) acc += kr[static_cast<std::size_t>(i + rr)] * tmp(((r + i) % rows + rows) % rows, c);
            out(r, c) = acc;
        }
    }
    return out;
}

}  // namespace detail

inline RgbImage synth_image(Subclass s, int magnification, int size, std::uint64_t seed) {
    Rng rng(seed);
    const TextureSpec spec = texture_for(s);
    const double scale = magnification_scale(magnification);

    Matrix noise(size, size);
    for (Eigen::Index c = 0; c < size; ++c) {
        for (Eigen::Index r = 0; r < size; ++r) noise(r, c) = rng.normal();
    }
    Matrix field = detail::periodic_blur(noise, spec.sigma_row * scale, spec.sigma_col * scale);
    const double mean = field.mean();
    const double sd = std::sqrt((field.array() - mean).square().mean());
    field = ((field.array() - mean) / sd).matrix();

    // Stain density in [0,1]: 0 is unstained background, 1 saturated.
    Matrix density = (0.45 + 0.15 * field.array()).matrix();
    const double area = static_cast<double>(size) * size;
    const int blobs = static_cast<int>(std::lround(spec.blob_density * area / 1000.0));
    const double radius = spec.blob_radius * scale;
    for (int b = 0; b < blobs; ++b) {
        const double cr = rng.uniform(0.0, size), cc = rng.uniform(0.0, size);
        const int lo_r = std::max(0, static_cast<int>(cr - 3 * radius)), hi_r = std::min(size - 1, static_cast<int>(cr + 3 * radius));
        const int lo_c = std::max(0, static_cast<int>(cc - 3 * radius)), hi_c = std::min(size - 1, static_cast<int>(cc + 3 * radius));
        for (int r = lo_r; r <= hi_r; ++r) {
            for (int c = lo_c; c <= hi_c; ++c) {
                const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                density(r, c) += 0.5 * std::exp(-0.5 * d2 / (radius * radius));
            }
        }
    }

    // Eosin (pink) and haematoxylin (purple) absorbance with a per-image cast.
    const std::array<double, 3> eosin{0.05, 0.55, 0.25};
    const std::array<double, 3> haem{0.60, 0.75, 0.20};
    std::array<double, 3> gain{};
    for (auto& g : gain) g = rng.uniform(0.85, 1.15);
    const double mix = rng.uniform(0.3, 0.6);
    RgbImage img(size, size);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double d = std::clamp(density(r, c), 0.0, 1.2);
            for (int ch = 0; ch < 3; ++ch) {
                const double absorb = d * ((1.0 - mix) * eosin[ch] + mix * haem[ch]) * 2.2 * gain[ch];
                const double v = 245.0 * std::exp(-absorb);
                img.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return img;
}

struct SynthConfig {
    int images_per_class = 25;  // per magnification
    std::vector<int> magnifications{40, 100, 200, 400};
    int size = 128;
};

// Writes <dir>/<benign|malignant>/<subclass>/<mag>/<subclass>_<mag>_<index>.png
// and returns the number of images written.
inline std::size_t write_synth_dataset(const std::filesystem::path& dir, const SynthConfig& cfg, std::uint64_t seed,
                                       int threads = 1) {
    namespace fs = std::filesystem;
    if (cfg.images_per_class < 1 || cfg.size < 8) throw ConfigError("synth needs images_per_class >= 1 and size >= 8");
    struct Job {
        Subclass subclass;
        int magnification;
        int index;
        fs::path path;
    };
    std::vector<Job> jobs;
    for (auto s : kAllSubclasses) {
        for (int mag : cfg.magnifications) {
            const fs::path sub = dir / std::string(to_string(binary_class(s))) / std::string(to_string(s)) / std::to_string(mag);
            fs::create_directories(sub);
            for (int i = 0; i < cfg.images_per_class; ++i) {
                char name[64];
                std::snprintf(name, sizeof name, "%s_%d_%03d.png", std::string(to_string(s)).c_str(), mag, i);
                jobs.push_back({s, mag, i, sub / name});
            }
        }
    }
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        const Job& job = jobs[j];
        const std::string label = std::string(to_string(job.subclass)) + "/" + std::to_string(job.magnification) + "/" +
                                  std::to_string(job.index);
        write_png(job.path, synth_image(job.subclass, job.magnification, cfg.size, derive_seed(seed, label)));
    });
    return jobs.size();
}

}  // namespace histofuse
