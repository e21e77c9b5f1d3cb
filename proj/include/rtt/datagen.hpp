#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rtt/rng.hpp"
#include "rtt/tensor.hpp"

namespace rtt {

// Synthetic phantom dataset: three blob morphologies (filled disk, ring,
// elongated ellipse) over a dim brain-like oval, randomized per patient with
// small per-slice jitter. Splits are by patient, never by slice.
struct PhantomSpec {
    int image_size = 32;
    int n_classes = 3;
    int train_count = 600;
    int val_count = 60;
    int test_count = 200;
    std::array<double, 3> priors{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    std::uint64_t seed = 0;
};

void validate(const PhantomSpec& spec);

struct NoiseSpec {
    enum class Kind { Gaussian, Rician };
    Kind kind = Kind::Gaussian;
    double mu = 0.0;     // Gaussian location, 8-bit units
    double sigma = 32.0; // scale, 8-bit units (paper defaults: 32 Gaussian, 16 Rician)
    double nu = 1.0;     // Rician shape
    double rho_test = 0.0;  // fraction of test images to noise
    std::uint64_t seed = 0;

    static NoiseSpec gaussian(double sigma = 32.0, double mu = 0.0) {
        NoiseSpec s;
        s.kind = Kind::Gaussian;
        s.sigma = sigma;
        s.mu = mu;
        return s;
    }
    static NoiseSpec rician(double sigma = 16.0, double nu = 1.0) {
        NoiseSpec s;
        s.kind = Kind::Rician;
        s.sigma = sigma;
        s.nu = nu;
        return s;
    }
};

void validate(const NoiseSpec& spec);

const char* noise_kind_name(NoiseSpec::Kind k);
NoiseSpec::Kind noise_kind_from_name(const std::string& name);

struct SplitDataset {
    std::vector<Example> train, val, test;
    int height = 0, width = 0;
    int n_classes = 0;
    std::uint64_t seed = 0;

    bool any_noisy() const;
};

// Deterministic from spec.seed; pixels are clamped to [0,1] and quantized to
// f32 precision so in-memory data round-trips the file format exactly.
SplitDataset generate_phantoms(const PhantomSpec& spec);

// raw noise draws in 8-bit units
double gaussian_noise_sample(double mu, double sigma, Rng& rng);
double rician_noise_sample(double nu, double sigma, Rng& rng);

// x' = clip(x + n/255, 0, 1) with n ~ N(mu, sigma^2), sigma in 8-bit units.
Tensor add_gaussian_noise(const Tensor& x, double mu, double sigma, Rng& rng);

// Magnitude noise n = sigma*sqrt((nu+g1)^2 + g2^2), g1,g2 ~ N(0,1); always
// nonnegative, strictly positive mean. nu=0 reduces to Rayleigh(sigma).
Tensor add_rician_noise(const Tensor& x, double nu, double sigma, Rng& rng);

// Applies the evaluation protocol: every training image noised, validation
// untouched, and the first floor(rho_test*|test|) images of a seeded random
// permutation of the test split noised. Requires a clean input dataset.
SplitDataset apply_noise_protocol(SplitDataset ds, const NoiseSpec& noise);

// PHTM1 container (little-endian): magic "PHTM1"; u32 counts (train,val,test);
// u16 H, W; u8 n_classes; per split, per sample: u8 label, u8 noisy flag,
// H*W f32 pixels; trailing u64 seed.
void save_dataset(const SplitDataset& ds, const std::string& path);
SplitDataset load_dataset(const std::string& path);

}  // namespace rtt
