#include "rtt/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rtt/io_util.hpp"

namespace rtt {

void validate(const PhantomSpec& spec) {
    if (spec.image_size < 16) throw std::invalid_argument("phantom: image_size must be >= 16");
    if (spec.n_classes != 3) throw std::invalid_argument("phantom: generator defines 3 classes");
    if (spec.train_count <= 0 || spec.val_count <= 0 || spec.test_count <= 0)
        throw std::invalid_argument("phantom: split counts must be positive");
    double sum = 0.0;
    for (double p : spec.priors) {
        if (p < 0.0) throw std::invalid_argument("phantom: negative class prior");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("phantom: class priors must sum to 1");
}

void validate(const NoiseSpec& spec) {
    if (!(spec.sigma > 0.0)) throw std::invalid_argument("noise: sigma must be > 0");
    if (spec.nu < 0.0) throw std::invalid_argument("noise: nu must be >= 0");
    if (spec.rho_test < 0.0 || spec.rho_test > 1.0)
        throw std::invalid_argument("noise: rho_test must be in [0,1]");
}

const char* noise_kind_name(NoiseSpec::Kind k) {
    return k == NoiseSpec::Kind::Gaussian ? "gaussian" : "rician";
}

NoiseSpec::Kind noise_kind_from_name(const std::string& name) {
    if (name == "gaussian") return NoiseSpec::Kind::Gaussian;
    if (name == "rician") return NoiseSpec::Kind::Rician;
    throw std::invalid_argument("noise: unknown kind '" + name + "' (gaussian|rician)");
}

bool SplitDataset::any_noisy() const {
    auto has = [](const std::vector<Example>& v) {
        for (const Example& e : v)
            if (e.noisy) return true;
        return false;
    };
    return has(train) || has(val) || has(test);
}

namespace {

inline double f32_quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

inline double soft_in(double signed_dist, double softness) {
    return 1.0 / (1.0 + std::exp(-signed_dist / softness));
}

// morphology parameters shared by all slices of one patient
struct PatientShape {
    int cls = 0;
    double cx, cy;       // tumor center
    double radius;       // base size, px
    double intensity;
    double ring_width;
    double aspect;       // ellipse major/base ratio
    double minor;        // ellipse minor/base ratio
    double angle;
    double brain_level;  // background oval intensity
};

PatientShape draw_patient(Rng& rng, const std::array<double, 3>& priors, int H) {
    PatientShape s;
    const double u = rng.uniform01();
    s.cls = u < priors[0] ? 0 : (u < priors[0] + priors[1] ? 1 : 2);
    const double c = H / 2.0;
    const double off = 0.09 * H;
    s.cx = c + rng.uniform(-off, off);
    s.cy = c + rng.uniform(-off, off);
    s.radius = rng.uniform(0.17, 0.24) * H;
    s.intensity = rng.uniform(0.55, 0.95);
    s.ring_width = rng.uniform(0.055, 0.095) * H;
    s.aspect = rng.uniform(1.6, 2.1);
    s.minor = rng.uniform(0.40, 0.52);
    s.angle = rng.uniform(0.0, 3.14159265358979323846);
    s.brain_level = rng.uniform(0.10, 0.20);
    return s;
}

Tensor render_slice(const PatientShape& base, Rng& rng, int H) {
    // per-slice jitter keeps slices of one patient correlated but not equal
    PatientShape s = base;
    s.cx += rng.uniform(-1.0, 1.0);
    s.cy += rng.uniform(-1.0, 1.0);
    s.radius *= rng.uniform(0.93, 1.07);
    s.intensity += rng.uniform(-0.04, 0.04);
    s.angle += rng.uniform(-0.12, 0.12);

    const double brain_a = 0.44 * H, brain_b = 0.38 * H, c = H / 2.0;
    const double ca = std::cos(s.angle), sa = std::sin(s.angle);
    const double soft = 0.8;

    Tensor img({H, H});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < H; ++x) {
            const double dxc = x - c, dyc = y - c;
            const double brain_d =
                1.0 - std::sqrt((dxc * dxc) / (brain_a * brain_a) + (dyc * dyc) / (brain_b * brain_b));
            double v = s.brain_level * soft_in(brain_d * 0.25 * H, soft);

            const double dx = x - s.cx, dy = y - s.cy;
            const double dist = std::sqrt(dx * dx + dy * dy);
            double blob = 0.0;
            if (s.cls == 0) {
                blob = soft_in(s.radius - dist, soft);
            } else if (s.cls == 1) {
                blob = soft_in(0.5 * s.ring_width - std::abs(dist - s.radius), soft);
            } else {
                const double u = dx * ca + dy * sa;
                const double w = -dx * sa + dy * ca;
                const double a = s.radius * s.aspect, b = s.radius * s.minor;
                const double de = std::sqrt((u * u) / (a * a) + (w * w) / (b * b));
                blob = soft_in((1.0 - de) * b, soft);
            }
            v += s.intensity * blob;
            v += rng.uniform(-0.015, 0.015);  // mild tissue texture
            img.at(y, x) = f32_quantize(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

void fill_split(std::vector<Example>& out, int count, int& next_patient, Rng& root,
                const PhantomSpec& spec) {
    out.clear();
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        const int pid = next_patient++;
        Rng prng = root.derive("patient", static_cast<std::uint64_t>(pid));
        PatientShape shape = draw_patient(prng, spec.priors, spec.image_size);
        const int slices = 4 + static_cast<int>(prng.uniform_int(13));  // 4..16
        for (int sidx = 0; sidx < slices && static_cast<int>(out.size()) < count; ++sidx) {
            Rng srng = root.derive("slice", static_cast<std::uint64_t>(pid),
                                   static_cast<std::uint64_t>(sidx));
            Example e;
            e.x = render_slice(shape, srng, spec.image_size);
            e.y = shape.cls;
            e.noisy = false;
            e.patient = pid;
            out.push_back(std::move(e));
        }
    }
}

}  // namespace

SplitDataset generate_phantoms(const PhantomSpec& spec) {
    validate(spec);
    SplitDataset ds;
    ds.height = ds.width = spec.image_size;
    ds.n_classes = spec.n_classes;
    ds.seed = spec.seed;
    Rng root(spec.seed);
    int next_patient = 0;
    fill_split(ds.train, spec.train_count, next_patient, root, spec);
    fill_split(ds.val, spec.val_count, next_patient, root, spec);
    fill_split(ds.test, spec.test_count, next_patient, root, spec);
    return ds;
}

double gaussian_noise_sample(double mu, double sigma, Rng& rng) {
    return mu + sigma * rng.normal();
}

double rician_noise_sample(double nu, double sigma, Rng& rng) {
    const double g1 = rng.normal();
    const double g2 = rng.normal();
    const double a = nu + g1;
    return sigma * std::sqrt(a * a + g2 * g2);
}

Tensor add_gaussian_noise(const Tensor& x, double mu, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("add_gaussian_noise: sigma must be > 0");
    Tensor out = x;
    for (double& v : out.data)
        v = f32_quantize(std::clamp(v + gaussian_noise_sample(mu, sigma, rng) / 255.0, 0.0, 1.0));
    return out;
}

Tensor add_rician_noise(const Tensor& x, double nu, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("add_rician_noise: sigma must be > 0");
    if (nu < 0.0) throw std::invalid_argument("add_rician_noise: nu must be >= 0");
    Tensor out = x;
    for (double& v : out.data)
        v = f32_quantize(std::clamp(v + rician_noise_sample(nu, sigma, rng) / 255.0, 0.0, 1.0));
    return out;
}

namespace {

Tensor apply_kind(const Tensor& x, const NoiseSpec& spec, Rng& rng) {
    if (spec.kind == NoiseSpec::Kind::Gaussian)
        return add_gaussian_noise(x, spec.mu, spec.sigma, rng);
    return add_rician_noise(x, spec.nu, spec.sigma, rng);
}

}  // namespace

SplitDataset apply_noise_protocol(SplitDataset ds, const NoiseSpec& noise) {
    validate(noise);
    if (ds.any_noisy())
        throw std::invalid_argument("apply_noise_protocol: dataset already carries noise flags");

    Rng root(noise.seed);
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        Rng r = root.derive("train-noise", i);
        ds.train[i].x = apply_kind(ds.train[i].x, noise, r);
        ds.train[i].noisy = true;
    }
    // validation stays clean by protocol

    const std::size_t n_test = ds.test.size();
    const std::size_t n_noisy =
        static_cast<std::size_t>(std::floor(noise.rho_test * static_cast<double>(n_test)));
    std::vector<std::size_t> perm(n_test);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng prng = root.derive("test-subset");
    prng.shuffle(perm);
    for (std::size_t k = 0; k < n_noisy; ++k) {
        const std::size_t i = perm[k];
        Rng r = root.derive("test-noise", i);
        ds.test[i].x = apply_kind(ds.test[i].x, noise, r);
        ds.test[i].noisy = true;
    }
    return ds;
}

namespace {

void write_split(ByteWriter& w, const std::vector<Example>& split) {
    for (const Example& e : split) {
        w.u8(static_cast<std::uint8_t>(e.y));
        w.u8(e.noisy ? 1 : 0);
        for (double v : e.x.data) w.f32(static_cast<float>(v));
    }
}

std::vector<Example> read_split(ByteReader& r, std::uint32_t count, int h, int w_px,
                                int n_classes) {
    std::vector<Example> out;
    out.reserve(count);
    const std::size_t px = static_cast<std::size_t>(h) * w_px;
    for (std::uint32_t i = 0; i < count; ++i) {
        Example e;
        const std::uint8_t label = r.u8("sample label");
        if (label >= n_classes)
            throw std::runtime_error("dataset: label " + std::to_string(int(label)) +
                                     " out of range at byte " + std::to_string(r.pos - 1));
        const std::uint8_t flag = r.u8("noisy flag");
        if (flag > 1)
            throw std::runtime_error("dataset: noisy flag must be 0/1 at byte " +
                                     std::to_string(r.pos - 1));
        e.y = label;
        e.noisy = flag == 1;
        e.patient = -1;  // patient grouping is generation-time metadata, not stored
        std::vector<double> data(px);
        for (std::size_t k = 0; k < px; ++k) data[k] = static_cast<double>(r.f32("pixel"));
        e.x = Tensor({h, w_px}, std::move(data));
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

void save_dataset(const SplitDataset& ds, const std::string& path) {
    ByteWriter w;
    w.str("PHTM1");
    w.u32(static_cast<std::uint32_t>(ds.train.size()));
    w.u32(static_cast<std::uint32_t>(ds.val.size()));
    w.u32(static_cast<std::uint32_t>(ds.test.size()));
    w.u16(static_cast<std::uint16_t>(ds.height));
    w.u16(static_cast<std::uint16_t>(ds.width));
    w.u8(static_cast<std::uint8_t>(ds.n_classes));
    write_split(w, ds.train);
    write_split(w, ds.val);
    write_split(w, ds.test);
    w.u64(ds.seed);
    write_file_atomic(path, w.bytes);
}

SplitDataset load_dataset(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    ByteReader r(bytes.data(), bytes.size());
    const std::string magic = r.str(5, "magic");
    if (magic != "PHTM1")
        throw std::runtime_error("dataset " + path + ": bad magic '" + magic +
                                 "', expected \"PHTM1\"");
    SplitDataset ds;
    const std::uint32_t n_train = r.u32("train count");
    const std::uint32_t n_val = r.u32("val count");
    const std::uint32_t n_test = r.u32("test count");
    ds.height = r.u16("height");
    ds.width = r.u16("width");
    ds.n_classes = r.u8("class count");
    if (ds.height <= 0 || ds.width <= 0 || ds.n_classes <= 0)
        throw std::runtime_error("dataset " + path + ": bad header dimensions");
    ds.train = read_split(r, n_train, ds.height, ds.width, ds.n_classes);
    ds.val = read_split(r, n_val, ds.height, ds.width, ds.n_classes);
    ds.test = read_split(r, n_test, ds.height, ds.width, ds.n_classes);
    ds.seed = r.u64("seed trailer");
    r.expect_end("dataset");
    return ds;
}

}  // namespace rtt
