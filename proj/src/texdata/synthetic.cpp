#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "texgraph/errors.hpp"
#include "texgraph/texdata.hpp"
#include "texgraph/text.hpp"

namespace texgraph::texdata {

namespace {

constexpr std::array<std::pair<Pattern, std::string_view>, 6> kPatterns{{
    {Pattern::checkerboard, "checkerboard"},
    {Pattern::stripes, "stripes"},
    {Pattern::dots, "dots"},
    {Pattern::blobs, "blobs"},
    {Pattern::noise, "noise"},
    {Pattern::weave, "weave"},
}};

int parity(double v) {
    const auto i = static_cast<long long>(std::floor(v));
    return static_cast<int>(((i % 2) + 2) % 2);
}

std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Uniform [-1, 1) from a hash of a lattice cell.
double cell_noise(std::uint64_t salt, long long cx, long long cy, std::uint64_t lane) {
    const std::uint64_t h = mix(salt ^ mix(static_cast<std::uint64_t>(cx) * 0x632be59bd9b4e019ULL ^
                                           static_cast<std::uint64_t>(cy) * 0x85157af5ULL ^ lane));
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

struct Blob {
    double x, y, inv_two_var;
};

}  // namespace

Pattern parse_pattern(std::string_view name) {
    for (const auto& [p, n] : kPatterns) {
        if (n == name) return p;
    }
    std::string known;
    for (const auto& [p, n] : kPatterns) known += (known.empty() ? "" : ", ") + std::string(n);
    throw ConfigError("unknown texture class '" + std::string(name) + "' (known: " + known + ")");
}

std::string_view pattern_name(Pattern p) {
    for (const auto& [q, n] : kPatterns) {
        if (q == p) return n;
    }
    return "?";
}

void SyntheticSpec::validate() const {
    if (classes.size() < 2) throw ConfigError("synthetic data: need at least 2 classes");
    std::set<std::string> seen;
    for (const auto& c : classes) {
        parse_pattern(c);
        if (!seen.insert(c).second) throw ConfigError("synthetic data: class '" + c + "' listed twice");
    }
    if (per_class < 2) throw ConfigError("synthetic data: need at least 2 images per class");
    if (size < 4) throw ConfigError("synthetic data: image size must be >= 4");
    if (!(period > 0.0)) throw ConfigError("synthetic data: period must be positive");
    for (double j : {jitter.phase, jitter.orientation, jitter.scale, jitter.brightness, jitter.noise_sigma,
                     jitter.placement}) {
        if (!(j >= 0.0)) throw ConfigError("synthetic data: jitter amounts must be non-negative");
    }
    if (jitter.scale >= 1.0 || jitter.brightness >= 0.5) {
        throw ConfigError("synthetic data: scale jitter must be < 1 and brightness jitter < 0.5");
    }
}

std::string SyntheticSpec::to_text() const {
    std::ostringstream os;
    std::string names;
    for (const auto& c : classes) names += (names.empty() ? "" : ",") + c;
    os << "classes=" << names << '\n'
       << "per_class=" << per_class << '\n'
       << "size=" << size << '\n'
       << "seed=" << seed << '\n'
       << "period=" << text::format_double(period) << '\n'
       << "jitter.phase=" << text::format_double(jitter.phase) << '\n'
       << "jitter.orientation=" << text::format_double(jitter.orientation) << '\n'
       << "jitter.scale=" << text::format_double(jitter.scale) << '\n'
       << "jitter.brightness=" << text::format_double(jitter.brightness) << '\n'
       << "jitter.noise_sigma=" << text::format_double(jitter.noise_sigma) << '\n'
       << "jitter.placement=" << text::format_double(jitter.placement) << '\n';
    return os.str();
}

Tensor render(Pattern p, std::size_t size, double period, const Jitter& jitter, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto symmetric = [&](double half) { return (2.0 * unit(rng) - 1.0) * half; };

    // Fixed draw order keeps every image's stream layout independent of pattern.
    const double per = period * (1.0 + symmetric(jitter.scale));
    const double angle = symmetric(jitter.orientation);
    const double phase_x = unit(rng) * jitter.phase * per;
    const double phase_y = unit(rng) * jitter.phase * per;
    const double offset = symmetric(jitter.brightness);
    const double contrast = 1.0 - unit(rng) * jitter.brightness;
    const std::uint64_t salt = rng();

    const double cs = std::cos(angle);
    const double sn = std::sin(angle);
    const double cell = 2.0 * per;

    std::vector<Blob> blobs;
    if (p == Pattern::blobs) {
        const double area = static_cast<double>(size * size);
        const auto count = static_cast<std::size_t>(std::max(1.0, std::round(0.6 * area / (cell * cell))));
        for (std::size_t i = 0; i < count; ++i) {
            const double bx = unit(rng) * static_cast<double>(size);
            const double by = unit(rng) * static_cast<double>(size);
            const double sigma = per * (0.4 + 0.4 * unit(rng));
            blobs.push_back({bx, by, 1.0 / (2.0 * sigma * sigma)});
        }
    }

    Tensor img({size, size, 3});
    std::normal_distribution<double> noise(0.0, jitter.noise_sigma > 0.0 ? jitter.noise_sigma : 1.0);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x);
            const double fy = static_cast<double>(y);
            const double xr = cs * fx - sn * fy + phase_x;
            const double yr = sn * fx + cs * fy + phase_y;
            double v = 0.0;
            switch (p) {
                case Pattern::checkerboard:
                    v = ((parity(xr / per) + parity(yr / per)) % 2);
                    break;
                case Pattern::stripes:
                    v = parity(xr / per);
                    break;
                case Pattern::dots: {
                    const auto cx = static_cast<long long>(std::floor(xr / cell));
                    const auto cy = static_cast<long long>(std::floor(yr / cell));
                    const double shift = jitter.placement * cell;
                    const double ccx = (static_cast<double>(cx) + 0.5) * cell + shift * cell_noise(salt, cx, cy, 1);
                    const double ccy = (static_cast<double>(cy) + 0.5) * cell + shift * cell_noise(salt, cx, cy, 2);
                    const double r = 0.45 * per;
                    v = (xr - ccx) * (xr - ccx) + (yr - ccy) * (yr - ccy) < r * r ? 1.0 : 0.0;
                    break;
                }
                case Pattern::blobs: {
                    double acc = 0.0;
                    for (const auto& b : blobs) {
                        const double d2 = (fx - b.x) * (fx - b.x) + (fy - b.y) * (fy - b.y);
                        acc += std::exp(-d2 * b.inv_two_var);
                    }
                    v = std::min(1.0, acc);
                    break;
                }
                case Pattern::noise:
                    v = unit(rng);
                    break;
                case Pattern::weave: {
                    const bool horizontal = (parity(xr / cell) + parity(yr / cell)) % 2 == 0;
                    v = parity((horizontal ? yr : xr) / (0.5 * per));
                    break;
                }
            }
            v = 0.5 + (v - 0.5) * contrast + offset;
            if (jitter.noise_sigma > 0.0) v += noise(rng);
            v = std::clamp(v, 0.0, 1.0);
            for (std::size_t c = 0; c < 3; ++c) img[(y * size + x) * 3 + c] = v;
        }
    }
    return img;
}

Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.class_names = spec.classes;
    for (std::size_t label = 0; label < spec.classes.size(); ++label) {
        const Pattern p = parse_pattern(spec.classes[label]);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                              static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(i)};
            Rng rng(seq);
            char id[32];
            std::snprintf(id, sizeof id, "_%04zu", i);
            ds.items.push_back({render(p, spec.size, spec.period, spec.jitter, rng), label, spec.classes[label] + id,
                                Split::train});
        }
    }
    return ds;
}

}  // namespace texgraph::texdata
