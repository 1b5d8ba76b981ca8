#pragma once

// Procedural texture datasets and the on-disk PPM dataset layout:
//
//   root/<class_name>/<image>.ppm
//   root/manifest.tsv   optional, "class<TAB>dirname" per line; sets label order
//   root/splits.tsv     optional, "<class dir>/<file><TAB>train|val|test"
//   root/spec.txt       written by the generator (seed and parameters)
//
// Images are H x W x 3 tensors with values in [0, 1].

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "texgraph/rng.hpp"
#include "texgraph/tensor.hpp"

namespace texgraph::texdata {

enum class Split : std::uint8_t { train, val, test };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct Item {
    Tensor image;
    std::size_t label = 0;
    std::string id;
    Split split = Split::train;
};

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<Item> items;

    std::size_t classes() const { return class_names.size(); }
    std::vector<Item> subset(Split s) const;
    std::size_t count(Split s) const;
    /// Items per label.
    std::vector<std::size_t> class_counts() const;
};

enum class Pattern { checkerboard, stripes, dots, blobs, noise, weave };

/// ConfigError for unknown names.
Pattern parse_pattern(std::string_view name);
std::string_view pattern_name(Pattern p);

/// Per-image random variation. Each field is the half-width of a uniform draw
/// unless noted.
struct Jitter {
    double phase = 1.0;        // offset in [0, phase * period) per axis
    double orientation = 0.4;  // radians
    double scale = 0.2;        // relative period change
    double brightness = 0.15;  // offset; contrast shrinks by up to the same amount
    double noise_sigma = 0.05; // additive Gaussian noise (not a half-width)
    double placement = 0.2;    // per-primitive displacement, fraction of the cell

    static Jitter none() { return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0}; }
};

struct SyntheticSpec {
    std::vector<std::string> classes{"checkerboard", "stripes", "dots", "blobs"};
    std::size_t per_class = 50;
    std::size_t size = 64;
    std::uint64_t seed = 7;
    double period = 8.0;
    Jitter jitter;

    void validate() const;
    /// key=value record of every generation parameter.
    std::string to_text() const;
};

/// Renders one size x size x 3 image of pattern `p` with jitter drawn from `rng`.
Tensor render(Pattern p, std::size_t size, double period, const Jitter& jitter, Rng& rng);

/// Deterministic per seed; exactly per_class items per label, all tagged train.
Dataset generate(const SyntheticSpec& spec);

/// Stratified split into train/val/test by `fractions` (must sum to 1 within
/// 1e-9). Split sizes match the rounded global targets; per-class counts are
/// within one of their proportional share.
void split(Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval <= 255)

Tensor read_ppm(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Centre crop of side `side` (<= both extents), then nearest resize to out x out.
Tensor center_crop_resize(const Tensor& image, std::size_t side, std::size_t out);

struct LoadOptions {
    std::size_t image_size = 64;
    /// Strict: first unreadable file aborts. Lenient: the file is skipped and reported.
    bool strict = true;
};

struct LoadResult {
    Dataset dataset;
    std::vector<std::string> errors;
};

LoadResult load_dir(const std::filesystem::path& root, const LoadOptions& opts = {});

/// Writes the directory layout above (including splits.tsv) plus spec.txt when non-empty.
void write_dir(const Dataset& ds, const std::filesystem::path& root, const std::string& spec_text);

}  // namespace texgraph::texdata
