#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "texgraph/errors.hpp"
#include "texgraph/texdata.hpp"
#include "texgraph/text.hpp"

namespace fs = std::filesystem;

namespace texgraph::texdata {

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

std::vector<Item> Dataset::subset(Split s) const {
    std::vector<Item> out;
    for (const auto& it : items) {
        if (it.split == s) out.push_back(it);
    }
    return out;
}

std::size_t Dataset::count(Split s) const {
    return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [s](const Item& it) { return it.split == s; }));
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> out(classes(), 0);
    for (const auto& it : items) ++out.at(it.label);
    return out;
}

void split(Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1, got " + text::format_double(total));
    }
    const std::size_t n = ds.items.size();
    constexpr std::size_t kSplits = 3;

    // Global targets by largest remainder.
    std::array<std::size_t, kSplits> target{};
    std::array<double, kSplits> frac{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < kSplits; ++s) {
        const double exact = fractions[s] * static_cast<double>(n);
        target[s] = static_cast<std::size_t>(std::floor(exact));
        frac[s] = exact - static_cast<double>(target[s]);
        assigned += target[s];
    }
    while (assigned < n) {
        std::size_t best = 0;
        for (std::size_t s = 1; s < kSplits; ++s) {
            if (frac[s] > frac[best]) best = s;
        }
        ++target[best];
        frac[best] = -1.0;
        ++assigned;
    }

    std::vector<std::vector<std::size_t>> by_class(ds.classes());
    for (std::size_t i = 0; i < n; ++i) by_class.at(ds.items[i].label).push_back(i);

    // Per-class floors, then hand out each class's leftovers to the splits that
    // still need items, preferring the largest fractional share.
    std::vector<std::array<std::size_t, kSplits>> quota(by_class.size());
    std::array<std::size_t, kSplits> need = target;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        for (std::size_t s = 0; s < kSplits; ++s) {
            quota[c][s] = static_cast<std::size_t>(std::floor(fractions[s] * static_cast<double>(by_class[c].size())));
            need[s] -= std::min(need[s], quota[c][s]);
        }
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        std::size_t left = by_class[c].size() - (quota[c][0] + quota[c][1] + quota[c][2]);
        std::array<bool, kSplits> used{};
        while (left > 0) {
            std::size_t best = kSplits;
            double best_frac = -1.0;
            for (std::size_t s = 0; s < kSplits; ++s) {
                if (need[s] == 0 || used[s]) continue;
                const double share = fractions[s] * static_cast<double>(by_class[c].size());
                const double f = share - std::floor(share);
                if (best == kSplits || f > best_frac || (f == best_frac && need[s] > need[best])) {
                    best = s;
                    best_frac = f;
                }
            }
            if (best == kSplits) {
                // Every split with remaining need already got one extra from this class.
                for (std::size_t s = 0; s < kSplits && best == kSplits; ++s) {
                    if (need[s] > 0) best = s;
                }
                if (best == kSplits) best = 0;
            }
            ++quota[c][best];
            if (need[best] > 0) --need[best];
            used[best] = true;
            --left;
        }
    }

    Rng rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < kSplits; ++s) {
            for (std::size_t k = 0; k < quota[c][s]; ++k) ds.items[idx[pos++]].split = static_cast<Split>(s);
        }
    }
}

Tensor center_crop_resize(const Tensor& img, std::size_t side, std::size_t out) {
    const MapShape m = map_shape(img);
    if (side < 1 || side > m.h || side > m.w || out < 1) {
        throw ContractError("center_crop_resize: crop " + std::to_string(side) + " -> " + std::to_string(out) +
                            " invalid for " + shape_str(img.shape()));
    }
    const std::size_t r0 = (m.h - side) / 2;
    const std::size_t c0 = (m.w - side) / 2;
    Tensor res({out, out, m.c});
    for (std::size_t r = 0; r < out; ++r) {
        const std::size_t sr = r0 + r * side / out;
        for (std::size_t c = 0; c < out; ++c) {
            const std::size_t sc = c0 + c * side / out;
            for (std::size_t ch = 0; ch < m.c; ++ch) res[(r * out + c) * m.c + ch] = img[(sr * m.w + sc) * m.c + ch];
        }
    }
    return res;
}

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetError(p.string() + ": cannot open file");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

LoadResult load_dir(const fs::path& root, const LoadOptions& opts) {
    if (!fs::is_directory(root)) throw DatasetError(root.string() + ": not a dataset directory");
    if (opts.image_size < 1) throw ConfigError("load_dir: image size must be positive");

    // (class name, directory) in label order.
    std::vector<std::pair<std::string, std::string>> classes;
    const fs::path manifest = root / "manifest.tsv";
    if (fs::exists(manifest)) {
        for (const auto& line : text::split(read_file(manifest), '\n')) {
            if (line.empty() || line.front() == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw DatasetError(manifest.string() + ": expected class<TAB>dirname, got '" + line + "'");
            classes.emplace_back(std::string(text::trim(line.substr(0, tab))), std::string(text::trim(line.substr(tab + 1))));
        }
    } else {
        for (const auto& e : fs::directory_iterator(root)) {
            if (e.is_directory()) classes.emplace_back(e.path().filename().string(), e.path().filename().string());
        }
        std::sort(classes.begin(), classes.end());
    }
    if (classes.empty()) throw DatasetError(root.string() + ": no class directories");

    std::map<std::string, Split> split_tags;
    const fs::path splits = root / "splits.tsv";
    if (fs::exists(splits)) {
        for (const auto& line : text::split(read_file(splits), '\n')) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw DatasetError(splits.string() + ": malformed line '" + line + "'");
            split_tags[line.substr(0, tab)] = parse_split(text::trim(line.substr(tab + 1)));
        }
    }

    LoadResult result;
    std::vector<Item> raw;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        const auto& [name, dir] = classes[label];
        const fs::path cdir = root / dir;
        if (!fs::is_directory(cdir)) throw DatasetError(cdir.string() + ": class directory missing");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cdir)) {
            if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        std::size_t loaded = 0;
        for (const auto& f : files) {
            try {
                Item it;
                it.image = read_ppm(f);
                it.label = label;
                it.id = dir + "/" + f.filename().string();
                if (auto tag = split_tags.find(it.id); tag != split_tags.end()) it.split = tag->second;
                raw.push_back(std::move(it));
                ++loaded;
            } catch (const DatasetError& e) {
                if (opts.strict) throw;
                result.errors.push_back(e.what());
            }
        }
        if (loaded == 0) throw DatasetError(cdir.string() + ": class directory has no readable images");
        result.dataset.class_names.push_back(name);
    }

    std::size_t side = std::numeric_limits<std::size_t>::max();
    for (const auto& it : raw) side = std::min({side, it.image.extent(0), it.image.extent(1)});
    for (auto& it : raw) {
        const MapShape m = map_shape(it.image);
        if (m.h != side || m.w != side || side != opts.image_size) it.image = center_crop_resize(it.image, side, opts.image_size);
    }
    result.dataset.items = std::move(raw);
    return result;
}

void write_dir(const Dataset& ds, const fs::path& root, const std::string& spec_text) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw DatasetError(root.string() + ": cannot create directory: " + ec.message());
    std::ostringstream splits;
    for (const auto& name : ds.class_names) fs::create_directories(root / name);
    for (const auto& it : ds.items) {
        const std::string rel = ds.class_names.at(it.label) + "/" + it.id + ".ppm";
        write_ppm(root / rel, it.image);
        splits << rel << '\t' << split_name(it.split) << '\n';
    }
    const auto write_text = [&](const fs::path& p, const std::string& content) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << content;
        if (!f) throw DatasetError(p.string() + ": write failed");
    };
    write_text(root / "splits.tsv", splits.str());
    if (!spec_text.empty()) write_text(root / "spec.txt", spec_text);
}

}  // namespace texgraph::texdata
