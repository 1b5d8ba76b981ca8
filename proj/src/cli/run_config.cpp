#include <fstream>
#include <sstream>

#include "texgraph/cli.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/text.hpp"

namespace texgraph::cli {

namespace {

std::vector<std::pair<std::string, std::string>> data_entries(const texdata::SyntheticSpec& d,
                                                              const std::array<double, 3>& split) {
    std::string names;
    for (const auto& c : d.classes) names += (names.empty() ? "" : ",") + c;
    return {
        {"data.classes", names},
        {"data.per_class", std::to_string(d.per_class)},
        {"data.size", std::to_string(d.size)},
        {"data.period", text::format_double(d.period)},
        {"data.split", text::join_doubles({split[0], split[1], split[2]})},
        {"data.jitter.phase", text::format_double(d.jitter.phase)},
        {"data.jitter.orientation", text::format_double(d.jitter.orientation)},
        {"data.jitter.scale", text::format_double(d.jitter.scale)},
        {"data.jitter.brightness", text::format_double(d.jitter.brightness)},
        {"data.jitter.noise_sigma", text::format_double(d.jitter.noise_sigma)},
        {"data.jitter.placement", text::format_double(d.jitter.placement)},
    };
}

bool set_data(texdata::SyntheticSpec& d, std::array<double, 3>& split, std::string_view key, std::string_view value) {
    const std::string k(key);
    if (key == "data.classes") {
        d.classes = text::split(value, ',');
    } else if (key == "data.per_class") {
        d.per_class = text::parse_size(value, k);
    } else if (key == "data.size") {
        d.size = text::parse_size(value, k);
    } else if (key == "data.period") {
        d.period = text::parse_double(value, k);
    } else if (key == "data.split") {
        const auto f = text::parse_double_list(value, k);
        if (f.size() != 3) throw ConfigError(k + ": expected three fractions train,val,test");
        split = {f[0], f[1], f[2]};
    } else if (key == "data.jitter.phase") {
        d.jitter.phase = text::parse_double(value, k);
    } else if (key == "data.jitter.orientation") {
        d.jitter.orientation = text::parse_double(value, k);
    } else if (key == "data.jitter.scale") {
        d.jitter.scale = text::parse_double(value, k);
    } else if (key == "data.jitter.brightness") {
        d.jitter.brightness = text::parse_double(value, k);
    } else if (key == "data.jitter.noise_sigma") {
        d.jitter.noise_sigma = text::parse_double(value, k);
    } else if (key == "data.jitter.placement") {
        d.jitter.placement = text::parse_double(value, k);
    } else {
        return false;
    }
    return true;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    if (model.set(key, value) || train.set(key, value) || set_data(data, split, key, value)) {
        if (key == "seed") data.seed = train.seed;
        return;
    }
    throw ConfigError("unknown key '" + std::string(key) + "' (nearest known key: " + text::nearest(key, keys()) + ")");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    auto out = model.entries();
    for (auto& e : train.entries()) out.push_back(std::move(e));
    for (auto& e : data_entries(data, split)) out.push_back(std::move(e));
    return out;
}

std::vector<std::string> RunConfig::keys() const {
    std::vector<std::string> out;
    for (const auto& e : entries()) out.push_back(e.first);
    return out;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries()) out += k + "=" + v + "\n";
    return out;
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot read config file");
    std::ostringstream os;
    os << in.rdbuf();
    for (const auto& [k, v] : text::parse_key_values(os.str(), path.string())) {
        try {
            set(k, v);
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    }
}

}  // namespace texgraph::cli
