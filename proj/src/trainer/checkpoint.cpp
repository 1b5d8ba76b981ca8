#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "texgraph/errors.hpp"
#include "texgraph/text.hpp"
#include "texgraph/trainer.hpp"

namespace fs = std::filesystem;

namespace texgraph::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'E', 'X', 'G', 'R', 'A', 'P', 'H'};
using Kind = CheckpointError::Kind;

class Writer {
public:
    template <typename T>
    void pod(T v) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        buf_.append(b, sizeof(T));
    }
    void bytes(std::string_view s) { buf_.append(s); }
    void str(std::string_view s) {
        pod(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    void record(const std::string& name, const Tensor& t) {
        str(name);
        pod(static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) pod(static_cast<std::uint64_t>(e));
        for (double v : t.data()) pod(v);
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string_view data, const fs::path& path) : data_(data), path_(path) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        const auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return std::string(bytes(pod<std::uint32_t>())); }
    std::pair<std::string, Tensor> record() {
        std::string name = str();
        const auto rank = pod<std::uint32_t>();
        if (rank < 1 || rank > 8) fail("record '" + name + "' has invalid rank " + std::to_string(rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto e = pod<std::uint64_t>();
            if (e < 1 || e > (data_.size() - pos_)) fail("record '" + name + "' has invalid extent");
            shape.push_back(static_cast<std::size_t>(e));
            numel *= shape.back();
        }
        need(numel * sizeof(double));
        std::vector<double> values(numel);
        std::memcpy(values.data(), data_.data() + pos_, numel * sizeof(double));
        pos_ += numel * sizeof(double);
        return {std::move(name), Tensor(std::move(shape), std::move(values))};
    }
    std::size_t pos() const { return pos_; }
    [[noreturn]] void fail(const std::string& why) const {
        throw CheckpointError(Kind::format, path_.string() + ": " + why);
    }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) fail("unexpected end of data");
    }

    std::string_view data_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view s) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

std::string state_text(const TrainState& s) {
    std::ostringstream rng;
    rng << s.rng;
    return "epoch=" + std::to_string(s.epoch) + "\nlr=" + text::format_double(s.lr) +
           "\nbest=" + (std::isinf(s.best) ? std::string("inf") : text::format_double(s.best)) +
           "\nstale=" + std::to_string(s.stale) + "\nrng=" + rng.str() + "\n";
}

}  // namespace

void save_checkpoint(const fs::path& path, const model::ModelConfig& cfg, model::ModelParams& params,
                     const TrainState& state) {
    Writer w;
    w.bytes(std::string_view(kMagic, sizeof kMagic));
    w.pod(kCheckpointVersion);
    w.str(cfg.to_text());
    w.str(state_text(state));
    const auto plist = params.parameters();
    w.pod(static_cast<std::uint32_t>(plist.size()));
    for (const Parameter* p : plist) w.record(p->name, p->value);
    w.pod(static_cast<std::uint32_t>(state.sgd.buffers.size()));
    for (std::size_t i = 0; i < state.sgd.buffers.size(); ++i) {
        w.record(i < plist.size() ? plist[i]->name : std::to_string(i), state.sgd.buffers[i]);
    }
    w.pod(crc_of(w.buffer()));

    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
        if (!f) throw CheckpointError(Kind::io, tmp.string() + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw CheckpointError(Kind::io, path.string() + ": cannot move checkpoint into place: " + ec.message());
}

CheckpointData read_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(Kind::io, path.string() + ": cannot open checkpoint");
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw CheckpointError(Kind::io, path.string() + ": read failed");

    if (data.size() < sizeof kMagic + 8 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
        if (data.size() >= sizeof kMagic && std::memcmp(data.data(), kMagic, sizeof kMagic) == 0) {
            throw CheckpointError(Kind::checksum, path.string() + ": file truncated");
        }
        throw CheckpointError(Kind::format, path.string() + ": not a texgraph checkpoint");
    }
    std::uint32_t version = 0;
    std::memcpy(&version, data.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::version, path.string() + ": checkpoint format version " + std::to_string(version) +
                                                 ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const std::string_view body(data.data(), data.size() - 4);
    std::uint32_t stored = 0;
    std::memcpy(&stored, data.data() + body.size(), sizeof stored);
    if (crc_of(body) != stored) {
        throw CheckpointError(Kind::checksum, path.string() + ": checksum mismatch (file corrupted or truncated)");
    }

    Reader r(body, path);
    r.bytes(sizeof kMagic);
    r.pod<std::uint32_t>();
    CheckpointData out;
    try {
        out.config = model::ModelConfig::from_text(r.str(), path.string() + " (model config)");
        const auto st = text::parse_key_values(r.str(), path.string() + " (state)");
        const auto get = [&](const char* key) -> const std::string& {
            const auto it = st.find(key);
            if (it == st.end()) r.fail(std::string("training state lacks '") + key + "'");
            return it->second;
        };
        out.epoch = text::parse_size(get("epoch"), "epoch");
        out.lr = text::parse_double(get("lr"), "lr");
        out.best = get("best") == "inf" ? std::numeric_limits<double>::infinity() : text::parse_double(get("best"), "best");
        out.stale = text::parse_size(get("stale"), "stale");
        out.rng_state = get("rng");
    } catch (const ConfigError& e) {
        r.fail(e.what());
    }
    const auto np = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < np; ++i) out.params.push_back(r.record());
    const auto nm = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < nm; ++i) out.momentum.push_back(r.record());
    if (r.pos() != body.size()) r.fail("trailing bytes after the last record");
    return out;
}

void restore(const CheckpointData& data, model::ModelParams& params, TrainState* state) {
    const auto plist = params.parameters();
    const auto mismatch = [](const std::string& why) { throw CheckpointError(Kind::config_mismatch, why); };
    if (data.params.size() != plist.size()) {
        mismatch("checkpoint has " + std::to_string(data.params.size()) + " parameters, model expects " +
                 std::to_string(plist.size()));
    }
    for (std::size_t i = 0; i < plist.size(); ++i) {
        const auto& [name, t] = data.params[i];
        if (name != plist[i]->name || t.shape() != plist[i]->value.shape()) {
            mismatch("checkpoint parameter " + name + " " + shape_str(t.shape()) + " does not match model parameter " +
                     plist[i]->name + " " + shape_str(plist[i]->value.shape()));
        }
    }
    Rng rng;
    if (state) {
        if (!data.momentum.empty() && data.momentum.size() != plist.size()) {
            mismatch("checkpoint has " + std::to_string(data.momentum.size()) + " momentum buffers for " +
                     std::to_string(plist.size()) + " parameters");
        }
        for (std::size_t i = 0; i < data.momentum.size(); ++i) {
            if (data.momentum[i].second.shape() != plist[i]->value.shape()) {
                mismatch("momentum buffer " + data.momentum[i].first + " has shape " +
                         shape_str(data.momentum[i].second.shape()));
            }
        }
        std::istringstream is(data.rng_state);
        is >> rng;
        if (!is) throw CheckpointError(Kind::format, "checkpoint RNG state is malformed");
    }

    for (std::size_t i = 0; i < plist.size(); ++i) {
        plist[i]->value = data.params[i].second;
        plist[i]->zero_grad();
    }
    if (state) {
        state->sgd.buffers.clear();
        for (const auto& m : data.momentum) state->sgd.buffers.push_back(m.second);
        state->epoch = data.epoch;
        state->lr = data.lr;
        state->best = data.best;
        state->stale = data.stale;
        state->rng = rng;
    }
}

LoadedModel load_model(const fs::path& path) {
    const CheckpointData data = read_checkpoint(path);
    LoadedModel m{data.config, model::init_model(data.config, 0)};
    restore(data, m.params);
    return m;
}

}  // namespace texgraph::trainer
