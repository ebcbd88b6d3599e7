#include "splitprune/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "splitprune/errors.hpp"

namespace splitprune {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'R', 'U', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kModelTag = 1;
constexpr std::uint32_t kPrunerTag = 2;
constexpr std::uint32_t kConfigTag = 3;
constexpr std::uint32_t kLayerRecordLen = 34;

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        auto c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void tensor_data(const Tensor& t) {
        for (double v : t.values()) f64(v);
    }
    std::vector<unsigned char>& buffer() { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : p_(data), n_(size) {}

    std::uint8_t u8() { return need(1), p_[pos_++]; }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    void fill(Tensor& t) {
        for (auto& v : t.data()) v = f64();
    }
    const unsigned char* take(std::size_t n) {
        need(n);
        const unsigned char* out = p_ + pos_;
        pos_ += n;
        return out;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == n_; }

private:
    void need(std::size_t k) const {
        if (pos_ + k > n_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

void write_section(Writer& out, std::uint32_t tag, const std::vector<unsigned char>& payload) {
    out.u32(tag);
    out.u64(payload.size());
    out.bytes(payload.data(), payload.size());
}

std::vector<unsigned char> encode_model(const Model& m) {
    Writer w;
    w.u32(static_cast<std::uint32_t>(m.members()));
    w.f64(m.noise_sigma());
    w.u8(m.noise_at_eval() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(m.input_shape().size()));
    for (auto d : m.input_shape()) w.u64(d);
    w.u32(static_cast<std::uint32_t>(m.layers().size()));
    for (const auto& l : m.layers()) {
        w.u32(kLayerRecordLen);
        w.u8(static_cast<std::uint8_t>(l.kind));
        w.u64(l.in);
        w.u64(l.out);
        w.u64(l.kh);
        w.u64(l.kw);
        w.u8(l.skip ? 1 : 0);
    }
    w.u32(static_cast<std::uint32_t>(m.parameters().size()));
    for (const auto& p : m.parameters()) {
        w.u32(static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) w.u64(d);
    }
    for (const auto& p : m.parameters()) w.tensor_data(p.value);
    return std::move(w.buffer());
}

Model decode_model(Reader& r) {
    const std::uint32_t members = r.u32();
    const double sigma = r.f64();
    const bool eval_noise = r.u8() != 0;
    Shape input(r.u32());
    for (auto& d : input) d = r.u64();
    std::vector<LayerSpec> layers(r.u32());
    for (auto& l : layers) {
        const std::uint32_t len = r.u32();
        if (len != kLayerRecordLen) throw FormatError("layer record of unexpected length " + std::to_string(len) + " at byte " + std::to_string(r.pos()));
        const std::uint8_t kind = r.u8();
        if (kind < 1 || kind > 5) throw FormatError("unknown layer kind " + std::to_string(kind) + " at byte " + std::to_string(r.pos()));
        l.kind = static_cast<LayerKind>(kind);
        l.in = r.u64();
        l.out = r.u64();
        l.kh = r.u64();
        l.kw = r.u64();
        l.skip = r.u8() != 0;
    }
    Model m(std::move(input), std::move(layers), members, sigma);
    m.set_noise_at_eval(eval_noise);
    const std::uint32_t count = r.u32();
    if (count != m.parameters().size()) throw FormatError("parameter table does not match the layer descriptors");
    for (const auto& p : m.parameters()) {
        Shape s(r.u32());
        for (auto& d : s) d = r.u64();
        if (s != p.value.shape()) throw FormatError("parameter " + p.name + " stored with shape " + shape_string(s));
    }
    for (auto& p : m.parameters()) r.fill(p.value);
    return m;
}

std::vector<unsigned char> encode_pruner(const PrunerState& s) {
    Writer w;
    w.u8(static_cast<std::uint8_t>(s.algorithm));
    w.u8(static_cast<std::uint8_t>(s.hyper.group_prox));
    w.f64(s.hyper.beta);
    w.f64(s.hyper.lambda);
    w.f64(s.hyper.lambda1);
    w.f64(s.hyper.lambda2);
    w.f64(s.hyper.eta);
    w.u8(s.z.empty() ? 0 : 1);
    for (const auto& t : s.w) w.tensor_data(t);
    for (const auto& t : s.u) w.tensor_data(t);
    for (const auto& t : s.z) w.tensor_data(t);
    w.u64(s.history.size());
    for (double v : s.history) w.f64(v);
    return std::move(w.buffer());
}

PrunerState decode_pruner(Reader& r, const Model& m) {
    PrunerState s;
    const std::uint8_t alg = r.u8();
    if (alg > 3) throw FormatError("unknown pruner algorithm " + std::to_string(alg));
    s.algorithm = static_cast<Algorithm>(alg);
    const std::uint8_t prox = r.u8();
    if (prox > 1) throw FormatError("unknown group prox " + std::to_string(prox));
    s.hyper.group_prox = static_cast<GroupProx>(prox);
    s.hyper.beta = r.f64();
    s.hyper.lambda = r.f64();
    s.hyper.lambda1 = r.f64();
    s.hyper.lambda2 = r.f64();
    s.hyper.eta = r.f64();
    const bool has_z = r.u8() != 0;
    s.w = m.parameter_values();
    for (auto& t : s.w) r.fill(t);
    s.u = m.parameter_values();
    for (auto& t : s.u) r.fill(t);
    if (has_z) {
        s.z = m.parameter_values();
        for (auto& t : s.z) r.fill(t);
    }
    s.history.resize(r.u64());
    for (auto& v : s.history) v = r.f64();
    s.groups = m.groups();
    return s;
}

}  // namespace

static_assert(static_cast<int>(Algorithm::none) == 0 && static_cast<int>(Algorithm::admm) == 3);

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    const std::uint32_t sections = 1 + (c.pruner ? 1 : 0) + (c.config_text.empty() ? 0 : 1);
    w.u32(sections);
    write_section(w, kModelTag, encode_model(c.model));
    if (c.pruner) write_section(w, kPrunerTag, encode_pruner(*c.pruner));
    if (!c.config_text.empty())
        write_section(w, kConfigTag, std::vector<unsigned char>(c.config_text.begin(), c.config_text.end()));
    return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    Reader r(bytes.data(), bytes.size());
    if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint: bad magic at byte 0");
    const std::uint32_t version = r.u32();
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t sections = r.u32();
    std::optional<Model> model;
    std::optional<PrunerState> pruner;
    std::string config;
    for (std::uint32_t i = 0; i < sections; ++i) {
        const std::uint32_t tag = r.u32();
        const std::uint64_t len = r.u64();
        const std::size_t start = r.pos();
        const unsigned char* payload = r.take(len);
        Reader sub(payload, len);
        if (tag == kModelTag) {
            model = decode_model(sub);
        } else if (tag == kPrunerTag) {
            if (!model) throw FormatError("pruner section before model section at byte " + std::to_string(start));
            pruner = decode_pruner(sub, *model);
        } else if (tag == kConfigTag) {
            config.assign(payload, payload + len);
            continue;
        } else {
            continue;  // unknown sections are skipped
        }
        if (!sub.done()) throw FormatError("trailing bytes in section " + std::to_string(tag) + " starting at byte " + std::to_string(start));
    }
    if (!model) throw FormatError("checkpoint has no model section");
    return Checkpoint{std::move(*model), std::move(pruner), std::move(config)};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace splitprune
