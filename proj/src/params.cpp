#include "dmg/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dmg/detail/scalar_kernels.hpp"
#include "dmg/simd.hpp"

namespace dmg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

Array<f32>& ParameterStore::create(const std::string& name, Array<f32> init) {
    if (name.empty()) fail("param store: empty name");
    auto [it, inserted] = params_.emplace(name, std::move(init));
    if (!inserted) fail("param store: duplicate name '", name, "'");
    return it->second;
}

Array<f32>& ParameterStore::create_normal(const std::string& name, const Shape& shape, Rng& rng,
                                          f64 stddev) {
    Array<f32> a(shape);
    rng.fill_normal(std::span<f32>(a.data), 0.0, stddev);
    return create(name, std::move(a));
}

Array<f32>& ParameterStore::create_zeros(const std::string& name, const Shape& shape) {
    return create(name, Array<f32>(shape));
}

Array<f32>& ParameterStore::create_const(const std::string& name, const Shape& shape, f32 value) {
    Array<f32> a(shape);
    std::fill(a.data.begin(), a.data.end(), value);
    return create(name, std::move(a));
}

Array<f32>& ParameterStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("param store: unknown name '", name, "'");
    return it->second;
}
const Array<f32>& ParameterStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("param store: unknown name '", name, "'");
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

void ParameterStore::adamw_step(const std::map<std::string, Array<f32>>& grads,
                                const AdamwConfig& cfg) {
    for (const auto& [name, g] : grads)
        if (!params_.count(name)) fail("adamw: gradient for unknown parameter '", name, "'");
    for (const auto& [name, p] : params_) {
        auto it = grads.find(name);
        if (it == grads.end()) fail("adamw: missing gradient for parameter '", name, "'");
        if (it->second.shape != p.shape)
            fail("adamw: gradient shape ", shape_str(it->second.shape), " vs parameter ",
                 shape_str(p.shape), " for '", name, "'");
    }
    ++step_;
    f32 bc1 = 1.0f - std::pow(cfg.beta1, static_cast<f32>(step_));
    f32 bc2 = 1.0f - std::pow(cfg.beta2, static_cast<f32>(step_));
    for (auto& [name, p] : params_) {
        auto& m = m_.try_emplace(name, Array<f32>(p.shape)).first->second;
        auto& v = v_.try_emplace(name, Array<f32>(p.shape)).first->second;
        const auto& g = grads.at(name);
        simd::active().adamw(p.size(), p.data.data(), m.data.data(), v.data.data(), g.data.data(),
                             cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, bc1, bc2);
    }
}

namespace {

template <typename T>
void put(std::vector<unsigned char>& out, const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

} // namespace

std::vector<unsigned char> ParameterStore::serialize() const {
    std::vector<unsigned char> out;
    out.insert(out.end(), {'D', 'M', 'G', 'C'});
    put<uint32_t>(out, 1u); // format version
    for (const auto& [name, p] : params_) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<uint32_t>(out, static_cast<uint32_t>(p.shape.size()));
        for (int e : p.shape) put<uint32_t>(out, static_cast<uint32_t>(e));
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.data.data());
        out.insert(out.end(), bytes, bytes + p.data.size() * sizeof(f32));
    }
    return out;
}

void ParameterStore::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("checkpoint: cannot open '", path, "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail("checkpoint: write failed for '", path, "'");
}

void ParameterStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileNotFound(path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    size_t pos = 0;
    auto need = [&](size_t n) {
        if (pos + n > bytes.size()) fail("checkpoint: truncated file '", path, "'");
    };
    auto get_u32 = [&]() {
        need(4);
        uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    };
    need(4);
    if (std::memcmp(bytes.data(), "DMGC", 4) != 0) fail("checkpoint: bad magic in '", path, "'");
    pos = 4;
    uint32_t version = get_u32();
    if (version != 1) fail("checkpoint: unsupported version ", version);
    params_.clear();
    m_.clear();
    v_.clear();
    step_ = 0;
    while (pos < bytes.size()) {
        uint32_t name_len = get_u32();
        need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        uint32_t rank = get_u32();
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(get_u32()));
        size_t n = static_cast<size_t>(numel(shape));
        need(n * sizeof(f32));
        Array<f32> a(shape);
        std::memcpy(a.data.data(), bytes.data() + pos, n * sizeof(f32));
        pos += n * sizeof(f32);
        create(name, std::move(a));
    }
}

uint64_t ParameterStore::fingerprint() const {
    auto bytes = serialize();
    return fnv1a64(bytes.data(), bytes.size());
}

} // namespace dmg
