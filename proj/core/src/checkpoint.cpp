#include "fabseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "fabseg/errors.hpp"

namespace fabseg {

namespace {

static_assert(sizeof(double) == 8);

bool matches(std::string_view pattern, std::string_view name) {
    if (!pattern.empty() && pattern.back() == '*') return starts_with(name, pattern.substr(0, pattern.size() - 1));
    return pattern == name;
}

class Writer {
public:
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(std::string_view s) {
        u64(s.size());
        out_.insert(out_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str() {
        const auto n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::span<const std::uint8_t> bytes(std::uint64_t n) {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > in_.size() - pos_) fail(ErrorKind::CorruptCheckpoint, "checkpoint truncated");
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::is_frozen(std::string_view name) const {
    for (const auto& p : frozen_manifest)
        if (matches(p, name)) return true;
    return false;
}

void Checkpoint::validate() const {
    for (const auto& [name, t] : arrays)
        require(t.all_finite(), ErrorKind::NumericalError, "checkpoint array " + name + " has non-finite values");
    for (const auto& p : frozen_manifest) {
        bool hit = false;
        for (const auto& [name, t] : arrays) hit = hit || matches(p, name);
        require(hit, ErrorKind::SchemaError, "frozen manifest entry " + p + " matches no array");
    }
}

std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.raw(kCheckpointMagic, 8);
    w.u64(ckpt.arrays.size());
    for (const auto& [name, t] : ckpt.arrays) {
        w.str(name);
        w.u64(t.shape().size());
        for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
        w.str("f64");
        w.u64(static_cast<std::uint64_t>(t.numel()) * 8);
        for (double v : t.values()) w.u64(std::bit_cast<std::uint64_t>(v));
    }
    w.u64(ckpt.frozen_manifest.size());
    for (const auto& p : ckpt.frozen_manifest) w.str(p);
    w.u64(ckpt.meta.size());
    for (const auto& [k, v] : ckpt.meta) {
        w.str(k);
        w.str(v);
    }
    return w.take();
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorKind::CorruptCheckpoint,
            "bad checkpoint magic");
    Reader r(bytes.subspan(8));
    Checkpoint ckpt;
    const auto n_arrays = r.u64();
    for (std::uint64_t i = 0; i < n_arrays; ++i) {
        std::string name = r.str();
        const auto rank = r.u64();
        require(rank <= 8, ErrorKind::CorruptCheckpoint, "implausible rank for " + name);
        Shape shape;
        for (std::uint64_t d = 0; d < rank; ++d) {
            const auto dim = r.u64();
            require(dim < (std::uint64_t{1} << 40), ErrorKind::CorruptCheckpoint, "implausible dimension for " + name);
            shape.push_back(static_cast<std::int64_t>(dim));
        }
        require(r.str() == "f64", ErrorKind::CorruptCheckpoint, "unsupported dtype for " + name);
        const auto nbytes = r.u64();
        require(nbytes == static_cast<std::uint64_t>(shape_numel(shape)) * 8, ErrorKind::CorruptCheckpoint,
                "byte length does not match shape for " + name);
        auto raw = r.bytes(nbytes);
        Tensor t(shape);
        for (std::int64_t k = 0; k < t.numel(); ++k) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[static_cast<std::size_t>(k * 8 + b)]) << (8 * b);
            t[k] = std::bit_cast<double>(bits);
        }
        ckpt.arrays.emplace(std::move(name), std::move(t));
    }
    const auto n_frozen = r.u64();
    for (std::uint64_t i = 0; i < n_frozen; ++i) ckpt.frozen_manifest.push_back(r.str());
    const auto n_meta = r.u64();
    for (std::uint64_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        ckpt.meta[k] = r.str();
    }
    require(r.done(), ErrorKind::CorruptCheckpoint, "trailing bytes after checkpoint");
    ckpt.validate();
    return ckpt;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = save_checkpoint(ckpt);
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::IoError, "cannot write checkpoint " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::IoError, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::IoError, "cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

void check_schema(const ParamStore& expected, const ParamStore& actual, std::string_view prefix) {
    for (const auto& [name, t] : expected) {
        if (!starts_with(name, prefix)) continue;
        auto it = actual.find(name);
        require(it != actual.end(), ErrorKind::SchemaError, "checkpoint is missing array " + name);
        require(it->second.shape() == t.shape(), ErrorKind::SchemaError,
                "array " + name + " has shape " + shape_str(it->second.shape()) + ", expected " + shape_str(t.shape()));
    }
    for (const auto& [name, t] : actual)
        if (starts_with(name, prefix))
            require(expected.count(name) > 0, ErrorKind::SchemaError, "checkpoint has unexpected array " + name);
}

}  // namespace fabseg
