#include "data/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace csts::data {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'S', 'T', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : os_(path, std::ios::binary), path_(path) {
        if (!os_) throw IoError("cannot write " + path);
    }
    template <class T>
    void pod(T v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void str32(const std::string& s) {
        pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void finish() {
        os_.flush();
        if (!os_) throw IoError("write failed: " + path_);
    }

private:
    std::ofstream os_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : is_(path, std::ios::binary), path_(path) {
        if (!is_) throw IoError("cannot open " + path);
    }
    void bytes(void* p, std::size_t n, const char* what) {
        if (!is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n)))
            throw FormatError(path_ + ": truncated checkpoint while reading " + what);
    }
    template <class T>
    T pod(const char* what) {
        T v;
        bytes(&v, sizeof v, what);
        return v;
    }
    std::string str(std::uint64_t n, const char* what) {
        if (n > (1ULL << 31)) throw FormatError(path_ + ": implausible length for " + what);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
    const std::string& path() const { return path_; }

private:
    std::ifstream is_;
    std::string path_;
};

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w(path);
    w.bytes(kMagic, 8);
    w.pod<std::uint32_t>(kCheckpointVersion);
    const std::string cfg = ckpt.config.dump();
    w.pod<std::uint64_t>(cfg.size());
    w.bytes(cfg.data(), cfg.size());
    w.pod<std::uint64_t>(ckpt.step);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        w.str32(t.name);
        w.pod<std::uint8_t>(kDtypeF64);
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
        for (Index d : t.value.shape()) w.pod<std::uint64_t>(static_cast<std::uint64_t>(d));
        w.bytes(t.value.data().data(), t.value.data().size() * sizeof(double));
    }
    w.pod<std::uint8_t>(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        const auto& o = *ckpt.optimizer;
        if (o.m.size() != ckpt.tensors.size() || o.v.size() != ckpt.tensors.size())
            throw ContractError("save_checkpoint: optimizer state does not match the tensor list");
        w.pod<std::uint64_t>(o.step);
        for (const auto* moments : {&o.m, &o.v})
            for (std::size_t i = 0; i < moments->size(); ++i) {
                const auto& mv = (*moments)[i];
                if (static_cast<Index>(mv.size()) != ckpt.tensors[i].value.numel())
                    throw ContractError("save_checkpoint: moment size mismatch for " + ckpt.tensors[i].name);
                w.bytes(mv.data(), mv.size() * sizeof(double));
            }
    }
    w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, 8, "magic");
    if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": bad magic, not a checkpoint file");
    const auto version = r.pod<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    Checkpoint ckpt;
    const std::string cfg = r.str(r.pod<std::uint64_t>("config length"), "config");
    try {
        ckpt.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": config block is not JSON: " + e.what());
    }
    ckpt.step = r.pod<std::uint64_t>("step");
    const auto count = r.pod<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        model::NamedParam t;
        t.name = r.str(r.pod<std::uint32_t>("name length"), "tensor name");
        const auto dtype = r.pod<std::uint8_t>("dtype");
        if (dtype != kDtypeF64) throw FormatError(path + ": tensor " + t.name + " has unsupported dtype " + std::to_string(dtype));
        const auto rank = r.pod<std::uint32_t>("rank");
        if (rank > 8) throw FormatError(path + ": tensor " + t.name + " has implausible rank");
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<Index>(r.pod<std::uint64_t>("dims"));
        std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
        r.bytes(data.data(), data.size() * sizeof(double), "tensor payload");
        t.value = Tensor::from_data(shape, std::move(data));
        ckpt.tensors.push_back(std::move(t));
    }
    if (r.pod<std::uint8_t>("optimizer flag")) {
        OptimizerState o;
        o.step = r.pod<std::uint64_t>("optimizer step");
        for (auto* moments : {&o.m, &o.v})
            for (const auto& t : ckpt.tensors) {
                std::vector<double> mv(static_cast<std::size_t>(t.value.numel()));
                r.bytes(mv.data(), mv.size() * sizeof(double), "optimizer moments");
                moments->push_back(std::move(mv));
            }
        ckpt.optimizer = std::move(o);
    }
    if (!r.at_end()) throw FormatError(path + ": trailing bytes after checkpoint");
    return ckpt;
}

std::vector<model::NamedParam> snapshot(const model::ParamStore& ps) {
    std::vector<model::NamedParam> out;
    for (const auto& p : ps.params()) out.push_back({p.name, p.value.detach()});
    return out;
}

void restore(model::ParamStore& ps, const Checkpoint& ckpt) {
    std::set<std::string> have, want;
    for (const auto& t : ckpt.tensors) have.insert(t.name);
    for (const auto& p : ps.params()) want.insert(p.name);
    std::vector<std::string> extra, missing;
    for (const auto& n : have)
        if (!want.count(n)) extra.push_back(n);
    for (const auto& n : want)
        if (!have.count(n)) missing.push_back(n);
    if (!extra.empty() || !missing.empty()) {
        std::string msg = "checkpoint tensors do not match the model";
        auto list = [&](const char* label, const std::vector<std::string>& names) {
            if (names.empty()) return;
            msg += std::string("; ") + label + ":";
            for (const auto& n : names) msg += " " + n;
        };
        list("extra", extra);
        list("missing", missing);
        throw ValidationError(msg);
    }
    for (const auto& t : ckpt.tensors) {
        Tensor dst = ps.get(t.name);
        if (dst.shape() != t.value.shape())
            throw DimensionError("checkpoint tensor " + t.name + " has shape " + shape_str(t.value.shape()) + ", model expects " +
                                 shape_str(dst.shape()));
        std::copy(t.value.data().begin(), t.value.data().end(), dst.mutable_data().begin());
    }
}

} // namespace csts::data
