#include "capsbench/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace capsbench {

namespace {
constexpr char kMagic[4] = {'C', 'A', 'P', 'S'};

void write_u16(std::ostream& out, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}
void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}
void write_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw DataError("checkpoint: unexpected EOF");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("checkpoint: unexpected EOF");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
double read_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("checkpoint: unexpected EOF");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_blob(std::ostream& out, const std::string& name, const Tensor& t) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.ndim()));
    for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
    for (real v : t.data) write_f64(out, static_cast<double>(v));
}
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : blobs)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw DataError("checkpoint: missing parameter blob '" + name + "'");
    return *t;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    write_u16(out, Checkpoint::kVersion);
    write_u32(out, static_cast<uint32_t>(ckpt.config_text.size()));
    out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    write_u32(out, static_cast<uint32_t>(ckpt.blobs.size()));
    for (const auto& [name, t] : ckpt.blobs) write_blob(out, name, t);
    if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<const Parameter*>& params) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    for (const Parameter* p : params) ckpt.blobs.emplace_back(p->name, p->value);
    save_checkpoint(path, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic bytes in '" + path + "'");
    const uint16_t version = read_u16(in);
    if (version != Checkpoint::kVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));

    Checkpoint ckpt;
    const uint32_t cfg_len = read_u32(in);
    ckpt.config_text.resize(cfg_len);
    in.read(ckpt.config_text.data(), cfg_len);
    if (!in) throw DataError("checkpoint: unexpected EOF in config record");

    const uint32_t count = read_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const int rank = in.get();
        if (!in || rank < 0) throw DataError("checkpoint: unexpected EOF in blob header");
        std::vector<int> shape(static_cast<size_t>(rank));
        for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(read_u32(in));
        Tensor t(shape);
        for (long j = 0; j < t.size(); ++j) t[j] = static_cast<real>(read_f64(in));
        ckpt.blobs.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace capsbench
