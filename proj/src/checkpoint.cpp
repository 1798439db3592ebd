#include "cnsnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cnsnet {

namespace {

constexpr char kMagic[8] = {'C', 'N', 'S', 'T', 'A', 'R', '0', '1'};

static_assert(std::endian::native == std::endian::little, "archive writer assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw std::runtime_error("tensor archive truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string take_bytes(const std::string& in, size_t& pos, size_t n) {
    if (pos + n > in.size()) throw std::runtime_error("tensor archive truncated");
    std::string s = in.substr(pos, n);
    pos += n;
    return s;
}

}  // namespace

void TensorArchive::add(const std::string& name, const Tensor& t) {
    Entry e;
    e.name = name;
    e.dtype = 0;
    e.shape = t.shape();
    e.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(float));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_.push_back(std::move(e));
}

void TensorArchive::add(const std::string& name, const Tensor64& t) {
    Entry e;
    e.name = name;
    e.dtype = 1;
    e.shape = t.shape();
    e.bytes.resize(static_cast<size_t>(t.numel()) * sizeof(double));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_.push_back(std::move(e));
}

bool TensorArchive::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

const TensorArchive::Entry& TensorArchive::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw std::out_of_range("tensor archive has no entry '" + name + "'");
}

Tensor TensorArchive::get_f32(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != 0) throw std::runtime_error("entry '" + name + "' is not f32");
    std::vector<float> data(e.bytes.size() / sizeof(float));
    std::memcpy(data.data(), e.bytes.data(), e.bytes.size());
    return Tensor::from_data(e.shape, std::move(data));
}

Tensor64 TensorArchive::get_f64(const std::string& name) const {
    const Entry& e = find(name);
    if (e.dtype != 1) throw std::runtime_error("entry '" + name + "' is not f64");
    std::vector<double> data(e.bytes.size() / sizeof(double));
    std::memcpy(data.data(), e.bytes.data(), e.bytes.size());
    return Tensor64::from_data(e.shape, std::move(data));
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

void TensorArchive::save(const std::string& path) const {
    std::string manifest;
    std::string data;
    for (const auto& e : entries_) {
        put<std::uint32_t>(manifest, static_cast<std::uint32_t>(e.name.size()));
        manifest += e.name;
        put<std::uint8_t>(manifest, static_cast<std::uint8_t>(e.dtype));
        put<std::uint8_t>(manifest, static_cast<std::uint8_t>(e.shape.size()));
        for (int d : e.shape) put<std::int64_t>(manifest, d);
        put<std::uint64_t>(manifest, data.size());
        put<std::uint64_t>(manifest, e.bytes.size());
        data.append(reinterpret_cast<const char*>(e.bytes.data()), e.bytes.size());
    }
    std::string blob(kMagic, sizeof(kMagic));
    put<std::uint64_t>(blob, entries_.size());
    blob += manifest;
    put<std::uint64_t>(blob, meta_.size());
    blob += meta_;
    blob += data;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    size_t pos = 0;
    const std::string magic = take_bytes(blob, pos, sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path + " is not a tensor archive");
    }
    const auto count = take<std::uint64_t>(blob, pos);
    struct RawEntry {
        std::string name;
        int dtype;
        Shape shape;
        std::uint64_t offset, nbytes;
    };
    std::vector<RawEntry> raw;
    raw.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        RawEntry r;
        const auto name_len = take<std::uint32_t>(blob, pos);
        r.name = take_bytes(blob, pos, name_len);
        r.dtype = take<std::uint8_t>(blob, pos);
        const int ndim = take<std::uint8_t>(blob, pos);
        for (int d = 0; d < ndim; ++d) r.shape.push_back(static_cast<int>(take<std::int64_t>(blob, pos)));
        r.offset = take<std::uint64_t>(blob, pos);
        r.nbytes = take<std::uint64_t>(blob, pos);
        raw.push_back(std::move(r));
    }
    const auto meta_len = take<std::uint64_t>(blob, pos);
    TensorArchive arch;
    arch.meta_ = take_bytes(blob, pos, meta_len);
    const size_t data_start = pos;
    for (auto& r : raw) {
        Entry e;
        e.name = std::move(r.name);
        e.dtype = r.dtype;
        e.shape = std::move(r.shape);
        if (data_start + r.offset + r.nbytes > blob.size()) {
            throw std::runtime_error(path + ": entry '" + e.name + "' exceeds file size");
        }
        e.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(data_start + r.offset),
                       blob.begin() + static_cast<std::ptrdiff_t>(data_start + r.offset + r.nbytes));
        const std::int64_t want = shape_numel(e.shape) * (e.dtype == 0 ? 4 : 8);
        if (want != static_cast<std::int64_t>(e.bytes.size())) {
            throw std::runtime_error(path + ": entry '" + e.name + "' size mismatch");
        }
        arch.entries_.push_back(std::move(e));
    }
    return arch;
}

}  // namespace cnsnet
