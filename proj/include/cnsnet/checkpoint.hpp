#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnsnet/tensor.hpp"

namespace cnsnet {

// Single-file tensor archive: a manifest of named, typed, shaped entries
// followed by raw little-endian buffers. Layout documented in
// docs/checkpoint_format.md. Entry order is preserved, so writing the
// same content twice produces identical bytes.
class TensorArchive {
public:
    struct Entry {
        std::string name;
        int dtype = 0;  // 0 = f32, 1 = f64
        Shape shape;
        std::vector<unsigned char> bytes;
    };

    void add(const std::string& name, const Tensor& t);
    void add(const std::string& name, const Tensor64& t);
    void set_meta(const std::string& meta) { meta_ = meta; }
    const std::string& meta() const { return meta_; }

    bool has(const std::string& name) const;
    Tensor get_f32(const std::string& name) const;
    Tensor64 get_f64(const std::string& name) const;
    std::vector<std::string> names() const;
    size_t size() const { return entries_.size(); }

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

private:
    const Entry& find(const std::string& name) const;
    std::vector<Entry> entries_;
    std::string meta_;
};

}  // namespace cnsnet
