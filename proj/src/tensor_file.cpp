#include "ktune/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ktune {

namespace {

constexpr char kMagic[4] = {'K', 'T', 'N', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw std::runtime_error("truncated tensor file: " + path);
    }
    return v;
}

}  // namespace

std::int64_t TensorFile::element_count() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

void write_tensor(const std::string& path, const TensorFile& t) {
    if (t.dims.empty()) {
        throw std::invalid_argument("tensor must have at least one dimension");
    }
    for (auto d : t.dims) {
        if (d < 1) throw std::invalid_argument("tensor dimensions must be >= 1");
    }
    const std::int64_t n = t.element_count();
    if ((t.dtype == Dtype::f32 && std::int64_t(t.f32.size()) != n) ||
        (t.dtype == Dtype::f64 && std::int64_t(t.f64.size()) != n)) {
        throw std::invalid_argument("tensor payload size does not match dims");
    }
    if (t.dtype == Dtype::f16) {
        throw std::invalid_argument("f16 tensor files are not supported");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write tensor file: " + path);
    }
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, std::int32_t(dtype_size_bytes(t.dtype)));
    write_pod(out, std::int32_t(t.dims.size()));
    for (auto d : t.dims) write_pod(out, d);
    if (t.dtype == Dtype::f32) {
        out.write(reinterpret_cast<const char*>(t.f32.data()),
                  std::streamsize(t.f32.size() * sizeof(float)));
    } else {
        out.write(reinterpret_cast<const char*>(t.f64.data()),
                  std::streamsize(t.f64.size() * sizeof(double)));
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

TensorFile read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open tensor file: " + path);
    }
    char magic[4];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a tensor file: " + path);
    }
    TensorFile t;
    const auto code = read_pod<std::int32_t>(in, path);
    switch (code) {
        case 4: t.dtype = Dtype::f32; break;
        case 8: t.dtype = Dtype::f64; break;
        default:
            throw std::runtime_error("unsupported dtype code in " + path);
    }
    const auto ndims = read_pod<std::int32_t>(in, path);
    if (ndims < 1 || ndims > 8) {
        throw std::runtime_error("implausible dimension count in " + path);
    }
    for (int i = 0; i < ndims; ++i) {
        auto d = read_pod<std::int64_t>(in, path);
        if (d < 1) throw std::runtime_error("bad dimension in " + path);
        t.dims.push_back(d);
    }
    const std::int64_t n = t.element_count();
    if (t.dtype == Dtype::f32) {
        t.f32.resize(std::size_t(n));
        in.read(reinterpret_cast<char*>(t.f32.data()),
                std::streamsize(t.f32.size() * sizeof(float)));
    } else {
        t.f64.resize(std::size_t(n));
        in.read(reinterpret_cast<char*>(t.f64.data()),
                std::streamsize(t.f64.size() * sizeof(double)));
    }
    if (!in) {
        throw std::runtime_error("truncated tensor file: " + path);
    }
    return t;
}

}  // namespace ktune
