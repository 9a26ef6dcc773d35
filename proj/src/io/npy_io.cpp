#include "starmt/io/npy_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace starmt::io {

namespace {

std::string shape_tuple(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        s += std::to_string(shape[i]);
        if (i + 1 < shape.size()) s += ", ";
    }
    if (shape.size() == 1) s += ",";
    return s + ")";
}

} // namespace

void write_npy_f32(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_npy_f32: cannot open " + path);

    std::string dict =
        "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_tuple(t.shape()) + ", }";
    const size_t preamble = 6 + 2 + 2;
    size_t pad = 64 - ((preamble + dict.size() + 1) % 64);
    if (pad == 64) pad = 0;
    dict += std::string(pad, ' ');
    dict += '\n';

    const char magic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
    os.write(magic, 6);
    os.put('\x01');
    os.put('\x00');
    const uint16_t hlen = static_cast<uint16_t>(dict.size());
    os.write(reinterpret_cast<const char*>(&hlen), 2);
    os.write(dict.data(), static_cast<std::streamsize>(dict.size()));

    std::vector<float> buf(static_cast<size_t>(t.numel()));
    for (long i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw std::runtime_error("write_npy_f32: write failed for " + path);
}

Tensor read_npy_f32(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_npy_f32: cannot open " + path);

    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw std::runtime_error("read_npy_f32: bad magic in " + path);
    char ver[2];
    is.read(ver, 2);
    uint16_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), 2);
    std::string dict(hlen, '\0');
    is.read(dict.data(), hlen);
    if (!is) throw std::runtime_error("read_npy_f32: truncated header in " + path);

    if (dict.find("'<f4'") == std::string::npos)
        throw std::runtime_error("read_npy_f32: expected little-endian float32 in " + path);
    if (dict.find("'fortran_order': False") == std::string::npos)
        throw std::runtime_error("read_npy_f32: expected C order in " + path);

    const size_t open = dict.find('(');
    const size_t close = dict.find(')', open);
    if (open == std::string::npos || close == std::string::npos)
        throw std::runtime_error("read_npy_f32: malformed shape in " + path);
    std::vector<int> shape;
    size_t pos = open + 1;
    while (pos < close) {
        while (pos < close && (dict[pos] == ' ' || dict[pos] == ',')) ++pos;
        if (pos >= close) break;
        shape.push_back(std::stoi(dict.substr(pos)));
        while (pos < close && dict[pos] != ',') ++pos;
    }

    Tensor t(shape);
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw std::runtime_error("read_npy_f32: truncated data in " + path);
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(buf[static_cast<size_t>(i)]);
    return t;
}

} // namespace starmt::io
