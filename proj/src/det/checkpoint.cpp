#include "starmt/det/checkpoint.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

using nlohmann::json;

namespace starmt::det {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'T', 'C', 'K', 'P', '1'};

} // namespace

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::map<std::string, std::string>& metadata) {
    std::vector<float> buffers;
    json tensors = json::array();
    uint64_t offset = 0;
    for (const auto& pt : params.tensors) {
        json t;
        t["name"] = pt.name;
        t["shape"] = pt.t.shape();
        t["scope"] = scope_name(pt.scope);
        t["dtype"] = "f32le";
        t["offset"] = offset;
        t["numel"] = pt.t.numel();
        tensors.push_back(t);
        for (long i = 0; i < pt.t.numel(); ++i) buffers.push_back(static_cast<float>(pt.t[i]));
        offset += static_cast<uint64_t>(pt.t.numel());
    }

    const auto* bytes = reinterpret_cast<const unsigned char*>(buffers.data());
    const size_t nbytes = buffers.size() * sizeof(float);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(crc32(0L, nullptr, 0), bytes, static_cast<uInt>(nbytes)));

    json manifest;
    manifest["format"] = "starmt-checkpoint";
    manifest["version"] = 1;
    manifest["arch"] = {{"in_ch", params.arch.in_ch},
                        {"widths", params.arch.widths},
                        {"n_c", params.arch.n_c},
                        {"fingerprint", params.arch.fingerprint()}};
    manifest["tensors"] = tensors;
    manifest["buffer_crc32"] = crc;
    manifest["metadata"] = metadata;
    const std::string mjson = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kMagic, sizeof(kMagic));
    const uint64_t mlen = mjson.size();
    os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    os.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    os.write(reinterpret_cast<const char*>(buffers.data()), static_cast<std::streamsize>(nbytes));
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);

    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    uint64_t mlen = 0;
    is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mjson(mlen, '\0');
    is.read(mjson.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
    json manifest = json::parse(mjson);

    Arch arch;
    arch.in_ch = manifest.at("arch").at("in_ch").get<int>();
    const auto widths = manifest.at("arch").at("widths").get<std::vector<int>>();
    if (widths.size() != 4) throw std::runtime_error("load_checkpoint: bad widths");
    std::copy(widths.begin(), widths.end(), arch.widths.begin());
    arch.n_c = manifest.at("arch").at("n_c").get<int>();
    const uint64_t stored_fp = manifest.at("arch").at("fingerprint").get<uint64_t>();
    if (stored_fp != arch.fingerprint())
        throw std::runtime_error("load_checkpoint: architecture fingerprint mismatch in " + path);

    uint64_t total = 0;
    for (const auto& t : manifest.at("tensors")) total += t.at("numel").get<uint64_t>();
    std::vector<float> buffers(total);
    is.read(reinterpret_cast<char*>(buffers.data()),
            static_cast<std::streamsize>(total * sizeof(float)));
    if (!is || is.gcount() != static_cast<std::streamsize>(total * sizeof(float)))
        throw std::runtime_error("load_checkpoint: truncated buffers in " + path);

    const auto* bytes = reinterpret_cast<const unsigned char*>(buffers.data());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(crc32(0L, nullptr, 0), bytes, static_cast<uInt>(total * sizeof(float))));
    if (crc != manifest.at("buffer_crc32").get<uint32_t>())
        throw std::runtime_error("load_checkpoint: buffer checksum mismatch in " + path);

    ModelParams params;
    params.arch = arch;
    for (const auto& t : manifest.at("tensors")) {
        ParamTensor pt;
        pt.name = t.at("name").get<std::string>();
        pt.scope = scope_from_name(t.at("scope").get<std::string>());
        pt.t = Tensor(t.at("shape").get<std::vector<int>>());
        const uint64_t off = t.at("offset").get<uint64_t>();
        for (long i = 0; i < pt.t.numel(); ++i)
            pt.t[i] = static_cast<real>(buffers[off + static_cast<uint64_t>(i)]);
        params.tensors.push_back(std::move(pt));
    }
    params.check_finite();
    return params;
}

} // namespace starmt::det
