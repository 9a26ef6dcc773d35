#include <doctest.h>

#include "starmt/core/rng.hpp"
#include "starmt/io/hash.hpp"
#include "starmt/io/npy_io.hpp"
#include "starmt/io/png_io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace starmt;

namespace {

std::string tmp_dir() {
    const fs::path p = fs::temp_directory_path() / "starmt_io_test";
    fs::create_directories(p);
    return p.string();
}

} // namespace

TEST_CASE("png round trip is exact on the 8-bit lattice") {
    Rng rng(1);
    Tensor img({24, 16, 3});
    for (long i = 0; i < img.numel(); ++i)
        img[i] = static_cast<real>(rng.uniform_int(static_cast<uint64_t>(256))) / 255.0;

    const std::string path = tmp_dir() + "/roundtrip.png";
    io::write_png_rgb(path, img);
    Tensor back = io::read_png_rgb(path);
    REQUIRE(back.shape() == img.shape());
    for (long i = 0; i < img.numel(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("png write quantizes to nearest level") {
    Tensor img({1, 2, 3});
    img.at(0, 0, 0) = 0.5;   // -> 128/255
    img.at(0, 1, 1) = 0.999; // -> 255/255
    const std::string path = tmp_dir() + "/quant.png";
    io::write_png_rgb(path, img);
    Tensor back = io::read_png_rgb(path);
    CHECK(back.at(0, 0, 0) == doctest::Approx(128.0 / 255.0));
    CHECK(back.at(0, 1, 1) == doctest::Approx(1.0));
}

TEST_CASE("npy round trip preserves float32 values and shape") {
    Rng rng(2);
    Tensor t({3, 4, 5});
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal();
    const std::string path = tmp_dir() + "/depth.npy";
    io::write_npy_f32(path, t);
    Tensor back = io::read_npy_f32(path);
    REQUIRE(back.shape() == t.shape());
    for (long i = 0; i < t.numel(); ++i)
        CHECK(back[i] == static_cast<real>(static_cast<float>(t[i])));
}

TEST_CASE("npy header is numpy v1.0 compatible") {
    Tensor t({2, 3});
    const std::string path = tmp_dir() + "/hdr.npy";
    io::write_npy_f32(path, t);
    std::ifstream is(path, std::ios::binary);
    char magic[6];
    is.read(magic, 6);
    CHECK(std::string(magic, 6) == "\x93NUMPY");
    char ver[2];
    is.read(ver, 2);
    CHECK(ver[0] == 1);
}

TEST_CASE("sha256 known vector") {
    CHECK(io::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(io::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("fnv1a64 is stable") {
    CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(io::fnv1a64("a") != io::fnv1a64("b"));
}
