#include "starmt/data/dataset.hpp"

#include "starmt/io/npy_io.hpp"
#include "starmt/io/png_io.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace starmt::data {

namespace {

std::atomic<uint64_t> g_label_opens{0};

std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d.png", t);
    return buf;
}

} // namespace

uint64_t label_files_opened() { return g_label_opens.load(); }

void VideoSequence::validate(int grid_stride) const {
    if (frames.ndim() != 4 || frames.dim(3) != 3)
        throw std::invalid_argument("VideoSequence: frames must be [T,H,W,3]");
    if (t_len() < 1) throw std::invalid_argument("VideoSequence: T must be >= 1");
    if (grid_stride > 0 && (height() % grid_stride != 0 || width() % grid_stride != 0))
        throw std::invalid_argument("VideoSequence: H and W must be multiples of the grid stride");
    for (long i = 0; i < frames.numel(); ++i)
        if (frames[i] < 0.0 || frames[i] > 1.0)
            throw std::invalid_argument("VideoSequence: intensity outside [0,1]");
    if (has_depth) {
        if (depth.ndim() != 3) throw std::invalid_argument("VideoSequence: depth must be [T,H,W]");
        for (long i = 0; i < depth.numel(); ++i)
            if (depth[i] <= 0.0 || depth[i] > 1.0)
                throw std::invalid_argument("VideoSequence: depth outside (0,1]");
    }
    for (const auto& l : labels) {
        if (l.frame < 0 || l.frame >= t_len())
            throw std::invalid_argument("VideoSequence: label frame out of range");
        if (!l.box.well_formed()) throw std::invalid_argument("VideoSequence: degenerate label box");
    }
}

const std::vector<std::string>& DatasetManifest::split_ids(const std::string& split) const {
    auto it = splits.find(split);
    if (it == splits.end()) throw std::invalid_argument("DatasetManifest: unknown split " + split);
    return it->second;
}

std::string sequence_dir(const std::string& root, const std::string& split,
                         const std::string& id) {
    return (fs::path(root) / split / id).string();
}

void save_sequence(const std::string& root, const std::string& split, const VideoSequence& seq) {
    const fs::path dir = fs::path(sequence_dir(root, split, seq.id));
    fs::create_directories(dir / "frames");

    const int T = seq.t_len(), H = seq.height(), W = seq.width();
    for (int t = 0; t < T; ++t) {
        Tensor img({H, W, 3});
        const real* src = seq.frames.data() + static_cast<size_t>(t) * H * W * 3;
        std::copy(src, src + static_cast<size_t>(H) * W * 3, img.data());
        io::write_png_rgb((dir / "frames" / frame_name(t)).string(), img);
    }
    if (seq.has_depth) io::write_npy_f32((dir / "depth.npy").string(), seq.depth);

    json arr = json::array();
    for (const auto& l : seq.labels) {
        arr.push_back({{"frame", l.frame},
                       {"class_id", l.class_id},
                       {"box", {l.box.x1, l.box.y1, l.box.x2, l.box.y2}},
                       {"track_id", l.track_id}});
    }
    std::ofstream os(dir / "labels.json");
    os << arr.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_sequence: failed writing labels for " + seq.id);
}

VideoSequence load_sequence(const std::string& root, const std::string& split,
                            const std::string& id, const LoadOptions& opt) {
    const fs::path dir = fs::path(sequence_dir(root, split, id));
    if (!fs::exists(dir)) throw std::runtime_error("load_sequence: missing " + dir.string());

    std::vector<std::string> frame_files;
    for (const auto& e : fs::directory_iterator(dir / "frames"))
        if (e.path().extension() == ".png") frame_files.push_back(e.path().string());
    std::sort(frame_files.begin(), frame_files.end());
    if (frame_files.empty()) throw std::runtime_error("load_sequence: no frames in " + dir.string());

    Tensor first = io::read_png_rgb(frame_files[0]);
    const int H = first.dim(0), W = first.dim(1);
    const int T = static_cast<int>(frame_files.size());

    VideoSequence seq;
    seq.id = id;
    seq.frames = Tensor({T, H, W, 3});
    std::copy(first.data(), first.data() + first.numel(), seq.frames.data());
    for (int t = 1; t < T; ++t) {
        Tensor img = io::read_png_rgb(frame_files[static_cast<size_t>(t)]);
        if (img.dim(0) != H || img.dim(1) != W)
            throw std::runtime_error("load_sequence: inconsistent frame sizes in " + dir.string());
        std::copy(img.data(), img.data() + img.numel(),
                  seq.frames.data() + static_cast<size_t>(t) * H * W * 3);
    }

    if (opt.with_depth && fs::exists(dir / "depth.npy")) {
        seq.depth = io::read_npy_f32((dir / "depth.npy").string());
        seq.has_depth = true;
    }

    if (opt.with_labels) {
        const fs::path lp = dir / "labels.json";
        if (fs::exists(lp)) {
            g_label_opens.fetch_add(1);
            std::ifstream is(lp);
            json arr = json::parse(is);
            for (const auto& e : arr) {
                BoxLabel l;
                l.frame = e.at("frame").get<int>();
                l.class_id = e.at("class_id").get<int>();
                const auto& b = e.at("box");
                l.box = Box{b.at(0).get<real>(), b.at(1).get<real>(), b.at(2).get<real>(),
                            b.at(3).get<real>()};
                l.track_id = e.at("track_id").get<int>();
                seq.labels.push_back(l);
            }
            seq.has_labels = true;
        }
    }
    return seq;
}

void save_manifest(const DatasetManifest& m) {
    json j;
    j["seed"] = m.seed;
    j["n_c"] = m.n_c;
    json sp;
    for (const auto& [name, ids] : m.splits) sp[name] = ids;
    j["splits"] = sp;
    fs::create_directories(m.root);
    std::ofstream os(fs::path(m.root) / "manifest.json");
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("save_manifest: failed writing " + m.root);
}

DatasetManifest load_manifest(const std::string& root) {
    const fs::path p = fs::path(root) / "manifest.json";
    std::ifstream is(p);
    if (!is) throw std::runtime_error("load_manifest: missing " + p.string());
    json j = json::parse(is);
    DatasetManifest m;
    m.root = root;
    m.seed = j.at("seed").get<uint64_t>();
    m.n_c = j.at("n_c").get<int>();
    for (const auto& [name, ids] : j.at("splits").items())
        m.splits[name] = ids.get<std::vector<std::string>>();
    return m;
}

} // namespace starmt::data
