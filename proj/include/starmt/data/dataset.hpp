#pragma once

#include "starmt/data/types.hpp"

#include <cstdint>
#include <string>

namespace starmt::data {

struct LoadOptions {
    bool with_labels = true;
    bool with_depth = true;
};

// Counts every labels.json open performed by this process. Adaptation paths
// load sequences label-blind; tests assert the counter stays flat across them.
uint64_t label_files_opened();

void save_sequence(const std::string& root, const std::string& split, const VideoSequence& seq);

VideoSequence load_sequence(const std::string& root, const std::string& split,
                            const std::string& id, const LoadOptions& opt = {});

void save_manifest(const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& root);

std::string sequence_dir(const std::string& root, const std::string& split,
                         const std::string& id);

} // namespace starmt::data
