#pragma once

#include <filesystem>

#include "fust/data/synthetic.hpp"

namespace fust::data {

// Directory layout: <split>.json index + <split>.bin payload per split. The
// index is {"split", "n_classes", "shape_a", "shape_v", "checksum",
// "samples": [{"id", "label"}]}; the payload holds, per sample in index order,
// tensor a then tensor v as little-endian 32-bit floats.
void export_dataset(const SplitDataset& ds, const std::filesystem::path& dir);
SplitDataset import_dataset(const std::filesystem::path& dir);

} // namespace fust::data
