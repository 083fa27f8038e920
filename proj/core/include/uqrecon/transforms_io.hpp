#pragma once

#include <filesystem>

#include "uqrecon/dataset.hpp"

namespace uqr {

// Reads a `transforms.json` manifest (camera_angle_x or fl_x/fl_y, optional
// cx/cy, frames[].transform_matrix as camera-to-world in the
// x-right/y-up/z-back convention, frames[].file_path) and the referenced
// PNGs. Rows are flipped so that image v grows with camera-space +y, the
// convention used by generate_ray. A per-frame "split" key ("train"/"test")
// is honoured when present.
//
// Throws IoError for a missing manifest or unreadable image and
// InvalidArgument for an empty frame list or a non-invertible matrix.
ViewDataset load_transforms_dataset(const std::filesystem::path& path);

// Writes `dir/transforms.json` plus one PNG per view under `dir/images/`.
// Each frame also carries the exact world-to-camera matrix under
// "world_to_camera" so that poses reload bit-for-bit; other tools ignore it.
void write_transforms_dataset(const ViewDataset& dataset, const std::filesystem::path& dir);

}  // namespace uqr
