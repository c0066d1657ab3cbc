#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cadis/nn.h"
#include "cadis/types.h"

namespace cadis {

struct Dataset {
  Matrix features;  // N x d, values in [0, 1] for image data
  std::vector<int> labels;
  int num_classes = 0;
  std::string provenance;  // "mnist-train", "mnist-test", "synthetic", ...

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

  Batch gather(std::span<const std::size_t> indices) const;
  // Indices of each class, in dataset order.
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  void validate() const;
};

// Big-endian IDX pair: images (magic 0x00000803, count x rows x cols of
// u8) and labels (magic 0x00000801). Pixels are scaled by 1/255; the class
// count is max label + 1 (at least 2).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string provenance = "idx");

// Isotropic Gaussian blobs, `per_class` samples per class around fixed
// centers 4*e_c (c < d) so neighbouring centers are 4*sqrt(2) apart.
// Requires d >= classes.
Dataset synth_blobs(int classes, int dims, int per_class, double spread, std::uint64_t seed);

// Distance between neighbouring synth_blobs centers.
double synth_blobs_center_spacing();

}  // namespace cadis
