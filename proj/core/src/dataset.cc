#include "cadis/dataset.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "cadis/rng.h"

namespace cadis {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr double kCenterScale = 4.0;

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError("truncated IDX header in " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n,
                                        const std::filesystem::path& path) {
  std::vector<unsigned char> data(n);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError("truncated IDX payload in " + path.string());
  }
  return data;
}

}  // namespace

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch batch;
  batch.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  batch.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    batch.features.row(static_cast<Eigen::Index>(r)) =
        features.row(static_cast<Eigen::Index>(indices[r]));
    batch.labels.push_back(labels[indices[r]]);
  }
  return batch;
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw SpecError("dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw SpecError("dataset feature rows and labels differ");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw SpecError("dataset label out of range");
  }
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::string provenance) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open " + images.string());
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot open " + labels.string());

  if (read_be32(img, images) != kImageMagic) throw FormatError("bad image magic in " + images.string());
  const auto count = read_be32(img, images);
  const auto rows = read_be32(img, images);
  const auto cols = read_be32(img, images);
  if (read_be32(lab, labels) != kLabelMagic) throw FormatError("bad label magic in " + labels.string());
  const auto label_count = read_be32(lab, labels);
  if (count != label_count) {
    throw FormatError("image count " + std::to_string(count) + " != label count " +
                      std::to_string(label_count));
  }
  if (count == 0) throw FormatError("IDX files hold no samples");

  const std::size_t dim = std::size_t{rows} * cols;
  const auto pixels = read_payload(img, std::size_t{count} * dim, images);
  const auto ys = read_payload(lab, count, labels);

  Dataset ds;
  ds.provenance = std::move(provenance);
  ds.features.resize(count, static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < pixels.size(); ++i) ds.features.data()[i] = pixels[i] / 255.0;
  ds.labels.assign(ys.begin(), ys.end());
  ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
  return ds;
}

double synth_blobs_center_spacing() { return kCenterScale * std::sqrt(2.0); }

Dataset synth_blobs(int classes, int dims, int per_class, double spread, std::uint64_t seed) {
  if (classes < 2 || dims < classes || per_class < 1 || spread < 0.0) {
    throw SpecError("synth_blobs needs classes >= 2, dims >= classes, per_class >= 1, spread >= 0");
  }
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(Stream::kData)});
  Dataset ds;
  ds.provenance = "synthetic";
  ds.num_classes = classes;
  const auto n = static_cast<Eigen::Index>(classes) * per_class;
  ds.features = Matrix::Zero(n, dims);
  ds.labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int k = 0; k < dims; ++k) {
        const double center = (k == c) ? kCenterScale : 0.0;
        ds.features(row, k) = center + spread * standard_normal(rng);
      }
      ds.labels.push_back(c);
    }
  }
  return ds;
}

}  // namespace cadis
