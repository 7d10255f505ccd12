// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion: folder-per-class image loading (PPM/PNG), a synthetic
// texture-classification generator, and stratified splits.

#ifndef FETR_DATA_HPP
#define FETR_DATA_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fetr/common.hpp"

namespace fetr {

/// Channels-first RGB image, values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> rgb;  // [3,h,w]

  float at(int c, int y, int x) const { return rgb[static_cast<size_t>((c * h + y) * w + x)]; }
  float& at(int c, int y, int x) { return rgb[static_cast<size_t>((c * h + y) * w + x)]; }
};

struct LabeledImage {
  Image image;
  int label = 0;
  std::string source_id;
};

/// One split of a dataset: ordered class names plus per-class relative paths.
struct DatasetManifest {
  std::string root;
  std::vector<std::string> class_names;                // sorted
  std::vector<std::vector<std::string>> files;         // files[class] = sorted rel paths
  uint64_t seed = 0;
  double split_ratio = 1.0;
  std::string split_name = "all";
  std::string content_hash;  // hex FNV-1a over (relpath, bytes) pairs

  size_t total_samples() const {
    size_t n = 0;
    for (const auto& f : files) n += f.size();
    return n;
  }
  std::string to_json() const;
};

/// Decode a P6 PPM (maxval 255) or an 8-bit RGB PNG. Anything else fails
/// with a DataError naming the byte offset of the problem.
Image decode_image(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> encode_ppm(const Image& img);

/// Scan root/<class>/<sample>.(ppm|png), sorted; undecodable files are
/// skipped with a warning on stderr; an empty class is an error.
DatasetManifest load_image_folder(const std::string& root);

/// Stratified, seeded, disjoint split. Every class needs >= 2 samples.
std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& m, double ratio,
                                                            uint64_t seed);

/// Decode every sample of a manifest into memory, labels following the
/// manifest's class order.
std::vector<LabeledImage> load_samples(const DatasetManifest& m);

/// Write a folder-per-class synthetic dataset to out_dir plus manifest.json.
/// Classes share two global silhouettes and differ only in stripe texture,
/// noise level, and color statistics; position/scale/background jitter per
/// sample keeps the silhouette uninformative.
DatasetManifest generate_synthetic(const std::string& out_dir, int classes, int per_class, int size,
                                   uint64_t seed);

}  // namespace fetr

#endif  // FETR_DATA_HPP
