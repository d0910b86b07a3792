#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rankseg/rng.hpp"

namespace rankseg {

// Deterministic synthetic segmentation data: a large predefined label set of
// which each image contains only a few classes, painted as axis-aligned
// rectangles with per-class channel signatures plus Gaussian noise.
struct SyntheticConfig {
  int64_t num_classes = 64;
  int64_t height = 32;
  int64_t width = 32;
  int64_t channels = 8;
  int64_t max_classes_per_image = 6;
  std::vector<double> class_count_distribution;  // over 1..max_classes_per_image;
                                                 // empty means uniform
  double class_frequency_skew = 1.0;             // Zipf exponent over class ids
  // signatures are drawn per group of signature_group_size classes: members
  // share a base vector plus signature_contrast times a private vector, so
  // classes within a group are globally confusable at the pixel level
  int64_t signature_group_size = 4;
  double signature_contrast = 0.3;
  int64_t blobs_min = 1;
  int64_t blobs_max = 2;
  double noise_sigma = 0.25;
  uint64_t seed = 0;

  int64_t ignore_index() const { return num_classes; }
  std::vector<double> effective_count_distribution() const;
  void validate() const;
};

struct SyntheticSample {
  std::vector<float> image;        // [C, H, W] row-major
  std::vector<uint16_t> seg_map;   // [H, W] row-major, ignore = num_classes
  std::vector<uint8_t> multilabel; // [num_classes]
};

struct Dataset {
  int64_t num_classes = 0;
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<SyntheticSample> samples;
};

// fixed per-class channel signature, independent of the per-sample stream
std::vector<float> class_signature(const SyntheticConfig& cfg, int64_t class_id);

// draw a count from the class-count distribution, then that many distinct
// classes with Zipf-skewed probabilities
std::vector<int64_t> sample_class_subset(const SyntheticConfig& cfg, Rng& rng);

// paint the listed classes (classes[0] is the background) and synthesize the
// channel image; retries a bounded number of times until every listed class
// keeps at least one pixel
SyntheticSample render_sample(const std::vector<int64_t>& classes, const SyntheticConfig& cfg,
                              Rng& rng);

// n independent samples from per-sample streams derived from cfg.seed;
// stream_offset separates train/test splits generated from the same seed
Dataset generate_dataset(const SyntheticConfig& cfg, int64_t n, uint64_t stream_offset = 0);

void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

// cumulative histogram of per-image class counts: (class count, cumulative
// percent of images with at most that many classes)
std::vector<std::pair<int64_t, double>> distribution_report(const Dataset& dataset);
std::string distribution_report_csv(const Dataset& dataset);

}  // namespace rankseg
