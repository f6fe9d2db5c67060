#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace comen {

struct ImageShape {
  int channels = 3;
  int height = 16;
  int width = 16;

  std::size_t pixel_count() const { return static_cast<std::size_t>(channels) * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// One labeled image. `true_domain` is generation metadata: training code
/// only ever sees TrainingExample, which does not carry it.
struct Sample {
  std::vector<float> pixels;  // C x H x W, row-major, values in [0, 1]
  int class_label = 0;
  int true_domain = 0;

  bool operator==(const Sample&) const = default;
};

struct DatasetBundle {
  int num_domains = 0;
  int num_classes = 0;
  ImageShape image;
  std::uint64_t seed = 0;  // not serialized
  std::vector<Sample> samples;

  // Compares serialized content only.
  bool operator==(const DatasetBundle& other) const {
    return num_domains == other.num_domains && num_classes == other.num_classes && image == other.image &&
           samples == other.samples;
  }
};

struct BenchmarkParams {
  std::uint64_t seed = 7;
  int domains = 4;
  int classes = 5;
  int per_cell = 40;
  ImageShape image{3, 16, 16};
};

/// Procedural compound-domain benchmark. Class identity lives in an oriented
/// grating (orientation and frequency per class); domain identity lives only
/// in global style: per-channel gain and bias, contrast, and speckle texture.
/// Cells (domain, class) are balanced and each derives its own RNG stream from
/// (seed, domain, class). Throws std::invalid_argument unless domains >= 2,
/// classes >= 2, per_cell >= 4 and all image extents are positive.
DatasetBundle generate_benchmark(const BenchmarkParams& params);

// Training-side view of a sample: pixels and class label, no domain id.
struct TrainingExample {
  std::span<const float> pixels;
  int label = 0;
};

struct FoldSplit {
  int held_out = 0;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> val;
  std::vector<TrainingExample> test;
  // Bundle positions backing each view. Only evaluation code may use these to
  // look up hidden domain ids.
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
  std::vector<std::size_t> test_index;
};

inline constexpr double kValidationFraction = 0.30;

/// Test = every sample of `held_out`; the remaining samples are shuffled with
/// `seed` and split 70/30 into train/val, stratified per (domain, class) cell
/// with a largest-remainder allocation so the global val count is
/// round(0.3 * source). The returned views borrow from `bundle`.
FoldSplit leave_one_domain_out(const DatasetBundle& bundle, int held_out, std::uint64_t seed);

// Binary format: "COMENDS1", u32 M K C H W N (little endian), N records of
// (u16 class, u16 domain, C*H*W float32), then CRC32 over everything between
// the magic and the checksum.
std::vector<std::uint8_t> serialize_bundle(const DatasetBundle& bundle);
DatasetBundle deserialize_bundle(std::span<const std::uint8_t> bytes);
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle read_bundle(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace comen
