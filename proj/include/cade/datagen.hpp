#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cade/tensor.hpp"

namespace cade {

inline constexpr std::size_t kDefaultSegmentLen = 16;

// One video: instance features (one row per segment), video-level weak label
// and, for test videos, per-frame ground truth.
struct Bag {
  std::string video_id;
  Tensor2 features;  // N x K
  int weak_label = 0;
  int domain_id = 1;
  std::size_t segment_len = kDefaultSegmentLen;
  std::optional<std::vector<std::uint8_t>> frame_labels;

  std::size_t instance_count() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
  // [start, end) frame range covered by segment i.
  std::pair<std::size_t, std::size_t> frame_span(std::size_t i) const {
    return {i * segment_len, (i + 1) * segment_len};
  }
};

struct DomainDataset {
  int domain_id = 1;
  std::vector<Bag> train_bags;
  std::vector<Bag> test_bags;

  std::size_t feature_dim() const;
};

// Records which domains' real training instances are read while a given
// domain is being trained.
class AccessAudit {
 public:
  void set_active_domain(int t) { active_ = t; }
  int active_domain() const { return active_; }
  void record_train_read(int data_domain) { ++reads_[{active_, data_domain}]; }
  std::size_t reads(int active, int data_domain) const;
  // Reads of domains strictly older than the domain active at the time.
  std::size_t past_domain_reads() const;
  std::size_t total_reads() const;

 private:
  int active_ = 0;
  std::map<std::pair<int, int>, std::size_t> reads_;
};

// Training-time accessor: features and weak label only, logged to `audit`.
const Bag& read_train_bag(const DomainDataset& domain, std::size_t i, AccessAudit* audit);

struct SyntheticStreamConfig {
  int domains = 4;
  std::size_t feature_dim = 32;
  std::size_t bags_per_domain = 40;
  std::size_t test_bags_per_domain = 60;
  std::size_t bag_size = 16;
  double anomaly_bag_fraction = 0.3;
  double anomaly_instance_fraction = 0.2;
  double domain_shift_scale = 6.0;
  double class_separation = 4.0;
  double noise_scale = 0.5;
  // Per-dimension std of anomalous instances around the anomaly center.
  double anomaly_noise_scale = 1.5;
  // For t > 1, this fraction of the domain shift points along the previous
  // domain's anomaly direction, so old anomalies partly resemble new normals.
  double anomaly_interference = 0.25;
  std::size_t segment_len = kDefaultSegmentLen;
  std::uint64_t seed = 7;

  // Throws ConfigError on an invalid configuration.
  void validate() const;
};

// Oracle geometry of one synthetic domain. The first K/2 coordinates carry
// the domain context, the rest carry the anomaly direction.
struct DomainCenters {
  std::vector<double> normal;
  std::vector<double> anomaly;
};

// Domain t uses a generator seeded from (seed, t) only, so the first T'
// domains of a longer stream equal the stream generated with domains = T'.
std::vector<DomainDataset> make_synthetic_stream(const SyntheticStreamConfig& cfg);
DomainCenters synthetic_domain_centers(const SyntheticStreamConfig& cfg, int domain_id);

// Binary feature format: "CADF", u32 version, u32 K, u64 N, u32 segment_len,
// then N*K little-endian float32 values.
inline constexpr std::size_t kFeatureHeaderBytes = 24;
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

void write_feature_file(const std::filesystem::path& path, const Tensor2& features,
                        std::size_t segment_len);
// Returns features and segment length. FormatError carries path and offset.
std::pair<Tensor2, std::size_t> read_feature_file(const std::filesystem::path& path);

// Frame-label format: "CADL", u32 version, u64 F, then F bytes in {0,1}.
void write_label_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);
std::vector<std::uint8_t> read_label_file(const std::filesystem::path& path);

// Writes manifest.json plus one feature file per bag (and a label file where
// frame labels exist). Returns the manifest path.
std::filesystem::path save_feature_dataset(const std::vector<DomainDataset>& datasets,
                                           const std::filesystem::path& out_dir);
std::vector<DomainDataset> load_feature_dataset(const std::filesystem::path& manifest_path);

}  // namespace cade
