#include "cade/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cade/error.hpp"

namespace cade {

std::size_t DomainDataset::feature_dim() const {
  for (const auto* bags : {&train_bags, &test_bags})
    for (const auto& b : *bags)
      if (b.feature_dim() != 0) return b.feature_dim();
  return 0;
}

std::size_t AccessAudit::reads(int active, int data_domain) const {
  auto it = reads_.find({active, data_domain});
  return it == reads_.end() ? 0 : it->second;
}

std::size_t AccessAudit::past_domain_reads() const {
  std::size_t n = 0;
  for (const auto& [key, count] : reads_)
    if (key.second < key.first) n += count;
  return n;
}

std::size_t AccessAudit::total_reads() const {
  std::size_t n = 0;
  for (const auto& [key, count] : reads_) n += count;
  return n;
}

const Bag& read_train_bag(const DomainDataset& domain, std::size_t i, AccessAudit* audit) {
  if (audit != nullptr) audit->record_train_read(domain.domain_id);
  return domain.train_bags.at(i);
}

void SyntheticStreamConfig::validate() const {
  if (domains < 1) throw ConfigError("synthetic stream: domains must be >= 1");
  if (feature_dim < 1 || bags_per_domain < 1 || test_bags_per_domain < 1 || bag_size < 1 ||
      segment_len < 1) {
    throw ConfigError("synthetic stream: all counts must be >= 1");
  }
  auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open_unit(anomaly_bag_fraction) || !open_unit(anomaly_instance_fraction)) {
    throw ConfigError("synthetic stream: fractions must lie in (0, 1)");
  }
  if (!(class_separation > 0.0)) {
    throw ConfigError("synthetic stream: class_separation must be positive");
  }
  if (!(domain_shift_scale >= 0.0) || !(noise_scale > 0.0) || !(anomaly_noise_scale > 0.0)) {
    throw ConfigError(
        "synthetic stream: domain_shift_scale >= 0 and positive noise scales required");
  }
  if (!(anomaly_interference >= 0.0 && anomaly_interference < 1.0)) {
    throw ConfigError("synthetic stream: anomaly_interference must lie in [0, 1)");
  }
}

namespace {

std::mt19937_64 domain_engine(std::uint64_t seed, int domain_id, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(domain_id), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::vector<double> random_unit(std::mt19937_64& eng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  if (dim == 0) return v;
  double norm = 0.0;
  for (auto& x : v) {
    x = n(eng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// Unit vector in the first K/2 coordinates; zero elsewhere. Empty block
// (K = 1) gives the zero vector.
std::vector<double> context_direction(const SyntheticStreamConfig& cfg, int domain_id) {
  auto eng = domain_engine(cfg.seed, domain_id, 0);
  auto v = random_unit(eng, cfg.feature_dim / 2);
  v.resize(cfg.feature_dim, 0.0);
  return v;
}

// Unit vector in the last K - K/2 coordinates; zero elsewhere.
std::vector<double> anomaly_direction(const SyntheticStreamConfig& cfg, int domain_id) {
  auto eng = domain_engine(cfg.seed, domain_id, 3);
  const std::size_t ctx_dim = cfg.feature_dim / 2;
  const auto u = random_unit(eng, cfg.feature_dim - ctx_dim);
  std::vector<double> v(ctx_dim, 0.0);
  v.insert(v.end(), u.begin(), u.end());
  return v;
}

// Values are rounded through float32 so the on-disk representation is exact.
double as_stored(double v) { return static_cast<double>(static_cast<float>(v)); }

Bag make_bag(std::mt19937_64& eng, const SyntheticStreamConfig& cfg, const DomainCenters& c,
             int domain_id, std::string video_id, bool positive) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = cfg.bag_size;
  std::vector<std::uint8_t> instance_labels(n, 0);
  if (positive) {
    const auto n_anom = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(cfg.anomaly_instance_fraction * static_cast<double>(n))),
        1, n);
    std::uniform_int_distribution<std::size_t> start_dist(0, n - n_anom);
    const std::size_t start = start_dist(eng);
    for (std::size_t i = start; i < start + n_anom; ++i) instance_labels[i] = 1;
  }
  Bag bag;
  bag.video_id = std::move(video_id);
  bag.weak_label = positive ? 1 : 0;
  bag.domain_id = domain_id;
  bag.segment_len = cfg.segment_len;
  bag.features = Tensor2(n, cfg.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& center = instance_labels[i] ? c.anomaly : c.normal;
    const double sd = instance_labels[i] ? cfg.anomaly_noise_scale : cfg.noise_scale;
    for (std::size_t k = 0; k < cfg.feature_dim; ++k) {
      bag.features(i, k) = as_stored(center[k] + sd * noise(eng));
    }
  }
  std::vector<std::uint8_t> frames;
  frames.reserve(n * cfg.segment_len);
  for (auto l : instance_labels) frames.insert(frames.end(), cfg.segment_len, l);
  bag.frame_labels = std::move(frames);
  return bag;
}

std::vector<Bag> make_split(std::mt19937_64& eng, const SyntheticStreamConfig& cfg,
                            const DomainCenters& c, int domain_id, const std::string& split,
                            std::size_t count) {
  auto n_pos = static_cast<std::size_t>(
      std::lround(cfg.anomaly_bag_fraction * static_cast<double>(count)));
  n_pos = std::clamp<std::size_t>(n_pos, count > 1 ? 1 : 0, count > 1 ? count - 1 : count);
  std::vector<bool> positive(count, false);
  std::fill(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(n_pos), true);
  std::shuffle(positive.begin(), positive.end(), eng);
  std::vector<Bag> bags;
  bags.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string id = "d" + std::to_string(domain_id) + "_" + split + "_" + std::to_string(i);
    bags.push_back(make_bag(eng, cfg, c, domain_id, std::move(id), positive[i]));
  }
  return bags;
}

}  // namespace

DomainCenters synthetic_domain_centers(const SyntheticStreamConfig& cfg, int domain_id) {
  const std::size_t k_dim = cfg.feature_dim;
  const std::size_t ctx_dim = k_dim / 2;
  const double beta = domain_id > 1 ? cfg.anomaly_interference : 0.0;
  auto context = context_direction(cfg, domain_id);
  const auto anomaly_dir = anomaly_direction(cfg, domain_id);
  const double ctx_scale = std::sqrt(1.0 - beta * beta);
  // Context and anomaly directions live in disjoint coordinate blocks; only
  // the interference term moves the normal center inside the anomaly block.
  std::vector<double> shift(k_dim, 0.0);
  for (std::size_t k = 0; k < ctx_dim; ++k) shift[k] = ctx_scale * context[k];
  if (beta > 0.0) {
    const auto prev_dir = anomaly_direction(cfg, domain_id - 1);
    for (std::size_t k = ctx_dim; k < k_dim; ++k) shift[k] = beta * prev_dir[k];
  }
  DomainCenters c;
  c.normal.resize(k_dim);
  c.anomaly.resize(k_dim);
  for (std::size_t k = 0; k < k_dim; ++k) {
    c.normal[k] = cfg.domain_shift_scale * shift[k];
    c.anomaly[k] = c.normal[k] + cfg.class_separation * anomaly_dir[k];
  }
  return c;
}

std::vector<DomainDataset> make_synthetic_stream(const SyntheticStreamConfig& cfg) {
  cfg.validate();
  std::vector<DomainDataset> out;
  out.reserve(static_cast<std::size_t>(cfg.domains));
  for (int t = 1; t <= cfg.domains; ++t) {
    const auto centers = synthetic_domain_centers(cfg, t);
    auto train_eng = domain_engine(cfg.seed, t, 1);
    auto test_eng = domain_engine(cfg.seed, t, 2);
    DomainDataset d;
    d.domain_id = t;
    d.train_bags = make_split(train_eng, cfg, centers, t, "train", cfg.bags_per_domain);
    d.test_bags = make_split(test_eng, cfg, centers, t, "test", cfg.test_bags_per_domain);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace cade
