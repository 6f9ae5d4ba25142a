#include <fstream>
#include <set>

#include "json.hpp"

#include "binary_io.hpp"
#include "cade/datagen.hpp"
#include "cade/error.hpp"

namespace cade {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const fs::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

namespace {

constexpr char kFeatureMagic[4] = {'C', 'A', 'D', 'F'};
constexpr char kLabelMagic[4] = {'C', 'A', 'D', 'L'};
constexpr std::uint32_t kLabelFormatVersion = 1;

void check_magic(detail::ByteReader& r, const char (&magic)[4]) {
  char m[4];
  r.get_bytes(m, 4);
  if (std::memcmp(m, magic, 4) != 0) {
    r.fail(std::string("bad magic, expected \"") + std::string(magic, 4) + "\"");
  }
}

}  // namespace

void write_feature_file(const fs::path& path, const Tensor2& features, std::size_t segment_len) {
  detail::ByteWriter w;
  w.put_bytes(kFeatureMagic, 4);
  w.put<std::uint32_t>(kFeatureFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.cols()));
  w.put<std::uint64_t>(features.rows());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(segment_len));
  for (double v : features.data()) w.put<float>(static_cast<float>(v));
  detail::write_file_bytes(path, w.bytes());
}

std::pair<Tensor2, std::size_t> read_feature_file(const fs::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path.string());
  check_magic(r, kFeatureMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureFormatVersion) {
    r.fail("unsupported feature format version " + std::to_string(version));
  }
  const auto k = r.get<std::uint32_t>();
  const auto n = r.get<std::uint64_t>();
  const auto seg = r.get<std::uint32_t>();
  if (seg == 0) r.fail("segment_len must be >= 1");
  if (r.remaining() / 4 < n * k) {
    r.fail("truncated feature payload (expected " + std::to_string(n * k * 4) + " bytes)");
  }
  if (r.remaining() != n * k * 4) r.fail("trailing bytes after feature payload");
  Tensor2 out(static_cast<std::size_t>(n), k);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(r.get<float>());
  return {std::move(out), seg};
}

void write_label_file(const fs::path& path, const std::vector<std::uint8_t>& labels) {
  detail::ByteWriter w;
  w.put_bytes(kLabelMagic, 4);
  w.put<std::uint32_t>(kLabelFormatVersion);
  w.put<std::uint64_t>(labels.size());
  w.put_bytes(labels.data(), labels.size());
  detail::write_file_bytes(path, w.bytes());
}

std::vector<std::uint8_t> read_label_file(const fs::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path.string());
  check_magic(r, kLabelMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kLabelFormatVersion) {
    r.fail("unsupported label format version " + std::to_string(version));
  }
  const auto f = r.get<std::uint64_t>();
  if (r.remaining() < f) r.fail("truncated label payload");
  if (r.remaining() != f) r.fail("trailing bytes after label payload");
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(f));
  r.get_bytes(labels.data(), labels.size());
  for (auto l : labels) {
    if (l > 1) r.fail("frame label outside {0,1}");
  }
  return labels;
}

fs::path save_feature_dataset(const std::vector<DomainDataset>& datasets, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "cade-manifest";
  manifest["version"] = 1;
  manifest["domains"] = json::array();
  for (const auto& d : datasets) {
    json dj;
    dj["domain_id"] = d.domain_id;
    dj["videos"] = json::array();
    const std::string dir = "domain_" + std::to_string(d.domain_id);
    for (const auto& [split, bags] :
         {std::pair{"train", &d.train_bags}, std::pair{"test", &d.test_bags}}) {
      for (const auto& b : *bags) {
        json v;
        v["video_id"] = b.video_id;
        v["split"] = split;
        v["weak_label"] = b.weak_label;
        const std::string feat = dir + "/" + b.video_id + ".cadf";
        write_feature_file(out_dir / feat, b.features, b.segment_len);
        v["feature_path"] = feat;
        if (b.frame_labels) {
          const std::string lab = dir + "/" + b.video_id + ".cadl";
          write_label_file(out_dir / lab, *b.frame_labels);
          v["label_path"] = lab;
        }
        dj["videos"].push_back(std::move(v));
      }
    }
    manifest["domains"].push_back(std::move(dj));
  }
  const fs::path manifest_path = out_dir / "manifest.json";
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file_bytes(manifest_path, std::vector<char>(text.begin(), text.end()));
  return manifest_path;
}

std::vector<DomainDataset> load_feature_dataset(const fs::path& manifest_path) {
  json manifest;
  {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    try {
      manifest = json::parse(in);
    } catch (const json::parse_error& e) {
      throw FormatError(manifest_path.string() + ": " + e.what() + " at byte offset " +
                        std::to_string(e.byte));
    }
  }
  const fs::path base = manifest_path.parent_path();
  std::vector<DomainDataset> out;
  std::size_t dim = 0;
  try {
    if (manifest.value("format", std::string{}) != "cade-manifest") {
      throw FormatError(manifest_path.string() + ": not a cade manifest");
    }
    if (manifest.value("version", 0) != 1) {
      throw FormatError(manifest_path.string() + ": unsupported manifest version");
    }
    for (const auto& dj : manifest.at("domains")) {
      DomainDataset d;
      d.domain_id = dj.at("domain_id").get<int>();
      std::set<std::string> train_ids;
      for (const auto& v : dj.at("videos")) {
        Bag b;
        b.video_id = v.at("video_id").get<std::string>();
        b.weak_label = v.at("weak_label").get<int>();
        if (b.weak_label != 0 && b.weak_label != 1) {
          throw FormatError(manifest_path.string() + ": weak_label outside {0,1} for " +
                            b.video_id);
        }
        b.domain_id = d.domain_id;
        const fs::path feat = base / v.at("feature_path").get<std::string>();
        auto [features, seg] = read_feature_file(feat);
        if (dim == 0) dim = features.cols();
        if (features.cols() != dim) {
          throw FormatError(feat.string() + ": feature dimension " +
                            std::to_string(features.cols()) + " differs from dataset K=" +
                            std::to_string(dim) + " at byte offset 8");
        }
        b.features = std::move(features);
        b.segment_len = seg;
        if (v.contains("label_path")) {
          const fs::path lab = base / v.at("label_path").get<std::string>();
          auto labels = read_label_file(lab);
          if (labels.size() != b.instance_count() * b.segment_len) {
            throw FormatError(lab.string() + ": " + std::to_string(labels.size()) +
                              " frame labels for " + std::to_string(b.instance_count()) +
                              " segments of length " + std::to_string(b.segment_len) +
                              " at byte offset 8");
          }
          b.frame_labels = std::move(labels);
        }
        const std::string split = v.at("split").get<std::string>();
        if (split == "train") {
          train_ids.insert(b.video_id);
          d.train_bags.push_back(std::move(b));
        } else if (split == "test") {
          d.test_bags.push_back(std::move(b));
        } else {
          throw FormatError(manifest_path.string() + ": unknown split \"" + split + "\"");
        }
      }
      for (const auto& b : d.test_bags) {
        if (train_ids.count(b.video_id) != 0) {
          throw FormatError(manifest_path.string() + ": video " + b.video_id +
                            " appears in both train and test");
        }
      }
      out.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace cade
