#include "cade/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include "cade/error.hpp"

namespace cade {

std::vector<double> ensemble_scores(std::span<const Discriminator> discriminators,
                                    const Tensor2& features) {
  if (discriminators.empty()) throw ConfigError("ensemble_score: no discriminators");
  std::vector<double> acc(features.rows(), 0.0);
  for (const auto& d : discriminators) {
    const Tensor2 s = d.forward(features).scores;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s[i];
  }
  const double n = static_cast<double>(discriminators.size());
  for (auto& v : acc) v /= n;
  return acc;
}

double ensemble_score(std::span<const Discriminator> discriminators, std::span<const double> f) {
  return ensemble_scores(discriminators, Tensor2::row(f)).front();
}

std::vector<double> frame_scores(std::span<const double> segment_scores, std::size_t segment_len) {
  if (segment_len == 0) throw ConfigError("frame_scores: segment_len must be >= 1");
  std::vector<double> out;
  out.reserve(segment_scores.size() * segment_len);
  for (double s : segment_scores) out.insert(out.end(), segment_len, s);
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives (1-based ranks; ties share the midrank).
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc: only one class present");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

AucMatrix::AucMatrix(std::size_t domains)
    : values_(domains, std::vector<double>(domains, 0.0)),
      pooled_seen_(domains, 0.0),
      pooled_all_(domains, 0.0),
      filled_(domains, false) {}

void AucMatrix::set_row(std::size_t row, std::vector<double> per_domain, double pooled_seen,
                        double pooled_all) {
  if (row >= domains() || per_domain.size() != domains()) {
    throw DimensionError("AucMatrix::set_row: row or width out of range");
  }
  values_[row] = std::move(per_domain);
  pooled_seen_[row] = pooled_seen;
  pooled_all_[row] = pooled_all;
  filled_[row] = true;
}

std::size_t AucMatrix::filled_rows() const {
  return static_cast<std::size_t>(std::count(filled_.begin(), filled_.end(), true));
}

double AucMatrix::at(std::size_t row, std::size_t col) const {
  if (!filled_.at(row)) throw Error("AucMatrix: row " + std::to_string(row) + " not filled");
  return values_.at(row).at(col);
}

ForgettingSummary forgetting_metrics(const AucMatrix& m) {
  const std::size_t t = m.domains();
  if (t == 0) throw Error("forgetting_metrics: empty matrix");
  for (std::size_t r = 0; r < t; ++r) {
    if (!m.row_filled(r)) {
      throw Error("forgetting_metrics: row " + std::to_string(r + 1) + " not filled");
    }
  }
  ForgettingSummary s;
  s.final_auc = m.pooled_all(t - 1);
  const auto& last = m.row(t - 1);
  s.avg_final_auc = std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(t);
  if (t > 1) {
    double acc = 0.0;
    for (std::size_t d = 0; d + 1 < t; ++d) acc += m.at(t - 1, d) - m.at(d, d);
    s.bwt = acc / static_cast<double>(t - 1);
  }
  return s;
}

std::vector<double> bag_frame_scores(std::span<const Discriminator> discriminators,
                                     const Bag& bag) {
  const auto seg = ensemble_scores(discriminators, bag.features);
  return frame_scores(seg, bag.segment_len);
}

DomainEvaluation evaluate_domains(std::span<const Discriminator> discriminators,
                                  std::span<const DomainDataset> domains, std::size_t seen) {
  DomainEvaluation ev;
  std::vector<double> seen_scores, all_scores;
  std::vector<std::uint8_t> seen_labels, all_labels;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& bag : domains[d].test_bags) {
      if (!bag.frame_labels) {
        throw FormatError("test video " + bag.video_id + " has no frame labels");
      }
      auto fs = bag_frame_scores(discriminators, bag);
      if (fs.size() != bag.frame_labels->size()) {
        throw DimensionError("test video " + bag.video_id + ": frame count mismatch");
      }
      scores.insert(scores.end(), fs.begin(), fs.end());
      labels.insert(labels.end(), bag.frame_labels->begin(), bag.frame_labels->end());
    }
    ev.per_domain.push_back(roc_auc(scores, labels));
    if (d < seen) {
      seen_scores.insert(seen_scores.end(), scores.begin(), scores.end());
      seen_labels.insert(seen_labels.end(), labels.begin(), labels.end());
    }
    all_scores.insert(all_scores.end(), scores.begin(), scores.end());
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
  }
  ev.pooled_seen = roc_auc(seen_scores, seen_labels);
  ev.pooled_all = roc_auc(all_scores, all_labels);
  return ev;
}

}  // namespace cade
