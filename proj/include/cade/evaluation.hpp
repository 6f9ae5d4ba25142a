#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cade/datagen.hpp"
#include "cade/multi_discriminator.hpp"

namespace cade {

// Mean anomaly score of the ensemble, (1/N) * sum_k s_k(f).
double ensemble_score(std::span<const Discriminator> discriminators, std::span<const double> f);
// Per-instance ensemble scores of an N x K matrix.
std::vector<double> ensemble_scores(std::span<const Discriminator> discriminators,
                                    const Tensor2& features);

// Repeats each segment score segment_len times.
std::vector<double> frame_scores(std::span<const double> segment_scores, std::size_t segment_len);

// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 * P(tie). Throws
// UndefinedMetricError when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Frame-level AUC matrix. Row r holds the evaluation after training domain
// r + 1; column d is the test set of domain d + 1.
class AucMatrix {
 public:
  explicit AucMatrix(std::size_t domains = 0);

  std::size_t domains() const { return values_.size(); }
  void set_row(std::size_t row, std::vector<double> per_domain, double pooled_seen,
               double pooled_all);
  bool row_filled(std::size_t row) const { return filled_.at(row); }
  std::size_t filled_rows() const;
  double at(std::size_t row, std::size_t col) const;
  const std::vector<double>& row(std::size_t r) const { return values_.at(r); }
  // Pooled AUC over test frames of domains 1..row+1.
  double pooled_seen(std::size_t row) const { return pooled_seen_.at(row); }
  // Pooled AUC over all domains' test frames.
  double pooled_all(std::size_t row) const { return pooled_all_.at(row); }

  friend bool operator==(const AucMatrix&, const AucMatrix&) = default;

 private:
  std::vector<std::vector<double>> values_;
  std::vector<double> pooled_seen_;
  std::vector<double> pooled_all_;
  std::vector<bool> filled_;
};

struct ForgettingSummary {
  double final_auc = 0.0;      // pooled over all test frames after the last domain
  double avg_final_auc = 0.0;  // mean of the last row
  double bwt = 0.0;            // mean over d < T of A(T, d) - A(d, d)
};

// Throws Error if any row is unfilled.
ForgettingSummary forgetting_metrics(const AucMatrix& matrix);

// One AucMatrix row: per-domain AUC, pooled over domains 1..seen, pooled over all.
struct DomainEvaluation {
  std::vector<double> per_domain;
  double pooled_seen = 0.0;
  double pooled_all = 0.0;
};

DomainEvaluation evaluate_domains(std::span<const Discriminator> discriminators,
                                  std::span<const DomainDataset> domains, std::size_t seen);

// Per-frame ensemble scores of one test bag.
std::vector<double> bag_frame_scores(std::span<const Discriminator> discriminators,
                                     const Bag& bag);

}  // namespace cade
