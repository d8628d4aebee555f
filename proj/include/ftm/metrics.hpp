#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ftm/types.hpp"

namespace ftm {

struct ScoredSample {
  std::string id;
  Label label = Label::TT;
  double y = 0.0;  // probability of an intended invocation
};

class MetricsError : public std::runtime_error {
 public:
  enum class Kind { SingleClassInput, IdMismatch, ScoreOutOfRange };
  MetricsError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// A sample is suppressed iff y < threshold.
struct DetPoint {
  double threshold = 0.0;
  long suppressed_tt = 0;  // TT samples with y < threshold
  long accepted_ft = 0;    // FT samples with y >= threshold
  double fs = 0.0;
  double ft = 0.0;
};

struct DetCurve {
  std::vector<DetPoint> points;  // ascending threshold
  long num_tt = 0;
  long num_ft = 0;
};

inline constexpr double kTargetFs = 0.004;
inline constexpr double kRegionFsMax = 0.01;

/// Thresholds are the distinct scores plus 0 and the double just above 1.
/// Consecutive thresholds with identical (FS, FT) are merged into the
/// largest of them.
DetCurve det_curve(std::span<const ScoredSample> scores);

struct ThresholdPick {
  double threshold = 0.0;
  double fs = 0.0;
  double ft = 0.0;
  bool achievable = true;  // false: fell back to the smallest-FS point
};

/// Largest threshold whose FS does not exceed the target.
ThresholdPick pick_threshold(const DetCurve& dev, double target_fs = kTargetFs);

struct FtAtFs {
  double threshold = 0.0;
  double ft_eval = 0.0;
  double fs_eval = 0.0;
  bool achievable = true;
};

FtAtFs ft_at_fs(std::span<const ScoredSample> dev, std::span<const ScoredSample> eval,
                double target_fs = kTargetFs);

/// Rates of a score set at a fixed threshold.
DetPoint rates_at(std::span<const ScoredSample> scores, double threshold);

/// Trapezoidal area under FT(FS) for FS in [0, fs_max], unnormalized.
double auc_region(const DetCurve& curve, double fs_max = kRegionFsMax);

struct ErrorMatrix {
  // Cells in order: A right & B right, A right & B wrong, A wrong & B right,
  // A wrong & B wrong. Percentages of the class total.
  std::array<double, 4> tt{};
  std::array<double, 4> ft{};
  std::array<long, 4> tt_count{};
  std::array<long, 4> ft_count{};
};

/// Correct means y >= t for TT and y < t for FT. Samples are matched by id.
ErrorMatrix error_matrix(std::span<const ScoredSample> a, std::span<const ScoredSample> b,
                         double threshold_a, double threshold_b);

std::string det_csv(const DetCurve& curve);

struct SummaryRow {
  std::string classifier;
  double ft_at_fs = 0.0;
  double auc = 0.0;
};
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::string& text);

std::string error_matrix_csv(const ErrorMatrix& m, const std::string& name_a,
                             const std::string& name_b);

/// Polyline plot of the FS < fs_max region for several curves.
std::string det_svg(const std::vector<std::pair<std::string, DetCurve>>& curves,
                    double fs_max = kRegionFsMax);

}  // namespace ftm
