#include "ftm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace ftm {

namespace {

std::string g9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

void split_scores(std::span<const ScoredSample> scores, std::vector<double>& tt,
                  std::vector<double>& ft) {
  for (const auto& s : scores) {
    if (!(s.y >= 0.0 && s.y <= 1.0)) {
      throw MetricsError(MetricsError::Kind::ScoreOutOfRange,
                         "score of '" + s.id + "' is outside [0,1]");
    }
    (s.label == Label::TT ? tt : ft).push_back(s.y);
  }
  std::sort(tt.begin(), tt.end());
  std::sort(ft.begin(), ft.end());
}

long count_below(const std::vector<double>& sorted, double t) {
  return static_cast<long>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
}

}  // namespace

DetCurve det_curve(std::span<const ScoredSample> scores) {
  std::vector<double> tt, ft;
  split_scores(scores, tt, ft);
  if (tt.empty() || ft.empty()) {
    throw MetricsError(MetricsError::Kind::SingleClassInput,
                       "a DET curve needs samples of both labels");
  }
  std::vector<double> thresholds;
  thresholds.reserve(tt.size() + ft.size() + 2);
  thresholds.push_back(0.0);
  thresholds.insert(thresholds.end(), tt.begin(), tt.end());
  thresholds.insert(thresholds.end(), ft.begin(), ft.end());
  thresholds.push_back(std::nextafter(1.0, 2.0));
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  DetCurve c;
  c.num_tt = static_cast<long>(tt.size());
  c.num_ft = static_cast<long>(ft.size());
  for (double t : thresholds) {
    DetPoint p;
    p.threshold = t;
    p.suppressed_tt = count_below(tt, t);
    p.accepted_ft = c.num_ft - count_below(ft, t);
    p.fs = static_cast<double>(p.suppressed_tt) / static_cast<double>(c.num_tt);
    p.ft = static_cast<double>(p.accepted_ft) / static_cast<double>(c.num_ft);
    if (!c.points.empty() && c.points.back().suppressed_tt == p.suppressed_tt &&
        c.points.back().accepted_ft == p.accepted_ft) {
      c.points.back() = p;
    } else {
      c.points.push_back(p);
    }
  }
  return c;
}

ThresholdPick pick_threshold(const DetCurve& dev, double target_fs) {
  const DetPoint* best = nullptr;
  for (const auto& p : dev.points)
    if (p.fs <= target_fs) best = &p;
  if (best) return {best->threshold, best->fs, best->ft, true};
  const DetPoint& lowest = dev.points.front();
  return {lowest.threshold, lowest.fs, lowest.ft, false};
}

DetPoint rates_at(std::span<const ScoredSample> scores, double threshold) {
  DetPoint p;
  p.threshold = threshold;
  long n_tt = 0, n_ft = 0;
  for (const auto& s : scores) {
    if (s.label == Label::TT) {
      ++n_tt;
      if (s.y < threshold) ++p.suppressed_tt;
    } else {
      ++n_ft;
      if (s.y >= threshold) ++p.accepted_ft;
    }
  }
  p.fs = n_tt ? static_cast<double>(p.suppressed_tt) / static_cast<double>(n_tt) : 0.0;
  p.ft = n_ft ? static_cast<double>(p.accepted_ft) / static_cast<double>(n_ft) : 0.0;
  return p;
}

FtAtFs ft_at_fs(std::span<const ScoredSample> dev, std::span<const ScoredSample> eval,
                double target_fs) {
  const ThresholdPick pick = pick_threshold(det_curve(dev), target_fs);
  det_curve(eval);  // same preconditions on the eval side
  const DetPoint at = rates_at(eval, pick.threshold);
  return {pick.threshold, at.ft, at.fs, pick.achievable};
}

double auc_region(const DetCurve& curve, double fs_max) {
  double area = 0.0;
  const auto& pts = curve.points;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double x0 = pts[i].fs, y0 = pts[i].ft;
    const double x1 = pts[i + 1].fs, y1 = pts[i + 1].ft;
    if (x0 >= fs_max) break;
    if (x1 <= fs_max) {
      area += (x1 - x0) * (y0 + y1) / 2.0;
    } else {
      const double ym = y0 + (y1 - y0) * (fs_max - x0) / (x1 - x0);
      area += (fs_max - x0) * (y0 + ym) / 2.0;
      break;
    }
  }
  return area;
}

ErrorMatrix error_matrix(std::span<const ScoredSample> a, std::span<const ScoredSample> b,
                         double threshold_a, double threshold_b) {
  if (a.size() != b.size()) {
    throw MetricsError(MetricsError::Kind::IdMismatch, "score lists differ in length");
  }
  std::map<std::string, const ScoredSample*> by_id;
  for (const auto& s : b) by_id[s.id] = &s;
  ErrorMatrix m;
  long n_tt = 0, n_ft = 0;
  for (const auto& sa : a) {
    auto it = by_id.find(sa.id);
    if (it == by_id.end() || it->second->label != sa.label) {
      throw MetricsError(MetricsError::Kind::IdMismatch, "sample '" + sa.id + "' is unmatched");
    }
    const ScoredSample& sb = *it->second;
    const bool tt = sa.label == Label::TT;
    const bool ok_a = tt ? sa.y >= threshold_a : sa.y < threshold_a;
    const bool ok_b = tt ? sb.y >= threshold_b : sb.y < threshold_b;
    const int cell = (ok_a ? 0 : 2) + (ok_b ? 0 : 1);
    if (tt) {
      ++m.tt_count[cell];
      ++n_tt;
    } else {
      ++m.ft_count[cell];
      ++n_ft;
    }
  }
  for (int i = 0; i < 4; ++i) {
    m.tt[i] = n_tt ? 100.0 * static_cast<double>(m.tt_count[i]) / static_cast<double>(n_tt) : 0.0;
    m.ft[i] = n_ft ? 100.0 * static_cast<double>(m.ft_count[i]) / static_cast<double>(n_ft) : 0.0;
  }
  return m;
}

std::string det_csv(const DetCurve& curve) {
  std::string out = "threshold,fs,ft\n";
  for (const auto& p : curve.points) out += g9(p.threshold) + "," + g9(p.fs) + "," + g9(p.ft) + "\n";
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "classifier,ft_at_fs_0.4pct,auc\n";
  for (const auto& r : rows) out += r.classifier + "," + g9(r.ft_at_fs) + "," + g9(r.auc) + "\n";
  return out;
}

std::vector<SummaryRow> read_summary_csv(const std::string& text) {
  std::vector<SummaryRow> rows;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error("malformed summary row '" + line + "'");
    }
    rows.push_back({line.substr(0, c1), std::stod(line.substr(c1 + 1, c2 - c1 - 1)),
                    std::stod(line.substr(c2 + 1))});
  }
  return rows;
}

std::string error_matrix_csv(const ErrorMatrix& m, const std::string& name_a,
                             const std::string& name_b) {
  std::string out = "class,model_a,model_b,a_correct_b_correct,a_correct_b_wrong,"
                    "a_wrong_b_correct,a_wrong_b_wrong\n";
  auto row = [&](const char* cls, const std::array<double, 4>& v) {
    out += std::string(cls) + "," + name_a + "," + name_b;
    for (double x : v) out += "," + g9(x);
    out += "\n";
  };
  row("TT", m.tt);
  row("FT", m.ft);
  return out;
}

std::string det_svg(const std::vector<std::pair<std::string, DetCurve>>& curves, double fs_max) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#17becf", "#8c564b", "#e377c2"};
  const double w = 560, h = 400, left = 60, right = 180, top = 20, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = left + pw * i / 4.0, fy = top + ph - ph * i / 4.0;
    os << "<text x=\"" << fx << "\" y=\"" << top + ph + 16 << "\" font-size=\"10\" "
       << "text-anchor=\"middle\">" << g9(100.0 * fs_max * i / 4.0) << "%</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << fy + 3 << "\" font-size=\"10\" "
       << "text-anchor=\"end\">" << 25 * i << "%</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
     << "\" font-size=\"12\" text-anchor=\"middle\">False suppression rate</text>\n";
  os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" font-size=\"12\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 14 " << top + ph / 2 << ")\">False trigger rate</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* color = palette[k % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& p : curves[k].second.points) {
      if (p.fs > fs_max) break;
      os << g9(left + pw * p.fs / fs_max) << "," << g9(top + ph - ph * p.ft) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 + 16 * k << "\" font-size=\"11\" "
       << "fill=\"" << color << "\">" << curves[k].first << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace ftm
