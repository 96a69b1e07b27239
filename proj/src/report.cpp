#include "stochdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace stochdet {

SampleStats sample_stats(std::span<const double> values) {
  SampleStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  return s;
}

double separation(const SampleStats& benign, const SampleStats& adversarial) {
  const double gap = adversarial.mean - benign.mean;
  if (benign.std > 0.0) return gap / benign.std;
  if (gap == 0.0) return 0.0;
  return gap > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

Histogram l1_histogram(std::span<const double> values) {
  Histogram h;
  for (double v : values) {
    if (!(v >= -1e-9 && v <= 2.0 + 1e-9)) throw std::invalid_argument("histogram: L1 value outside [0,2]");
    const auto bin = static_cast<std::size_t>(std::clamp(v, 0.0, 2.0) / Histogram::kWidth);
    ++h.counts[std::min(bin, Histogram::kBins - 1)];
  }
  return h;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

std::string kind_name(const DetectionRow& r) { return r.kind ? std::string(to_string(*r.kind)) : "none"; }

}  // namespace

std::vector<DetectionRow> sorted_rows(std::vector<DetectionRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const DetectionRow& a, const DetectionRow& b) {
    const bool ab = !a.kind, bb = !b.kind;
    if (ab != bb) return ab;
    return std::make_tuple(kind_name(a), a.k, a.beta, a.c, a.set) <
           std::make_tuple(kind_name(b), b.k, b.beta, b.c, b.set);
  });
  return rows;
}

std::string detection_csv(std::span<const DetectionRow> rows) {
  std::ostringstream out;
  out << "set,kind,k,c,beta,attempted,samples,detection_rate,fpr,mean_runs,mean_l2,mean_l1_to_target,mean_confidence\n";
  for (const auto& r : sorted_rows({rows.begin(), rows.end()}))
    out << r.set << ',' << kind_name(r) << ',' << format_number(r.k) << ',' << format_number(r.c) << ','
        << format_number(r.beta) << ',' << r.attempted << ',' << r.samples << ',' << opt(r.detection_rate) << ','
        << opt(r.fpr) << ',' << format_number(r.mean_runs) << ',' << opt(r.mean_l2) << ','
        << opt(r.mean_l1_to_target) << ',' << opt(r.mean_confidence) << '\n';
  return out.str();
}

std::string k_sweep_csv(std::span<const DetectionRow> rows) {
  std::ostringstream out;
  out << "k,set,samples,success_rate,mean_l2,mean_confidence,detection_rate\n";
  for (const auto& r : sorted_rows({rows.begin(), rows.end()})) {
    if (r.kind != AttackKind::cw_l2) continue;
    const double success = r.attempted ? static_cast<double>(r.samples) / static_cast<double>(r.attempted) : 0.0;
    out << format_number(r.k) << ',' << r.set << ',' << r.samples << ',' << format_number(success) << ','
        << opt(r.mean_l2) << ',' << opt(r.mean_confidence) << ',' << opt(r.detection_rate) << '\n';
  }
  return out.str();
}

std::string beta_sweep_csv(std::span<const DetectionRow> rows) {
  std::vector<DetectionRow> aware;
  for (const auto& r : rows)
    if (r.kind == AttackKind::defense_aware) aware.push_back(r);
  std::stable_sort(aware.begin(), aware.end(), [](const auto& a, const auto& b) {
    return std::tie(a.beta, a.k, a.c, a.set) < std::tie(b.beta, b.k, b.c, b.set);
  });
  std::ostringstream out;
  out << "beta,set,samples,mean_l1_to_target,mean_l2,detection_rate\n";
  for (const auto& r : aware)
    out << format_number(r.beta) << ',' << r.set << ',' << r.samples << ',' << opt(r.mean_l1_to_target) << ','
        << opt(r.mean_l2) << ',' << opt(r.detection_rate) << '\n';
  return out.str();
}

std::string histogram_csv(std::span<const NamedHistogram> hists) {
  std::vector<const NamedHistogram*> order;
  for (const auto& h : hists) order.push_back(&h);
  std::stable_sort(order.begin(), order.end(),
                   [](auto a, auto b) { return std::tie(a->set, a->mode) < std::tie(b->set, b->mode); });
  std::ostringstream out;
  out << "set,mode,bin_lo,bin_hi,count\n";
  for (const auto* h : order)
    for (std::size_t b = 0; b < Histogram::kBins; ++b)
      out << h->set << ',' << h->mode << ',' << format_number(b * Histogram::kWidth) << ','
          << format_number((b + 1) * Histogram::kWidth) << ',' << h->histogram.counts[b] << '\n';
  return out.str();
}

std::string noise_study_csv(std::span<const NoiseStudyRow> rows) {
  std::vector<const NoiseStudyRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](auto a, auto b) {
    return std::tie(a->set, a->mode, a->level) < std::tie(b->set, b->mode, b->level);
  });
  std::ostringstream out;
  out << "set,mode,level,samples,mean_l1,std_l1\n";
  for (const auto* r : order)
    out << r->set << ',' << r->mode << ',' << format_number(r->level) << ',' << r->stats.count << ','
        << format_number(r->stats.mean) << ',' << format_number(r->stats.std) << '\n';
  return out.str();
}

}  // namespace stochdet
