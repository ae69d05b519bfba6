#include "psl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"

namespace psl {

namespace {

double round_half_even(double x) {
  double f = std::floor(x);
  double frac = x - f;
  if (frac > 0.5) return f + 1.0;
  if (frac < 0.5) return f;
  // tie: round to even
  return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

}  // namespace

SetStats SetStats::of(const std::vector<Eigen::VectorXd>& pts) {
  SetStats s;
  s.count = pts.size();
  if (pts.empty()) {
    s.mean = Eigen::VectorXd();
    s.var = 0.0;
    return s;
  }
  s.mean = Eigen::VectorXd::Zero(pts.front().size());
  for (const auto& p : pts) s.mean += p;
  s.mean /= static_cast<double>(s.count);
  if (s.count <= 1) {
    s.var = 0.0;
    return s;
  }
  double ss = 0.0;
  for (const auto& p : pts) ss += (p - s.mean).squaredNorm();
  s.var = ss / static_cast<double>(s.count - 1);
  return s;
}

SetStats merge_stats(const SetStats& old_set, const SetStats& arrivals,
                     const SetStats& departures) {
  const double ns = static_cast<double>(old_set.count);
  const double na = static_cast<double>(arrivals.count);
  const double nd = static_cast<double>(departures.count);
  const double m = ns + na - nd;
  if (m < 1.0)
    throw SizeUnderflow("merge_stats: |S|+|A|-|D| = " + std::to_string(m));

  Eigen::Index dim = old_set.count > 0 ? old_set.mean.size()
                     : arrivals.count > 0 ? arrivals.mean.size()
                                          : departures.mean.size();
  auto vec_or_zero = [dim](const SetStats& s) {
    return s.count > 0 ? s.mean : Eigen::VectorXd::Zero(dim).eval();
  };
  const Eigen::VectorXd mu_s = vec_or_zero(old_set);
  const Eigen::VectorXd mu_a = vec_or_zero(arrivals);
  const Eigen::VectorXd mu_d = vec_or_zero(departures);

  SetStats out;
  out.count = static_cast<std::size_t>(m);
  out.mean = (ns * mu_s + na * mu_a - nd * mu_d) / m;

  if (out.count <= 1) {
    out.var = 0.0;
    return out;
  }
  // empty/singleton inputs carry var = 0, so their (|.|-1) sigma^2 term
  // vanishes (for |.| = 0 the coefficient is -1 against a zero variance)
  double num = (ns - 1.0) * old_set.var + (na - 1.0) * arrivals.var -
               (nd - 1.0) * departures.var;
  num += (na * ns / m) * (mu_s - mu_a).squaredNorm();
  num -= (ns * nd / m) * (mu_s - mu_d).squaredNorm();
  num -= (na * nd / m) * (mu_a - mu_d).squaredNorm();
  out.var = num / (m - 1.0);
  if (out.var < 0.0 && out.var > -1e-9) out.var = 0.0;  // round-off guard
  return out;
}

SetStats Stratum::stats() const {
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(points.size());
  for (const auto& p : points) pts.push_back(p.features);
  return SetStats::of(pts);
}

void Stratum::recompute_stats() {
  SetStats s = stats();
  mean = s.mean;
  var = s.var;
}

DeviceDataset::DeviceDataset(int device_id, std::size_t s_max,
                             std::size_t s_min)
    : device_id_(device_id), s_max_(s_max), s_min_(s_min) {}

DeviceDataset DeviceDataset::build(int device_id,
                                   std::vector<DataPoint> points,
                                   std::size_t s_max, std::size_t s_min) {
  DeviceDataset ds(device_id, s_max, s_min);
  std::map<int, std::vector<DataPoint>> by_label;
  for (auto& p : points) by_label[p.label].push_back(std::move(p));
  for (auto& [label, pts] : by_label) {
    Stratum s;
    s.id = ds.next_id_++;
    s.label = label;
    s.points = std::move(pts);
    s.recompute_stats();
    ds.strata_.push_back(std::move(s));
  }
  // enforce the size cap by repeated splitting
  bool again = true;
  while (again) {
    again = false;
    for (std::size_t i = 0; i < ds.strata_.size(); ++i) {
      if (ds.strata_[i].size() >= s_max) {
        ds.split_stratum(i);
        again = true;
        break;
      }
    }
  }
  return ds;
}

std::size_t DeviceDataset::total() const {
  std::size_t t = 0;
  for (const auto& s : strata_) t += s.size();
  return t;
}

const Stratum* DeviceDataset::find(int stratum_id) const {
  for (const auto& s : strata_)
    if (s.id == stratum_id) return &s;
  return nullptr;
}

std::size_t DeviceDataset::index_of(int stratum_id) const {
  for (std::size_t i = 0; i < strata_.size(); ++i)
    if (strata_[i].id == stratum_id) return i;
  throw PslError("stratum id not found: " + std::to_string(stratum_id));
}

void DeviceDataset::split_stratum(std::size_t idx) {
  Stratum& s = strata_[idx];
  // points sorted by distance to the stratum mean, alternate assignment to
  // the two children so sizes are equal
  std::vector<std::size_t> order(s.points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const Eigen::VectorXd mu = s.mean;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return (s.points[a].features - mu).squaredNorm() <
                            (s.points[b].features - mu).squaredNorm();
                   });
  Stratum child;
  child.id = next_id_++;
  child.label = s.label;
  std::vector<DataPoint> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i % 2 == 0)
      keep.push_back(std::move(s.points[order[i]]));
    else
      child.points.push_back(std::move(s.points[order[i]]));
  }
  s.points = std::move(keep);
  s.recompute_stats();
  child.recompute_stats();
  strata_.push_back(std::move(child));
}

int DeviceDataset::assign_arrival(DataPoint d) {
  std::size_t best = strata_.size();
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < strata_.size(); ++i) {
    if (strata_[i].label != d.label) continue;
    double dist = (strata_[i].mean - d.features).norm();
    if (dist < best_dist ||
        (dist == best_dist && best < strata_.size() &&
         strata_[i].id < strata_[best].id)) {
      best = i;
      best_dist = dist;
    }
  }
  if (best == strata_.size()) {
    Stratum s;
    s.id = next_id_++;
    s.label = d.label;
    s.mean = d.features;
    s.var = 0.0;
    s.points.push_back(std::move(d));
    strata_.push_back(std::move(s));
    return strata_.back().id;
  }
  Stratum& s = strata_[best];
  SetStats arr;
  arr.count = 1;
  arr.mean = d.features;
  arr.var = 0.0;
  SetStats cur{s.size(), s.mean, s.var};
  SetStats merged = merge_stats(cur, arr, SetStats{});
  s.points.push_back(std::move(d));
  s.mean = merged.mean;
  s.var = merged.var;
  int landed = s.id;
  if (s.size() >= s_max_) split_stratum(best);
  return landed;
}

DataPoint DeviceDataset::remove_point(int stratum_id, std::size_t index) {
  std::size_t idx = index_of(stratum_id);
  Stratum& s = strata_[idx];
  if (index >= s.size())
    throw PslError("remove_point: index out of range");
  DataPoint out = std::move(s.points[index]);
  s.points.erase(s.points.begin() + static_cast<std::ptrdiff_t>(index));
  if (s.points.empty()) {
    strata_.erase(strata_.begin() + static_cast<std::ptrdiff_t>(idx));
    return out;
  }
  SetStats dep;
  dep.count = 1;
  dep.mean = out.features;
  dep.var = 0.0;
  SetStats cur{s.size() + 1, s.mean, s.var};
  SetStats merged = merge_stats(cur, SetStats{}, dep);
  s.mean = merged.mean;
  s.var = merged.var;
  maybe_merge(stratum_id);
  return out;
}

void DeviceDataset::maybe_merge(int stratum_id) {
  std::size_t idx = index_of(stratum_id);
  if (strata_[idx].size() >= s_min_) return;
  const Stratum& src = strata_[idx];
  std::size_t best = strata_.size();
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < strata_.size(); ++i) {
    if (i == idx || strata_[i].label != src.label) continue;
    double dist = (strata_[i].mean - src.mean).norm();
    if (dist < best_dist ||
        (dist == best_dist && best < strata_.size() &&
         strata_[i].id < strata_[best].id)) {
      best = i;
      best_dist = dist;
    }
  }
  if (best == strata_.size()) return;  // no same-label peer
  Stratum& dst = strata_[best];
  SetStats cur{dst.size(), dst.mean, dst.var};
  SetStats add = src.stats();
  SetStats merged = merge_stats(cur, add, SetStats{});
  for (auto& p : strata_[idx].points) dst.points.push_back(std::move(p));
  int dst_id = dst.id;
  dst.mean = merged.mean;
  dst.var = merged.var;
  strata_.erase(strata_.begin() + static_cast<std::ptrdiff_t>(idx));
  // the merged stratum may now hit the cap
  while (strata_[index_of(dst_id)].size() >= s_max_)
    split_stratum(index_of(dst_id));
}

std::pair<int, std::size_t> DeviceDataset::select_offload_point() const {
  if (strata_.empty()) throw EmptyDataset("select_offload_point");
  std::size_t best = 0;
  for (std::size_t i = 1; i < strata_.size(); ++i) {
    if (strata_[i].size() > strata_[best].size() ||
        (strata_[i].size() == strata_[best].size() &&
         strata_[i].id < strata_[best].id)) {
      best = i;
    }
  }
  const Stratum& s = strata_[best];
  std::size_t pick = 0;
  double pick_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    double dist = (s.mean - s.points[i].features).norm();
    if (dist < pick_dist) {
      pick = i;
      pick_dist = dist;
    }
  }
  return {s.id, pick};
}

DataPoint DeviceDataset::take_offload_point() {
  auto [sid, index] = select_offload_point();
  return remove_point(sid, index);
}

std::string DeviceDataset::to_json() const {
  nlohmann::json j;
  j["device_id"] = device_id_;
  j["strata"] = nlohmann::json::array();
  for (const auto& s : strata_) {
    nlohmann::json js;
    js["label"] = s.label;
    js["points"] = nlohmann::json::array();
    for (const auto& p : s.points) {
      std::vector<double> f(p.features.data(),
                            p.features.data() + p.features.size());
      js["points"].push_back(f);
    }
    j["strata"].push_back(std::move(js));
  }
  return j.dump();
}

DeviceDataset DeviceDataset::from_json(const std::string& text,
                                       std::size_t s_max, std::size_t s_min) {
  nlohmann::json j = nlohmann::json::parse(text);
  DeviceDataset ds(j.at("device_id").get<int>(), s_max, s_min);
  for (const auto& js : j.at("strata")) {
    Stratum s;
    s.id = ds.next_id_++;
    s.label = js.at("label").get<int>();
    for (const auto& row : js.at("points")) {
      DataPoint p;
      std::vector<double> f = row.get<std::vector<double>>();
      p.features = Eigen::Map<Eigen::VectorXd>(f.data(),
                                               static_cast<Eigen::Index>(f.size()));
      p.label = s.label;
      s.points.push_back(std::move(p));
    }
    s.recompute_stats();
    ds.strata_.push_back(std::move(s));
  }
  return ds;
}

void apply_dispersion(std::vector<DeviceDataset>& datasets,
                      const Eigen::MatrixXd& rho) {
  const auto n = static_cast<Eigen::Index>(datasets.size());
  if (rho.rows() != n || rho.cols() != n)
    throw InvalidMatrix("dispersion matrix shape mismatch");
  for (Eigen::Index r = 0; r < n; ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      if (rho(r, c) < 0.0) throw InvalidMatrix("negative dispersion entry");
      sum += rho(r, c);
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw InvalidMatrix("dispersion row " + std::to_string(r) +
                          " sums to " + std::to_string(sum));
  }

  // counts fixed before any points move; totals capped at what the sender has
  std::vector<std::vector<std::size_t>> counts(
      datasets.size(), std::vector<std::size_t>(datasets.size(), 0));
  for (Eigen::Index s = 0; s < n; ++s) {
    const double dn = static_cast<double>(datasets[static_cast<std::size_t>(s)].total());
    std::vector<std::pair<double, Eigen::Index>> err;
    std::size_t planned = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      if (r == s) continue;
      double exact = rho(s, r) * dn;
      auto cnt = static_cast<std::size_t>(round_half_even(exact));
      counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(r)] = cnt;
      planned += cnt;
      err.emplace_back(static_cast<double>(cnt) - exact, r);
    }
    // rounding can overshoot the sender's inventory; trim largest overshoots
    std::stable_sort(err.begin(), err.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::size_t avail = datasets[static_cast<std::size_t>(s)].total();
    std::size_t i = 0;
    while (planned > avail && i < err.size()) {
      auto& c = counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(err[i].second)];
      if (c > 0) {
        --c;
        --planned;
      } else {
        ++i;
      }
    }
  }

  // phase 1: extract all transfers, so selections never see foreign points
  std::vector<std::vector<std::vector<DataPoint>>> in_flight(
      datasets.size(), std::vector<std::vector<DataPoint>>(datasets.size()));
  for (std::size_t s = 0; s < datasets.size(); ++s) {
    for (std::size_t r = 0; r < datasets.size(); ++r) {
      for (std::size_t c = 0; c < counts[s][r]; ++c) {
        in_flight[s][r].push_back(datasets[s].take_offload_point());
      }
    }
  }
  // phase 2: receivers ingest in (sender, receiver) order
  for (std::size_t s = 0; s < datasets.size(); ++s)
    for (std::size_t r = 0; r < datasets.size(); ++r)
      for (auto& p : in_flight[s][r]) datasets[r].assign_arrival(std::move(p));
}

}  // namespace psl
