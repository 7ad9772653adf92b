// Copyright 2026 The stfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stfed/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "stfed/random.h"

namespace stfed {

std::int64_t TimeSeriesPanel::TimestampOf(std::size_t step) const {
  return start_minute +
         static_cast<std::int64_t>(std::llround(minutes_per_step *
                                                static_cast<double>(step)));
}

void TimeSeriesPanel::Validate() const {
  if (num_series == 0 || num_steps == 0 || num_features == 0) {
    throw DataError("panel has an empty dimension");
  }
  if (values.size() != num_series * num_steps * num_features) {
    throw DataError("panel values do not match its dimensions");
  }
  if (coordinates.size() != num_series || series_ids.size() != num_series) {
    throw DataError("panel needs one id and one coordinate per series");
  }
  for (std::size_t i = 0; i < num_series; ++i) {
    for (std::size_t j = i + 1; j < num_series; ++j) {
      if (coordinates[i] == coordinates[j]) {
        throw DataError("duplicate coordinates for series " + series_ids[i] +
                        " and " + series_ids[j]);
      }
    }
  }
  for (std::size_t f : output_features) {
    if (f >= num_features) throw DataError("output feature out of range");
  }
}

// ---------------------------------------------------------------------------
// Scaler.

ScalerState ScalerState::Fit(const TimeSeriesPanel& panel) {
  ScalerState s;
  const std::size_t nf = panel.num_features;
  s.mean.assign(nf, 0.0);
  s.stddev.assign(nf, 0.0);
  const double n = static_cast<double>(panel.num_series * panel.num_steps);
  for (std::size_t i = 0; i < panel.values.size(); ++i) {
    s.mean[i % nf] += panel.values[i];
  }
  for (double& m : s.mean) m /= n;
  for (std::size_t i = 0; i < panel.values.size(); ++i) {
    const double d = panel.values[i] - s.mean[i % nf];
    s.stddev[i % nf] += d * d;
  }
  for (double& sd : s.stddev) sd = std::sqrt(sd / n);
  return s;
}

double ScalerState::Apply(std::size_t f, double v) const {
  return (v - mean[f]) / std::max(stddev[f], kStdFloor);
}

double ScalerState::Invert(std::size_t f, double v) const {
  return v * std::max(stddev[f], kStdFloor) + mean[f];
}

void ScalerState::ApplyInPlace(TimeSeriesPanel& panel) const {
  const std::size_t nf = panel.num_features;
  for (std::size_t i = 0; i < panel.values.size(); ++i) {
    panel.values[i] = Apply(i % nf, panel.values[i]);
  }
}

void ScalerState::InvertInPlace(TimeSeriesPanel& panel) const {
  const std::size_t nf = panel.num_features;
  for (std::size_t i = 0; i < panel.values.size(); ++i) {
    panel.values[i] = Invert(i % nf, panel.values[i]);
  }
}

// ---------------------------------------------------------------------------
// Preprocessing.

void InterpolateMissing(TimeSeriesPanel& panel) {
  for (std::size_t s = 0; s < panel.num_series; ++s) {
    for (std::size_t f = 0; f < panel.num_features; ++f) {
      std::vector<std::size_t> known;
      for (std::size_t t = 0; t < panel.num_steps; ++t) {
        if (std::isfinite(panel.at(s, t, f))) known.push_back(t);
      }
      if (known.empty()) {
        throw DataError("series " + panel.series_ids[s] +
                        " has no observations for feature " +
                        std::to_string(f + 1));
      }
      for (std::size_t t = 0; t < known.front(); ++t) {
        panel.at(s, t, f) = panel.at(s, known.front(), f);
      }
      for (std::size_t t = known.back() + 1; t < panel.num_steps; ++t) {
        panel.at(s, t, f) = panel.at(s, known.back(), f);
      }
      for (std::size_t k = 0; k + 1 < known.size(); ++k) {
        const std::size_t a = known[k], b = known[k + 1];
        const double va = panel.at(s, a, f), vb = panel.at(s, b, f);
        for (std::size_t t = a + 1; t < b; ++t) {
          const double w = static_cast<double>(t - a) / static_cast<double>(b - a);
          panel.at(s, t, f) = va + w * (vb - va);
        }
      }
    }
  }
}

TimeSeriesPanel SliceSteps(const TimeSeriesPanel& panel, std::size_t begin,
                           std::size_t end) {
  if (begin >= end || end > panel.num_steps) {
    throw DataError("invalid step range [" + std::to_string(begin) + ", " +
                    std::to_string(end) + ")");
  }
  TimeSeriesPanel out = panel;
  out.num_steps = end - begin;
  out.start_minute = panel.TimestampOf(begin);
  out.values.assign(out.num_series * out.num_steps * out.num_features, 0.0);
  for (std::size_t s = 0; s < panel.num_series; ++s) {
    for (std::size_t t = begin; t < end; ++t) {
      for (std::size_t f = 0; f < panel.num_features; ++f) {
        out.at(s, t - begin, f) = panel.at(s, t, f);
      }
    }
  }
  return out;
}

std::array<std::size_t, 3> SplitSizes(std::size_t num_steps,
                                      std::array<std::size_t, 3> ratio) {
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  if (total == 0) throw DataError("split ratio sums to zero");
  const std::size_t train = num_steps * ratio[0] / total;
  const std::size_t valid = num_steps * ratio[1] / total;
  return {train, valid, num_steps - train - valid};
}

PreprocessedPanel Preprocess(const TimeSeriesPanel& panel,
                             std::array<std::size_t, 3> ratio) {
  TimeSeriesPanel filled = panel;
  InterpolateMissing(filled);
  const auto sizes = SplitSizes(filled.num_steps, ratio);
  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
    throw DataError("panel with " + std::to_string(filled.num_steps) +
                    " steps is too short to split");
  }
  PreprocessedPanel out;
  out.train = SliceSteps(filled, 0, sizes[0]);
  out.valid = SliceSteps(filled, sizes[0], sizes[0] + sizes[1]);
  out.test = SliceSteps(filled, sizes[0] + sizes[1], filled.num_steps);
  out.scaler = ScalerState::Fit(out.train);
  out.scaler.ApplyInPlace(out.train);
  out.scaler.ApplyInPlace(out.valid);
  out.scaler.ApplyInPlace(out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Geometry.

Tensor DistanceMatrix(std::span<const Point> active,
                      std::span<const Point> passive) {
  if (active.empty() || passive.empty()) {
    throw DataError("distance matrix needs at least one point per side");
  }
  Tensor d({passive.size(), active.size()});
  for (std::size_t i = 0; i < passive.size(); ++i) {
    for (std::size_t j = 0; j < active.size(); ++j) {
      d.at(i, j) = std::hypot(passive[i].x - active[j].x,
                              passive[i].y - active[j].y);
    }
  }
  return d;
}

GeoIndex BuildGeoIndex(std::span<const Point> active,
                       std::span<const Point> passive, std::size_t k) {
  return GeoIndex{DistanceMatrix(active, passive), k};
}

// ---------------------------------------------------------------------------
// Synthetic data.

namespace {

std::size_t IntegerRatio(double num, double den, const char* what) {
  const double r = num / den;
  const double rounded = std::round(r);
  if (rounded < 1.0 || std::abs(r - rounded) > 1e-9) {
    throw DataError(std::string(what) + " must be an integer multiple");
  }
  return static_cast<std::size_t>(rounded);
}

std::vector<double> Ar1(std::mt19937_64& rng, std::size_t n, double phi) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  double x = normal(rng);
  const double innovation = std::sqrt(1.0 - phi * phi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x;
    x = phi * x + innovation * normal(rng);
  }
  return out;
}

}  // namespace

SyntheticData GenerateSynthetic(std::uint64_t seed,
                                const SyntheticOptions& o) {
  if (o.num_active < 2 || o.num_passive < 2 || o.num_steps < 2 ||
      o.horizon < 1 || o.num_passive_parties < 1 || o.num_factors < 1) {
    throw DataError("synthetic generator needs at least 2 series per party, "
                    "2 steps and a positive horizon");
  }
  if (o.num_steps < o.horizon) {
    throw DataError("synthetic generator needs num_steps >= horizon");
  }
  if (!(o.coupling >= 0.0 && o.coupling <= 1.0)) {
    throw DataError("coupling must lie in [0, 1]");
  }
  if (o.active_features < 2 || o.passive_features < 2 ||
      o.output_features < 1 || o.output_features > o.active_features) {
    throw DataError("synthetic generator needs >= 2 features per party and "
                    "1 <= output features <= active features");
  }
  if (o.coordinate_jitter == 0.0 && o.num_active > o.num_passive) {
    throw DataError("zero coordinate jitter requires num_active <= "
                    "num_passive");
  }
  const double base = std::min(o.active_minutes, o.passive_minutes);
  const std::size_t active_stride =
      IntegerRatio(o.active_minutes, base, "active sampling rate");
  const std::size_t passive_stride =
      IntegerRatio(o.passive_minutes, base, "passive sampling rate");
  const std::size_t base_steps = o.num_steps * active_stride;
  if (base_steps % passive_stride != 0) {
    throw DataError("passive sampling rate does not tile the active span");
  }
  const std::size_t passive_steps = base_steps / passive_stride;
  const std::size_t lag = o.lag == 0 ? o.horizon : o.lag;
  // Field history needed before step 0: the active lag plus the passive
  // lagged feature.
  const std::size_t pad = lag * active_stride + passive_stride + 1;

  const SeedStreams streams(seed);
  auto site_rng = streams.Stream("synthetic/sites");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);

  std::vector<Point> centres(o.num_factors);
  for (Point& c : centres) c = {unit(site_rng), unit(site_rng)};

  std::vector<std::vector<Point>> passive_sites(o.num_passive_parties);
  for (std::size_t j = 0; j < o.num_passive_parties; ++j) {
    auto rng = streams.Stream("synthetic/passive-sites", j);
    passive_sites[j].resize(o.num_passive);
    for (Point& p : passive_sites[j]) p = {unit(rng), unit(rng)};
  }
  std::vector<Point> active_sites(o.num_active);
  {
    auto rng = streams.Stream("synthetic/active-sites");
    for (std::size_t i = 0; i < o.num_active; ++i) {
      const Point& anchor = passive_sites[0][i % o.num_passive];
      active_sites[i] = {anchor.x + o.coordinate_jitter * sym(rng),
                         anchor.y + o.coordinate_jitter * sym(rng)};
    }
  }

  auto factor_rng = streams.Stream("synthetic/factors");
  std::vector<std::vector<double>> factors(o.num_factors);
  for (auto& f : factors) f = Ar1(factor_rng, base_steps + pad, o.factor_ar);

  auto weights_at = [&](const Point& p) {
    std::vector<double> w(o.num_factors);
    double total = 0.0;
    for (std::size_t k = 0; k < o.num_factors; ++k) {
      const double dx = p.x - centres[k].x, dy = p.y - centres[k].y;
      w[k] = std::exp(-(dx * dx + dy * dy) /
                      (2.0 * o.length_scale * o.length_scale));
      total += w[k];
    }
    for (double& v : w) v /= total;
    return w;
  };
  // Field at site weights `w`, base step `g` (may be negative down to -pad).
  auto field = [&](const std::vector<double>& w, std::ptrdiff_t g) {
    double v = 0.0;
    const std::size_t idx = static_cast<std::size_t>(
        g + static_cast<std::ptrdiff_t>(pad));
    for (std::size_t k = 0; k < o.num_factors; ++k) v += w[k] * factors[k][idx];
    return v;
  };

  SyntheticData data;

  // Active panel.
  TimeSeriesPanel& active = data.active;
  active.party_id = 0;
  active.role = PartyRole::kActive;
  active.num_series = o.num_active;
  active.num_steps = o.num_steps;
  active.num_features = o.active_features;
  active.minutes_per_step = o.active_minutes;
  active.coordinates = active_sites;
  active.values.assign(o.num_active * o.num_steps * o.active_features, 0.0);
  for (std::size_t f = 0; f < o.output_features; ++f) {
    active.output_features.push_back(f);
  }
  {
    auto own_rng = streams.Stream("synthetic/active-own");
    auto noise_rng = streams.Stream("synthetic/active-noise");
    for (std::size_t s = 0; s < o.num_active; ++s) {
      char id[32];
      std::snprintf(id, sizeof(id), "A%03zu", s);
      active.series_ids.emplace_back(id);
      const auto own = Ar1(own_rng, o.num_steps, o.active_ar);
      const auto w = weights_at(active_sites[s]);
      for (std::size_t t = 0; t < o.num_steps; ++t) {
        const std::ptrdiff_t g =
            static_cast<std::ptrdiff_t>(t * active_stride) -
            static_cast<std::ptrdiff_t>(lag * active_stride);
        const double signal = (1.0 - o.coupling) * own[t] +
                              o.coupling * field(w, g);
        active.at(s, t, 0) =
            o.level + signal + o.active_noise * sym(noise_rng);
        const double minute = o.active_minutes * static_cast<double>(t);
        active.at(s, t, 1) = std::sin(2.0 * std::numbers::pi * minute / 1440.0);
        for (std::size_t f = 2; f < o.active_features; ++f) {
          active.at(s, t, f) =
              0.5 * own[t] + o.active_noise * sym(noise_rng);
        }
      }
    }
  }

  // Passive panels.
  for (std::size_t j = 0; j < o.num_passive_parties; ++j) {
    TimeSeriesPanel p;
    p.party_id = static_cast<int>(j) + 1;
    p.role = PartyRole::kPassive;
    p.num_series = o.num_passive;
    p.num_steps = passive_steps;
    p.num_features = o.passive_features;
    p.minutes_per_step = o.passive_minutes;
    p.coordinates = passive_sites[j];
    p.values.assign(o.num_passive * passive_steps * o.passive_features, 0.0);
    auto noise_rng = streams.Stream("synthetic/passive-noise", j);
    for (std::size_t s = 0; s < o.num_passive; ++s) {
      char id[32];
      std::snprintf(id, sizeof(id), "P%zu_%03zu", j + 1, s);
      p.series_ids.emplace_back(id);
      const auto w = weights_at(passive_sites[j][s]);
      for (std::size_t t = 0; t < passive_steps; ++t) {
        const auto g = static_cast<std::ptrdiff_t>(t * passive_stride);
        p.at(s, t, 0) = field(w, g) + o.passive_noise * sym(noise_rng);
        p.at(s, t, 1) =
            field(w, g - static_cast<std::ptrdiff_t>(passive_stride)) +
            o.passive_noise * sym(noise_rng);
        for (std::size_t f = 2; f < o.passive_features; ++f) {
          p.at(s, t, f) = o.passive_noise * sym(noise_rng);
        }
      }
    }
    data.passive.push_back(std::move(p));
  }
  data.active.Validate();
  for (const auto& p : data.passive) p.Validate();
  return data;
}

std::pair<TimeSeriesPanel, TimeSeriesPanel> GenerateSynthetic(
    std::uint64_t seed, std::size_t num_active, std::size_t num_passive,
    std::size_t num_steps, std::size_t horizon, double coupling) {
  SyntheticOptions o;
  o.num_active = num_active;
  o.num_passive = num_passive;
  o.num_steps = num_steps;
  o.horizon = horizon;
  o.coupling = coupling;
  SyntheticData d = GenerateSynthetic(seed, o);
  return {std::move(d.active), std::move(d.passive.front())};
}

// ---------------------------------------------------------------------------
// CSV.

namespace {

std::vector<std::string> SplitLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& c : out) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
    while (!c.empty() && c.front() == ' ') c.erase(c.begin());
  }
  return out;
}

double ParseDouble(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError("cannot parse number '" + cell + "' at " + where);
  }
  return v;
}

std::int64_t ParseInt(const std::string& cell, const std::string& where) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw DataError("cannot parse timestamp '" + cell + "' at " + where);
  }
  return v;
}

std::string FormatDouble(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::ifstream OpenForRead(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

TimeSeriesPanel LoadCsv(const std::filesystem::path& series_file,
                        const std::filesystem::path& locations_file,
                        double minutes_per_step, PartyRole role,
                        int party_id) {
  if (!(minutes_per_step > 0.0)) {
    throw DataError("sampling rate must be positive");
  }
  struct Rows {
    std::vector<std::int64_t> timestamps;
    std::vector<std::vector<double>> features;
  };
  std::map<std::string, Rows> by_series;
  std::size_t num_features = 0;
  {
    auto in = OpenForRead(series_file);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty series file");
    const auto header = SplitLine(line);
    if (header.size() < 3 || header[0] != "series_id" ||
        header[1] != "timestamp") {
      throw DataError("series file header must be "
                      "series_id,timestamp,feat_1[,...]");
    }
    num_features = header.size() - 2;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = SplitLine(line);
      const std::string where =
          series_file.filename().string() + ":" + std::to_string(line_no);
      if (cells.size() != header.size()) {
        throw DataError("ragged feature count at " + where + ": expected " +
                        std::to_string(num_features) + " features, got " +
                        std::to_string(cells.size() < 2 ? 0 : cells.size() - 2));
      }
      Rows& rows = by_series[cells[0]];
      const std::int64_t ts = ParseInt(cells[1], where);
      if (!rows.timestamps.empty()) {
        const std::int64_t prev = rows.timestamps.back();
        if (ts <= prev) {
          throw DataError("non-monotone timestamps for series " + cells[0] +
                          " at timestamp " + std::to_string(ts));
        }
        if (static_cast<double>(ts - prev) != minutes_per_step) {
          throw DataError("gap in timestamps for series " + cells[0] +
                          ": first offending timestamp " + std::to_string(ts));
        }
      }
      rows.timestamps.push_back(ts);
      std::vector<double> feats(num_features);
      for (std::size_t f = 0; f < num_features; ++f) {
        feats[f] = ParseDouble(cells[f + 2], where);
      }
      rows.features.push_back(std::move(feats));
    }
  }
  if (by_series.empty()) throw DataError("series file has no rows");

  std::map<std::string, Point> locations;
  {
    auto in = OpenForRead(locations_file);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty locations file");
    const auto header = SplitLine(line);
    if (header.size() != 3 || header[0] != "series_id" || header[1] != "x" ||
        header[2] != "y") {
      throw DataError("locations file header must be series_id,x,y");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto cells = SplitLine(line);
      const std::string where =
          locations_file.filename().string() + ":" + std::to_string(line_no);
      if (cells.size() != 3) throw DataError("malformed location row at " + where);
      if (!by_series.contains(cells[0])) {
        throw DataError("unknown series_id " + cells[0] +
                        " in locations file");
      }
      const Point p{ParseDouble(cells[1], where), ParseDouble(cells[2], where)};
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw DataError("non-finite coordinates for series " + cells[0]);
      }
      locations[cells[0]] = p;
    }
  }

  TimeSeriesPanel panel;
  panel.party_id = party_id;
  panel.role = role;
  panel.num_features = num_features;
  panel.minutes_per_step = minutes_per_step;
  const Rows& first = by_series.begin()->second;
  panel.num_steps = first.timestamps.size();
  panel.start_minute = first.timestamps.front();
  for (const auto& [id, rows] : by_series) {
    if (!locations.contains(id)) {
      throw DataError("missing location for series_id " + id);
    }
    if (rows.timestamps.front() != panel.start_minute ||
        rows.timestamps.size() != panel.num_steps) {
      throw DataError("series " + id +
                      " does not cover the same timestamps as " +
                      by_series.begin()->first);
    }
    panel.series_ids.push_back(id);
    panel.coordinates.push_back(locations[id]);
  }
  panel.num_series = panel.series_ids.size();
  panel.values.resize(panel.num_series * panel.num_steps * num_features);
  std::size_t s = 0;
  for (const auto& [id, rows] : by_series) {
    for (std::size_t t = 0; t < panel.num_steps; ++t) {
      for (std::size_t f = 0; f < num_features; ++f) {
        panel.at(s, t, f) = rows.features[t][f];
      }
    }
    ++s;
  }
  if (role == PartyRole::kActive) panel.output_features = {0};
  panel.Validate();
  return panel;
}

void WriteCsv(const TimeSeriesPanel& panel,
              const std::filesystem::path& series_file,
              const std::filesystem::path& locations_file) {
  std::ofstream series(series_file, std::ios::binary);
  std::ofstream locations(locations_file, std::ios::binary);
  if (!series || !locations) {
    throw DataError("cannot write CSV files under " +
                    series_file.parent_path().string());
  }
  series << "series_id,timestamp";
  for (std::size_t f = 0; f < panel.num_features; ++f) {
    series << ",feat_" << (f + 1);
  }
  series << '\n';
  for (std::size_t s = 0; s < panel.num_series; ++s) {
    for (std::size_t t = 0; t < panel.num_steps; ++t) {
      series << panel.series_ids[s] << ',' << panel.TimestampOf(t);
      for (std::size_t f = 0; f < panel.num_features; ++f) {
        series << ',' << FormatDouble(panel.at(s, t, f));
      }
      series << '\n';
    }
  }
  locations << "series_id,x,y\n";
  for (std::size_t s = 0; s < panel.num_series; ++s) {
    locations << panel.series_ids[s] << ','
              << FormatDouble(panel.coordinates[s].x) << ','
              << FormatDouble(panel.coordinates[s].y) << '\n';
  }
  if (!series || !locations) throw DataError("failed writing CSV files");
}

// ---------------------------------------------------------------------------
// Aligned windows.

AlignedWindows::AlignedWindows(const TimeSeriesPanel& active,
                               std::vector<const TimeSeriesPanel*> passive,
                               std::size_t active_history,
                               std::size_t horizon)
    : active_(&active),
      passive_(std::move(passive)),
      active_history_(active_history),
      horizon_(horizon) {
  if (active_history == 0 || horizon == 0) {
    throw DataError("window history and horizon must be positive");
  }
  if (active.output_features.empty()) {
    throw DataError("active panel declares no output features");
  }
  const double span = static_cast<double>(active_history) *
                      active.minutes_per_step;
  for (const TimeSeriesPanel* p : passive_) {
    const double steps = span / p->minutes_per_step;
    if (std::abs(steps - std::round(steps)) > 1e-9 || std::round(steps) < 1) {
      throw DataError("passive sampling rate does not tile the active "
                      "history span");
    }
    passive_history_.push_back(static_cast<std::size_t>(std::round(steps)));
  }
  passive_ends_.resize(passive_.size());
  for (std::size_t e = active_history - 1; e + horizon < active.num_steps;
       ++e) {
    const double boundary = static_cast<double>(active.TimestampOf(e)) +
                            active.minutes_per_step;
    bool ok = true;
    std::vector<std::size_t> ends(passive_.size());
    for (std::size_t j = 0; j < passive_.size() && ok; ++j) {
      const TimeSeriesPanel& p = *passive_[j];
      const double completed =
          std::floor((boundary - static_cast<double>(p.start_minute)) /
                         p.minutes_per_step +
                     1e-9);
      if (completed < static_cast<double>(passive_history_[j]) ||
          completed > static_cast<double>(p.num_steps)) {
        ok = false;
        break;
      }
      ends[j] = static_cast<std::size_t>(completed) - 1;
    }
    if (!ok) continue;
    ends_.push_back(e);
    for (std::size_t j = 0; j < passive_.size(); ++j) {
      passive_ends_[j].push_back(ends[j]);
    }
  }
}

Tensor AlignedWindows::ActiveInputs(
    std::span<const std::size_t> windows) const {
  const TimeSeriesPanel& a = *active_;
  const std::size_t cols = active_history_ * a.num_features;
  Tensor out({windows.size(), a.num_series, cols});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t start = ends_.at(windows[b]) + 1 - active_history_;
    for (std::size_t s = 0; s < a.num_series; ++s) {
      for (std::size_t t = 0; t < active_history_; ++t) {
        for (std::size_t f = 0; f < a.num_features; ++f) {
          out.at(b, s, t * a.num_features + f) = a.at(s, start + t, f);
        }
      }
    }
  }
  return out;
}

Tensor AlignedWindows::Labels(std::span<const std::size_t> windows) const {
  const TimeSeriesPanel& a = *active_;
  const std::size_t nout = a.output_features.size();
  Tensor out({windows.size(), a.num_series, horizon_ * nout});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t end = ends_.at(windows[b]);
    for (std::size_t s = 0; s < a.num_series; ++s) {
      for (std::size_t h = 0; h < horizon_; ++h) {
        for (std::size_t j = 0; j < nout; ++j) {
          out.at(b, s, h * nout + j) =
              a.at(s, end + 1 + h, a.output_features[j]);
        }
      }
    }
  }
  return out;
}

Tensor AlignedWindows::PassiveInputs(
    std::size_t party, std::span<const std::size_t> windows) const {
  const TimeSeriesPanel& p = *passive_.at(party);
  const std::size_t hist = passive_history_[party];
  const std::size_t cols = hist * p.num_features;
  Tensor out({windows.size(), p.num_series, cols});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t start = passive_ends_[party].at(windows[b]) + 1 - hist;
    for (std::size_t s = 0; s < p.num_series; ++s) {
      for (std::size_t t = 0; t < hist; ++t) {
        for (std::size_t f = 0; f < p.num_features; ++f) {
          out.at(b, s, t * p.num_features + f) = p.at(s, start + t, f);
        }
      }
    }
  }
  return out;
}

}  // namespace stfed
