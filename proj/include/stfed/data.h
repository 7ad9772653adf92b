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

// Geo-distributed multivariate time series: synthetic generation, CSV I/O,
// preprocessing, geometry and aligned windowing across parties.

#ifndef STFED_DATA_H_
#define STFED_DATA_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stfed/tensor.h"

namespace stfed {

class DataError : public Error {
 public:
  using Error::Error;
};

enum class PartyRole { kActive, kPassive };

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

// One party's panel. Values are laid out [series][step][feature]; NaN marks a
// missing observation until preprocessing interpolates it.
struct TimeSeriesPanel {
  int party_id = 0;
  PartyRole role = PartyRole::kActive;
  std::vector<std::string> series_ids;
  std::size_t num_series = 0;
  std::size_t num_steps = 0;
  std::size_t num_features = 0;
  double minutes_per_step = 30.0;
  std::int64_t start_minute = 0;
  std::vector<double> values;
  std::vector<Point> coordinates;
  // Prediction targets (active party only).
  std::vector<std::size_t> output_features;

  double at(std::size_t s, std::size_t t, std::size_t f) const {
    return values[(s * num_steps + t) * num_features + f];
  }
  double& at(std::size_t s, std::size_t t, std::size_t f) {
    return values[(s * num_steps + t) * num_features + f];
  }
  std::int64_t TimestampOf(std::size_t step) const;
  // Checks sizes and coordinate uniqueness; throws DataError.
  void Validate() const;
};

inline constexpr double kStdFloor = 1e-8;

// Per-feature z-score parameters fitted on the training split.
struct ScalerState {
  std::vector<double> mean;
  std::vector<double> stddev;

  static ScalerState Fit(const TimeSeriesPanel& panel);
  double Apply(std::size_t feature, double v) const;
  double Invert(std::size_t feature, double v) const;
  void ApplyInPlace(TimeSeriesPanel& panel) const;
  void InvertInPlace(TimeSeriesPanel& panel) const;
};

struct PreprocessedPanel {
  TimeSeriesPanel train;
  TimeSeriesPanel valid;
  TimeSeriesPanel test;
  ScalerState scaler;
};

// Fills missing values by linear interpolation along each series (constant
// extrapolation at the ends). A series with no observation at all for some
// feature is rejected with its id.
void InterpolateMissing(TimeSeriesPanel& panel);

// Contiguous [begin, end) range of steps as its own panel.
TimeSeriesPanel SliceSteps(const TimeSeriesPanel& panel, std::size_t begin,
                           std::size_t end);

// Step counts of a chronological split; the test split takes the remainder.
std::array<std::size_t, 3> SplitSizes(std::size_t num_steps,
                                      std::array<std::size_t, 3> ratio);

// Interpolate, split chronologically by `ratio`, fit the scaler on train and
// apply it to all three splits.
PreprocessedPanel Preprocess(const TimeSeriesPanel& panel,
                             std::array<std::size_t, 3> ratio = {8, 1, 1});

// Euclidean distances, shape (passive count, active count).
Tensor DistanceMatrix(std::span<const Point> active,
                      std::span<const Point> passive);

struct GeoIndex {
  Tensor distances;  // (N^P, N^A)
  std::size_t k = 5;
};

GeoIndex BuildGeoIndex(std::span<const Point> active,
                       std::span<const Point> passive, std::size_t k);

// ---------------------------------------------------------------------------
// Synthetic multi-party data.
//
// A latent field over the unit square is a kernel-weighted mix of AR(1)
// factors anchored at random centres. Passive parties observe the field at
// their own sites. Each active series mixes its own AR(1) process with the
// field at a nearby site, delayed by `lag` steps, so passive history carries
// information about the active future only when coupling > 0.
struct SyntheticOptions {
  std::size_t num_active = 8;
  std::size_t num_passive = 10;
  std::size_t num_steps = 1000;  // active steps
  std::size_t horizon = 3;
  double coupling = 0.8;
  std::size_t num_passive_parties = 1;
  std::size_t num_factors = 4;
  double factor_ar = 0.95;
  double active_ar = 0.9;
  double length_scale = 0.25;
  double coordinate_jitter = 0.1;
  // Delay of the field inside the active signal, in active steps; 0 means
  // "equal to horizon".
  std::size_t lag = 0;
  // Half-widths of the uniform observation noise.
  double active_noise = 0.1;
  double passive_noise = 0.05;
  double level = 5.0;
  double active_minutes = 30.0;
  double passive_minutes = 30.0;
  std::size_t active_features = 2;
  std::size_t passive_features = 2;
  std::size_t output_features = 1;
};

struct SyntheticData {
  TimeSeriesPanel active;
  std::vector<TimeSeriesPanel> passive;
};

SyntheticData GenerateSynthetic(std::uint64_t seed,
                                const SyntheticOptions& options);

std::pair<TimeSeriesPanel, TimeSeriesPanel> GenerateSynthetic(
    std::uint64_t seed, std::size_t num_active, std::size_t num_passive,
    std::size_t num_steps, std::size_t horizon, double coupling);

// ---------------------------------------------------------------------------
// CSV. Series file: series_id,timestamp,feat_1..feat_F (timestamps in
// minutes, empty cell = missing). Locations file: series_id,x,y.
TimeSeriesPanel LoadCsv(const std::filesystem::path& series_file,
                        const std::filesystem::path& locations_file,
                        double minutes_per_step, PartyRole role,
                        int party_id = 0);

void WriteCsv(const TimeSeriesPanel& panel,
              const std::filesystem::path& series_file,
              const std::filesystem::path& locations_file);

// ---------------------------------------------------------------------------
// Windows aligned in wall-clock time across the active panel and every
// passive panel. Window w ends at active step e; its labels are the next
// `horizon` active steps of the output features. Each passive history covers
// the same span, i.e. active_history * active_rate / passive_rate steps.
class AlignedWindows {
 public:
  AlignedWindows(const TimeSeriesPanel& active,
                 std::vector<const TimeSeriesPanel*> passive,
                 std::size_t active_history, std::size_t horizon);

  std::size_t size() const { return ends_.size(); }
  std::size_t active_history() const { return active_history_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t passive_history(std::size_t party) const {
    return passive_history_[party];
  }
  std::size_t num_passive() const { return passive_.size(); }
  const TimeSeriesPanel& active() const { return *active_; }
  const TimeSeriesPanel& passive(std::size_t party) const {
    return *passive_[party];
  }

  // (B, N^A, T_A * F^A); column t * F + f.
  Tensor ActiveInputs(std::span<const std::size_t> windows) const;
  // (B, N^A, horizon * F_out); column h * F_out + j.
  Tensor Labels(std::span<const std::size_t> windows) const;
  // (B, N^P, T_P * F^P).
  Tensor PassiveInputs(std::size_t party,
                       std::span<const std::size_t> windows) const;

 private:
  const TimeSeriesPanel* active_;
  std::vector<const TimeSeriesPanel*> passive_;
  std::size_t active_history_;
  std::size_t horizon_;
  std::vector<std::size_t> passive_history_;
  std::vector<std::size_t> ends_;                      // active end step
  std::vector<std::vector<std::size_t>> passive_ends_;  // per party
};

}  // namespace stfed

#endif  // STFED_DATA_H_
