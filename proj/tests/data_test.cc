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

#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "stfed/data.h"
#include "support/temp_dir.h"

namespace stfed {
namespace {

using testing::TempDir;

double Pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Correlation between the active target `lag` steps ahead and the passive
// reading at the anchor site now, over 2000 samples spaced far enough apart
// to be nearly independent.
double CrossPanelCorrelation(double coupling, std::uint64_t seed) {
  SyntheticOptions o;
  o.num_active = 2;
  o.num_passive = 2;
  o.num_steps = 2000 * 150 + 10;
  o.coupling = coupling;
  o.coordinate_jitter = 0.0;
  const SyntheticData d = GenerateSynthetic(seed, o);
  const std::size_t lag = o.horizon;
  std::vector<double> future, now;
  for (std::size_t k = 0; k < 2000; ++k) {
    const std::size_t t = k * 150;
    future.push_back(d.active.at(0, t + lag, 0));
    now.push_back(d.passive[0].at(0, t, 0));
  }
  return Pearson(future, now);
}

// A single 2000-sample estimate has standard error about 0.022 under
// independence, so one draw lands outside 0.05 a few percent of the time.
// Averaging five independent datasets keeps the oracle meaningful without
// depending on a lucky seed.
TEST(Synthetic, UncoupledPanelsAreUncorrelated) {
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double r = CrossPanelCorrelation(0.0, seed);
    EXPECT_LT(std::abs(r), 0.1) << "seed " << seed;
    total += r;
  }
  EXPECT_LT(std::abs(total / 5.0), 0.05);
}

TEST(Synthetic, CoupledPanelsAreCorrelated) {
  // Power check for the oracle above.
  EXPECT_GT(CrossPanelCorrelation(0.8, 1), 0.5);
}

TEST(Synthetic, FullCouplingReproducesThePassiveFactor) {
  SyntheticOptions o;
  o.num_active = 4;
  o.num_passive = 5;
  o.num_steps = 300;
  o.coupling = 1.0;
  o.coordinate_jitter = 0.0;
  const SyntheticData d = GenerateSynthetic(5, o);
  const double bound = o.active_noise + o.passive_noise + 1e-12;
  for (std::size_t s = 0; s < o.num_active; ++s) {
    EXPECT_EQ(d.active.coordinates[s], d.passive[0].coordinates[s]);
    for (std::size_t t = o.horizon; t < o.num_steps; ++t) {
      const double residual = d.active.at(s, t, 0) - o.level -
                              d.passive[0].at(s, t - o.horizon, 0);
      ASSERT_LE(std::abs(residual), bound) << "series " << s << " step " << t;
    }
  }
}

TEST(Synthetic, FixedSeedIsDeterministic) {
  SyntheticOptions o;
  o.num_steps = 200;
  o.num_passive_parties = 2;
  const SyntheticData a = GenerateSynthetic(7, o);
  const SyntheticData b = GenerateSynthetic(7, o);
  EXPECT_EQ(a.active.values, b.active.values);
  ASSERT_EQ(a.passive.size(), 2u);
  EXPECT_EQ(a.passive[1].values, b.passive[1].values);
  EXPECT_EQ(a.passive[1].coordinates, b.passive[1].coordinates);
  const SyntheticData c = GenerateSynthetic(8, o);
  EXPECT_NE(a.active.values, c.active.values);
}

TEST(Synthetic, MixedSamplingRates) {
  SyntheticOptions o;
  o.num_steps = 100;
  o.active_minutes = 30;
  o.passive_minutes = 10;
  const SyntheticData d = GenerateSynthetic(1, o);
  EXPECT_EQ(d.passive[0].num_steps, 300u);
  EXPECT_DOUBLE_EQ(d.passive[0].minutes_per_step, 10.0);
  o.passive_minutes = 20;
  EXPECT_THROW(GenerateSynthetic(1, o), DataError);
}

TimeSeriesPanel SingleSeries(std::vector<double> values) {
  TimeSeriesPanel p;
  p.series_ids = {"s"};
  p.num_series = 1;
  p.num_steps = values.size();
  p.num_features = 1;
  p.values = std::move(values);
  p.coordinates = {{0, 0}};
  p.output_features = {0};
  return p;
}

TEST(Preprocess, InterpolatesInteriorGaps) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TimeSeriesPanel p = SingleSeries({1.0, nan, 3.0});
  InterpolateMissing(p);
  EXPECT_EQ(p.values, (std::vector<double>{1.0, 2.0, 3.0}));
  TimeSeriesPanel q = SingleSeries({nan, 4.0, nan, nan, 7.0, nan});
  InterpolateMissing(q);
  EXPECT_EQ(q.values, (std::vector<double>{4.0, 4.0, 5.0, 6.0, 7.0, 7.0}));
}

TEST(Preprocess, AllMissingSeriesIsRejectedById) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TimeSeriesPanel p = SingleSeries({nan, nan});
  try {
    InterpolateMissing(p);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("s"), std::string::npos);
  }
}

TEST(Preprocess, ConstantSeriesNormalizesToZero) {
  const PreprocessedPanel p =
      Preprocess(SingleSeries(std::vector<double>(20, 3.5)));
  EXPECT_EQ(p.scaler.stddev[0], 0.0);  // the floor applies at use
  for (double v : p.train.values) EXPECT_EQ(v, 0.0);
  for (double v : p.test.values) EXPECT_EQ(v, 0.0);
}

TEST(Preprocess, ScalerRoundTrips) {
  std::vector<double> v(50);
  std::iota(v.begin(), v.end(), 1.0);
  const PreprocessedPanel p = Preprocess(SingleSeries(v));
  EXPECT_NEAR(p.scaler.mean[0], 20.5, 1e-12);  // train = first 40 steps
  EXPECT_NEAR(p.scaler.Invert(0, p.test.values[0]), 46.0, 1e-12);
}

TEST(Preprocess, SplitArithmetic) {
  EXPECT_EQ(SplitSizes(1000, {8, 1, 1}),
            (std::array<std::size_t, 3>{800, 100, 100}));
  EXPECT_EQ(SplitSizes(1003, {8, 1, 1}),
            (std::array<std::size_t, 3>{802, 100, 101}));
}

TEST(Geometry, DistanceMatrix) {
  const std::vector<Point> active = {{3, 4}};
  const std::vector<Point> passive = {{0, 0}};
  EXPECT_EQ(DistanceMatrix(active, passive), Tensor::FromRows({{5}}));
  EXPECT_EQ(DistanceMatrix(active, active), Tensor::FromRows({{0}}));
  const std::vector<Point> a2 = {{0, 0}, {1, 0}};
  const std::vector<Point> p3 = {{0, 0}, {0, 1}, {2, 2}};
  const Tensor d = DistanceMatrix(a2, p3);
  EXPECT_EQ(d.shape(), (Shape{3, 2}));
  // Symmetric under role swap.
  const Tensor swapped = DistanceMatrix(p3, a2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_DOUBLE_EQ(d.at(i, j), swapped.at(j, i));
    }
  }
}

TEST(Csv, LoadsPanelShape) {
  TempDir dir;
  const auto series = dir.Write("s.csv",
                                "series_id,timestamp,feat_1,feat_2\n"
                                "b,0,1,2\nb,30,3,4\nb,60,5,6\nb,90,7,8\n"
                                "a,0,1,1\na,30,,2\na,60,3,3\na,90,4,4\n");
  const auto loc = dir.Write("l.csv", "series_id,x,y\na,0,0\nb,1,2\n");
  const TimeSeriesPanel p =
      LoadCsv(series, loc, 30.0, PartyRole::kActive);
  EXPECT_EQ(p.num_series, 2u);
  EXPECT_EQ(p.num_steps, 4u);
  EXPECT_EQ(p.num_features, 2u);
  EXPECT_EQ(p.series_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(std::isnan(p.at(0, 1, 0)));
  EXPECT_EQ(p.at(1, 3, 1), 8.0);
  EXPECT_EQ(p.coordinates[1], (Point{1, 2}));
}

TEST(Csv, MissingLocationNamesSeries) {
  TempDir dir;
  const auto series = dir.Write(
      "s.csv", "series_id,timestamp,feat_1\nx7,0,1\nx7,30,2\nq,0,1\nq,30,2\n");
  const auto loc = dir.Write("l.csv", "series_id,x,y\nq,0,0\n");
  try {
    LoadCsv(series, loc, 30.0, PartyRole::kPassive, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("x7"), std::string::npos) << e.what();
  }
}

TEST(Csv, GapNamesFirstOffendingTimestamp) {
  TempDir dir;
  const auto series = dir.Write(
      "s.csv", "series_id,timestamp,feat_1\na,0,1\na,30,2\na,90,3\na,150,4\n");
  const auto loc = dir.Write("l.csv", "series_id,x,y\na,0,0\n");
  try {
    LoadCsv(series, loc, 30.0, PartyRole::kActive);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("90"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("150"), std::string::npos) << msg;
  }
}

TEST(Csv, RaggedRowIsRejected) {
  TempDir dir;
  const auto series =
      dir.Write("s.csv", "series_id,timestamp,feat_1,feat_2\na,0,1,2\na,30,2\n");
  const auto loc = dir.Write("l.csv", "series_id,x,y\na,0,0\n");
  EXPECT_THROW(LoadCsv(series, loc, 30.0, PartyRole::kActive), DataError);
}

TEST(Csv, WriteThenLoadRoundTrips) {
  TempDir dir;
  SyntheticOptions o;
  o.num_steps = 40;
  const SyntheticData d = GenerateSynthetic(3, o);
  WriteCsv(d.passive[0], dir / "p.csv", dir / "pl.csv");
  const TimeSeriesPanel back = LoadCsv(dir / "p.csv", dir / "pl.csv", 30.0,
                                       PartyRole::kPassive, 1);
  EXPECT_EQ(back.values, d.passive[0].values);
  EXPECT_EQ(back.coordinates, d.passive[0].coordinates);
  EXPECT_EQ(back.series_ids, d.passive[0].series_ids);
}

TEST(Windows, AlignInWallClockTime) {
  SyntheticOptions o;
  o.num_steps = 60;
  o.active_minutes = 30;
  o.passive_minutes = 10;
  const SyntheticData d = GenerateSynthetic(2, o);
  const AlignedWindows w(d.active, {&d.passive[0]}, 4, 3);
  EXPECT_EQ(w.passive_history(0), 12u);
  ASSERT_GT(w.size(), 0u);
  const std::vector<std::size_t> first = {0};
  const Tensor a = w.ActiveInputs(first);
  const Tensor p = w.PassiveInputs(0, first);
  const Tensor y = w.Labels(first);
  EXPECT_EQ(a.shape(), (Shape{1, o.num_active, 4 * 2}));
  EXPECT_EQ(p.shape(), (Shape{1, o.num_passive, 12 * 2}));
  EXPECT_EQ(y.shape(), (Shape{1, o.num_active, 3}));
  // First window ends at active step 3 (minute 90..120); the passive window
  // holds steps 0..11 (minutes 0..110).
  EXPECT_EQ(a.at(0, 0, 0), d.active.at(0, 0, 0));
  EXPECT_EQ(p.at(0, 0, 11 * 2), d.passive[0].at(0, 11, 0));
  EXPECT_EQ(y.at(0, 0, 0), d.active.at(0, 4, 0));
  EXPECT_EQ(w.size(), 60u - 4 - 3 + 1);
}

}  // namespace
}  // namespace stfed
