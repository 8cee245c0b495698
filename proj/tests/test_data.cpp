#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "imuspec/data.hpp"

using namespace imuspec;

namespace {

TriaxialSeries uniform_series(std::size_t n, double rate, double (*fx)(double)) {
  TriaxialSeries s;
  s.rate_hz = rate;
  s.subject_id = "a";
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / rate;
    s.t.push_back(t);
    s.x.push_back(fx(t));
    s.y.push_back(2.0);
    s.z.push_back(-1.0);
  }
  return s;
}

std::set<std::string> subject_set(int n) {
  std::set<std::string> s;
  for (int i = 0; i < n; ++i) s.insert("subj" + std::to_string(i));
  return s;
}

}  // namespace

TEST(Csv, SixRowsOneSubjectAt50Hz) {
  std::istringstream in(
      "subject,label,t,x,y,z\n"
      "a,0,0.00,1,2,3\na,0,0.02,1,2,3\na,0,0.04,1,2,3\n"
      "a,1,0.06,1,2,3\na,1,0.08,1,2,3\na,1,0.10,1,2,3\n");
  const auto r = parse_csv(in);
  ASSERT_EQ(r.series.size(), 1u);
  EXPECT_EQ(r.series[0].size(), 6u);
  EXPECT_NEAR(r.series[0].rate_hz, 50.0, 0.5);
  EXPECT_EQ(r.rejected_rows, 0u);
  EXPECT_NO_THROW(r.series[0].validate());
}

TEST(Csv, EmptyInputHasNoDataRows) {
  std::istringstream empty("");
  try {
    parse_csv(empty);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
  }
  std::istringstream header_only("subject,label,t,x,y,z\n");
  EXPECT_THROW(parse_csv(header_only), DataError);
}

TEST(Csv, InterleavedSubjectsKeepRowCounts) {
  std::ostringstream csv;
  csv << "subject,label,t,x,y,z\n";
  int a = 0, b = 0;
  for (int i = 0; i < 37; ++i) {
    if (i % 3 == 0) {
      csv << "b,1," << b * 0.02 << ",0,0,0\n";
      ++b;
    } else {
      csv << "a,0," << a * 0.02 << ",0,0,0\n";
      ++a;
    }
  }
  // independent count: lines per subject prefix
  std::istringstream lines(csv.str());
  std::string line;
  std::map<char, std::size_t> expected;
  std::getline(lines, line);
  while (std::getline(lines, line)) ++expected[line[0]];

  std::istringstream in(csv.str());
  const auto r = parse_csv(in);
  ASSERT_EQ(r.series.size(), 2u);
  // order of first appearance: the first data row belongs to b
  EXPECT_EQ(r.series[0].subject_id, "b");
  EXPECT_EQ(r.series[0].size(), expected['b']);
  EXPECT_EQ(r.series[1].subject_id, "a");
  EXPECT_EQ(r.series[1].size(), expected['a']);
}

TEST(Csv, MissingColumnIsSchemaError) {
  std::istringstream in("subject,t,x,y\na,0,1,2\n");
  EXPECT_THROW(parse_csv(in), ConfigError);
}

TEST(Csv, CustomColumnMapping) {
  std::istringstream in("who,time,ax,ay,az\np,0,1,2,3\np,0.1,1,2,3\np,0.2,1,2,3\n");
  CsvSchema schema;
  schema.subject = "who";
  schema.t = "time";
  schema.x = "ax";
  schema.y = "ay";
  schema.z = "az";
  const auto r = parse_csv(in, schema);
  ASSERT_EQ(r.series.size(), 1u);
  EXPECT_NEAR(r.series[0].rate_hz, 10.0, 1e-9);
  EXPECT_TRUE(r.series[0].label.empty());
}

TEST(Csv, NonMonotoneTimeNamesRow) {
  std::istringstream in("subject,label,t,x,y,z\na,0,0.00,1,2,3\na,0,0.02,1,2,3\na,0,0.01,1,2,3\n");
  try {
    parse_csv(in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 4"), std::string::npos) << e.what();
  }
}

TEST(Csv, NonFiniteRowsRejectedAndCounted) {
  std::istringstream in("subject,label,t,x,y,z\na,0,0.00,1,2,3\na,0,0.02,nan,2,3\na,0,0.04,1,inf,3\na,0,0.06,1,2,3\n");
  const auto r = parse_csv(in);
  EXPECT_EQ(r.rejected_rows, 2u);
  ASSERT_EQ(r.series.size(), 1u);
  EXPECT_EQ(r.series[0].size(), 2u);
}

TEST(Csv, TimeGapStartsNewRecording) {
  std::istringstream in("subject,label,t,x,y,z\na,0,0.0,1,2,3\na,0,0.1,1,2,3\na,0,5.0,1,2,3\na,0,5.1,1,2,3\n");
  const auto r = parse_csv(in);
  ASSERT_EQ(r.series.size(), 2u);
  EXPECT_EQ(r.series[0].t.front(), 0.0);
  EXPECT_EQ(r.series[1].t.front(), 5.0);
}

TEST(Csv, IngestFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "imuspec_ingest.csv";
  {
    std::ofstream f(path);
    f << "subject,label,t,x,y,z\na,0,0.00,1,2,3\na,0,0.02,1,2,3\n";
  }
  EXPECT_EQ(ingest_csv(path.string()).series.size(), 1u);
  std::filesystem::remove(path);
  EXPECT_THROW(ingest_csv(path.string()), DataError);
}

TEST(Series, ValidateRejectsInconsistentRate) {
  auto s = uniform_series(10, 50.0, [](double t) { return t; });
  EXPECT_NO_THROW(s.validate());
  s.rate_hz = 51.0;
  EXPECT_THROW(s.validate(), DataError);
  s.rate_hz = 50.0;
  s.t[3] = s.t[2];
  EXPECT_THROW(s.validate(), DataError);
}

TEST(Resample, SameRateIsBitIdentical) {
  const auto s = uniform_series(200, 50.0, [](double t) { return std::sin(7.3 * t) + 0.1; });
  const auto r = resample(s, 50.0);
  EXPECT_EQ(r.x, s.x);
  EXPECT_EQ(r.y, s.y);
  EXPECT_EQ(r.z, s.z);
  EXPECT_EQ(r.rate_hz, 50.0);
}

TEST(Resample, RampIsReproducedExactly) {
  const auto s = uniform_series(201, 100.0, [](double t) { return t; });
  const auto r = resample(s, 50.0);
  ASSERT_EQ(r.size(), 101u);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r.x[i], r.t[i], 1e-12);
}

TEST(Resample, SineAnalyticOracle) {
  const auto s = uniform_series(1001, 500.0, [](double t) { return std::sin(2.0 * M_PI * 5.0 * t); });
  const auto r = resample(s, 50.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    worst = std::max(worst, std::abs(r.x[i] - std::sin(2.0 * M_PI * 5.0 * r.t[i])));
  EXPECT_LT(worst, 1e-3);
  EXPECT_EQ(r.rate_hz, 50.0);
}

TEST(Resample, ConstantsPreservedAndIdempotent) {
  TriaxialSeries s;
  s.subject_id = "c";
  Rng rng(3);
  double t = 0.0;
  for (int i = 0; i < 300; ++i) {
    s.t.push_back(t);
    t += rng.uniform(0.005, 0.03);
    s.x.push_back(0.75);
    s.y.push_back(-3.0);
    s.z.push_back(9.81);
  }
  s.rate_hz = 1.0 / s.median_dt();
  const auto r = resample(s, 50.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(r.x[i], 0.75);
    EXPECT_EQ(r.y[i], -3.0);
    EXPECT_EQ(r.z[i], 9.81);
  }
  const auto rr = resample(r, 50.0);
  EXPECT_EQ(rr.x, r.x);
  EXPECT_EQ(rr.t, r.t);
}

TEST(Resample, SingleSampleIsError) {
  const auto s = uniform_series(1, 50.0, [](double t) { return t; });
  EXPECT_THROW(resample(s, 50.0), DataError);
  const auto ok = uniform_series(5, 50.0, [](double t) { return t; });
  EXPECT_THROW(resample(ok, 0.0), DataError);
}

TEST(Windows, HundredSamplesGiveThreeWindows) {
  const auto s = uniform_series(100, 25.0, [](double t) { return t; });
  const auto w = make_windows(s, 2.0, 0.5);
  const std::size_t expected = (100 - 50) / 25 + 1;
  ASSERT_EQ(w.size(), expected);
  EXPECT_EQ(w[0].origin_index, 0u);
  EXPECT_EQ(w[1].origin_index, 25u);
  EXPECT_EQ(w[2].origin_index, 50u);
  for (const auto& win : w) EXPECT_EQ(win.size(), 50u);
}

TEST(Windows, TwoSecondsAt50HzIs100Samples) { EXPECT_EQ(window_length(2.0, 50.0), 100u); }

TEST(Windows, ShortSeriesGivesNoWindows) {
  const auto s = uniform_series(49, 25.0, [](double t) { return t; });
  EXPECT_TRUE(make_windows(s, 2.0, 0.5).empty());
}

TEST(Windows, BadOverlapAndTinyWindowsRejected) {
  const auto s = uniform_series(49, 25.0, [](double t) { return t; });
  EXPECT_THROW(make_windows(s, 2.0, 1.0), DataError);
  EXPECT_THROW(make_windows(s, 2.0, -0.1), DataError);
  EXPECT_THROW(make_windows(s, 0.01, 0.5), DataError);
}

TEST(Windows, OriginsAndHopProperty) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 2 + rng.below(400);
    const double rate = 10.0 + double(rng.below(90));
    const double secs = rng.uniform(0.05, 3.0);
    const double overlap = rng.uniform(0.0, 0.95);
    const auto s = uniform_series(len, rate, [](double t) { return t; });
    std::size_t n;
    try {
      n = window_length(secs, rate);
    } catch (const DataError&) {
      continue;
    }
    const auto hop = static_cast<std::size_t>(std::max(1.0, std::round(double(n) * (1.0 - overlap))));
    const auto w = make_windows(s, secs, overlap);
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_LE(w[i].origin_index + n, len);
      EXPECT_EQ(w[i].size(), n);
      if (i > 0) EXPECT_EQ(w[i].origin_index - w[i - 1].origin_index, hop);
      EXPECT_EQ(w[i].samples.front()[0], s.x[w[i].origin_index]);
    }
    if (!w.empty()) EXPECT_GT(w.back().origin_index + hop + n, len);
  }
}

TEST(Windows, MajorityLabelTiesGoLow) {
  EXPECT_EQ(majority_label({2, 2, 1, 1}, 0, 4), 1);
  EXPECT_EQ(majority_label({2, 2, 2, 1}, 0, 4), 2);
  EXPECT_EQ(majority_label({-1, -1, 3}, 0, 3), 3);
  EXPECT_EQ(majority_label({-1, -1}, 0, 2), -1);
}

TEST(Split, TenSubjectsSixTwoTwo) {
  const auto s = split_subjects(subject_set(10), {}, 42);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, FiveSubjectsThreeOneOne) {
  const auto s = split_subjects(subject_set(5), {}, 1);
  EXPECT_EQ(s.train.size(), 3u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, RemainderOrderTrainValTest) {
  // floor(0.6*7)=4, floor(0.2*7)=1, 1 -> remainder 1 goes to train
  auto s = split_subjects(subject_set(7), {}, 0);
  EXPECT_EQ(s.train.size(), 5u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  // 0.34/0.33/0.33 of 4 -> 1/1/1 plus one to train
  s = split_subjects(subject_set(4), {0.34, 0.33, 0.33}, 0);
  EXPECT_EQ(s.train.size(), 2u);
  EXPECT_EQ(detail::ratio_sizes(5, {0.3, 0.3, 0.4}), (std::vector<std::size_t>{2, 1, 2}));
}

TEST(Split, DeterministicAndSeedSensitive) {
  const auto a = split_subjects(subject_set(20), {}, 5);
  const auto b = split_subjects(subject_set(20), {}, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  bool differs = false;
  for (std::uint64_t seed = 6; seed < 16 && !differs; ++seed) differs = split_subjects(subject_set(20), {}, seed).train != a.train;
  EXPECT_TRUE(differs);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_subjects(subject_set(2), {}, 0), DataError);
  EXPECT_THROW(split_subjects(subject_set(5), {0.5, 0.5, 0.5}, 0), ConfigError);
  EXPECT_THROW(split_subjects(subject_set(5), {1.0, 0.0, 0.0}, 0), ConfigError);
}

TEST(Split, DisjointAndCoveringExhaustive) {
  for (int n = 3; n <= 30; ++n)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto all = subject_set(n);
      const auto s = split_subjects(all, {}, seed);
      std::set<std::string> u;
      for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& x : *part) EXPECT_TRUE(u.insert(x).second);
      EXPECT_EQ(u, all);
    }
}

TEST(KFold, TenSubjectsFiveFolds) {
  const auto all = subject_set(10);
  const auto folds = kfold_subjects(all, 5, 3);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::string> tests;
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 2u);
    tests.insert(f.test.begin(), f.test.end());
    EXPECT_EQ(f.train.size(), 6u);
    EXPECT_EQ(f.val.size(), 2u);
  }
  EXPECT_EQ(std::set<std::string>(tests.begin(), tests.end()), all);
  EXPECT_EQ(tests.size(), all.size());
}

TEST(KFold, LeaveOneSubjectOut) {
  const auto folds = kfold_subjects(subject_set(6), 6, 9);
  for (const auto& f : folds) EXPECT_EQ(f.test.size(), 1u);
}

TEST(KFold, PartitionPropertyExhaustive) {
  for (int n = 2; n <= 16; ++n)
    for (int k = 2; k <= n; ++k) {
      const auto all = subject_set(n);
      const auto folds = kfold_subjects(all, k, std::uint64_t(n * 31 + k));
      std::multiset<std::string> tests;
      for (const auto& f : folds) {
        std::set<std::string> u;
        for (const auto* part : {&f.train, &f.val, &f.test})
          for (const auto& x : *part) EXPECT_TRUE(u.insert(x).second);
        EXPECT_EQ(u, all);
        tests.insert(f.test.begin(), f.test.end());
      }
      EXPECT_EQ(tests.size(), all.size());
      EXPECT_EQ(std::set<std::string>(tests.begin(), tests.end()), all);
    }
}

TEST(KFold, Errors) {
  EXPECT_THROW(kfold_subjects(subject_set(3), 4, 0), DataError);
  EXPECT_THROW(kfold_subjects(subject_set(3), 1, 0), ConfigError);
}

TEST(SynthImu, CountsAndBalance) {
  SynthImuOptions opt;
  opt.classes = default_class_specs();
  opt.seed = 4;
  const auto w = synth_imu_dataset(opt);
  ASSERT_EQ(w.size(), 600u);
  std::map<int, int> per_class;
  for (const auto& x : w) {
    ++per_class[x.label];
    EXPECT_EQ(x.size(), 100u);
    EXPECT_EQ(x.rate_hz, 50.0);
  }
  EXPECT_EQ(per_class, (std::map<int, int>{{0, 200}, {1, 200}, {2, 200}}));
  EXPECT_EQ(subjects_of(w).size(), 5u);
  EXPECT_EQ(select_subjects(w, {"s00"}).size(), 120u);
}

TEST(SynthImu, Deterministic) {
  SynthImuOptions opt;
  opt.classes = default_class_specs();
  opt.n_windows_per_class = 3;
  opt.seed = 8;
  EXPECT_EQ(synth_imu_dataset(opt), synth_imu_dataset(opt));
  auto other = opt;
  other.seed = 9;
  EXPECT_NE(synth_imu_dataset(opt), synth_imu_dataset(other));
}

TEST(SynthImu, DegenerateSpecsFlagged) {
  ImuClassSpec a;
  a.noise = 0.0;
  EXPECT_EQ(degenerate_class_pairs({a, a}), (std::vector<std::pair<int, int>>{{0, 1}}));
  EXPECT_TRUE(degenerate_class_pairs(default_class_specs()).empty());
  SynthImuOptions opt;
  opt.classes = {a};
  EXPECT_THROW(synth_imu_dataset(opt), ConfigError);
}

TEST(SynthImu, SubjectsDiffer) {
  SynthImuOptions opt;
  opt.classes = default_class_specs();
  opt.n_windows_per_class = 1;
  opt.n_subjects = 2;
  for (auto& c : opt.classes) c.noise = 0.0;
  const auto w = synth_imu_dataset(opt);
  // same class, same window index, different subject
  EXPECT_NE(w[0].samples, w[3].samples);
}

TEST(SynthCorpus, RangeAndSize) {
  const auto c = synth_image_corpus(2000, 96, 128, 11);
  ASSERT_EQ(c.images.size(), 2000u);
  for (const auto& img : c.images) {
    ASSERT_EQ(img.height, 96);
    ASSERT_EQ(img.width, 128);
    for (double v : img.data) ASSERT_TRUE(std::isfinite(v) && v >= 0.0 && v <= 1.0);
  }
}

TEST(SynthCorpus, BitIdenticalForSeed) {
  const auto a = synth_image_corpus(30, 24, 32, 5);
  const auto b = synth_image_corpus(30, 24, 32, 5);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.stats, b.stats);
  EXPECT_NE(a.images, synth_image_corpus(30, 24, 32, 6).images);
}

TEST(SynthCorpus, StatsMatchTwoPassOracle) {
  const auto c = synth_image_corpus(60, 48, 64, 21);
  for (int ch = 0; ch < 3; ++ch) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& img : c.images)
      for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col, ++n) sum += img.at(ch, r, col);
    const double mean = sum / double(n);
    double ss = 0.0;
    for (const auto& img : c.images)
      for (int r = 0; r < img.height; ++r)
        for (int col = 0; col < img.width; ++col) ss += (img.at(ch, r, col) - mean) * (img.at(ch, r, col) - mean);
    EXPECT_NEAR(c.stats.mean[ch], mean, 1e-9);
    EXPECT_NEAR(c.stats.std[ch], std::sqrt(ss / double(n)), 1e-9);
  }
}

TEST(SynthCorpus, AllFamiliesAppear) {
  std::set<int> fam;
  for (int i = 0; i < 50; ++i) fam.insert(int(Rng(derive_seed(11, 3, i)).below(3)));
  EXPECT_EQ(fam.size(), 3u);
  EXPECT_THROW(synth_image_corpus(0, 4, 4, 0), ConfigError);
}

TEST(SynthCorpus, MixedSizesRejected) {
  ImageCorpus c;
  c.images = {Image(2, 2), Image(3, 2)};
  EXPECT_THROW(c.recompute_stats(), ShapeError);
  ImageCorpus empty;
  EXPECT_THROW(empty.recompute_stats(), DataError);
}
