#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ma/ml_pipeline.hpp"

using namespace ma;

TEST(Split, TenRows) {
  const auto s = split_and_folds(10, 0.2, 5, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
  std::vector<std::size_t> sizes;
  for (const auto& f : s.folds) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{2, 2, 2, 1, 1}));
}

TEST(Split, DeterministicAndPartition) {
  const auto a = split_and_folds(57, 0.2, 5, 33), b = split_and_folds(57, 0.2, 5, 33);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.folds, b.folds);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 57u);
  std::multiset<std::size_t> fold_pos;
  for (const auto& f : a.folds) fold_pos.insert(f.begin(), f.end());
  EXPECT_EQ(fold_pos.size(), a.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(fold_pos.count(i), 1u);
  EXPECT_NE(split_and_folds(57, 0.2, 5, 34).test, a.test);
}

TEST(Split, TooFewRows) { EXPECT_THROW(split_and_folds(5, 0.2, 5, 0), Error); }

TEST(Metrics, Values) {
  const std::vector<double> y = {1, 2, 3}, p = {1, 2, 4};
  EXPECT_DOUBLE_EQ(r2_score(y, p), 0.5);
  EXPECT_DOUBLE_EQ(mae(y, p), 1.0 / 3);
  EXPECT_DOUBLE_EQ(rmse(y, p), std::sqrt(1.0 / 3));
  const std::vector<double> c = {2, 2};
  EXPECT_EQ(r2_score(c, c), 1.0);
  EXPECT_EQ(r2_score(c, std::vector<double>{2, 3}), 0.0);
}

namespace {

std::vector<ArchInfo> registry() {
  return {{"a", 6, 128, 4, 512}, {"b", 12, 768, 12, 3072}, {"c", 24, 1024, 16, 4096}};
}

std::vector<FittedLayer> fits_for(const std::vector<ArchInfo>& reg) {
  std::vector<FittedLayer> out;
  for (const auto& a : reg) {
    for (int l = 1; l <= a.n_layers; ++l) {
      const double s = static_cast<double>(l) / a.n_layers;
      out.push_back({a.model_id, l, {10 * s + 1, 0.5 + s, 1e-4 * a.n_heads, 0.1 + 0.01 * l, 50 * s - 20}});
    }
  }
  return out;
}

}  // namespace

TEST(Dataset, Assemble) {
  const auto reg = registry();
  const auto fits = fits_for(reg);
  const auto ds = assemble_dataset(fits, reg, "lambda");
  EXPECT_EQ(ds.size(), 42u);
  EXPECT_EQ(ds.transform, TransformKind::log1p);
  EXPECT_EQ(assemble_dataset(fits, reg, "K").transform, TransformKind::yeo_johnson);
  EXPECT_DOUBLE_EQ(ds.targets[0], 0.5 + 1.0 / 6);
  EXPECT_THROW(assemble_dataset(fits, reg, "bogus"), Error);
}

TEST(Dataset, DuplicateAndUnknown) {
  auto reg = registry();
  auto fits = fits_for(reg);
  fits.push_back(fits.front());
  EXPECT_THROW(assemble_dataset(fits, reg, "A"), Error);
  fits.pop_back();
  reg.pop_back();
  try {
    assemble_dataset(fits, reg, "A");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_found);
  }
}

TEST(Pipeline, SelectsAndReports) {
  const auto reg = registry();
  const auto ds = assemble_dataset(fits_for(reg), reg, "K");
  PipelineOptions o;
  o.forest.n_trees = 30;
  o.boosting.n_rounds = 60;
  const auto ev = evaluate_and_select(ds, kAllRegressorKinds, o);
  ASSERT_EQ(ev.results.size(), 4u);
  EXPECT_EQ(ev.split.test.size(), 9u);
  int n_best = 0;
  for (const auto& r : ev.results) {
    n_best += r.best;
    EXPECT_EQ(r.fold_r2.size(), 5u);
    EXPECT_LE(r.test_r2, ev.best().test_r2);
  }
  EXPECT_EQ(n_best, 1);
  EXPECT_GT(ev.best().test_r2, 0.9);
  const auto& gb = ev.results[3];
  EXPECT_GE(gb.selected.at("n_rounds"), 1.0);
  EXPECT_LE(gb.selected.at("n_rounds"), 60.0);

  std::ostringstream t, d;
  write_metric_table(t, std::vector<TargetEvaluation>{ev});
  write_metric_details(d, std::vector<TargetEvaluation>{ev});
  EXPECT_EQ(t.str().substr(0, t.str().find('\n')),
            "parameter,transform,n_rows,ridge,lasso,random_forest,gradient_boosting,best");
  EXPECT_NE(t.str().find("K,yeo-johnson,42,"), std::string::npos);
  const std::string details = d.str();
  EXPECT_EQ(std::count(details.begin(), details.end(), '\n'), 5);
}

TEST(Pipeline, Deterministic) {
  const auto reg = registry();
  const auto ds = assemble_dataset(fits_for(reg), reg, "gamma");
  PipelineOptions o;
  o.forest.n_trees = 20;
  o.boosting.n_rounds = 40;
  o.seed = 5;
  std::ostringstream a, b;
  write_metric_details(a, std::vector<TargetEvaluation>{evaluate_and_select(ds, kAllRegressorKinds, o)});
  write_metric_details(b, std::vector<TargetEvaluation>{evaluate_and_select(ds, kAllRegressorKinds, o)});
  EXPECT_EQ(a.str(), b.str());
}

TEST(Pipeline, YeoJohnsonLambdaFromTrainRowsOnly) {
  const auto reg = registry();
  auto ds = assemble_dataset(fits_for(reg), reg, "K");
  PipelineOptions o;
  o.forest.n_trees = 5;
  o.boosting.n_rounds = 5;
  const auto ev = evaluate_and_select(ds, std::vector<RegressorKind>{RegressorKind::ridge}, o);
  // Changing a test-row target must not change lambda.
  ds.targets[ev.split.test[0]] += 1000.0;
  const auto ev2 = evaluate_and_select(ds, std::vector<RegressorKind>{RegressorKind::ridge}, o);
  EXPECT_EQ(ev.transform.yj_lambda, ev2.transform.yj_lambda);
}

TEST(Pipeline, RefusesTinyDataset) {
  const std::vector<ArchInfo> reg = {{"a", 6, 128, 4, 512}};
  const auto ds = assemble_dataset(fits_for(reg), reg, "A");
  EXPECT_THROW(evaluate_and_select(ds, kAllRegressorKinds), Error);
}

TEST(Hyperparams, Format) {
  EXPECT_EQ(format_hyperparams({{"alpha", 0.5}, {"b", 3}}), "alpha=0.5;b=3");
}
