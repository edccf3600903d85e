#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace lfpstage;

namespace {

ConfusionMatrix from_rows(const std::array<std::array<std::size_t, 4>, 4>& rows) {
  ConfusionMatrix cm;
  cm.counts = rows;
  return cm;
}

ForwardResult<float> result_with_alpha(std::vector<float> alpha) {
  ForwardResult<float> r;
  r.probs = Vector<float>::Constant(4, 0.25f);
  r.alpha = Eigen::Map<Vector<float>>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  return r;
}

}  // namespace

TEST(Confusion, Diagonal) {
  const std::vector<std::size_t> v{0, 1, 2, 3};
  const auto cm = confusion_matrix(v, v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(cm.counts[i][j], i == j ? 1u : 0u);
  EXPECT_EQ(metrics(cm).total_accuracy, 1.0);
}

TEST(Confusion, AllWrong) {
  const std::vector<std::size_t> preds{1, 1}, labels{0, 0};
  const auto cm = confusion_matrix(preds, labels);
  EXPECT_EQ(cm.counts[0][1], 2u);
  EXPECT_EQ(metrics(cm).total_accuracy, 0.0);
}

TEST(Confusion, NineOfTen) {
  const std::vector<std::size_t> labels{0, 1, 2, 3, 0, 1, 2, 3, 2, 2};
  std::vector<std::size_t> preds = labels;
  preds[4] = 3;
  EXPECT_DOUBLE_EQ(metrics(confusion_matrix(preds, labels)).total_accuracy, 0.9);
}

TEST(Confusion, Errors) {
  const std::vector<std::size_t> a{0, 1}, b{0}, bad{4, 0};
  EXPECT_THROW(confusion_matrix(a, b), data_error);
  EXPECT_THROW(confusion_matrix(bad, a), data_error);
}

TEST(Metrics, Recalls) {
  const auto diag = metrics(from_rows({{{5, 0, 0, 0}, {0, 5, 0, 0}, {0, 0, 5, 0}, {0, 0, 0, 5}}}));
  for (const auto& r : diag.per_class_recall) EXPECT_EQ(r.value(), 1.0);
  EXPECT_EQ(diag.total_accuracy, 1.0);
  const auto row = metrics(from_rows({{{8, 2, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}}));
  EXPECT_DOUBLE_EQ(row.per_class_recall[0].value(), 0.8);
}

TEST(Metrics, QuotedPerStageRecalls) {
  // Rows of 1000 per true class; diagonal from the quoted per-stage rates.
  const auto m = metrics(from_rows({{{891, 50, 30, 29}, {100, 758, 80, 62}, {60, 90, 790, 60}, {40, 40, 32, 888}}}));
  EXPECT_EQ(m.per_class_recall[0].value(), 0.891);
  EXPECT_EQ(m.per_class_recall[1].value(), 0.758);
  EXPECT_EQ(m.per_class_recall[2].value(), 0.790);
  EXPECT_EQ(m.per_class_recall[3].value(), 0.888);
  EXPECT_EQ(m.total_accuracy, 3327.0 / 4000.0);
}

TEST(Metrics, EmptyRowIsFlagged) {
  const ConfusionMatrix cm = from_rows({{{3, 1, 0, 0}, {0, 0, 0, 0}, {0, 0, 2, 0}, {0, 0, 0, 4}}});
  const auto m = metrics(cm);
  EXPECT_FALSE(m.per_class_recall[1].has_value());
  EXPECT_TRUE(m.per_class_recall[0].has_value());
  const auto j = metrics_json(m, cm);
  EXPECT_TRUE(j["per_class_recall"]["N1"].is_null());
  EXPECT_EQ(j["empty_classes"], io::json::array({"N1"}));
}

TEST(EpochVote, Majority) {
  const std::vector<std::size_t> all2{2, 2, 2, 2, 2, 2}, one{1};
  EXPECT_EQ(epoch_vote(all2), 2u);
  EXPECT_EQ(epoch_vote(one), 1u);
  const std::vector<std::size_t> major{0, 3, 3, 1, 3, 0};
  EXPECT_EQ(epoch_vote(major), 3u);
}

TEST(EpochVote, TieBrokenByMeanProbability) {
  const std::vector<std::size_t> tie{0, 0, 0, 3, 3, 3};
  std::vector<std::array<double, 4>> probs(6, {0.4, 0.1, 0.1, 0.4});
  probs[3] = {0.3, 0.1, 0.1, 0.5};
  EXPECT_EQ(epoch_vote(tie, probs), 3u);
  probs[0] = {0.7, 0.1, 0.1, 0.1};
  EXPECT_EQ(epoch_vote(tie, probs), 0u);
  EXPECT_EQ(epoch_vote(tie), 0u);
  EXPECT_EQ(epoch_vote(tie), epoch_vote(tie));
}

TEST(ChannelWeights, AverageOverSegments) {
  std::vector<Segment> segs(3);
  segs[0].subject_id = segs[1].subject_id = "a";
  segs[2].subject_id = "b";
  const std::vector<ForwardResult<float>> results{result_with_alpha({0.25f, 0.75f}), result_with_alpha({0.75f, 0.25f}),
                                                  result_with_alpha({0.5f, 0.5f})};
  const std::vector<std::size_t> one{2};
  const auto single = channel_weights_from(std::span(results).subspan(2, 1), segs, one);
  EXPECT_EQ(single.at("b"), (std::vector<double>{0.5, 0.5}));
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto w = channel_weights_from(results, segs, idx);
  EXPECT_EQ(w.at("a"), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(channel_weights_csv(w), "subject_id,ch0,ch1\na,0.5,0.5\nb,0.5,0.5\n");
}

TEST(LayerWeights, ZeroLogitsAreUniform) {
  ModelDims d;
  const ModelParams<float> m(d);
  const auto w = layer_weight_report(m);
  ASSERT_EQ(w.size(), 25u);
  for (double v : w) EXPECT_NEAR(v, 0.04, 1e-15);
  const std::string csv = layer_weights_csv(w);
  EXPECT_EQ(csv.substr(0, 20), "layer,weight\n0,0.04\n");
}

TEST(Report, EpochGroupingAndCsv) {
  ModelDims d;
  const ModelParams<float> m(d);
  const auto segs = lfpstage::testing::fake_segments({{"a", Label4::Wake}, {"a", Label4::REM}});
  std::vector<ForwardResult<float>> results;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto r = result_with_alpha({1.0f});
    r.probs = Vector<float>::Constant(4, 0.1f);
    r.probs[i < 6 ? 0 : (i < 9 ? 3 : 1)] = 0.7f;  // epoch 1: three REM, three N1 votes
    results.push_back(r);
    idx.push_back(i);
  }
  results[11].probs[1] = 0.6f;
  const Report rep = build_report(m, results, segs, idx);
  EXPECT_EQ(rep.confusion.counts[0][0], 6u);
  EXPECT_EQ(rep.confusion.counts[3][3], 3u);
  EXPECT_EQ(rep.confusion.counts[3][1], 3u);
  EXPECT_EQ(rep.epoch_confusion.total(), 2u);
  EXPECT_EQ(rep.epoch_confusion.counts[3][3], 1u);
  EXPECT_EQ(confusion_csv(rep.epoch_confusion),
            "true/pred,Wake,N1,N2N3,REM\nWake,1,0,0,0\nN1,0,0,0,0\nN2N3,0,0,0,0\nREM,0,0,0,1\n");
  const auto j = report_json(rep);
  EXPECT_EQ(j["segment"]["n"], 12);
  EXPECT_EQ(j["epoch"]["total_accuracy"], 1.0);
}
