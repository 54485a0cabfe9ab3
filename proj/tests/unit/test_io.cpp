#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "cpcert/io.hpp"
#include "support/helpers.hpp"

using namespace cpcert;
using cpcert::testing::random_dataset;

namespace {

void expect_same_scores(const NetworkModel& a, const NetworkModel& b, const Dataset& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto sa = predict(a, d.inputs[i]), sb = predict(b, d.inputs[i]);
    ASSERT_EQ(sa.size(), sb.size());
    for (std::size_t c = 0; c < sa.size(); ++c) EXPECT_EQ(sa[c], sb[c]);
  }
}

void expect_round_trip(const NetworkModel& m, const Dataset& d) {
  const std::string first = dump(model_to_json(m));
  const NetworkModel back = model_from_json(Json::parse(first));
  EXPECT_EQ(dump(model_to_json(back)), first);
  expect_same_scores(m, back, d);
}

NetworkModel with_layer(const Json& layer, Shape input = {4, 4, 1}) {
  Json j;
  j["version"] = 1;
  j["input_shape"] = input;
  j["layers"] = Json::array({layer});
  return model_from_json(j);
}

Json dense_conv_json() {
  Json w = Json::array();
  for (int o = 0; o < 2; ++o) {
    Json ws = Json::array();
    Json kx = Json::array();
    for (int x = 0; x < 3; ++x) kx.push_back(Json::array({0.0, 0.0, 0.0}));
    ws.push_back(kx);
    w.push_back(ws);
  }
  return {{"kind", "conv_dense"}, {"s", 1}, {"o", 2}, {"kx", 3}, {"ky", 3}, {"weights", w}};
}

}  // namespace

TEST(ModelJson, RoundTripCpCnn) {
  PresetOptions po;
  po.seed = 3;
  expect_round_trip(make_toy_cnn(po), random_dataset({8, 8, 1}, 4, 4, 1));
}

TEST(ModelJson, RoundTripDenseCnn) {
  PresetOptions po;
  po.seed = 4;
  po.cp = false;
  expect_round_trip(make_toy_cnn(po), random_dataset({8, 8, 1}, 4, 4, 2));
}

TEST(ModelJson, RoundTripFcBothModes) {
  PresetOptions po;
  po.seed = 5;
  po.cp = false;
  const NetworkModel dense = make_toy_fc(po);
  const Dataset d = random_dataset(dense.input_shape, 4, 4, 3);
  expect_round_trip(dense, d);
  po.cp = true;
  expect_round_trip(make_toy_fc(po), d);
  const auto mats = cp_ify(dense, {4, 4, 4}, {}, FcMode::matrices);
  ASSERT_EQ(mats.model.layers[0].fc_mode, FcMode::matrices);
  expect_round_trip(mats.model, d);
}

TEST(ModelJson, RoundTripSkip) {
  PresetOptions po;
  po.seed = 6;
  NetworkModel m = make_cnn({6, 6, 3}, {3, 3, 3, 3}, 3, po);
  m.layers[1].skip = true;
  const Json j = model_to_json(m);
  EXPECT_EQ(j["layers"][1]["kind"], "skip");
  EXPECT_EQ(j["layers"][1]["inner"]["kind"], "conv_cp");
  expect_round_trip(m, random_dataset({6, 6, 3}, 3, 3, 4));
}

TEST(ModelJson, DenseConvFileOrientation) {
  // Single nonzero weight at [o=1][s=0][kx=2][ky=0].
  Json layer = dense_conv_json();
  layer["weights"][1][0][2][0] = 1.5;
  const NetworkModel m = with_layer(layer);
  const DenseTensor& k = m.layers[0].dense;
  ASSERT_EQ(k.shape(), (Shape{3, 3, 2, 1}));
  EXPECT_EQ(k.at({2, 0, 1, 0}), 1.5);
  EXPECT_EQ(frobenius_norm(k), 1.5);
  EXPECT_EQ(model_to_json(m)["layers"][0]["weights"], layer["weights"]);
}

TEST(ModelJson, RejectsMalformed) {
  const Json good = model_to_json(make_toy_cnn());
  auto broken = [&](auto edit) {
    Json j = good;
    edit(j);
    return j;
  };
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["version"] = 2; })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j.erase("input_shape"); })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"] = Json::array(); })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][0]["kind"] = "pool"; })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][0]["s"] = 0; })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][1]["s"] = 5; })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][0]["lambdas"].push_back(1.0); })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][0]["a"][0][0] = "x"; })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["layers"][0]["c"][0].erase(0); })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) { j["input_shape"] = Json::array({8, 8, 2}); })), FormatError);
  EXPECT_THROW(model_from_json(broken([](Json& j) {
                 j["layers"][0] = Json{{"kind", "skip"}, {"inner", Json{{"kind", "skip"}, {"inner", j["layers"][0]}}}};
               })),
               FormatError);
  // Skip needs matching in/out widths; layer 0 maps 1 -> 8 channels.
  EXPECT_THROW(model_from_json(broken([](Json& j) {
                 j["layers"][0] = Json{{"kind", "skip"}, {"inner", j["layers"][0]}};
               })),
               FormatError);
  Json bad_mode = model_to_json(make_toy_fc());
  bad_mode["layers"][0]["mode"] = "tucker";
  EXPECT_THROW(model_from_json(bad_mode), FormatError);
}

TEST(DatasetJson, RoundTripAndValidation) {
  const Dataset d = random_dataset({3, 2, 2}, 5, 3, 7);
  const std::string text = dump(dataset_to_json(d));
  const Dataset back = dataset_from_json(Json::parse(text));
  EXPECT_EQ(back.input_shape, d.input_shape);
  EXPECT_EQ(back.num_classes, 3u);
  EXPECT_EQ(back.labels, d.labels);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.inputs[i].storage(), d.inputs[i].storage());
  EXPECT_EQ(dump(dataset_to_json(back)), text);

  Json j = Json::parse(text);
  j["samples"][0]["y"] = 3;
  EXPECT_THROW(dataset_from_json(j), FormatError);
  j = Json::parse(text);
  j["samples"][1]["x"].erase(0);
  EXPECT_THROW(dataset_from_json(j), FormatError);
  j = Json::parse(text);
  j["samples"][2]["y"] = -1;
  EXPECT_THROW(dataset_from_json(j), FormatError);
  j = Json::parse(text);
  j["version"] = "1";
  EXPECT_THROW(dataset_from_json(j), FormatError);
}

TEST(PlanJson, RoundTripKeepsNonFiniteAsNull) {
  const NetworkModel m = make_toy_cnn();
  const Dataset d = random_dataset({8, 8, 1}, 6, 4, 8);
  CompressOptions opts;
  opts.epsilon = 0.3;
  const CompressResult r = compress(m, d, opts);
  const Json j = plan_to_json(r.plan);
  const CompressionPlan back = plan_from_json(j);
  EXPECT_EQ(back.ranks(), r.plan.ranks());
  EXPECT_EQ(back.rule, r.plan.rule);
  EXPECT_EQ(back.epsilon, r.plan.epsilon);
  EXPECT_EQ(dump(plan_to_json(back)), dump(j));

  CompressionPlan p = r.plan;
  p.layers[0].rhs = std::numeric_limits<double>::infinity();
  const Json jn = plan_to_json(p);
  EXPECT_TRUE(jn["layers"][0]["rhs"].is_null());
  EXPECT_TRUE(std::isinf(plan_from_json(jn).layers[0].rhs));

  Json bad = j;
  bad["rule"] = "greedy";
  EXPECT_THROW(plan_from_json(bad), FormatError);
  bad = j;
  bad["variant"] = "average";
  EXPECT_THROW(plan_from_json(bad), FormatError);
}

TEST(Reports, PropertiesAndCsvShape) {
  const NetworkModel m = make_toy_cnn();
  const Dataset d = random_dataset({8, 8, 1}, 6, 4, 9);
  const PropertyTable t = compute_properties(m, d);
  const Json j = properties_to_json(t, true, true);
  ASSERT_EQ(j["layers"].size(), 3u);
  EXPECT_EQ(j["layers"][0]["per_frequency"]["tf"].size(), t.layers[0].rank);
  EXPECT_EQ(j["layers"][0]["per_component"]["nb"].size(), t.layers[0].rank + 1);
  EXPECT_TRUE(j["layers"][2]["per_frequency"]["tf_nondecreasing"].get<bool>());
  EXPECT_FALSE(properties_to_json(t, true, false)["layers"][0].contains("per_component"));

  const std::string csv = properties_csv(t, TfVariant::per_frequency);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("selected_rank"), std::string::npos);
}

TEST(Files, LoadCombinedDocuments) {
  const auto dir = std::filesystem::temp_directory_path() / "cpcert_io_test";
  std::filesystem::create_directories(dir);
  const NetworkModel m = make_toy_fc();
  const Dataset d = random_dataset(m.input_shape, 5, 4, 10);
  CompressOptions opts;
  opts.epsilon = 0.5;
  const CompressResult r = compress(m, d, opts);
  Json combined;
  combined["model"] = model_to_json(r.model);
  combined["plan"] = plan_to_json(r.plan);
  const std::string path = (dir / "combined.json").string();
  write_text_file(path, dump(combined));
  EXPECT_EQ(dump(model_to_json(load_model(path))), dump(combined["model"]));
  EXPECT_EQ(load_plan(path).ranks(), r.plan.ranks());

  write_text_file((dir / "bad.json").string(), "{ not json");
  EXPECT_THROW(load_model((dir / "bad.json").string()), FormatError);
  EXPECT_THROW(load_dataset((dir / "missing.json").string()), FormatError);
  std::filesystem::remove_all(dir);
}
