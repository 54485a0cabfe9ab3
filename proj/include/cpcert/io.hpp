#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cpcert/bound.hpp"
#include "cpcert/compression.hpp"
#include "cpcert/harness.hpp"
#include "cpcert/network.hpp"
#include "cpcert/properties.hpp"

namespace cpcert {

using Json = nlohmann::ordered_json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kFormatVersion = 1;

/// CPNN-JSON v1. Conv dense weights are stored [o][s][kx][ky]; CP conv
/// factors as a[R][s], b[R][o], c[R][kx][ky]; FC CP factors as a,b,c,d
/// vectors or k1[R][o1][s1], k2[R][o2][s2] matrices. Skip layers wrap the
/// inner layer as {"kind":"skip","inner":...}.
Json model_to_json(const NetworkModel& model);
NetworkModel model_from_json(const Json& j);

/// DSET-JSON v1 with flat row-major samples.
Json dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const Json& j);

Json plan_to_json(const CompressionPlan& plan);
CompressionPlan plan_from_json(const Json& j);

Json properties_to_json(const PropertyTable& table, bool per_frequency, bool per_component);
Json verification_to_json(const VerificationReport& rep);
Json bound_to_json(const BoundReport& rep);
Json metrics_to_json(const std::vector<EpochMetrics>& metrics);

/// One row per layer.
std::string properties_csv(const PropertyTable& table, TfVariant variant, const CompressionPlan* plan = nullptr);
std::string bound_csv(const BoundReport& rep, const CompressionPlan& plan);
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

/// Two-space indented, trailing newline.
std::string dump(const Json& j);
Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Accepts a bare model document or one carrying it under "model".
NetworkModel load_model(const std::string& path);
Dataset load_dataset(const std::string& path);
/// Accepts a bare plan document or one carrying it under "plan".
CompressionPlan load_plan(const std::string& path);

}  // namespace cpcert
