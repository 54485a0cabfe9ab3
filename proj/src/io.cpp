#include "cpcert/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace cpcert {

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json nested(const DenseTensor& t, std::size_t axis, std::size_t& pos) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < t.dim(axis); ++i) {
    if (axis + 1 == t.rank())
      arr.push_back(t[pos++]);
    else
      arr.push_back(nested(t, axis + 1, pos));
  }
  return arr;
}

Json to_nested(const DenseTensor& t) {
  std::size_t pos = 0;
  return nested(t, 0, pos);
}

void fill_nested(const Json& j, const Shape& shape, std::size_t axis, std::vector<double>& out, const std::string& what) {
  if (!j.is_array() || j.size() != shape[axis])
    throw FormatError(what + ": expected an array of length " + std::to_string(shape[axis]) + " at depth " +
                      std::to_string(axis));
  for (const auto& e : j) {
    if (axis + 1 == shape.size()) {
      if (!e.is_number()) throw FormatError(what + ": expected a number");
      out.push_back(e.get<double>());
    } else {
      fill_nested(e, shape, axis + 1, out, what);
    }
  }
}

DenseTensor from_nested(const Json& j, const Shape& shape, const std::string& what) {
  std::vector<double> v;
  v.reserve(shape_size(shape));
  fill_nested(j, shape, 0, v, what);
  return DenseTensor(shape, std::move(v));
}

bool positive_integer(const Json& v) { return v.is_number_integer() && v.get<long long>() > 0; }

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  return j.at(key);
}

std::size_t dim_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!positive_integer(v)) throw FormatError(where + ": field '" + key + "' must be a positive integer");
  return v.get<std::size_t>();
}

double num_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_number()) throw FormatError(where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

Shape shape_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_array() || v.empty()) throw FormatError(where + ": '" + key + "' must be a non-empty array");
  Shape s;
  for (const auto& e : v) {
    if (!positive_integer(e))
      throw FormatError(where + ": '" + key + "' entries must be positive integers");
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

void check_version(const Json& j, const std::string& where) {
  const Json& v = field(j, "version", where);
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion)
    throw FormatError(where + ": unsupported version (expected " + std::to_string(kFormatVersion) + ")");
}

Json cp_factor_block(const CPKernel& k, std::size_t mode) {
  Json arr = Json::array();
  for (std::size_t r = 0; r < k.width(); ++r) {
    const DenseTensor& f = k.factors[r][mode];
    arr.push_back(f.rank() == 1 ? Json(f.storage()) : to_nested(f));
  }
  return arr;
}

Json layer_json(const Layer& l) {
  Json j;
  j["kind"] = to_string(l.kind);
  switch (l.kind) {
    case LayerKind::conv_dense:
      j["s"] = l.s;
      j["o"] = l.o;
      j["kx"] = l.kx;
      j["ky"] = l.ky;
      j["weights"] = to_nested(permute(l.dense, {2, 3, 0, 1}));
      break;
    case LayerKind::conv_cp:
      j["s"] = l.s;
      j["o"] = l.o;
      j["kx"] = l.kx;
      j["ky"] = l.ky;
      j["rank"] = l.cp.width();
      j["lambdas"] = l.cp.lambdas;
      j["a"] = cp_factor_block(l.cp, 0);
      j["b"] = cp_factor_block(l.cp, 1);
      j["c"] = cp_factor_block(l.cp, 2);
      break;
    case LayerKind::fc_dense:
      j["s1"] = l.s1;
      j["s2"] = l.s2;
      j["o1"] = l.o1;
      j["o2"] = l.o2;
      j["weights"] = to_nested(l.dense);
      break;
    case LayerKind::fc_cp:
      j["mode"] = to_string(l.fc_mode);
      j["s1"] = l.s1;
      j["s2"] = l.s2;
      j["o1"] = l.o1;
      j["o2"] = l.o2;
      j["rank"] = l.cp.width();
      j["lambdas"] = l.cp.lambdas;
      if (l.fc_mode == FcMode::vectors) {
        j["a"] = cp_factor_block(l.cp, 0);
        j["b"] = cp_factor_block(l.cp, 1);
        j["c"] = cp_factor_block(l.cp, 2);
        j["d"] = cp_factor_block(l.cp, 3);
      } else {
        j["k1"] = cp_factor_block(l.cp, 0);
        j["k2"] = cp_factor_block(l.cp, 1);
      }
      break;
  }
  if (!l.skip) return j;
  Json w;
  w["kind"] = "skip";
  w["inner"] = std::move(j);
  return w;
}

CPKernel read_cp(const Json& j, const std::vector<Shape>& modes, const std::vector<const char*>& keys,
                 const std::string& where) {
  const std::size_t R = dim_field(j, "rank", where);
  const Json& lam = field(j, "lambdas", where);
  if (!lam.is_array() || lam.size() != R) throw FormatError(where + ": 'lambdas' must have 'rank' entries");
  std::vector<const Json*> blocks;
  for (const char* key : keys) {
    const Json& b = field(j, key, where);
    if (!b.is_array() || b.size() != R) throw FormatError(where + ": '" + key + "' must have 'rank' entries");
    blocks.push_back(&b);
  }
  CPKernel k(modes);
  for (std::size_t r = 0; r < R; ++r) {
    if (!lam[r].is_number()) throw FormatError(where + ": 'lambdas' entries must be numbers");
    std::vector<DenseTensor> fs;
    for (std::size_t m = 0; m < modes.size(); ++m)
      fs.push_back(from_nested((*blocks[m])[r], modes[m], where + "." + keys[m]));
    k.add_component(lam[r].get<double>(), std::move(fs));
  }
  return k;
}

Layer layer_from(const Json& j, const std::string& where) {
  const Json& kind_j = field(j, "kind", where);
  if (!kind_j.is_string()) throw FormatError(where + ": 'kind' must be a string");
  const std::string kind = kind_j.get<std::string>();
  if (kind == "skip") {
    Layer inner = layer_from(field(j, "inner", where), where + ".inner");
    if (inner.skip) throw FormatError(where + ": nested skip blocks are not supported");
    inner.skip = true;
    return inner;
  }
  if (kind == "conv_dense" || kind == "conv_cp") {
    const std::size_t s = dim_field(j, "s", where), o = dim_field(j, "o", where);
    const std::size_t kx = dim_field(j, "kx", where), ky = dim_field(j, "ky", where);
    if (kind == "conv_dense")
      return Layer::conv_dense_layer(permute(from_nested(field(j, "weights", where), {o, s, kx, ky}, where + ".weights"),
                                             {2, 3, 0, 1}));
    return Layer::conv_cp_layer(read_cp(j, {{s}, {o}, {kx, ky}}, {"a", "b", "c"}, where));
  }
  if (kind == "fc_dense" || kind == "fc_cp") {
    const std::size_t s1 = dim_field(j, "s1", where), s2 = dim_field(j, "s2", where);
    const std::size_t o1 = dim_field(j, "o1", where), o2 = dim_field(j, "o2", where);
    if (kind == "fc_dense")
      return Layer::fc_dense_layer(from_nested(field(j, "weights", where), {s1, s2, o1, o2}, where + ".weights"));
    const Json& mode = field(j, "mode", where);
    if (mode == "vectors")
      return Layer::fc_cp_layer(read_cp(j, {{s1}, {s2}, {o1}, {o2}}, {"a", "b", "c", "d"}, where), FcMode::vectors);
    if (mode == "matrices")
      return Layer::fc_cp_layer(read_cp(j, {{o1, s1}, {o2, s2}}, {"k1", "k2"}, where), FcMode::matrices);
    throw FormatError(where + ": 'mode' must be \"vectors\" or \"matrices\"");
  }
  throw FormatError(where + ": unknown layer kind '" + kind + "'");
}

}  // namespace

Json model_to_json(const NetworkModel& model) {
  Json j;
  j["version"] = kFormatVersion;
  j["input_shape"] = model.input_shape;
  j["layers"] = Json::array();
  for (const auto& l : model.layers) j["layers"].push_back(layer_json(l));
  return j;
}

NetworkModel model_from_json(const Json& j) {
  check_version(j, "model");
  NetworkModel m;
  m.input_shape = shape_field(j, "input_shape", "model");
  const Json& layers = field(j, "layers", "model");
  if (!layers.is_array() || layers.empty()) throw FormatError("model: 'layers' must be a non-empty array");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    try {
      m.layers.push_back(layer_from(layers[k], "layer " + std::to_string(k)));
    } catch (const ShapeError& e) {
      throw FormatError("layer " + std::to_string(k) + ": " + e.what());
    }
  }
  try {
    m.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return m;
}

Json dataset_to_json(const Dataset& data) {
  Json j;
  j["version"] = kFormatVersion;
  j["num_classes"] = data.num_classes;
  j["input_shape"] = data.input_shape;
  j["samples"] = Json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    Json s;
    s["x"] = data.inputs[i].storage();
    s["y"] = data.labels[i];
    j["samples"].push_back(std::move(s));
  }
  return j;
}

Dataset dataset_from_json(const Json& j) {
  check_version(j, "dataset");
  Dataset d;
  d.num_classes = dim_field(j, "num_classes", "dataset");
  d.input_shape = shape_field(j, "input_shape", "dataset");
  const Json& samples = field(j, "samples", "dataset");
  if (!samples.is_array()) throw FormatError("dataset: 'samples' must be an array");
  const std::size_t len = shape_size(d.input_shape);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string where = "sample " + std::to_string(i);
    const Json& x = field(samples[i], "x", where);
    if (!x.is_array() || x.size() != len)
      throw FormatError(where + ": 'x' must hold " + std::to_string(len) + " numbers");
    std::vector<double> v;
    v.reserve(len);
    for (const auto& e : x) {
      if (!e.is_number()) throw FormatError(where + ": 'x' entries must be numbers");
      v.push_back(e.get<double>());
    }
    const Json& y = field(samples[i], "y", where);
    if (!y.is_number_integer() || y.get<long long>() < 0 ||
        static_cast<std::size_t>(y.get<long long>()) >= d.num_classes)
      throw FormatError(where + ": 'y' must be a class index below num_classes");
    d.inputs.emplace_back(d.input_shape, std::move(v));
    d.labels.push_back(y.get<int>());
  }
  return d;
}

Json plan_to_json(const CompressionPlan& plan) {
  Json j;
  j["version"] = kFormatVersion;
  j["rule"] = to_string(plan.rule);
  j["variant"] = to_string(plan.variant);
  j["epsilon"] = number(plan.epsilon);
  j["epsilon_requested"] = number(plan.epsilon_requested);
  j["gamma"] = plan.gamma ? number(*plan.gamma) : Json(nullptr);
  j["threshold"] = plan.threshold ? Json(*plan.threshold) : Json(nullptr);
  j["total_rank"] = plan.total_rank();
  j["layers"] = Json::array();
  for (const auto& l : plan.layers) {
    Json e;
    e["rank"] = l.rank;
    e["full_rank"] = l.full_rank;
    e["type"] = l.conv ? "conv" : "fc";
    e["skip"] = l.skip;
    e["noise"] = number(l.noise);
    e["gain"] = number(l.gain);
    e["cushion_multiplier"] = number(l.cushion_multiplier);
    e["lhs"] = number(l.lhs);
    e["rhs"] = number(l.rhs);
    e["rhs_margin"] = l.rhs_margin ? number(*l.rhs_margin) : Json(nullptr);
    j["layers"].push_back(std::move(e));
  }
  return j;
}

namespace {

double opt_num(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::infinity();
  if (!j.at(key).is_number()) throw FormatError(std::string("plan: '") + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace

CompressionPlan plan_from_json(const Json& j) {
  check_version(j, "plan");
  CompressionPlan p;
  const std::string rule = field(j, "rule", "plan").get<std::string>();
  if (rule == "fbrc") p.rule = RankRule::fbrc;
  else if (rule == "fbr_fc") p.rule = RankRule::fbr_fc;
  else if (rule == "fbrc_skip") p.rule = RankRule::fbrc_skip;
  else if (rule == "threshold") p.rule = RankRule::threshold;
  else throw FormatError("plan: unknown rule '" + rule + "'");
  try {
    p.variant = parse_tf_variant(field(j, "variant", "plan").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("plan: ") + e.what());
  }
  p.epsilon = opt_num(j, "epsilon");
  p.epsilon_requested = opt_num(j, "epsilon_requested");
  if (j.contains("gamma") && !j.at("gamma").is_null()) p.gamma = opt_num(j, "gamma");
  if (j.contains("threshold") && !j.at("threshold").is_null()) p.threshold = opt_num(j, "threshold");
  const Json& layers = field(j, "layers", "plan");
  if (!layers.is_array()) throw FormatError("plan: 'layers' must be an array");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string where = "plan layer " + std::to_string(k);
    const Json& e = layers[k];
    LayerPlan l;
    const Json& rank = field(e, "rank", where);
    if (!rank.is_number_integer() || rank.get<long long>() < 0) throw FormatError(where + ": 'rank' must be a non-negative integer");
    l.rank = rank.get<std::size_t>();
    l.full_rank = dim_field(e, "full_rank", where);
    l.conv = field(e, "type", where) == "conv";
    l.skip = field(e, "skip", where).get<bool>();
    l.noise = opt_num(e, "noise");
    l.gain = opt_num(e, "gain");
    l.cushion_multiplier = opt_num(e, "cushion_multiplier");
    l.lhs = opt_num(e, "lhs");
    l.rhs = opt_num(e, "rhs");
    if (e.contains("rhs_margin") && !e.at("rhs_margin").is_null()) l.rhs_margin = opt_num(e, "rhs_margin");
    p.layers.push_back(l);
  }
  return p;
}

Json properties_to_json(const PropertyTable& table, bool per_frequency, bool per_component) {
  Json j;
  j["version"] = kFormatVersion;
  j["samples"] = table.samples;
  j["max_output_norm"] = number(table.max_output_norm);
  j["variants"] = Json::array();
  if (per_frequency) j["variants"].push_back("per_frequency");
  if (per_component) j["variants"].push_back("per_component");
  j["layers"] = Json::array();
  for (std::size_t k = 0; k < table.layers.size(); ++k) {
    const auto& p = table.layers[k];
    Json e;
    e["index"] = k;
    e["kind"] = to_string(p.kind);
    e["skip"] = p.skip;
    e["rank"] = p.rank;
    e["sigma"] = number(p.sigma);
    e["kernel_norm"] = number(p.kernel_norm);
    e["layer_cushion"] = number(p.cushion.value);
    e["cushion_multiplier"] = number(p.cushion.multiplier);
    e["cushion_argmin"] = p.cushion.argmin;
    e["cushion_excluded"] = p.cushion.excluded;
    e["reshaping_factor"] = p.rf ? number(*p.rf) : Json(nullptr);
    const auto emit = [&](const SpectrumProfile& prof, const char* key) {
      Json v;
      Json tf = Json::array(), nb = Json::array();
      for (double x : prof.tf) tf.push_back(number(x));
      for (double x : prof.nb) nb.push_back(number(x));
      bool tf_mono = true, nb_mono = true;
      for (std::size_t i = 1; i < prof.tf.size(); ++i) tf_mono = tf_mono && prof.tf[i] >= prof.tf[i - 1];
      for (std::size_t i = 1; i < prof.nb.size(); ++i) nb_mono = nb_mono && prof.nb[i] <= prof.nb[i - 1];
      v["tf"] = std::move(tf);
      v["nb"] = std::move(nb);
      v["tf_nondecreasing"] = tf_mono;
      v["nb_nonincreasing"] = nb_mono;
      e[key] = std::move(v);
    };
    if (per_frequency) emit(p.per_frequency, "per_frequency");
    if (per_component) emit(p.per_component, "per_component");
    j["layers"].push_back(std::move(e));
  }
  return j;
}

Json verification_to_json(const VerificationReport& rep) {
  Json j;
  j["max_residual"] = number(rep.max_residual);
  j["argmax"] = rep.argmax;
  j["excluded"] = rep.excluded;
  j["chain_ok"] = rep.chain_ok;
  Json b = Json::array(), m = Json::array();
  for (double v : rep.chain_bound) b.push_back(number(v));
  for (double v : rep.chain_measured) m.push_back(number(v));
  j["chain_bound"] = std::move(b);
  j["chain_measured"] = std::move(m);
  return j;
}

Json bound_to_json(const BoundReport& rep) {
  Json j;
  j["version"] = kFormatVersion;
  j["variant"] = rep.variant;
  j["m"] = rep.m;
  j["gamma"] = number(rep.gamma);
  j["margin_loss"] = number(rep.margin_loss);
  j["d_eff"] = rep.params.d_eff;
  j["d_orig"] = rep.params.d_orig;
  j["unscaled_complexity"] = number(rep.complexity);
  j["bound"] = number(rep.bound);
  j["layers"] = Json::array();
  for (std::size_t k = 0; k < rep.params.layers.size(); ++k) {
    const auto& l = rep.params.layers[k];
    j["layers"].push_back({{"index", k}, {"original", l.original}, {"effective", l.effective}, {"ratio", number(l.ratio)}});
  }
  return j;
}

Json metrics_to_json(const std::vector<EpochMetrics>& metrics) {
  Json arr = Json::array();
  for (const auto& m : metrics) {
    Json e;
    e["epoch"] = m.epoch;
    e["learning_rate"] = number(m.learning_rate);
    e["train_loss"] = number(m.train_loss);
    e["train_accuracy"] = number(m.train_accuracy);
    e["holdout_accuracy"] = m.holdout_accuracy ? number(*m.holdout_accuracy) : Json(nullptr);
    arr.push_back(std::move(e));
  }
  return arr;
}

namespace {

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string properties_csv(const PropertyTable& table, TfVariant variant, const CompressionPlan* plan) {
  std::ostringstream os;
  os << "layer,kind,skip,rank,kernel_norm,layer_cushion,cushion_multiplier,reshaping_factor,tf_full,nb_1";
  if (plan) os << ",selected_rank,lhs,rhs";
  os << "\n";
  for (std::size_t k = 0; k < table.layers.size(); ++k) {
    const auto& p = table.layers[k];
    const auto& prof = p.profile(variant);
    os << k << ',' << to_string(p.kind) << ',' << (p.skip ? 1 : 0) << ',' << p.rank << ',' << csv_num(p.kernel_norm)
       << ',' << csv_num(p.cushion.value) << ',' << csv_num(p.cushion.multiplier) << ','
       << (p.rf ? csv_num(*p.rf) : "") << ',' << (prof.tf.empty() ? "" : csv_num(prof.tf.back())) << ','
       << (prof.nb.size() > 1 ? csv_num(prof.nb[1]) : "");
    if (plan) {
      const auto& l = plan->layers.at(k);
      os << ',' << l.rank << ',' << csv_num(l.lhs) << ',' << csv_num(l.rhs);
    }
    os << "\n";
  }
  return os.str();
}

std::string bound_csv(const BoundReport& rep, const CompressionPlan& plan) {
  std::ostringstream os;
  os << "layer,rank,full_rank,original,effective,ratio\n";
  for (std::size_t k = 0; k < rep.params.layers.size(); ++k) {
    const auto& l = rep.params.layers[k];
    os << k << ',' << plan.layers.at(k).rank << ',' << plan.layers.at(k).full_rank << ',' << l.original << ','
       << l.effective << ',' << csv_num(l.ratio) << "\n";
  }
  return os.str();
}

std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream os;
  os << "epoch,learning_rate,train_loss,train_accuracy,holdout_accuracy\n";
  for (const auto& m : metrics)
    os << m.epoch << ',' << csv_num(m.learning_rate) << ',' << csv_num(m.train_loss) << ','
       << csv_num(m.train_accuracy) << ',' << (m.holdout_accuracy ? csv_num(*m.holdout_accuracy) : "") << "\n";
  return os.str();
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
  if (!out) throw FormatError("failed writing '" + path + "'");
}

NetworkModel load_model(const std::string& path) {
  const Json j = read_json_file(path);
  return model_from_json(j.is_object() && j.contains("model") ? j.at("model") : j);
}

Dataset load_dataset(const std::string& path) { return dataset_from_json(read_json_file(path)); }

CompressionPlan load_plan(const std::string& path) {
  const Json j = read_json_file(path);
  return plan_from_json(j.is_object() && j.contains("plan") ? j.at("plan") : j);
}

}  // namespace cpcert
