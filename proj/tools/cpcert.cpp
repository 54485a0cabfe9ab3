#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpcert/bound.hpp"
#include "cpcert/compression.hpp"
#include "cpcert/harness.hpp"
#include "cpcert/io.hpp"
#include "cpcert/network.hpp"
#include "cpcert/properties.hpp"

using namespace cpcert;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void emit(const Json& summary) { std::cout << dump(summary); }

void write_json(const std::string& path, const Json& j) { write_text_file(path, dump(j)); }

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

TfVariant variant_arg(const std::string& s) {
  try {
    return parse_tf_variant(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

FcMode fc_mode_arg(const std::string& s) {
  if (s == "vectors") return FcMode::vectors;
  if (s == "matrices") return FcMode::matrices;
  throw UsageError("--fc-mode must be vectors or matrices");
}

std::vector<std::size_t> parse_rank_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || v == 0)
      throw UsageError("--rank-policy must be prop31 or a comma-separated list of positive ranks");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--rank-policy list is empty");
  return out;
}

// ---- gen-data

struct GenDataArgs {
  std::size_t classes = 4, per_class = 64;
  std::vector<std::size_t> shape{8, 8, 1};
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> stream_seed;
  double noise = 0.1;
  std::string out;
};

void run_gen_data(const GenDataArgs& a) {
  // Default stream matches make_synthetic.
  const Dataset d = SyntheticSource(a.classes, a.shape, a.seed, a.noise)
                        .draw(a.per_class, a.stream_seed.value_or(a.seed ^ 0x9e3779b97f4a7c15ULL));
  write_json(a.out, dataset_to_json(d));
  emit({{"command", "gen-data"}, {"samples", d.size()}, {"num_classes", d.num_classes}, {"out", a.out}});
}

// ---- train

struct TrainArgs {
  std::string dataset, arch = "toy-cnn", out, metrics, holdout;
  std::size_t epochs = 50, batch_size = 32;
  double lr = 0.01, corrupt_rate = 0.0;
  std::uint64_t seed = 0;
};

void run_train(const TrainArgs& a) {
  const Dataset clean = load_dataset(a.dataset);
  NetworkModel init;
  if (a.arch == "toy-cnn" || a.arch == "toy-fc") {
    PresetOptions po;
    po.num_classes = clean.num_classes;
    po.seed = a.seed;
    init = make_preset(a.arch, po);
  } else {
    init = load_model(a.arch);
  }
  if (!(a.corrupt_rate >= 0.0 && a.corrupt_rate <= 1.0)) throw UsageError("--corrupt-rate must lie in [0, 1]");
  const Dataset data = a.corrupt_rate > 0.0 ? corrupt_labels(clean, a.corrupt_rate, a.seed) : clean;
  // Without an explicit holdout, accuracy is tracked against the uncorrupted labels.
  const Dataset holdout = a.holdout.empty() ? clean : load_dataset(a.holdout);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  const TrainResult r = train(init, data, cfg, &holdout);
  write_json(a.out, model_to_json(r.model));
  if (!a.metrics.empty()) write_text_file(a.metrics, metrics_csv(r.metrics));

  Json s{{"command", "train"}, {"epochs", a.epochs}, {"out", a.out}};
  if (!r.metrics.empty()) {
    const auto& last = r.metrics.back();
    s["train_loss"] = number_or_null(last.train_loss);
    s["train_accuracy"] = last.train_accuracy;
    s["holdout_accuracy"] = last.holdout_accuracy ? Json(*last.holdout_accuracy) : Json(nullptr);
  }
  emit(s);
}

// ---- decompose

struct DecomposeArgs {
  std::string model, rank_policy = "prop31", out, fc_mode = "vectors";
  double tol = 1e-3;
  std::uint64_t seed = 0;
};

void run_decompose(const DecomposeArgs& a) {
  const NetworkModel m = load_model(a.model);
  const FcMode mode = fc_mode_arg(a.fc_mode);
  const bool cap_policy = a.rank_policy == "prop31";
  const std::vector<std::size_t> ranks = cap_policy ? std::vector<std::size_t>{} : parse_rank_list(a.rank_policy);
  if (!ranks.empty() && ranks.size() != m.layers.size())
    throw UsageError("--rank-policy lists " + std::to_string(ranks.size()) + " ranks for " +
                     std::to_string(m.layers.size()) + " layers");
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    const Layer& l = m.layers[k];
    const std::size_t cap = l.is_cp() ? l.cp.width() : layer_rank_cap(l, l.is_conv() ? FcMode::vectors : mode);
    if (ranks[k] > cap)
      throw UsageError("layer " + std::to_string(k) + ": rank " + std::to_string(ranks[k]) + " exceeds the cap " +
                       std::to_string(cap));
    if (l.is_cp() && ranks[k] != l.cp.width())
      throw UsageError("layer " + std::to_string(k) + " is already CP with width " + std::to_string(l.cp.width()));
  }
  AlsOptions als;
  als.target_error = cap_policy ? a.tol * 0.5 : 0.0;
  als.seed = a.seed;
  const CpifyResult r = cp_ify(m, ranks, als, mode);
  const double worst = r.errors.empty() ? 0.0 : *std::max_element(r.errors.begin(), r.errors.end());
  if (cap_policy && worst > a.tol) {
    std::ostringstream os;
    os << "reconstruction error " << worst << " exceeds --tol " << a.tol;
    throw std::runtime_error(os.str());
  }
  write_json(a.out, model_to_json(r.model));
  Json widths = Json::array();
  for (const auto& l : r.model.layers) widths.push_back(l.cp.width());
  emit({{"command", "decompose"}, {"ranks", widths}, {"errors", r.errors}, {"max_error", worst}, {"out", a.out}});
}

// ---- measure

struct MeasureArgs {
  std::string model, dataset, variant = "per_frequency", out, csv;
};

void run_measure(const MeasureArgs& a) {
  const bool both = a.variant == "both";
  const TfVariant v = both ? TfVariant::per_frequency : variant_arg(a.variant);
  const NetworkModel m = load_model(a.model);
  const Dataset d = load_dataset(a.dataset);
  const PropertyTable t = compute_properties(m, d);
  const Json report = properties_to_json(t, both || v == TfVariant::per_frequency, both || v == TfVariant::per_component);
  if (!a.out.empty()) write_json(a.out, report);
  if (!a.csv.empty()) write_text_file(a.csv, properties_csv(t, v));
  emit({{"command", "measure"}, {"layers", t.layers.size()}, {"max_output_norm", t.max_output_norm}, {"out", a.out}});
}

// ---- compress

struct CompressArgs {
  std::string model, dataset, variant = "per_frequency", out, csv;
  std::optional<double> gamma, epsilon, threshold;
  bool skip_aware = false;
};

void run_compress(const CompressArgs& a) {
  const int chosen = int(a.gamma.has_value()) + int(a.epsilon.has_value()) + int(a.threshold.has_value());
  if (chosen != 1) throw UsageError("give exactly one of --gamma, --epsilon, --threshold");
  const NetworkModel m = load_model(a.model);
  const Dataset d = load_dataset(a.dataset);

  CompressResult r;
  if (a.threshold) {
    r.plan = threshold_plan(m, *a.threshold);
    r.model = project(m, r.plan);
    r.properties = compute_properties(m, d);
    r.verification = verify_compression(m, r.model, r.plan, d);
  } else {
    CompressOptions opts;
    opts.gamma = a.gamma;
    opts.epsilon = a.epsilon;
    opts.variant = variant_arg(a.variant);
    opts.skip_aware = a.skip_aware;
    r = compress(m, d, opts);
  }
  const ParameterCounts pc = effective_params(r.plan, m);
  const double factor = cp_compression_factor(r.plan, m);

  Json doc;
  doc["version"] = kFormatVersion;
  doc["model"] = model_to_json(r.model);
  doc["plan"] = plan_to_json(r.plan);
  doc["verification"] = verification_to_json(r.verification);
  doc["properties"] = properties_to_json(r.properties, true, true);
  doc["d_eff"] = pc.d_eff;
  doc["d_orig"] = pc.d_orig;
  doc["compression_factor"] = factor;
  write_json(a.out, doc);
  if (!a.csv.empty()) write_text_file(a.csv, properties_csv(r.properties, r.plan.variant, &r.plan));

  emit({{"command", "compress"},
        {"rule", to_string(r.plan.rule)},
        {"epsilon", a.threshold ? Json(nullptr) : number_or_null(r.plan.epsilon)},
        {"threshold", a.threshold ? Json(*a.threshold) : Json(nullptr)},
        {"ranks", r.plan.ranks()},
        {"max_residual", r.verification.max_residual},
        {"chain_ok", r.verification.chain_ok},
        {"d_eff", pc.d_eff},
        {"compression_factor", factor},
        {"out", a.out}});
}

// ---- bound

struct BoundArgs {
  std::string model, plan, dataset, out, csv;
  std::optional<double> gamma;
};

void run_bound(const BoundArgs& a) {
  const NetworkModel m = load_model(a.model);
  const CompressionPlan p = load_plan(a.plan.empty() ? a.model : a.plan);
  const Dataset d = load_dataset(a.dataset);
  const std::optional<double> gamma = a.gamma ? a.gamma : p.gamma;
  if (!gamma) throw UsageError("--gamma is required when the plan carries no margin");
  const BoundReport rep = generalization_bound(m, d, *gamma, p);
  if (!a.out.empty()) write_json(a.out, bound_to_json(rep));
  if (!a.csv.empty()) write_text_file(a.csv, bound_csv(rep, p));
  emit({{"command", "bound"},
        {"gamma", *gamma},
        {"margin_loss", rep.margin_loss},
        {"d_eff", rep.params.d_eff},
        {"m", rep.m},
        {"unscaled_complexity", rep.complexity},
        {"bound", rep.bound},
        {"out", a.out}});
}

// ---- verify

struct VerifyArgs {
  std::string model_a, model_b, dataset;
};

void run_verify(const VerifyArgs& a) {
  const NetworkModel ma = load_model(a.model_a), mb = load_model(a.model_b);
  const Dataset d = load_dataset(a.dataset);
  emit({{"command", "verify"}, {"max_relative_deviation", max_relative_deviation(ma, mb, d)}, {"samples", d.size()}});
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CP-layer compression certificates"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  c_gen->add_option("--classes", gen.classes)->check(CLI::PositiveNumber);
  c_gen->add_option("--per-class", gen.per_class)->check(CLI::PositiveNumber);
  c_gen->add_option("--shape", gen.shape)->delimiter(',');
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--stream-seed", gen.stream_seed, "Draw from the seed's source with this sample stream");
  c_gen->add_option("--noise", gen.noise);
  c_gen->add_option("--out", gen.out)->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a preset or model file");
  c_train->add_option("--dataset", tr.dataset)->required();
  c_train->add_option("--arch", tr.arch, "toy-cnn, toy-fc, or a model file");
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--lr", tr.lr);
  c_train->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--corrupt-rate", tr.corrupt_rate);
  c_train->add_option("--holdout", tr.holdout, "Dataset for the holdout accuracy column");
  c_train->add_option("--out", tr.out)->required();
  c_train->add_option("--metrics", tr.metrics);

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Convert dense layers to CP layers");
  c_dec->add_option("--model", dec.model)->required();
  c_dec->add_option("--rank-policy", dec.rank_policy, "prop31 or a comma-separated rank per layer");
  c_dec->add_option("--tol", dec.tol);
  c_dec->add_option("--fc-mode", dec.fc_mode, "vectors or matrices");
  c_dec->add_option("--seed", dec.seed);
  c_dec->add_option("--out", dec.out)->required();

  MeasureArgs mea;
  auto* c_mea = app.add_subcommand("measure", "Report per-layer properties");
  c_mea->add_option("--model", mea.model)->required();
  c_mea->add_option("--dataset", mea.dataset)->required();
  c_mea->add_option("--variant", mea.variant, "per_frequency, per_component or both");
  c_mea->add_option("--out", mea.out);
  c_mea->add_option("--csv", mea.csv);

  CompressArgs com;
  auto* c_com = app.add_subcommand("compress", "Select ranks, truncate and verify");
  c_com->add_option("--model", com.model)->required();
  c_com->add_option("--dataset", com.dataset)->required();
  c_com->add_option("--gamma", com.gamma);
  c_com->add_option("--epsilon", com.epsilon);
  c_com->add_option("--threshold", com.threshold);
  c_com->add_flag("--skip-aware", com.skip_aware);
  c_com->add_option("--variant", com.variant);
  c_com->add_option("--out", com.out)->required();
  c_com->add_option("--csv", com.csv);

  BoundArgs bnd;
  auto* c_bnd = app.add_subcommand("bound", "Evaluate the generalization bound");
  c_bnd->add_option("--model", bnd.model)->required();
  c_bnd->add_option("--plan", bnd.plan, "Plan file (defaults to --model)");
  c_bnd->add_option("--dataset", bnd.dataset)->required();
  c_bnd->add_option("--gamma", bnd.gamma);
  c_bnd->add_option("--out", bnd.out);
  c_bnd->add_option("--csv", bnd.csv);

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "Max relative output deviation between two models");
  c_ver->add_option("--model-a", ver.model_a)->required();
  c_ver->add_option("--model-b", ver.model_b)->required();
  c_ver->add_option("--dataset", ver.dataset)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (c_gen->parsed()) run_gen_data(gen);
    else if (c_train->parsed()) run_train(tr);
    else if (c_dec->parsed()) run_decompose(dec);
    else if (c_mea->parsed()) run_measure(mea);
    else if (c_com->parsed()) run_compress(com);
    else if (c_bnd->parsed()) run_bound(bnd);
    else if (c_ver->parsed()) run_verify(ver);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 1);
  } catch (const InfeasiblePlan& e) {
    return fail("infeasible", e.what(), 1);
  } catch (const VerificationError& e) {
    return fail("verification", e.what(), 1);
  } catch (const TrainingDiverged& e) {
    return fail("diverged", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
