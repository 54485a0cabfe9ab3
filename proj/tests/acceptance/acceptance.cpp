// Acceptance gate: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpcert/bound.hpp"
#include "cpcert/compression.hpp"
#include "cpcert/cp.hpp"
#include "cpcert/fourier.hpp"
#include "cpcert/harness.hpp"
#include "cpcert/network.hpp"
#include "cpcert/opnorm.hpp"
#include "cpcert/properties.hpp"
#include "support/gradcheck.hpp"
#include "support/helpers.hpp"

using namespace cpcert;
using cpcert::testing::random_cp;
using cpcert::testing::random_tensor;
using cpcert::testing::rel_diff;
using cpcert::testing::uniform_index;
using cpcert::testing::unit_random;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failures and a short summary for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 3) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome outcome() const {
    Outcome o;
    o.pass = failed_ == 0;
    std::ostringstream os;
    for (std::size_t i = 0; i < notes_.size(); ++i) os << (i ? "; " : "") << notes_[i];
    if (failed_) {
      os << (notes_.empty() ? "" : "; ") << failed_ << " check(s) failed: ";
      for (std::size_t i = 0; i < failures_.size(); ++i) os << (i ? " | " : "") << failures_[i];
    }
    o.detail = os.str();
    return o;
  }

 private:
  std::vector<std::string> failures_, notes_;
  std::size_t failed_ = 0;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---- 1. Fourier

// Naive unitary DFT along a single axis.
ComplexTensor naive_dft_axis(const ComplexTensor& x, std::size_t axis) {
  const Shape& sh = x.shape();
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < sh.size(); ++a) inner *= sh[a];
  const std::size_t n = sh[axis], outer = x.size() / (inner * n);
  ComplexTensor out(sh);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      for (std::size_t f = 0; f < n; ++f) {
        Complex acc = 0.0;
        for (std::size_t t = 0; t < n; ++t)
          acc += x[(o * n + t) * inner + i] * std::polar(1.0, -2.0 * std::numbers::pi * double(f * t % n) / double(n));
        out[(o * n + f) * inner + i] = acc * scale;
      }
  return out;
}

// Circular convolution straight from its definition.
DenseTensor naive_conv(const DenseTensor& x, const DenseTensor& m) {
  const std::size_t H = x.dim(0), W = x.dim(1), S = x.dim(2), kx = m.dim(0), ky = m.dim(1), T = m.dim(2);
  DenseTensor y({H, W, T});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t a = 0; a < kx; ++a)
            for (std::size_t b = 0; b < ky; ++b)
              acc += m.at({a, b, t, s}) * x.at({(i + H * kx - a) % H, (j + W * ky - b) % W, s});
        y.at({i, j, t}) = acc;
      }
  return y;
}

Outcome criterion_fourier() {
  Check c;
  std::mt19937_64 rng(1001);
  double worst_norm = 0, worst_trip = 0, worst_naive = 0, worst_conv = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t order = uniform_index(rng, 1, 3);
    Shape sh;
    std::size_t budget = 4096;
    for (std::size_t a = 0; a < order; ++a) {
      const std::size_t d = std::min<std::size_t>(uniform_index(rng, 1, 16), std::max<std::size_t>(1, budget));
      sh.push_back(d);
      budget /= d;
    }
    std::vector<std::size_t> axes;
    for (std::size_t a = 0; a < order; ++a)
      if (uniform_index(rng, 0, 1) || axes.empty() && a + 1 == order) axes.push_back(a);
    const ComplexTensor x = cpcert::testing::random_complex(sh, rng);
    const ComplexTensor fx = mdft(x, axes);
    const double nx = frobenius_norm(x);
    const double dn = std::abs(frobenius_norm(fx) - nx) / nx;
    ComplexTensor back = imdft(fx, axes), naive = x;
    for (std::size_t a : axes) naive = naive_dft_axis(naive, a);
    double trip = 0, nv = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      trip = std::max(trip, std::abs(back[i] - x[i]));
      nv = std::max(nv, std::abs(naive[i] - fx[i]));
    }
    trip /= std::max(1.0, nx);
    nv /= std::max(1.0, nx);
    worst_norm = std::max(worst_norm, dn);
    worst_trip = std::max(worst_trip, trip);
    worst_naive = std::max(worst_naive, nv);
    c.expect(dn <= 1e-10, "unitarity trial " + std::to_string(trial));
    c.expect(trip <= 1e-10, "round trip trial " + std::to_string(trial));
    c.expect(nv <= 1e-10, "naive DFT trial " + std::to_string(trial));

    const std::size_t H = uniform_index(rng, 1, 16), W = uniform_index(rng, 1, 16);
    const DenseTensor xr = random_tensor({H, W, uniform_index(rng, 1, 3)}, rng);
    const DenseTensor m =
        random_tensor({uniform_index(rng, 1, std::min<std::size_t>(5, H)), uniform_index(rng, 1, std::min<std::size_t>(5, W)),
                       uniform_index(rng, 1, 3), xr.dim(2)},
                      rng);
    const DenseTensor spatial = naive_conv(xr, m);
    const double dc = std::max(rel_diff(conv2d_spectral(xr, m), spatial), rel_diff(conv2d_circular(xr, m), spatial));
    worst_conv = std::max(worst_conv, dc);
    c.expect(dc <= 1e-10, "convolution theorem trial " + std::to_string(trial));
  }
  c.note("200 tensors; norm " + fmt(worst_norm) + ", round trip " + fmt(worst_trip) + ", vs naive " +
         fmt(worst_naive) + ", conv " + fmt(worst_conv));
  return c.outcome();
}

// ---- 2. Operator-norm bounds

double oracle_norm(const LinearMap& fwd, const LinearMap& adj, const Shape& in, std::uint64_t seed) {
  OracleOptions o;
  o.tol = 1e-12;
  o.seed = seed;
  return operator_norm_oracle(fwd, in, o, adj);
}

Outcome criterion_opnorm() {
  Check c;
  std::mt19937_64 rng(2002);
  double slack_fc = 0, slack_conv = 0, slack_hi = 0, exact_dev = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t seed = static_cast<std::uint64_t>(trial);
    {
      // FC vectors form, applied through the layer kernel.
      const std::size_t s1 = uniform_index(rng, 1, 4), s2 = uniform_index(rng, 1, 4);
      const std::size_t o1 = uniform_index(rng, 1, 4), o2 = uniform_index(rng, 1, 4);
      const Layer l = Layer::fc_cp_layer(random_cp({{s1}, {s2}, {o1}, {o2}}, uniform_index(rng, 1, 6), rng), FcMode::vectors);
      const double bound = opnorm_bound_fc(l.cp);
      const double norm = oracle_norm([&](const DenseTensor& x) { return apply_linear(l, x); },
                                      [&](const DenseTensor& y) { return apply_linear_adjoint(l, y); }, {s1, s2}, seed);
      slack_fc = std::max(slack_fc, norm - bound);
      c.expect(norm <= bound + 1e-9, "FC bound trial " + std::to_string(trial));
    }
    {
      const std::size_t s = uniform_index(rng, 1, 4), o = uniform_index(rng, 1, 4);
      const std::size_t kx = uniform_index(rng, 1, 3), ky = uniform_index(rng, 1, 3);
      const FrequencyGrid grid(uniform_index(rng, std::max<std::size_t>(kx, 2), 7), uniform_index(rng, std::max<std::size_t>(ky, 2), 7));
      const CPKernel k = random_cp({{s}, {o}, {kx, ky}}, uniform_index(rng, 1, 6), rng);
      const DenseTensor m = conv_cp_dense(k);
      const double norm = oracle_norm([&](const DenseTensor& x) { return conv2d_circular(x, m); },
                                      [&](const DenseTensor& y) { return conv2d_circular_adjoint(y, m); },
                                      {grid.height, grid.width, s}, seed);
      const double bound = opnorm_bound_conv(k, grid), exact = conv_operator_norm_exact(m, grid);
      slack_conv = std::max(slack_conv, norm - bound);
      exact_dev = std::max(exact_dev, std::abs(norm - exact) / exact);
      c.expect(norm <= bound + 1e-9, "conv bound trial " + std::to_string(trial));
      c.expect(std::abs(norm - exact) <= 1e-6 * exact, "exact conv norm trial " + std::to_string(trial));
    }
    {
      // Spatial factor first, then two channel matrices.
      const std::size_t kx = uniform_index(rng, 1, 3), ky = uniform_index(rng, 1, 3);
      const FrequencyGrid grid(uniform_index(rng, std::max<std::size_t>(kx, 2), 6), uniform_index(rng, std::max<std::size_t>(ky, 2), 6));
      const std::size_t o1 = uniform_index(rng, 1, 3), s1 = uniform_index(rng, 1, 3);
      const std::size_t o2 = uniform_index(rng, 1, 2), s2 = uniform_index(rng, 1, 2);
      const CPKernel h = random_cp({{kx, ky}, {o1, s1}, {o2, s2}}, uniform_index(rng, 1, 5), rng);
      const DenseTensor m = higher_conv_dense(h);
      const double norm = oracle_norm([&](const DenseTensor& x) { return conv2d_circular(x, m); },
                                      [&](const DenseTensor& y) { return conv2d_circular_adjoint(y, m); },
                                      {grid.height, grid.width, s1 * s2}, seed);
      const double bound = opnorm_bound_higher_conv(h, grid);
      slack_hi = std::max(slack_hi, norm - bound);
      c.expect(norm <= bound + 1e-9, "higher-order conv bound trial " + std::to_string(trial));
    }
  }
  // Rank-one matrix factors make the FC bound an equality.
  double tight = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t o1 = uniform_index(rng, 1, 4), s1 = uniform_index(rng, 1, 4);
    const std::size_t o2 = uniform_index(rng, 1, 4), s2 = uniform_index(rng, 1, 4);
    CPKernel k({{o1, s1}, {o2, s2}});
    const double lam = 0.5 + static_cast<double>(trial);
    k.add_component(lam, {outer_product({unit_random({o1}, rng).storage(), unit_random({s1}, rng).storage()}),
                          outer_product({unit_random({o2}, rng).storage(), unit_random({s2}, rng).storage()})});
    const Layer l = Layer::fc_cp_layer(k, FcMode::matrices);
    const double norm = oracle_norm([&](const DenseTensor& x) { return apply_linear(l, x); },
                                    [&](const DenseTensor& y) { return apply_linear_adjoint(l, y); }, {s1, s2},
                                    static_cast<std::uint64_t>(trial));
    tight = std::max(tight, std::abs(norm - opnorm_bound_fc(k)));
    c.expect(std::abs(norm - opnorm_bound_fc(k)) <= 1e-8, "rank-one tightness trial " + std::to_string(trial));
  }
  c.note("100 kernels per form; max(oracle - bound) fc " + fmt(slack_fc) + ", conv " + fmt(slack_conv) +
         ", higher " + fmt(slack_hi) + "; exact conv rel dev " + fmt(exact_dev) + "; rank-one gap " + fmt(tight));
  return c.outcome();
}

// ---- 3. CP-ALS

Outcome criterion_als() {
  Check c;
  std::mt19937_64 rng(3003);
  double worst_known = 0, worst_cap = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t R = uniform_index(rng, 1, 4);
    std::vector<Shape> modes;
    const std::size_t order = uniform_index(rng, 3, 4);
    for (std::size_t j = 0; j < order; ++j) modes.push_back({uniform_index(rng, 3, 12)});
    std::size_t size = 1;
    for (const auto& m : modes) size *= m[0];
    if (size > 20000) modes.pop_back();
    const CPKernel truth = random_cp(modes, R, rng);
    std::vector<std::vector<std::size_t>> grouping;
    for (std::size_t j = 0; j < modes.size(); ++j) grouping.push_back({j});
    AlsOptions o;
    o.seed = static_cast<std::uint64_t>(trial);
    o.max_iter = 5000;
    o.target_error = 1e-9;
    o.restarts = 4;
    const double err = rel_diff(reconstruct(cp_als(reconstruct(truth), R, grouping, o).kernel), reconstruct(truth));
    worst_known = std::max(worst_known, err);
    c.expect(err <= 1e-6, "known rank trial " + std::to_string(trial) + " err " + fmt(err));
  }
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t s = uniform_index(rng, 1, 8), o = uniform_index(rng, 1, 8);
    const std::size_t kx = uniform_index(rng, 1, 3), ky = uniform_index(rng, 1, 3);
    const DenseTensor t = random_tensor({s, o, kx, ky}, rng);
    const std::size_t cap = cp_rank_cap({{s}, {o}, {kx, ky}});
    AlsOptions opts;
    opts.seed = static_cast<std::uint64_t>(trial);
    const AlsResult r = cp_als(t, cap, {{0}, {1}, {2, 3}}, opts);
    const double err = rel_diff(reconstruct(r.kernel), t);
    worst_cap = std::max(worst_cap, err);
    c.expect(err <= 1e-3, "rank cap trial " + std::to_string(trial) + " err " + fmt(err));
  }
  c.note("known rank worst " + fmt(worst_known) + "; rank cap worst " + fmt(worst_cap));
  return c.outcome();
}

// ---- 4. Gradient check

Outcome criterion_gradcheck() {
  Check c;
  const auto idx = cpcert::testing::first_indices(16);
  for (const char* preset : {"toy-cnn", "toy-fc"}) {
    PresetOptions po;
    po.seed = 4004;
    const NetworkModel m = make_preset(preset, po);
    const Dataset d = make_synthetic(4, 4, m.input_shape, 4005);
    const auto r = cpcert::testing::check_gradients(m, d, idx, 1e-5);
    c.expect(r.worst_rel <= 1e-5, std::string(preset) + " worst " + fmt(r.worst_rel));
    c.note(std::string(preset) + ": " + std::to_string(r.checked) + " params, worst rel " + fmt(r.worst_rel));
  }
  return c.outcome();
}

// ---- 5 and 6 share one trained toy-cnn.

struct Trained {
  NetworkModel model;
  Dataset data;
};

const Trained& trained_toy_cnn() {
  static const Trained t = [] {
    Trained r;
    r.data = make_synthetic(4, 64, {8, 8, 1}, 5005);
    PresetOptions po;
    po.seed = 5006;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 5007;
    r.model = train(make_toy_cnn(po), r.data, cfg).model;
    return r;
  }();
  return t;
}

Outcome criterion_guarantee() {
  Check c;
  const Trained& t = trained_toy_cnn();
  c.note("256 samples, train acc " + fmt(1.0 - margin_loss(t.model, t.data, 0.0)));
  for (double eps : {0.05, 0.1, 0.3}) {
    CompressOptions o;
    o.epsilon = eps;
    try {
      const CompressResult r = compress(t.model, t.data, o);
      // Independent recheck of the residual on every sample.
      const double dev = max_relative_deviation(t.model, r.model, t.data, Execution::serial);
      c.expect(dev <= eps, "eps " + fmt(eps) + " residual " + fmt(dev));
      c.expect(r.verification.chain_ok, "eps " + fmt(eps) + " chain");
      bool chain = true;
      for (std::size_t k = 0; k < r.verification.chain_bound.size(); ++k)
        chain = chain && r.verification.chain_measured[k] <= r.verification.chain_bound[k] * (1 + 1e-9) + 1e-12;
      c.expect(chain, "eps " + fmt(eps) + " per-depth chain");
      std::ostringstream ranks;
      for (std::size_t k = 0; k < r.plan.layers.size(); ++k) ranks << (k ? "," : "") << r.plan.layers[k].rank;
      c.note("eps " + fmt(eps) + ": ranks " + ranks.str() + ", residual " + fmt(dev));
    } catch (const VerificationError& e) {
      c.expect(false, std::string("eps ") + fmt(eps) + ": " + e.what());
    }
  }
  return c.outcome();
}

Outcome criterion_monotone() {
  Check c;
  const Trained& t = trained_toy_cnn();
  const PropertyTable table = compute_properties(t.model, t.data);
  std::vector<std::size_t> prev;
  for (double eps : {0.02, 0.05, 0.1, 0.2, 0.4, 0.8}) {
    const std::vector<std::size_t> r = fbrc(t.model, table, eps).ranks();
    if (!prev.empty())
      for (std::size_t k = 0; k < r.size(); ++k) c.expect(r[k] <= prev[k], "rank layer " + std::to_string(k) + " at eps " + fmt(eps));
    prev = r;
  }
  std::vector<double> ms = margins(t.model, t.data);
  std::sort(ms.begin(), ms.end());
  const double med = ms[ms.size() / 2];
  std::size_t prev_d = std::numeric_limits<std::size_t>::max();
  double prev_l = -1.0;
  for (double f : {0.1, 0.25, 0.5, 1.0, 1.5, 2.0}) {
    const double gamma = f * med;
    RankOptions ro;
    ro.gamma = gamma;
    const CompressionPlan p = fbrc(t.model, table, std::min(1.0, epsilon_from_gamma(gamma, table.max_output_norm)), ro);
    const BoundReport b = generalization_bound(t.model, t.data, gamma, p);
    c.expect(b.params.d_eff <= prev_d, "d_eff at gamma " + fmt(gamma));
    c.expect(b.margin_loss >= prev_l, "margin loss at gamma " + fmt(gamma));
    prev_d = b.params.d_eff;
    prev_l = b.margin_loss;
  }
  std::size_t profiles = 0;
  for (const auto& l : table.layers)
    for (TfVariant v : {TfVariant::per_frequency, TfVariant::per_component}) {
      const SpectrumProfile& p = l.profile(v);
      for (std::size_t j = 1; j < p.tf.size(); ++j) c.expect(p.tf[j] >= p.tf[j - 1], "tf order");
      for (std::size_t j = 1; j < p.nb.size(); ++j) c.expect(p.nb[j] <= p.nb[j - 1], "nb order");
      ++profiles;
    }
  c.note("eps grid ranks end at " + std::to_string(prev[0]) + "," + std::to_string(prev[1]) + "," +
         std::to_string(prev[2]) + "; gamma grid ends d_eff " + std::to_string(prev_d) + ", loss " + fmt(prev_l) +
         "; " + std::to_string(profiles) + " tf/nb profiles");
  return c.outcome();
}

// ---- 7. Clean vs corrupted

Outcome criterion_corruption() {
  Check c;
  std::size_t wins = 0;
  std::ostringstream pairs;
  for (std::uint64_t p = 0; p < 10; ++p) {
    const Dataset clean = make_synthetic(4, 64, {8, 8, 1}, 7000 + p);
    const Dataset noisy = corrupt_labels(clean, 0.5, 7100 + p);
    PresetOptions po;
    po.seed = 7200 + p;
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.seed = 7300 + p;
    const NetworkModel init = make_toy_cnn(po);
    const NetworkModel mc = train(init, clean, cfg).model;
    const NetworkModel mn = train(init, noisy, cfg).model;
    std::vector<double> ms = margins(mc, clean);
    std::sort(ms.begin(), ms.end());
    const double gamma = ms[ms.size() / 2];
    const auto total = [&](const NetworkModel& m, const Dataset& d) {
      const PropertyTable t = compute_properties(m, d);
      RankOptions ro;
      ro.gamma = gamma;
      return fbrc(m, t, std::min(1.0, epsilon_from_gamma(gamma, t.max_output_norm)), ro).total_rank();
    };
    const std::size_t rc = total(mc, clean), rn = total(mn, noisy);
    if (rc < rn) ++wins;
    pairs << (p ? " " : "") << rc << "/" << rn;
  }
  c.expect(wins >= 8, "clean < corrupted in " + std::to_string(wins) + "/10 pairs");
  c.note("total rank clean/corrupted: " + pairs.str());
  return c.outcome();
}

// ---- 8. Arithmetic anchors

Outcome criterion_anchors() {
  Check c;
  const double original = 512.0 * 512.0 * 9.0;
  const struct {
    double effective, printed;
    std::size_t rank;
  } rows[] = {{350526, 0.148572, 339}, {42394, 0.017969, 41}, {124080, 0.052592, 120}};
  for (const auto& r : rows) {
    const double ratio = compression_ratio(r.effective, original);
    c.expect(std::abs(ratio - r.printed) <= 1e-6, "ratio " + fmt(ratio) + " vs " + fmt(r.printed));
    c.expect(conv_effective_parameters(512, 512, 3, 3, r.rank) == static_cast<std::size_t>(r.effective),
             "effective count at rank " + std::to_string(r.rank));
  }
  for (const char* preset : {"toy-cnn", "toy-fc"})
    for (std::uint64_t seed : {0, 1, 2}) {
      PresetOptions po;
      po.seed = seed;
      const NetworkModel m = make_preset(preset, po);
      c.expect(cp_compression_factor(threshold_plan(m, 0.0), m) == 1.0, std::string(preset) + " threshold 0");
    }
  const Trained& t = trained_toy_cnn();
  c.expect(cp_compression_factor(threshold_plan(t.model, 0.0), t.model) == 1.0, "trained threshold 0");
  c.note("3 ratios within 1e-6; threshold 0 gives 1x on 7 models");
  return c.outcome();
}

// ---- 9. Skip connections

Outcome criterion_skip() {
  Check c;
  for (std::uint64_t seed : {0, 1, 2}) {
    PresetOptions po;
    po.seed = 9000 + seed;
    NetworkModel m = make_cnn({8, 8, 4}, {4, 4, 4, 4}, 3, po);
    for (auto& l : m.layers) l.skip = true;
    const Dataset d = make_synthetic(4, 16, {8, 8, 4}, 9100 + seed);
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 9200 + seed;
    // Residual sums double the activation scale, so the default step kills some units.
    cfg.learning_rate = 0.002;
    m = train(m, d, cfg).model;
    const PropertyTable t = compute_properties(m, d);
    for (double eps : {0.05, 0.1, 0.3}) {
      CompressOptions o;
      o.epsilon = eps;
      try {
        const CompressResult r = compress(m, d, o);
        c.expect(r.plan.rule == RankRule::fbrc_skip, "rule");
        const double dev = max_relative_deviation(m, r.model, d, Execution::serial);
        c.expect(dev <= eps, "seed " + std::to_string(seed) + " eps " + fmt(eps) + " residual " + fmt(dev));
        const auto plain = fbrc(m, t, eps).ranks(), skip = r.plan.ranks();
        for (std::size_t k = 0; k < skip.size(); ++k)
          c.expect(skip[k] >= plain[k], "seed " + std::to_string(seed) + " eps " + fmt(eps) + " layer " + std::to_string(k));
        if (seed == 0 && eps == 0.1) {
          std::ostringstream os;
          for (std::size_t k = 0; k < skip.size(); ++k) os << (k ? "," : "") << skip[k] << ">=" << plain[k];
          c.note("eps 0.1 ranks skip>=plain " + os.str() + ", residual " + fmt(dev));
        }
      } catch (const VerificationError& e) {
        c.expect(false, e.what());
      }
    }
  }
  c.note("3 nets x 3 eps");
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--expect-fail", expect_fail, "Criteria whose failure does not change the exit code");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "fourier", 10, criterion_fourier},       {2, "operator-norm bounds", 60, criterion_opnorm},
      {3, "cp-als", 60, criterion_als},            {4, "gradient check", 60, criterion_gradcheck},
      {5, "compression guarantee", 120, criterion_guarantee}, {6, "monotonicity", 120, criterion_monotone},
      {7, "clean vs corrupted", 900, criterion_corruption},   {8, "arithmetic anchors", 60, criterion_anchors},
      {9, "skip connections", 120, criterion_skip},
  };
  const std::set<int> selected(only.begin(), only.end()), tolerated(expect_fail.begin(), expect_fail.end());
  int hard_failures = 0;
  for (const auto& cr : all) {
    if (!selected.empty() && !selected.count(cr.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > cr.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(cr.budget_s) + " s budget";
    }
    const bool tolerated_fail = !o.pass && tolerated.count(cr.id);
    std::printf("criterion %d %-22s %s (%.1f s) %s%s\n", cr.id, cr.name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str(), tolerated_fail ? " [known failure, see README]" : "");
    std::fflush(stdout);
    if (!o.pass && !tolerated_fail) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
