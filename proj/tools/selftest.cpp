#include "selftest.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include "sfit/losses.hpp"
#include "sfit/rng.hpp"

namespace sfit::tools {
namespace {

using namespace sfit::losses;

class Report {
 public:
  explicit Report(std::ostream& out) : out_(out) {}

  void check(const std::string& name, bool ok, const std::string& detail = {}) {
    out_ << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) out_ << "  (" << detail << ")";
    out_ << "\n";
    all_ &= ok;
  }

  void value(const std::string& name, double got, double want, double tol = 1e-6) {
    check(name, std::abs(got - want) <= tol, "got " + std::to_string(got) + ", want " + std::to_string(want));
  }

  bool all() const { return all_; }

 private:
  std::ostream& out_;
  bool all_ = true;
};

TensorD make(Shape shape, std::vector<double> v) { return TensorD(std::move(shape), std::move(v)); }

TensorD random_tensor(Shape shape, Rng& rng) {
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

using Objective = std::function<LossValue<double>(const TensorD&)>;

/// Largest violation of |analytic - fd| <= max(1e-4, 1e-3 |fd|), as a ratio.
double gradient_violation(const Objective& f, TensorD x) {
  const double h = 1e-3;
  const auto analytic = f(x).grad;
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x).value;
    x[i] = keep - h;
    const double down = f(x).value;
    x[i] = keep;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1e-4, 1e-3 * std::abs(fd)));
  }
  return worst;
}

/// Pulls a probability-space loss back to logits so finite differences stay on the simplex.
Objective through_softmax(std::function<LossValue<double>(const TensorD&)> loss) {
  return [loss](const TensorD& logits) {
    const auto p = nn::softmax(logits);
    auto v = loss(p);
    v.grad = nn::softmax_backward(p, v.grad);
    return v;
  };
}

void analytic_examples(Report& r) {
  const auto half = make({1, 2}, {0.5, 0.5});
  r.value("kd identical", kd_loss(half, half).value, 0.0);
  r.value("kd one-hot vs uniform", kd_loss(make({1, 2}, {1, 0}), half).value, std::numbers::ln2);
  const auto quarter = make({1, 4}, {0.25, 0.25, 0.25, 0.25});
  r.value("kd uniform 4", kd_loss(quarter, quarter).value, 0.0);

  const auto eye = make({2, 1, 2}, {1, 0, 0, 1});
  const auto hadamard = make({2, 1, 2}, {1, 1, 1, -1});
  const auto g = gram(hadamard);
  r.check("gram [[1,1],[1,-1]]", g.at(0, 0) == 2 && g.at(0, 1) == 0 && g.at(1, 0) == 0 && g.at(1, 1) == 2);
  const auto gn = normalize_rows(g);
  r.check("normalize [[2,0],[0,2]]", gn.at(0, 0) == 1 && gn.at(1, 1) == 1 && gn.at(0, 1) == 0);
  const auto zero_row = normalize_rows(gram(make({2, 1, 2}, {2, 0, 0, 0})));
  r.check("normalize zero row", zero_row.at(1, 0) == 0 && zero_row.at(1, 1) == 0 && zero_row.at(0, 0) == 1);

  r.value("rp normalized Grams equal", rp_loss(eye, hadamard).value, 0.0);
  r.value("rp partial rank", rp_loss(eye, make({2, 1, 2}, {1, 1, 0, 0})).value, 0.5);
  r.value("style hand example", style_loss(eye, hadamard).value, 0.5);
  r.value("mmd oracle hand example", mmd_poly2_oracle(eye, hadamard), 2.0);

  const auto x = make({1, 1, 2, 2}, {0.1, -0.3, 0.5, 0.7});
  auto shifted = x;
  for (auto& v : shifted.values()) v += 0.1;
  r.value("id constant offset", id_loss(shifted, x).value, 0.1, 1e-12);

  TensorD uniform10({3, 10}, 0.1);
  r.value("diversity uniform", diversity_loss(uniform10).value, -std::log(10.0));
  r.value("diversity one-hot", diversity_loss(make({2, 2}, {1, 0, 1, 0})).value, 0.0);

  const double p_half[] = {0.5, 0.5};
  const double p_one[] = {0.0, 1.0};
  r.value("pseudo disagreement", pseudo_label_loss(p_half, 2, 0, 1), 0.0);
  r.value("pseudo confident", pseudo_label_loss(p_one, 2, 1, 1), 0.0);
  r.value("pseudo p=0.5", pseudo_label_loss(p_half, 2, 0, 0), std::numbers::ln2);

  r.value("batch variant B=1", batch_similarity_loss(make({1, 3}, {1, 2, 3}), make({1, 3}, {-4, 0, 2})).value, 0.0);
  const std::vector<BnStats<double>> running{{{0.0, 0.0}, {1.0, 1.0}}};
  const std::vector<BnStats<double>> shifted_stats{{{1.0, 0.0}, {1.0, 1.0}}};
  r.value("bn stats mean offset", bn_stats_loss(shifted_stats, running), 1.0);
  r.value("total default weights", total_sfit_loss({}, {.kd = 0.2, .rp = 0.3}), 0.5, 1e-15);
}

void gradient_checks(Report& r) {
  Rng rng(7);
  const auto check = [&](const std::string& name, const Objective& f, const TensorD& x) {
    const double v = gradient_violation(f, x);
    r.check("grad " + name, v <= 1.0, "worst ratio " + std::to_string(v));
  };
  for (const Shape& shape : {Shape{4, 3, 3}, Shape{2, 4, 3, 3}}) {
    const auto tag = shape.size() == 3 ? std::string(" 4x3x3") : std::string(" 2x4x3x3");
    const auto ft = random_tensor(shape, rng);
    const auto fs = random_tensor(shape, rng);
    check("rp" + tag, [&](const TensorD& f) { return rp_loss(ft, f); }, fs);
    check("style" + tag, [&](const TensorD& f) { return style_loss(ft, f); }, fs);
    check("id" + tag, [&](const TensorD& f) { return id_loss(f, ft); }, fs);
    check("content" + tag, [&](const TensorD& f) { return content_loss(f, ft); }, fs);
    check("pixel" + tag, [&](const TensorD& f) { return pixel_similarity_loss(ft, f); }, fs);
  }
  const auto pt = random_tensor({2, 4, 3, 3}, rng);
  check("batch 2x4x3x3", [&](const TensorD& f) { return batch_similarity_loss(pt, f); },
        random_tensor({2, 4, 3, 3}, rng));

  const auto target_p = nn::softmax(random_tensor({4, 5}, rng));
  check("kd (logits)", through_softmax([&](const TensorD& p) { return kd_loss(target_p, p); }),
        random_tensor({4, 5}, rng));
  check("diversity (logits)", through_softmax([](const TensorD& p) { return diversity_loss(p); }),
        random_tensor({4, 5}, rng));
  check("pseudo (logits)",
        through_softmax([](const TensorD& p) { return pseudo_label_loss(p, {0, 1, 2, 3}, {0, 4, 2, 3}); }),
        random_tensor({4, 5}, rng));

  const auto running = activation_stats(random_tensor({3, 4, 3, 3}, rng));
  check("bn stats",
        [&](const TensorD& x) {
          BnStatsGrad g;
          const double v = bn_stats_loss(std::vector{activation_stats(x)}, std::vector{running}, &g);
          return LossValue<double>{v, activation_stats_backward(x, g.d_mean[0], g.d_var[0])};
        },
        random_tensor({2, 4, 3, 3}, rng));
}

void gram_properties(Report& r) {
  Rng rng(11);
  double worst_equiv = 0;
  bool invariant = true, style_moves = true;
  for (int i = 0; i < 50; ++i) {
    const auto a = random_tensor({4, 3, 3}, rng);
    const auto b = random_tensor({4, 3, 3}, rng);
    const double oracle = mmd_poly2_oracle(a, b);
    const double style = 16.0 * style_loss(a, b).value;
    worst_equiv = std::max(worst_equiv, std::abs(style - oracle) / std::max(std::abs(oracle), 1e-300));
    auto b2 = b;
    for (auto& v : b2.values()) v *= 2;
    invariant &= std::abs(rp_loss(a, b2).value - rp_loss(a, b).value) <= 1e-9;
    style_moves &= style_loss(a, b2).value != style_loss(a, b).value;
  }
  r.check("style/mmd equivalence (50 pairs)", worst_equiv < 1e-6, "worst rel " + std::to_string(worst_equiv));
  r.check("rp scale invariance", invariant);
  r.check("style scale sensitivity", style_moves);
}

}  // namespace

bool run_selftest(std::ostream& out) {
  Report r(out);
  analytic_examples(r);
  gradient_checks(r);
  gram_properties(r);
  out << (r.all() ? "selftest: all checks passed\n" : "selftest: FAILURES\n");
  return r.all();
}

}  // namespace sfit::tools
