#include "cat/training/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "cat/data/frustum.hpp"
#include "cat/data/synthetic.hpp"
#include "cat/objective/loss.hpp"
#include "cat/training/training.hpp"

namespace cat::training {

namespace {

constexpr std::uint64_t kProbeStream = 0x50524f42;  // "PROB"

double relative(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

std::vector<data::FrustumSample> probe_samples(std::size_t count, std::size_t n_points,
                                               std::uint64_t seed) {
  data::SceneSpec spec;
  std::vector<data::FrustumSample> out;
  for (std::uint64_t scene = 0; out.size() < count; ++scene) {
    Rng rng = derive_rng(seed, {kProbeStream, scene});
    const auto s = data::generate_synthetic_scene(spec, rng);
    std::vector<data::KittiObject> labels;
    for (const auto& o : s.objects) labels.push_back(o.label);
    auto kept = data::filter_samples(data::build_frame_samples("probe" + std::to_string(scene),
                                                               s.cloud, labels, s.calib, n_points,
                                                               seed))
                    .kept;
    for (auto& k : kept)
      if (out.size() < count) out.push_back(std::move(k));
  }
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(const model::ModelConfig& config, const GradcheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  auto model = make_model(config, options.seed);
  const auto samples = probe_samples(options.batch_size, config.n_points, options.seed);
  const Batch batch = make_batch(samples, config.n_points);

  auto loss_value = [&] {
    tensor::NoGradGuard guard;
    const auto out = model.forward(batch.points);
    return objective::total_loss(out.boxes, out.direction_logits, batch.gt).total_value;
  };

  auto& params = model.parameters();
  tensor::zero_grads(params);
  tensor::set_kink_trace(true);
  {
    const auto out = model.forward(batch.points);
    objective::total_loss(out.boxes, out.direction_logits, batch.gt).total.backward();
  }
  const std::uint64_t base_pattern = tensor::kink_trace();
  const double base_loss = loss_value();

  GradcheckReport report;
  Rng rng = derive_rng(options.seed, {kProbeStream, 0xffff});
  for (auto& p : params) {
    auto values = p.tensor.mutable_data();
    const std::vector<double> saved(values.begin(), values.end());
    const std::vector<double> grad(p.tensor.grad().begin(), p.tensor.grad().end());
    GroupCheck g;
    g.name = p.name;

    // Difference quotient along `dir`. An evaluation whose activation sign
    // pattern differs from the base point's lies across a kink, where the
    // quotient is not the derivative. Such probes fall back to a
    // second-order one-sided stencil on a kink-free side, then to a halved
    // step.
    auto probe = [&](const std::vector<std::pair<std::size_t, double>>& dir) {
      auto eval = [&](double t) {
        for (const auto& [i, d] : dir) values[i] = saved[i] + t * d;
        tensor::set_kink_trace(true);
        const double f = loss_value();
        const bool same = tensor::kink_trace() == base_pattern;
        for (const auto& [i, d] : dir) values[i] = saved[i];
        return std::pair{f, same};
      };
      double h = options.step;
      for (std::size_t attempt = 0;; ++attempt) {
        const auto [fp, clean_p] = eval(h);
        const auto [fm, clean_m] = eval(-h);
        if (clean_p && clean_m) return (fp - fm) / (2.0 * h);
        for (double side : {1.0, -1.0}) {
          if (!(side > 0 ? clean_p : clean_m)) continue;
          const auto [f2, clean_2] = eval(2.0 * side * h);
          if (clean_2) return side * (-3.0 * base_loss + 4.0 * (side > 0 ? fp : fm) - f2) / (2.0 * h);
        }
        if (attempt == options.max_halvings) {
          ++g.kinked_probes;
          return (fp - fm) / (2.0 * h);
        }
        ++g.step_halvings;
        h /= 2.0;
      }
    };

    // Directional derivative along a unit-norm Rademacher direction.
    std::vector<std::pair<std::size_t, double>> dir(values.size());
    const double unit = 1.0 / std::sqrt(static_cast<double>(dir.size()));
    double analytic = 0.0;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      dir[i] = {i, (rng() & 1) ? unit : -unit};
      analytic += dir[i].second * grad[i];
    }
    g.directional_error = relative(analytic, probe(dir), options.floor);

    std::size_t biggest = 0;
    for (std::size_t i = 1; i < grad.size(); ++i)
      if (std::abs(grad[i]) > std::abs(grad[biggest])) biggest = i;
    g.max_entry_error = relative(grad[biggest], probe({{biggest, 1.0}}), options.floor);
    const auto pick = static_cast<std::size_t>(rng() % grad.size());
    g.random_entry_error = relative(grad[pick], probe({{pick, 1.0}}), options.floor);

    g.worst = std::max({g.directional_error, g.max_entry_error, g.random_entry_error});
    g.passed = g.worst < options.tolerance;
    if (g.worst >= report.worst) {
      report.worst = g.worst;
      report.worst_group = g.name;
    }
    report.step_halvings += g.step_halvings;
    report.kinked_probes += g.kinked_probes;
    report.groups.push_back(std::move(g));
  }
  tensor::set_kink_trace(false);
  report.passed = std::all_of(report.groups.begin(), report.groups.end(),
                              [](const GroupCheck& g) { return g.passed; });
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string format_gradcheck(const GradcheckReport& r) {
  std::string s;
  char buf[256];
  for (const auto& g : r.groups) {
    std::snprintf(buf, sizeof buf, "%-48s %.3e  %s\n", g.name.c_str(), g.worst,
                  g.passed ? "ok" : "FAIL");
    s += buf;
  }
  std::snprintf(buf, sizeof buf,
                "worst %.3e in %s, %zu groups, %zu step halvings, %zu kinked probes, %.1f s: %s\n",
                r.worst, r.worst_group.c_str(), r.groups.size(), r.step_halvings, r.kinked_probes,
                r.seconds, r.passed ? "PASS" : "FAIL");
  return s + buf;
}

}  // namespace cat::training
