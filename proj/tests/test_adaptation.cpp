#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "conda/adaptation.hpp"
#include "conda/clustering.hpp"
#include "conda/harness.hpp"

using namespace conda;

namespace {

std::pair<Dataset, Dataset> small_moons(std::uint64_t seed, std::size_t n_per_class = 100) {
  DomainPairConfig cfg = DomainPairConfig::preset("moons-rot30");
  cfg.n_per_class = n_per_class;
  cfg.seed = seed;
  return make_domain_pair(cfg);
}

SourceConfig quick_source() {
  SourceConfig sc;
  sc.generator.hidden_widths = {16, 16};
  sc.generator.feature_dim = 8;
  sc.epochs = 30;
  return sc;
}

std::vector<double> snapshot_params(Model& m, bool hyp) {
  std::vector<double> out;
  for (const Param* p : m.params(hyp))
    out.insert(out.end(), p->value.raw().begin(), p->value.raw().end());
  return out;
}

}  // namespace

TEST_CASE("lr_schedule closed forms") {
  OptimState s;
  s.eta0 = 1e-3;
  s.progress = 0.0;
  CHECK(lr_schedule(s) == 1e-3);
  s.progress = 1.0;
  CHECK(lr_schedule(s) == doctest::Approx(1e-3 * std::pow(11.0, -0.75)).epsilon(1e-14));
  CHECK(lr_schedule(s) == doctest::Approx(1.656e-4).epsilon(1e-3));
  s.progress = 0.1;
  CHECK(lr_schedule(s) == doctest::Approx(1e-3 * std::pow(2.0, -0.75)).epsilon(1e-14));

  // strictly decreasing in p
  double last = 1e9;
  for (double p = 0.0; p <= 1.0; p += 0.05) {
    s.progress = p;
    const double lr = lr_schedule(s);
    CHECK(lr < last);
    last = lr;
  }
}

TEST_CASE("sample_lambda distribution checks") {
  SUBCASE("rho <= 0 is an error") {
    Rng rng(1);
    CHECK_THROWS(sample_lambda(0.0, rng));
    CHECK_THROWS(sample_lambda(-1.0, rng));
  }
  SUBCASE("rho = 1 is Uniform(0,1): mean and KS distance") {
    Rng rng(2);
    const std::size_t n = 100000;
    std::vector<double> draws(n);
    double mean = 0;
    for (auto& d : draws) {
      d = sample_lambda(1.0, rng);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      mean += d;
    }
    mean /= n;
    CHECK(std::fabs(mean - 0.5) < 0.01);
    std::sort(draws.begin(), draws.end());
    double ks = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double emp_hi = static_cast<double>(i + 1) / n;
      const double emp_lo = static_cast<double>(i) / n;
      ks = std::max({ks, std::fabs(emp_hi - draws[i]), std::fabs(draws[i] - emp_lo)});
    }
    CHECK(ks < 0.01);
  }
  SUBCASE("rho = 0.5 stays in [0,1] and is symmetric about 0.5") {
    Rng rng(3);
    double mean = 0;
    const std::size_t n = 100000;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sample_lambda(0.5, rng);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
      mean += d;
    }
    CHECK(std::fabs(mean / n - 0.5) < 0.01);
  }
}

TEST_CASE("sgd_step closed forms") {
  auto make_param = [](double v, bool head) {
    Param p(Matrix(1, 1, v), head);
    return p;
  };

  SUBCASE("momentum 0 is plain gradient descent") {
    Param p = make_param(1.0, false);
    p.grad(0, 0) = 2.0;
    sgd_step({&p}, 0.1, 0.0, 10.0);
    CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * 2.0).epsilon(1e-15));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Param p = make_param(3.0, false);
    sgd_step({&p}, 0.1, 0.9, 10.0);
    CHECK(p.value(0, 0) == 3.0);
  }
  SUBCASE("two steps with momentum 0.9 and constant grad displace lr*(g + 1.9g)") {
    Param p = make_param(0.0, false);
    const double g = 0.5, lr = 0.01;
    p.grad(0, 0) = g;
    sgd_step({&p}, lr, 0.9, 10.0);
    p.grad(0, 0) = g;
    sgd_step({&p}, lr, 0.9, 10.0);
    CHECK(p.value(0, 0) == doctest::Approx(-lr * (g + 1.9 * g)).epsilon(1e-14));
  }
  SUBCASE("head params get the multiplier") {
    Param p = make_param(0.0, true);
    p.grad(0, 0) = 1.0;
    sgd_step({&p}, 0.01, 0.0, 10.0);
    CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-15));
  }
  SUBCASE("NaN gradient aborts") {
    Param p = make_param(0.0, false);
    p.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(sgd_step({&p}, 0.01, 0.0, 10.0));
  }
}

TEST_CASE("make_virtual_batch") {
  Rng rng(5);
  Matrix x(6, 2);
  for (auto& v : x.raw()) v = rng.normal();
  std::vector<int> y = {0, 1, 0, 1, 0, 1};

  SUBCASE("fewer than 2 samples is an error") {
    CHECK_THROWS(make_virtual_batch(Matrix(1, 2, 0.0), {0}, 1.0, rng));
  }
  SUBCASE("recombination identity holds elementwise") {
    Rng r2(6);
    const VirtualBatch vb = make_virtual_batch(x, y, 1.0, r2);
    // recover the beta permutation by replaying the rng
    Rng replay(6);
    const auto beta = replay.permutation(6);
    for (std::size_t i = 0; i < 6; ++i) {
      const double lam = sample_lambda(1.0, replay);
      CHECK(lam == vb.lambdas[i]);
      for (std::size_t j = 0; j < 2; ++j) {
        const double expect = lam * x(i, j) + (1.0 - lam) * x(beta[i], j);
        CHECK(std::fabs(vb.x_mix(i, j) - expect) < 1e-15);
      }
      CHECK(vb.y_a[i] == y[i]);
      CHECK(vb.y_b[i] == y[beta[i]]);
    }
  }
  SUBCASE("identical alpha/beta rows reproduce the row for any lambda") {
    Matrix same(2, 2);
    same(0, 0) = same(1, 0) = 1.5;
    same(0, 1) = same(1, 1) = -2.5;
    Rng r3(7);
    const VirtualBatch vb = make_virtual_batch(same, {0, 0}, 1.0, r3);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(vb.x_mix(i, 0) == doctest::Approx(1.5).epsilon(1e-14));
      CHECK(vb.x_mix(i, 1) == doctest::Approx(-2.5).epsilon(1e-14));
    }
  }
}

TEST_CASE("train_source") {
  auto [src, tgt] = small_moons(1);

  SUBCASE("zero-epoch config returns the initialized model unchanged") {
    SourceConfig sc = quick_source();
    sc.epochs = 0;
    Model trained = train_source(src, sc, 3);
    GeneratorConfig gc = sc.generator;
    gc.input_dim = 2;
    Model fresh(gc, src.num_classes(), 3);
    CHECK(snapshot_params(trained, true) == snapshot_params(fresh, true));
  }
  SUBCASE("separable blobs reach near-perfect source accuracy") {
    DomainPairConfig cfg;
    cfg.family = Family::kBlobs;
    cfg.num_classes = 2;
    cfg.n_per_class = 200;
    cfg.noise_sd = 0.5;  // means 8 apart: linearly separable
    cfg.seed = 4;
    auto [bsrc, btgt] = make_domain_pair(cfg);
    Model model = train_source(bsrc, quick_source(), 4);
    CHECK(evaluate(model, bsrc) >= 0.99);
  }
  SUBCASE("seeded runs are byte-identical") {
    Model a = train_source(src, quick_source(), 9);
    Model b = train_source(src, quick_source(), 9);
    CHECK(snapshot_params(a, true) == snapshot_params(b, true));
  }
  SUBCASE("unlabeled source is an error") {
    const Dataset unlabeled(src.samples(), {}, src.num_classes(), DomainTag::kSource);
    CHECK_THROWS(train_source(unlabeled, quick_source(), 1));
  }
}

TEST_CASE("adapt_on_batch") {
  auto [src, tgt] = small_moons(2);
  Model model = train_source(src, quick_source(), 2);

  ContinualConfig cfg;
  cfg.epochs_per_batch = 3;
  cfg.minibatch_size = 16;

  SUBCASE("hypothesis parameters are frozen byte-for-byte") {
    const auto before = model.hypothesis.directions.value;
    const auto before_s = model.hypothesis.scales.value;
    Buffer buffer(8, 2);
    Rng rng(3);
    Matrix batch(30, 2);
    for (std::size_t i = 0; i < 30; ++i) batch.set_row(i, tgt.samples().row(i));
    adapt_on_batch(model, batch, buffer, cfg, rng, 1);
    CHECK(model.hypothesis.directions.value == before);
    CHECK(model.hypothesis.scales.value == before_s);
  }

  SUBCASE("entropy-only degeneracy: no buffer, gamma1 = gamma2 = 0") {
    cfg.hp.gamma1 = 0.0;
    cfg.hp.gamma2 = 0.0;
    cfg.mixup_enabled = false;
    Buffer off(0, 2);
    Rng rng(4);
    Matrix batch(25, 2);
    for (std::size_t i = 0; i < 25; ++i) batch.set_row(i, tgt.samples().row(i));
    const AdaptResult r = adapt_on_batch(model, batch, off, cfg, rng, 1);
    // with both extra weights zero the recorded total equals the entropy
    CHECK(r.mean_loss.total == r.mean_loss.ent);
    CHECK(off.size() == 0);
  }

  SUBCASE("one epoch of adaptation reduces the objective on X* (majority of seeds)") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto [s2, t2] = small_moons(10 + seed);
      Model m = train_source(s2, quick_source(), 10 + seed);
      ContinualConfig c2;
      c2.epochs_per_batch = 1;
      c2.minibatch_size = 16;
      c2.mixup_enabled = false;  // deterministic objective comparison
      c2.hp.gamma2 = 0.0;

      Matrix batch(40, 2);
      for (std::size_t i = 0; i < 40; ++i) batch.set_row(i, t2.samples().row(i));

      auto objective_on = [&](Model& mm) {
        const auto pls = pseudo_labels(mm, batch);
        const Matrix probs = softmax(mm.forward(batch, false));
        std::vector<double> lam(40, 1.0);
        return total_objective(probs, pls.labels, pls.labels, lam, c2.hp).total;
      };

      const double before = objective_on(m);
      Buffer off(0, 2);
      Rng rng(20 + seed);
      adapt_on_batch(m, batch, off, c2, rng, 1);
      if (objective_on(m) < before) ++wins;
    }
    CHECK(wins >= 3);
  }
}

TEST_CASE("run_continual") {
  auto [src, tgt] = small_moons(7, 60);  // 120 target samples
  Model model = train_source(src, quick_source(), 7);

  ContinualConfig cfg;
  cfg.continual_batch_size = 40;
  cfg.epochs_per_batch = 2;
  cfg.minibatch_size = 16;
  cfg.buffer_capacity = 8;

  auto eval_fn = [&](Model& m) { return evaluate(m, tgt); };

  SUBCASE("trajectory shape and determinism") {
    auto run_once = [&]() {
      Model m = model;
      Buffer buffer(cfg.buffer_capacity, 2);
      Rng rng(70);
      const BatchStream stream = stream_batches(tgt, cfg.continual_batch_size, 70);
      return run_continual(m, buffer, tgt.samples(), stream, cfg, rng, eval_fn);
    };
    const auto a = run_once();
    const auto b = run_once();
    REQUIRE(a.size() == 4);  // 3 batches + final record
    CHECK(a[0].batch_index == 1);
    CHECK(a[2].batch_index == 3);
    CHECK(a[3].batch_index == 0);
    CHECK(a[3].accuracy == a[2].accuracy);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].accuracy == b[i].accuracy);
      CHECK(a[i].loss.total == b[i].loss.total);
    }
  }

  SUBCASE("empty stream returns the source-model evaluation only") {
    Model m = model;
    Buffer buffer(cfg.buffer_capacity, 2);
    Rng rng(71);
    BatchStream empty;
    const auto recs = run_continual(m, buffer, tgt.samples(), empty, cfg, rng, eval_fn);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].batch_index == 0);
    CHECK(recs[0].accuracy == evaluate(m, tgt));
  }

  SUBCASE("m = 1 covering the whole target matches adapt_full") {
    Model m1 = model;
    Buffer b1(0, 2);
    Rng r1(72);
    BatchStream one;
    one.batch_size = tgt.size();
    std::vector<std::size_t> all(tgt.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    one.batches = {all};
    ContinualConfig nf = cfg;
    nf.buffer_capacity = 0;
    const auto recs = run_continual(m1, b1, tgt.samples(), one, nf, r1, eval_fn);

    Model m2 = model;
    Rng r2(72);
    adapt_full(m2, tgt.samples(), nf, r2);
    CHECK(recs.back().accuracy == evaluate(m2, tgt));
    CHECK(snapshot_params(m1, true) == snapshot_params(m2, true));
  }
}
