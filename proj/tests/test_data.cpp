#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "conda/data.hpp"

using namespace conda;

TEST_CASE("stream_batches chunk arithmetic") {
  DomainPairConfig cfg = DomainPairConfig::preset("moons-rot30");
  cfg.n_per_class = 5;  // 10 samples
  cfg.seed = 1;
  auto [src, tgt] = make_domain_pair(cfg);

  SUBCASE("batch_size = n -> single batch") {
    const BatchStream s = stream_batches(tgt, 10, 2);
    CHECK(s.m() == 1);
    CHECK(s.batches[0].size() == 10);
  }
  SUBCASE("n=10, batch_size=3 -> sizes [3,3,3,1]") {
    const BatchStream s = stream_batches(tgt, 3, 2);
    REQUIRE(s.m() == 4);
    CHECK(s.batches[0].size() == 3);
    CHECK(s.batches[1].size() == 3);
    CHECK(s.batches[2].size() == 3);
    CHECK(s.batches[3].size() == 1);
  }
  SUBCASE("batch_size > n -> single batch, not an error") {
    const BatchStream s = stream_batches(tgt, 99, 2);
    CHECK(s.m() == 1);
  }
  SUBCASE("batches partition the target exactly") {
    const BatchStream s = stream_batches(tgt, 4, 3);
    std::set<std::size_t> seen;
    for (const auto& b : s.batches)
      for (std::size_t i : b) CHECK(seen.insert(i).second);  // disjoint
    CHECK(seen.size() == tgt.size());                        // exhaustive
  }
  SUBCASE("deterministic per seed") {
    const BatchStream a = stream_batches(tgt, 4, 9);
    const BatchStream b = stream_batches(tgt, 4, 9);
    CHECK(a.batches == b.batches);
  }
}

TEST_CASE("make_domain_pair basics") {
  SUBCASE("n_per_class = 0 is an error") {
    DomainPairConfig cfg;
    cfg.n_per_class = 0;
    CHECK_THROWS(make_domain_pair(cfg));
  }
  SUBCASE("generation deterministic per seed, source/target independent") {
    DomainPairConfig cfg = DomainPairConfig::preset("blobs-5c");
    cfg.n_per_class = 20;
    cfg.seed = 5;
    auto [s1, t1] = make_domain_pair(cfg);
    auto [s2, t2] = make_domain_pair(cfg);
    CHECK(s1.samples() == s2.samples());
    CHECK(t1.samples() == t2.samples());
    cfg.seed = 6;
    auto [s3, t3] = make_domain_pair(cfg);
    CHECK(!(s1.samples() == s3.samples()));
    CHECK(!(t1.samples() == t3.samples()));
  }
  SUBCASE("blobs class means match configured means within 3 sd / sqrt(n)") {
    DomainPairConfig cfg;
    cfg.family = Family::kBlobs;
    cfg.num_classes = 5;
    cfg.n_per_class = 400;
    cfg.noise_sd = 1.0;
    cfg.seed = 11;
    auto [src, tgt] = make_domain_pair(cfg);
    const double bound = 3.0 * cfg.noise_sd / std::sqrt(static_cast<double>(cfg.n_per_class));
    for (std::size_t k = 0; k < 5; ++k) {
      const double ang = 2.0 * M_PI * k / 5.0;
      double mx = 0, my = 0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < src.size(); ++i)
        if (src.eval_labels()[i] == static_cast<int>(k)) {
          mx += src.samples()(i, 0);
          my += src.samples()(i, 1);
          ++count;
        }
      CHECK(count == cfg.n_per_class);
      mx /= count;
      my /= count;
      // loose law-of-large-numbers bound
      CHECK(std::fabs(mx - 4.0 * std::cos(ang)) < 2.0 * bound);
      CHECK(std::fabs(my - 4.0 * std::sin(ang)) < 2.0 * bound);
    }
  }
  SUBCASE("identity shift keeps source and target in the same distribution") {
    DomainPairConfig cfg;
    cfg.family = Family::kBlobs;
    cfg.num_classes = 3;
    cfg.n_per_class = 300;
    cfg.noise_sd = 1.0;
    cfg.seed = 21;
    auto [src, tgt] = make_domain_pair(cfg);
    // per-class means of both domains agree to sampling noise
    for (std::size_t k = 0; k < 3; ++k) {
      double sx = 0, tx = 0;
      std::size_t sc = 0, tc = 0;
      for (std::size_t i = 0; i < src.size(); ++i)
        if (src.eval_labels()[i] == static_cast<int>(k)) {
          sx += src.samples()(i, 0);
          ++sc;
        }
      for (std::size_t i = 0; i < tgt.size(); ++i)
        if (tgt.eval_labels()[i] == static_cast<int>(k)) {
          tx += tgt.samples()(i, 0);
          ++tc;
        }
      CHECK(std::fabs(sx / sc - tx / tc) < 0.3);
    }
  }
  SUBCASE("rotation moves the target") {
    DomainPairConfig cfg = DomainPairConfig::preset("moons-rot30");
    cfg.n_per_class = 100;
    cfg.seed = 31;
    auto [src, tgt] = make_domain_pair(cfg);
    cfg.rotation_deg = 0.0;
    auto [src0, tgt0] = make_domain_pair(cfg);
    CHECK(src.samples() == src0.samples());
    CHECK(max_abs_diff(tgt.samples(), tgt0.samples()) > 0.1);
  }
}

TEST_CASE("per-batch class proportions track global proportions (chi-square)") {
  DomainPairConfig cfg = DomainPairConfig::preset("blobs-5c");
  cfg.seed = 41;
  auto [src, tgt] = make_domain_pair(cfg);

  // aggregate chi-square over batches and seeds; df = (C-1) per batch
  double chi2 = 0.0;
  std::size_t df = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const BatchStream s = stream_batches(tgt, 125, seed);
    for (const auto& batch : s.batches) {
      std::vector<double> counts(5, 0.0);
      for (std::size_t i : batch) counts[tgt.eval_labels()[i]] += 1.0;
      const double expect = static_cast<double>(batch.size()) / 5.0;
      for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
      df += 4;
    }
  }
  // normal approximation to the chi-square tail at alpha = 0.01
  const double z = (chi2 - static_cast<double>(df)) / std::sqrt(2.0 * static_cast<double>(df));
  CHECK(z < 2.33);
}

TEST_CASE("labels stay behind the evaluation-only accessor") {
  DomainPairConfig cfg = DomainPairConfig::preset("moons-rot30");
  cfg.n_per_class = 10;
  cfg.seed = 51;
  auto [src, tgt] = make_domain_pair(cfg);
  CHECK(tgt.has_labels());
  CHECK_NOTHROW(tgt.eval_labels());
  // an unlabeled view has no labels to leak
  const Dataset unlabeled(tgt.samples(), {}, tgt.num_classes(), DomainTag::kTarget);
  CHECK(!unlabeled.has_labels());
  CHECK_THROWS(unlabeled.eval_labels());
}

TEST_CASE("csv export shape") {
  DomainPairConfig cfg = DomainPairConfig::preset("moons-rot30");
  cfg.n_per_class = 3;
  cfg.seed = 61;
  auto [src, tgt] = make_domain_pair(cfg);
  const std::string path = "/tmp/conda_test_export.csv";
  export_csv(src, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "x0,x1,label");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == src.size());
}
