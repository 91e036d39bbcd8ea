#include "conda/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace conda {

Dataset::Dataset(Matrix x, std::vector<int> y, std::size_t num_classes, DomainTag tag)
    : x_(std::move(x)), y_(std::move(y)), num_classes_(num_classes), tag_(tag) {
  if (!y_.empty() && y_.size() != x_.rows())
    throw std::invalid_argument("Dataset: label count mismatch");
  for (int label : y_)
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes_)
      throw std::invalid_argument("Dataset: label out of range");
}

const std::vector<int>& Dataset::eval_labels() const {
  if (y_.empty()) throw std::runtime_error("Dataset: no labels available");
  return y_;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Matrix x(indices.size(), x_.cols());
  std::vector<int> y;
  if (!y_.empty()) y.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    x.set_row(i, x_.row(indices[i]));
    if (!y_.empty()) y.push_back(y_[indices[i]]);
  }
  return Dataset(std::move(x), std::move(y), num_classes_, tag_);
}

DomainPairConfig DomainPairConfig::preset(const std::string& name) {
  DomainPairConfig cfg;
  if (name == "moons-rot30") {
    cfg.family = Family::kMoons;
    cfg.num_classes = 2;
    cfg.n_per_class = 500;  // 1000 per domain
    cfg.noise_sd = 0.1;
    cfg.rotation_deg = 30.0;
  } else if (name == "blobs-5c") {
    cfg.family = Family::kBlobs;
    cfg.num_classes = 5;
    cfg.n_per_class = 250;
    cfg.noise_sd = 1.0;  // unit-variance clusters
    cfg.rotation_deg = 25.0;
    cfg.translate_x = 2.4;
    cfg.translate_y = -2.4;
  } else {
    throw std::invalid_argument("unknown dataset preset: " + name);
  }
  return cfg;
}

namespace {

struct RawData {
  Matrix x;
  std::vector<int> y;
};

// Interleaved two-moons: class 0 on the upper arc, class 1 on the lower
// arc offset by (1, 0.5). Center of the union is near (0.5, 0.25).
RawData sample_moons(std::size_t n_per_class, double noise_sd, Rng& rng) {
  RawData d;
  d.x = Matrix(2 * n_per_class, 2);
  d.y.resize(2 * n_per_class);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    const double t0 = M_PI * rng.uniform();
    d.x(2 * i, 0) = std::cos(t0) + noise_sd * rng.normal();
    d.x(2 * i, 1) = std::sin(t0) + noise_sd * rng.normal();
    d.y[2 * i] = 0;
    const double t1 = M_PI * rng.uniform();
    d.x(2 * i + 1, 0) = 1.0 - std::cos(t1) + noise_sd * rng.normal();
    d.x(2 * i + 1, 1) = 0.5 - std::sin(t1) + noise_sd * rng.normal();
    d.y[2 * i + 1] = 1;
  }
  return d;
}

// Gaussian blobs with class means on a circle of radius 4 about the origin.
RawData sample_blobs(std::size_t num_classes, std::size_t n_per_class, double noise_sd,
                     Rng& rng) {
  constexpr double kRadius = 4.0;
  RawData d;
  d.x = Matrix(num_classes * n_per_class, 2);
  d.y.resize(num_classes * n_per_class);
  std::size_t r = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double ang = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(num_classes);
    const double mx = kRadius * std::cos(ang);
    const double my = kRadius * std::sin(ang);
    for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
      d.x(r, 0) = mx + noise_sd * rng.normal();
      d.x(r, 1) = my + noise_sd * rng.normal();
      d.y[r] = static_cast<int>(k);
    }
  }
  return d;
}

void rotate_translate(Matrix& x, double rotation_deg, double cx, double cy, double tx,
                      double ty) {
  const double a = rotation_deg * M_PI / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double px = x(i, 0) - cx;
    const double py = x(i, 1) - cy;
    x(i, 0) = cx + ca * px - sa * py + tx;
    x(i, 1) = cy + sa * px + ca * py + ty;
  }
}

RawData shuffled(RawData d, Rng& rng) {
  const auto perm = rng.permutation(d.x.rows());
  RawData out;
  out.x = Matrix(d.x.rows(), d.x.cols());
  out.y.resize(d.y.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.x.set_row(i, d.x.row(perm[i]));
    out.y[i] = d.y[perm[i]];
  }
  return out;
}

RawData sample_family(const DomainPairConfig& cfg, Rng& rng) {
  switch (cfg.family) {
    case Family::kMoons:
      if (cfg.num_classes != 2)
        throw std::invalid_argument("moons family is 2-class");
      return sample_moons(cfg.n_per_class, cfg.noise_sd, rng);
    case Family::kBlobs:
      return sample_blobs(cfg.num_classes, cfg.n_per_class, cfg.noise_sd, rng);
  }
  throw std::invalid_argument("unknown family");
}

}  // namespace

std::pair<Dataset, Dataset> make_domain_pair(const DomainPairConfig& cfg) {
  if (cfg.n_per_class == 0) throw std::invalid_argument("make_domain_pair: n_per_class = 0");
  if (cfg.noise_sd < 0.0) throw std::invalid_argument("make_domain_pair: negative noise");

  Rng src_rng = Rng::substream(cfg.seed, 0x736f75726365ULL);  // "source"
  Rng tgt_rng = Rng::substream(cfg.seed, 0x746172676574ULL);  // "target"

  RawData src = shuffled(sample_family(cfg, src_rng), src_rng);
  RawData tgt = sample_family(cfg, tgt_rng);
  const double cx = cfg.family == Family::kMoons ? 0.5 : 0.0;
  const double cy = cfg.family == Family::kMoons ? 0.25 : 0.0;
  rotate_translate(tgt.x, cfg.rotation_deg, cx, cy, cfg.translate_x, cfg.translate_y);
  tgt = shuffled(std::move(tgt), tgt_rng);

  return {Dataset(std::move(src.x), std::move(src.y), cfg.num_classes, DomainTag::kSource),
          Dataset(std::move(tgt.x), std::move(tgt.y), cfg.num_classes, DomainTag::kTarget)};
}

BatchStream stream_batches(const Dataset& target, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("stream_batches: batch_size = 0");
  BatchStream s;
  s.batch_size = batch_size;
  Rng rng = Rng::substream(seed, 0x73747265616dULL);  // "stream"
  const auto perm = rng.permutation(target.size());
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, perm.size());
    s.batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return s;
}

void export_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_csv: cannot open " + path);
  for (std::size_t j = 0; j < ds.samples().cols(); ++j) out << "x" << j << ",";
  out << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.samples().cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.samples()(i, j));
      out << buf << ",";
    }
    out << (ds.has_labels() ? ds.eval_labels()[i] : -1) << "\n";
  }
}

}  // namespace conda
