#include "conda/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace conda {

using nlohmann::json;

double evaluate(Model& model, const Dataset& dataset) {
  if (!dataset.has_labels()) throw std::invalid_argument("evaluate: unlabeled dataset");
  const Matrix logits = model.forward(dataset.samples(), /*train=*/false);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    double best = logits(i, 0);
    for (std::size_t k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > best) {
        best = logits(i, k);
        arg = static_cast<int>(k);
      }
    if (arg == dataset.eval_labels()[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kFullTarget: return "full-target";
    case Method::kContinualNoBuffer: return "continual-no-buffer";
    case Method::kConda: return "conda";
  }
  throw std::invalid_argument("method_name: bad enum");
}

Method parse_method(const std::string& name) {
  if (name == "full-target") return Method::kFullTarget;
  if (name == "continual-no-buffer") return Method::kContinualNoBuffer;
  if (name == "conda") return Method::kConda;
  throw std::invalid_argument("unknown method: " + name);
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + section);
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void parse_dataset(const json& j, DomainPairConfig& cfg) {
  reject_unknown(j,
                 {"preset", "family", "num_classes", "n_per_class", "noise_sd", "rotation_deg",
                  "translate_x", "translate_y"},
                 "dataset");
  if (j.contains("preset")) cfg = DomainPairConfig::preset(j.at("preset").get<std::string>());
  if (j.contains("family")) {
    const std::string f = j.at("family").get<std::string>();
    if (f == "moons") cfg.family = Family::kMoons;
    else if (f == "blobs") cfg.family = Family::kBlobs;
    else throw std::invalid_argument("config: unknown family " + f);
  }
  if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<std::size_t>();
  if (j.contains("n_per_class")) cfg.n_per_class = j.at("n_per_class").get<std::size_t>();
  if (j.contains("noise_sd")) cfg.noise_sd = j.at("noise_sd").get<double>();
  if (j.contains("rotation_deg")) cfg.rotation_deg = j.at("rotation_deg").get<double>();
  if (j.contains("translate_x")) cfg.translate_x = j.at("translate_x").get<double>();
  if (j.contains("translate_y")) cfg.translate_y = j.at("translate_y").get<double>();
}

void parse_optim(const json& j, OptimState& o) {
  if (j.contains("eta0")) o.eta0 = j.at("eta0").get<double>();
  if (j.contains("momentum")) o.momentum = j.at("momentum").get<double>();
  if (j.contains("head_lr_multiplier"))
    o.head_lr_multiplier = j.at("head_lr_multiplier").get<double>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  reject_unknown(j, {"dataset", "method", "model", "source", "adaptation", "hyperparams",
                     "seeds", "out"},
                 "top level");
  ExperimentConfig cfg;
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("method")) cfg.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"hidden_widths", "feature_dim"}, "model");
    if (m.contains("hidden_widths"))
      cfg.model.hidden_widths = m.at("hidden_widths").get<std::vector<std::size_t>>();
    if (m.contains("feature_dim")) cfg.model.feature_dim = m.at("feature_dim").get<std::size_t>();
  }
  if (j.contains("source")) {
    const json& s = j.at("source");
    reject_unknown(s, {"epochs", "minibatch_size", "smoothing", "eta0", "momentum",
                       "head_lr_multiplier"},
                   "source");
    if (s.contains("epochs")) cfg.source.epochs = s.at("epochs").get<std::size_t>();
    if (s.contains("minibatch_size"))
      cfg.source.minibatch_size = s.at("minibatch_size").get<std::size_t>();
    if (s.contains("smoothing")) cfg.source.smoothing = s.at("smoothing").get<double>();
    parse_optim(s, cfg.source.optim);
  }
  if (j.contains("adaptation")) {
    const json& a = j.at("adaptation");
    reject_unknown(a,
                   {"continual_batch_size", "epochs_per_batch", "minibatch_size",
                    "slots_per_class", "mixup", "reset_momentum_per_batch", "eta0", "momentum",
                    "head_lr_multiplier"},
                   "adaptation");
    if (a.contains("continual_batch_size"))
      cfg.adaptation.continual_batch_size = a.at("continual_batch_size").get<std::size_t>();
    if (a.contains("epochs_per_batch"))
      cfg.adaptation.epochs_per_batch = a.at("epochs_per_batch").get<std::size_t>();
    if (a.contains("minibatch_size"))
      cfg.adaptation.minibatch_size = a.at("minibatch_size").get<std::size_t>();
    if (a.contains("slots_per_class"))
      cfg.slots_per_class = a.at("slots_per_class").get<std::size_t>();
    if (a.contains("mixup")) cfg.adaptation.mixup_enabled = a.at("mixup").get<bool>();
    if (a.contains("reset_momentum_per_batch"))
      cfg.adaptation.reset_momentum_per_batch = a.at("reset_momentum_per_batch").get<bool>();
    parse_optim(a, cfg.adaptation.optim);
  }
  if (j.contains("hyperparams")) {
    const json& h = j.at("hyperparams");
    reject_unknown(h, {"gamma1", "gamma2", "rho", "smoothing"}, "hyperparams");
    if (h.contains("gamma1")) cfg.adaptation.hp.gamma1 = h.at("gamma1").get<double>();
    if (h.contains("gamma2")) cfg.adaptation.hp.gamma2 = h.at("gamma2").get<double>();
    if (h.contains("rho")) cfg.adaptation.hp.rho = h.at("rho").get<double>();
    if (h.contains("smoothing")) {
      cfg.adaptation.hp.smoothing = h.at("smoothing").get<double>();
      cfg.source.smoothing = cfg.adaptation.hp.smoothing;
    }
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (cfg.adaptation.minibatch_size < 2)
    throw std::invalid_argument("config: minibatch_size must be >= 2");
  if (cfg.adaptation.epochs_per_batch < 1)
    throw std::invalid_argument("config: epochs_per_batch must be >= 1");
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::apply_override(const std::string& json_text,
                                             const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("--set expects section.key=value, got: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);

  json j = json::parse(json_text);
  json* node = &j;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (key.empty()) throw std::invalid_argument("--set: empty key segment in " + path);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::parse_error&) {
        parsed = value;  // bare string
      }
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
  return j.dump();
}

namespace {

ContinualConfig effective_adaptation(const ExperimentConfig& cfg) {
  ContinualConfig a = cfg.adaptation;
  switch (cfg.method) {
    case Method::kFullTarget:
    case Method::kContinualNoBuffer:
      // information-maximization baseline: no buffer, no mixup
      a.buffer_capacity = 0;
      a.mixup_enabled = false;
      a.hp.gamma2 = 0.0;
      break;
    case Method::kConda:
      a.buffer_capacity = cfg.slots_per_class * cfg.dataset.num_classes;
      break;
  }
  return a;
}

SeedResult run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();

  DomainPairConfig dc = cfg.dataset;
  dc.seed = seed;
  auto [source, target] = make_domain_pair(dc);

  SourceConfig sc = cfg.source;
  sc.generator = cfg.model;
  Model model = train_source(source, sc, seed);

  const ContinualConfig acfg = effective_adaptation(cfg);
  Rng rng = Rng::substream(seed, 0x6164617074ULL);  // "adapt"

  SeedResult result;
  result.seed = seed;

  auto eval_target = [&](Model& m) { return evaluate(m, target); };

  if (cfg.method == Method::kFullTarget) {
    const AdaptResult r = adapt_full(model, target.samples(), acfg, rng);
    MetricsRecord rec;
    rec.batch_index = 0;
    rec.accuracy = evaluate(model, target);
    rec.loss = r.mean_loss;
    rec.seed = seed;
    result.records.push_back(rec);
  } else {
    Buffer buffer(acfg.buffer_capacity, target.num_classes());
    const BatchStream stream =
        stream_batches(target, acfg.continual_batch_size, seed);
    const auto batches = run_continual(model, buffer, target.samples(), stream, acfg, rng,
                                       eval_target);
    for (const auto& b : batches) {
      MetricsRecord rec;
      rec.batch_index = b.batch_index;
      rec.accuracy = b.accuracy;
      rec.loss = b.loss;
      rec.seed = seed;
      result.records.push_back(rec);
    }
  }
  result.final_accuracy = result.records.back().accuracy;
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void write_metrics_csv(const SeedResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "batch_index,accuracy,loss_ent,loss_eqdiv,loss_mixup,loss_total,seed\n";
  for (const auto& rec : r.records)
    out << rec.batch_index << ',' << fmt17(rec.accuracy) << ',' << fmt17(rec.loss.ent) << ','
        << fmt17(rec.loss.eqdiv) << ',' << fmt17(rec.loss.mixup) << ','
        << fmt17(rec.loss.total) << ',' << rec.seed << "\n";
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  for (std::uint64_t seed : cfg.seeds) result.per_seed.push_back(run_one_seed(cfg, seed));

  double mean = 0.0;
  for (const auto& r : result.per_seed) mean += r.final_accuracy;
  mean /= static_cast<double>(result.per_seed.size());
  double var = 0.0;
  for (const auto& r : result.per_seed) {
    const double d = r.final_accuracy - mean;
    var += d * d;
  }
  result.mean_final_accuracy = mean;
  result.std_final_accuracy =
      result.per_seed.size() > 1
          ? std::sqrt(var / static_cast<double>(result.per_seed.size() - 1))
          : 0.0;

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    for (const auto& r : result.per_seed)
      write_metrics_csv(r, cfg.out_dir + "/metrics_seed" + std::to_string(r.seed) + ".csv");

    std::ofstream summary(cfg.out_dir + "/summary.csv");
    if (!summary) throw std::runtime_error("cannot write summary.csv");
    summary << "seed,final_accuracy\n";
    for (const auto& r : result.per_seed)
      summary << r.seed << ',' << fmt17(r.final_accuracy) << "\n";
    summary << "mean," << fmt17(result.mean_final_accuracy) << "\n";
    summary << "std," << fmt17(result.std_final_accuracy) << "\n";

    // wall-clock varies run to run, so it lives outside the
    // determinism-checked metrics files
    std::ofstream timing(cfg.out_dir + "/timing.csv");
    timing << "seed,wall_clock_seconds\n";
    for (const auto& r : result.per_seed)
      timing << r.seed << ',' << fmt17(r.wall_clock_seconds) << "\n";
  }
  return result;
}

std::vector<GridRow> grid_batchsize(const ExperimentConfig& tmpl,
                                    const std::vector<std::size_t>& batch_sizes) {
  if (batch_sizes.size() < 2)
    throw std::invalid_argument("grid_batchsize: need at least 2 batch sizes");
  std::vector<GridRow> rows;
  for (Method m : {Method::kContinualNoBuffer, Method::kConda})
    for (std::size_t bs : batch_sizes) {
      ExperimentConfig cfg = tmpl;
      cfg.method = m;
      cfg.adaptation.continual_batch_size = bs;
      cfg.out_dir.clear();
      const ExperimentResult res = run_experiment(cfg);
      for (const auto& r : res.per_seed)
        rows.push_back({method_name(m), bs, r.seed, r.final_accuracy});
    }
  return rows;
}

std::vector<GridRow> grid_buffersize(const ExperimentConfig& tmpl,
                                     const std::vector<std::size_t>& slots_list) {
  std::vector<GridRow> rows;
  for (std::size_t slots : slots_list) {
    ExperimentConfig cfg = tmpl;
    cfg.method = Method::kConda;
    cfg.slots_per_class = slots;
    cfg.out_dir.clear();
    const ExperimentResult res = run_experiment(cfg);
    for (const auto& r : res.per_seed)
      rows.push_back({"conda", slots, r.seed, r.final_accuracy});
  }
  return rows;
}

void write_grid_csv(const std::vector<GridRow>& rows, const std::string& cell_name,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "variant," << cell_name << ",seed,final_accuracy\n";
  for (const auto& r : rows)
    out << r.variant << ',' << r.cell << ',' << r.seed << ',' << fmt17(r.final_accuracy)
        << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[6] = {'C', 'O', 'N', 'D', 'A', '\x01'};

void append_array(std::vector<const Matrix*>& arrays, json& dir, const std::string& name,
                  const Matrix& m) {
  dir.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  arrays.push_back(&m);
}

void write_f64_le(std::ofstream& out, const Matrix& m) {
  for (double v : m.raw()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char buf[8];
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    out.write(buf, 8);
  }
}

Matrix read_f64_le(std::ifstream& in, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.raw()) {
    char buf[8];
    in.read(buf, 8);
    if (!in) throw std::runtime_error("checkpoint: truncated array data");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
    std::memcpy(&v, &bits, 8);
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const Buffer& buffer,
                     const Rng& rng, int batch_index) {
  json header;
  const GeneratorConfig& g = model.generator.config();
  header["generator"] = {{"input_dim", g.input_dim},
                         {"hidden_widths", g.hidden_widths},
                         {"feature_dim", g.feature_dim}};
  header["num_classes"] = model.num_classes();
  header["batch_index"] = batch_index;
  header["rng"] = rng.serialize();

  json buf_meta;
  buf_meta["capacity"] = buffer.capacity();
  buf_meta["num_classes"] = buffer.num_classes();
  buf_meta["state_index"] = buffer.state_index();
  json entries = json::array();
  for (std::size_t k = 0; k < buffer.num_classes(); ++k) {
    json cls = json::array();
    for (const auto& e : buffer.class_entries(k))
      cls.push_back({{"label", e.predicted_label},
                     {"confidence", e.confidence},
                     {"inserted_at", e.inserted_at}});
    entries.push_back(cls);
  }
  buf_meta["entries"] = entries;
  header["buffer"] = buf_meta;

  json dir = json::array();
  std::vector<const Matrix*> arrays;
  const auto params = model.params(true);
  for (std::size_t i = 0; i < params.size(); ++i)
    append_array(arrays, dir, "param" + std::to_string(i) + ".value", params[i]->value);
  for (std::size_t i = 0; i < params.size(); ++i)
    append_array(arrays, dir, "param" + std::to_string(i) + ".momentum", params[i]->momentum);
  append_array(arrays, dir, "batchnorm.running_mean", model.generator.batchnorm.running_mean);
  append_array(arrays, dir, "batchnorm.running_var", model.generator.batchnorm.running_var);

  Matrix buffer_samples;
  if (buffer.size() > 0) buffer_samples = buffer.all_samples(model.input_dim());
  append_array(arrays, dir, "buffer.samples", buffer_samples);
  header["arrays"] = dir;

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_text.size());
  char lenbuf[4];
  for (int b = 0; b < 4; ++b) lenbuf[b] = static_cast<char>((len >> (8 * b)) & 0xff);
  out.write(lenbuf, 4);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const Matrix* m : arrays) write_f64_le(out, *m);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("checkpoint: bad magic/version");
  char lenbuf[4];
  in.read(lenbuf, 4);
  if (!in) throw std::runtime_error("checkpoint: truncated header length");
  std::uint32_t len = 0;
  for (int b = 0; b < 4; ++b)
    len |= static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[b])) << (8 * b);
  std::string header_text(len, '\0');
  in.read(header_text.data(), len);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  const json header = json::parse(header_text);

  Checkpoint ckpt;
  ckpt.generator.input_dim = header.at("generator").at("input_dim").get<std::size_t>();
  ckpt.generator.hidden_widths =
      header.at("generator").at("hidden_widths").get<std::vector<std::size_t>>();
  ckpt.generator.feature_dim = header.at("generator").at("feature_dim").get<std::size_t>();
  ckpt.num_classes = header.at("num_classes").get<std::size_t>();
  ckpt.batch_index = header.at("batch_index").get<int>();
  ckpt.rng_state = header.at("rng").get<std::string>();

  ckpt.model = Model(ckpt.generator, ckpt.num_classes, 0);
  auto params = ckpt.model.params(true);

  const json& dir = header.at("arrays");
  std::size_t ai = 0;
  auto next = [&](const std::string& expect) -> Matrix {
    if (ai >= dir.size()) throw std::runtime_error("checkpoint: array directory too short");
    const json& d = dir[ai++];
    if (d.at("name").get<std::string>() != expect)
      throw std::runtime_error("checkpoint: unexpected array " + d.at("name").get<std::string>());
    return read_f64_le(in, d.at("rows").get<std::size_t>(), d.at("cols").get<std::size_t>());
  };
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->value = next("param" + std::to_string(i) + ".value");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i]->momentum = next("param" + std::to_string(i) + ".momentum");
  ckpt.model.generator.batchnorm.running_mean = next("batchnorm.running_mean");
  ckpt.model.generator.batchnorm.running_var = next("batchnorm.running_var");

  const json& bm = header.at("buffer");
  ckpt.buffer = Buffer(bm.at("capacity").get<std::size_t>(),
                       bm.at("num_classes").get<std::size_t>());
  const Matrix samples = next("buffer.samples");
  std::vector<std::vector<BufferEntry>> entries(ckpt.buffer.num_classes());
  std::size_t row = 0;
  const json& ent = bm.at("entries");
  for (std::size_t k = 0; k < entries.size(); ++k)
    for (const json& e : ent.at(k)) {
      BufferEntry be;
      be.sample = samples.row(row++);
      be.predicted_label = e.at("label").get<int>();
      be.confidence = e.at("confidence").get<double>();
      be.inserted_at = e.at("inserted_at").get<int>();
      entries[k].push_back(std::move(be));
    }
  if (row != samples.rows()) throw std::runtime_error("checkpoint: buffer sample mismatch");
  ckpt.buffer.replace_entries(std::move(entries), bm.at("state_index").get<int>());

  char extra;
  if (in.read(&extra, 1)) throw std::runtime_error("checkpoint: trailing data");
  return ckpt;
}

}  // namespace conda
