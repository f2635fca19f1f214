#pragma once

// Deterministic training loop, checkpointing, and run logging.
//
// Every random draw in a run flows from the run seed through named
// substreams: ("init") for weight initialization, ("shuffle", epoch) for the
// epoch permutation, ("batch", epoch, batch_index) for dropout masks and
// latent noise. Because the streams are keyed by absolute epoch/batch
// indices, resuming from a checkpoint reproduces the exact trajectory of an
// uninterrupted run.
//
// Checkpoint container: a text header (format version, config, epoch, rng
// cursor, tensor manifest with byte offsets) terminated by an "@BINARY"
// line, followed by raw little-endian 64-bit float blocks in manifest order.

#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cvae/mnist.hpp"
#include "cvae/optim.hpp"
#include "cvae/textio.hpp"
#include "cvae/vae.hpp"

namespace cvae {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  double kappa_d = 0.0;
  double kappa_l = 0.0;
  std::size_t z_dim = 2;
  std::size_t hidden_units = 500;
  std::size_t epochs = 500;
  std::size_t batch_size = 5000;
  double lr = 1e-3;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t train_limit = 0;  // 0 = full split
  std::string data_dir = "data";
  std::string out_dir = "runs";

  void validate() const {
    check_coupling(kappa_d);
    check_coupling(kappa_l);
    if (z_dim == 0) throw std::invalid_argument("config: z_dim must be >= 1");
    if (hidden_units == 0) throw std::invalid_argument("config: hidden_units must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw std::invalid_argument("config: dropout must be in [0,1)");
    }
  }

  std::string run_tag() const {
    return "kd" + format_double(kappa_d) + "_kl" + format_double(kappa_l) + "_z" +
           std::to_string(z_dim) + "_seed" + std::to_string(seed);
  }

  TotalLossConfig loss_config(bool training) const {
    TotalLossConfig c;
    c.coupling.kappa_d = kappa_d;
    c.coupling.kappa_l = kappa_l;
    c.dropout_rate = dropout;
    c.training = training;
    return c;
  }

  // Fields that must not change across a resume (everything except the
  // target epoch count and output paths).
  bool immutable_fields_equal(const RunConfig& o) const {
    return kappa_d == o.kappa_d && kappa_l == o.kappa_l && z_dim == o.z_dim &&
           hidden_units == o.hidden_units && batch_size == o.batch_size &&
           lr == o.lr && dropout == o.dropout && seed == o.seed &&
           train_limit == o.train_limit;
  }
};

struct Checkpoint {
  RunConfig config;
  std::size_t epoch = 0;  // completed epochs
  VaeParams params;
  AdamState adam;
};

struct TrainLogEntry {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogEntry> log;
  std::filesystem::path checkpoint_path;  // empty when out_dir was empty
  std::filesystem::path log_path;
};

inline Checkpoint init_checkpoint(const RunConfig& cfg) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  Rng init_rng(cfg.seed, "init");
  ck.params = VaeParams::init(784, cfg.hidden_units, cfg.z_dim, init_rng);
  AdamConfig ac;
  ac.lr = cfg.lr;
  ck.adam = AdamState::init(ck.params.named(), ac);
  return ck;
}

// -- checkpoint serialization -------------------------------------------------

namespace detail {

inline void append_le_doubles(std::string& out, std::span<const double> v) {
  for (double d : v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
    for (int b = 0; b < 8; ++b) {
      out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
}

inline std::vector<double> read_le_doubles(const std::uint8_t* p, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(p[i * 8 + b]) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  // Header
  std::string head = "CVAE-CKPT v1\n";
  const RunConfig& c = ck.config;
  head += "kappa_d=" + format_double(c.kappa_d) + "\n";
  head += "kappa_l=" + format_double(c.kappa_l) + "\n";
  head += "z_dim=" + std::to_string(c.z_dim) + "\n";
  head += "hidden_units=" + std::to_string(c.hidden_units) + "\n";
  head += "epochs=" + std::to_string(c.epochs) + "\n";
  head += "batch_size=" + std::to_string(c.batch_size) + "\n";
  head += "lr=" + format_double(c.lr) + "\n";
  head += "dropout=" + format_double(c.dropout) + "\n";
  head += "seed=" + std::to_string(c.seed) + "\n";
  head += "train_limit=" + std::to_string(c.train_limit) + "\n";
  head += "epoch=" + std::to_string(ck.epoch) + "\n";
  head += "adam_t=" + std::to_string(ck.adam.step_count) + "\n";
  head += "adam_beta1=" + format_double(ck.adam.config.beta1) + "\n";
  head += "adam_beta2=" + format_double(ck.adam.config.beta2) + "\n";
  head += "adam_eps=" + format_double(ck.adam.config.eps) + "\n";
  head += "rng_scheme=xoshiro256ss-substreams-v1\n";
  head += "rng_cursor=epoch:" + std::to_string(ck.epoch) + "\n";

  // Manifest + binary blocks. Parameter tensors first, then Adam moments,
  // in the fixed named() order.
  auto params = const_cast<VaeParams&>(ck.params).named();
  std::string manifest;
  std::string blob;
  const auto add_tensor = [&](const std::string& name, const Tensor& t) {
    manifest += "tensor " + name + " " + std::to_string(t.shape.size());
    for (std::size_t d : t.shape) manifest += " " + std::to_string(d);
    manifest += " " + std::to_string(blob.size()) + "\n";
    detail::append_le_doubles(blob, t.data);
  };
  for (const auto& [name, t] : params) add_tensor(name, *t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    add_tensor("adam_m." + params[i].first, ck.adam.m[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    add_tensor("adam_v." + params[i].first, ck.adam.v[i]);
  }
  std::string out = head + manifest + "@BINARY\n" + blob;
  write_text_file(path, out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  // Split header from binary payload.
  const std::string marker = "@BINARY\n";
  const std::string_view whole(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto pos = whole.find(marker);
  if (pos == std::string_view::npos) {
    throw TrainError("checkpoint: missing @BINARY marker in " + path.string());
  }
  const std::string_view header = whole.substr(0, pos);
  const std::uint8_t* blob = bytes.data() + pos + marker.size();
  const std::size_t blob_size = bytes.size() - pos - marker.size();

  std::istringstream in{std::string(header)};
  std::string line;
  if (!std::getline(in, line) || line != "CVAE-CKPT v1") {
    throw TrainError("checkpoint: unsupported format in " + path.string());
  }
  RunConfig cfg;
  std::size_t epoch = 0;
  long long adam_t = 0;
  AdamConfig ac;
  struct ManifestEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;
  };
  std::vector<ManifestEntry> manifest;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      ManifestEntry e;
      std::size_t ndim = 0;
      ls >> e.name >> ndim;
      e.shape.resize(ndim);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset;
      if (!ls) throw TrainError("checkpoint: bad manifest line: " + line);
      manifest.push_back(std::move(e));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw TrainError("checkpoint: bad header line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "kappa_d") cfg.kappa_d = parse_double(val);
    else if (key == "kappa_l") cfg.kappa_l = parse_double(val);
    else if (key == "z_dim") cfg.z_dim = parse_u64(val);
    else if (key == "hidden_units") cfg.hidden_units = parse_u64(val);
    else if (key == "epochs") cfg.epochs = parse_u64(val);
    else if (key == "batch_size") cfg.batch_size = parse_u64(val);
    else if (key == "lr") cfg.lr = parse_double(val);
    else if (key == "dropout") cfg.dropout = parse_double(val);
    else if (key == "seed") cfg.seed = parse_u64(val);
    else if (key == "train_limit") cfg.train_limit = parse_u64(val);
    else if (key == "epoch") epoch = parse_u64(val);
    else if (key == "adam_t") adam_t = static_cast<long long>(parse_u64(val));
    else if (key == "adam_beta1") ac.beta1 = parse_double(val);
    else if (key == "adam_beta2") ac.beta2 = parse_double(val);
    else if (key == "adam_eps") ac.eps = parse_double(val);
    else if (key == "rng_scheme" || key == "rng_cursor") { /* informational */ }
    else throw TrainError("checkpoint: unknown header key: " + key);
  }
  ac.lr = cfg.lr;

  Checkpoint ck;
  ck.config = cfg;
  ck.epoch = epoch;
  ck.params = VaeParams::zeros(784, cfg.hidden_units, cfg.z_dim);
  ck.adam = AdamState::init(ck.params.named(), ac);
  ck.adam.step_count = adam_t;

  auto params = ck.params.named();
  const auto read_into = [&](const ManifestEntry& e, Tensor& t) {
    if (t.shape != e.shape) {
      throw TrainError("checkpoint: shape mismatch for tensor " + e.name);
    }
    const std::size_t need = e.offset + t.size() * 8;
    if (need > blob_size) throw TrainError("checkpoint: truncated binary payload");
    t.data = detail::read_le_doubles(blob + e.offset, t.size());
  };
  for (const ManifestEntry& e : manifest) {
    bool found = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (e.name == params[i].first) {
        read_into(e, *params[i].second);
        found = true;
      } else if (e.name == "adam_m." + params[i].first) {
        read_into(e, ck.adam.m[i]);
        found = true;
      } else if (e.name == "adam_v." + params[i].first) {
        read_into(e, ck.adam.v[i]);
        found = true;
      }
    }
    if (!found) throw TrainError("checkpoint: unknown tensor " + e.name);
  }
  return ck;
}

// -- training loop ------------------------------------------------------------

inline void write_train_log(const std::filesystem::path& path,
                            const std::vector<TrainLogEntry>& log) {
  std::string text = "epoch,total,recon,kl,seconds\n";
  for (const TrainLogEntry& e : log) {
    text += std::to_string(e.epoch) + "," + format_double(e.total) + "," +
            format_double(e.recon) + "," + format_double(e.kl) + "," +
            format_double(e.seconds) + "\n";
  }
  write_text_file(path, text);
}

namespace detail {

inline void run_epochs(Checkpoint& ck, std::size_t from_epoch, std::size_t to_epoch,
                       const Dataset& train_ds, std::vector<TrainLogEntry>& log) {
  retain_malloc_arena();
  const RunConfig& cfg = ck.config;
  std::size_t n = train_ds.size();
  if (cfg.train_limit > 0 && cfg.train_limit < n) n = cfg.train_limit;
  if (n == 0) throw TrainError("train: empty training set");

  auto params = ck.params.named();
  const TotalLossConfig loss_cfg = cfg.loss_config(true);

  for (std::size_t epoch = from_epoch; epoch < to_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const BatchPlan plan = BatchPlan::make(n, cfg.batch_size, cfg.seed, epoch);
    double sum_total = 0.0, sum_recon = 0.0, sum_kl = 0.0;
    for (std::size_t k = 0; k < plan.batch_count(); ++k) {
      const auto idx = plan.batch(k);
      const Tensor x = gather_rows(train_ds.images, idx);
      Rng rng(cfg.seed, "batch", epoch, k);
      try {
        LossGraph lg = build_loss_graph(ck.params, x, loss_cfg, rng);
        lg.graph.backward(lg.total);
        std::vector<const Tensor*> grads;
        grads.reserve(lg.params.size());
        for (const auto& [name, id] : lg.params) grads.push_back(&lg.graph.grad(id));
        adam_step(params, grads, ck.adam);
        const double b = static_cast<double>(idx.size());
        sum_total += lg.graph.value(lg.total).data[0] * b;
        sum_recon += lg.graph.value(lg.reconstruction).data[0] * b;
        sum_kl += lg.graph.value(lg.kl).data[0] * b;
      } catch (const NonFiniteError& e) {
        throw TrainError("train: aborted at epoch " + std::to_string(epoch + 1) +
                         ", batch " + std::to_string(k) + ": " + e.what());
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    TrainLogEntry entry;
    entry.epoch = epoch + 1;
    entry.total = sum_total / static_cast<double>(n);
    entry.recon = sum_recon / static_cast<double>(n);
    entry.kl = sum_kl / static_cast<double>(n);
    entry.seconds = std::chrono::duration<double>(t1 - t0).count();
    log.push_back(entry);
    ck.epoch = epoch + 1;
  }
}

inline void write_run_artifacts(TrainResult& result) {
  const RunConfig& cfg = result.checkpoint.config;
  if (cfg.out_dir.empty()) return;
  const std::filesystem::path dir =
      std::filesystem::path(cfg.out_dir) / cfg.run_tag();
  std::filesystem::create_directories(dir);
  result.checkpoint_path = dir / "checkpoint.cvae";
  result.log_path = dir / "trainlog.csv";
  save_checkpoint(result.checkpoint, result.checkpoint_path);
  write_train_log(result.log_path, result.log);
}

}  // namespace detail

inline TrainResult train(const RunConfig& cfg, const Dataset& train_ds) {
  TrainResult result;
  result.checkpoint = init_checkpoint(cfg);
  detail::run_epochs(result.checkpoint, 0, cfg.epochs, train_ds, result.log);
  detail::write_run_artifacts(result);
  return result;
}

// Continues a checkpointed run for `additional_epochs` more epochs. The
// trajectory is bit-identical to an uninterrupted run of the combined length.
inline TrainResult resume(const Checkpoint& from, std::size_t additional_epochs,
                          const Dataset& train_ds) {
  TrainResult result;
  result.checkpoint = from;
  result.checkpoint.config.epochs = from.epoch + additional_epochs;
  detail::run_epochs(result.checkpoint, from.epoch, from.epoch + additional_epochs,
                     train_ds, result.log);
  detail::write_run_artifacts(result);
  return result;
}

// Rejects a resume whose requested configuration differs from the
// checkpoint's (config is immutable per run).
inline void validate_resume_config(const RunConfig& checkpoint_cfg,
                                   const RunConfig& requested) {
  if (!checkpoint_cfg.immutable_fields_equal(requested)) {
    throw TrainError("resume: configuration differs from checkpoint (immutable per run)");
  }
}

struct SweepOutcome {
  RunConfig config;
  std::optional<TrainResult> result;  // empty on failure
  std::string error;                  // failure diagnostic
};

// Runs each config, up to `max_parallel` at a time. Each run owns its RNG
// streams and parameter state; failures are isolated per config.
inline std::vector<SweepOutcome> sweep(const std::vector<RunConfig>& configs,
                                       const Dataset& train_ds,
                                       std::size_t max_parallel = 0) {
  if (configs.empty()) throw std::invalid_argument("sweep: no configurations");
  if (max_parallel == 0) {
    max_parallel = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
  std::vector<SweepOutcome> outcomes(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) outcomes[i].config = configs[i];
  std::size_t next = 0;
  while (next < configs.size()) {
    const std::size_t batch = std::min(max_parallel, configs.size() - next);
    std::vector<std::thread> workers;
    workers.reserve(batch);
    for (std::size_t t = 0; t < batch; ++t) {
      const std::size_t i = next + t;
      workers.emplace_back([&, i] {
        try {
          outcomes[i].result = train(configs[i], train_ds);
        } catch (const std::exception& e) {
          outcomes[i].error = e.what();
        }
      });
    }
    for (auto& w : workers) w.join();
    next += batch;
  }
  return outcomes;
}

// The paper's default sweep grid: (kappa_d, kappa_l) in {0, 0.15}^2.
inline std::vector<RunConfig> default_sweep_grid(RunConfig base) {
  std::vector<RunConfig> configs;
  for (double kd : {0.0, 0.15}) {
    for (double kl : {0.0, 0.15}) {
      RunConfig c = base;
      c.kappa_d = kd;
      c.kappa_l = kl;
      configs.push_back(c);
    }
  }
  return configs;
}

}  // namespace cvae
