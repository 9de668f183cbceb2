#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fer/errors.hpp"
#include "fer/model.hpp"
#include "fer/optim.hpp"
#include "fer/sched.hpp"

namespace fer {

/// Checkpoint layout (all integers little-endian):
///   magic "FERC" | u32 version | config block | meta (string -> f64 map)
///   | parameter records | buffer records | optional optimizer section
///   | optional scheduler section
/// A record is (u16 name length, name, u8 dtype bytes, u8 rank,
/// u64 extents..., raw IEEE-754 payload). Round trips are bitwise exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointExtras {
  std::uint64_t epoch = 0;
  double best_val_accuracy = 0.0;
  std::map<std::string, double> meta;
};

namespace ckpt_detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw CheckpointError("truncated checkpoint file");
  }
}

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  }
  put_bytes(os, buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  get_bytes(is, buf, sizeof(U));
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(buf[i]) << (8 * i);
  }
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_le<std::uint64_t>(os, bits);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_le<std::uint64_t>(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void put_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw CheckpointError("record name too long");
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline std::string get_string(std::istream& is) {
  const std::uint16_t n = get_le<std::uint16_t>(is);
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n);
  return s;
}

template <typename T>
void put_tensor(std::ostream& os, const std::string& name,
                const Tensor<T>& t) {
  put_string(os, name);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  if constexpr (sizeof(T) == 4) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const T v = t[i];
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_le<std::uint32_t>(os, bits);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const T v = t[i];
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_le<std::uint64_t>(os, bits);
    }
  }
}

template <typename T>
std::pair<std::string, Tensor<T>> get_tensor(std::istream& is) {
  const std::string name = get_string(is);
  const std::uint8_t dtype = get_le<std::uint8_t>(is);
  if (dtype != sizeof(T)) {
    throw CheckpointError("dtype mismatch for " + name + ": file has " +
                          std::to_string(dtype * 8) +
                          "-bit floats, expected " +
                          std::to_string(sizeof(T) * 8) + "-bit");
  }
  const std::uint8_t rank = get_le<std::uint8_t>(is);
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) {
    e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  }
  Tensor<T> t(shape);
  if constexpr (sizeof(T) == 4) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = get_le<std::uint32_t>(is);
      std::memcpy(&t[i], &bits, 4);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::uint64_t bits = get_le<std::uint64_t>(is);
      std::memcpy(&t[i], &bits, 8);
    }
  }
  return {name, std::move(t)};
}

inline void put_config(std::ostream& os, const VggConfig& c) {
  for (auto w : c.stage_widths) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  for (auto w : c.fc_widths) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_classes));
  put_f64(os, c.dropout_p);
  put_le<std::uint8_t>(os, c.block_order == BlockOrder::ConvReluBn ? 0 : 1);
  put_le<std::uint8_t>(os, c.dropout_after_fc1 ? 1 : 0);
  put_le<std::uint8_t>(os, c.dropout_after_fc2 ? 1 : 0);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.input_hw));
  put_f64(os, c.bn_eps);
  put_f64(os, c.bn_momentum);
}

inline VggConfig get_config(std::istream& is) {
  VggConfig c;
  for (auto& w : c.stage_widths) w = get_le<std::uint32_t>(is);
  for (auto& w : c.fc_widths) w = get_le<std::uint32_t>(is);
  c.n_classes = get_le<std::uint32_t>(is);
  c.dropout_p = get_f64(is);
  c.block_order =
      get_le<std::uint8_t>(is) == 0 ? BlockOrder::ConvReluBn : BlockOrder::ConvBnRelu;
  c.dropout_after_fc1 = get_le<std::uint8_t>(is) != 0;
  c.dropout_after_fc2 = get_le<std::uint8_t>(is) != 0;
  c.input_hw = get_le<std::uint32_t>(is);
  c.bn_eps = get_f64(is);
  c.bn_momentum = get_f64(is);
  return c;
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, VggModel<T>& model,
                     const CheckpointExtras& extras,
                     const Optimizer<T>* optimizer = nullptr,
                     const Scheduler* scheduler = nullptr) {
  namespace cd = ckpt_detail;
  // write to a sibling temp file first so an interrupted save never leaves a
  // half-written checkpoint behind the final name
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    cd::put_bytes(os, "FERC", 4);
    cd::put_le<std::uint32_t>(os, kCheckpointVersion);
    cd::put_config(os, model.config());

    cd::put_le<std::uint64_t>(os, extras.epoch);
    cd::put_f64(os, extras.best_val_accuracy);
    cd::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(extras.meta.size()));
    for (const auto& [k, v] : extras.meta) {
      cd::put_string(os, k);
      cd::put_f64(os, v);
    }

    auto params = model.parameters();
    auto buffers = model.buffers();
    cd::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, t] : params) cd::put_tensor(os, name, *t);
    cd::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(buffers.size()));
    for (auto& [name, t] : buffers) cd::put_tensor(os, name, *t);

    cd::put_le<std::uint8_t>(os, optimizer ? 1 : 0);
    if (optimizer) {
      cd::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(optimizer->kind()));
      cd::put_le<std::uint64_t>(os, optimizer->step_count());
      cd::put_le<std::uint64_t>(os, optimizer->average_sample_count());
      const auto& hp = optimizer->hyperparams();
      cd::put_f64(os, hp.lr);
      cd::put_f64(os, hp.momentum);
      cd::put_f64(os, hp.weight_decay);
      cd::put_f64(os, hp.beta1);
      cd::put_f64(os, hp.beta2);
      cd::put_f64(os, hp.eps_adam);
      cd::put_f64(os, hp.eps_adagrad);
      cd::put_f64(os, hp.eps_adadelta);
      cd::put_f64(os, hp.rho);
      cd::put_le<std::uint64_t>(os, hp.asgd_t0);
      auto bufs = optimizer->serialized_buffers();
      cd::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bufs.size()));
      for (auto& [pname, slot, t] : bufs) {
        cd::put_tensor(os, pname + "#" + slot, *t);
      }
    }

    cd::put_le<std::uint8_t>(os, scheduler ? 1 : 0);
    if (scheduler) {
      cd::put_le<std::uint8_t>(os,
                               static_cast<std::uint8_t>(scheduler->config().kind));
      cd::put_f64(os, scheduler->current_lr());
      cd::put_f64(os, scheduler->best_metric());
      cd::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(scheduler->bad_epochs()));
    }
    if (!os) throw IoError("write failure on " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
struct LoadedCheckpoint {
  VggModel<T> model;
  CheckpointExtras extras;
  bool has_optimizer = false;
  OptimKind optim_kind = OptimKind::Sgd;
  HyperParams optim_hp;
  std::uint64_t optim_steps = 0;
  std::uint64_t optim_avg_samples = 0;
  std::map<std::string, Tensor<T>> optim_buffers;  // "param#slot" keys
  bool has_scheduler = false;
  SchedKind sched_kind = SchedKind::Constant;
  double sched_lr = 0.0;
  double sched_best = 0.0;
  int sched_bad_epochs = 0;
};

namespace ckpt_detail {

inline std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, "FERC", 4) != 0) {
    throw CheckpointError("bad magic bytes in " + path.string());
  }
  const std::uint32_t version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  return is;
}

inline CheckpointExtras read_extras(std::istream& is) {
  CheckpointExtras ex;
  ex.epoch = get_le<std::uint64_t>(is);
  ex.best_val_accuracy = get_f64(is);
  const std::uint32_t n_meta = get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    const std::string k = get_string(is);
    ex.meta[k] = get_f64(is);
  }
  return ex;
}

template <typename T>
void read_named_into(std::istream& is,
                     std::vector<std::pair<std::string, Tensor<T>*>> targets) {
  std::map<std::string, Tensor<T>*> by_name(targets.begin(), targets.end());
  const std::uint32_t count = get_le<std::uint32_t>(is);
  if (count != by_name.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " records, model expects " +
                          std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_tensor<T>(is);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError("unknown parameter name in checkpoint: " + name);
    }
    if (it->second->shape() != t.shape()) {
      throw CheckpointError("shape mismatch for parameter " + name +
                            ": checkpoint " + Tensor<T>::shape_string(t.shape()) +
                            ", model " +
                            Tensor<T>::shape_string(it->second->shape()));
    }
    *it->second = std::move(t);
  }
}

}  // namespace ckpt_detail

/// Rebuilds the model recorded in the file (config, parameters, running
/// stats) plus whatever optimizer/scheduler state was stored.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  namespace cd = ckpt_detail;
  std::ifstream is = cd::open_checkpoint(path);
  LoadedCheckpoint<T> out;

  const VggConfig cfg = cd::get_config(is);
  out.extras = cd::read_extras(is);
  SeededRng throwaway(0);
  out.model = VggModel<T>::build(cfg, throwaway);
  cd::read_named_into<T>(is, out.model.parameters());
  cd::read_named_into<T>(is, out.model.buffers());

  if (cd::get_le<std::uint8_t>(is) != 0) {
    out.has_optimizer = true;
    out.optim_kind = static_cast<OptimKind>(cd::get_le<std::uint8_t>(is));
    out.optim_steps = cd::get_le<std::uint64_t>(is);
    out.optim_avg_samples = cd::get_le<std::uint64_t>(is);
    HyperParams& hp = out.optim_hp;
    hp.lr = cd::get_f64(is);
    hp.momentum = cd::get_f64(is);
    hp.weight_decay = cd::get_f64(is);
    hp.beta1 = cd::get_f64(is);
    hp.beta2 = cd::get_f64(is);
    hp.eps_adam = cd::get_f64(is);
    hp.eps_adagrad = cd::get_f64(is);
    hp.eps_adadelta = cd::get_f64(is);
    hp.rho = cd::get_f64(is);
    hp.asgd_t0 = cd::get_le<std::uint64_t>(is);
    const std::uint32_t nb = cd::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nb; ++i) {
      auto [name, t] = cd::get_tensor<T>(is);
      out.optim_buffers[name] = std::move(t);
    }
  }

  if (cd::get_le<std::uint8_t>(is) != 0) {
    out.has_scheduler = true;
    out.sched_kind = static_cast<SchedKind>(cd::get_le<std::uint8_t>(is));
    out.sched_lr = cd::get_f64(is);
    out.sched_best = cd::get_f64(is);
    out.sched_bad_epochs = static_cast<int>(cd::get_le<std::uint64_t>(is));
  }
  return out;
}

/// Loads parameters and buffers into an existing model, validating that the
/// stored records match its registry exactly; errors name the offending
/// parameter.
template <typename T>
CheckpointExtras load_checkpoint_into(const std::filesystem::path& path,
                                      VggModel<T>& model) {
  namespace cd = ckpt_detail;
  std::ifstream is = cd::open_checkpoint(path);
  cd::get_config(is);  // config is advisory here; record shapes decide
  CheckpointExtras extras = cd::read_extras(is);
  cd::read_named_into<T>(is, model.parameters());
  cd::read_named_into<T>(is, model.buffers());
  return extras;
}

/// Rebuilds an optimizer from a loaded checkpoint section.
template <typename T>
Optimizer<T> restore_optimizer(const LoadedCheckpoint<T>& ck) {
  if (!ck.has_optimizer) throw CheckpointError("checkpoint has no optimizer");
  Optimizer<T> opt(ck.optim_kind, ck.optim_hp);
  opt.restore_counters(ck.optim_steps, ck.optim_avg_samples);
  for (const auto& [key, t] : ck.optim_buffers) {
    const auto hash = key.find('#');
    if (hash == std::string::npos) {
      throw CheckpointError("malformed optimizer buffer key " + key);
    }
    opt.restore_buffer(key.substr(0, hash), key.substr(hash + 1), t);
  }
  return opt;
}

}  // namespace fer
