#include "microcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace microcl {

const NetSpec& Checkpoint::net(const std::string& name) const {
  for (const auto& [n, spec] : nets)
    if (n == name) return spec;
  throw std::runtime_error("checkpoint has no net named '" + name + "'");
}

namespace {

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void i32(std::int32_t v) { uint(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { uint(v); }
  void i64(std::int64_t v) { uint(static_cast<std::uint64_t>(v)); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }

  void tensor(const TensorF& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) i32(d);
    for (float v : t.values()) f32(v);
  }
  void params(const ParamSet<float>& p) {
    u32(static_cast<std::uint32_t>(p.size()));
    for (const auto& [name, lp] : p) {
      str(name);
      tensor(lp.weight);
      tensor(lp.bias);
    }
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(uint<std::uint32_t>()); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(uint<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  TensorF tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = i32();
      if (d < 0) throw std::runtime_error("checkpoint: negative tensor dimension");
      count *= static_cast<std::size_t>(d);
    }
    need(count * 4);
    TensorF t(shape);
    for (auto& v : t.values()) v = f32();
    return t;
  }
  ParamSet<float> params() {
    ParamSet<float> p;
    const std::uint32_t n = u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = str();
      LayerParams<float> lp;
      lp.weight = tensor();
      lp.bias = tensor();
      p.emplace(std::move(name), std::move(lp));
    }
    return p;
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw std::runtime_error("checkpoint is truncated");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(ck.config_hash);
  w.i64(ck.iteration);
  w.u32(static_cast<std::uint32_t>(ck.nets.size()));
  for (const auto& [name, spec] : ck.nets) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(spec.size()));
    for (const auto& l : spec) {
      w.u8(static_cast<std::uint8_t>(l.kind));
      w.str(l.name);
      for (int v : {l.in_channels, l.out_channels, l.kernel, l.stride, l.padding, l.in_features, l.out_features, l.pool})
        w.i32(v);
      w.f64(l.k_percent);
    }
  }
  w.params(ck.params);
  w.params(ck.ema_params);
  w.f64(ck.optimizer.learning_rate);
  w.f64(ck.optimizer.momentum);
  w.params(ck.optimizer.velocity);
  w.i32(ck.queue.capacity());
  w.i32(ck.queue.dim());
  w.i32(ck.queue.cursor());
  w.i32(ck.queue.size());
  for (Eigen::Index i = 0; i < ck.queue.storage().size(); ++i) w.f32(ck.queue.storage().data()[i]);
  w.str(ck.rng_state);
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic)
    throw std::runtime_error("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " (this build reads " +
                             std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_hash = r.u64();
  ck.iteration = r.i64();
  const std::uint32_t nets = r.u32();
  for (std::uint32_t i = 0; i < nets; ++i) {
    std::string name = r.str();
    NetSpec spec(r.u32());
    for (auto& l : spec) {
      const std::uint8_t kind = r.u8();
      if (kind > static_cast<std::uint8_t>(LayerKind::ksparse))
        throw std::runtime_error("checkpoint: unknown layer kind " + std::to_string(kind));
      l.kind = static_cast<LayerKind>(kind);
      l.name = r.str();
      for (int* v : {&l.in_channels, &l.out_channels, &l.kernel, &l.stride, &l.padding, &l.in_features,
                     &l.out_features, &l.pool})
        *v = r.i32();
      l.k_percent = r.f64();
    }
    ck.nets.emplace_back(std::move(name), std::move(spec));
  }
  ck.params = r.params();
  ck.ema_params = r.params();
  ck.optimizer.learning_rate = r.f64();
  ck.optimizer.momentum = r.f64();
  ck.optimizer.velocity = r.params();
  const int capacity = r.i32(), dim = r.i32(), cursor = r.i32(), fill = r.i32();
  if (capacity < 0 || dim < 0) throw std::runtime_error("checkpoint: negative queue size");
  if (capacity > 0) {
    MatrixR<float> storage(capacity, dim);
    for (Eigen::Index i = 0; i < storage.size(); ++i) storage.data()[i] = r.f32();
    ck.queue = EmbeddingQueue::restore(std::move(storage), cursor, fill);
  }
  ck.rng_state = r.str();
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return deserialize_checkpoint(buf.str());
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Checkpoint checkpoint_from_trainer(const ContrastiveModel& model, const TrainerState& state, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  ck.iteration = state.iteration;
  ck.nets = {{"extractor", model.extractor}, {"head", model.head}};
  ck.params = state.theta;
  ck.ema_params = state.theta_m;
  ck.optimizer = state.optimizer;
  ck.queue = state.queue;
  ck.rng_state = state.rng.state();
  return ck;
}

TrainerState trainer_from_checkpoint(const Checkpoint& ck) {
  TrainerState s;
  s.theta = ck.params;
  s.theta_m = ck.ema_params;
  require_same_layout(s.theta, s.theta_m, "checkpoint EMA parameters");
  s.optimizer = ck.optimizer;
  s.queue = ck.queue;
  s.rng.restore(ck.rng_state);
  s.iteration = static_cast<int>(ck.iteration);
  return s;
}

ParamSet<float> params_for(const NetSpec& net, const ParamSet<float>& params) {
  ParamSet<float> out;
  for (const auto& l : net)
    if (l.has_params()) {
      auto it = params.find(l.name);
      if (it == params.end()) throw std::runtime_error("no parameters for layer '" + l.name + "'");
      out.emplace(l.name, it->second);
    }
  return out;
}

}  // namespace microcl
