#pragma once

#include "microcl/contrastive.hpp"
#include "microcl/net.hpp"
#include "microcl/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace microcl {

inline constexpr std::string_view kCheckpointMagic = "MCLCK001";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk training state. Layout (all integers and floats little-endian):
///   magic[8] version:u32 config_hash:u64 iteration:i64
///   nets:      count:u32 { name, layers:u32 { kind:u8 name in out kernel stride padding in_f out_f pool:i32 k:f64 } }
///   params:    paramset
///   ema:       paramset
///   optimizer: lr:f64 momentum:f64 velocity:paramset
///   queue:     capacity:i32 dim:i32 cursor:i32 fill:i32 storage:f32[capacity*dim]
///   rng:       string
/// where string = length:u32 bytes, paramset = count:u32 { name, weight, bias },
/// tensor = rank:u32 dims:i32[rank] data:f32[prod(dims)].
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::int64_t iteration = 0;
  std::vector<std::pair<std::string, NetSpec>> nets;
  ParamSet<float> params;
  ParamSet<float> ema_params;
  OptimizerState<float> optimizer;
  EmbeddingQueue queue;
  std::string rng_state;

  /// Spec of the net stored under `name`; throws if absent.
  const NetSpec& net(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string serialize_checkpoint(const Checkpoint& ck);
/// Throws std::runtime_error on bad magic, unknown version, truncation or
/// trailing bytes.
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from_trainer(const ContrastiveModel& model, const TrainerState& state, std::uint64_t config_hash);
TrainerState trainer_from_checkpoint(const Checkpoint& ck);

/// Parameters of the layers of `net` only.
ParamSet<float> params_for(const NetSpec& net, const ParamSet<float>& params);

}  // namespace microcl
