#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "charadial/common/io.hpp"
#include "charadial/numerics/adam.hpp"
#include "charadial/numerics/parameters.hpp"

namespace charadial::numerics {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint layout (little-endian host order):
///   magic "CHDLCKPT" | u32 version | u8 precision (0=f32, 1=f64)
///   u64 header length | header JSON (sorted keys)
///   u64 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims, raw values
///   u8 has_optimizer | u64 step, f64 lr/beta1/beta2/eps, per tensor: m values, v values
template <typename T>
struct Checkpoint {
  Json header = Json::object();
  ParameterStore<T> params;
  std::optional<AdamState<T>> optimizer;
};

template <typename T>
std::string serialize_checkpoint(const Json& header, const ParameterStore<T>& params,
                                 const AdamState<T>* optimizer);

/// Values stored in the other precision are converted on load.
template <typename T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Json& header,
                     const ParameterStore<T>& params, const AdamState<T>* optimizer);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the header JSON and stored precision.
std::pair<Json, Precision> peek_checkpoint(const std::filesystem::path& path);

}  // namespace charadial::numerics
