#pragma once

// Parameter persistence: a flat little-endian float64 array (`<stem>.bin`)
// next to a JSON sidecar (`<stem>.json`) holding layer_dims and activation.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tictac/error.hpp"
#include "tictac/mlp.hpp"

namespace tictac {

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace detail

inline void save_mlp(const Mlp& net, const std::filesystem::path& stem) {
  nlohmann::json meta;
  meta["layer_dims"] = net.layer_dims();
  meta["activation"] = to_string(net.activation());
  meta["parameter_count"] = net.parameter_count();

  std::ofstream js(std::filesystem::path(stem).concat(".json"));
  if (!js) throw Error(ErrorCode::IoError, "cannot write " + stem.string() + ".json");
  js << meta.dump(2) << '\n';

  std::ofstream bin(std::filesystem::path(stem).concat(".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::IoError, "cannot write " + stem.string() + ".bin");
  for (double p : net.parameters()) {
    const std::uint64_t le = detail::to_little_endian(std::bit_cast<std::uint64_t>(p));
    char bytes[8];
    std::memcpy(bytes, &le, 8);
    bin.write(bytes, 8);
  }
}

inline Mlp load_mlp(const std::filesystem::path& stem) {
  std::ifstream js(std::filesystem::path(stem).concat(".json"));
  if (!js) throw Error(ErrorCode::IoError, "cannot read " + stem.string() + ".json");
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("bad sidecar: ") + e.what());
  }
  Mlp net(meta.at("layer_dims").get<std::vector<std::size_t>>(),
          activation_from_string(meta.at("activation").get<std::string>()));

  std::ifstream bin(std::filesystem::path(stem).concat(".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::IoError, "cannot read " + stem.string() + ".bin");
  for (double& p : net.parameters()) {
    char bytes[8];
    if (!bin.read(bytes, 8)) throw Error(ErrorCode::IoError, "parameter file too short");
    std::uint64_t le = 0;
    std::memcpy(&le, bytes, 8);
    p = std::bit_cast<double>(detail::to_little_endian(le));
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::IoError, "parameter file too long");
  return net;
}

}  // namespace tictac
