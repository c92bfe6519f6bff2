#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kpt3d/errors.hpp"

namespace kpt3d {

/// Dense channel-major stack of maps, C×H×W with `components` values per
/// pixel (1 for scalar maps, 2 for vector fields).
template <typename T>
class MapStack
{
public:
  MapStack() = default;
  MapStack(int channels, int height, int width, int components = 1, T fill = T{})
    : channels_(channels), height_(height), width_(width), components_(components),
      data_(static_cast<std::size_t>(channels) * height * width * components, fill)
  {
    if (channels < 0 || height < 0 || width < 0 || components < 1)
      throw ShapeMismatch("map stack: invalid shape");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int components() const { return components_; }
  std::size_t size() const { return data_.size(); }

  bool same_shape(const MapStack& o) const
  {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_
           && components_ == o.components_;
  }

  std::size_t index(int c, int i, int j, int k = 0) const
  {
    return ((static_cast<std::size_t>(c) * height_ + i) * width_ + j) * components_ + k;
  }

  T& operator()(int c, int i, int j, int k = 0) { return data_[index(c, i, j, k)]; }
  const T& operator()(int c, int i, int j, int k = 0) const { return data_[index(c, i, j, k)]; }

  bool inside(int i, int j) const { return i >= 0 && j >= 0 && i < height_ && j < width_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const MapStack&, const MapStack&) = default;

private:
  int channels_ = 0, height_ = 0, width_ = 0, components_ = 1;
  std::vector<T> data_;
};

using FloatMaps = MapStack<float>;

// Tensor file layout, all integers uint32 little-endian:
//
//   bytes  0..3   magic "KP3T"
//   bytes  4..7   version (1)
//   bytes  8..11  C
//   bytes 12..15  H
//   bytes 16..19  W
//   bytes 20..23  map kind (MapKind)
//   bytes 24..    C*H*W*components float32 little-endian, order (c, i, j, k)
//
// components is 2 for kCenterField, 1 for every other kind.

enum class MapKind : std::uint32_t
{
  kHeatmap = 0,
  kCenterField = 1,
  kDepth = 2,
  kValidMask = 3,
};

inline constexpr std::array<char, 4> kTensorMagic{'K', 'P', '3', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline int components_of(MapKind kind) { return kind == MapKind::kCenterField ? 2 : 1; }

inline const char* to_string(MapKind kind)
{
  switch (kind) {
    case MapKind::kHeatmap: return "heatmap";
    case MapKind::kCenterField: return "center";
    case MapKind::kDepth: return "depth";
    case MapKind::kValidMask: return "mask";
  }
  return "unknown";
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
  for (int b = 0; b < 4; ++b)
    out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8)
         | (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_tensor(const FloatMaps& maps, MapKind kind)
{
  if (maps.components() != components_of(kind))
    throw ShapeMismatch(std::string("tensor encode: wrong component count for ") + to_string(kind));
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, kTensorVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(maps.channels()));
  detail::put_u32(out, static_cast<std::uint32_t>(maps.height()));
  detail::put_u32(out, static_cast<std::uint32_t>(maps.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(kind));
  out.reserve(out.size() + 4 * maps.size());
  for (float v : maps.data())
    detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

struct DecodedTensor
{
  MapKind kind;
  FloatMaps maps;
};

inline DecodedTensor decode_tensor(std::string_view bytes)
{
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0)
    throw FormatError("tensor: bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (detail::get_u32(p + 4) != kTensorVersion)
    throw FormatError("tensor: unsupported version");
  const auto C = detail::get_u32(p + 8), H = detail::get_u32(p + 12), W = detail::get_u32(p + 16);
  const auto raw_kind = detail::get_u32(p + 20);
  if (raw_kind > 3)
    throw FormatError("tensor: unknown map kind");
  const auto kind = static_cast<MapKind>(raw_kind);
  if (C > 4096 || H > 65536 || W > 65536)
    throw FormatError("tensor: implausible shape");
  FloatMaps maps(static_cast<int>(C), static_cast<int>(H), static_cast<int>(W), components_of(kind));
  if (bytes.size() != 24 + 4 * maps.size())
    throw FormatError("tensor: payload size does not match header");
  for (std::size_t n = 0; n < maps.size(); ++n)
    maps.data()[n] = std::bit_cast<float>(detail::get_u32(p + 24 + 4 * n));
  return {kind, std::move(maps)};
}

inline void write_tensor(const std::filesystem::path& path, const FloatMaps& maps, MapKind kind)
{
  const std::string bytes = encode_tensor(maps, kind);
  std::ofstream out(path, std::ios::binary);
  if (!out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
    throw Error("cannot write tensor file " + path.string());
}

inline DecodedTensor read_tensor(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw NotFound("cannot open tensor file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline FloatMaps read_tensor(const std::filesystem::path& path, MapKind expected)
{
  auto t = read_tensor(path);
  if (t.kind != expected)
    throw FormatError(path.string() + ": expected " + to_string(expected) + " tensor");
  return std::move(t.maps);
}

}  // namespace kpt3d
