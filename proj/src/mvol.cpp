#include "clotseg/mvol.hpp"

#include <cstdint>
#include <fstream>

#include "clotseg/errors.hpp"

namespace clotseg {
namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::int64_t kMaxVoxels = std::int64_t(1) << 32;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("MVOL truncated while reading ") + what);
  return v;
}

void put_name(std::ostream& os, const std::string& name) {
  if (name.size() > 255) throw IoError("MVOL channel name too long: " + name);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string get_name(std::istream& is) {
  const auto len = get<std::uint8_t>(is, "channel name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw IoError("MVOL truncated while reading channel name");
  return name;
}

}  // namespace

void write_mvol(const Volume& vol, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("MVOL", 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(vol.modalities.size()));
  put<std::uint16_t>(os, static_cast<std::uint16_t>(vol.masks.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(vol.nx));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(vol.ny));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(vol.nz));
  for (float s : vol.spacing) put<float>(os, s);
  const auto n = static_cast<std::streamsize>(vol.voxels());
  for (std::size_t i = 0; i < vol.modalities.size(); ++i) {
    put_name(os, vol.modality_names[i]);
    put<std::uint8_t>(os, vol.presence[i]);
    os.write(reinterpret_cast<const char*>(vol.modalities[i].data()),
             n * static_cast<std::streamsize>(sizeof(float)));
  }
  for (std::size_t i = 0; i < vol.masks.size(); ++i) {
    put_name(os, vol.mask_names[i]);
    put<std::uint8_t>(os, 1);
    os.write(reinterpret_cast<const char*>(vol.masks[i].data()), n);
  }
  if (!os) throw IoError("write failed: " + path);
}

Volume read_mvol(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MVOL") throw IoError("bad MVOL magic in " + path);
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kVersion) {
    throw IoError("unsupported MVOL version " + std::to_string(version) + " in " + path);
  }
  const auto n_mod = get<std::uint16_t>(is, "modality count");
  const auto n_mask = get<std::uint16_t>(is, "mask count");
  Volume vol;
  vol.nx = get<std::uint32_t>(is, "X");
  vol.ny = get<std::uint32_t>(is, "Y");
  vol.nz = get<std::uint32_t>(is, "Z");
  if (vol.nx == 0 || vol.ny == 0 || vol.nz == 0 || vol.voxels() > kMaxVoxels) {
    throw IoError("MVOL dimension overflow in " + path);
  }
  for (float& s : vol.spacing) s = get<float>(is, "spacing");
  const auto n = static_cast<std::streamsize>(vol.voxels());
  for (std::uint16_t i = 0; i < n_mod; ++i) {
    vol.modality_names.push_back(get_name(is));
    vol.presence.push_back(get<std::uint8_t>(is, "presence"));
    std::vector<float> data(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()),
            n * static_cast<std::streamsize>(sizeof(float)));
    if (!is) throw IoError("MVOL modality data truncated in " + path);
    vol.modalities.push_back(std::move(data));
  }
  for (std::uint16_t i = 0; i < n_mask; ++i) {
    vol.mask_names.push_back(get_name(is));
    get<std::uint8_t>(is, "mask presence");
    std::vector<std::uint8_t> data(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()), n);
    if (!is) throw IoError("MVOL mask data truncated in " + path);
    vol.masks.push_back(std::move(data));
  }
  return vol;
}

}  // namespace clotseg
