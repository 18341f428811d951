#include "rfvoice/nn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rfvoice/error.hpp"

namespace rfvoice::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& off) {
  if (off + sizeof(T) > buf.size()) throw FormatError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MaskNet& model) {
  std::string buf = "RFVM";
  put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string desc = model.config().descriptor();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(desc.size()));
  buf += desc;
  const auto flat = model.params().flatten();
  put<std::uint64_t>(buf, flat.size());
  for (double v : flat) put<float>(buf, static_cast<float>(v));
  put<std::uint32_t>(buf, crc_of(buf.data(), buf.size()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(const std::filesystem::path& path, MaskNet& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 4 + 4 + 8 + 4 || buf.compare(0, 4, "RFVM") != 0) {
    throw FormatError(path.string() + ": not a model checkpoint");
  }
  const std::size_t body = buf.size() - 4;
  std::size_t tail = body;
  if (get<std::uint32_t>(buf, tail) != crc_of(buf.data(), body)) throw FormatError(path.string() + ": checksum mismatch");
  std::size_t off = 4;
  const auto version = get<std::uint32_t>(buf, off);
  if (version != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto dlen = get<std::uint32_t>(buf, off);
  if (off + dlen > body) throw FormatError(path.string() + ": truncated descriptor");
  const std::string desc = buf.substr(off, dlen);
  off += dlen;
  if (desc != model.config().descriptor()) {
    throw FormatError(path.string() + ": topology " + desc + " does not match " + model.config().descriptor());
  }
  const auto count = get<std::uint64_t>(buf, off);
  if (count != model.params().count() || off + count * sizeof(float) != body) {
    throw FormatError(path.string() + ": parameter count mismatch");
  }
  std::vector<double> flat(count);
  for (auto& v : flat) v = static_cast<double>(get<float>(buf, off));
  model.params().unflatten(flat);
}

void round_to_checkpoint_precision(MaskNet& model) {
  auto flat = model.params().flatten();
  for (auto& v : flat) v = static_cast<double>(static_cast<float>(v));
  model.params().unflatten(flat);
}

}  // namespace rfvoice::nn
