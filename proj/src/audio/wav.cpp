#include "rfvoice/audio/wav.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "rfvoice/error.hpp"
#include "rfvoice/log.hpp"

namespace rfvoice::audio {
namespace {

constexpr double kScale = 32768.0;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::int16_t to_pcm(double v, std::size_t& clipped) {
  double q = std::nearbyint(v * kScale);
  if (q > 32767.0) {
    q = 32767.0;
    ++clipped;
  } else if (q < -32768.0) {
    q = -32768.0;
    ++clipped;
  }
  return static_cast<std::int16_t>(q);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();

  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint32_t rate = 0;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = data + pos;
    const std::uint32_t chunk_size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > size) {
      // Some writers leave the data size at a placeholder; accept a truncated data chunk.
      if (std::memcmp(chunk, "data", 4) != 0) throw FormatError(path.string() + ": truncated chunk");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw FormatError(path.string() + ": fmt chunk too short");
      const std::uint16_t format = read_u16(data + body);
      const std::uint16_t channels = read_u16(data + body + 2);
      rate = read_u32(data + body + 4);
      const std::uint16_t bits = read_u16(data + body + 14);
      std::uint16_t effective_format = format;
      if (format == 0xFFFE && chunk_size >= 40) effective_format = read_u16(data + body + 24);
      if (effective_format != 1) {
        throw FormatError(path.string() + ": unsupported encoding (format tag " + std::to_string(format) +
                          "), only PCM is supported");
      }
      if (channels != 1) {
        throw FormatError(path.string() + ": unsupported encoding (" + std::to_string(channels) +
                          " channels), only mono is supported");
      }
      if (bits != 16) {
        throw FormatError(path.string() + ": unsupported encoding (" + std::to_string(bits) +
                          "-bit), only 16-bit PCM is supported");
      }
      if (rate == 0) throw FormatError(path.string() + ": zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      pcm = data + body;
      pcm_bytes = std::min<std::size_t>(chunk_size, size - body);
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (!have_fmt) throw FormatError(path.string() + ": missing fmt chunk");
  if (pcm == nullptr) throw FormatError(path.string() + ": missing data chunk");

  AudioClip clip;
  clip.sample_rate_hz = static_cast<double>(rate);
  clip.samples.resize(pcm_bytes / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(pcm + 2 * i));
    clip.samples[i] = static_cast<double>(v) / kScale;
  }
  return clip;
}

std::size_t write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  clip.validate();
  const double rounded_rate = std::nearbyint(clip.sample_rate_hz);
  if (rounded_rate != clip.sample_rate_hz || rounded_rate > 4294967295.0) {
    throw ArgumentError("write_wav: sample rate must be an integer Hz value");
  }
  const auto rate = static_cast<std::uint32_t>(rounded_rate);
  const auto data_bytes = static_cast<std::uint32_t>(clip.size() * 2);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);

  std::size_t clipped = 0;
  for (double v : clip.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm(v, clipped)));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());

  if (clipped > 0) {
    log::warn(path.string() + ": " + std::to_string(clipped) + " samples clipped to PCM16 range");
  }
  return clipped;
}

std::vector<double> quantize_pcm16(std::span<const double> x) {
  std::vector<double> out(x.size());
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(to_pcm(x[i], clipped)) / kScale;
  return out;
}

}  // namespace rfvoice::audio
