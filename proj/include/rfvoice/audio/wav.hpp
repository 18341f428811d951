#pragma once

#include <filesystem>

#include "rfvoice/audio/clip.hpp"

namespace rfvoice::audio {

// RIFF/WAVE, PCM 16-bit, mono. Samples map to k/32768.
AudioClip read_wav(const std::filesystem::path& path);

// Values outside [-1, 32767/32768] are clipped and a warning is logged.
// Returns the number of clipped samples.
std::size_t write_wav(const std::filesystem::path& path, const AudioClip& clip);

// Quantizes like a write/read round trip, without touching the filesystem.
std::vector<double> quantize_pcm16(std::span<const double> x);

}  // namespace rfvoice::audio
