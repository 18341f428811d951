#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rfvoice/audio/clip.hpp"

namespace rfvoice::tag {

using cplx = std::complex<double>;

// Physical constants of the voltage-sensing resonator and the parametric
// resonator chain. The permittivity-area product and depletion width are
// folded into the equilibrium capacitance c0.
struct TagParams {
  double inductance_h = 10e-9;
  double c0_f = 9.1e-12;
  double phi_t_v = 25.85e-3;   // thermal voltage
  double gamma12 = 1.0;        // PR x antenna frequency gain
  double f_b_hz = 400e6;       // butterfly-mode resonance
  double piezo_sensitivity_v = 1e-3;

  // Default constants with gamma12 calibrated so the quiescent carrier sits
  // at 515 MHz and the sensitivity mapping full-scale pressure to 4 kHz of
  // linearized deviation.
  TagParams();
  // Recomputes gamma12 and sensitivity for the current L, C0 and phi_T.
  void calibrate(double carrier_hz, double full_scale_deviation_hz);

  double f_res0_hz() const;
  void validate() const;  // throws ArgumentError
};

inline constexpr double kDefaultCarrierHz = 515e6;
inline constexpr double kDefaultFullScaleDeviationHz = 4000.0;

struct ChannelParams {
  std::optional<double> snr_db;  // nullopt: noiseless
  double attenuation_db = 0.0;
  double cfo_hz = 0.0;
  double cfo_drift_hz_per_s = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IQTrace {
  std::vector<cplx> samples;
  double sample_rate_hz = 192000.0;
  double if_center_hz = 40000.0;

  std::size_t size() const { return samples.size(); }
  void validate() const;
};

enum class ResonanceMode { Exact, Linearized };

// output = sens * pressure. Throws DataError on non-finite input.
audio::AudioClip piezo_voltage(const audio::AudioClip& pressure, double sensitivity_v);

// C0 / sqrt(1 + v/phi_T). Throws DomainError when v <= -phi_T.
double junction_capacitance(double v_pz, const TagParams& p);

// Exact: f_res0 (1 + v/phi_T)^(1/4). Linearized: f_res0 (1 + v/(4 phi_T)).
double resonance_frequency(double v_pz, const TagParams& p, ResonanceMode mode);

struct FrequencyPlan {
  double f_c0_hz;  // quiescent reflection carrier
  double f_b_hz;
  double f_ex_hz;  // excitation = carrier + butterfly
  bool degenerate; // f_b == 0: excitation and reflection coincide
};

// Logs a warning for the degenerate plan.
FrequencyPlan frequency_plan(const TagParams& p);

// Carrier frequency shift for a piezo voltage (Hz, relative to f_c0).
double frequency_deviation(double v_pz, const TagParams& p, ResonanceMode mode = ResonanceMode::Linearized);

// Unit-amplitude running-phase FM at the IF. `voice` is normalized pressure
// in [-1, 1]; it is converted to piezo voltage and resampled to iq_rate.
// Throws AliasingError when the peak deviation exceeds iq_rate/4 or the
// occupied band crosses Nyquist.
IQTrace synthesize_backscatter_iq(const audio::AudioClip& voice, const TagParams& p, double if_center_hz,
                                  double iq_rate_hz, ResonanceMode mode = ResonanceMode::Linearized);

// Flat attenuation, CFO rotation with linear drift and complex AWGN.
IQTrace apply_channel(const IQTrace& iq, const ChannelParams& ch);

// Raw interleaved little-endian float32 (I,Q) at `path`, sidecar text header
// at `path` + ".hdr".
void write_iq(const std::filesystem::path& path, const IQTrace& trace);
IQTrace read_iq(const std::filesystem::path& path);

}  // namespace rfvoice::tag
