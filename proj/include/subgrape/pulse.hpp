#pragma once

#include "subgrape/spin_system.hpp"

#include <cstdint>
#include <random>

namespace subgrape {

struct ChannelSpec {
  ControlChannel channel;
  /// Amplitude bound in rad/s.
  double bound = 0.0;

  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// Default per-channel bound: 2*pi*20 kHz.
inline constexpr double kDefaultBound = kTwoPi * 20e3;

/// Piecewise-constant amplitudes u[m, c] (rad/s) on M slices of length tau_s.
struct PulseProgram {
  double tau_s = 0.0;
  std::vector<ChannelSpec> channels;
  RMatrix amplitudes;  // M x C

  std::size_t slices() const { return static_cast<std::size_t>(amplitudes.rows()); }
  std::size_t channel_count() const { return channels.size(); }
  double duration() const { return tau_s * static_cast<double>(slices()); }

  bool within_bounds() const {
    for (Eigen::Index c = 0; c < amplitudes.cols(); ++c) {
      const double b = channels[static_cast<std::size_t>(c)].bound;
      if ((amplitudes.col(c).array().abs() > b).any()) return false;
    }
    return true;
  }
};

inline std::vector<ChannelSpec> default_channel_specs(const SpinSystem& sys, double bound = kDefaultBound) {
  std::vector<ChannelSpec> out;
  for (const auto& ch : control_channels(sys)) out.push_back({ch, bound});
  return out;
}

inline PulseProgram zero_pulse(std::vector<ChannelSpec> channels, std::size_t m, double tau_s) {
  if (m == 0) throw InputError("pulse must have at least one slice");
  if (!(tau_s > 0.0)) throw InputError("slice duration must be positive");
  PulseProgram p;
  p.tau_s = tau_s;
  p.amplitudes = RMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(channels.size()));
  p.channels = std::move(channels);
  return p;
}

inline PulseProgram clip(PulseProgram p) {
  for (Eigen::Index c = 0; c < p.amplitudes.cols(); ++c) {
    const double b = p.channels[static_cast<std::size_t>(c)].bound;
    p.amplitudes.col(c) = p.amplitudes.col(c).cwiseMax(-b).cwiseMin(b);
  }
  return p;
}

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Smooth random start: per channel a sum of n_modes random-phase sinusoids with
/// frequencies q/(2T), q = 1..n_modes, scaled to half the bound.
inline PulseProgram random_pulse(std::vector<ChannelSpec> channels, std::size_t m, double tau_s,
                                 std::size_t n_modes, std::uint64_t seed) {
  if (n_modes == 0) throw InputError("random_pulse: n_modes must be >= 1");
  PulseProgram p = zero_pulse(std::move(channels), m, tau_s);
  std::mt19937_64 rng(seed);
  const double total = p.duration();
  for (std::size_t c = 0; c < p.channel_count(); ++c) {
    std::vector<double> amp(n_modes), phase(n_modes);
    for (std::size_t q = 0; q < n_modes; ++q) {
      amp[q] = 2.0 * detail::unit_uniform(rng) - 1.0;
      phase[q] = kTwoPi * detail::unit_uniform(rng);
    }
    RVector col(static_cast<Eigen::Index>(m));
    for (std::size_t s = 0; s < m; ++s) {
      const double t = (static_cast<double>(s) + 0.5) * tau_s;
      double v = 0.0;
      for (std::size_t q = 0; q < n_modes; ++q) {
        const double freq = static_cast<double>(q + 1) / (2.0 * total);
        v += amp[q] * std::sin(kTwoPi * freq * t + phase[q]);
      }
      col(static_cast<Eigen::Index>(s)) = v;
    }
    const double peak = col.cwiseAbs().maxCoeff();
    const double bound = p.channels[c].bound;
    if (peak > 0.0 && bound > 0.0) col *= 0.5 * bound / peak;
    else col.setZero();
    p.amplitudes.col(static_cast<Eigen::Index>(c)) = col;
  }
  return clip(std::move(p));
}

// ---------------------------------------------------------------------------
// File format:
//   PULSE v1
//   TAU <seconds>
//   M <int>
//   CHANNELS <species,axis,bound> ...
//   M lines of C reals (rad/s)

namespace detail {

inline std::string format_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline std::string write_pulse(const PulseProgram& p) {
  std::string out = "PULSE v1\n";
  out += "TAU " + detail::format_exact(p.tau_s) + "\n";
  out += "M " + std::to_string(p.slices()) + "\n";
  out += "CHANNELS";
  for (const auto& c : p.channels) {
    out += " " + c.channel.species + "," + axis_name(c.channel.axis) + "," + detail::format_exact(c.bound);
  }
  out += "\n";
  for (Eigen::Index m = 0; m < p.amplitudes.rows(); ++m) {
    for (Eigen::Index c = 0; c < p.amplitudes.cols(); ++c) {
      if (c) out += " ";
      out += detail::format_exact(p.amplitudes(m, c));
    }
    out += "\n";
  }
  return out;
}

inline PulseProgram read_pulse(std::string_view text) {
  std::istringstream input{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  auto next_line = [&](std::vector<std::string>& tok) {
    while (std::getline(input, raw)) {
      ++lineno;
      tok = detail::split_ws(raw);
      if (!tok.empty()) return true;
    }
    return false;
  };
  auto number = [&](const std::string& s) {
    auto v = detail::parse_double(s);
    if (!v) throw ParseError(lineno, "invalid number '" + s + "'");
    if (!std::isfinite(*v)) throw ParseError(lineno, "non-finite value '" + s + "'");
    return *v;
  };

  std::vector<std::string> tok;
  if (!next_line(tok) || tok.size() != 2 || tok[0] != "PULSE" || tok[1] != "v1") {
    throw ParseError(lineno, "expected header 'PULSE v1'");
  }
  PulseProgram p;
  if (!next_line(tok) || tok.size() != 2 || tok[0] != "TAU") throw ParseError(lineno, "expected 'TAU <seconds>'");
  p.tau_s = number(tok[1]);
  if (!(p.tau_s > 0.0)) throw ParseError(lineno, "TAU must be positive");
  if (!next_line(tok) || tok.size() != 2 || tok[0] != "M") throw ParseError(lineno, "expected 'M <int>'");
  long long m = 0;
  {
    auto res = std::from_chars(tok[1].data(), tok[1].data() + tok[1].size(), m);
    if (res.ec != std::errc{} || res.ptr != tok[1].data() + tok[1].size()) {
      throw ParseError(lineno, "invalid slice count '" + tok[1] + "'");
    }
  }
  if (m < 1) throw ParseError(lineno, "M must be >= 1");
  if (!next_line(tok) || tok.empty() || tok[0] != "CHANNELS") throw ParseError(lineno, "expected 'CHANNELS ...'");
  for (std::size_t i = 1; i < tok.size(); ++i) {
    const std::string& d = tok[i];
    auto c1 = d.find(',');
    auto c2 = c1 == std::string::npos ? std::string::npos : d.find(',', c1 + 1);
    if (c2 == std::string::npos || d.find(',', c2 + 1) != std::string::npos) {
      throw ParseError(lineno, "malformed channel descriptor '" + d + "'");
    }
    ChannelSpec spec;
    spec.channel.species = d.substr(0, c1);
    try {
      spec.channel.axis = parse_axis(d.substr(c1 + 1, c2 - c1 - 1));
    } catch (const InputError& e) {
      throw ParseError(lineno, e.what());
    }
    spec.bound = number(d.substr(c2 + 1));
    if (spec.bound < 0.0) throw ParseError(lineno, "negative channel bound");
    p.channels.push_back(spec);
  }
  if (p.channels.empty()) throw ParseError(lineno, "no channels declared");
  p.amplitudes.resize(m, static_cast<Eigen::Index>(p.channels.size()));
  for (long long r = 0; r < m; ++r) {
    if (!next_line(tok)) throw ParseError(lineno + 1, "expected " + std::to_string(m) + " amplitude rows");
    if (tok.size() != p.channels.size()) {
      throw ParseError(lineno, "row has " + std::to_string(tok.size()) + " entries, expected " +
                                   std::to_string(p.channels.size()));
    }
    for (std::size_t c = 0; c < tok.size(); ++c) p.amplitudes(r, static_cast<Eigen::Index>(c)) = number(tok[c]);
  }
  if (next_line(tok)) throw ParseError(lineno, "unexpected trailing data");
  if (!p.within_bounds()) throw InputError("pulse amplitudes exceed their channel bounds");
  return p;
}

}  // namespace subgrape
