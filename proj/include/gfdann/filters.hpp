/*
 * Copyright 2026 GFDANN Toolkit Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "gfdann/errors.hpp"
#include "gfdann/tensor.hpp"

namespace gfdann {

// One second-order section, denominator normalized to a0 = 1.
struct Biquad {
  double b0, b1, b2;
  double a1, a2;
};

using SosFilter = std::vector<Biquad>;

namespace detail {

using cplx = std::complex<double>;

struct Zpk {
  std::vector<cplx> zeros;
  std::vector<cplx> poles;
  double gain = 1.0;
};

// Analog Butterworth low-pass prototype: unit cutoff, no zeros,
// poles evenly spaced on the left-half unit circle.
inline Zpk butter_prototype(int order) {
  Zpk out;
  for (int k = 0; k < order; ++k) {
    double theta = M_PI * (2.0 * k + order + 1.0) / (2.0 * order);
    out.poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return out;
}

// Low-pass (unit cutoff) to band-pass with center wo, width bw.
inline Zpk lp_to_bandpass(const Zpk& lp, double wo, double bw) {
  Zpk out;
  std::size_t degree = lp.poles.size() - lp.zeros.size();
  auto expand = [&](const std::vector<cplx>& roots, std::vector<cplx>& dst) {
    for (cplx r : roots) {
      cplx rs = r * (bw / 2.0);
      cplx d = std::sqrt(rs * rs - wo * wo);
      dst.push_back(rs + d);
      dst.push_back(rs - d);
    }
  };
  expand(lp.zeros, out.zeros);
  expand(lp.poles, out.poles);
  for (std::size_t i = 0; i < degree; ++i) out.zeros.emplace_back(0.0, 0.0);
  out.gain = lp.gain * std::pow(bw, static_cast<double>(degree));
  return out;
}

// Low-pass (unit cutoff) to band-stop with center wo, width bw.
inline Zpk lp_to_bandstop(const Zpk& lp, double wo, double bw) {
  Zpk out;
  std::size_t degree = lp.poles.size() - lp.zeros.size();
  auto expand = [&](const std::vector<cplx>& roots, std::vector<cplx>& dst) {
    for (cplx r : roots) {
      cplx ri = (bw / 2.0) / r;
      cplx d = std::sqrt(ri * ri - wo * wo);
      dst.push_back(ri + d);
      dst.push_back(ri - d);
    }
  };
  expand(lp.zeros, out.zeros);
  expand(lp.poles, out.poles);
  for (std::size_t i = 0; i < degree; ++i) {
    out.zeros.emplace_back(0.0, wo);
    out.zeros.emplace_back(0.0, -wo);
  }
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (cplx z : lp.zeros) num *= -z;
  for (cplx p : lp.poles) den *= -p;
  out.gain = lp.gain * (num / den).real();
  return out;
}

// Bilinear transform of an analog zpk at sample rate fs.
inline Zpk bilinear(const Zpk& analog, double fs) {
  Zpk out;
  double fs2 = 2.0 * fs;
  cplx num(1.0, 0.0), den(1.0, 0.0);
  for (cplx z : analog.zeros) {
    out.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (cplx p : analog.poles) {
    out.poles.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  std::size_t degree = analog.poles.size() - analog.zeros.size();
  for (std::size_t i = 0; i < degree; ++i) out.zeros.emplace_back(-1.0, 0.0);
  out.gain = analog.gain * (num / den).real();
  return out;
}

// Groups roots into conjugate (or real) pairs.  Requires an even count,
// which holds for every design produced here.
inline std::vector<std::pair<cplx, cplx>> conjugate_pairs(std::vector<cplx> roots) {
  constexpr double kImagTol = 1e-10;
  std::vector<std::pair<cplx, cplx>> pairs;
  std::vector<cplx> reals;
  std::vector<bool> used(roots.size(), false);
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (used[i]) continue;
    if (std::abs(roots[i].imag()) <= kImagTol) {
      reals.push_back(roots[i]);
      used[i] = true;
      continue;
    }
    used[i] = true;
    std::size_t best = roots.size();
    double best_d = 0.0;
    for (std::size_t j = i + 1; j < roots.size(); ++j) {
      if (used[j] || std::abs(roots[j].imag()) <= kImagTol) continue;
      double d = std::abs(roots[j] - std::conj(roots[i]));
      if (best == roots.size() || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    if (best == roots.size()) {
      throw NumericalError("filter design: complex root without conjugate partner");
    }
    used[best] = true;
    pairs.emplace_back(roots[i], roots[best]);
  }
  // Real roots: pair extremes together so band-pass zeros at +1 and -1
  // land in the same section.
  std::sort(reals.begin(), reals.end(),
            [](cplx a, cplx b) { return a.real() < b.real(); });
  while (!reals.empty()) {
    if (reals.size() == 1) {
      throw NumericalError("filter design: odd number of real roots");
    }
    pairs.emplace_back(reals.front(), reals.back());
    reals.erase(reals.begin());
    reals.pop_back();
  }
  return pairs;
}

// Converts a digital zpk to cascaded biquads.  The overall gain is
// applied to the first section.
inline SosFilter zpk_to_sos(const Zpk& zpk) {
  if (zpk.poles.size() != zpk.zeros.size() || zpk.poles.size() % 2 != 0) {
    throw NumericalError("filter design: expected matched even zero/pole counts");
  }
  auto pole_pairs = conjugate_pairs(zpk.poles);
  auto zero_pairs = conjugate_pairs(zpk.zeros);
  std::sort(pole_pairs.begin(), pole_pairs.end(),
            [](const auto& a, const auto& b) { return std::abs(a.first) < std::abs(b.first); });

  SosFilter sos;
  std::vector<bool> zused(zero_pairs.size(), false);
  for (const auto& pp : pole_pairs) {
    std::size_t best = zero_pairs.size();
    double best_d = 0.0;
    for (std::size_t j = 0; j < zero_pairs.size(); ++j) {
      if (zused[j]) continue;
      double d = std::abs(zero_pairs[j].first - pp.first) +
                 std::abs(zero_pairs[j].second - pp.second);
      if (best == zero_pairs.size() || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    zused[best] = true;
    const auto& zp = zero_pairs[best];
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -(zp.first + zp.second).real();
    s.b2 = (zp.first * zp.second).real();
    s.a1 = -(pp.first + pp.second).real();
    s.a2 = (pp.first * pp.second).real();
    sos.push_back(s);
  }
  for (Biquad& s : sos) {
    if (!std::isfinite(s.b1) || !std::isfinite(s.a1) || !std::isfinite(s.b2) ||
        !std::isfinite(s.a2)) {
      throw NumericalError("filter design: non-finite section coefficients");
    }
  }
  sos.front().b0 *= zpk.gain;
  sos.front().b1 *= zpk.gain;
  sos.front().b2 *= zpk.gain;
  return sos;
}

inline double prewarp(double hz, double fs) {
  return 2.0 * fs * std::tan(M_PI * hz / fs);
}

}  // namespace detail

// Butterworth band-pass of analog prototype order `order` (final digital
// order 2*order) with passband (low, high) Hz at sample rate fs.
inline SosFilter design_bandpass(double low, double high, double fs, int order = 2) {
  if (!(fs > 0.0) || !(low > 0.0) || !(low < high) || !(high < fs / 2.0)) {
    throw ConfigError("design_bandpass: need 0 < low < high < fs/2, got (" +
                      std::to_string(low) + ", " + std::to_string(high) + ") at fs=" +
                      std::to_string(fs));
  }
  double w1 = detail::prewarp(low, fs);
  double w2 = detail::prewarp(high, fs);
  detail::Zpk lp = detail::butter_prototype(order);
  detail::Zpk bp = detail::lp_to_bandpass(lp, std::sqrt(w1 * w2), w2 - w1);
  return detail::zpk_to_sos(detail::bilinear(bp, fs));
}

// Butterworth band-stop over (stop_low, stop_high) Hz.
inline SosFilter design_bandstop(double stop_low, double stop_high, double fs, int order = 2) {
  if (!(fs > 0.0) || !(stop_low > 0.0) || !(stop_low < stop_high) ||
      !(stop_high < fs / 2.0)) {
    throw ConfigError("design_bandstop: need 0 < low < high < fs/2, got (" +
                      std::to_string(stop_low) + ", " + std::to_string(stop_high) +
                      ") at fs=" + std::to_string(fs));
  }
  double w1 = detail::prewarp(stop_low, fs);
  double w2 = detail::prewarp(stop_high, fs);
  detail::Zpk lp = detail::butter_prototype(order);
  detail::Zpk bs = detail::lp_to_bandstop(lp, std::sqrt(w1 * w2), w2 - w1);
  return detail::zpk_to_sos(detail::bilinear(bs, fs));
}

namespace detail {

// Direct form II transposed, one pass, with initial state.
inline void sos_pass(const SosFilter& sos, std::vector<double>& x,
                     std::vector<std::pair<double, double>>& zi) {
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Biquad& q = sos[s];
    double s1 = zi[s].first, s2 = zi[s].second;
    for (double& v : x) {
      double in = v;
      double out = q.b0 * in + s1;
      s1 = q.b1 * in - q.a1 * out + s2;
      s2 = q.b2 * in - q.a2 * out;
      v = out;
    }
    zi[s] = {s1, s2};
  }
}

// Steady-state filter state for a constant input u, section by section.
inline std::vector<std::pair<double, double>> steady_state(const SosFilter& sos, double u) {
  std::vector<std::pair<double, double>> zi(sos.size());
  double level = u;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Biquad& q = sos[s];
    double dc = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    zi[s] = {(dc - q.b0) * level, (q.b2 - q.a2 * dc) * level};
    level *= dc;
  }
  return zi;
}

}  // namespace detail

// Zero-phase filtering: forward pass, reverse, second pass, reverse.
// The signal is extended at both ends by odd reflection and the filter
// state is initialized at steady state to suppress edge transients.
inline std::vector<double> filtfilt(const SosFilter& sos, const std::vector<double>& x) {
  std::size_t edge = 3 * (2 * sos.size() + 1);
  if (x.size() <= edge) {
    throw DataError("filtfilt: signal length " + std::to_string(x.size()) +
                    " too short for padding length " + std::to_string(edge));
  }
  std::size_t n = x.size();
  std::vector<double> ext;
  ext.reserve(n + 2 * edge);
  for (std::size_t i = edge; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 2; i <= edge + 1; ++i) ext.push_back(2.0 * x[n - 1] - x[n - i]);

  auto zi = detail::steady_state(sos, ext.front());
  detail::sos_pass(sos, ext, zi);
  std::reverse(ext.begin(), ext.end());
  zi = detail::steady_state(sos, ext.front());
  detail::sos_pass(sos, ext, zi);
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(edge),
                             ext.begin() + static_cast<std::ptrdiff_t>(edge + n));
}

namespace detail {

inline Tensor filter_rows(const SosFilter& sos, const Tensor& signal) {
  require_rank(signal, 2, "filter_rows");
  std::size_t ch = signal.dim(0), t = signal.dim(1);
  Tensor out({ch, t});
  std::vector<double> row(t);
  for (std::size_t c = 0; c < ch; ++c) {
    std::copy(&signal.data[c * t], &signal.data[c * t] + t, row.begin());
    std::vector<double> filtered = filtfilt(sos, row);
    std::copy(filtered.begin(), filtered.end(), &out.data[c * t]);
  }
  return out;
}

}  // namespace detail

// Zero-phase band-pass over every channel of a (channels, time) matrix.
inline Tensor bandpass_filter(const Tensor& signal, double low, double high, double fs) {
  return detail::filter_rows(design_bandpass(low, high, fs), signal);
}

// Zero-phase band-stop (notch) over every channel.
inline Tensor notch_filter(const Tensor& signal, double stop_low, double stop_high, double fs) {
  return detail::filter_rows(design_bandstop(stop_low, stop_high, fs), signal);
}

}  // namespace gfdann
