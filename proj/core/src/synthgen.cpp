#include "hcft/synthgen.hpp"

#include "hcft/error.hpp"
#include "fft.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace hcft {

namespace {

void validate_common(const SynthSpec& spec, std::size_t min_channels) {
  if (!(spec.fs > 0)) raise(Err::InvalidRate, "sampling rate must be positive");
  if (spec.channels < min_channels)
    raise(Err::BadConfig, "generator needs at least " + std::to_string(min_channels) +
                              " channels, got " + std::to_string(spec.channels));
  if (spec.n_per_class < 1) raise(Err::BadConfig, "need at least one epoch per class");
  if (!(spec.window_s > 0) || std::llround(spec.window_s * spec.fs) < 1)
    raise(Err::BadConfig, "window must cover at least one sample");
  if (!(spec.band_lo > 0) || !(spec.band_lo < spec.band_hi) || !(spec.band_hi < spec.fs / 2))
    raise(Err::EdgeOutOfRange, "rhythm band must satisfy 0 < lo < hi < fs/2");
  if (spec.snr < 0) raise(Err::BadConfig, "signal-to-noise ratio cannot be negative");
}

// White Gaussian spectrum shaped to 1/f power, returned at unit sample RMS.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::size_t m = 2;
  while (m < n) m <<= 1;
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::complex<double>> spec(m, {0.0, 0.0});
  for (std::size_t k = 1; k < m / 2; ++k) {
    const double amp = 1.0 / std::sqrt(double(k));
    spec[k] = std::complex<double>(g(rng) * amp, g(rng) * amp);
    spec[m - k] = std::conj(spec[k]);
  }
  spec[m / 2] = std::complex<double>(g(rng) / std::sqrt(double(m / 2)), 0.0);

  detail::fft_inplace(spec, /*inverse=*/true);
  std::vector<double> x(n);
  double power = 0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = spec[i].real();
    power += x[i] * x[i];
  }
  const double rms = std::sqrt(power / double(n));
  if (rms > 0)
    for (double& v : x) v /= rms;
  return x;
}

} // namespace

EpochDataset gen_mi(const SynthSpec& spec) {
  validate_common(spec, 2);
  const auto len = std::size_t(std::llround(spec.window_s * spec.fs));
  const double rhythm_hz = (spec.band_lo + spec.band_hi) / 2.0;

  EpochDataset ds;
  ds.channels = spec.channels;
  ds.epoch_len = len;
  ds.fs = spec.fs;
  ds.window_s = spec.window_s;
  for (std::size_t c = 0; c < spec.channels; ++c)
    ds.channel_labels.push_back("ch" + std::to_string(c));
  ds.subjects = {"synthetic"};
  ds.recordings = {"mi"};

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t trial = 0; trial < spec.n_per_class; ++trial) {
    for (int cls = 0; cls < 2; ++cls) {
      const std::size_t e = 2 * trial + std::size_t(cls);
      EpochProvenance p;
      p.label = cls;
      p.start_s = double(e) * spec.window_s;
      ds.index.push_back(p);

      const std::size_t rhythm_channel = cls == 0 ? 0 : spec.channels - 1;
      const double phi = phase(rng);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        std::vector<double> x = pink_noise(len, rng);
        if (c == rhythm_channel)
          for (std::size_t i = 0; i < len; ++i)
            x[i] += spec.snr * std::sin(2.0 * std::numbers::pi * rhythm_hz * double(i) / spec.fs +
                                        phi);
        ds.data.insert(ds.data.end(), x.begin(), x.end());
      }
    }
  }
  return ds;
}

SeizureTimeline gen_seizure(const SynthSpec& spec) {
  validate_common(spec, 1);
  if (!(kSeizureBandHi < spec.fs / 2))
    raise(Err::EdgeOutOfRange, "sampling rate too low for the preictal component band");
  const double w = spec.window_s;
  const auto len = std::size_t(std::llround(w * spec.fs));
  const std::size_t n0 = spec.n_per_class, n1 = spec.n_per_class;

  // Grid-aligned layout in units of the window:
  //   [interictal n0][buffer 4][preictal n1][gap 2][ictal 3][postictal 2][tail 3]
  // The onset sits half a window past an epoch boundary and every zone edge
  // is offset by half a window from the grid, so each keep/drop comparison in
  // the labeling pass has half a window of slack instead of an exact tie.
  SeizureTimeline tl;
  tl.policy.preictal_minutes = double(n1 + 1) * w / 60.0;
  tl.policy.sph_minutes = 2.0 * w / 60.0;
  tl.policy.buffer_hours = double(n1 + 6) * w / 3600.0;
  tl.policy.postictal_seconds = 2.0 * w;
  tl.policy.sph_as_gap = true;

  const std::size_t total_epochs = n0 + n1 + 14;
  const double onset = (double(n0 + n1) + 6.5) * w;
  const double offset = onset + 2.0 * w;
  const double zone_lo = (double(n0) + 3.5) * w; // ramp start = preictal zone start
  tl.seizures = {{onset, offset}};

  const std::size_t total_len = total_epochs * len;
  const double rhythm_hz = (kSeizureBandLo + kSeizureBandHi) / 2.0;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double phi = phase(rng);
  auto rhythm_amp = [&](double t) {
    if (t >= zone_lo && t < onset) return spec.snr * (t - zone_lo) / (onset - zone_lo);
    if (t >= onset && t < offset) return 2.0 * spec.snr;
    return 0.0;
  };

  tl.recording.subject = "synthetic";
  tl.recording.name = "seizure_timeline";
  tl.recording.fs = spec.fs;
  tl.recording.annotations = tl.seizures;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    tl.recording.channels.push_back("ch" + std::to_string(c));
    std::vector<double> x = pink_noise(total_len, rng);
    for (std::size_t i = 0; i < total_len; ++i) {
      const double t = double(i) / spec.fs;
      const double amp = rhythm_amp(t);
      if (amp != 0.0)
        x[i] += amp * std::sin(2.0 * std::numbers::pi * rhythm_hz * t + phi);
    }
    tl.recording.samples.push_back(std::move(x));
  }

  EpochDataset& ds = tl.epochs;
  ds.channels = spec.channels;
  ds.epoch_len = len;
  ds.fs = spec.fs;
  ds.window_s = w;
  ds.channel_labels = tl.recording.channels;
  ds.subjects = {"synthetic"};
  ds.recordings = {"seizure_timeline"};
  auto take = [&](std::size_t k, int label) {
    EpochProvenance p;
    p.label = label;
    p.start_s = double(k * len) / spec.fs; // same expression the segmenter uses
    ds.index.push_back(p);
    for (std::size_t c = 0; c < spec.channels; ++c)
      ds.data.insert(ds.data.end(), tl.recording.samples[c].begin() + std::ptrdiff_t(k * len),
                     tl.recording.samples[c].begin() + std::ptrdiff_t((k + 1) * len));
  };
  for (std::size_t k = 0; k < n0; ++k) take(k, kInterictal);
  for (std::size_t k = n0 + 4; k < n0 + 4 + n1; ++k) take(k, kPreictal);
  return tl;
}

} // namespace hcft
