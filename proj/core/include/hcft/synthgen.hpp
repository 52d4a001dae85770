#pragma once

#include <cstdint>

#include "hcft/dataset.hpp"
#include "hcft/preprocess.hpp"
#include "hcft/signal_io.hpp"

namespace hcft {

// Ground-truth-known synthetic EEG at desk scale.
struct SynthSpec {
  std::size_t n_per_class = 16;
  std::size_t channels = 3;
  double fs = 64.0;
  double window_s = 2.0;
  double band_lo = 8.0, band_hi = 12.0; // rhythm band, Hz
  double snr = 2.0; // rhythm amplitude over unit-RMS pink background
  std::uint64_t seed = 0;
};

// Two-class rhythm-lateralization task: class 0 carries the band-center
// rhythm on channel 0, class 1 on the last channel, over a shared pink-noise
// background. Balanced, labeled, deterministic per seed.
EpochDataset gen_mi(const SynthSpec& spec);

// A continuous recording with one synthetic seizure, its annotation, the
// zone policy the layout was built for, and the epochs that survive that
// policy with their intended labels.
struct SeizureTimeline {
  Recording recording;
  std::vector<SeizureInterval> seizures;
  LabelingPolicy policy;
  EpochDataset epochs;
};

// Frequency band of the synchronous preictal component in gen_seizure.
inline constexpr double kSeizureBandLo = 3.0;
inline constexpr double kSeizureBandHi = 8.0;

// Interictal stretch = pink noise; preictal window adds a synchronous
// 3-8 Hz component (identical phase on every channel) ramping up toward the
// onset. The layout is aligned to the epoch grid so exactly n_per_class
// epochs of each class survive the returned policy.
SeizureTimeline gen_seizure(const SynthSpec& spec);

} // namespace hcft
