#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcft/dataset.hpp"
#include "hcft/signal_io.hpp"

namespace hcft {

enum class FilterKind { Bandstop, Highpass };

struct FilterSpec {
  FilterKind kind = FilterKind::Highpass;
  std::size_t order = 1; // total pole count of the realized filter
  std::vector<double> edges; // one corner (highpass) or two (bandstop), Hz
  double fs = 0;
};

// One section of (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

struct SosFilter {
  std::vector<Biquad> sections;
  std::size_t order = 0; // total poles, drives the zero-phase padding length
};

// Analog Butterworth prototype -> band transform -> bilinear transform with
// frequency prewarping -> stable second-order sections.
SosFilter design_butterworth(const FilterSpec& spec);

// Forward-backward filtering: zero phase, squared magnitude response.
// Edges are stabilized by odd-reflection padding of 3*order samples and
// steady-state initial conditions.
std::vector<double> apply_zero_phase(const SosFilter& filt, const std::vector<double>& x);

// apply_zero_phase on every channel; channels run in parallel.
Recording filter_recording(const SosFilter& filt, const Recording& rec);

// Standardizes every (epoch, channel) slice to mean 0, sample variance 1,
// with a 1e-8 floor on the standard deviation so flat slices map to zero.
EpochDataset zscore_per_channel(EpochDataset ds);

// Cuts fixed windows at a fixed stride; epochs carry their start second.
EpochDataset segment_epochs(const Recording& rec, double window_s, double stride_s);

// Seizure-prediction labeling zones, all relative to annotated seizures.
struct LabelingPolicy {
  double preictal_minutes = 30;  // window length ahead of each onset
  double postictal_seconds = 30; // exclusion right after each offset
  double buffer_hours = 4;       // exclusion halo around each seizure
  double sph_minutes = 3;        // gap between preictal window end and onset
  bool sph_as_gap = true;        // false: window ends at onset, horizon only

  double preictal_s() const { return preictal_minutes * 60.0; }
  double buffer_s() const { return buffer_hours * 3600.0; }
  double sph_s() const { return sph_as_gap ? sph_minutes * 60.0 : 0.0; }
};

inline constexpr int kInterictal = 0;
inline constexpr int kPreictal = 1;

struct LabelCounts {
  std::size_t preictal = 0, interictal = 0;
  std::size_t dropped_ictal = 0, dropped_postictal = 0, dropped_buffer = 0;
};

// Labels each epoch by precedence: intersecting a seizure -> dropped;
// intersecting a postictal zone -> dropped; fully inside a preictal window
// -> preictal; intersecting a buffer halo -> dropped; otherwise interictal.
EpochDataset label_prediction_epochs(const EpochDataset& ds,
                                     const std::vector<SeizureInterval>& seizures,
                                     const LabelingPolicy& policy,
                                     LabelCounts* counts = nullptr);

struct LosoFold {
  std::string test_subject;
  std::vector<std::size_t> train_epochs, test_epochs;
};

// One fold per subject; that subject's epochs form the test set.
std::vector<LosoFold> loso_split(const EpochDataset& ds);

struct TrainTestSplit {
  std::vector<std::size_t> train_epochs, test_epochs;
};

// 70/30 within each subject, stratified by class (so each subject's class
// counts split 70/30 up to one epoch). Deterministic in the seed; the
// chronological mode instead sends each class's earliest 70% to train.
TrainTestSplit subject_split_70_30(const EpochDataset& ds, std::uint64_t seed,
                                   bool chronological = false);

// Text manifests: one "name<TAB>value" pair per line.
std::string loso_manifest(const std::vector<LosoFold>& folds);
std::string split_manifest(const TrainTestSplit& split);

} // namespace hcft
