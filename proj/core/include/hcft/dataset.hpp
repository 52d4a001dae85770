#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hcft {

// Class conventions: -1 = unlabeled, otherwise a small non-negative class
// id (for seizure prediction: 0 = interictal, 1 = preictal).
struct EpochProvenance {
  int label = -1;
  std::uint32_t subject = 0;   // index into EpochDataset::subjects
  std::uint32_t recording = 0; // index into EpochDataset::recordings
  double start_s = 0;          // epoch start within its recording
};

// Fixed-length multichannel epochs with provenance. Samples are stored
// epoch-major, then channel-major: data[(e * channels + c) * epoch_len + i].
struct EpochDataset {
  std::size_t channels = 0;
  std::size_t epoch_len = 0;
  double fs = 0;
  double window_s = 0;
  std::vector<std::string> channel_labels;
  std::vector<std::string> subjects;
  std::vector<std::string> recordings;
  std::vector<EpochProvenance> index;
  std::vector<double> data;

  std::size_t size() const { return index.size(); }
  std::size_t epoch_stride() const { return channels * epoch_len; }
  double* epoch_ptr(std::size_t e) { return data.data() + e * epoch_stride(); }
  const double* epoch_ptr(std::size_t e) const { return data.data() + e * epoch_stride(); }
};

// Appends all epochs of src, remapping its subject/recording tables into
// dst's. Geometry (channels, length, rates) must agree.
void append_epochs(EpochDataset& dst, const EpochDataset& src);

// Binary archive: "EPD1" magic, a counts/geometry header, the string
// tables, a provenance index, then samples as 32-bit little-endian floats.
std::vector<std::uint8_t> epd_bytes(const EpochDataset& ds);
EpochDataset parse_epd(const std::vector<std::uint8_t>& bytes);
void save_epd(const std::string& path, const EpochDataset& ds);
EpochDataset load_epd(const std::string& path);

} // namespace hcft
