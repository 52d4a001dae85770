#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace hcft {

// Seconds from recording start; a valid interval has 0 <= onset < offset.
struct SeizureInterval {
  double onset = 0;
  double offset = 0;
  bool operator==(const SeizureInterval&) const = default;
};

struct EdfSignalHeader {
  std::string label, transducer, physical_dim, prefiltering, reserved;
  double physical_min = 0, physical_max = 0;
  int digital_min = 0, digital_max = 0;
  std::size_t samples_per_record = 0;
};

struct EdfHeader {
  std::string version, patient_id, recording_id, start_date, start_time, reserved;
  std::size_t header_bytes = 0;
  std::size_t num_records = 0;
  double record_duration = 0;
  std::vector<EdfSignalHeader> signals;
  std::vector<std::uint8_t> raw; // exact header bytes, reused for bit-exact rewrite
};

// A multi-channel signal in physical units (microvolts for EEG).
struct Recording {
  std::string subject = "s0";
  std::string name = "r0";
  std::vector<std::string> channels;
  double fs = 0;
  std::vector<std::vector<double>> samples; // one series per channel
  std::vector<SeizureInterval> annotations;
  std::shared_ptr<const EdfHeader> edf; // set by parse_edf, reused by write_edf

  std::size_t length() const { return samples.empty() ? 0 : samples[0].size(); }
  double duration() const { return fs > 0 ? double(length()) / fs : 0.0; }
};

// 1992-format EDF: 256-byte fixed header, 256 bytes per signal, then data
// records of 16-bit little-endian two's-complement samples rescaled by
// physical = (digital - dmin) * (pmax - pmin) / (dmax - dmin) + pmin.
Recording parse_edf(const std::vector<std::uint8_t>& bytes);

// Inverse of parse_edf up to 16-bit quantization. A recording that came
// from parse_edf reuses its header verbatim; a fresh recording gets a
// canonical single-record header with per-channel min/max scaling.
std::vector<std::uint8_t> write_edf(const Recording& rec);

// Comma-separated table, header row of channel labels, one column per
// channel. A non-empty whitelist selects and orders the columns to keep.
Recording read_csv_recording(const std::string& path, double fs,
                             const std::vector<std::string>& channel_whitelist = {});
void write_csv_recording(const std::string& path, const Recording& rec);

// Keep the named channels, in the order given.
Recording select_channels(const Recording& rec, const std::vector<std::string>& labels);

// Sidecar text: one "onset<TAB>offset" line per seizure, '#' comments
// allowed. Returned normalized.
std::vector<SeizureInterval> read_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<SeizureInterval>& spans);

// Validates intervals, sorts by onset, merges overlapping or touching spans.
std::vector<SeizureInterval> normalize_annotations(std::vector<SeizureInterval> spans);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

} // namespace hcft
