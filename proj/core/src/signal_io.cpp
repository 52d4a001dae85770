#include "hcft/signal_io.hpp"

#include "hcft/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hcft {

namespace {

constexpr std::size_t kFixedHeaderBytes = 256;
constexpr std::size_t kPerSignalBytes = 256;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string ascii_field(const std::vector<std::uint8_t>& bytes, std::size_t off, std::size_t len) {
  return std::string(reinterpret_cast<const char*>(bytes.data()) + off, len);
}

long long parse_int_field(const std::string& raw, const char* what) {
  std::string t = trim(raw);
  if (t.empty()) raise(Err::InconsistentHeader, std::string("empty ") + what + " field");
  char* end = nullptr;
  long long v = std::strtoll(t.c_str(), &end, 10);
  if (end == t.c_str() || *end != '\0')
    raise(Err::InconsistentHeader, std::string("non-numeric ") + what + " field: '" + t + "'");
  return v;
}

double parse_double_field(const std::string& raw, const char* what) {
  std::string t = trim(raw);
  if (t.empty()) raise(Err::InconsistentHeader, std::string("empty ") + what + " field");
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0' || !std::isfinite(v))
    raise(Err::InconsistentHeader, std::string("non-numeric ") + what + " field: '" + t + "'");
  return v;
}

// Writes `text` into a fixed-width field, left-justified and space-padded.
void put_field(std::vector<std::uint8_t>& out, const std::string& text, std::size_t width) {
  if (text.size() > width)
    raise(Err::InconsistentHeader, "header field '" + text + "' wider than " + std::to_string(width));
  for (std::size_t i = 0; i < width; ++i)
    out.push_back(i < text.size() ? static_cast<std::uint8_t>(text[i]) : std::uint8_t(' '));
}

// Shortest decimal form of v that fits the field; the caller must reuse the
// reparsed value so that header and samples stay mutually consistent.
std::string format_double_field(double v, std::size_t width) {
  char buf[64];
  for (int prec = 10; prec >= 1; --prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::string(buf).size() <= width) return buf;
  }
  raise(Err::Unquantizable, "value " + std::to_string(v) + " does not fit an ASCII header field");
}

std::int16_t quantize(double x, double pmin, double pmax, int dmin, int dmax) {
  double scaled = (x - pmin) * (double(dmax) - double(dmin)) / (pmax - pmin) + double(dmin);
  long long q = std::llround(scaled);
  q = std::clamp<long long>(q, dmin, dmax);
  return static_cast<std::int16_t>(q);
}

std::vector<std::uint8_t> build_header_bytes(const EdfHeader& h) {
  std::vector<std::uint8_t> out;
  out.reserve(h.header_bytes);
  put_field(out, h.version, 8);
  put_field(out, h.patient_id, 80);
  put_field(out, h.recording_id, 80);
  put_field(out, h.start_date, 8);
  put_field(out, h.start_time, 8);
  put_field(out, std::to_string(h.header_bytes), 8);
  put_field(out, h.reserved, 44);
  put_field(out, std::to_string(h.num_records), 8);
  put_field(out, format_double_field(h.record_duration, 8), 8);
  put_field(out, std::to_string(h.signals.size()), 4);
  for (const auto& s : h.signals) put_field(out, s.label, 16);
  for (const auto& s : h.signals) put_field(out, s.transducer, 80);
  for (const auto& s : h.signals) put_field(out, s.physical_dim, 8);
  for (const auto& s : h.signals) put_field(out, format_double_field(s.physical_min, 8), 8);
  for (const auto& s : h.signals) put_field(out, format_double_field(s.physical_max, 8), 8);
  for (const auto& s : h.signals) put_field(out, std::to_string(s.digital_min), 8);
  for (const auto& s : h.signals) put_field(out, std::to_string(s.digital_max), 8);
  for (const auto& s : h.signals) put_field(out, s.prefiltering, 80);
  for (const auto& s : h.signals) put_field(out, std::to_string(s.samples_per_record), 8);
  for (const auto& s : h.signals) put_field(out, s.reserved, 32);
  return out;
}

void append_records(std::vector<std::uint8_t>& out, const Recording& rec, const EdfHeader& h) {
  const std::size_t ns = h.signals.size();
  std::vector<std::size_t> cursor(ns, 0);
  for (std::size_t r = 0; r < h.num_records; ++r) {
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& sig = h.signals[s];
      for (std::size_t i = 0; i < sig.samples_per_record; ++i) {
        std::int16_t q = quantize(rec.samples[s][cursor[s]++], sig.physical_min,
                                  sig.physical_max, sig.digital_min, sig.digital_max);
        std::uint16_t u = static_cast<std::uint16_t>(q);
        out.push_back(static_cast<std::uint8_t>(u & 0xff));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
      }
    }
  }
}

} // namespace

Recording parse_edf(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFixedHeaderBytes)
    raise(Err::BadMagic, "input shorter than the 256-byte fixed header");

  auto h = std::make_shared<EdfHeader>();
  h->version = trim(ascii_field(bytes, 0, 8));
  if (h->version != "0")
    raise(Err::BadMagic, "unsupported version field '" + h->version + "' (expected '0')");
  h->patient_id = trim(ascii_field(bytes, 8, 80));
  h->recording_id = trim(ascii_field(bytes, 88, 80));
  h->start_date = trim(ascii_field(bytes, 168, 8));
  h->start_time = trim(ascii_field(bytes, 176, 8));
  long long header_bytes = parse_int_field(ascii_field(bytes, 184, 8), "header size");
  h->reserved = trim(ascii_field(bytes, 192, 44));
  long long num_records = parse_int_field(ascii_field(bytes, 236, 8), "record count");
  h->record_duration = parse_double_field(ascii_field(bytes, 244, 8), "record duration");
  long long ns = parse_int_field(ascii_field(bytes, 252, 4), "signal count");

  if (ns < 1) raise(Err::InconsistentHeader, "signal count must be at least 1, got " + std::to_string(ns));
  if (num_records < 0)
    raise(Err::InconsistentHeader, "negative record count " + std::to_string(num_records));
  if (!(h->record_duration > 0))
    raise(Err::InconsistentHeader, "record duration must be positive, got " +
                                       std::to_string(h->record_duration));
  const std::size_t expect_hdr = kFixedHeaderBytes + kPerSignalBytes * std::size_t(ns);
  if (header_bytes != static_cast<long long>(expect_hdr))
    raise(Err::InconsistentHeader, "header size field says " + std::to_string(header_bytes) +
                                       " bytes but " + std::to_string(ns) + " signals need " +
                                       std::to_string(expect_hdr));
  if (bytes.size() < expect_hdr)
    raise(Err::InconsistentHeader, "signal headers truncated: have " + std::to_string(bytes.size()) +
                                       " bytes, need " + std::to_string(expect_hdr));
  h->header_bytes = expect_hdr;
  h->num_records = static_cast<std::size_t>(num_records);

  // Signal headers are stored field-by-field: all labels, then all
  // transducers, and so on.
  const std::size_t n = static_cast<std::size_t>(ns);
  std::size_t off = kFixedHeaderBytes;
  h->signals.resize(n);
  for (std::size_t i = 0; i < n; ++i) h->signals[i].label = trim(ascii_field(bytes, off + 16 * i, 16));
  off += 16 * n;
  for (std::size_t i = 0; i < n; ++i) h->signals[i].transducer = trim(ascii_field(bytes, off + 80 * i, 80));
  off += 80 * n;
  for (std::size_t i = 0; i < n; ++i) h->signals[i].physical_dim = trim(ascii_field(bytes, off + 8 * i, 8));
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i)
    h->signals[i].physical_min = parse_double_field(ascii_field(bytes, off + 8 * i, 8), "physical min");
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i)
    h->signals[i].physical_max = parse_double_field(ascii_field(bytes, off + 8 * i, 8), "physical max");
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i)
    h->signals[i].digital_min =
        static_cast<int>(parse_int_field(ascii_field(bytes, off + 8 * i, 8), "digital min"));
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i)
    h->signals[i].digital_max =
        static_cast<int>(parse_int_field(ascii_field(bytes, off + 8 * i, 8), "digital max"));
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i) h->signals[i].prefiltering = trim(ascii_field(bytes, off + 80 * i, 80));
  off += 80 * n;
  for (std::size_t i = 0; i < n; ++i) {
    long long spr = parse_int_field(ascii_field(bytes, off + 8 * i, 8), "samples per record");
    if (spr < 1)
      raise(Err::InconsistentHeader, "samples per record must be at least 1, got " + std::to_string(spr));
    h->signals[i].samples_per_record = static_cast<std::size_t>(spr);
  }
  off += 8 * n;
  for (std::size_t i = 0; i < n; ++i) h->signals[i].reserved = trim(ascii_field(bytes, off + 32 * i, 32));

  std::size_t spr0 = h->signals[0].samples_per_record;
  for (const auto& s : h->signals) {
    if (s.digital_max <= s.digital_min)
      raise(Err::DegenerateScale, "signal '" + s.label + "' digital range [" +
                                      std::to_string(s.digital_min) + ", " +
                                      std::to_string(s.digital_max) + "] is not increasing");
    if (!(s.physical_max > s.physical_min))
      raise(Err::DegenerateScale, "signal '" + s.label + "' physical range is not increasing");
    if (s.samples_per_record != spr0)
      raise(Err::InconsistentHeader,
            "mixed samples-per-record (" + std::to_string(spr0) + " vs " +
                std::to_string(s.samples_per_record) + "); one sampling rate is required");
  }

  h->raw.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(h->header_bytes));

  std::size_t record_bytes = 0;
  for (const auto& s : h->signals) record_bytes += 2 * s.samples_per_record;
  const std::size_t avail = bytes.size() - h->header_bytes;
  const std::size_t need = h->num_records * record_bytes;
  if (avail < need) {
    std::size_t broken = avail / record_bytes; // first record with missing bytes
    raise(Err::TruncatedRecord, "data record " + std::to_string(broken) + " incomplete: header declares " +
                                    std::to_string(h->num_records) + " records");
  }

  Recording rec;
  rec.fs = double(spr0) / h->record_duration;
  rec.channels.reserve(n);
  rec.samples.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    rec.channels.push_back(h->signals[i].label);
    rec.samples[i].reserve(h->num_records * h->signals[i].samples_per_record);
  }
  std::size_t pos = h->header_bytes;
  for (std::size_t r = 0; r < h->num_records; ++r) {
    for (std::size_t s = 0; s < n; ++s) {
      const auto& sig = h->signals[s];
      const double scale = (sig.physical_max - sig.physical_min) /
                           (double(sig.digital_max) - double(sig.digital_min));
      for (std::size_t i = 0; i < sig.samples_per_record; ++i) {
        std::uint16_t lo = bytes[pos], hi = bytes[pos + 1];
        pos += 2;
        auto digital = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        rec.samples[s].push_back((double(digital) - double(sig.digital_min)) * scale +
                                 sig.physical_min);
      }
    }
  }
  rec.edf = std::move(h);
  return rec;
}

std::vector<std::uint8_t> write_edf(const Recording& rec) {
  if (rec.samples.empty()) raise(Err::ZeroDuration, "recording has no channels");
  const std::size_t len = rec.length();
  if (len == 0) raise(Err::ZeroDuration, "recording has no samples");
  for (const auto& ch : rec.samples)
    if (ch.size() != len)
      raise(Err::ShapeMismatch, "channels have unequal lengths (" + std::to_string(ch.size()) +
                                    " vs " + std::to_string(len) + ")");

  if (rec.edf) {
    const EdfHeader& h = *rec.edf;
    if (h.signals.size() != rec.samples.size())
      raise(Err::ShapeMismatch, "recording has " + std::to_string(rec.samples.size()) +
                                    " channels but the retained header describes " +
                                    std::to_string(h.signals.size()));
    const std::size_t spr = h.signals[0].samples_per_record;
    if (len % spr != 0)
      raise(Err::ShapeMismatch, "length " + std::to_string(len) +
                                    " is not a whole number of " + std::to_string(spr) +
                                    "-sample records");
    const std::size_t n_rec = len / spr;
    std::vector<std::uint8_t> out = h.raw;
    if (n_rec != h.num_records) {
      // Patch the record-count field in the otherwise verbatim header.
      std::string field = std::to_string(n_rec);
      if (field.size() > 8) raise(Err::Unquantizable, "record count does not fit its header field");
      field.resize(8, ' ');
      std::copy(field.begin(), field.end(), out.begin() + 236);
    }
    EdfHeader patched = h;
    patched.num_records = n_rec;
    append_records(out, rec, patched);
    return out;
  }

  if (!(rec.fs > 0)) raise(Err::InvalidRate, "sampling rate must be positive to write");
  EdfHeader h;
  h.version = "0";
  h.patient_id = rec.subject;
  h.recording_id = rec.name;
  h.start_date = "01.01.00";
  h.start_time = "00.00.00";
  h.header_bytes = kFixedHeaderBytes + kPerSignalBytes * rec.samples.size();
  h.num_records = 1;
  h.record_duration = double(len) / rec.fs;
  h.signals.resize(rec.samples.size());
  for (std::size_t i = 0; i < rec.samples.size(); ++i) {
    auto& s = h.signals[i];
    s.label = i < rec.channels.size() ? rec.channels[i] : "ch" + std::to_string(i);
    s.physical_dim = "uV";
    auto [lo, hi] = std::minmax_element(rec.samples[i].begin(), rec.samples[i].end());
    if (!(*hi > *lo))
      raise(Err::Unquantizable, "channel '" + s.label + "' is constant; its physical range is empty");
    // Round-trip through the ASCII form so quantization uses exactly the
    // scale a later parse will see.
    s.physical_min = parse_double_field(format_double_field(*lo, 8), "physical min");
    s.physical_max = parse_double_field(format_double_field(*hi, 8), "physical max");
    if (!(s.physical_max > s.physical_min))
      raise(Err::Unquantizable, "channel '" + s.label + "' physical range collapses in the header");
    s.digital_min = -32768;
    s.digital_max = 32767;
    s.samples_per_record = len;
  }
  std::vector<std::uint8_t> out = build_header_bytes(h);
  append_records(out, rec, h);
  return out;
}

Recording read_csv_recording(const std::string& path, double fs,
                             const std::vector<std::string>& channel_whitelist) {
  if (!(fs > 0)) raise(Err::InvalidRate, "sampling rate must be positive, got " + std::to_string(fs));
  std::ifstream in(path);
  if (!in) raise(Err::IoFailure, "cannot open '" + path + "' for reading");

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
  };

  std::string line;
  if (!std::getline(in, line)) raise(Err::NoRecordings, "'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> labels = split(line);
  if (labels.empty()) raise(Err::NoRecordings, "'" + path + "' has an empty header row");

  std::vector<std::vector<double>> columns(labels.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells = split(line);
    if (cells.size() != labels.size())
      raise(Err::RaggedRows, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(labels.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      char* end = nullptr;
      double v = std::strtod(cells[c].c_str(), &end);
      if (cells[c].empty() || end == cells[c].c_str() || *end != '\0' || !std::isfinite(v))
        raise(Err::NonNumericCell, "row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                                       ": '" + cells[c] + "'");
      columns[c].push_back(v);
    }
  }
  if (row == 0) raise(Err::NoRecordings, "'" + path + "' has a header but no data rows");

  Recording rec;
  rec.fs = fs;
  rec.channels = std::move(labels);
  rec.samples = std::move(columns);
  if (!channel_whitelist.empty()) return select_channels(rec, channel_whitelist);
  return rec;
}

void write_csv_recording(const std::string& path, const Recording& rec) {
  std::ofstream out(path);
  if (!out) raise(Err::IoFailure, "cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < rec.channels.size(); ++c)
    out << (c ? "," : "") << rec.channels[c];
  out << "\n";
  char buf[40];
  const std::size_t len = rec.length();
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < rec.samples.size(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", rec.samples[c][i]);
      out << (c ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out.flush()) raise(Err::IoFailure, "failed writing '" + path + "'");
}

Recording select_channels(const Recording& rec, const std::vector<std::string>& labels) {
  Recording out = rec;
  out.channels.clear();
  out.samples.clear();
  out.edf.reset(); // the retained raw header no longer matches a subset
  for (const auto& want : labels) {
    auto it = std::find(rec.channels.begin(), rec.channels.end(), want);
    if (it == rec.channels.end())
      raise(Err::ChannelMismatch, "channel '" + want + "' not present in the recording");
    out.channels.push_back(want);
    out.samples.push_back(rec.samples[std::size_t(it - rec.channels.begin())]);
  }
  return out;
}

std::vector<SeizureInterval> read_annotations(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Err::IoFailure, "cannot open '" + path + "' for reading");
  std::vector<SeizureInterval> spans;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::stringstream ss(t);
    double onset = 0, offset = 0;
    if (!(ss >> onset >> offset))
      raise(Err::NonNumericCell, "line " + std::to_string(lineno) + ": expected 'onset offset', got '" + t + "'");
    std::string extra;
    if (ss >> extra)
      raise(Err::NonNumericCell, "line " + std::to_string(lineno) + ": unexpected trailing text '" + extra + "'");
    spans.push_back({onset, offset});
  }
  return normalize_annotations(std::move(spans));
}

void write_annotations(const std::string& path, const std::vector<SeizureInterval>& spans) {
  std::ofstream out(path);
  if (!out) raise(Err::IoFailure, "cannot open '" + path + "' for writing");
  out << "# onset_seconds\toffset_seconds\n";
  char buf[96];
  for (const auto& s : spans) {
    std::snprintf(buf, sizeof(buf), "%.17g\t%.17g\n", s.onset, s.offset);
    out << buf;
  }
  if (!out.flush()) raise(Err::IoFailure, "failed writing '" + path + "'");
}

std::vector<SeizureInterval> normalize_annotations(std::vector<SeizureInterval> spans) {
  for (const auto& s : spans) {
    if (!(s.onset >= 0) || !(s.offset > s.onset) || !std::isfinite(s.offset))
      raise(Err::UnsortedAnnotations, "interval [" + std::to_string(s.onset) + ", " +
                                          std::to_string(s.offset) + ") is not a forward span");
  }
  std::sort(spans.begin(), spans.end(),
            [](const SeizureInterval& a, const SeizureInterval& b) { return a.onset < b.onset; });
  std::vector<SeizureInterval> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.onset <= merged.back().offset)
      merged.back().offset = std::max(merged.back().offset, s.offset);
    else
      merged.push_back(s);
  }
  return merged;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::IoFailure, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Err::IoFailure, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) raise(Err::IoFailure, "failed writing '" + path + "'");
}

} // namespace hcft
