#include "hcft/dataset.hpp"

#include "hcft/error.hpp"
#include "hcft/signal_io.hpp"

#include <bit>
#include <cstring>

namespace hcft {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
  std::vector<std::uint8_t> out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(std::uint8_t(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    if (s.size() > 0xffff) raise(Err::BadConfig, "archive string longer than 65535 bytes");
    u32(std::uint32_t(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
};

struct Reader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  void need(std::size_t n, const char* what) {
    if (pos + n > in.size())
      raise(Err::TruncatedRecord, std::string("archive ends inside ") + what + " (offset " +
                                      std::to_string(pos) + ")");
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in[pos++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos++]) << (8 * i);
    return v;
  }
  std::int32_t i32(const char* what) { return std::bit_cast<std::int32_t>(u32(what)); }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[pos++]) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in.data()) + pos, n);
    pos += n;
    return s;
  }
};

} // namespace

void append_epochs(EpochDataset& dst, const EpochDataset& src) {
  if (dst.index.empty() && dst.channels == 0) {
    dst = src;
    return;
  }
  if (dst.channels != src.channels || dst.epoch_len != src.epoch_len)
    raise(Err::GeometryMismatch, "cannot merge epochs of shape (" + std::to_string(src.channels) +
                                     ", " + std::to_string(src.epoch_len) + ") into (" +
                                     std::to_string(dst.channels) + ", " +
                                     std::to_string(dst.epoch_len) + ")");
  if (dst.fs != src.fs || dst.window_s != src.window_s)
    raise(Err::GeometryMismatch, "cannot merge epochs with different sampling rate or window");
  if (dst.channel_labels != src.channel_labels)
    raise(Err::ChannelMismatch, "cannot merge epochs with different channel labels");

  auto intern = [](std::vector<std::string>& table, const std::string& name) {
    for (std::size_t i = 0; i < table.size(); ++i)
      if (table[i] == name) return std::uint32_t(i);
    table.push_back(name);
    return std::uint32_t(table.size() - 1);
  };
  std::vector<std::uint32_t> submap(src.subjects.size()), recmap(src.recordings.size());
  for (std::size_t i = 0; i < src.subjects.size(); ++i) submap[i] = intern(dst.subjects, src.subjects[i]);
  for (std::size_t i = 0; i < src.recordings.size(); ++i)
    recmap[i] = intern(dst.recordings, src.recordings[i]);
  for (const auto& e : src.index) {
    EpochProvenance p = e;
    p.subject = submap[e.subject];
    p.recording = recmap[e.recording];
    dst.index.push_back(p);
  }
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
}

std::vector<std::uint8_t> epd_bytes(const EpochDataset& ds) {
  if (ds.data.size() != ds.size() * ds.epoch_stride())
    raise(Err::ShapeMismatch, "dataset buffer holds " + std::to_string(ds.data.size()) +
                                  " samples but the index implies " +
                                  std::to_string(ds.size() * ds.epoch_stride()));
  for (const auto& e : ds.index) {
    if (e.subject >= ds.subjects.size())
      raise(Err::InconsistentHeader, "epoch references subject " + std::to_string(e.subject) +
                                         " outside the table of " + std::to_string(ds.subjects.size()));
    if (e.recording >= ds.recordings.size())
      raise(Err::InconsistentHeader, "epoch references recording " + std::to_string(e.recording) +
                                         " outside the table of " + std::to_string(ds.recordings.size()));
  }

  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 4);
  w.u32(kVersion);
  w.u32(std::uint32_t(ds.size()));
  w.u32(std::uint32_t(ds.channels));
  w.u32(std::uint32_t(ds.epoch_len));
  w.f64(ds.fs);
  w.f64(ds.window_s);
  w.u32(std::uint32_t(ds.channel_labels.size()));
  for (const auto& s : ds.channel_labels) w.str(s);
  w.u32(std::uint32_t(ds.subjects.size()));
  for (const auto& s : ds.subjects) w.str(s);
  w.u32(std::uint32_t(ds.recordings.size()));
  for (const auto& s : ds.recordings) w.str(s);
  for (const auto& e : ds.index) {
    w.i32(e.label);
    w.u32(e.subject);
    w.u32(e.recording);
    w.f64(e.start_s);
  }
  for (double v : ds.data) w.f32(float(v));
  return std::move(w.out);
}

EpochDataset parse_epd(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    raise(Err::BadMagic, "not an epoch archive (missing EPD1 magic)");
  Reader r{bytes, 4};
  std::uint32_t version = r.u32("version");
  if (version != kVersion)
    raise(Err::InconsistentHeader, "unsupported archive version " + std::to_string(version));

  EpochDataset ds;
  std::uint32_t n = r.u32("epoch count");
  ds.channels = r.u32("channel count");
  ds.epoch_len = r.u32("epoch length");
  ds.fs = r.f64("sampling rate");
  ds.window_s = r.f64("window seconds");
  std::uint32_t n_labels = r.u32("channel label count");
  for (std::uint32_t i = 0; i < n_labels; ++i) ds.channel_labels.push_back(r.str("channel label"));
  std::uint32_t n_sub = r.u32("subject count");
  for (std::uint32_t i = 0; i < n_sub; ++i) ds.subjects.push_back(r.str("subject name"));
  std::uint32_t n_rec = r.u32("recording count");
  for (std::uint32_t i = 0; i < n_rec; ++i) ds.recordings.push_back(r.str("recording name"));
  ds.index.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    EpochProvenance e;
    e.label = r.i32("epoch label");
    e.subject = r.u32("epoch subject");
    e.recording = r.u32("epoch recording");
    e.start_s = r.f64("epoch start");
    if (e.subject >= ds.subjects.size() || e.recording >= ds.recordings.size())
      raise(Err::InconsistentHeader, "epoch " + std::to_string(i) + " references a missing table entry");
    ds.index.push_back(e);
  }
  const std::size_t total = std::size_t(n) * ds.channels * ds.epoch_len;
  ds.data.reserve(total);
  for (std::size_t i = 0; i < total; ++i) ds.data.push_back(double(r.f32("sample block")));
  return ds;
}

void save_epd(const std::string& path, const EpochDataset& ds) {
  write_file_bytes(path, epd_bytes(ds));
}

EpochDataset load_epd(const std::string& path) { return parse_epd(read_file_bytes(path)); }

} // namespace hcft
