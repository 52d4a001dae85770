#include "hcft/preprocess.hpp"

#include "hcft/error.hpp"
#include "hcft/threading.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace hcft {

namespace {

using cd = std::complex<double>;

struct Zpk {
  std::vector<cd> zeros, poles;
  double gain = 1.0;
};

// Left-half-plane poles of the unit-cutoff analog prototype, built as
// explicit conjugate pairs plus a real pole for odd orders.
Zpk butter_prototype(std::size_t n) {
  Zpk f;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    double theta = std::numbers::pi * (2.0 * double(k) + double(n) - 1.0) / (2.0 * double(n));
    cd p(std::cos(theta), std::sin(theta));
    f.poles.push_back(p);
    f.poles.push_back(std::conj(p));
  }
  if (n % 2) f.poles.emplace_back(-1.0, 0.0);
  return f;
}

cd prod_neg(const std::vector<cd>& roots) {
  cd acc(1.0, 0.0);
  for (const cd& r : roots) acc *= -r;
  return acc;
}

Zpk lp_to_highpass(const Zpk& f, double wo) {
  Zpk out;
  out.gain = f.gain * (prod_neg(f.zeros) / prod_neg(f.poles)).real();
  const std::size_t degree = f.poles.size() - f.zeros.size();
  for (const cd& z : f.zeros) out.zeros.push_back(wo / z);
  for (const cd& p : f.poles) out.poles.push_back(wo / p);
  out.zeros.insert(out.zeros.end(), degree, cd(0.0, 0.0));
  return out;
}

Zpk lp_to_bandstop(const Zpk& f, double wo, double bw) {
  Zpk out;
  out.gain = f.gain * (prod_neg(f.zeros) / prod_neg(f.poles)).real();
  const std::size_t degree = f.poles.size() - f.zeros.size();
  auto split = [&](const cd& r, std::vector<cd>& dst) {
    cd inv = (bw / 2.0) / r;
    cd s = std::sqrt(inv * inv - wo * wo);
    dst.push_back(inv + s);
    dst.push_back(inv - s);
  };
  for (const cd& z : f.zeros) split(z, out.zeros);
  for (const cd& p : f.poles) split(p, out.poles);
  for (std::size_t i = 0; i < degree; ++i) {
    out.zeros.emplace_back(0.0, wo);
    out.zeros.emplace_back(0.0, -wo);
  }
  return out;
}

Zpk bilinear(const Zpk& f, double fs) {
  const double fs2 = 2.0 * fs;
  Zpk out;
  cd num(1.0, 0.0), den(1.0, 0.0);
  for (const cd& z : f.zeros) {
    out.zeros.push_back((fs2 + z) / (fs2 - z));
    num *= fs2 - z;
  }
  for (const cd& p : f.poles) {
    out.poles.push_back((fs2 + p) / (fs2 - p));
    den *= fs2 - p;
  }
  const std::size_t degree = f.poles.size() - f.zeros.size();
  out.zeros.insert(out.zeros.end(), degree, cd(-1.0, 0.0));
  out.gain = f.gain * (num / den).real();
  return out;
}

struct RootGroups {
  std::vector<std::pair<cd, cd>> pairs; // conjugate or real-real
  std::vector<double> singles;
};

RootGroups group_roots(std::vector<cd> roots) {
  RootGroups g;
  std::vector<double> reals;
  std::vector<cd> complexes;
  for (const cd& r : roots) {
    if (std::abs(r.imag()) <= 1e-8 * (1.0 + std::abs(r)))
      reals.push_back(r.real());
    else
      complexes.push_back(r);
  }
  std::vector<char> used(complexes.size(), 0);
  for (std::size_t i = 0; i < complexes.size(); ++i) {
    if (used[i]) continue;
    used[i] = 1;
    std::size_t best = complexes.size();
    double best_d = 0;
    for (std::size_t j = i + 1; j < complexes.size(); ++j) {
      if (used[j]) continue;
      double d = std::abs(complexes[j] - std::conj(complexes[i]));
      if (best == complexes.size() || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    if (best == complexes.size() || best_d > 1e-6 * (1.0 + std::abs(complexes[i])))
      raise(Err::NonFinite, "filter roots failed to pair into conjugates");
    used[best] = 1;
    g.pairs.emplace_back(complexes[i], complexes[best]);
  }
  std::sort(reals.begin(), reals.end());
  while (reals.size() >= 2) {
    // pairing outermost with innermost keeps groupings deterministic
    g.pairs.emplace_back(cd(reals.front(), 0.0), cd(reals.back(), 0.0));
    reals.erase(reals.begin());
    reals.pop_back();
  }
  if (!reals.empty()) g.singles.push_back(reals.front());
  return g;
}

SosFilter zpk_to_sos(const Zpk& f, std::size_t order) {
  RootGroups zg = group_roots(f.zeros);
  RootGroups pg = group_roots(f.poles);
  if (zg.pairs.size() != pg.pairs.size() || zg.singles.size() != pg.singles.size())
    raise(Err::NonFinite, "zero and pole groupings disagree");

  std::sort(pg.pairs.begin(), pg.pairs.end(), [](const auto& a, const auto& b) {
    double ma = std::abs(a.first), mb = std::abs(b.first);
    if (ma != mb) return ma < mb;
    if (a.first.real() != b.first.real()) return a.first.real() < b.first.real();
    return std::abs(a.first.imag()) < std::abs(b.first.imag());
  });

  SosFilter out;
  out.order = order;
  for (std::size_t i = 0; i < pg.pairs.size(); ++i) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -(zg.pairs[i].first + zg.pairs[i].second).real();
    s.b2 = (zg.pairs[i].first * zg.pairs[i].second).real();
    s.a1 = -(pg.pairs[i].first + pg.pairs[i].second).real();
    s.a2 = (pg.pairs[i].first * pg.pairs[i].second).real();
    out.sections.push_back(s);
  }
  for (std::size_t i = 0; i < pg.singles.size(); ++i) {
    Biquad s;
    s.b0 = 1.0;
    s.b1 = -zg.singles[i];
    s.a1 = -pg.singles[i];
    out.sections.push_back(s);
  }
  if (out.sections.empty()) raise(Err::BadConfig, "a filter needs at least one pole");
  out.sections[0].b0 *= f.gain;
  out.sections[0].b1 *= f.gain;
  out.sections[0].b2 *= f.gain;

  for (const Biquad& s : out.sections) {
    // roots of z^2 + a1 z + a2
    cd disc = std::sqrt(cd(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    cd r1 = (-s.a1 + disc) / 2.0, r2 = (-s.a1 - disc) / 2.0;
    if (std::abs(r1) >= 1.0 || std::abs(r2) >= 1.0)
      raise(Err::NonFinite, "designed section is unstable");
  }
  return out;
}

double prewarp(double f_hz, double fs) {
  return 2.0 * fs * std::tan(std::numbers::pi * f_hz / fs);
}

// One pass of cascaded biquads in transposed direct form II.
void sos_pass(const std::vector<Biquad>& secs, std::vector<double>& x,
              std::vector<std::array<double, 2>> state) {
  for (std::size_t s = 0; s < secs.size(); ++s) {
    const Biquad& q = secs[s];
    double s0 = state[s][0], s1 = state[s][1];
    for (double& v : x) {
      double in = v;
      double y = q.b0 * in + s0;
      s0 = q.b1 * in - q.a1 * y + s1;
      s1 = q.b2 * in - q.a2 * y;
      v = y;
    }
  }
}

// Per-section steady-state response to a unit step, scaled downstream by
// the DC gain accumulated over earlier sections.
std::vector<std::array<double, 2>> unit_step_state(const std::vector<Biquad>& secs) {
  std::vector<std::array<double, 2>> zi(secs.size());
  double cum = 1.0;
  for (std::size_t s = 0; s < secs.size(); ++s) {
    const Biquad& q = secs[s];
    double g = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    double s1 = q.b2 - q.a2 * g;
    double s0 = q.b1 - q.a1 * g + s1;
    zi[s] = {s0 * cum, s1 * cum};
    cum *= g;
  }
  return zi;
}

std::vector<std::array<double, 2>> scaled(const std::vector<std::array<double, 2>>& zi, double x0) {
  auto out = zi;
  for (auto& s : out) {
    s[0] *= x0;
    s[1] *= x0;
  }
  return out;
}

} // namespace

SosFilter design_butterworth(const FilterSpec& spec) {
  if (!(spec.fs > 0)) raise(Err::InvalidRate, "sampling rate must be positive");
  if (spec.order < 1) raise(Err::BadConfig, "filter order must be at least 1");
  const double nyquist = spec.fs / 2.0;
  for (double e : spec.edges)
    if (!(e > 0.0) || !(e < nyquist))
      raise(Err::EdgeOutOfRange, "edge " + std::to_string(e) + " Hz outside (0, " +
                                     std::to_string(nyquist) + ")");

  if (spec.kind == FilterKind::Highpass) {
    if (spec.edges.size() != 1)
      raise(Err::BadConfig, "a highpass takes exactly one corner frequency");
    Zpk analog = lp_to_highpass(butter_prototype(spec.order), prewarp(spec.edges[0], spec.fs));
    return zpk_to_sos(bilinear(analog, spec.fs), spec.order);
  }

  if (spec.edges.size() != 2 || !(spec.edges[0] < spec.edges[1]))
    raise(Err::BadConfig, "a bandstop takes two increasing edge frequencies");
  if (spec.order % 2 != 0)
    raise(Err::OrderUnsupported, "bandstop order " + std::to_string(spec.order) +
                                     " is odd; stopband poles come in pairs");
  const double w1 = prewarp(spec.edges[0], spec.fs);
  const double w2 = prewarp(spec.edges[1], spec.fs);
  Zpk analog = lp_to_bandstop(butter_prototype(spec.order / 2), std::sqrt(w1 * w2), w2 - w1);
  return zpk_to_sos(bilinear(analog, spec.fs), spec.order);
}

std::vector<double> apply_zero_phase(const SosFilter& filt, const std::vector<double>& x) {
  const std::size_t padlen = 3 * filt.order;
  if (x.size() <= padlen)
    raise(Err::SeriesTooShort, "series of " + std::to_string(x.size()) +
                                   " samples cannot carry " + std::to_string(padlen) +
                                   " padding samples per edge");
  const std::size_t n = x.size();

  // Odd reflection about each endpoint suppresses edge transients.
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[0] - x[padlen - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);

  const auto zi = unit_step_state(filt.sections);
  sos_pass(filt.sections, ext, scaled(zi, ext.front()));
  std::reverse(ext.begin(), ext.end());
  sos_pass(filt.sections, ext, scaled(zi, ext.front()));
  std::reverse(ext.begin(), ext.end());

  return std::vector<double>(ext.begin() + std::ptrdiff_t(padlen),
                             ext.begin() + std::ptrdiff_t(padlen + n));
}

Recording filter_recording(const SosFilter& filt, const Recording& rec) {
  Recording out = rec;
  parallel_for(out.samples.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t c = lo; c < hi; ++c) out.samples[c] = apply_zero_phase(filt, rec.samples[c]);
  });
  return out;
}

EpochDataset zscore_per_channel(EpochDataset ds) {
  const std::size_t len = ds.epoch_len;
  if (len == 0 || ds.size() == 0) return ds;
  parallel_for(ds.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t e = lo; e < hi; ++e) {
      double* epoch = ds.epoch_ptr(e);
      for (std::size_t c = 0; c < ds.channels; ++c) {
        double* s = epoch + c * len;
        double mean = 0;
        for (std::size_t i = 0; i < len; ++i) mean += s[i];
        mean /= double(len);
        double var = 0;
        for (std::size_t i = 0; i < len; ++i) var += (s[i] - mean) * (s[i] - mean);
        var = len > 1 ? var / double(len - 1) : 0.0;
        const double denom = std::max(std::sqrt(var), 1e-8);
        for (std::size_t i = 0; i < len; ++i) s[i] = (s[i] - mean) / denom;
      }
    }
  });
  return ds;
}

EpochDataset segment_epochs(const Recording& rec, double window_s, double stride_s) {
  if (!(rec.fs > 0)) raise(Err::InvalidRate, "recording has no sampling rate");
  if (!(window_s > 0) || !(stride_s > 0))
    raise(Err::BadConfig, "window and stride must be positive seconds");
  const auto len = std::size_t(std::llround(window_s * rec.fs));
  const auto step = std::size_t(std::llround(stride_s * rec.fs));
  if (len < 1 || step < 1) raise(Err::BadConfig, "window and stride must cover at least one sample");
  const std::size_t total = rec.length();
  if (len > total)
    raise(Err::WindowTooLong, "window of " + std::to_string(len) + " samples exceeds the recording's " +
                                  std::to_string(total));

  EpochDataset ds;
  ds.channels = rec.samples.size();
  ds.epoch_len = len;
  ds.fs = rec.fs;
  ds.window_s = window_s;
  ds.channel_labels = rec.channels;
  ds.subjects = {rec.subject};
  ds.recordings = {rec.name};
  const std::size_t count = (total - len) / step + 1;
  ds.index.reserve(count);
  ds.data.reserve(count * ds.epoch_stride());
  for (std::size_t e = 0; e < count; ++e) {
    EpochProvenance p;
    p.start_s = double(e * step) / rec.fs;
    ds.index.push_back(p);
    for (std::size_t c = 0; c < ds.channels; ++c)
      ds.data.insert(ds.data.end(), rec.samples[c].begin() + std::ptrdiff_t(e * step),
                     rec.samples[c].begin() + std::ptrdiff_t(e * step + len));
  }
  return ds;
}

EpochDataset label_prediction_epochs(const EpochDataset& ds,
                                     const std::vector<SeizureInterval>& seizures,
                                     const LabelingPolicy& policy, LabelCounts* counts) {
  if (!(policy.preictal_minutes > 0)) raise(Err::BadConfig, "preictal window must be positive");
  if (policy.postictal_seconds < 0 || policy.buffer_hours < 0 || policy.sph_minutes < 0)
    raise(Err::BadConfig, "labeling zones cannot be negative");
  for (std::size_t i = 0; i < seizures.size(); ++i) {
    const auto& sz = seizures[i];
    if (!(sz.onset >= 0) || !(sz.offset > sz.onset))
      raise(Err::UnsortedAnnotations, "seizure interval is not a forward span");
    if (i > 0 && !(sz.onset > seizures[i - 1].offset))
      raise(Err::UnsortedAnnotations, "seizure intervals are not sorted and disjoint; normalize first");
  }

  const double window = ds.window_s;
  const double W = policy.preictal_s();
  const double SPH = policy.sph_s();
  const double B = policy.buffer_s();
  const double P = policy.postictal_seconds;

  EpochDataset out;
  out.channels = ds.channels;
  out.epoch_len = ds.epoch_len;
  out.fs = ds.fs;
  out.window_s = ds.window_s;
  out.channel_labels = ds.channel_labels;
  out.subjects = ds.subjects;
  out.recordings = ds.recordings;

  LabelCounts local;
  for (std::size_t e = 0; e < ds.size(); ++e) {
    const double s = ds.index[e].start_s;
    const double t = s + window; // epoch covers [s, t)

    bool ictal = false, postictal = false, preictal = false, buffered = false;
    for (const auto& sz : seizures) {
      if (s < sz.offset && sz.onset < t) ictal = true;
      if (s < sz.offset + P && sz.offset < t) postictal = true;
      if (s >= sz.onset - SPH - W && t <= sz.onset - SPH) preictal = true;
      if (sz.onset - B < t && s <= sz.offset + B) buffered = true;
    }

    int label;
    if (ictal) {
      ++local.dropped_ictal;
      continue;
    } else if (postictal) {
      ++local.dropped_postictal;
      continue;
    } else if (preictal) {
      label = kPreictal;
      ++local.preictal;
    } else if (buffered) {
      ++local.dropped_buffer;
      continue;
    } else {
      label = kInterictal;
      ++local.interictal;
    }

    EpochProvenance p = ds.index[e];
    p.label = label;
    out.index.push_back(p);
    const double* src = ds.epoch_ptr(e);
    out.data.insert(out.data.end(), src, src + ds.epoch_stride());
  }
  if (counts) *counts = local;
  return out;
}

std::vector<LosoFold> loso_split(const EpochDataset& ds) {
  std::vector<char> present(ds.subjects.size(), 0);
  for (const auto& e : ds.index) present[e.subject] = 1;
  std::vector<std::uint32_t> ids;
  for (std::uint32_t i = 0; i < present.size(); ++i)
    if (present[i]) ids.push_back(i);
  if (ids.size() < 2)
    raise(Err::SingleSubject, "leave-one-subject-out needs at least 2 subjects, found " +
                                  std::to_string(ids.size()));

  std::vector<LosoFold> folds;
  for (std::uint32_t id : ids) {
    LosoFold fold;
    fold.test_subject = ds.subjects[id];
    for (std::size_t e = 0; e < ds.size(); ++e)
      (ds.index[e].subject == id ? fold.test_epochs : fold.train_epochs).push_back(e);
    folds.push_back(std::move(fold));
  }
  return folds;
}

TrainTestSplit subject_split_70_30(const EpochDataset& ds, std::uint64_t seed, bool chronological) {
  if (ds.size() == 0) raise(Err::ClassTooSmall, "cannot split an empty dataset");
  std::vector<int> classes;
  for (const auto& e : ds.index) {
    if (e.label < 0) raise(Err::LabelOutOfRange, "cannot split unlabeled epochs");
    if (std::find(classes.begin(), classes.end(), e.label) == classes.end())
      classes.push_back(e.label);
  }
  std::sort(classes.begin(), classes.end());

  std::vector<char> present(ds.subjects.size(), 0);
  for (const auto& e : ds.index) present[e.subject] = 1;

  std::mt19937_64 rng(seed);
  TrainTestSplit split;
  for (std::uint32_t sub = 0; sub < present.size(); ++sub) {
    if (!present[sub]) continue;
    for (int cls : classes) {
      std::vector<std::size_t> idx;
      for (std::size_t e = 0; e < ds.size(); ++e)
        if (ds.index[e].subject == sub && ds.index[e].label == cls) idx.push_back(e);
      if (idx.size() < 2)
        raise(Err::ClassTooSmall, "subject '" + ds.subjects[sub] + "' has " +
                                      std::to_string(idx.size()) + " epochs of class " +
                                      std::to_string(cls) + "; need at least 2");
      if (chronological) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
          const auto &pa = ds.index[a], &pb = ds.index[b];
          if (pa.recording != pb.recording) return pa.recording < pb.recording;
          if (pa.start_s != pb.start_s) return pa.start_s < pb.start_s;
          return a < b;
        });
      } else {
        for (std::size_t i = idx.size() - 1; i > 0; --i)
          std::swap(idx[i], idx[rng() % (i + 1)]);
      }
      auto n_train = std::size_t(std::llround(0.7 * double(idx.size())));
      n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
      split.train_epochs.insert(split.train_epochs.end(), idx.begin(),
                                idx.begin() + std::ptrdiff_t(n_train));
      split.test_epochs.insert(split.test_epochs.end(), idx.begin() + std::ptrdiff_t(n_train),
                               idx.end());
    }
  }
  std::sort(split.train_epochs.begin(), split.train_epochs.end());
  std::sort(split.test_epochs.begin(), split.test_epochs.end());
  return split;
}

std::string loso_manifest(const std::vector<LosoFold>& folds) {
  std::string out = "# subject\ttest_fold\n";
  for (std::size_t f = 0; f < folds.size(); ++f)
    out += folds[f].test_subject + "\t" + std::to_string(f) + "\n";
  return out;
}

std::string split_manifest(const TrainTestSplit& split) {
  std::vector<std::pair<std::size_t, const char*>> rows;
  for (std::size_t e : split.train_epochs) rows.emplace_back(e, "train");
  for (std::size_t e : split.test_epochs) rows.emplace_back(e, "test");
  std::sort(rows.begin(), rows.end());
  std::string out = "# epoch\trole\n";
  for (const auto& [e, role] : rows) out += std::to_string(e) + "\t" + role + "\n";
  return out;
}

} // namespace hcft
