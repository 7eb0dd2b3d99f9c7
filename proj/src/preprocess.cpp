#include "transsleep/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <regex>

#include "transsleep/tensor.hpp"

namespace transsleep::preprocess {

namespace {

using cplx = std::complex<double>;

// Section coefficients for a conjugate pole pair (or two real poles).
Section pole_section(cplx p1, cplx p2) {
  const cplx sum = p1 + p2;
  const cplx prod = p1 * p2;
  // Numerator: one zero at z = +1 and one at z = -1.
  return {1.0, 0.0, -1.0, 1.0, -sum.real(), prod.real()};
}

}  // namespace

std::vector<Section> butter_bandpass(const FilterConfig& cfg) {
  if (cfg.order < 1) throw ConfigError("band-pass order must be at least 1");
  if (!(cfg.fs > 0.0)) throw ConfigError("sampling rate must be positive");
  if (!(cfg.low_hz > 0.0 && cfg.low_hz < cfg.high_hz && 2.0 * cfg.high_hz < cfg.fs)) {
    throw ConfigError("invalid band edges [" + std::to_string(cfg.low_hz) + ", " + std::to_string(cfg.high_hz) +
                      "] Hz for sampling rate " + std::to_string(cfg.fs) + " Hz");
  }
  const int n = cfg.order;
  const double fs2 = 2.0 * cfg.fs;
  const double w1 = fs2 * std::tan(std::numbers::pi * cfg.low_hz / cfg.fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * cfg.high_hz / cfg.fs);
  const double bw = w2 - w1;
  const double w0 = std::sqrt(w1 * w2);

  // Analog low-pass prototype, shifted to band-pass, then mapped to z.
  std::vector<cplx> poles;
  for (int m = -n + 1; m < n; m += 2) {
    const cplx p = -std::exp(cplx(0.0, std::numbers::pi * m / (2.0 * n)));
    const cplx lp = p * (bw / 2.0);
    const cplx root = std::sqrt(lp * lp - w0 * w0);
    poles.push_back(lp + root);
    poles.push_back(lp - root);
  }
  cplx gain_den = 1.0;
  std::vector<cplx> zpoles;
  for (const cplx& p : poles) {
    zpoles.push_back((fs2 + p) / (fs2 - p));
    gain_den *= fs2 - p;
  }
  // Prototype gain bw^n; the n analog zeros at s = 0 contribute fs2^n.
  const double gain = (std::pow(bw, n) * std::pow(fs2, n) / gain_den).real();

  std::vector<cplx> upper, reals;
  for (const cplx& p : zpoles) {
    if (std::abs(p.imag()) < 1e-14) {
      reals.push_back(p);
    } else if (p.imag() > 0) {
      upper.push_back(p);
    }
  }
  std::vector<Section> sos;
  for (const cplx& p : upper) sos.push_back(pole_section(p, std::conj(p)));
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) sos.push_back(pole_section(reals[i], reals[i + 1]));
  if (sos.size() != static_cast<std::size_t>(n)) throw ConfigError("band-pass design produced unpaired poles");
  for (int i = 0; i < 3; ++i) sos[0][i] *= gain;
  return sos;
}

std::vector<double> sosfilt(const std::vector<Section>& sos, const std::vector<double>& x, std::vector<double>* state) {
  std::vector<double> zi(2 * sos.size(), 0.0);
  if (state) {
    if (state->size() != zi.size()) throw ShapeError("sosfilt: state needs 2 values per section");
    zi = *state;
  }
  std::vector<double> y = x;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const Section& c = sos[s];
    double z0 = zi[2 * s], z1 = zi[2 * s + 1];
    for (double& v : y) {
      const double in = v;
      const double out = c[0] * in + z0;
      z0 = c[1] * in - c[4] * out + z1;
      z1 = c[2] * in - c[5] * out;
      v = out;
    }
    zi[2 * s] = z0;
    zi[2 * s + 1] = z1;
  }
  if (state) *state = zi;
  return y;
}

std::vector<double> sosfilt_zi(const std::vector<Section>& sos) {
  std::vector<double> zi;
  double scale = 1.0;
  for (const Section& c : sos) {
    const double b0 = c[0], b1 = c[1], b2 = c[2], a1 = c[4], a2 = c[5];
    // Solve (I - A^T) z = B for the transposed direct form II state.
    const double m00 = 1.0 + a1, m01 = -1.0, m10 = a2, m11 = 1.0;
    const double r0 = b1 - a1 * b0, r1 = b2 - a2 * b0;
    const double det = m00 * m11 - m01 * m10;
    zi.push_back(scale * (r0 * m11 - m01 * r1) / det);
    zi.push_back(scale * (m00 * r1 - m10 * r0) / det);
    scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
  }
  return zi;
}

std::vector<double> sosfiltfilt(const std::vector<Section>& sos, const std::vector<double>& x) {
  const std::size_t pad = 3 * (2 * sos.size() + 1);
  if (x.size() <= pad) {
    throw PreprocessError("signal of " + std::to_string(x.size()) + " samples is too short for zero-phase filtering (needs more than " +
                          std::to_string(pad) + ")");
  }
  const std::size_t n = x.size();
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const std::vector<double> zi = sosfilt_zi(sos);
  std::vector<double> state(zi.size());
  for (std::size_t i = 0; i < zi.size(); ++i) state[i] = zi[i] * ext.front();
  std::vector<double> y = sosfilt(sos, ext, &state);
  std::reverse(y.begin(), y.end());
  for (std::size_t i = 0; i < zi.size(); ++i) state[i] = zi[i] * y.front();
  y = sosfilt(sos, y, &state);
  std::reverse(y.begin(), y.end());
  return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(pad), y.end() - static_cast<std::ptrdiff_t>(pad));
}

std::vector<double> bandpass_filter(const std::vector<double>& signal, const FilterConfig& cfg) {
  return sosfiltfilt(butter_bandpass(cfg), signal);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw PreprocessError("quantile of an empty signal");
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double v_lo = values[lo];
  double v_hi = v_lo;
  if (hi != lo) v_hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return v_lo + (h - static_cast<double>(lo)) * (v_hi - v_lo);
}

std::vector<double> quantile_normalize(const std::vector<double>& signal) {
  const double median = quantile(signal, 0.5);
  const double iqr = quantile(signal, 0.75) - quantile(signal, 0.25);
  if (!(iqr > 0.0)) throw PreprocessError("cannot normalize: inter-quartile range is zero");
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) out[i] = (signal[i] - median) / iqr;
  return out;
}

std::vector<EpochRecord> trim_wake(std::vector<EpochRecord> epochs, std::size_t max_wake) {
  const auto is_sleep = [](const EpochRecord& e) { return e.label != Stage::W; };
  const auto first = std::find_if(epochs.begin(), epochs.end(), is_sleep);
  if (first == epochs.end()) throw PreprocessError("recording has no sleep epochs");
  const auto last = std::find_if(epochs.rbegin(), epochs.rend(), is_sleep).base();  // one past
  const auto lead = static_cast<std::size_t>(first - epochs.begin());
  const auto trail = static_cast<std::size_t>(epochs.end() - last);
  const std::size_t begin = lead > max_wake ? lead - max_wake : 0;
  const std::size_t end = epochs.size() - (trail > max_wake ? trail - max_wake : 0);
  return std::vector<EpochRecord>(std::make_move_iterator(epochs.begin() + static_cast<std::ptrdiff_t>(begin)),
                                  std::make_move_iterator(epochs.begin() + static_cast<std::ptrdiff_t>(end)));
}

SubjectDataset segment_epochs(const std::vector<double>& signal, const std::vector<edf::Annotation>& annotations,
                              const std::string& subject_id, const PipelineConfig& cfg) {
  const double samples_per_epoch_f = cfg.epoch_seconds * cfg.filter.fs;
  const auto samples_per_epoch = static_cast<std::size_t>(std::llround(samples_per_epoch_f));
  if (samples_per_epoch != kEpochSamples) {
    throw ConfigError("epochs must hold " + std::to_string(kEpochSamples) + " samples, got " +
                      std::to_string(samples_per_epoch));
  }
  if (signal.size() < samples_per_epoch) {
    throw PreprocessError("signal of " + std::to_string(signal.size()) + " samples is shorter than one epoch");
  }
  std::vector<double> clean = bandpass_filter(signal, cfg.filter);
  if (!cfg.per_epoch_normalization) clean = quantile_normalize(clean);

  const std::size_t n_epochs = signal.size() / samples_per_epoch;
  std::vector<std::optional<Stage>> labels(n_epochs);
  std::vector<bool> covered(n_epochs, false);
  for (const auto& a : annotations) {
    const std::optional<Stage> label = edf::map_label(a.text);
    const double first = std::round(a.onset / cfg.epoch_seconds);
    const double count = std::round(a.duration / cfg.epoch_seconds);
    for (double k = 0; k < count; ++k) {
      const double idx = first + k;
      if (idx < 0 || idx >= static_cast<double>(n_epochs)) continue;
      const auto i = static_cast<std::size_t>(idx);
      labels[i] = label;
      covered[i] = true;
    }
  }

  std::vector<EpochRecord> epochs;
  for (std::size_t i = 0; i < n_epochs; ++i) {
    if (!covered[i] || !labels[i]) continue;
    std::vector<double> window(clean.begin() + static_cast<std::ptrdiff_t>(i * samples_per_epoch),
                               clean.begin() + static_cast<std::ptrdiff_t>((i + 1) * samples_per_epoch));
    if (cfg.per_epoch_normalization) window = quantile_normalize(window);
    EpochRecord e;
    e.samples.assign(window.begin(), window.end());
    e.label = *labels[i];
    e.subject_id = subject_id;
    e.epoch_index = i;
    epochs.push_back(std::move(e));
  }
  SubjectDataset ds;
  ds.subject_id = subject_id;
  ds.epochs = trim_wake(std::move(epochs), cfg.max_wake_epochs);
  return ds;
}

SubjectDataset preprocess_recording(const edf::Recording& psg, const std::vector<edf::Annotation>& annotations,
                                    const std::string& subject_id, const PipelineConfig& cfg) {
  const edf::Signal* s = psg.find(cfg.channel);
  if (!s) throw PreprocessError("recording " + subject_id + " has no channel '" + cfg.channel + "'");
  const double fs = psg.sampling_rate(*s);
  if (std::abs(fs - cfg.filter.fs) > 1e-9) {
    throw PreprocessError("channel '" + cfg.channel + "' is sampled at " + std::to_string(fs) + " Hz, expected " +
                          std::to_string(cfg.filter.fs));
  }
  return segment_epochs(s->physical, annotations, subject_id, cfg);
}

RecordingScan find_recordings(const std::filesystem::path& dir) {
  static const std::regex psg_name("(.+)-PSG\\.edf", std::regex::icase);
  static const std::regex hyp_name("(.+)-Hypnogram\\.edf", std::regex::icase);
  std::map<std::string, std::filesystem::path> psg, hyp;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, psg_name)) {
      psg[m[1].str().substr(0, m[1].length() - 1)] = e.path();
    } else if (std::regex_match(name, m, hyp_name)) {
      hyp[m[1].str().substr(0, m[1].length() - 1)] = e.path();
    }
  }
  RecordingScan scan;
  for (const auto& [key, path] : psg) {
    const auto h = hyp.find(key);
    if (h == hyp.end()) {
      scan.unpaired.push_back(path);
      continue;
    }
    const std::string name = path.filename().string();
    scan.pairs.push_back({name.substr(0, name.size() - 8), path, h->second});
  }
  for (const auto& [key, path] : hyp) {
    if (!psg.count(key)) scan.unpaired.push_back(path);
  }
  return scan;
}

}  // namespace transsleep::preprocess
