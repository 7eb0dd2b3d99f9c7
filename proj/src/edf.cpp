#include "transsleep/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace transsleep::edf {

namespace {

constexpr std::size_t kFixedHeader = 256;
constexpr std::size_t kSignalHeader = 256;
constexpr char kTalSep = 0x14;
constexpr char kTalDuration = 0x15;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(' ');
  return std::string(s.substr(b, e - b + 1));
}

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::string field(std::size_t offset, std::size_t width) const {
    if (offset + width > bytes_.size()) throw ParseError("truncated EDF header", bytes_.size());
    return trim(std::string_view(reinterpret_cast<const char*>(bytes_.data() + offset), width));
  }
  double number(std::size_t offset, std::size_t width, const char* name) const {
    const std::string s = field(offset, width);
    double v = 0.0;
    const char* begin = s.data();
    if (!s.empty() && s[0] == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(std::string("non-numeric header field ") + name + " '" + s + "'", offset);
    }
    return v;
  }
  long integer(std::size_t offset, std::size_t width, const char* name) const {
    const double v = number(offset, width, name);
    if (v != std::floor(v)) throw ParseError(std::string("non-integer header field ") + name, offset);
    return static_cast<long>(v);
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
};

std::string pad(const std::string& s, std::size_t width) {
  std::string out = s.substr(0, width);
  out.resize(width, ' ');
  return out;
}

std::string format_number(double v) {
  char buf[32];
  for (int precision = 8; precision > 0; --precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::string(buf).size() <= 8) return buf;
  }
  throw std::invalid_argument("number does not fit an 8-character EDF field: " + std::to_string(v));
}

}  // namespace

double Signal::to_physical(std::int16_t d) const {
  const double gain = (physical_max - physical_min) / static_cast<double>(digital_max - digital_min);
  return (static_cast<double>(d) - digital_min) * gain + physical_min;
}

std::int16_t Signal::to_digital(double p) const {
  const double gain = static_cast<double>(digital_max - digital_min) / (physical_max - physical_min);
  const double d = std::round((p - physical_min) * gain + digital_min);
  return static_cast<std::int16_t>(std::clamp(d, static_cast<double>(digital_min), static_cast<double>(digital_max)));
}

const Signal* Recording::find(std::string_view label) const {
  for (const auto& s : signals) {
    if (s.label == label) return &s;
  }
  return nullptr;
}

Recording parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFixedHeader) throw ParseError("truncated EDF header", bytes.size());
  const HeaderReader h(bytes);
  Recording rec;
  rec.patient = h.field(8, 80);
  rec.recording_id = h.field(88, 80);
  rec.start_date = h.field(168, 8);
  rec.start_time = h.field(176, 8);
  const long header_bytes = h.integer(184, 8, "header size");
  rec.reserved = h.field(192, 44);
  const long num_records = h.integer(236, 8, "number of records");
  rec.record_duration = h.number(244, 8, "record duration");
  const long ns = h.integer(252, 4, "number of signals");
  if (ns < 0) throw ParseError("negative signal count", 252);
  const std::size_t n = static_cast<std::size_t>(ns);
  const std::size_t expected_header = kFixedHeader + kSignalHeader * n;
  if (bytes.size() < expected_header) throw ParseError("truncated signal headers", bytes.size());
  if (header_bytes != static_cast<long>(expected_header)) {
    throw ParseError("header size field " + std::to_string(header_bytes) + " does not match " +
                         std::to_string(expected_header),
                     184);
  }

  rec.signals.resize(n);
  std::size_t off = kFixedHeader;
  auto column = [&](std::size_t width) {
    const std::size_t start = off;
    off += width * n;
    return start;
  };
  const std::size_t label_off = column(16), transducer_off = column(80), dim_off = column(8),
                    pmin_off = column(8), pmax_off = column(8), dmin_off = column(8), dmax_off = column(8),
                    prefilter_off = column(80), nsamp_off = column(8);
  std::size_t samples_per_block = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Signal& s = rec.signals[i];
    s.label = h.field(label_off + 16 * i, 16);
    s.transducer = h.field(transducer_off + 80 * i, 80);
    s.physical_dimension = h.field(dim_off + 8 * i, 8);
    s.physical_min = h.number(pmin_off + 8 * i, 8, "physical minimum");
    s.physical_max = h.number(pmax_off + 8 * i, 8, "physical maximum");
    s.digital_min = static_cast<int>(h.integer(dmin_off + 8 * i, 8, "digital minimum"));
    s.digital_max = static_cast<int>(h.integer(dmax_off + 8 * i, 8, "digital maximum"));
    s.prefiltering = h.field(prefilter_off + 80 * i, 80);
    const long spr = h.integer(nsamp_off + 8 * i, 8, "samples per record");
    if (spr <= 0) throw ParseError("samples per record must be positive", nsamp_off + 8 * i);
    s.samples_per_record = static_cast<std::size_t>(spr);
    samples_per_block += s.samples_per_record;
    if (!s.is_annotation()) {
      if (s.physical_min == s.physical_max) {
        throw ParseError("physical minimum equals physical maximum for signal '" + s.label + "'", pmin_off + 8 * i);
      }
      if (s.digital_min >= s.digital_max) {
        throw ParseError("digital minimum not below digital maximum for signal '" + s.label + "'",
                         dmin_off + 8 * i);
      }
    }
  }

  const std::size_t block_bytes = 2 * samples_per_block;
  std::size_t records = 0;
  if (num_records < 0) {
    // -1 while recording was in progress: infer from the file size.
    records = block_bytes == 0 ? 0 : (bytes.size() - expected_header) / block_bytes;
  } else {
    records = static_cast<std::size_t>(num_records);
  }
  rec.num_records = records;
  if (n == 0) return rec;
  const std::size_t needed = expected_header + records * block_bytes;
  if (bytes.size() < needed) throw ParseError("truncated data records", bytes.size());

  for (auto& s : rec.signals) s.digital.reserve(records * s.samples_per_record);
  std::size_t pos = expected_header;
  for (std::size_t r = 0; r < records; ++r) {
    for (auto& s : rec.signals) {
      for (std::size_t k = 0; k < s.samples_per_record; ++k, pos += 2) {
        const auto v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        s.digital.push_back(static_cast<std::int16_t>(v));
      }
    }
  }
  for (auto& s : rec.signals) {
    if (s.is_annotation()) continue;
    s.physical.resize(s.digital.size());
    for (std::size_t i = 0; i < s.digital.size(); ++i) s.physical[i] = s.to_physical(s.digital[i]);
  }
  return rec;
}

std::vector<std::uint8_t> write(const Recording& rec) {
  const std::size_t n = rec.signals.size();
  std::vector<std::vector<std::int16_t>> digital(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Signal& s = rec.signals[i];
    if (!s.digital.empty()) {
      digital[i] = s.digital;
    } else {
      digital[i].reserve(s.physical.size());
      for (double p : s.physical) digital[i].push_back(s.to_digital(p));
    }
    if (digital[i].size() != rec.num_records * s.samples_per_record) {
      throw std::invalid_argument("signal '" + s.label + "' has " + std::to_string(digital[i].size()) +
                                  " samples, expected num_records * samples_per_record = " +
                                  std::to_string(rec.num_records * s.samples_per_record));
    }
  }

  std::string header;
  header += pad("0", 8);
  header += pad(rec.patient, 80);
  header += pad(rec.recording_id, 80);
  header += pad(rec.start_date, 8);
  header += pad(rec.start_time, 8);
  header += pad(std::to_string(kFixedHeader + kSignalHeader * n), 8);
  header += pad(rec.reserved, 44);
  header += pad(std::to_string(rec.num_records), 8);
  header += pad(format_number(rec.record_duration), 8);
  header += pad(std::to_string(n), 4);
  for (const auto& s : rec.signals) header += pad(s.label, 16);
  for (const auto& s : rec.signals) header += pad(s.transducer, 80);
  for (const auto& s : rec.signals) header += pad(s.physical_dimension, 8);
  for (const auto& s : rec.signals) header += pad(format_number(s.physical_min), 8);
  for (const auto& s : rec.signals) header += pad(format_number(s.physical_max), 8);
  for (const auto& s : rec.signals) header += pad(std::to_string(s.digital_min), 8);
  for (const auto& s : rec.signals) header += pad(std::to_string(s.digital_max), 8);
  for (const auto& s : rec.signals) header += pad(s.prefiltering, 80);
  for (const auto& s : rec.signals) header += pad(std::to_string(s.samples_per_record), 8);
  for (std::size_t i = 0; i < n; ++i) header += pad("", 32);

  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t r = 0; r < rec.num_records; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t spr = rec.signals[i].samples_per_record;
      for (std::size_t k = 0; k < spr; ++k) {
        const auto v = static_cast<std::uint16_t>(digital[i][r * spr + k]);
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> annotation_bytes(const Signal& s) {
  std::vector<std::uint8_t> out;
  out.reserve(2 * s.digital.size());
  for (std::int16_t d : s.digital) {
    const auto v = static_cast<std::uint16_t>(d);
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  return out;
}

Signal make_annotation_signal(const std::vector<std::string>& tal_records, std::size_t bytes_per_record) {
  if (bytes_per_record % 2 != 0) throw std::invalid_argument("annotation record size must be even");
  Signal s;
  s.label = "EDF Annotations";
  s.samples_per_record = bytes_per_record / 2;
  for (const std::string& rec : tal_records) {
    if (rec.size() > bytes_per_record) throw std::invalid_argument("TAL record exceeds annotation record size");
    std::string padded = rec;
    padded.resize(bytes_per_record, '\0');
    for (std::size_t i = 0; i < bytes_per_record; i += 2) {
      const auto lo = static_cast<std::uint8_t>(padded[i]);
      const auto hi = static_cast<std::uint8_t>(padded[i + 1]);
      s.digital.push_back(static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8))));
    }
  }
  return s;
}

std::vector<Annotation> parse_tal(const std::vector<std::uint8_t>& bytes) {
  std::vector<Annotation> out;
  std::size_t i = 0;
  const std::size_t n = bytes.size();
  auto read_number = [&](const char* name) {
    const std::size_t start = i;
    while (i < n && bytes[i] != kTalSep && bytes[i] != kTalDuration && bytes[i] != 0) ++i;
    const std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(i));
    double v = 0.0;
    const char* begin = s.data();
    if (!s.empty() && (s[0] == '+')) ++begin;
    const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(std::string("malformed TAL ") + name + " '" + s + "'", start);
    }
    return v;
  };
  while (i < n) {
    if (bytes[i] == 0) {
      ++i;
      continue;
    }
    if (bytes[i] != '+' && bytes[i] != '-') throw ParseError("TAL must start with a sign", i);
    const double onset = read_number("onset");
    double duration = 0.0;
    if (i < n && bytes[i] == kTalDuration) {
      ++i;
      duration = read_number("duration");
      // Some writers close the duration with a second 0x15.
      if (i < n && bytes[i] == kTalDuration) ++i;
    }
    if (i >= n || bytes[i] != kTalSep) throw ParseError("missing TAL delimiter 0x14 after onset", i);
    ++i;
    while (true) {
      if (i >= n) throw ParseError("unterminated TAL", i);
      if (bytes[i] == 0) {
        ++i;
        break;
      }
      const std::size_t start = i;
      while (i < n && bytes[i] != kTalSep && bytes[i] != 0) ++i;
      if (i >= n || bytes[i] != kTalSep) throw ParseError("annotation text not closed by 0x14", i);
      std::string text(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(i));
      ++i;
      if (!text.empty()) out.push_back({onset, duration, std::move(text)});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Annotation& a, const Annotation& b) { return a.onset < b.onset; });
  return out;
}

std::vector<Annotation> parse_hypnogram(const std::vector<std::uint8_t>& bytes) {
  const Recording rec = parse(bytes);
  std::vector<Annotation> out;
  for (const auto& s : rec.signals) {
    if (!s.is_annotation()) continue;
    const auto part = parse_tal(annotation_bytes(s));
    out.insert(out.end(), part.begin(), part.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const Annotation& a, const Annotation& b) { return a.onset < b.onset; });
  return out;
}

std::string encode_tal(const Annotation& a) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  std::string s = (a.onset < 0 ? "" : "+") + num(a.onset);
  if (a.duration > 0) s += kTalDuration + num(a.duration);
  s += kTalSep;
  s += a.text;
  s += kTalSep;
  s += '\0';
  return s;
}

std::optional<Stage> map_label(std::string_view stage) {
  if (stage == "Sleep stage W" || stage == "W") return Stage::W;
  if (stage == "Sleep stage 1" || stage == "N1") return Stage::N1;
  if (stage == "Sleep stage 2" || stage == "N2") return Stage::N2;
  if (stage == "Sleep stage 3" || stage == "Sleep stage 4" || stage == "N3" || stage == "N4") return Stage::N3;
  if (stage == "Sleep stage R" || stage == "REM" || stage == "R") return Stage::REM;
  if (stage == "Movement time" || stage == "Sleep stage ?" || stage == "MOVEMENT" || stage == "UNKNOWN") {
    return std::nullopt;
  }
  throw std::invalid_argument("unrecognized sleep stage annotation '" + std::string(stage) + "'");
}

}  // namespace transsleep::edf
