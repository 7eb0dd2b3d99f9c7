#pragma once
// EDF / EDF+ reading and writing, and TAL annotation decoding.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "transsleep/dataset.hpp"

namespace transsleep::edf {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct Signal {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  std::string prefiltering;
  std::size_t samples_per_record = 0;
  std::vector<std::int16_t> digital;
  std::vector<double> physical;

  bool is_annotation() const { return label == "EDF Annotations"; }
  double to_physical(std::int16_t d) const;
  // Inverse map, rounded and clamped to the digital range.
  std::int16_t to_digital(double p) const;
};

struct Recording {
  std::string patient;
  std::string recording_id;
  std::string start_date = "01.01.00";
  std::string start_time = "00.00.00";
  std::string reserved;
  std::size_t num_records = 0;
  double record_duration = 1.0;
  std::vector<Signal> signals;

  const Signal* find(std::string_view label) const;
  double sampling_rate(const Signal& s) const { return static_cast<double>(s.samples_per_record) / record_duration; }
};

Recording parse(const std::vector<std::uint8_t>& bytes);
// Encodes `digital`; signals whose digital array is empty are quantized from
// `physical` first.
std::vector<std::uint8_t> write(const Recording& rec);

// Raw bytes of an annotation signal (its 16-bit samples reinterpreted).
std::vector<std::uint8_t> annotation_bytes(const Signal& s);
Signal make_annotation_signal(const std::vector<std::string>& tal_records, std::size_t bytes_per_record);

struct Annotation {
  double onset = 0.0;
  double duration = 0.0;
  std::string text;
};

// Decodes time-stamped annotation lists. Time-keeping entries without text
// are dropped; the result is ordered by onset.
std::vector<Annotation> parse_tal(const std::vector<std::uint8_t>& bytes);
// Collects the annotations of every "EDF Annotations" signal in an EDF+ file.
std::vector<Annotation> parse_hypnogram(const std::vector<std::uint8_t>& bytes);
// One TAL entry: "+onset\x15duration\x14text\x14\x00".
std::string encode_tal(const Annotation& a);

// Sleep-stage string to 5-class label; std::nullopt means the epoch is
// discarded (movement, unknown). Throws std::invalid_argument otherwise.
std::optional<Stage> map_label(std::string_view stage);

}  // namespace transsleep::edf
