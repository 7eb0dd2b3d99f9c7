#include "transsleep/checkpoint.hpp"

#include <map>
#include <set>

#include "binary_io.hpp"

namespace transsleep::checkpoint {
namespace {

constexpr std::string_view kMagic = "TSLP";

NamedArray from_values(const std::string& name, const Shape& shape, std::span<const double> values) {
  NamedArray a;
  a.name = name;
  for (std::size_t d : shape) a.dims.push_back(static_cast<std::uint32_t>(d));
  a.values.reserve(values.size());
  for (double v : values) a.values.push_back(static_cast<float>(v));
  return a;
}

void copy_into(const NamedArray& a, const Shape& expected, std::span<double> dst) {
  Shape got(a.dims.begin(), a.dims.end());
  if (got != expected) {
    throw FormatError("checkpoint: '" + a.name + "' has shape " + shape_str(got) + ", model expects " +
                      shape_str(expected));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(a.values[i]);
}

}  // namespace

std::vector<std::uint8_t> encode(const std::vector<NamedArray>& arrays) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const NamedArray& a : arrays) {
    w.u32(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name);
    w.u32(static_cast<std::uint32_t>(a.dims.size()));
    for (std::uint32_t d : a.dims) w.u32(d);
    for (float v : a.values) w.f32(v);
  }
  return std::move(w.buffer());
}

std::vector<NamedArray> decode(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  try {
    if (r.bytes(4, "magic") != kMagic) throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32("count");
    std::vector<NamedArray> arrays(count);
    for (NamedArray& a : arrays) {
      a.name = r.bytes(r.u32("name length"), "name");
      const std::uint32_t rank = r.u32("rank");
      std::size_t numel = 1;
      a.dims.resize(rank);
      for (std::uint32_t& d : a.dims) {
        d = r.u32("dimension");
        numel *= d;
      }
      a.values.resize(numel);
      for (float& v : a.values) v = r.f32("values");
    }
    if (!r.done()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
    return arrays;
  } catch (const FormatError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

std::vector<NamedArray> collect(const nn::ModelParams& params) {
  std::vector<NamedArray> arrays;
  for (const auto& [name, t] : params.params()) arrays.push_back(from_values(name, t.shape(), t.data()));
  for (const auto& [name, s] : params.stats()) {
    if (!s.initialized()) continue;
    arrays.push_back(from_values(name + ".running_mean", {s.mean.size()}, s.mean));
    arrays.push_back(from_values(name + ".running_var", {s.var.size()}, s.var));
  }
  return arrays;
}

void apply(const std::vector<NamedArray>& arrays, nn::ModelParams& params) {
  std::set<std::string> seen;
  for (const NamedArray& a : arrays) {
    if (!seen.insert(a.name).second) throw FormatError("checkpoint: duplicate entry '" + a.name + "'");
    if (params.contains(a.name)) {
      Tensor t = params.get(a.name);
      copy_into(a, t.shape(), t.mutable_data());
      continue;
    }
    bool matched = false;
    for (auto& [name, s] : params.stats()) {
      for (const char* suffix : {".running_mean", ".running_var"}) {
        if (a.name != name + suffix) continue;
        auto& dst = std::string_view(suffix) == ".running_mean" ? s.mean : s.var;
        const std::size_t n = a.dims.size() == 1 ? a.dims[0] : 0;
        dst.assign(n, 0.0);
        copy_into(a, {n}, dst);
        matched = true;
      }
    }
    if (!matched) throw FormatError("checkpoint: unknown entry '" + a.name + "'");
  }
  for (const auto& [name, t] : params.params()) {
    if (!seen.count(name)) throw FormatError("checkpoint: missing parameter '" + name + "'");
  }
}

void save(const std::filesystem::path& path, const nn::ModelParams& params) {
  io::write_file(path, encode(collect(params)));
}

void load(const std::filesystem::path& path, nn::ModelParams& params) {
  checkpoint::apply(decode(io::read_file(path)), params);
}

}  // namespace transsleep::checkpoint
