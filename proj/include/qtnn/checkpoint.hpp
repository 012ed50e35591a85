#pragma once

// Checkpoint files:
//
//   QTNN1\n
//   kind=<bnn|rnn> layers=<comma sizes> activation=<qt|relu> v0=<f> a=<f> emap=<smooth|clamp> escale=<f>\n
//   <parameter arrays, flattened in declaration order, little-endian float64>
//
// emap/escale are optional on read (default smooth, 1). ReLU models write
// v0=0 a=0.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qtnn/dense.hpp"
#include "qtnn/errors.hpp"

namespace qtnn {

inline constexpr std::string_view kCheckpointMagic = "QTNN1\n";

struct CheckpointHeader {
  std::string kind;                 // "bnn" or "rnn"
  std::vector<std::size_t> layers;  // model-specific size list
  Activation activation;

  friend bool operator==(const CheckpointHeader&, const CheckpointHeader&) = default;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<double> params;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string activation_name(const Activation& a) {
  switch (a.kind) {
    case ActivationKind::QT: return "qt";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Identity: return "identity";
  }
  return "identity";
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic);
  const auto& h = ck.header;
  const bool qt = h.activation.kind == ActivationKind::QT;
  out += "kind=" + h.kind + " layers=";
  for (std::size_t i = 0; i < h.layers.size(); ++i) out += (i ? "," : "") + std::to_string(h.layers[i]);
  out += " activation=" + activation_name(h.activation);
  out += " v0=" + format_double(qt ? h.activation.barrier.height : 0.0);
  out += " a=" + format_double(qt ? h.activation.barrier.width : 0.0);
  out += std::string(" emap=") + (h.activation.map.kind == EnergyMapKind::SmoothPositive ? "smooth" : "clamp");
  out += " escale=" + format_double(h.activation.map.scale);
  out += '\n';
  const std::size_t start = out.size();
  out.resize(start + ck.params.size() * 8);
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(ck.params[i]);
    for (int b = 0; b < 8; ++b) out[start + i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

namespace detail {

inline double parse_double_field(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError("checkpoint: bad value for " + key + ": '" + v + "'");
  }
}

}  // namespace detail

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (!bytes.starts_with(kCheckpointMagic)) throw FormatError("checkpoint: missing QTNN1 magic");
  bytes.remove_prefix(kCheckpointMagic.size());
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw FormatError("checkpoint: missing header line");
  std::istringstream line{std::string(bytes.substr(0, nl))};
  bytes.remove_prefix(nl + 1);

  std::map<std::string, std::string> fields;
  for (std::string tok; line >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: malformed header token '" + tok + "'");
    fields[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  for (const char* required : {"kind", "layers", "activation", "v0", "a"})
    if (!fields.count(required)) throw FormatError(std::string("checkpoint: header lacks ") + required);

  Checkpoint ck;
  ck.header.kind = fields["kind"];
  if (ck.header.kind != "bnn" && ck.header.kind != "rnn") throw FormatError("checkpoint: unknown kind " + ck.header.kind);
  std::stringstream sizes(fields["layers"]);
  for (std::string part; std::getline(sizes, part, ',');) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || p != part.data() + part.size() || v == 0)
      throw FormatError("checkpoint: bad layer size '" + part + "'");
    ck.header.layers.push_back(v);
  }

  EnergyMap map{};
  if (fields.count("emap")) {
    if (fields["emap"] == "clamp") map.kind = EnergyMapKind::IdentityClamp;
    else if (fields["emap"] != "smooth") throw FormatError("checkpoint: unknown emap " + fields["emap"]);
  }
  if (fields.count("escale")) map.scale = detail::parse_double_field("escale", fields["escale"]);

  const std::string act = fields["activation"];
  try {
    if (act == "qt")
      ck.header.activation = Activation::qt(Barrier(detail::parse_double_field("v0", fields["v0"]),
                                                    detail::parse_double_field("a", fields["a"])), map);
    else if (act == "relu")
      ck.header.activation = Activation::relu();
    else
      throw FormatError("checkpoint: unknown activation " + act);
  } catch (const DomainError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  if (bytes.size() % 8 != 0) throw FormatError("checkpoint: parameter block is not a whole number of float64s");
  ck.params.resize(bytes.size() / 8);
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    ck.params[i] = std::bit_cast<double>(bits);
  }
  return ck;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// Sequential reader over a flat parameter block.
class ParamReader {
 public:
  explicit ParamReader(const std::vector<double>& p) : params_(p) {}

  void fill(std::span<double> dst) {
    if (pos_ + dst.size() > params_.size()) throw FormatError("checkpoint: parameter block too short");
    std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(pos_), dst.size(), dst.begin());
    pos_ += dst.size();
  }

  void finish() const {
    if (pos_ != params_.size()) throw FormatError("checkpoint: parameter block has trailing values");
  }

 private:
  const std::vector<double>& params_;
  std::size_t pos_ = 0;
};

inline void append(std::vector<double>& dst, std::span<const double> src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace qtnn
