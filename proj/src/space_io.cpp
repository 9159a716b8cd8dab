#include "caad/space_io.hpp"

#include "caad/errors.hpp"
#include "caad/half.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace caad {

namespace {

template <typename UInt>
UInt to_little(UInt value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    UInt out = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      out = static_cast<UInt>((out << 8) | ((value >> (8 * i)) & 0xFF));
    }
    return out;
  }
}

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename UInt>
  void uint(UInt value) {
    const UInt le = to_little(value);
    bytes(&le, sizeof(le));
  }
  void f32(float value) { uint(std::bit_cast<std::uint32_t>(value)); }
  void f16(float value) { uint(float_to_half_bits(value)); }

  std::size_t size() const { return out_.size(); }
  std::vector<std::byte>& buffer() { return out_; }

 private:
  std::vector<std::byte> out_;
};

template <typename UInt>
UInt read_uint(const std::byte* p) {
  UInt raw;
  std::memcpy(&raw, p, sizeof(raw));
  return to_little(raw);
}

nlohmann::json provenance_runs(const GroundingSpace& space) {
  auto runs = nlohmann::json::array();
  const auto sources = space.source_ids();
  const auto steps = space.step_indices();
  std::size_t i = 0;
  while (i < sources.size()) {
    std::size_t j = i + 1;
    while (j < sources.size() && sources[j] == sources[i] &&
           steps[j] == steps[i] + static_cast<std::int64_t>(j - i)) {
      ++j;
    }
    runs.push_back({sources[i], steps[i], j - i});
    i = j;
  }
  return runs;
}

nlohmann::json make_header(const GroundingSpace& space) {
  const auto& meta = space.metadata();
  return nlohmann::json{
      {"format_version", kSpaceFormatVersion},
      {"byte_order", "little"},
      {"dim", meta.dim},
      {"vocab_size", meta.vocab_size},
      {"chunk_size", meta.chunk_size},
      {"count", space.size()},
      {"embedder_id", meta.embedder_id},
      {"model_id", meta.model_id},
      {"logit_dtype", std::string(to_string(meta.logit_dtype))},
      {"record_stride", record_stride_bytes(meta)},
      {"checksum", "crc32"},
      {"provenance", provenance_runs(space)},
  };
}

struct ParsedHeader {
  SpaceMetadata meta;
  std::size_t count = 0;
  std::vector<std::int64_t> source_ids;
  std::vector<std::int64_t> step_indices;
};

ParsedHeader parse_header(const nlohmann::json& header) {
  ParsedHeader out;
  try {
    if (header.at("format_version").get<int>() != kSpaceFormatVersion) {
      throw FormatError("unsupported format_version " + header.at("format_version").dump());
    }
    if (header.at("checksum").get<std::string>() != "crc32") throw FormatError("unsupported checksum algorithm");
    if (header.at("byte_order").get<std::string>() != "little") throw FormatError("unsupported byte order");
    out.meta.dim = header.at("dim").get<std::int64_t>();
    out.meta.vocab_size = header.at("vocab_size").get<std::int64_t>();
    out.meta.chunk_size = header.at("chunk_size").get<std::int64_t>();
    out.meta.embedder_id = header.at("embedder_id").get<std::string>();
    out.meta.model_id = header.at("model_id").get<std::string>();
    out.meta.logit_dtype = parse_logit_dtype(header.at("logit_dtype").get<std::string>());
    out.count = header.at("count").get<std::size_t>();
    if (out.meta.dim < 1 || out.meta.vocab_size < 1) throw FormatError("non-positive dimensions in header");
    if (header.at("record_stride").get<std::size_t>() != record_stride_bytes(out.meta)) {
      throw FormatError("record_stride inconsistent with dim/vocab_size/logit_dtype");
    }
    out.source_ids.reserve(out.count);
    out.step_indices.reserve(out.count);
    for (const auto& run : header.at("provenance")) {
      const auto source = run.at(0).get<std::int64_t>();
      const auto first = run.at(1).get<std::int64_t>();
      const auto length = run.at(2).get<std::size_t>();
      if (length == 0 || out.source_ids.size() + length > out.count) throw FormatError("bad provenance run");
      for (std::size_t k = 0; k < length; ++k) {
        out.source_ids.push_back(source);
        out.step_indices.push_back(first + static_cast<std::int64_t>(k));
      }
    }
    if (out.source_ids.size() != out.count) throw FormatError("provenance does not cover every record");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  return out;
}

std::size_t parse_prefix(std::span<const std::byte> bytes, nlohmann::json& header) {
  if (bytes.size() < sizeof(kSpaceMagic) + 4) throw FormatError("file too short for magic and header length");
  if (std::memcmp(bytes.data(), kSpaceMagic, sizeof(kSpaceMagic)) != 0) throw FormatError("bad magic");
  const auto header_len = read_uint<std::uint32_t>(bytes.data() + sizeof(kSpaceMagic));
  const std::size_t header_start = sizeof(kSpaceMagic) + 4;
  if (bytes.size() - header_start < header_len) throw FormatError("truncated header");
  const auto* text = reinterpret_cast<const char*>(bytes.data() + header_start);
  header = nlohmann::json::parse(text, text + header_len, nullptr, /*allow_exceptions=*/false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("header is not a JSON object");
  return header_start + header_len;
}

}  // namespace

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t remaining = bytes.size();
  while (remaining > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(remaining, std::numeric_limits<uInt>::max()));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    remaining -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t record_stride_bytes(const SpaceMetadata& meta) {
  const std::size_t logit_bytes = meta.logit_dtype == LogitDtype::kFloat16 ? 2 : 4;
  return static_cast<std::size_t>(meta.dim) * 4 + static_cast<std::size_t>(meta.vocab_size) * logit_bytes;
}

std::vector<std::byte> serialize_space(const GroundingSpace& space) {
  const auto& meta = space.metadata();
  const std::string header = make_header(space).dump();

  ByteWriter w;
  w.bytes(kSpaceMagic, sizeof(kSpaceMagic));
  w.uint(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  const std::size_t records_start = w.size();
  w.buffer().reserve(records_start + space.size() * record_stride_bytes(meta) + 4);

  const auto& emb = space.embeddings();
  const auto& logits = space.logits();
  for (Eigen::Index row = 0; row < emb.rows(); ++row) {
    for (Eigen::Index c = 0; c < emb.cols(); ++c) w.f32(emb(row, c));
    if (meta.logit_dtype == LogitDtype::kFloat16) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) w.f16(logits(row, c));
    } else {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) w.f32(logits(row, c));
    }
  }
  const auto records = std::span<const std::byte>(w.buffer()).subspan(records_start);
  w.uint(crc32(records));
  return std::move(w.buffer());
}

GroundingSpace deserialize_space(std::span<const std::byte> bytes) {
  nlohmann::json header;
  const std::size_t records_start = parse_prefix(bytes, header);
  ParsedHeader parsed = parse_header(header);

  const std::size_t stride = record_stride_bytes(parsed.meta);
  if (parsed.count > (bytes.size() - records_start) / std::max<std::size_t>(stride, 1)) {
    throw FormatError("truncated record payload");
  }
  const std::size_t records_len = parsed.count * stride;
  if (bytes.size() - records_start < records_len + 4) throw FormatError("truncated record payload");
  if (bytes.size() - records_start != records_len + 4) throw FormatError("trailing bytes after checksum");

  const auto records = bytes.subspan(records_start, records_len);
  const auto stored_crc = read_uint<std::uint32_t>(bytes.data() + records_start + records_len);
  if (crc32(records) != stored_crc) throw FormatError("checksum mismatch");

  const auto n = static_cast<Eigen::Index>(parsed.count);
  const auto d = parsed.meta.dim;
  const auto v = parsed.meta.vocab_size;
  RowMatrixXf embeddings(n, d);
  RowMatrixXf logits(n, v);
  const std::byte* p = records.data();
  for (Eigen::Index row = 0; row < n; ++row) {
    for (Eigen::Index c = 0; c < d; ++c, p += 4) embeddings(row, c) = std::bit_cast<float>(read_uint<std::uint32_t>(p));
    if (parsed.meta.logit_dtype == LogitDtype::kFloat16) {
      for (Eigen::Index c = 0; c < v; ++c, p += 2) logits(row, c) = half_bits_to_float(read_uint<std::uint16_t>(p));
    } else {
      for (Eigen::Index c = 0; c < v; ++c, p += 4) logits(row, c) = std::bit_cast<float>(read_uint<std::uint32_t>(p));
    }
  }

  try {
    return GroundingSpace::from_parts(std::move(parsed.meta), std::move(embeddings), std::move(logits),
                                      std::move(parsed.source_ids), std::move(parsed.step_indices));
  } catch (const BuildError& e) {
    throw FormatError(std::string("invalid space contents: ") + e.what());
  }
}

void save(const GroundingSpace& space, const std::filesystem::path& path) {
  const auto bytes = serialize_space(space);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

namespace {

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::byte> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("cannot read " + path.string());
  return bytes;
}

}  // namespace

GroundingSpace load(const std::filesystem::path& path) { return deserialize_space(read_file(path)); }

nlohmann::json read_space_header(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json header;
  parse_prefix(bytes, header);
  parse_header(header);
  return header;
}

nlohmann::json inspect(const GroundingSpace& space) {
  const auto& meta = space.metadata();
  const auto& emb = space.embeddings();
  std::vector<double> mean(static_cast<std::size_t>(meta.dim), 0.0);
  std::vector<double> stddev(static_cast<std::size_t>(meta.dim), 0.0);
  if (!space.empty()) {
    const auto n = static_cast<double>(emb.rows());
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(emb.cols());
    for (Eigen::Index row = 0; row < emb.rows(); ++row) mu += emb.row(row).cast<double>();
    mu /= n;
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(emb.cols());
    for (Eigen::Index row = 0; row < emb.rows(); ++row) {
      var += (emb.row(row).cast<double>() - mu).array().square().matrix();
    }
    var /= n;
    for (Eigen::Index c = 0; c < mu.size(); ++c) {
      mean[static_cast<std::size_t>(c)] = mu[c];
      stddev[static_cast<std::size_t>(c)] = std::sqrt(var[c]);
    }
  }
  return nlohmann::json{
      {"count", space.size()},
      {"dim", meta.dim},
      {"vocab_size", meta.vocab_size},
      {"chunk_size", meta.chunk_size},
      {"logit_dtype", std::string(to_string(meta.logit_dtype))},
      {"embedder_id", meta.embedder_id},
      {"model_id", meta.model_id},
      {"embedding_mean", mean},
      {"embedding_std", stddev},
  };
}

}  // namespace caad
