#include "caad/errors.hpp"
#include "caad/grounding_space.hpp"
#include "caad/half.hpp"
#include "caad/space_io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <type_traits>

namespace caad {
namespace {

SpaceMetadata small_meta(LogitDtype dtype = LogitDtype::kFloat32) {
  return SpaceMetadata{4, 8, 8, "emb", "model", dtype};
}

GroundingEntry make_entry(float seed, std::int64_t source = 0, std::int64_t step = 1) {
  Eigen::VectorXf e(4);
  e << seed, seed + 1.0F, -seed, 0.5F;
  Eigen::VectorXf l(8);
  for (int i = 0; i < 8; ++i) l[i] = seed * 0.1F + static_cast<float>(i);
  return {e, l, source, step};
}

std::vector<std::byte> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::byte>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TEST(GroundingSpaceBuilder, AppendIncrementsCount) {
  GroundingSpaceBuilder b(small_meta());
  EXPECT_EQ(b.size(), 0u);
  b.append(make_entry(1.0F));
  EXPECT_EQ(b.size(), 1u);
}

TEST(GroundingSpaceBuilder, RejectsShortEmbedding) {
  GroundingSpaceBuilder b(small_meta());
  auto e = make_entry(1.0F);
  e.embedding = Eigen::VectorXf::Ones(3);
  EXPECT_THROW(b.append(e), BuildError);
  EXPECT_EQ(b.size(), 0u);
}

TEST(GroundingSpaceBuilder, RejectsWrongLogitLength) {
  GroundingSpaceBuilder b(small_meta());
  auto e = make_entry(1.0F);
  e.logits = Eigen::VectorXf::Ones(9);
  EXPECT_THROW(b.append(e), BuildError);
}

TEST(GroundingSpaceBuilder, RejectsNonFinite) {
  GroundingSpaceBuilder b(small_meta());
  auto e = make_entry(1.0F);
  e.logits[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(b.append(e), BuildError);
  e = make_entry(1.0F);
  e.embedding[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(b.append(e), BuildError);
}

TEST(GroundingSpaceBuilder, RejectsZeroEmbedding) {
  GroundingSpaceBuilder b(small_meta());
  auto e = make_entry(1.0F);
  e.embedding.setZero();
  EXPECT_THROW(b.append(e), BuildError);
}

TEST(GroundingSpaceBuilder, RejectsEmptyIds) {
  auto meta = small_meta();
  meta.model_id.clear();
  EXPECT_THROW(GroundingSpaceBuilder{meta}, BuildError);
  meta = small_meta();
  meta.embedder_id.clear();
  EXPECT_THROW(GroundingSpaceBuilder{meta}, BuildError);
}

TEST(GroundingSpaceBuilder, PreservesInsertionOrder) {
  GroundingSpaceBuilder b(small_meta());
  const std::vector<GroundingEntry> entries{make_entry(3.0F, 0, 1), make_entry(-2.0F, 0, 2), make_entry(7.5F, 1, 1)};
  for (const auto& e : entries) b.append(e);
  const auto space = std::move(b).seal();
  ASSERT_EQ(space.size(), 3u);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto got = space.entry(i);
    EXPECT_EQ(got.embedding, entries[i].embedding);
    EXPECT_EQ(got.logits, entries[i].logits);
    EXPECT_EQ(got.source_id, entries[i].source_id);
    EXPECT_EQ(got.step_index, entries[i].step_index);
  }
}

TEST(GroundingSpace, SealedSpaceExposesOnlyConstViews) {
  static_assert(std::is_same_v<decltype(std::declval<const GroundingSpace&>().embeddings()), const RowMatrixXf&>);
  static_assert(std::is_same_v<decltype(std::declval<GroundingSpace&>().logits()), const RowMatrixXf&>);
  static_assert(std::is_same_v<decltype(std::declval<GroundingSpace&>().source_ids()), std::span<const std::int64_t>>);
  SUCCEED();
}

TEST(GroundingSpace, NormsAccumulateInDouble) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(2.0F));
  const auto space = std::move(b).seal();
  // [2, 3, -2, 0.5] -> sqrt(4 + 9 + 4 + 0.25)
  EXPECT_DOUBLE_EQ(space.embedding_norms()[0], std::sqrt(17.25));
}

TEST(Crc32, KnownCheckValue) {
  const std::string text = "123456789";
  EXPECT_EQ(crc32(std::as_bytes(std::span(text.data(), text.size()))), 0xCBF43926u);
}

TEST(SpaceIo, RoundTripIsBitExactAndResaveIdentical) {
  testing::TempDir dir;
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F, 0, 1)).append(make_entry(2.0F, 0, 2)).append(make_entry(-3.25F, 4, 9));
  const auto space = std::move(b).seal();

  save(space, dir / "a.caad");
  const auto loaded = load(dir / "a.caad");
  EXPECT_TRUE(loaded == space);
  save(loaded, dir / "b.caad");
  EXPECT_EQ(file_bytes(dir / "a.caad"), file_bytes(dir / "b.caad"));
}

TEST(SpaceIo, LayoutStartsWithMagicAndLengthPrefixedHeader) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F));
  const auto bytes = serialize_space(std::move(b).seal());
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::memcmp(bytes.data(), "CAADSPC1", 8), 0);
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  const std::string header(reinterpret_cast<const char*>(bytes.data()) + 12, header_len);
  const auto doc = nlohmann::json::parse(header);
  EXPECT_EQ(doc["count"], 1);
  EXPECT_EQ(doc["dim"], 4);
  EXPECT_EQ(doc["vocab_size"], 8);
  EXPECT_EQ(doc["checksum"], "crc32");
  // magic + length + header + one 4*4 + 8*4 byte record + crc
  EXPECT_EQ(bytes.size(), 12 + header_len + 48 + 4);
  // first embedding component, little-endian f32
  float first = 0.0F;
  std::memcpy(&first, bytes.data() + 12 + header_len, 4);
  EXPECT_EQ(first, 1.0F);
}

TEST(SpaceIo, BadMagicIsFormatError) {
  testing::TempDir dir;
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F));
  auto bytes = serialize_space(std::move(b).seal());
  std::memcpy(bytes.data(), "XXXX", 4);
  write_bytes(dir / "bad.caad", bytes);
  EXPECT_THROW(load(dir / "bad.caad"), FormatError);
}

TEST(SpaceIo, TruncationIsFormatError) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F)).append(make_entry(2.0F));
  const auto bytes = serialize_space(std::move(b).seal());
  for (std::size_t cut : {std::size_t{5}, std::size_t{20}, bytes.size() - 30, bytes.size() - 1}) {
    std::vector<std::byte> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_space(part), FormatError) << "cut at " << cut;
  }
}

TEST(SpaceIo, FlippedPayloadBitIsChecksumMismatch) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F)).append(make_entry(2.0F));
  auto bytes = serialize_space(std::move(b).seal());
  bytes[bytes.size() - 10] ^= std::byte{0x01};
  try {
    deserialize_space(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(SpaceIo, UnsupportedVersionIsFormatError) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F));
  auto bytes = serialize_space(std::move(b).seal());
  std::string text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const auto pos = text.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + std::string("\"format_version\":").size()] = std::byte{'2'};
  EXPECT_THROW(deserialize_space(bytes), FormatError);
}

TEST(SpaceIo, Float16LogitsMatchReferenceConversion) {
  testing::TempDir dir;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> wide(-70000.0F, 70000.0F);
  std::uniform_real_distribution<float> narrow(-3.0F, 3.0F);
  SpaceMetadata meta{4, 64, 8, "emb", "model", LogitDtype::kFloat16};
  GroundingSpaceBuilder b(meta);
  std::vector<Eigen::VectorXf> originals;
  for (int n = 0; n < 5; ++n) {
    Eigen::VectorXf l(64);
    for (int i = 0; i < 64; ++i) l[i] = n % 2 == 0 ? narrow(rng) : wide(rng) / 1.2F;
    l[0] = 1.0e-7F;   // subnormal in binary16
    l[1] = 65504.0F;  // largest finite binary16
    l[2] = -0.0F;
    originals.push_back(l);
    b.append({Eigen::VectorXf::Ones(4) * static_cast<float>(n + 1), l, n, 1});
  }
  const auto space = std::move(b).seal();
  save(space, dir / "h.caad");
  const auto loaded = load(dir / "h.caad");
  EXPECT_TRUE(loaded == space);
  for (int n = 0; n < 5; ++n) {
    for (int i = 0; i < 64; ++i) {
      const float expected = testing::reference_half_to_float(testing::reference_float_to_half(originals[n][i]));
      const float got = loaded.logits()(n, i);
      EXPECT_EQ(std::bit_cast<std::uint32_t>(got), std::bit_cast<std::uint32_t>(expected)) << n << "," << i;
    }
  }
}

TEST(SpaceIo, HalfConversionAgreesWithReferenceOnManyValues) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int i = 0; i < 200000; ++i) {
    const float f = std::bit_cast<float>(bits(rng));
    if (!std::isfinite(f)) continue;
    ASSERT_EQ(float_to_half_bits(f), testing::reference_float_to_half(f)) << f;
  }
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto half = static_cast<std::uint16_t>(h);
    const float a = half_bits_to_float(half);
    const float b = testing::reference_half_to_float(half);
    if (std::isnan(a)) {
      ASSERT_TRUE(std::isnan(b));
    } else {
      ASSERT_EQ(std::bit_cast<std::uint32_t>(a), std::bit_cast<std::uint32_t>(b)) << h;
    }
  }
}

TEST(SpaceIo, Float16OverflowIsBuildError) {
  GroundingSpaceBuilder b(SpaceMetadata{4, 8, 8, "emb", "model", LogitDtype::kFloat16});
  auto e = make_entry(1.0F);
  e.logits[0] = 1.0e6F;
  EXPECT_THROW(b.append(e), BuildError);
}

TEST(SpaceIo, RandomSpacesRoundTrip) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const auto dtype = trial % 3 == 0 ? LogitDtype::kFloat16 : LogitDtype::kFloat32;
    const auto rs = testing::random_space(rng, 1 + trial * 3, 1 + trial % 9, 1 + trial % 13, dtype);
    const auto bytes = serialize_space(rs.space);
    const auto back = deserialize_space(bytes);
    ASSERT_TRUE(back == rs.space);
    ASSERT_EQ(serialize_space(back), bytes);
  }
}

TEST(SpaceIo, ProvenanceSurvivesRoundTrip) {
  GroundingSpaceBuilder b(small_meta());
  b.append(make_entry(1.0F, 3, 1)).append(make_entry(1.0F, 3, 2)).append(make_entry(1.0F, 3, 7));
  b.append(make_entry(1.0F, 0, 1)).append(make_entry(1.0F, -5, -2));
  const auto space = std::move(b).seal();
  const auto back = deserialize_space(serialize_space(space));
  EXPECT_EQ(std::vector<std::int64_t>(back.source_ids().begin(), back.source_ids().end()),
            (std::vector<std::int64_t>{3, 3, 3, 0, -5}));
  EXPECT_EQ(std::vector<std::int64_t>(back.step_indices().begin(), back.step_indices().end()),
            (std::vector<std::int64_t>{1, 2, 7, 1, -2}));
}

TEST(SpaceIo, EmptySpaceRoundTrips) {
  const auto space = std::move(GroundingSpaceBuilder(small_meta())).seal();
  const auto back = deserialize_space(serialize_space(space));
  EXPECT_TRUE(back == space);
  EXPECT_EQ(back.size(), 0u);
}

TEST(Inspect, CountMatchesHeaderAndStatsMatchOracle) {
  testing::TempDir dir;
  std::mt19937_64 rng(3);
  const auto rs = testing::random_space(rng, 57, 5, 6);
  save(rs.space, dir / "s.caad");
  const auto header = read_space_header(dir / "s.caad");
  const auto doc = inspect(load(dir / "s.caad"));
  EXPECT_EQ(doc["count"], header["count"]);
  EXPECT_EQ(doc["count"], 57);
  EXPECT_EQ(doc["dim"], 5);
  EXPECT_EQ(doc["vocab_size"], 6);
  EXPECT_EQ(doc["logit_dtype"], "float32");
  EXPECT_EQ(doc["embedder_id"], "test-embedder");
  for (std::size_t c = 0; c < 5; ++c) {
    double sum = 0.0;
    for (const auto& k : rs.keys) sum += k[c];
    const double mean = sum / 57.0;
    double sq = 0.0;
    for (const auto& k : rs.keys) sq += (k[c] - mean) * (k[c] - mean);
    EXPECT_NEAR(doc["embedding_mean"][c].get<double>(), mean, 1e-12);
    EXPECT_NEAR(doc["embedding_std"][c].get<double>(), std::sqrt(sq / 57.0), 1e-12);
  }
}

}  // namespace
}  // namespace caad
