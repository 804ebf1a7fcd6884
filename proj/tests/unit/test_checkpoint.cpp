#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "karat/checkpoint.hpp"
#include "karat/error.hpp"
#include "support.hpp"

using namespace karat;

namespace {

std::vector<NamedTensor> sample_entries() {
  return {{"a", test_support::random_tensor({2, 3}, 1)},
          {"scalar", Tensor::scalar(-0.0)},
          {"cube", test_support::random_tensor({2, 2, 2}, 2)},
          {"unicode/\xc3\xa9", Tensor(Shape{1}, std::vector<double>{1e-300})}};
}

std::uint64_t read_le64(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

}  // namespace

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(sample_entries());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "KARAT1");
  EXPECT_EQ(bytes[6], kCheckpointVersion);
  EXPECT_EQ(read_le64(bytes, 7), 4u);
  EXPECT_EQ(read_le64(bytes, 15), 1u);  // name length of "a"
  EXPECT_EQ(bytes[23], 'a');
  EXPECT_EQ(read_le64(bytes, 24), 2u);  // rank
  EXPECT_EQ(read_le64(bytes, 32), 2u);
  EXPECT_EQ(read_le64(bytes, 40), 3u);
  const std::uint64_t first = read_le64(bytes, 48);
  double v;
  std::memcpy(&v, &first, 8);
  EXPECT_EQ(v, sample_entries()[0].tensor.at(0));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto entries = sample_entries();
  const auto back = decode_checkpoint(encode_checkpoint(entries));
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].name, entries[i].name);
    EXPECT_EQ(back[i].tensor.shape(), entries[i].tensor.shape());
    EXPECT_EQ(std::memcmp(back[i].tensor.values().data(), entries[i].tensor.values().data(),
                          8 * entries[i].tensor.size()),
              0);
  }
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(entries));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "karat_ckpt_test.ckpt";
  save_checkpoint(path, sample_entries());
  const auto back = load_checkpoint(path);
  EXPECT_EQ(find_entry(back, "cube").values(), sample_entries()[2].tensor.values());
  EXPECT_THROW(find_entry(back, "missing"), FormatError);
  EXPECT_THROW(load_checkpoint(path.string() + ".absent"), FormatError);
}

TEST(Checkpoint, BadMagicReportsOffsetZero) {
  auto bytes = encode_checkpoint(sample_entries());
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos);
  }
}

TEST(Checkpoint, TruncationReportsOffset) {
  const auto full = encode_checkpoint(sample_entries());
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, std::size_t{30}, full.size() - 1}) {
    std::vector<std::uint8_t> bytes(full.begin(), full.begin() + cut);
    try {
      decode_checkpoint(bytes);
      FAIL() << "cut " << cut;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
    }
  }
}

TEST(Checkpoint, TrailingBytesAndBadVersionRejected) {
  auto bytes = encode_checkpoint(sample_entries());
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
  bytes.pop_back();
  bytes[6] = 99;
  EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, ModelStateCarriesGeometry) {
  vit::VisionTransformer model(test_support::micro_config(), 3);
  const auto state = model.state();
  EXPECT_EQ(state.front().name, "meta.geometry");
  EXPECT_EQ(find_entry(state, "meta.geometry").values(), vit::geometry_tensor(model.config()).values());
}
