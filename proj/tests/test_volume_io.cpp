#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "test_util.hpp"
#include "tta/volume_io.hpp"

using namespace tta;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(VolumeIo, RampRoundtripIsBitExact) {
    auto dir = testutil::scratch_dir("io_ramp");
    Volume v({4, 4, 4}, {1.5, 0.75, 0.75});
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(i) * 0.1f - 2.0f;
    io::write_volume(dir / "ramp", v);
    const auto back = io::read_volume<Volume>(dir / "ramp");
    EXPECT_EQ(back.shape, v.shape);
    EXPECT_EQ(back.spacing, v.spacing);
    EXPECT_EQ(std::memcmp(back.data.data(), v.data.data(), v.size() * 4), 0);
}

TEST(VolumeIo, OnesPayloadEncoding) {
    auto dir = testutil::scratch_dir("io_ones");
    Volume v({2, 2, 2}, {1, 1, 1}, 1.0f);
    io::write_volume(dir / "ones", v);
    const std::string raw = slurp(dir / "ones.volraw");
    ASSERT_EQ(raw.size(), 32u);
    for (int i = 0; i < 8; ++i) {
        const auto* b = reinterpret_cast<const unsigned char*>(raw.data() + 4 * i);
        EXPECT_EQ(b[0], 0x00);
        EXPECT_EQ(b[1], 0x00);
        EXPECT_EQ(b[2], 0x80);
        EXPECT_EQ(b[3], 0x3F);
    }
}

TEST(VolumeIo, HeaderFields) {
    auto dir = testutil::scratch_dir("io_hdr");
    LabelMap m({2, 3, 4}, {2, 1, 1}, 4);
    io::write_volume(dir / "lbl", m);
    const auto h = io::read_header(dir / "lbl");
    EXPECT_EQ(h["shape"], nlohmann::json({2, 3, 4}));
    EXPECT_EQ(h["dtype"], "u8");
    EXPECT_EQ(h["kind"], "label");
    EXPECT_EQ(h["num_labels"], 4);
    EXPECT_EQ(h["order"], "C");
    EXPECT_EQ(h["byte_order"], "LE");
}

TEST(VolumeIo, LabelAndProbRoundtrip) {
    auto dir = testutil::scratch_dir("io_lp");
    auto m = testutil::random_labels({5, 6, 7}, {1, 2, 3}, 3, 11);
    io::write_volume(dir / "m", m);
    const auto mb = io::read_volume<LabelMap>(dir / "m.volhdr.json");
    EXPECT_EQ(mb.data, m.data);
    EXPECT_EQ(mb.num_labels, 3);

    ProbMap p = one_hot(m);
    p.data[3] = 0.25f;
    io::write_volume(dir / "p", p);
    const auto pb = io::read_volume<ProbMap>(dir / "p.volraw");
    EXPECT_EQ(pb.num_labels, 3);
    EXPECT_EQ(std::memcmp(pb.data.data(), p.data.data(), p.data.size() * 4), 0);
}

TEST(VolumeIo, TruncatedPayloadIsFormatError) {
    auto dir = testutil::scratch_dir("io_trunc");
    Volume v({4, 4, 4}, {1, 1, 1});
    io::write_volume(dir / "v", v);
    std::filesystem::resize_file(dir / "v.volraw", 60 * 4);
    EXPECT_THROW(io::read_volume<Volume>(dir / "v"), FormatError);
}

TEST(VolumeIo, UnknownDtypeIsFormatError) {
    auto dir = testutil::scratch_dir("io_dtype");
    Volume v({1, 1, 2}, {1, 1, 1});
    io::write_volume(dir / "v", v);
    auto h = io::read_header(dir / "v");
    h["dtype"] = "f16";
    std::ofstream(dir / "v.volhdr.json") << h.dump();
    EXPECT_THROW(io::read_volume<Volume>(dir / "v"), FormatError);
}

TEST(VolumeIo, WrongKindRequested) {
    auto dir = testutil::scratch_dir("io_kind");
    io::write_volume(dir / "v", Volume({1, 1, 2}, {1, 1, 1}));
    EXPECT_THROW(io::read_volume<LabelMap>(dir / "v"), FormatError);
}

TEST(VolumeIo, OutOfAlphabetLabelRejected) {
    auto dir = testutil::scratch_dir("io_alpha");
    LabelMap m({1, 1, 2}, {1, 1, 1}, 2);
    m.data[1] = 5;
    io::write_volume(dir / "m", m);
    EXPECT_THROW(io::read_volume<LabelMap>(dir / "m"), FormatError);
}
