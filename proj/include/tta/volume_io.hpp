#pragma once

// On-disk volume format: a JSON header `<stem>.volhdr.json` next to a raw
// little-endian payload `<stem>.volraw`. Images and probability maps are f32,
// label maps are u8. Probability payloads are K consecutive D*H*W blocks.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>

#include "json.hpp"

#include "tta/error.hpp"
#include "tta/volume.hpp"

namespace tta::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

using AnyVolume = std::variant<Volume, LabelMap, ProbMap>;

/// Accepts a bare stem, `x.volhdr.json` or `x.volraw` and returns the stem.
inline fs::path volume_stem(const fs::path& p) {
    std::string s = p.string();
    for (const std::string ext : {".volhdr.json", ".volraw"}) {
        if (s.size() > ext.size() && s.compare(s.size() - ext.size(), ext.size(), ext) == 0)
            return fs::path(s.substr(0, s.size() - ext.size()));
    }
    return p;
}

inline fs::path header_path(const fs::path& p) { return fs::path(volume_stem(p).string() + ".volhdr.json"); }
inline fs::path payload_path(const fs::path& p) { return fs::path(volume_stem(p).string() + ".volraw"); }

namespace detail {

inline json base_header(const Shape3& s, const Spacing3& sp, const char* dtype, const char* kind) {
    return json{{"shape", {s.d, s.h, s.w}},
                {"spacing_mm", {sp.z, sp.y, sp.x}},
                {"dtype", dtype},
                {"order", "C"},
                {"byte_order", "LE"},
                {"kind", kind}};
}

inline void write_files(const fs::path& p, const json& hdr, const void* bytes, std::size_t n) {
    const fs::path stem = volume_stem(p);
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    {
        std::ofstream h(header_path(stem), std::ios::binary | std::ios::trunc);
        if (!h) throw IoError("cannot write " + header_path(stem).string());
        h << hdr.dump(2) << '\n';
    }
    std::ofstream r(payload_path(stem), std::ios::binary | std::ios::trunc);
    if (!r) throw IoError("cannot write " + payload_path(stem).string());
    r.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
    if (!r) throw IoError("short write to " + payload_path(stem).string());
}

inline std::string read_payload(const fs::path& p) {
    std::ifstream r(payload_path(p), std::ios::binary);
    if (!r) throw IoError("cannot read " + payload_path(p).string());
    return std::string(std::istreambuf_iterator<char>(r), {});
}

}  // namespace detail

inline void write_volume(const fs::path& p, const Volume& v) {
    detail::write_files(p, detail::base_header(v.shape, v.spacing, "f32", "image"), v.data.data(),
                        v.data.size() * sizeof(float));
}

inline void write_volume(const fs::path& p, const LabelMap& v) {
    json h = detail::base_header(v.shape, v.spacing, "u8", "label");
    h["num_labels"] = v.num_labels;
    detail::write_files(p, h, v.data.data(), v.data.size());
}

inline void write_volume(const fs::path& p, const ProbMap& v) {
    json h = detail::base_header(v.shape, v.spacing, "f32", "prob");
    h["num_labels"] = v.num_labels;
    detail::write_files(p, h, v.data.data(), v.data.size() * sizeof(float));
}

inline json read_header(const fs::path& p) {
    std::ifstream h(header_path(p));
    if (!h) throw IoError("cannot read " + header_path(p).string());
    try {
        return json::parse(h);
    } catch (const json::exception& e) {
        throw FormatError("malformed volume header " + header_path(p).string() + ": " + e.what());
    }
}

/// Reads whatever kind the header declares.
inline AnyVolume read_any(const fs::path& p) {
    const json h = read_header(p);
    Shape3 s;
    Spacing3 sp;
    std::string dtype, kind;
    try {
        s = {h.at("shape").at(0).get<int>(), h.at("shape").at(1).get<int>(), h.at("shape").at(2).get<int>()};
        sp = {h.at("spacing_mm").at(0).get<double>(), h.at("spacing_mm").at(1).get<double>(),
              h.at("spacing_mm").at(2).get<double>()};
        dtype = h.at("dtype").get<std::string>();
        kind = h.at("kind").get<std::string>();
        if (h.value("order", "C") != "C" || h.value("byte_order", "LE") != "LE")
            throw FormatError("unsupported order/byte_order in " + header_path(p).string());
    } catch (const json::exception& e) {
        throw FormatError("incomplete volume header " + header_path(p).string() + ": " + e.what());
    }
    if (!s.positive() || !sp.positive()) throw FormatError("non-positive shape or spacing in header");
    if (dtype != "f32" && dtype != "u8") throw FormatError("unknown dtype '" + dtype + "'");

    const std::string raw = detail::read_payload(p);
    const std::size_t elem = dtype == "f32" ? 4 : 1;
    auto check_size = [&](std::size_t count) {
        if (raw.size() != count * elem)
            throw FormatError("payload of " + payload_path(p).string() + " has " + std::to_string(raw.size()) +
                              " bytes, header declares " + std::to_string(count * elem));
    };

    if (kind == "image") {
        if (dtype != "f32") throw FormatError("image volumes must be f32");
        Volume v(s, sp);
        check_size(v.size());
        std::memcpy(v.data.data(), raw.data(), raw.size());
        return v;
    }
    if (kind == "label") {
        if (dtype != "u8") throw FormatError("label volumes must be u8");
        LabelMap v(s, sp, h.value("num_labels", 2));
        check_size(v.size());
        std::memcpy(v.data.data(), raw.data(), raw.size());
        v.validate();
        return v;
    }
    if (kind == "prob") {
        if (dtype != "f32") throw FormatError("prob volumes must be f32");
        ProbMap v(h.value("num_labels", 2), s, sp);
        check_size(v.data.size());
        std::memcpy(v.data.data(), raw.data(), raw.size());
        return v;
    }
    throw FormatError("unknown volume kind '" + kind + "'");
}

template <class V>
V read_volume(const fs::path& p) {
    AnyVolume any = read_any(p);
    if (auto* v = std::get_if<V>(&any)) return std::move(*v);
    throw FormatError(header_path(p).string() + " holds a different volume kind than requested");
}

inline bool volume_exists(const fs::path& p) {
    return fs::exists(header_path(p)) && fs::exists(payload_path(p));
}

}  // namespace tta::io
