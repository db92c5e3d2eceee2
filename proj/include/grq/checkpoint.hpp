#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "io_util.hpp"
#include "params.hpp"

namespace grq {

struct Checkpoint {
    ArchConfig arch;
    ModelParams params;
    nlohmann::json meta;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'G', 'R', 'Q', 'C'};
constexpr std::uint8_t kCheckpointVersion = 1;

}  // namespace detail

/// Serialize arch + parameters (f32 payload) + provenance metadata.
/// Layout: magic, version, u32 header length, JSON header, f32 payload in
/// canonical parameter order, trailing CRC32 over everything before it.
inline std::vector<std::uint8_t> checkpoint_bytes(const ArchConfig& arch, const ModelParams& params,
                                                  const nlohmann::json& meta) {
    arch.validate();
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    params.for_each([&](const std::string& name, const Tensor& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    });
    nlohmann::json header{{"arch", arch},
                          {"manifest", manifest},
                          {"meta", meta.is_null() ? nlohmann::json::object() : meta}};
    const std::string htext = header.dump();

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), detail::kCheckpointMagic, detail::kCheckpointMagic + 4);
    bytes.push_back(detail::kCheckpointVersion);
    io::put_u32(bytes, std::uint32_t(htext.size()));
    bytes.insert(bytes.end(), htext.begin(), htext.end());
    params.for_each([&bytes](const std::string&, const Tensor& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) io::put_f32(bytes, float(t.data()[i]));
    });
    io::put_u32(bytes, io::crc32(bytes.data(), bytes.size()));
    return bytes;
}

inline void save_checkpoint(const std::string& path, const ArchConfig& arch,
                            const ModelParams& params, const nlohmann::json& meta) {
    io::write_file(path, checkpoint_bytes(arch, params, meta));
}

/// Parse + validate checkpoint bytes. Order of rejection: size, magic,
/// version, checksum, header JSON, manifest-vs-arch shapes, payload size.
inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    if (bytes.size() < 13)
        throw format_error(format_error_kind::truncated, what + ": shorter than any valid checkpoint");
    if (std::memcmp(bytes.data(), detail::kCheckpointMagic, 4) != 0)
        throw format_error(format_error_kind::bad_magic, what + ": not a checkpoint file");
    if (bytes[4] != detail::kCheckpointVersion)
        throw format_error(format_error_kind::bad_version,
                           what + ": checkpoint version " + std::to_string(int(bytes[4])) +
                               " not supported (want " +
                               std::to_string(int(detail::kCheckpointVersion)) + ")");
    const std::uint32_t stored_crc = io::get_u32(bytes.data() + bytes.size() - 4);
    if (io::crc32(bytes.data(), bytes.size() - 4) != stored_crc)
        throw format_error(format_error_kind::bad_checksum, what + ": checksum mismatch");

    const std::uint32_t hlen = io::get_u32(bytes.data() + 5);
    if (bytes.size() < 13 + std::size_t(hlen))
        throw format_error(format_error_kind::truncated, what + ": header extends past end of file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error_kind::bad_header, what + ": header is not valid JSON: " + e.what());
    }

    Checkpoint ck;
    nlohmann::json manifest;
    try {
        ck.arch = header.at("arch").get<ArchConfig>();
        ck.meta = header.value("meta", nlohmann::json::object());
        manifest = header.at("manifest");
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error_kind::bad_header, what + ": header missing fields: " + e.what());
    }
    try {
        ck.arch.validate();
    } catch (const validation_error& e) {
        throw format_error(format_error_kind::bad_header, what + ": " + e.what());
    }

    // The manifest must match the architecture exactly before any payload is
    // interpreted.
    ck.params = ModelParams::zeros(ck.arch);
    struct Expect {
        std::string name;
        Shape shape;
        Tensor* dst;
    };
    std::vector<Expect> expect;
    ck.params.for_each([&expect](const std::string& name, Tensor& t) {
        expect.push_back({name, t.shape(), &t});
    });
    if (!manifest.is_array() || manifest.size() != expect.size())
        throw format_error(format_error_kind::bad_shape,
                           what + ": manifest lists " + std::to_string(manifest.size()) +
                               " tensors, architecture needs " + std::to_string(expect.size()));
    std::size_t offset = 0;
    for (std::size_t i = 0; i < expect.size(); ++i) {
        std::string name;
        Shape shape;
        std::size_t moff = 0;
        try {
            name = manifest[i].at("name").get<std::string>();
            shape = manifest[i].at("shape").get<Shape>();
            moff = manifest[i].at("offset").get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw format_error(format_error_kind::bad_header, what + ": bad manifest entry: " + e.what());
        }
        if (name != expect[i].name || shape != expect[i].shape || moff != offset)
            throw format_error(format_error_kind::bad_shape,
                               what + ": manifest entry '" + name + "' " + shape_str(shape) +
                                   " at offset " + std::to_string(moff) + " does not match expected '" +
                                   expect[i].name + "' " + shape_str(expect[i].shape) + " at " +
                                   std::to_string(offset));
        offset += Tensor::numel_of(shape);
    }

    const std::size_t want = 13 + std::size_t(hlen) + offset * 4;
    if (bytes.size() != want)
        throw format_error(format_error_kind::truncated,
                           what + ": payload is " + std::to_string(bytes.size()) + " bytes, expected " +
                               std::to_string(want));

    const std::uint8_t* p = bytes.data() + 9 + hlen;
    for (Expect& e : expect)
        for (std::size_t i = 0; i < e.dst->numel(); ++i) {
            e.dst->data()[i] = double(io::get_f32(p));
            p += 4;
        }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return parse_checkpoint(io::read_file(path), path);
}

}  // namespace grq
