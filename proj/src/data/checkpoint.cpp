#include "fust/data/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace fust::data {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> encode_payload(const std::vector<TensorRecord>& tensors) {
    std::size_t total = 0;
    for (const auto& t : tensors) total += t.value.size();
    std::vector<std::uint8_t> payload(total * 4);
    std::size_t off = 0;
    for (const auto& t : tensors) {
        for (double v : t.value.values()) {
            const auto f = static_cast<float>(v);
            std::memcpy(payload.data() + off, &f, 4);
            off += 4;
        }
    }
    return payload;
}

} // namespace

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const auto payload = encode_payload(ckpt.tensors);
    nlohmann::json manifest;
    manifest["version"] = checkpoint_version;
    manifest["model"] = ckpt.model;
    manifest["checksum"] = "sha256:" + sha256_hex(payload.data(), payload.size());
    nlohmann::json list = nlohmann::json::array();
    for (const auto& t : ckpt.tensors) list.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"tag", t.tag}});
    manifest["tensors"] = std::move(list);
    const std::string header = manifest.dump();

    std::vector<std::uint8_t> out(std::begin(checkpoint_magic), std::end(checkpoint_magic));
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, bool verify_checksum) {
    if (bytes.size() < 12) throw CheckpointError("checkpoint: file too short for header (" + std::to_string(bytes.size()) + " bytes)");
    if (std::memcmp(bytes.data(), checkpoint_magic, 8) != 0) {
        throw CheckpointError("checkpoint: bad magic, found '" + std::string(bytes.begin(), bytes.begin() + 8) +
                              "', expected 'ABRICKPT'");
    }
    std::uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
    if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
        throw CheckpointError("checkpoint: truncated manifest, need " + std::to_string(header_len) + " header bytes");
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
    }
    const int version = manifest.value("version", -1);
    if (version != checkpoint_version) {
        throw CheckpointError("checkpoint: version mismatch, found " + std::to_string(version) + ", expected " +
                              std::to_string(checkpoint_version));
    }

    Checkpoint ckpt;
    ckpt.model = manifest.at("model");
    std::size_t expected = 0;
    for (const auto& entry : manifest.at("tensors")) expected += shape_numel(entry.at("shape").get<Shape>()) * 4;
    const std::size_t payload_off = 12 + header_len;
    const std::size_t available = bytes.size() - payload_off;
    if (available != expected) {
        throw CheckpointError("checkpoint: payload length " + std::to_string(available) + " bytes, manifest requires " +
                              std::to_string(expected));
    }
    if (verify_checksum) {
        const std::string want = manifest.at("checksum").get<std::string>();
        const std::string got = "sha256:" + sha256_hex(bytes.data() + payload_off, available);
        if (want != got) throw ChecksumError("checkpoint: payload checksum mismatch, found " + got + ", expected " + want);
    }

    std::size_t off = payload_off;
    for (const auto& entry : manifest.at("tensors")) {
        TensorRecord rec{entry.at("name").get<std::string>(), entry.at("tag").get<std::string>(),
                         Tensor(entry.at("shape").get<Shape>(), 0.0)};
        for (auto& v : rec.value.storage()) {
            float f = 0.0f;
            std::memcpy(&f, bytes.data() + off, 4);
            v = static_cast<double>(f);
            off += 4;
        }
        ckpt.tensors.push_back(std::move(rec));
    }
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path, bool verify_checksum) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, verify_checksum);
}

namespace {

Checkpoint capture_state(nlohmann::json description, std::vector<model::StateEntry> state) {
    Checkpoint ckpt;
    ckpt.model = std::move(description);
    for (const auto& e : state) ckpt.tensors.push_back({e.name, e.tag, *e.tensor});
    return ckpt;
}

} // namespace

Checkpoint capture(model::UniModalModel& m) {
    return capture_state(m.describe(), m.state());
}

Checkpoint capture(model::MultiModalModel& m) {
    return capture_state(m.describe(), m.state());
}

void restore(std::vector<model::StateEntry> state, const Checkpoint& ckpt) {
    for (auto& entry : state) {
        const TensorRecord* found = nullptr;
        for (const auto& rec : ckpt.tensors) {
            if (rec.name == entry.name) {
                found = &rec;
                break;
            }
        }
        if (!found) throw CheckpointError("checkpoint: missing tensor '" + entry.name + "'");
        if (found->tag != entry.tag) {
            throw CheckpointError("checkpoint: tensor '" + entry.name + "' tagged '" + found->tag + "', model expects '" +
                                  entry.tag + "'");
        }
        if (found->value.shape() != entry.tensor->shape()) {
            throw CheckpointError("checkpoint: tensor '" + entry.name + "' has shape " + shape_str(found->value.shape()) +
                                  ", model expects " + shape_str(entry.tensor->shape()));
        }
        *entry.tensor = found->value;
    }
}

void save_checkpoint(model::UniModalModel& m, const std::filesystem::path& path) {
    write_checkpoint(capture(m), path);
}

void save_checkpoint(model::MultiModalModel& m, const std::filesystem::path& path) {
    write_checkpoint(capture(m), path);
}

model::UniModalModel load_unimodal(const std::filesystem::path& path) {
    Checkpoint ckpt = read_checkpoint(path);
    auto m = model::unimodal_from_description(ckpt.model);
    restore(m.state(), ckpt);
    return m;
}

model::MultiModalModel load_multimodal(const std::filesystem::path& path) {
    Checkpoint ckpt = read_checkpoint(path);
    auto m = model::multimodal_from_description(ckpt.model);
    restore(m.state(), ckpt);
    return m;
}

std::string state_hash(model::UniModalModel& m) {
    const auto bytes = encode_checkpoint(capture(m));
    return sha256_hex(bytes.data(), bytes.size());
}

std::string state_hash(model::Encoder& e) {
    const auto bytes = encode_checkpoint(capture_state(e.describe(), e.state()));
    return sha256_hex(bytes.data(), bytes.size());
}

} // namespace fust::data
