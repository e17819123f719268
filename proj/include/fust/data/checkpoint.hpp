#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/model/small_convnet.hpp"

namespace fust::data {

// File layout:
//   "ABRICKPT" | u32 LE header length | JSON manifest | f32 LE payload
// The manifest is {"version", "tensors": [{name, shape, tag}], "checksum", "model"}
// and its tensor order defines the payload order.
inline constexpr char checkpoint_magic[8] = {'A', 'B', 'R', 'I', 'C', 'K', 'P', 'T'};
inline constexpr int checkpoint_version = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

struct TensorRecord {
    std::string name;
    std::string tag;
    Tensor value;
};

struct Checkpoint {
    nlohmann::json model; // describe() of the stored model
    std::vector<TensorRecord> tensors;
};

std::string sha256_hex(const void* data, std::size_t size);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, bool verify_checksum = true);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path, bool verify_checksum = true);

Checkpoint capture(model::UniModalModel& m);
Checkpoint capture(model::MultiModalModel& m);

// Copy tensors into a model skeleton by name; every model entry must be present.
void restore(std::vector<model::StateEntry> state, const Checkpoint& ckpt);

void save_checkpoint(model::UniModalModel& m, const std::filesystem::path& path);
void save_checkpoint(model::MultiModalModel& m, const std::filesystem::path& path);
model::UniModalModel load_unimodal(const std::filesystem::path& path);
model::MultiModalModel load_multimodal(const std::filesystem::path& path);

// SHA-256 of the canonical checkpoint bytes of a model.
std::string state_hash(model::UniModalModel& m);
std::string state_hash(model::Encoder& e);

} // namespace fust::data
