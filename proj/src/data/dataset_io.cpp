#include "fust/data/dataset_io.hpp"

#include <cstring>
#include <fstream>

#include "fust/data/checkpoint.hpp"

namespace fust::data {
namespace {

void export_split(const Dataset& ds, const std::string& split, const std::filesystem::path& dir) {
    std::vector<std::uint8_t> payload;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : ds.samples) {
        samples.push_back({{"id", s.id}, {"label", s.label}});
        for (const Tensor* t : {&s.a, &s.v}) {
            for (double v : t->values()) {
                const auto f = static_cast<float>(v);
                std::uint8_t buf[4];
                std::memcpy(buf, &f, 4);
                payload.insert(payload.end(), buf, buf + 4);
            }
        }
    }
    nlohmann::json index{{"split", split},
                         {"n_classes", ds.n_classes},
                         {"shape_a", ds.samples.empty() ? Shape{} : ds.samples.front().a.shape()},
                         {"shape_v", ds.samples.empty() ? Shape{} : ds.samples.front().v.shape()},
                         {"checksum", "sha256:" + sha256_hex(payload.data(), payload.size())},
                         {"samples", std::move(samples)}};
    std::ofstream(dir / (split + ".json")) << index.dump(1) << '\n';
    std::ofstream bin(dir / (split + ".bin"), std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!bin) throw std::runtime_error("export_dataset: write failed in '" + dir.string() + "'");
}

Dataset import_split(const std::string& split, const std::filesystem::path& dir) {
    std::ifstream idx(dir / (split + ".json"));
    if (!idx) throw std::runtime_error("import_dataset: missing '" + (dir / (split + ".json")).string() + "'");
    const auto index = nlohmann::json::parse(idx);
    std::ifstream bin(dir / (split + ".bin"), std::ios::binary);
    std::vector<std::uint8_t> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if ("sha256:" + sha256_hex(payload.data(), payload.size()) != index.at("checksum").get<std::string>()) {
        throw ChecksumError("import_dataset: payload checksum mismatch for split '" + split + "'");
    }
    Dataset ds;
    ds.n_classes = index.at("n_classes").get<std::size_t>();
    const Shape shape_a = index.at("shape_a").get<Shape>();
    const Shape shape_v = index.at("shape_v").get<Shape>();
    const std::size_t per_sample = (shape_numel(shape_a) + shape_numel(shape_v)) * 4;
    if (payload.size() != per_sample * index.at("samples").size()) {
        throw CheckpointError("import_dataset: payload length mismatch for split '" + split + "'");
    }
    std::size_t off = 0;
    auto read = [&](const Shape& shape) {
        Tensor t(shape, 0.0);
        for (auto& v : t.storage()) {
            float f = 0.0f;
            std::memcpy(&f, payload.data() + off, 4);
            v = f;
            off += 4;
        }
        return t;
    };
    for (const auto& e : index.at("samples")) {
        MultiModalSample s;
        s.id = e.at("id").get<std::uint64_t>();
        s.label = e.at("label").get<int>();
        s.a = read(shape_a);
        s.v = read(shape_v);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace

void export_dataset(const SplitDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    export_split(ds.train, "train", dir);
    export_split(ds.val, "val", dir);
    export_split(ds.test, "test", dir);
}

SplitDataset import_dataset(const std::filesystem::path& dir) {
    return {import_split("train", dir), import_split("val", dir), import_split("test", dir)};
}

} // namespace fust::data
