#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/numerics/tensor.hpp"

namespace fust::data {

enum class Modality { a, v };

const char* modality_name(Modality m);
Modality other(Modality m);

struct MultiModalSample {
    std::uint64_t id = 0;
    Tensor a; // 1 x F x T, spectrogram-like
    Tensor v; // 1 x H x W, image-like
    int label = 0;

    const Tensor& input(Modality m) const { return m == Modality::a ? a : v; }
};

struct Dataset {
    std::size_t n_classes = 0;
    std::vector<MultiModalSample> samples;

    std::size_t size() const { return samples.size(); }
    std::vector<int> labels() const;
    std::vector<std::uint64_t> ids() const;
};

struct SplitCounts {
    std::size_t train = 90;
    std::size_t val = 10;
    std::size_t test = 30;
};

struct SyntheticSpec {
    std::size_t n_classes = 6;
    SplitCounts samples_per_class;
    Shape shape_a{1, 16, 16};
    Shape shape_v{1, 16, 16};
    double snr_a = 0.3;
    double snr_v = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SplitDataset {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Class c, modality v: a 2-D cosine grating with a class-specific frequency
// pair. Modality a: horizontal stripes (a cosine along the frequency axis)
// with a class-specific frequency. Templates have unit peak amplitude and are
// mutually orthogonal; a sample is snr * template + N(0, 1) noise keyed by
// (seed, sample_id, modality). Ids run 0.. over train, then val, then test;
// labels cycle through the classes so every split is exactly balanced.
SplitDataset generate_synthetic(const SyntheticSpec& spec);

Tensor class_template(const SyntheticSpec& spec, Modality m, int cls);

// One sample, generated independently of every other sample.
MultiModalSample synthesize_sample(const SyntheticSpec& spec, std::uint64_t id, int label);

// Stratified, seeded split of a pooled dataset. fractions = {train, val, test}.
SplitDataset split_dataset(const Dataset& dataset, const std::vector<double>& fractions, std::uint64_t seed);

// First `per_class` samples of every class, in dataset order. 0 keeps all.
Dataset per_class_subset(const Dataset& ds, std::size_t per_class);

// Inputs of `n` fresh samples for activation probing, labels cycling over the
// classes. Their ids start at probe_id_base, so their noise never coincides
// with any split's.
inline constexpr std::uint64_t probe_id_base = std::uint64_t{1} << 40;
Tensor probe_inputs(const SyntheticSpec& spec, std::size_t n, Modality m);

// Stack the selected samples' inputs into an N x C x H x W batch.
Tensor stack_inputs(const Dataset& ds, const std::vector<std::size_t>& indices, Modality m);
Tensor stack_inputs(const Dataset& ds, Modality m);

// Bilinear resize of an N x C x H x W batch to the given spatial size, with
// channels averaged or replicated to `channels`.
Tensor adapt_input(const Tensor& batch, const Shape& chw);

} // namespace fust::data
